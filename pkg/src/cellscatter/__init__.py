"""Cell filters, subsampling initial estimators and generalized S-estimators of scatter.

Filters flag outlying cells, which are then treated as missing by
generalized S-estimators (Tukey bisquare or Rocke rho) started from an
extended minimum volume ellipsoid computed by subsampling.
"""

from ._accel import backend_name
from .data import Dataset
from .errors import CellScatterError, ConfigError, DegenerateError, InputError, NumericalError
from .filters import FilterConfig, FilterReport, combine_filters, condition_filter, uf, ubf
from .initial import SubsamplingPlan, emve, gaussian_em, required_subsamples
from .pipeline import PipelineSpec, parse_pipeline, run_pipeline
from .rho import RhoSpec, rho, rocke_gamma, tuning_constant, weight
from .sest import ScatterEstimate, gre_fit, gse_fit, gse_scale

__version__ = "0.1.0"
