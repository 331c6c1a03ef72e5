"""Filter -> initial estimator -> S-estimator pipelines.

Pipeline names read ``[filter-]estimator[-c]``: ``uf-gse``, ``ubf-gre-c``,
``gre-c`` (no filter), ``mle``, ``emve``.  The ``-c`` suffix switches the
initial estimator to cluster-based subsampling.
"""

from dataclasses import dataclass, field

import numpy as np

from .cluster import ClusterSubsampleSource
from .data import Dataset
from .filters import FilterConfig, combine_filters, uf, ubf
from .initial import SubsamplingPlan, emve, gaussian_em
from .sest import ScatterEstimate, gre_fit, gse_fit

__all__ = ["PipelineSpec", "parse_pipeline", "run_pipeline", "PipelineResult"]

FILTERS = ("none", "uf", "ubf")
ESTIMATORS = ("mle", "emve", "gse", "gre")


@dataclass(frozen=True)
class PipelineSpec:
    filter: str = "ubf"
    estimator: str = "gre"
    init: str = "emve-c"
    filter_cfg: FilterConfig = field(default_factory=FilterConfig)
    rocke_alpha: float = 0.05
    n_subsamples: int = 0
    subsample_size: int = 0
    seed: int = 0
    max_iter: int = 150
    tol: float = 1e-6
    reweight: bool = True

    def __post_init__(self):
        if self.filter not in FILTERS:
            raise ValueError(f"unknown filter {self.filter!r}; choose from {FILTERS}")
        if self.estimator not in ESTIMATORS:
            raise ValueError(f"unknown estimator {self.estimator!r}; choose from {ESTIMATORS}")
        if self.init not in ("emve", "emve-c"):
            raise ValueError(f"unknown initial estimator {self.init!r}")

    @property
    def name(self):
        if self.estimator == "mle":
            return "mle" if self.filter == "none" else f"{self.filter}-mle"
        parts = [] if self.filter == "none" else [self.filter]
        parts.append(self.estimator)
        if self.init == "emve-c":
            parts.append("c")
        return "-".join(parts)


def parse_pipeline(name, **kwargs):
    """PipelineSpec from a name such as ``ubf-gre-c``."""
    tokens = name.lower().strip().split("-")
    filt = "none"
    if tokens and tokens[0] in FILTERS:
        filt = tokens.pop(0)
    if not tokens or tokens[0] not in ESTIMATORS:
        raise ValueError(f"cannot parse pipeline name {name!r}")
    est = tokens.pop(0)
    init = "emve"
    if tokens == ["c"]:
        init = "emve-c"
    elif tokens:
        raise ValueError(f"cannot parse pipeline name {name!r}")
    return PipelineSpec(filter=filt, estimator=est, init=init, **kwargs)


@dataclass
class PipelineResult:
    estimate: ScatterEstimate
    mask: np.ndarray
    report: object = None
    initial: ScatterEstimate = None


def _mle(data):
    mu, sigma, info = gaussian_em(data, return_info=True)
    return ScatterEstimate(
        mu=mu, sigma=sigma, weights=np.ones(data.n), distances=np.full(data.n, np.nan),
        scale=1.0, iterations=info["iterations"], converged=info["converged"], method="mle",
    )


def run_pipeline(data, spec=None, external_mask=None, threads=1):
    """Run filter, initial estimator and S-estimator on ``data``.

    ``external_mask`` (True = keep) is intersected with the filter output:
    a cell is removed only if both the filter and the external mask flag it.
    """
    if not isinstance(data, Dataset):
        data = Dataset.from_array(data)
    spec = spec or PipelineSpec()
    report = None
    if spec.filter == "uf":
        report = uf(data, spec.filter_cfg)
    elif spec.filter == "ubf":
        report = ubf(data, spec.filter_cfg)
    mask = data.u.copy() if report is None else report.mask
    if external_mask is not None:
        mask = combine_filters([mask, external_mask], "intersection") & data.u
    filtered = data.with_mask(mask)

    if spec.estimator == "mle":
        return PipelineResult(_mle(filtered), mask, report)

    mode = "cluster" if spec.init == "emve-c" else "uniform"
    plan = SubsamplingPlan(mode, spec.n_subsamples, spec.subsample_size, 0.0, spec.seed)
    pool = ClusterSubsampleSource(filtered).pool if mode == "cluster" else None
    init = emve(filtered, plan, threads=threads, pool=pool, reweight=spec.reweight)
    if spec.estimator == "emve":
        return PipelineResult(init, mask, report, init)
    if spec.estimator == "gse":
        est = gse_fit(filtered, init, max_iter=spec.max_iter, tol=spec.tol)
    else:
        est = gre_fit(filtered, init, alpha=spec.rocke_alpha, max_iter=spec.max_iter, tol=spec.tol)
    return PipelineResult(est, mask, report, init)
