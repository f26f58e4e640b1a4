"""Correlations, correlation error, residual energy and ensemble statistics."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .sampler import SampleSet

__all__ = [
    "CorrelationMatrix",
    "RealizationRecord",
    "RealizationEnsembleResult",
    "LinearFit",
    "correlations_mc",
    "correlation_error",
    "residual_energy",
    "aggregate",
    "fit_r2_epsilon",
    "load_correlations",
    "save_correlations",
]


@dataclass
class CorrelationMatrix:
    c: np.ndarray
    source_tag: str = "tvmc"
    errors: np.ndarray | None = None

    def __post_init__(self) -> None:
        c = np.asarray(self.c, dtype=np.float64)
        if c.ndim != 2 or c.shape[0] != c.shape[1]:
            raise ValueError("correlation matrix must be square")
        if not np.allclose(c, c.T, atol=1e-12):
            raise ValueError("correlation matrix must be symmetric")
        c = c.copy()
        np.fill_diagonal(c, 1.0)
        self.c = c
        if self.source_tag not in ("tvmc", "exact", "external"):
            raise ValueError(f"unknown source tag {self.source_tag!r}")

    @property
    def n_sites(self) -> int:
        return self.c.shape[0]

    def to_dict(self) -> dict:
        doc = {"schema": "correlations/v1", "n_sites": self.n_sites,
               "source_tag": self.source_tag, "c": self.c.tolist()}
        if self.errors is not None:
            doc["errors"] = np.asarray(self.errors).tolist()
        return doc

    @classmethod
    def from_dict(cls, doc: dict) -> "CorrelationMatrix":
        errs = doc.get("errors")
        return cls(np.asarray(doc["c"], dtype=float), doc.get("source_tag", "external"),
                   None if errs is None else np.asarray(errs, dtype=float))


def save_correlations(corr: CorrelationMatrix, path) -> None:
    Path(path).write_text(json.dumps(corr.to_dict()))


def load_correlations(path, source_tag: str | None = None) -> CorrelationMatrix:
    doc = json.loads(Path(path).read_text())
    if source_tag is not None:
        doc["source_tag"] = source_tag
    return CorrelationMatrix.from_dict(doc)


def correlations_mc(samples: SampleSet) -> CorrelationMatrix:
    """c_ij = <s_i s_j> with jackknife-over-chains errors.

    Exhaustive sample sets (weighted) are exact and carry zero errors.
    """
    if samples.n_samples == 0:
        raise ValueError("empty sample set")
    s = samples.configurations.astype(np.float64)
    p = samples.probabilities()
    c = (s * p[:, None]).T @ s
    c = 0.5 * (c + c.T)
    if samples.weights is not None:
        return CorrelationMatrix(c, "tvmc", np.zeros_like(c))
    ids, inv = np.unique(samples.chain_ids, return_inverse=True)
    g = len(ids)
    if g < 2:
        return CorrelationMatrix(c, "tvmc", None)
    n = s.shape[1]
    sums = np.zeros((g, n, n))
    for k in range(g):
        blk = s[inv == k]
        sums[k] = blk.T @ blk
    counts = np.bincount(inv, minlength=g).astype(float)
    total, m = sums.sum(0), counts.sum()
    loo = (total[None] - sums) / (m - counts)[:, None, None]
    err = np.sqrt((g - 1) / g * ((loo - loo.mean(0)) ** 2).sum(0))
    np.fill_diagonal(err, 0.0)
    return CorrelationMatrix(c, "tvmc", err)


def correlation_error(c: CorrelationMatrix | np.ndarray, c_ref: CorrelationMatrix | np.ndarray) -> float:
    """sqrt( sum_{i<j} (c_ij - ref_ij)^2 / sum_{i<j} ref_ij^2 )."""
    a = c.c if isinstance(c, CorrelationMatrix) else np.asarray(c, dtype=float)
    b = c_ref.c if isinstance(c_ref, CorrelationMatrix) else np.asarray(c_ref, dtype=float)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")
    iu = np.triu_indices(a.shape[0], 1)
    denom = float(np.sum(b[iu] ** 2))
    if denom == 0.0:
        raise ValueError("reference correlations vanish off the diagonal")
    return math.sqrt(float(np.sum((a[iu] - b[iu]) ** 2)) / denom)


def residual_energy(energy: complex, e0: float, kappa: float, n_sites: int,
                    normalized: bool = True) -> float:
    """(Re E - E0) / N, divided by K(t) when ``normalized``."""
    diff = (complex(energy).real - float(e0)) / n_sites
    if not normalized:
        return diff
    if not kappa > 0:
        raise ValueError(f"normalized residual energy needs kappa > 0, got {kappa}")
    return diff / kappa


@dataclass
class RealizationRecord:
    seed: int
    epsilon_c: float | None = None
    r2_integrated: float | None = None
    final_energy: float | None = None
    e_res_times: list[float] = field(default_factory=list)
    e_res: list[float] = field(default_factory=list)
    e_res_errors: list[float] = field(default_factory=list)
    failed: str | None = None

    def to_dict(self) -> dict:
        return dict(self.__dict__)


@dataclass
class RealizationEnsembleResult:
    n_sites: int
    records: list[RealizationRecord]
    label: str = ""

    @property
    def ok_records(self) -> list[RealizationRecord]:
        return [r for r in self.records if r.failed is None]

    @property
    def partial(self) -> bool:
        return any(r.failed is not None for r in self.records)

    def _stat(self, name: str) -> tuple[float, float]:
        vals = np.array([getattr(r, name) for r in self.ok_records
                         if getattr(r, name) is not None], dtype=float)
        if vals.size == 0:
            return float("nan"), float("nan")
        mean = float(vals.mean())
        rms = float(np.sqrt(np.mean((vals - mean) ** 2)))
        return mean, rms

    @property
    def epsilon_mean(self) -> float:
        return self._stat("epsilon_c")[0]

    @property
    def epsilon_rms(self) -> float:
        return self._stat("epsilon_c")[1]

    @property
    def r2_mean(self) -> float:
        return self._stat("r2_integrated")[0]

    @property
    def r2_rms(self) -> float:
        return self._stat("r2_integrated")[1]

    def summary(self) -> dict:
        return {
            "n_sites": self.n_sites,
            "label": self.label,
            "n_records": len(self.records),
            "n_failed": len(self.records) - len(self.ok_records),
            "partial": self.partial,
            "epsilon_mean": self.epsilon_mean,
            "epsilon_rms": self.epsilon_rms,
            "r2_mean": self.r2_mean,
            "r2_rms": self.r2_rms,
        }

    def to_dict(self) -> dict:
        return {"schema": "ensemble/v1", "summary": self.summary(),
                "records": [r.to_dict() for r in self.records]}

    @classmethod
    def from_dict(cls, doc: dict) -> "RealizationEnsembleResult":
        recs = [RealizationRecord(**r) for r in doc["records"]]
        summ = doc["summary"]
        return cls(summ["n_sites"], recs, summ.get("label", ""))


def aggregate(n_sites: int, records: Sequence[RealizationRecord], label: str = "") -> RealizationEnsembleResult:
    return RealizationEnsembleResult(n_sites, list(records), label)


@dataclass
class LinearFit:
    slope: float
    intercept: float
    pearson_r: float
    x: list[float]
    y: list[float]

    def predict(self, x) -> np.ndarray:
        return self.slope * np.asarray(x, dtype=float) + self.intercept


def fit_r2_epsilon(ensembles: Sequence[RealizationEnsembleResult] | None = None,
                   r2: Sequence[float] | None = None,
                   eps: Sequence[float] | None = None) -> LinearFit:
    """Unweighted least squares of mean epsilon_c against mean R^2, one point per size."""
    if ensembles is not None:
        r2 = [e.r2_mean for e in ensembles]
        eps = [e.epsilon_mean for e in ensembles]
    x = np.asarray(r2, dtype=float)
    y = np.asarray(eps, dtype=float)
    if x.shape != y.shape or x.size < 2:
        raise ValueError("need at least two sizes to fit")
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
        raise ValueError("non-finite ensemble means")
    if np.ptp(x) <= 1e-12 * max(1.0, float(np.abs(x).max())):
        raise ValueError("degenerate R^2 spread; cannot fit")
    slope, intercept = np.polyfit(x, y, 1)
    r = float(np.corrcoef(x, y)[0, 1]) if x.size > 2 or np.ptp(y) > 0 else float("nan")
    if x.size == 2:
        r = float(np.sign(slope)) if np.ptp(y) > 0 else float("nan")
    return LinearFit(float(slope), float(intercept), r, x.tolist(), y.tolist())
