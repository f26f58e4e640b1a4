"""Time-dependent variational Monte Carlo.

Per stage: sample (or enumerate) the Born distribution, estimate the
quantum geometric tensor S and forces F from centered log-derivatives,
solve S theta_dot = -i F with a spectral cutoff plus diagonal shift, and
advance the parameters with a fixed-step explicit integrator.
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from .ansatz import JastrowParameters
from .model import ProblemHamiltonian
from .sampler import ChainState, SampleSet, SamplerConfig, draw_sample_set

logger = logging.getLogger(__name__)

__all__ = [
    "GeometricTensor",
    "ForceVector",
    "SolverConfig",
    "SolveInfo",
    "TdvpConfig",
    "TdvpStepReport",
    "TdvpEngine",
    "R2Result",
    "estimate_sf",
    "solve_motion",
    "tdvp_error",
    "r2_raw",
    "validation_error",
    "integrate_step",
    "integrated_r2",
    "weighted_mean",
    "SHIFT_EXACT",
    "SHIFT_SAMPLED",
]

# default diagonal shifts relative to the mean diagonal of S
SHIFT_EXACT = 1e-6
SHIFT_SAMPLED = 1e-3


@dataclass
class GeometricTensor:
    s: np.ndarray
    sample_count: int


@dataclass
class ForceVector:
    f: np.ndarray
    energy_mean: complex
    energy_variance: float
    energy_error: float = float("nan")


def weighted_mean(samples: SampleSet, values: np.ndarray) -> np.ndarray:
    p = samples.probabilities()
    return np.tensordot(p, values, axes=(0, 0))


def _chain_error(values: np.ndarray, chain_ids: np.ndarray) -> float:
    """Standard error of the mean from per-chain block averages."""
    ids, inv = np.unique(chain_ids, return_inverse=True)
    if len(ids) < 2:
        return float("nan")
    sums = np.zeros(len(ids), complex)
    np.add.at(sums, inv, values)
    means = sums / np.bincount(inv)
    return float(np.std(means.real, ddof=1) / math.sqrt(len(ids)))


def estimate_sf(samples: SampleSet) -> tuple[GeometricTensor, ForceVector]:
    """S_kk' = E[D*_k (D_k' - E D_k')],  F_k = E[D*_k (E_loc - E E_loc)]."""
    if samples.n_samples == 0:
        raise ValueError("empty sample set")
    if samples.n_samples < samples.n_params and samples.weights is None:
        logger.debug("M=%d < P=%d: S is rank deficient", samples.n_samples, samples.n_params)
    p = samples.probabilities()
    o = samples.log_derivatives
    e = samples.local_energies
    oc = o - p @ o
    e_mean = complex(p @ e)
    ec = e - e_mean
    wo = oc * p[:, None]
    s = wo.conj().T @ oc
    s = 0.5 * (s + s.conj().T)
    f = wo.conj().T @ ec
    var = float(max(p @ (np.abs(ec) ** 2), 0.0))
    err = float("nan") if samples.weights is not None else _chain_error(e, samples.chain_ids)
    if samples.weights is not None:
        err = 0.0
    return GeometricTensor(s, samples.n_samples), ForceVector(f, e_mean, var, err)


@dataclass
class SolverConfig:
    """Eigenvalue cutoff and diagonal shift for the S solve.

    ``shift`` is relative to the mean diagonal of S. ``None`` picks
    ``SHIFT_EXACT`` for exhaustive sample sets and ``SHIFT_SAMPLED`` for
    Monte Carlo ones, whose noisy small eigenvalues need the stronger damping.
    """

    rcond: float = 1e-8  # eigenvalues below rcond * lambda_max are discarded
    shift: float | None = None

    def resolved(self, sampler_kind: str) -> "SolverConfig":
        if self.shift is not None:
            return self
        return SolverConfig(self.rcond, SHIFT_EXACT if sampler_kind == "exhaustive" else SHIFT_SAMPLED)


@dataclass
class SolveInfo:
    retained_rank: int
    n_params: int
    cutoff: float
    shift: float
    warning: str | None = None
    min_eigenvalue: float = 0.0


def solve_motion(s: GeometricTensor | np.ndarray, f: ForceVector | np.ndarray,
                 reg: SolverConfig | None = None) -> tuple[np.ndarray, SolveInfo]:
    """Regularized pseudo-solution of S theta_dot = -i F."""
    reg = reg or SolverConfig()
    smat = s.s if isinstance(s, GeometricTensor) else np.asarray(s)
    fvec = f.f if isinstance(f, ForceVector) else np.asarray(f)
    p = smat.shape[0]
    if fvec.shape != (p,):
        raise ValueError(f"S is {smat.shape} but F has shape {fvec.shape}")
    if p == 0:
        return np.zeros(0, complex), SolveInfo(0, 0, 0.0, 0.0)
    if not (np.all(np.isfinite(smat)) and np.all(np.isfinite(fvec))):
        raise FloatingPointError("non-finite entries in S or F")
    lam, u = np.linalg.eigh(smat)
    lam_max = lam[-1]
    rel = SHIFT_EXACT if reg.shift is None else reg.shift
    shift = rel * float(np.real(np.trace(smat))) / p
    cutoff = reg.rcond * lam_max
    keep = lam > cutoff if lam_max > 0 else np.zeros(p, dtype=bool)
    if not keep.any():
        msg = "all eigenvalues of S below cutoff; zero update"
        logger.warning(msg)
        return np.zeros(p, complex), SolveInfo(0, p, float(cutoff), shift, msg, float(lam[0]))
    rhs = u.conj().T @ (-1j * fvec)
    coef = np.zeros(p, complex)
    coef[keep] = rhs[keep] / (lam[keep] + shift)
    return u @ coef, SolveInfo(int(keep.sum()), p, float(cutoff), shift, None, float(lam[0]))


def r2_raw(theta_dot: np.ndarray, s: np.ndarray, f: np.ndarray, delta_e2: float) -> float:
    """Unclamped 1 + [td^H (S td + i F) - i F^H td] / dE^2."""
    num = np.vdot(theta_dot, s @ theta_dot + 1j * f) - 1j * np.vdot(f, theta_dot)
    return float(1.0 + num.real / delta_e2)


def tdvp_error(theta_dot: np.ndarray, s: GeometricTensor | np.ndarray,
               f: ForceVector | np.ndarray, delta_e2: float | None = None,
               energy_mean: complex | None = None, guard: float = 1e-12) -> tuple[float, bool]:
    """Per-step TDVP error r^2.

    Returns ``(r2, ok)``. ``ok`` is False when the energy variance is below
    ``guard * |E|^2`` (r2 is NaN then). Raw values in [-1e-8, 0) are
    clamped to 0; anything more negative is a numerical failure.
    """
    smat = s.s if isinstance(s, GeometricTensor) else np.asarray(s)
    if isinstance(f, ForceVector):
        fvec = f.f
        delta_e2 = f.energy_variance if delta_e2 is None else delta_e2
        energy_mean = f.energy_mean if energy_mean is None else energy_mean
    else:
        fvec = np.asarray(f)
    if delta_e2 is None:
        raise ValueError("delta_e2 is required")
    scale = abs(energy_mean) ** 2 if energy_mean is not None else 0.0
    threshold = guard * scale if scale > 0 else 0.0
    if not delta_e2 > threshold or not delta_e2 > 0:
        return float("nan"), False
    raw = r2_raw(np.asarray(theta_dot), smat, fvec, delta_e2)
    if raw < -1e-8:
        raise FloatingPointError(f"r^2 = {raw:.3e} is below the -1e-8 allowance")
    return max(raw, 0.0), True


def validation_error(theta_dot_a: np.ndarray, samples_b: SampleSet) -> tuple[float, bool]:
    """r^2 with theta_dot from set A and S, F, dE^2 from an independent set B."""
    s_b, f_b = estimate_sf(samples_b)
    return tdvp_error(theta_dot_a, s_b, f_b)


@dataclass
class TdvpConfig:
    total_time: float = 7.0
    n_steps: int = 1000
    integrator: str = "heun"  # heun | rk4 | euler
    validation_every: int = 10  # 0 disables
    solver: SolverConfig = field(default_factory=SolverConfig)
    sampler: SamplerConfig = field(default_factory=SamplerConfig)

    def __post_init__(self) -> None:
        if self.integrator not in ("heun", "rk4", "euler"):
            raise ValueError(f"unknown integrator {self.integrator!r}")
        if self.n_steps < 1:
            raise ValueError("n_steps must be >= 1")

    @property
    def dt(self) -> float:
        return self.total_time / self.n_steps


@dataclass
class TdvpStepReport:
    step: int
    t: float
    theta_dot_norm: float
    r2: float
    r2_flagged: bool
    r2_validation: float | None
    energy: complex
    energy_error: float
    delta_e2: float
    acceptance_rate: float
    exchange_rate: float
    retained_rank: int
    n_params: int
    shift: float
    cutoff: float
    s_hermitian_error: float
    s_min_eigenvalue: float
    r2_raw: float
    flagged_samples: int
    wall_time: float

    def to_dict(self) -> dict:
        d = asdict(self)
        d["energy"] = [self.energy.real, self.energy.imag]
        return d


@dataclass
class _Stage:
    theta_dot: np.ndarray
    samples: SampleSet
    s: GeometricTensor
    f: ForceVector
    info: SolveInfo


class TdvpEngine:
    """Owns sampler state for one run; advances (psi, t) one step at a time.

    Stage samples come from a persistent set of warm-started chains seeded
    with ``seed``; validation samples come from a second, independent set.
    """

    def __init__(self, hamiltonian: ProblemHamiltonian, config: TdvpConfig, seed: int = 0,
                 validation_seed: int | None = None) -> None:
        self.hamiltonian = hamiltonian
        self.config = config
        self.seed = int(seed)
        self.validation_seed = int(seed) + 1 if validation_seed is None else int(validation_seed)
        self.solver = config.solver.resolved(config.sampler.kind)
        self._chains: ChainState | None = None
        self._val_chains: ChainState | None = None
        self.step_index = 0

    def _samples(self, psi: JastrowParameters, t: float, validation: bool = False) -> SampleSet:
        cfg = self.config.sampler
        if validation:
            samples, self._val_chains = draw_sample_set(
                psi, self.hamiltonian, t, cfg, self.validation_seed, self._val_chains)
        else:
            samples, self._chains = draw_sample_set(
                psi, self.hamiltonian, t, cfg, self.seed, self._chains)
        return samples

    def derivative(self, psi: JastrowParameters, t: float) -> _Stage:
        samples = self._samples(psi, t)
        s, f = estimate_sf(samples)
        theta_dot, info = solve_motion(s, f, self.solver)
        return _Stage(theta_dot, samples, s, f, info)

    def step(self, psi: JastrowParameters, t: float) -> tuple[JastrowParameters, TdvpStepReport]:
        cfg = self.config
        dt = cfg.dt
        if t + dt > cfg.total_time * (1 + 1e-12) + 1e-12:
            raise ValueError(f"step from t={t} by dt={dt} overshoots T={cfg.total_time}")
        t0 = time.perf_counter()
        theta = psi.to_vector()
        first = self.derivative(psi, t)
        if cfg.integrator == "euler":
            theta_new = theta + dt * first.theta_dot
        elif cfg.integrator == "heun":
            k2 = self.derivative(psi.with_vector(theta + dt * first.theta_dot), t + dt).theta_dot
            theta_new = theta + 0.5 * dt * (first.theta_dot + k2)
        else:
            k1 = first.theta_dot
            k2 = self.derivative(psi.with_vector(theta + 0.5 * dt * k1), t + 0.5 * dt).theta_dot
            k3 = self.derivative(psi.with_vector(theta + 0.5 * dt * k2), t + 0.5 * dt).theta_dot
            k4 = self.derivative(psi.with_vector(theta + dt * k3), t + dt).theta_dot
            theta_new = theta + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
        if not np.all(np.isfinite(theta_new)):
            raise FloatingPointError(f"non-finite parameters after step at t={t}")

        smat, fv = first.s.s, first.f
        raw = float("nan")
        r2, ok = tdvp_error(first.theta_dot, first.s, fv)
        if ok:
            raw = r2_raw(first.theta_dot, smat, fv.f, fv.energy_variance)
        r2_val = None
        if cfg.validation_every and self.step_index % cfg.validation_every == 0:
            if first.samples.weights is not None:
                r2_val = r2 if ok else float("nan")
            else:
                val, vok = validation_error(first.theta_dot, self._samples(psi, t, validation=True))
                r2_val = val if vok else float("nan")
        herm = float(np.abs(smat - smat.conj().T).max()) if smat.size else 0.0
        min_eig = first.info.min_eigenvalue
        report = TdvpStepReport(
            step=self.step_index,
            t=float(t),
            theta_dot_norm=float(np.linalg.norm(first.theta_dot)),
            r2=float(r2),
            r2_flagged=not ok,
            r2_validation=r2_val,
            energy=complex(fv.energy_mean),
            energy_error=float(fv.energy_error),
            delta_e2=float(fv.energy_variance),
            acceptance_rate=float(first.samples.acceptance_rate),
            exchange_rate=float(first.samples.exchange_rate),
            retained_rank=first.info.retained_rank,
            n_params=first.info.n_params,
            shift=first.info.shift,
            cutoff=first.info.cutoff,
            s_hermitian_error=herm,
            s_min_eigenvalue=min_eig,
            r2_raw=raw,
            flagged_samples=first.samples.flagged_count,
            wall_time=time.perf_counter() - t0,
        )
        self.step_index += 1
        return psi.with_vector(theta_new), report


def integrate_step(psi: JastrowParameters, t: float, hamiltonian: ProblemHamiltonian,
                   config: TdvpConfig, engine: TdvpEngine | None = None,
                   seed: int = 0) -> tuple[JastrowParameters, TdvpStepReport]:
    """One integrator step; pass ``engine`` to keep chains warm across steps."""
    engine = engine or TdvpEngine(hamiltonian, config, seed)
    return engine.step(psi, t)


@dataclass
class R2Result:
    value: float | None
    reliable: bool
    n_flagged: int


def integrated_r2(reports, total_time: float | None = None,
                  max_flagged_fraction: float = 0.05) -> R2Result:
    """Trapezoidal R^2 = int_0^T r^2 dt over step reports ordered in t.

    Step reports sit at the start of each step; the endpoint T (no report)
    reuses the last value. Flagged steps are interpolated from neighbours.
    """
    reports = list(reports)
    if not reports:
        return R2Result(None, False, 0)
    t = np.array([r.t if hasattr(r, "t") else r["t"] for r in reports], dtype=float)
    r2 = np.array([r.r2 if hasattr(r, "r2") else r["r2"] for r in reports], dtype=float)
    if np.any(np.diff(t) <= 0):
        raise ValueError("reports must be strictly ordered in t")
    bad = ~np.isfinite(r2)
    n_bad = int(bad.sum())
    if n_bad == len(r2):
        return R2Result(None, False, n_bad)
    if n_bad:
        r2[bad] = np.interp(t[bad], t[~bad], r2[~bad])
    if total_time is not None and total_time > t[-1]:
        t = np.append(t, total_time)
        r2 = np.append(r2, r2[-1])
    value = float(np.trapezoid(r2, t)) if hasattr(np, "trapezoid") else float(np.trapz(r2, t))
    return R2Result(value, n_bad <= max_flagged_fraction * len(reports), n_bad)
