"""Annealing Hamiltonian H(t) = Gamma(t) H_D + K(t) H_T and local energies.

H_D = -sum_i X_i is the transverse-field driver and H_T = sum_<ij> J_ij Z_i Z_j
the Edwards-Anderson target. Units: hbar = 1, time in inverse energy.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Mapping

import numpy as np

from .ansatz import JastrowParameters, log_ratios_all
from .lattice import CouplingRealization

__all__ = [
    "AnnealSchedule",
    "ProblemHamiltonian",
    "ScheduleError",
    "SCHEDULE_FAMILIES",
    "make_schedule",
    "schedule_eval",
    "crossing_time",
    "diagonal_energy",
    "local_energy",
    "local_energies",
    "load_schedule_table",
    "DEFAULT_CROSSING_FRACTION",
    "DEFAULT_AMPLITUDE",
]

# t*/T = 2.75 / 7 for the default family
DEFAULT_CROSSING_FRACTION = 2.75 / 7.0
# overall energy scale of the default trigonometric family
DEFAULT_AMPLITUDE = 2.0


class ScheduleError(ValueError):
    pass


@dataclass(frozen=True)
class AnnealSchedule:
    total_time: float
    gamma: Callable[[float], float] = field(repr=False)
    kappa: Callable[[float], float] = field(repr=False)
    form_tag: str = "custom"
    params: Mapping = field(default_factory=dict)

    def __call__(self, t: float) -> tuple[float, float]:
        return schedule_eval(self, t)

    def to_dict(self) -> dict:
        return {"family": self.form_tag, "total_time": self.total_time, "params": dict(self.params)}


def schedule_eval(schedule: AnnealSchedule, t: float) -> tuple[float, float]:
    T = schedule.total_time
    # allow accumulated round-off from t += dt
    tol = 1e-9 * max(T, 1.0)
    if t < -tol or t > T + tol:
        raise ScheduleError(f"t={t} outside [0, {T}]")
    t = min(max(t, 0.0), T)
    g, k = float(schedule.gamma(t)), float(schedule.kappa(t))
    if not (math.isfinite(g) and math.isfinite(k)) or g < 0 or k < 0:
        raise ScheduleError(f"schedule produced invalid values ({g}, {k}) at t={t}")
    return g, k


def _linear(T: float, amplitude: float = 1.0) -> AnnealSchedule:
    return AnnealSchedule(
        total_time=T,
        gamma=lambda t: amplitude * (1.0 - t / T),
        kappa=lambda t: amplitude * t / T,
        form_tag="linear",
        params={"amplitude": amplitude},
    )


def _trigonometric(
    T: float, amplitude: float = DEFAULT_AMPLITUDE, crossing_fraction: float = DEFAULT_CROSSING_FRACTION
) -> AnnealSchedule:
    """Gamma = A cos^2(pi w/2), K = A sin^2(pi w/2) with warped time w = (t/T)^alpha.

    The exponent places the Gamma = K crossing at ``crossing_fraction * T``;
    ``crossing_fraction = 0.5`` gives the plain cos^2/sin^2 pair.
    """
    if not 0.0 < crossing_fraction < 1.0:
        raise ScheduleError("crossing_fraction must lie in (0, 1)")
    alpha = math.log(0.5) / math.log(crossing_fraction)

    def phase(t: float) -> float:
        return 0.5 * math.pi * (max(t, 0.0) / T) ** alpha

    return AnnealSchedule(
        total_time=T,
        gamma=lambda t: amplitude * math.cos(phase(t)) ** 2,
        kappa=lambda t: amplitude * math.sin(phase(t)) ** 2,
        form_tag="trigonometric",
        params={"amplitude": amplitude, "crossing_fraction": crossing_fraction},
    )


def _tabulated(
    T: float,
    gamma_knots: list | None = None,
    kappa_knots: list | None = None,
    gamma_file: str | None = None,
    kappa_file: str | None = None,
) -> AnnealSchedule:
    if gamma_file is not None:
        gamma_knots = load_schedule_table(gamma_file)
    if kappa_file is not None:
        kappa_knots = load_schedule_table(kappa_file)
    if gamma_knots is None or kappa_knots is None:
        raise ScheduleError("tabulated schedule needs knots or files for both gamma and kappa")
    g = np.asarray(gamma_knots, dtype=float)
    k = np.asarray(kappa_knots, dtype=float)
    for name, tab in (("gamma", g), ("kappa", k)):
        if tab.ndim != 2 or tab.shape[1] != 2 or len(tab) < 2:
            raise ScheduleError(f"{name} table must have >= 2 rows of (t, value)")
        if np.any(np.diff(tab[:, 0]) <= 0):
            raise ScheduleError(f"{name} knots must be strictly increasing in t")
        if tab[0, 0] > 0 or tab[-1, 0] < T:
            raise ScheduleError(f"{name} knots must cover [0, {T}]")
        if np.any(tab[:, 1] < 0):
            raise ScheduleError(f"{name} values must be nonnegative")
    return AnnealSchedule(
        total_time=T,
        gamma=lambda t: float(np.interp(t, g[:, 0], g[:, 1])),
        kappa=lambda t: float(np.interp(t, k[:, 0], k[:, 1])),
        form_tag="tabulated",
        params={"gamma_knots": g.tolist(), "kappa_knots": k.tolist()},
    )


def _constant(T: float, gamma: float = 1.0, kappa: float = 1.0) -> AnnealSchedule:
    # frozen Hamiltonian; for conservation checks, not an annealing protocol
    return AnnealSchedule(
        total_time=T,
        gamma=lambda t: gamma,
        kappa=lambda t: kappa,
        form_tag="constant",
        params={"gamma": gamma, "kappa": kappa},
    )


SCHEDULE_FAMILIES: dict[str, Callable[..., AnnealSchedule]] = {
    "linear": _linear,
    "trigonometric": _trigonometric,
    "tabulated": _tabulated,
    "constant": _constant,
}


def make_schedule(family: str, total_time: float, **params) -> AnnealSchedule:
    if family not in SCHEDULE_FAMILIES:
        raise ScheduleError(
            f"unknown schedule family {family!r}; choose from {sorted(SCHEDULE_FAMILIES)}"
        )
    if not total_time > 0:
        raise ScheduleError("total_time must be positive")
    try:
        return SCHEDULE_FAMILIES[family](float(total_time), **params)
    except TypeError as exc:
        raise ScheduleError(f"bad parameters for {family!r}: {exc}") from None


def load_schedule_table(path) -> list[list[float]]:
    """Two-column whitespace-separated (t, value) table; '#' comments allowed."""
    rows = []
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.replace(",", " ").split()
        if len(parts) != 2:
            raise ScheduleError(f"{path}:{lineno}: expected two columns")
        rows.append([float(parts[0]), float(parts[1])])
    return rows


def crossing_time(schedule: AnnealSchedule, tol: float = 1e-12) -> float:
    """Unique t* with Gamma(t*) = K(t*), by bisection on Gamma - K."""
    T = schedule.total_time
    diff = lambda t: schedule.gamma(t) - schedule.kappa(t)  # noqa: E731
    lo, hi = 0.0, T
    if diff(lo) <= 0 or diff(hi) >= 0:
        raise ScheduleError("Gamma - K does not change sign on [0, T]")
    grid = np.linspace(0.0, T, 257)
    signs = np.sign([diff(t) for t in grid])
    signs = signs[signs != 0]
    if np.count_nonzero(np.diff(signs)) != 1:
        raise ScheduleError("Gamma = K crossing is not unique")
    while hi - lo > tol * T:
        mid = 0.5 * (lo + hi)
        if diff(mid) > 0:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


@dataclass(frozen=True)
class ProblemHamiltonian:
    realization: CouplingRealization
    schedule: AnnealSchedule

    @property
    def n_sites(self) -> int:
        return self.realization.n_sites

    def coefficients(self, t: float) -> tuple[float, float]:
        return schedule_eval(self.schedule, t)


def diagonal_energy(realization: CouplingRealization, sigma: np.ndarray) -> np.ndarray | float:
    """sum_<ij> J_ij s_i s_j for one configuration or a batch."""
    s = np.asarray(sigma, dtype=np.float64)
    if s.shape[-1] != realization.n_sites:
        raise ValueError(
            f"configuration length {s.shape[-1]} does not match N={realization.n_sites}"
        )
    e = realization.lattice.edge_array
    out = (s[..., e[:, 0]] * s[..., e[:, 1]]) @ realization.couplings
    return float(out) if np.ndim(out) == 0 else out


def local_energies(
    hamiltonian: ProblemHamiltonian,
    psi: JastrowParameters,
    sigma: np.ndarray,
    t: float,
    gamma_kappa: tuple[float, float] | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Batched E_loc and a finite-ness mask.

    Flips enter only through amplitude ratios exp(log psi(s^i) - log psi(s)).
    Returns ``(e_loc, ok)``; rows with ``ok == False`` hit an overflowing
    ratio and must be dropped by the caller.
    """
    g, k = gamma_kappa if gamma_kappa is not None else hamiltonian.coefficients(t)
    s = np.atleast_2d(sigma)
    diag = diagonal_energy(hamiltonian.realization, s)
    if g == 0.0:
        e = k * np.asarray(diag, dtype=complex)
        return e, np.ones(len(e), dtype=bool)
    lr = log_ratios_all(psi, s)
    with np.errstate(over="ignore", invalid="ignore"):
        off = np.exp(lr).sum(axis=1)
        e = k * diag - g * off
    ok = np.isfinite(e)
    return e, ok


def local_energy(
    hamiltonian: ProblemHamiltonian, psi: JastrowParameters, sigma: np.ndarray, t: float
) -> complex:
    e, ok = local_energies(hamiltonian, psi, np.asarray(sigma)[None, :], t)
    if not ok[0]:
        raise FloatingPointError("non-finite amplitude ratio in local energy")
    return complex(e[0])
