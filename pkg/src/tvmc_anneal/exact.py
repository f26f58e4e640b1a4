"""Dense state-vector oracle.

Basis convention: basis index x encodes the configuration with site i on
bit i (site 0 is the least significant bit); bit 0 means spin up, s_i = +1.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numba
import numpy as np
import scipy.sparse.linalg as spla

from .ansatz import JastrowParameters, log_amplitude
from .model import ProblemHamiltonian, diagonal_energy

logger = logging.getLogger(__name__)

__all__ = [
    "DenseState",
    "ExactError",
    "MAX_EXACT_SITES",
    "MAX_FULL_DIAG_SITES",
    "all_configurations",
    "enumerate_variational_state",
    "diagonal_energies",
    "apply_driver",
    "apply_hamiltonian",
    "dense_hamiltonian",
    "exact_evolve",
    "ground_energy",
    "expectation",
    "zz_correlations",
    "Trajectory",
]

MAX_EXACT_SITES = 24
MAX_FULL_DIAG_SITES = 12
# above this size ground_energy switches to Lanczos
DENSE_EIGH_SITES = 8


class ExactError(RuntimeError):
    pass


def _check_size(n: int) -> None:
    if n > MAX_EXACT_SITES:
        raise ExactError(f"N={n} exceeds the dense-oracle cap of {MAX_EXACT_SITES} sites")


def all_configurations(n_sites: int) -> np.ndarray:
    """(2^N, N) array of spins in basis order."""
    _check_size(n_sites)
    x = np.arange(2**n_sites, dtype=np.int64)[:, None]
    bits = (x >> np.arange(n_sites)) & 1
    return (1 - 2 * bits).astype(np.int8)


@dataclass
class DenseState:
    amplitudes: np.ndarray
    n_sites: int

    def __post_init__(self) -> None:
        self.amplitudes = np.asarray(self.amplitudes, dtype=complex)
        if self.amplitudes.shape != (2**self.n_sites,):
            raise ExactError("amplitude vector length must be 2^N")

    @property
    def norm(self) -> float:
        return float(np.linalg.norm(self.amplitudes))

    def normalized(self) -> "DenseState":
        nrm = self.norm
        if not np.isfinite(nrm) or nrm == 0:
            raise ExactError("state has zero or non-finite norm")
        return DenseState(self.amplitudes / nrm, self.n_sites)

    @property
    def probabilities(self) -> np.ndarray:
        p = np.abs(self.amplitudes) ** 2
        return p / p.sum()


def enumerate_variational_state(psi: JastrowParameters, configs: np.ndarray | None = None) -> DenseState:
    _check_size(psi.n_sites)
    if configs is None:
        configs = all_configurations(psi.n_sites)
    la = log_amplitude(psi, configs)
    amp = np.exp(la - la.real.max())
    return DenseState(amp, psi.n_sites).normalized()


def diagonal_energies(hamiltonian_or_realization, n_sites: int | None = None) -> np.ndarray:
    """Target energy of every basis state (target part only, no K factor)."""
    real = getattr(hamiltonian_or_realization, "realization", hamiltonian_or_realization)
    configs = all_configurations(real.n_sites)
    return np.asarray(diagonal_energy(real, configs), dtype=np.float64)


def apply_driver(vec: np.ndarray, n_sites: int) -> np.ndarray:
    """H_D |v> = -sum_i X_i |v>, matrix-free (bit-flip permutations)."""
    out = np.zeros_like(vec)
    for i in range(n_sites):
        v = vec.reshape(2 ** (n_sites - 1 - i), 2, 2**i)
        out.reshape(2 ** (n_sites - 1 - i), 2, 2**i)[...] -= v[:, ::-1, :]
    return out


@numba.njit(cache=True)
def _hv_kernel(v, diag, g, k, n, out):
    # fused K * diag * v - Gamma * sum_i X_i v
    for x in range(v.shape[0]):
        s = v[x ^ 1]
        for i in range(1, n):
            s += v[x ^ (1 << i)]
        out[x] = k * diag[x] * v[x] - g * s
    return out


def apply_hamiltonian(
    hamiltonian: ProblemHamiltonian,
    t: float,
    state: DenseState | np.ndarray,
    diag: np.ndarray | None = None,
) -> DenseState:
    """H(t)|state>: K(t) * diag part + Gamma(t) * driver."""
    vec = state.amplitudes if isinstance(state, DenseState) else np.asarray(state, complex)
    n = hamiltonian.n_sites
    _check_size(n)
    if diag is None:
        diag = diagonal_energies(hamiltonian)
    g, k = hamiltonian.coefficients(t)
    out = k * diag * vec
    if g != 0.0:
        out = out + g * apply_driver(vec, n)
    return DenseState(out, n)


def dense_hamiltonian(hamiltonian: ProblemHamiltonian, t: float) -> np.ndarray:
    """Explicit 2^N x 2^N matrix built entry by entry (small N only)."""
    n = hamiltonian.n_sites
    if n > MAX_FULL_DIAG_SITES:
        raise ExactError(f"explicit matrix limited to N <= {MAX_FULL_DIAG_SITES}")
    g, k = hamiltonian.coefficients(t)
    dim = 2**n
    diag = diagonal_energies(hamiltonian)
    h = np.diag(k * diag).astype(complex)
    for x in range(dim):
        for i in range(n):
            h[x ^ (1 << i), x] -= g
    return h


def expectation(hamiltonian: ProblemHamiltonian, t: float, state: DenseState, diag=None) -> float:
    st = state.normalized()
    hv = apply_hamiltonian(hamiltonian, t, st, diag)
    return float(np.vdot(st.amplitudes, hv.amplitudes).real)


def zz_correlations(state: DenseState, configs: np.ndarray | None = None) -> np.ndarray:
    """c_ij = <Z_i Z_j> over the Born distribution; unit diagonal."""
    if configs is None:
        configs = all_configurations(state.n_sites)
    p = state.probabilities
    s = configs.astype(np.float64)
    c = (s * p[:, None]).T @ s
    np.fill_diagonal(c, 1.0)
    return c


def ground_energy(hamiltonian: ProblemHamiltonian, t: float, diag: np.ndarray | None = None,
                  tol: float = 1e-12, maxiter: int | None = None, dense: bool = False) -> float:
    """Lowest eigenvalue of H(t).

    Full diagonalization for small N (``dense=True`` forces it up to N = 12),
    Lanczos (ARPACK) otherwise, with a fixed seeded start vector.
    """
    n = hamiltonian.n_sites
    _check_size(n)
    if diag is None:
        diag = diagonal_energies(hamiltonian)
    g, k = hamiltonian.coefficients(t)
    if g == 0.0:
        return float(k * diag.min())
    if n <= DENSE_EIGH_SITES or (dense and n <= MAX_FULL_DIAG_SITES):
        h = dense_hamiltonian(hamiltonian, t).real
        return float(np.linalg.eigvalsh(h)[0])
    dim = 2**n

    def matvec(v):
        v = np.ascontiguousarray(v, dtype=np.float64).ravel()
        return _hv_kernel(v, diag, g, k, n, np.empty_like(v))

    op = spla.LinearOperator((dim, dim), matvec=matvec, dtype=np.float64)
    v0 = np.random.default_rng(12345).uniform(0.5, 1.5, dim)
    try:
        vals = spla.eigsh(op, k=1, which="SA", v0=v0, tol=tol, maxiter=maxiter,
                          return_eigenvectors=False)
    except spla.ArpackNoConvergence as exc:
        raise ExactError(f"Lanczos did not converge at t={t}: {exc}") from None
    return float(vals[0])


@dataclass
class Trajectory:
    times: np.ndarray
    states: list[DenseState]
    norm_drift: np.ndarray = field(default_factory=lambda: np.zeros(0))


def exact_evolve(
    hamiltonian: ProblemHamiltonian,
    n_steps: int,
    checkpoints: int | None = None,
    initial: DenseState | None = None,
    max_norm_drift: float = 1e-6,
) -> Trajectory:
    """Integrate i d/dt |psi> = H(t)|psi> from the uniform state with RK4.

    The state is renormalized after every step; a per-step norm change above
    ``max_norm_drift`` aborts the run. ``checkpoints`` evenly spaced states
    (including t = 0 and t = T) are returned; ``None`` keeps every step.
    """
    n = hamiltonian.n_sites
    _check_size(n)
    T = hamiltonian.schedule.total_time
    dt = T / n_steps
    diag = diagonal_energies(hamiltonian)
    if initial is None:
        vec = np.full(2**n, 2.0 ** (-n / 2), dtype=complex)
    else:
        vec = initial.normalized().amplitudes.copy()

    if checkpoints is None:
        keep = set(range(n_steps + 1))
    else:
        keep = set(np.round(np.linspace(0, n_steps, checkpoints)).astype(int).tolist())

    def h_apply(t, v):
        g, k = hamiltonian.coefficients(t)
        return _hv_kernel(v, diag, g, k, n, np.empty_like(v))

    times, states, drift = [], [], np.zeros(n_steps)
    if 0 in keep:
        times.append(0.0)
        states.append(DenseState(vec.copy(), n))
    for step in range(n_steps):
        t = step * dt
        hv = h_apply(t, vec)
        # Subtracting the current mean energy changes only the global phase
        # but keeps |E dt| small for the populated low-energy states, which
        # is what controls the RK4 phase error between them.
        e_ref = float(np.vdot(vec, hv).real)

        def rhs(tt, v, hv=None):
            return -1j * ((h_apply(tt, v) if hv is None else hv) - e_ref * v)

        k1 = rhs(t, vec, hv)
        k2 = rhs(t + dt / 2, vec + dt / 2 * k1)
        k3 = rhs(t + dt / 2, vec + dt / 2 * k2)
        k4 = rhs(t + dt, vec + dt * k3)
        vec = vec + dt / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
        nrm = np.linalg.norm(vec)
        drift[step] = abs(nrm - 1.0)
        if drift[step] > max_norm_drift:
            raise ExactError(
                f"norm drift {drift[step]:.2e} at step {step}; use a smaller dt (more steps)"
            )
        vec /= nrm
        if step + 1 in keep:
            times.append((step + 1) * dt)
            states.append(DenseState(vec.copy(), n))
    logger.debug("exact_evolve N=%d steps=%d max drift %.2e", n, n_steps, drift.max())
    return Trajectory(np.asarray(times), states, drift)
