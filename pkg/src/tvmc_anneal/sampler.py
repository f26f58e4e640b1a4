"""Born-distribution sampling: single-spin-flip Metropolis and parallel tempering.

Chains are held as one batch. Each walker group owns a counter-based Philox
stream derived from ``(master_seed, chain_id)``; a group is a single chain
for the standard sampler and one temperature ladder for parallel tempering.
All random numbers of a sweep are drawn group by group before the batched
update, so results do not depend on how groups are split across workers.
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numba
import numpy as np

from .ansatz import JastrowParameters, log_amplitude, log_derivatives
from .exact import all_configurations
from .model import ProblemHamiltonian, local_energies

logger = logging.getLogger(__name__)

__all__ = [
    "SamplerConfig",
    "ChainState",
    "SampleSet",
    "SamplingError",
    "chain_rng",
    "init_chains",
    "metropolis_sweep",
    "pt_exchange",
    "pt_acceptance",
    "metropolis_acceptance",
    "geometric_ladder",
    "draw_sample_set",
    "exhaustive_sample_set",
    "build_sample_set",
]

_CHAIN_ROLE = 2


class SamplingError(RuntimeError):
    pass


@dataclass
class SamplerConfig:
    kind: str = "standard"  # standard | pt | exhaustive
    n_chains: int = 512
    samples_per_chain: int = 16
    sweeps_between_samples: int = 1
    thermalization_sweeps: int | None = None  # default 10 N
    warm_sweeps: int | None = 8  # between time steps; None means 2 N
    n_replicas: int = 64
    beta_min: float = 0.1
    n_workers: int = 1
    refresh_every: int = 1000
    max_flagged_fraction: float = 1e-3

    def __post_init__(self) -> None:
        if self.kind not in ("standard", "pt", "exhaustive"):
            raise ValueError(f"unknown sampler kind {self.kind!r}")
        for name in ("n_chains", "samples_per_chain", "sweeps_between_samples", "n_workers"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.kind == "pt" and self.n_replicas < 2:
            raise ValueError("parallel tempering needs at least 2 replicas")
        if not 0.0 < self.beta_min <= 1.0:
            raise ValueError("beta_min must lie in (0, 1]")

    @property
    def n_samples(self) -> int:
        return self.n_chains * self.samples_per_chain

    def replicas(self) -> int:
        return self.n_replicas if self.kind == "pt" else 1


def chain_rng(master_seed: int, chain_id: int) -> np.random.Generator:
    seq = np.random.SeedSequence(entropy=int(master_seed), spawn_key=(_CHAIN_ROLE, int(chain_id)))
    return np.random.Generator(np.random.Philox(seq))


def geometric_ladder(n_replicas: int, beta_min: float = 0.1) -> np.ndarray:
    """Ascending inverse temperatures from beta_min to exactly 1."""
    if n_replicas == 1:
        return np.ones(1)
    betas = beta_min ** (np.arange(n_replicas - 1, -1, -1) / (n_replicas - 1))
    betas[-1] = 1.0
    return betas


@dataclass
class ChainState:
    """A batch of Markov chains.

    ``sigma`` has shape (G, R, N): G walker groups (independent chains or PT
    ladders), R temperature slots per group (R = 1 without tempering),
    N spins. Slot ``R - 1`` has beta = 1 and is the only one measured.
    """

    sigma: np.ndarray
    log_amp: np.ndarray
    beta: np.ndarray
    rngs: list[np.random.Generator]
    sweeps_since_refresh: int = 0
    exchange_parity: int = 0
    accepted: int = 0
    proposed: int = 0
    exchanges_accepted: int = 0
    exchanges_proposed: int = 0

    @property
    def n_groups(self) -> int:
        return self.sigma.shape[0]

    @property
    def n_replicas(self) -> int:
        return self.sigma.shape[1]

    def reset_counters(self) -> None:
        self.accepted = self.proposed = 0
        self.exchanges_accepted = self.exchanges_proposed = 0

    @property
    def acceptance_rate(self) -> float:
        return self.accepted / self.proposed if self.proposed else float("nan")

    @property
    def exchange_rate(self) -> float:
        return self.exchanges_accepted / self.exchanges_proposed if self.exchanges_proposed else float("nan")

    def refresh(self, psi: JastrowParameters) -> None:
        g, r, n = self.sigma.shape
        self.log_amp = log_amplitude(psi, self.sigma.reshape(-1, n)).reshape(g, r)
        self.sweeps_since_refresh = 0


def init_chains(psi: JastrowParameters, n_groups: int, master_seed: int,
                betas: np.ndarray | None = None) -> ChainState:
    """Uniformly random start configurations, one Philox stream per group."""
    betas = np.ones(1) if betas is None else np.asarray(betas, dtype=float)
    n = psi.n_sites
    rngs = [chain_rng(master_seed, g) for g in range(n_groups)]
    sigma = np.stack(
        [1 - 2 * rng.integers(0, 2, size=(len(betas), n), dtype=np.int8) for rng in rngs]
    ).astype(np.int8)
    state = ChainState(
        sigma=sigma,
        log_amp=np.zeros((n_groups, len(betas)), complex),
        beta=np.broadcast_to(betas, (n_groups, len(betas))).copy(),
        rngs=rngs,
    )
    state.refresh(psi)
    return state


def metropolis_acceptance(log_ratio_value: complex, beta: float = 1.0) -> float:
    """min{1, |psi'/psi|^(2 beta)}."""
    x = 2.0 * beta * np.real(log_ratio_value)
    return 1.0 if x >= 0 else math.exp(x)


def pt_acceptance(log_amp_i: complex, log_amp_j: complex, beta_i: float, beta_j: float) -> float:
    """Swap probability of the configurations held at beta_i and beta_j.

    min{1, (|psi_i|^2 / |psi_j|^2)^(beta_j - beta_i)}, which is the ratio of
    the joint tempered weights after and before the swap.
    """
    x = (beta_j - beta_i) * 2.0 * (np.real(log_amp_i) - np.real(log_amp_j))
    return 1.0 if x >= 0 else math.exp(x)


def _kernel_arrays(psi: JastrowParameters):
    """Dense per-order arrays for the compiled sweep (zeros for inactive orders)."""
    n = psi.n_sites
    w1 = psi.w1 if 1 in psi.active_orders else np.zeros(n, complex)
    w2 = psi.w2_symmetric if 2 in psi.active_orders else np.zeros((n, n), complex)
    orders = np.array(psi.factor_orders, dtype=np.int64)
    uppers = np.zeros((len(orders), n, n), complex)
    for i, k in enumerate(orders):
        uppers[i] = np.triu(psi.factors[int(k)], 1)
    return (np.ascontiguousarray(w1), np.ascontiguousarray(w2), uppers, orders)


@numba.njit(cache=True, nogil=True)
def _fill_chains(upper, s, k, a, b):
    n = s.shape[0]
    for i in range(n):
        a[0, i] = s[i]
        b[0, i] = s[i]
    for p in range(1, k):
        for j in range(n):
            a[p, j] = 0.0
        for i in range(n):
            ai = a[p - 1, i]
            for j in range(i + 1, n):
                a[p, j] += ai * upper[i, j]
        for i in range(n):
            acc = 0j
            for j in range(i + 1, n):
                acc += upper[i, j] * b[p - 1, j]
            b[p, i] = s[i] * acc
            a[p, i] *= s[i]


@numba.njit(cache=True, nogil=True)
def _sweep_kernel(sigma, log_amp, beta, sites, logu, w1, w2, uppers, orders):
    """Metropolis sweeps over rows of ``sigma`` (in place).

    Pair fields and factor chains are cached per row, so a proposal costs
    O(k) and only accepted flips pay the O(k N^2) chain rebuild.
    """
    n_rows, n = sigma.shape
    n_fac = orders.shape[0]
    kmax = 1
    for q in range(n_fac):
        kmax = max(kmax, orders[q])
    a = np.zeros((n_fac, kmax, n), np.complex128)
    b = np.zeros((n_fac, kmax, n), np.complex128)
    field = np.zeros(n, np.complex128)
    s = np.zeros(n, np.float64)
    accepted = 0
    for r in range(n_rows):
        for i in range(n):
            s[i] = sigma[r, i]
        for i in range(n):
            acc = 0j
            for j in range(n):
                acc += w2[i, j] * s[j]
            field[i] = acc
        for q in range(n_fac):
            _fill_chains(uppers[q], s, orders[q], a[q], b[q])
        for step in range(sites.shape[0]):
            f = sites[step, r]
            d = w1[f] + field[f]
            for q in range(n_fac):
                k = orders[q]
                for p in range(k):
                    d += a[q, p, f] * b[q, k - 1 - p, f]
            d = -2.0 * s[f] * d
            if logu[step, r] < 2.0 * beta[r] * d.real:
                old = s[f]
                s[f] = -old
                sigma[r, f] = -sigma[r, f]
                log_amp[r] += d
                accepted += 1
                for i in range(n):
                    field[i] -= 2.0 * old * w2[i, f]
                for q in range(n_fac):
                    _fill_chains(uppers[q], s, orders[q], a[q], b[q])
    return accepted


def _sweep_block(psi: JastrowParameters, sigma: np.ndarray, log_amp: np.ndarray,
                 beta: np.ndarray, sites: np.ndarray, logu: np.ndarray, arrays=None) -> int:
    """In-place sweep on a flat block; sites/logu have shape (N, B)."""
    if arrays is None:
        arrays = _kernel_arrays(psi)
    return int(_sweep_kernel(sigma, log_amp, np.ascontiguousarray(beta, dtype=np.float64),
                             np.ascontiguousarray(sites), np.ascontiguousarray(logu), *arrays))


def _blocks(n: int, n_workers: int) -> list[slice]:
    edges = np.linspace(0, n, min(n_workers, n) + 1).round().astype(int)
    return [slice(a, b) for a, b in zip(edges[:-1], edges[1:]) if b > a]


_MAX_SWEEPS_PER_DRAW = 64


def metropolis_sweep(chain: ChainState, psi: JastrowParameters, n_workers: int = 1,
                     refresh_every: int = 1000, n_sweeps: int = 1,
                     exchange: bool = False) -> ChainState:
    """``n_sweeps`` sweeps of N single-spin-flip proposals per chain.

    Sites are uniform at random; acceptance is min{1, exp(2 beta Re log_ratio)}.
    The cached log-amplitude is updated incrementally and fully recomputed
    every ``refresh_every`` sweeps. With ``exchange`` a replica-exchange pass
    follows every sweep. Random numbers are drawn group by group for a block
    of sweeps at a time. Modifies ``chain`` in place and returns it.
    """
    done = 0
    while done < n_sweeps:
        block = min(n_sweeps - done, _MAX_SWEEPS_PER_DRAW,
                    max(1, refresh_every - chain.sweeps_since_refresh))
        _sweep_block_of(chain, psi, block, n_workers, exchange)
        done += block
        if chain.sweeps_since_refresh >= refresh_every:
            chain.refresh(psi)
    return chain


def _sweep_block_of(chain: ChainState, psi: JastrowParameters, n_sweeps: int,
                    n_workers: int, exchange: bool) -> None:
    g, r, n = chain.sigma.shape
    steps = n_sweeps * n
    sites = np.empty((steps, g, r), dtype=np.int64)
    logu = np.empty((steps, g, r))
    u_ex = np.empty((n_sweeps, g, max(r - 1, 1)))
    for k, rng in enumerate(chain.rngs):
        sites[:, k, :] = rng.integers(0, n, size=(steps, r))
        logu[:, k, :] = np.log(rng.random(size=(steps, r)))
        if exchange and r > 1:
            u_ex[:, k, :] = rng.random(size=(n_sweeps, r - 1))
    sites = sites.reshape(steps, g * r)
    logu = logu.reshape(steps, g * r)
    blocks = [slice(b.start * r, b.stop * r) for b in _blocks(g, n_workers)]
    arrays = _kernel_arrays(psi)
    # without exchange all sweeps run in one kernel call
    per_call = n if (exchange and r > 1) else steps

    for start in range(0, steps, per_call):
        rows = slice(start, start + per_call)
        sigma = chain.sigma.reshape(g * r, n)
        log_amp = chain.log_amp.reshape(g * r)
        beta = chain.beta.reshape(g * r)

        def work(sl: slice) -> int:
            s_blk = sigma[sl].copy()
            la_blk = log_amp[sl].copy()
            acc = _sweep_block(psi, s_blk, la_blk, beta[sl], sites[rows, sl], logu[rows, sl], arrays)
            sigma[sl] = s_blk
            log_amp[sl] = la_blk
            return acc

        if len(blocks) == 1:
            accepted = work(blocks[0])
        else:
            with ThreadPoolExecutor(max_workers=len(blocks)) as pool:
                accepted = sum(pool.map(work, blocks))
        chain.sigma = sigma.reshape(g, r, n)
        chain.log_amp = log_amp.reshape(g, r)
        chain.accepted += accepted
        chain.proposed += per_call * g * r
        if per_call == n and exchange and r > 1:
            pt_exchange(chain, u_ex[start // n])
    chain.sweeps_since_refresh += n_sweeps


def pt_exchange(chain: ChainState, uniforms: np.ndarray | None = None) -> ChainState:
    """Replica exchange between adjacent slots of every ladder.

    Even pairs (0,1), (2,3), ... on one call and odd pairs on the next.
    Accepted pairs swap configurations between their temperature slots,
    which is the same as swapping temperatures between configurations.
    """
    g, r, _ = chain.sigma.shape
    if r < 2:
        return chain
    start = chain.exchange_parity % 2
    chain.exchange_parity += 1
    lo = np.arange(start, r - 1, 2)
    if lo.size == 0:
        return chain
    hi = lo + 1
    if uniforms is None:
        u = np.stack([rng.random(size=lo.size) for rng in chain.rngs])
    else:
        u = np.asarray(uniforms)[:, : lo.size]
    b_i, b_j = chain.beta[:, lo], chain.beta[:, hi]
    x = (b_j - b_i) * 2.0 * (chain.log_amp[:, lo].real - chain.log_amp[:, hi].real)
    acc = np.log(u) < x
    gi, pi = np.nonzero(acc)
    a, b = lo[pi], hi[pi]
    sig_a = chain.sigma[gi, a].copy()
    chain.sigma[gi, a] = chain.sigma[gi, b]
    chain.sigma[gi, b] = sig_a
    la_a = chain.log_amp[gi, a].copy()
    chain.log_amp[gi, a] = chain.log_amp[gi, b]
    chain.log_amp[gi, b] = la_a
    chain.exchanges_accepted += int(acc.sum())
    chain.exchanges_proposed += int(acc.size)
    return chain


@dataclass
class SampleSet:
    """Configurations with log-amplitudes, local energies and log-derivatives.

    ``weights`` is ``None`` for Monte Carlo samples (uniform weights) and the
    normalized Born probabilities for exhaustive enumeration.
    """

    configurations: np.ndarray
    log_amplitudes: np.ndarray
    local_energies: np.ndarray
    log_derivatives: np.ndarray
    chain_ids: np.ndarray
    weights: np.ndarray | None = None
    flagged_count: int = 0
    acceptance_rate: float = float("nan")
    exchange_rate: float = float("nan")
    kind: str = "standard"

    @property
    def n_samples(self) -> int:
        return self.configurations.shape[0]

    @property
    def n_params(self) -> int:
        return self.log_derivatives.shape[1]

    def probabilities(self) -> np.ndarray:
        if self.weights is None:
            return np.full(self.n_samples, 1.0 / self.n_samples)
        return self.weights


def build_sample_set(psi: JastrowParameters, hamiltonian: ProblemHamiltonian, t: float,
                     configs: np.ndarray, log_amps: np.ndarray, chain_ids: np.ndarray,
                     weights: np.ndarray | None = None, max_flagged_fraction: float = 1e-3,
                     kind: str = "standard") -> SampleSet:
    """Evaluate E_loc and log-derivatives on fixed configurations.

    Rows whose local energy is non-finite are dropped and counted; more than
    ``max_flagged_fraction`` of them fails the step.
    """
    e_loc, ok = local_energies(hamiltonian, psi, configs, t)
    flagged = int((~ok).sum())
    if flagged:
        frac = flagged / len(ok)
        logger.warning("dropped %d non-finite local energies (%.2e)", flagged, frac)
        if frac > max_flagged_fraction:
            raise SamplingError(
                f"{flagged} of {len(ok)} samples flagged non-finite (> {max_flagged_fraction:.1e})"
            )
        configs, log_amps, chain_ids, e_loc = configs[ok], log_amps[ok], chain_ids[ok], e_loc[ok]
        if weights is not None:
            weights = weights[ok] / weights[ok].sum()
    return SampleSet(
        configurations=configs,
        log_amplitudes=log_amps,
        local_energies=e_loc,
        log_derivatives=log_derivatives(psi, configs),
        chain_ids=chain_ids,
        weights=weights,
        flagged_count=flagged,
        kind=kind,
    )


def exhaustive_sample_set(psi: JastrowParameters, hamiltonian: ProblemHamiltonian, t: float,
                          configs: np.ndarray | None = None) -> SampleSet:
    """Every basis configuration weighted by its exact Born probability."""
    if configs is None:
        configs = all_configurations(psi.n_sites)
    la = log_amplitude(psi, configs)
    w = np.exp(2.0 * (la.real - la.real.max()))
    w /= w.sum()
    return build_sample_set(psi, hamiltonian, t, configs, la,
                            np.zeros(len(configs), dtype=np.int64), weights=w,
                            max_flagged_fraction=0.0, kind="exhaustive")


def draw_sample_set(psi: JastrowParameters, hamiltonian: ProblemHamiltonian, t: float,
                    config: SamplerConfig, master_seed: int = 0,
                    chains: ChainState | None = None) -> tuple[SampleSet, ChainState]:
    """Sample M = n_chains * samples_per_chain configurations at beta = 1.

    Fresh chains are thermalized for ``thermalization_sweeps``; chains passed
    in (warm start from the previous step) get ``warm_sweeps``. The returned
    chain state can be fed to the next call.
    """
    if config.kind == "exhaustive":
        return exhaustive_sample_set(psi, hamiltonian, t), chains
    n = psi.n_sites
    if chains is None:
        betas = geometric_ladder(config.replicas(), config.beta_min)
        chains = init_chains(psi, config.n_chains, master_seed, betas)
        n_burn = 10 * n if config.thermalization_sweeps is None else config.thermalization_sweeps
    else:
        chains.refresh(psi)  # parameters changed since the last call
        n_burn = 2 * n if config.warm_sweeps is None else config.warm_sweeps
    chains.reset_counters()
    tempered = chains.n_replicas > 1

    def sweep(count):
        if count > 0:
            metropolis_sweep(chains, psi, config.n_workers, config.refresh_every,
                             n_sweeps=count, exchange=tempered)

    sweep(n_burn)
    collected = np.empty((config.n_chains, config.samples_per_chain, n), dtype=np.int8)
    amps = np.empty((config.n_chains, config.samples_per_chain), complex)
    for s in range(config.samples_per_chain):
        sweep(config.sweeps_between_samples)
        collected[:, s] = chains.sigma[:, -1]
        amps[:, s] = chains.log_amp[:, -1]

    configs = collected.reshape(-1, n)
    chain_ids = np.repeat(np.arange(config.n_chains), config.samples_per_chain)
    samples = build_sample_set(psi, hamiltonian, t, configs, amps.reshape(-1), chain_ids,
                               max_flagged_fraction=config.max_flagged_fraction, kind=config.kind)
    samples.acceptance_rate = chains.acceptance_rate
    samples.exchange_rate = chains.exchange_rate
    return samples, chains
