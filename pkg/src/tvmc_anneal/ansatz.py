"""Jastrow-Feenberg wave functions with rank-2 factorized higher orders.

log psi(sigma) = sum_k J_k(sigma) over the active orders, with

    J_1 = sum_i w1_i s_i
    J_2 = sum_{i<j} w2_ij s_i s_j
    J_k = sum_{i1<...<ik} V_{i1 i2} V_{i2 i3} ... V_{i(k-1) ik} s_i1 ... s_ik   (k >= 3)

Factorized orders are evaluated through prefix chains

    a1 = s,   a_{p+1}[j] = s_j * sum_{i<j} a_p[i] V_ij

(``J_k = sum_j a_k[j]``) and the mirror suffix chains ``b_q``. A single
flip at site f negates every term that contains f, which gives

    log psi(s^f) - log psi(s) = -2 s_f sum_{p=1..k} a_p[f] b_{k-p+1}[f]

and the derivative with respect to V_mn (m < n) is
``sum_{p=1..k-1} a_p[m] b_{k-p}[n]``. Everything costs O(k N^2) per
configuration and is vectorized over a leading batch axis.

All functions accept ``sigma`` of shape (N,) or (B, N) with entries +-1.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

__all__ = [
    "JastrowParameters",
    "FLATTEN_VERSION",
    "log_amplitude",
    "log_ratio",
    "log_ratios_all",
    "log_derivatives",
    "init_driving_ground",
    "perturb_factors",
    "save_parameters",
    "load_parameters",
    "AnsatzError",
]

FLATTEN_VERSION = "w1|w2[i<j]|V_k[m<n] ascending k / v1"
MAX_ORDER = 4


class AnsatzError(ValueError):
    pass


@dataclass
class JastrowParameters:
    """Complex Jastrow parameters.

    ``w2`` is stored as a full N x N array of which only the strict upper
    triangle is read. Each ``factors[k]`` is a symmetric N x N array with
    zero diagonal; the diagonal is frozen and not part of the parameter
    vector.
    """

    n_sites: int
    w1: np.ndarray
    w2: np.ndarray
    factors: dict[int, np.ndarray] = field(default_factory=dict)
    active_orders: tuple[int, ...] = (1, 2)

    def __post_init__(self) -> None:
        n = self.n_sites
        orders = tuple(sorted(set(int(k) for k in self.active_orders)))
        if not orders or orders[0] < 1 or orders[-1] > MAX_ORDER:
            raise AnsatzError(f"active orders must lie in 1..{MAX_ORDER}, got {orders}")
        if orders[-1] > n:
            raise AnsatzError(f"order {orders[-1]} exceeds the number of sites {n}")
        self.active_orders = orders
        self.w1 = np.asarray(self.w1, dtype=complex).reshape(n)
        self.w2 = np.triu(np.asarray(self.w2, dtype=complex).reshape(n, n), 1)
        facs = {}
        for k in orders:
            if k < 3:
                continue
            v = np.asarray(self.factors.get(k, np.zeros((n, n))), dtype=complex)
            if v.shape != (n, n):
                raise AnsatzError(f"factor V^({k}) must be {n}x{n}")
            upper = np.triu(v, 1)
            facs[k] = upper + upper.T
        self.factors = facs

    # -- flattening ------------------------------------------------------

    @property
    def factor_orders(self) -> tuple[int, ...]:
        return tuple(k for k in self.active_orders if k >= 3)

    @property
    def n_params(self) -> int:
        n = self.n_sites
        pairs = n * (n - 1) // 2
        count = 0
        for k in self.active_orders:
            count += n if k == 1 else pairs
        return count

    def param_slices(self) -> dict[int, slice]:
        """Position of each order's block inside the flat vector."""
        n = self.n_sites
        pairs = n * (n - 1) // 2
        out, start = {}, 0
        for k in self.active_orders:
            size = n if k == 1 else pairs
            out[k] = slice(start, start + size)
            start += size
        return out

    def to_vector(self) -> np.ndarray:
        iu = np.triu_indices(self.n_sites, 1)
        parts = []
        for k in self.active_orders:
            if k == 1:
                parts.append(self.w1)
            elif k == 2:
                parts.append(self.w2[iu])
            else:
                parts.append(self.factors[k][iu])
        return np.concatenate(parts) if parts else np.zeros(0, complex)

    def with_vector(self, vec: np.ndarray) -> "JastrowParameters":
        vec = np.asarray(vec, dtype=complex)
        if vec.shape != (self.n_params,):
            raise AnsatzError(f"expected {self.n_params} parameters, got {vec.shape}")
        n = self.n_sites
        iu = np.triu_indices(n, 1)
        w1 = np.zeros(n, complex)
        w2 = np.zeros((n, n), complex)
        factors = {}
        for k, sl in self.param_slices().items():
            if k == 1:
                w1 = vec[sl].copy()
            else:
                m = np.zeros((n, n), complex)
                m[iu] = vec[sl]
                if k == 2:
                    w2 = m
                else:
                    factors[k] = m + m.T
        return JastrowParameters(n, w1, w2, factors, self.active_orders)

    def copy(self) -> "JastrowParameters":
        return self.with_vector(self.to_vector())

    @property
    def w2_symmetric(self) -> np.ndarray:
        return self.w2 + self.w2.T


def init_driving_ground(n_sites: int, active_orders: Sequence[int] = (1, 2, 4)) -> JastrowParameters:
    """All-zero parameters: the uniform superposition |+>^N."""
    n = int(n_sites)
    return JastrowParameters(
        n_sites=n,
        w1=np.zeros(n, complex),
        w2=np.zeros((n, n), complex),
        factors={},
        active_orders=tuple(active_orders),
    )


def perturb_factors(
    psi: JastrowParameters, scale: float, rng: np.random.Generator
) -> JastrowParameters:
    """Add i.i.d. complex Gaussian noise of magnitude ``scale`` to every V^(k).

    Exactly zero factors have a vanishing tangent space (their log-derivatives
    are at least quadratic in V), so factorized orders need a seed value to
    take part in the dynamics.
    """
    out = psi.copy()
    n = psi.n_sites
    iu = np.triu_indices(n, 1)
    for k in out.factor_orders:
        noise = rng.normal(size=(2, len(iu[0])))
        m = np.zeros((n, n), complex)
        m[iu] = scale * (noise[0] + 1j * noise[1]) / np.sqrt(2.0)
        out.factors[k] = out.factors[k] + m + m.T
    return out


def _as_batch(psi: JastrowParameters, sigma: np.ndarray) -> tuple[np.ndarray, bool]:
    s = np.asarray(sigma)
    single = s.ndim == 1
    s = np.atleast_2d(s)
    if s.shape[-1] != psi.n_sites:
        raise AnsatzError(
            f"configuration length {s.shape[-1]} does not match N={psi.n_sites}"
        )
    return s.astype(np.float64, copy=False), single


def _chains(v: np.ndarray, s: np.ndarray, k: int) -> tuple[list[np.ndarray], list[np.ndarray]]:
    """Prefix chains a_1..a_k and suffix chains b_1..b_k for a batch."""
    upper = np.triu(v, 1)
    a = [s.astype(complex)]
    b = [s.astype(complex)]
    for _ in range(k - 1):
        a.append(s * (a[-1] @ upper))
        b.append(s * (b[-1] @ upper.T))
    return a, b


def log_amplitude(psi: JastrowParameters, sigma: np.ndarray) -> np.ndarray | complex:
    s, single = _as_batch(psi, sigma)
    out = np.zeros(s.shape[0], complex)
    for k in psi.active_orders:
        if k == 1:
            out += s @ psi.w1
        elif k == 2:
            out += np.einsum("bi,ij,bj->b", s, psi.w2, s)
        else:
            upper = np.triu(psi.factors[k], 1)
            a = s.astype(complex)
            for _ in range(k - 1):
                a = s * (a @ upper)
            out += a.sum(axis=1)
    return out[0] if single else out


def log_ratios_all(psi: JastrowParameters, sigma: np.ndarray) -> np.ndarray:
    """log psi(s^f) - log psi(s) for every site f; shape (B, N) or (N,)."""
    s, single = _as_batch(psi, sigma)
    out = np.zeros(s.shape, complex)
    for k in psi.active_orders:
        if k == 1:
            out += -2.0 * s * psi.w1
        elif k == 2:
            out += -2.0 * s * (s @ psi.w2_symmetric)
        else:
            a, b = _chains(psi.factors[k], s, k)
            acc = np.zeros(s.shape, complex)
            for p in range(k):
                acc += a[p] * b[k - 1 - p]
            out += -2.0 * s * acc
    return out[0] if single else out


def log_ratio(psi: JastrowParameters, sigma: np.ndarray, flip_site) -> np.ndarray | complex:
    """log psi(s^f) - log psi(s) for one flip per configuration.

    ``flip_site`` is an int or, for a batch, one site per row.
    """
    s, single = _as_batch(psi, sigma)
    f = np.broadcast_to(np.asarray(flip_site, dtype=np.int64), (s.shape[0],))
    if np.any((f < 0) | (f >= psi.n_sites)):
        raise AnsatzError("flip site out of range")
    rows = np.arange(s.shape[0])
    sf = s[rows, f]
    out = np.zeros(s.shape[0], complex)
    for k in psi.active_orders:
        if k == 1:
            out += -2.0 * sf * psi.w1[f]
        elif k == 2:
            field_f = np.einsum("bj,bj->b", psi.w2_symmetric[f], s)
            out += -2.0 * sf * field_f
        else:
            a, b = _chains(psi.factors[k], s, k)
            acc = np.zeros(s.shape[0], complex)
            for p in range(k):
                acc += a[p][rows, f] * b[k - 1 - p][rows, f]
            out += -2.0 * sf * acc
    return out[0] if single else out


def log_derivatives(psi: JastrowParameters, sigma: np.ndarray) -> np.ndarray:
    """d log psi / d theta in the flat parameter order; shape (B, P) or (P,)."""
    s, single = _as_batch(psi, sigma)
    n = psi.n_sites
    iu = np.triu_indices(n, 1)
    parts = []
    for k in psi.active_orders:
        if k == 1:
            parts.append(s.astype(complex))
        elif k == 2:
            parts.append((s[:, iu[0]] * s[:, iu[1]]).astype(complex))
        else:
            a, b = _chains(psi.factors[k], s, k)
            grad = np.zeros((s.shape[0], len(iu[0])), complex)
            for p in range(1, k):
                grad += a[p - 1][:, iu[0]] * b[k - p - 1][:, iu[1]]
            parts.append(grad)
    out = np.concatenate(parts, axis=1)
    return out[0] if single else out


def save_parameters(psi: JastrowParameters, path, extra: Mapping | None = None) -> None:
    """Write an ``.npz`` snapshot; the manifest is embedded as JSON."""
    manifest = {
        "n_sites": psi.n_sites,
        "active_orders": list(psi.active_orders),
        "n_params": psi.n_params,
        "flatten": FLATTEN_VERSION,
    }
    if extra:
        manifest.update(extra)
    np.savez(path, theta=psi.to_vector(), manifest=np.array(json.dumps(manifest)))


def load_parameters(path) -> tuple[JastrowParameters, dict]:
    with np.load(path, allow_pickle=False) as data:
        manifest = json.loads(str(data["manifest"]))
        theta = data["theta"]
    if manifest.get("flatten") != FLATTEN_VERSION:
        raise AnsatzError(f"unsupported flattening {manifest.get('flatten')!r}")
    template = init_driving_ground(manifest["n_sites"], manifest["active_orders"])
    return template.with_vector(theta), manifest
