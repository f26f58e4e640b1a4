"""Lattices and random coupling realizations.

The diamond builder uses the layered picture of the diamond-cubic crystal
along a cubic axis z. Each atomic layer is a square grid; in rotated in-plane
coordinates (u, v) with half-grid spacing, layer ``l`` occupies the points

    u = 2*i + OFFSET_U[l % 4],    v = 2*j + OFFSET_V[l % 4]

and every site bonds to two sites in the layer above (along u for even
layers, along v for odd layers) and two in the layer below. A block of four
layers is one cubic period along z. Columns are counted in the rotated grid,
so an ``nx x ny`` window holds exactly ``nx * ny`` sites per cubic period and

    n_sites = nx * ny * nz_cells.

With ``nz_cells = 2`` the window sizes 3..8 give N = 18, 32, 50, 72, 98, 128.
"""

from __future__ import annotations

import json
from collections import deque
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

__all__ = [
    "Lattice",
    "CouplingRealization",
    "LatticeError",
    "build_diamond_lattice",
    "load_edge_list",
    "dump_edge_list",
    "sample_couplings",
    "diamond_manifest",
    "DIAMOND_SIZES",
    "COUPLING_GENERATOR",
]

COUPLING_GENERATOR = "numpy.Philox+SeedSequence/v1"

# Role tag fed into the seed sequence for coupling draws (see runner.seeds).
_COUPLING_ROLE = 1

OFFSET_U = (0, 1, 1, 0)
OFFSET_V = (0, 0, 1, 1)

# (nx, ny, nz_cells) used for the size series; our choice, see README.
DIAMOND_SIZES: dict[int, tuple[int, int, int]] = {
    8: (2, 2, 2),
    12: (2, 3, 2),
    16: (2, 4, 2),
    18: (3, 3, 2),
    32: (4, 4, 2),
    50: (5, 5, 2),
    72: (6, 6, 2),
    98: (7, 7, 2),
    128: (8, 8, 2),
}


class LatticeError(ValueError):
    """Invalid lattice geometry or edge-list document."""


@dataclass(frozen=True)
class Lattice:
    n_sites: int
    edges: tuple[tuple[int, int], ...]
    geometry_tag: str = "custom"
    boundary: tuple[str, ...] = ()
    positions: np.ndarray | None = field(default=None, compare=False, repr=False)

    def __post_init__(self) -> None:
        edges = tuple((int(i), int(j)) for i, j in self.edges)
        object.__setattr__(self, "edges", edges)
        object.__setattr__(self, "boundary", tuple(self.boundary))
        _validate(self.n_sites, edges)

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    @property
    def edge_array(self) -> np.ndarray:
        return np.asarray(self.edges, dtype=np.int64).reshape(-1, 2)

    def degrees(self) -> np.ndarray:
        deg = np.zeros(self.n_sites, dtype=np.int64)
        for i, j in self.edges:
            deg[i] += 1
            deg[j] += 1
        return deg

    def neighbors(self) -> list[list[int]]:
        nbrs: list[list[int]] = [[] for _ in range(self.n_sites)]
        for i, j in self.edges:
            nbrs[i].append(j)
            nbrs[j].append(i)
        return nbrs

    def lattice_id(self) -> str:
        """Short content hash identifying the graph."""
        import hashlib

        payload = json.dumps([self.n_sites, self.edges]).encode()
        return hashlib.sha256(payload).hexdigest()[:16]

    def to_dict(self) -> dict:
        return {
            "n_sites": self.n_sites,
            "edges": [list(e) for e in self.edges],
            "geometry_tag": self.geometry_tag,
            "boundary": list(self.boundary),
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "Lattice":
        return cls(
            n_sites=int(doc["n_sites"]),
            edges=tuple(tuple(e) for e in doc["edges"]),
            geometry_tag=doc.get("geometry_tag", "custom"),
            boundary=tuple(doc.get("boundary", ())),
        )


@dataclass(frozen=True)
class CouplingRealization:
    lattice: Lattice
    couplings: np.ndarray
    seed: int
    generator: str = COUPLING_GENERATOR

    def __post_init__(self) -> None:
        c = np.asarray(self.couplings, dtype=np.float64)
        if c.shape != (self.lattice.n_edges,):
            raise LatticeError(
                f"expected {self.lattice.n_edges} couplings, got shape {c.shape}"
            )
        if not np.all(np.abs(c) <= 1.0):
            raise LatticeError("couplings must lie in [-1, 1]")
        c.setflags(write=False)
        object.__setattr__(self, "couplings", c)

    @property
    def n_sites(self) -> int:
        return self.lattice.n_sites

    @property
    def lattice_id(self) -> str:
        return self.lattice.lattice_id()

    def coupling_matrix(self) -> np.ndarray:
        """Symmetric N x N matrix with J_ij on both (i, j) and (j, i)."""
        n = self.n_sites
        jm = np.zeros((n, n))
        e = self.lattice.edge_array
        jm[e[:, 0], e[:, 1]] = self.couplings
        jm[e[:, 1], e[:, 0]] = self.couplings
        return jm

    def to_dict(self) -> dict:
        doc = self.lattice.to_dict()
        doc.update(
            couplings=[float(x) for x in self.couplings],
            seed=int(self.seed),
            generator=self.generator,
            lattice_id=self.lattice_id,
        )
        return doc

    @classmethod
    def from_dict(cls, doc: dict) -> "CouplingRealization":
        return cls(
            lattice=Lattice.from_dict(doc),
            couplings=np.asarray(doc["couplings"], dtype=np.float64),
            seed=int(doc.get("seed", 0)),
            generator=doc.get("generator", COUPLING_GENERATOR),
        )


def _validate(n_sites: int, edges: Sequence[tuple[int, int]]) -> None:
    if n_sites < 1:
        raise LatticeError(f"n_sites must be positive, got {n_sites}")
    seen: set[tuple[int, int]] = set()
    for k, (i, j) in enumerate(edges):
        if i == j:
            raise LatticeError(f"edge {k}: self-loop on site {i}")
        if not (0 <= i < n_sites and 0 <= j < n_sites):
            raise LatticeError(f"edge {k}: index out of range [0, {n_sites})")
        if i > j:
            raise LatticeError(f"edge {k}: expected i < j, got ({i}, {j})")
        if (i, j) in seen:
            raise LatticeError(f"edge {k}: duplicate edge ({i}, {j})")
        seen.add((i, j))
    if not _connected(n_sites, edges):
        raise LatticeError("lattice graph is disconnected")


def _connected(n_sites: int, edges: Iterable[tuple[int, int]]) -> bool:
    nbrs: list[list[int]] = [[] for _ in range(n_sites)]
    for i, j in edges:
        nbrs[i].append(j)
        nbrs[j].append(i)
    seen = {0}
    queue = deque([0])
    while queue:
        s = queue.popleft()
        for t in nbrs[s]:
            if t not in seen:
                seen.add(t)
                queue.append(t)
    return len(seen) == n_sites


def build_diamond_lattice(nx: int, ny: int, nz_cells: int) -> Lattice:
    """Diamond lattice, open in x and y, periodic along z.

    Parameters
    ----------
    nx, ny:
        Number of grid columns along the two rotated in-plane axes.
    nz_cells:
        Number of cubic periods (4 atomic layers each) along the periodic
        axis. At least 2, so the wrap never produces duplicate bonds.

    Sites are linearized layer-major: all sites of layer 0 (u-major, then v),
    then layer 1, and so on.
    """
    for name, val in (("nx", nx), ("ny", ny), ("nz_cells", nz_cells)):
        if int(val) != val or val < 1:
            raise LatticeError(f"{name} must be a positive integer, got {val}")
    if nz_cells < 2:
        raise LatticeError(
            f"nz_cells={nz_cells} too small for a periodic z axis; need >= 2 cells"
        )
    n_layers = 4 * nz_cells

    index: dict[tuple[int, int, int], int] = {}
    pos = []
    for layer in range(n_layers):
        ou, ov = OFFSET_U[layer % 4], OFFSET_V[layer % 4]
        for u in range(ou, nx, 2):
            for v in range(ov, ny, 2):
                index[(layer, u, v)] = len(pos)
                pos.append((u, v, layer))

    edges = set()
    for (layer, u, v), s in index.items():
        up = (layer + 1) % n_layers
        if layer % 2 == 0:
            partners = [(up, u - 1, v), (up, u + 1, v)]
        else:
            partners = [(up, u, v - 1), (up, u, v + 1)]
        for key in partners:
            t = index.get(key)
            if t is not None:
                edges.add((min(s, t), max(s, t)))

    return Lattice(
        n_sites=len(pos),
        edges=tuple(sorted(edges)),
        geometry_tag=f"diamond:{nx}x{ny}x{nz_cells}",
        boundary=("open", "open", "periodic"),
        positions=np.asarray(pos, dtype=np.int64),
    )


def diamond_manifest(n_sites: int) -> Lattice:
    """Diamond lattice from the shipped size series."""
    try:
        dims = DIAMOND_SIZES[n_sites]
    except KeyError:
        raise LatticeError(
            f"no manifest entry for N={n_sites}; known sizes {sorted(DIAMOND_SIZES)}"
        ) from None
    return build_diamond_lattice(*dims)


def load_edge_list(text: str) -> tuple[Lattice, np.ndarray | None]:
    """Parse an edge-list document.

    Format: a header line ``N=<n>`` followed by one edge per line, ``i j`` or
    ``i j J``. Lines may also be separated by ``;``. Blank lines and ``#``
    comments are ignored. Either every edge carries a coupling or none does.

    Returns the lattice and the couplings array (``None`` when absent).
    """
    lines = [seg for raw in text.splitlines() for seg in raw.split(";")]
    n_sites = None
    edges: list[tuple[int, int]] = []
    couplings: list[float] = []
    seen: set[tuple[int, int]] = set()
    for lineno, raw in enumerate(lines, start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if n_sites is None:
            key, _, val = line.partition("=")
            if key.strip().upper() != "N" or not val.strip():
                raise LatticeError(f"line {lineno}: expected header 'N=<n>'")
            try:
                n_sites = int(val)
            except ValueError:
                raise LatticeError(f"line {lineno}: bad site count {val!r}") from None
            if n_sites < 1:
                raise LatticeError(f"line {lineno}: site count must be positive")
            continue
        parts = line.split()
        if len(parts) not in (2, 3):
            raise LatticeError(f"line {lineno}: expected 'i j' or 'i j J'")
        try:
            i, j = int(parts[0]), int(parts[1])
        except ValueError:
            raise LatticeError(f"line {lineno}: non-integer site index") from None
        if i == j:
            raise LatticeError(f"line {lineno}: self-loop on site {i}")
        if not (0 <= i < n_sites and 0 <= j < n_sites):
            raise LatticeError(f"line {lineno}: site index out of range [0, {n_sites})")
        if i > j:
            raise LatticeError(f"line {lineno}: expected i < j, got {i} {j}")
        if (i, j) in seen:
            raise LatticeError(f"line {lineno}: duplicate edge {i} {j}")
        seen.add((i, j))
        edges.append((i, j))
        if len(parts) == 3:
            couplings.append(float(parts[2]))
    if n_sites is None:
        raise LatticeError("line 1: missing header 'N=<n>'")
    if couplings and len(couplings) != len(edges):
        raise LatticeError("couplings given for some edges but not all")
    if not _connected(n_sites, edges):
        raise LatticeError("lattice graph is disconnected")
    lattice = Lattice(n_sites=n_sites, edges=tuple(edges))
    return lattice, (np.asarray(couplings) if couplings else None)


def dump_edge_list(lattice: Lattice, couplings: Sequence[float] | None = None) -> str:
    """Inverse of :func:`load_edge_list` (one item per line)."""
    out = [f"N={lattice.n_sites}"]
    if couplings is None:
        out += [f"{i} {j}" for i, j in lattice.edges]
    else:
        out += [f"{i} {j} {float(c)!r}" for (i, j), c in zip(lattice.edges, couplings)]
    return "\n".join(out) + "\n"


def coupling_rng(seed: int) -> np.random.Generator:
    seq = np.random.SeedSequence(entropy=int(seed), spawn_key=(_COUPLING_ROLE,))
    return np.random.Generator(np.random.Philox(seq))


def sample_couplings(lattice: Lattice, seed: int) -> CouplingRealization:
    """Draw J_ij ~ U(-1, 1) i.i.d. per edge, endpoints excluded."""
    if not 0 <= int(seed) < 2**64:
        raise LatticeError(f"seed must be a 64-bit unsigned integer, got {seed}")
    rng = coupling_rng(seed)
    j = rng.uniform(-1.0, 1.0, size=lattice.n_edges)
    # uniform() is half-open; redraw the measure-zero endpoint
    while np.any(j == -1.0):
        bad = j == -1.0
        j[bad] = rng.uniform(-1.0, 1.0, size=int(bad.sum()))
    return CouplingRealization(lattice=lattice, couplings=j, seed=int(seed))
