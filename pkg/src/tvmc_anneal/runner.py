"""Run configuration, single runs, realization sweeps and timing benchmarks.

Every artifact written here carries ``SCHEMA_VERSION`` and an echo of the
configuration that produced it. Step reports are streamed as JSON lines and
flushed after every step, so a killed run leaves a readable prefix.

Seeds fan out from ``master_seed`` by hashing ``(master_seed, role, index)``
(see :func:`derive_seed`); the realization index selects the couplings and
every stochastic stream of that run.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import logging
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Sequence

import numpy as np
import yaml

from . import __version__
from .ansatz import init_driving_ground, perturb_factors, save_parameters
from .exact import ExactError, MAX_EXACT_SITES, exact_evolve, ground_energy, zz_correlations
from .lattice import (
    CouplingRealization,
    Lattice,
    LatticeError,
    build_diamond_lattice,
    diamond_manifest,
    load_edge_list,
    sample_couplings,
)
from .model import ProblemHamiltonian, ScheduleError, crossing_time, make_schedule
from .observables import (
    CorrelationMatrix,
    RealizationEnsembleResult,
    RealizationRecord,
    aggregate,
    correlation_error,
    correlations_mc,
    residual_energy,
    save_correlations,
)
from .sampler import SamplerConfig, SamplingError, draw_sample_set
from .tdvp import SolverConfig, TdvpConfig, TdvpEngine, integrated_r2

logger = logging.getLogger(__name__)

__all__ = [
    "SCHEMA_VERSION",
    "ConfigError",
    "NumericalError",
    "LatticeSpec",
    "ScheduleSpec",
    "RunConfig",
    "RunRecord",
    "BenchmarkResult",
    "derive_seed",
    "code_version",
    "load_config",
    "build_lattice",
    "build_realization",
    "run_anneal",
    "run_sweep",
    "oracle_run",
    "benchmark_scaling",
    "output_root",
    "worker_count",
]

SCHEMA_VERSION = "tvmc-anneal/v1"
ENV_OUTPUT_ROOT = "TVMC_OUTPUT_ROOT"
ENV_WORKERS = "TVMC_WORKERS"
MODES = ("tvmc", "exact", "both")


class ConfigError(ValueError):
    """Invalid configuration; raised before any compute."""


class NumericalError(RuntimeError):
    """A run aborted on a numerical failure."""


_NUMERICAL = (FloatingPointError, SamplingError, ExactError, np.linalg.LinAlgError, NumericalError)


def output_root() -> Path:
    return Path(os.environ.get(ENV_OUTPUT_ROOT, "runs"))


def worker_count(default: int = 1) -> int:
    raw = os.environ.get(ENV_WORKERS)
    if raw is None:
        return default
    try:
        value = int(raw)
    except ValueError:
        raise ConfigError(f"{ENV_WORKERS} must be an integer, got {raw!r}") from None
    if value < 1:
        raise ConfigError(f"{ENV_WORKERS} must be >= 1")
    return value


def derive_seed(master_seed: int, role: str, index: int = 0) -> int:
    """63-bit seed from SHA-256 of ``"master_seed:role:index"``."""
    digest = hashlib.sha256(f"{int(master_seed)}:{role}:{int(index)}".encode()).digest()
    return int.from_bytes(digest[:8], "little") >> 1


# modules whose source cannot change a result
_PRESENTATION = ("cli.py", "__init__.py")
_ORACLE_SOURCES = ("exact.py", "model.py", "lattice.py")


def _source_digest(names: Sequence[str] | None = None) -> str:
    h = hashlib.sha256()
    for path in sorted(Path(__file__).parent.glob("*.py")):
        if (names is None and path.name not in _PRESENTATION) or (names and path.name in names):
            h.update(path.name.encode())
            h.update(path.read_bytes())
    return h.hexdigest()[:12]


def code_version() -> str:
    """Package version plus a digest of the sources that affect results."""
    return f"{__version__}+{_source_digest()}"


# -- configuration ---------------------------------------------------------


@dataclass
class LatticeSpec:
    """Either a diamond box (``nx, ny, nz_cells``), a size from the shipped
    diamond series (``n_sites``) or an edge-list file (``path``)."""

    kind: str = "diamond"  # diamond | edgelist
    n_sites: int | None = None
    nx: int | None = None
    ny: int | None = None
    nz_cells: int = 2
    path: str | None = None


@dataclass
class ScheduleSpec:
    family: str = "trigonometric"
    params: dict = field(default_factory=dict)


@dataclass
class RunConfig:
    lattice: LatticeSpec = field(default_factory=LatticeSpec)
    master_seed: int = 0
    realizations: int = 1
    realization_seeds: list[int] | None = None
    orders: tuple[int, ...] = (1, 2, 4)
    schedule: ScheduleSpec = field(default_factory=ScheduleSpec)
    total_time: float = 7.0
    n_steps: int = 100
    integrator: str = "heun"
    validation_every: int = 10
    factor_init_scale: float = 0.02
    sampler: SamplerConfig = field(default_factory=SamplerConfig)
    solver: SolverConfig = field(default_factory=SolverConfig)
    final_samples_factor: int = 4
    exact_steps: int = 1000
    e_res_every: int = 0  # residual energy every k-th step (needs the dense oracle); 0 disables
    output_dir: str | None = None
    mode: str = "tvmc"

    def validate(self) -> "RunConfig":
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.realizations < 1:
            raise ConfigError("realizations must be >= 1")
        if self.realization_seeds is not None and len(self.realization_seeds) < 1:
            raise ConfigError("realization_seeds must not be empty")
        if self.n_steps < 1 or self.exact_steps < 1:
            raise ConfigError("step counts must be >= 1")
        if not self.total_time > 0:
            raise ConfigError("total_time must be positive")
        if self.integrator not in ("heun", "rk4", "euler"):
            raise ConfigError(f"unknown integrator {self.integrator!r}")
        if self.final_samples_factor < 1:
            raise ConfigError("final_samples_factor must be >= 1")
        if self.factor_init_scale < 0:
            raise ConfigError("factor_init_scale must be nonnegative")
        orders = tuple(sorted(set(int(k) for k in self.orders)))
        if not orders or orders[0] < 1 or orders[-1] > 4:
            raise ConfigError(f"orders must lie in 1..4, got {self.orders}")
        self.orders = orders
        try:
            make_schedule(self.schedule.family, self.total_time, **self.schedule.params)
        except ScheduleError as exc:
            raise ConfigError(str(exc)) from None
        try:
            lattice = build_lattice(self.lattice)
        except (LatticeError, OSError) as exc:
            raise ConfigError(f"lattice: {exc}") from None
        if self.mode != "tvmc" and lattice.n_sites > MAX_EXACT_SITES:
            raise ConfigError(f"mode {self.mode!r} needs N <= {MAX_EXACT_SITES}")
        if self.e_res_every and lattice.n_sites > MAX_EXACT_SITES:
            raise ConfigError("residual energies need the dense oracle")
        return self

    @property
    def n_realizations(self) -> int:
        return len(self.realization_seeds) if self.realization_seeds else self.realizations

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["orders"] = list(self.orders)
        return d

    @classmethod
    def from_dict(cls, doc: dict) -> "RunConfig":
        doc = dict(doc)
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(doc) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        try:
            if "lattice" in doc:
                doc["lattice"] = LatticeSpec(**doc["lattice"])
            if "schedule" in doc:
                doc["schedule"] = ScheduleSpec(**doc["schedule"])
            if "sampler" in doc:
                doc["sampler"] = SamplerConfig(**doc["sampler"])
            if "solver" in doc:
                doc["solver"] = SolverConfig(**doc["solver"])
            if "orders" in doc:
                doc["orders"] = tuple(doc["orders"])
            return cls(**doc)
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from None

    def replace(self, **changes) -> "RunConfig":
        return dataclasses.replace(self, **changes)

    def config_hash(self) -> str:
        doc = self.to_dict()
        doc.pop("output_dir", None)
        return hashlib.sha256(json.dumps(doc, sort_keys=True).encode()).hexdigest()[:16]

    def realization_seed(self, index: int) -> int:
        if self.realization_seeds:
            return int(self.realization_seeds[index])
        return derive_seed(self.master_seed, "couplings", index)

    def tdvp_config(self) -> TdvpConfig:
        return TdvpConfig(
            total_time=self.total_time,
            n_steps=self.n_steps,
            integrator=self.integrator,
            validation_every=self.validation_every,
            solver=self.solver,
            sampler=self.sampler,
        )


def load_config(path) -> RunConfig:
    """YAML or JSON file (chosen by suffix; YAML otherwise)."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from None
    try:
        doc = json.loads(text) if path.suffix == ".json" else yaml.safe_load(text)
    except (json.JSONDecodeError, yaml.YAMLError) as exc:
        raise ConfigError(f"{path}: {exc}") from None
    if not isinstance(doc, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    return RunConfig.from_dict(doc).validate()


def build_lattice(spec: LatticeSpec) -> Lattice:
    if spec.kind == "diamond":
        if spec.nx is not None or spec.ny is not None:
            if spec.nx is None or spec.ny is None:
                raise LatticeError("diamond box needs both nx and ny")
            return build_diamond_lattice(spec.nx, spec.ny, spec.nz_cells)
        if spec.n_sites is None:
            raise LatticeError("diamond lattice needs n_sites or nx/ny")
        return diamond_manifest(spec.n_sites)
    if spec.kind == "edgelist":
        if spec.path is None:
            raise LatticeError("edge-list lattice needs a path")
        return load_edge_list(Path(spec.path).read_text())[0]
    raise LatticeError(f"unknown lattice kind {spec.kind!r}")


def build_realization(config: RunConfig, index: int) -> CouplingRealization:
    """Couplings for realization ``index``; an edge list with a coupling
    column is used as is."""
    if config.lattice.kind == "edgelist" and config.lattice.path:
        lattice, couplings = load_edge_list(Path(config.lattice.path).read_text())
        if couplings is not None:
            return CouplingRealization(lattice, couplings, seed=-1, generator="file")
        return sample_couplings(lattice, config.realization_seed(index))
    return sample_couplings(build_lattice(config.lattice), config.realization_seed(index))


# -- records ---------------------------------------------------------------


@dataclass
class RunRecord:
    config: dict
    index: int
    n_sites: int
    seeds: dict
    status: str = "running"  # running | ok | failed
    reports: list[dict] = field(default_factory=list)
    tvmc_correlations: CorrelationMatrix | None = None
    exact_correlations: CorrelationMatrix | None = None
    epsilon_c: float | None = None
    r2_integrated: float | None = None
    r2_reliable: bool = False
    final_energy: float | None = None
    e_res_times: list[float] = field(default_factory=list)
    e_res: list[float] = field(default_factory=list)
    e_res_errors: list[float] = field(default_factory=list)
    crossing_time: float | None = None
    timings: dict = field(default_factory=dict)
    error: dict | None = None
    directory: str | None = None

    def summary(self) -> dict:
        return {
            "schema": SCHEMA_VERSION,
            "code_version": code_version(),
            "config": self.config,
            "config_hash": RunConfig.from_dict(self.config).config_hash(),
            "index": self.index,
            "n_sites": self.n_sites,
            "seeds": self.seeds,
            "status": self.status,
            "epsilon_c": self.epsilon_c,
            "r2_integrated": self.r2_integrated,
            "r2_reliable": self.r2_reliable,
            "final_energy": self.final_energy,
            "e_res_times": self.e_res_times,
            "e_res": self.e_res,
            "e_res_errors": self.e_res_errors,
            "crossing_time": self.crossing_time,
            "timings": self.timings,
            "error": self.error,
        }

    def to_realization_record(self) -> RealizationRecord:
        failed = None
        if self.status != "ok":
            failed = (self.error or {}).get("message", self.status)
        return RealizationRecord(
            seed=int(self.seeds.get("couplings", -1)),
            epsilon_c=self.epsilon_c,
            r2_integrated=self.r2_integrated,
            final_energy=self.final_energy,
            e_res_times=list(self.e_res_times),
            e_res=list(self.e_res),
            e_res_errors=list(self.e_res_errors),
            failed=failed,
        )

    @classmethod
    def load(cls, directory) -> "RunRecord":
        directory = Path(directory)
        doc = json.loads((directory / "record.json").read_text())
        rec = cls(config=doc["config"], index=doc["index"], n_sites=doc["n_sites"],
                  seeds=doc["seeds"], status=doc["status"])
        for key in ("epsilon_c", "r2_integrated", "final_energy", "e_res_times", "e_res",
                    "e_res_errors", "crossing_time", "timings", "error"):
            setattr(rec, key, doc.get(key))
        rec.r2_reliable = bool(doc.get("r2_reliable", False))
        rec.directory = str(directory)
        steps = directory / "steps.jsonl"
        if steps.exists():
            lines = [json.loads(x) for x in steps.read_text().splitlines() if x.strip()]
            rec.reports = [x for x in lines if x.get("kind") == "step"]
        for name, attr in (("correlations_tvmc.json", "tvmc_correlations"),
                           ("correlations_exact.json", "exact_correlations")):
            p = directory / name
            if p.exists():
                setattr(rec, attr, CorrelationMatrix.from_dict(json.loads(p.read_text())))
        return rec


def _write_json(path: Path, doc: dict) -> None:
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_text(json.dumps(doc, indent=1, default=_json_default))
    tmp.replace(path)


def _json_default(obj: Any):
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, complex):
        return [obj.real, obj.imag]
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"not serializable: {type(obj)}")


def _clean(value):
    """JSON-safe float (NaN/inf -> None)."""
    if value is None:
        return None
    value = float(value)
    return value if math.isfinite(value) else None


# -- oracle ------------------------------------------------------------------


def oracle_run(realization: CouplingRealization, config: RunConfig,
               cache_dir: Path | None = None) -> CorrelationMatrix:
    """Final correlations of the exactly evolved state, cached on disk by
    (couplings, schedule, T, exact_steps)."""
    schedule = make_schedule(config.schedule.family, config.total_time, **config.schedule.params)
    key = None
    if cache_dir is not None:
        ident = json.dumps({
            "edges": [list(e) for e in realization.lattice.edges],
            "couplings": np.asarray(realization.couplings).tolist(),
            "schedule": schedule.to_dict(),
            "steps": config.exact_steps,
            "code": _source_digest(_ORACLE_SOURCES),
        }, sort_keys=True, default=_json_default)
        key = hashlib.sha256(ident.encode()).hexdigest()[:20]
        path = Path(cache_dir) / f"oracle-{key}.json"
        if path.exists():
            return CorrelationMatrix.from_dict(json.loads(path.read_text()))
    h = ProblemHamiltonian(realization, schedule)
    traj = exact_evolve(h, config.exact_steps, checkpoints=2)
    corr = CorrelationMatrix(zz_correlations(traj.states[-1]), "exact")
    if key is not None:
        Path(cache_dir).mkdir(parents=True, exist_ok=True)
        save_correlations(corr, Path(cache_dir) / f"oracle-{key}.json")
    return corr


# -- single run --------------------------------------------------------------


def _run_dir(config: RunConfig, index: int) -> Path | None:
    if config.output_dir is None:
        return None
    return Path(config.output_dir) / f"realization-{index:03d}"


def _reusable(directory: Path | None, config: RunConfig) -> RunRecord | None:
    if directory is None or not (directory / "record.json").exists():
        return None
    try:
        doc = json.loads((directory / "record.json").read_text())
    except json.JSONDecodeError:
        return None
    if (doc.get("status") == "ok" and doc.get("config_hash") == config.config_hash()
            and doc.get("code_version") == code_version()):
        return RunRecord.load(directory)
    return None


def run_anneal(config: RunConfig, index: int = 0, resume: bool = False,
               oracle_cache: Path | None = None) -> RunRecord:
    """One annealing run for realization ``index``.

    Numerical failures are caught and recorded (``status == "failed"``)
    with partial outputs kept; configuration errors propagate. With
    ``resume`` a finished record with the same config hash and code
    version is loaded instead of recomputed.
    """
    config.validate()
    directory = _run_dir(config, index)
    if resume:
        cached = _reusable(directory, config)
        if cached is not None:
            logger.info("reusing %s", directory)
            return cached

    realization = build_realization(config, index)
    n = realization.n_sites
    seeds = {
        "couplings": int(realization.seed),
        "chains": derive_seed(config.master_seed, "chains", index),
        "validation": derive_seed(config.master_seed, "validation", index),
        "factor_init": derive_seed(config.master_seed, "factor_init", index),
    }
    record = RunRecord(config=config.to_dict(), index=index, n_sites=n, seeds=seeds,
                       directory=None if directory is None else str(directory))
    schedule = make_schedule(config.schedule.family, config.total_time, **config.schedule.params)
    hamiltonian = ProblemHamiltonian(realization, schedule)
    try:
        record.crossing_time = crossing_time(schedule)
    except ScheduleError:
        record.crossing_time = None

    stream = None
    if directory is not None:
        directory.mkdir(parents=True, exist_ok=True)
        stream = open(directory / "steps.jsonl", "w")
        header = {"kind": "header", "schema": SCHEMA_VERSION, "code_version": code_version(),
                  "config": record.config, "index": index, "seeds": seeds}
        stream.write(json.dumps(header, default=_json_default) + "\n")
        stream.flush()

    try:
        if config.mode in ("tvmc", "both"):
            _tvmc_phase(config, hamiltonian, record, seeds, directory, stream)
        if config.mode in ("exact", "both"):
            t0 = time.perf_counter()
            record.exact_correlations = oracle_run(realization, config, oracle_cache)
            record.timings["exact"] = time.perf_counter() - t0
            if directory is not None:
                save_correlations(record.exact_correlations, directory / "correlations_exact.json")
        if record.tvmc_correlations is not None and record.exact_correlations is not None:
            record.epsilon_c = correlation_error(record.tvmc_correlations, record.exact_correlations)
        record.status = "ok"
    except _NUMERICAL as exc:
        record.status = "failed"
        record.error = {"type": type(exc).__name__, "message": str(exc), "class": "numerical"}
        logger.error("realization %d failed: %s", index, exc)
    finally:
        if stream is not None:
            stream.close()
        if directory is not None:
            _write_json(directory / "record.json", record.summary())
    return record


def _tvmc_phase(config: RunConfig, hamiltonian: ProblemHamiltonian, record: RunRecord,
                seeds: dict, directory: Path | None, stream) -> None:
    n = hamiltonian.n_sites
    tcfg = config.tdvp_config()
    psi = init_driving_ground(n, config.orders)
    if psi.factor_orders and config.factor_init_scale > 0:
        psi = perturb_factors(psi, config.factor_init_scale,
                              np.random.default_rng(seeds["factor_init"]))
    engine = TdvpEngine(hamiltonian, tcfg, seed=seeds["chains"], validation_seed=seeds["validation"])
    e0_diag = None
    if config.e_res_every:
        from .exact import diagonal_energies

        e0_diag = diagonal_energies(hamiltonian)

    t0 = time.perf_counter()
    e_res_time = 0.0
    t = 0.0
    for step in range(tcfg.n_steps):
        psi, report = engine.step(psi, t)
        doc = report.to_dict()
        doc["kind"] = "step"
        for key, value in list(doc.items()):
            if isinstance(value, float) and not math.isfinite(value):
                doc[key] = None
        record.reports.append(doc)
        if stream is not None:
            stream.write(json.dumps(doc, default=_json_default) + "\n")
            stream.flush()
        if config.e_res_every and step % config.e_res_every == 0:
            te = time.perf_counter()
            _append_e_res(record, hamiltonian, t, report.energy, report.energy_error, e0_diag)
            e_res_time += time.perf_counter() - te
        t = (step + 1) * tcfg.dt
    t = tcfg.total_time

    # final measurement at t = T from the warm chains, with a larger sample
    sampler = dataclasses.replace(
        tcfg.sampler, samples_per_chain=tcfg.sampler.samples_per_chain * config.final_samples_factor)
    final, _ = draw_sample_set(psi, hamiltonian, t, sampler, seeds["chains"], engine._chains)
    record.tvmc_correlations = correlations_mc(final)
    p = final.probabilities()
    energy = complex(p @ final.local_energies)
    record.final_energy = energy.real
    if config.e_res_every:
        from .tdvp import _chain_error

        err = 0.0 if final.weights is not None else _chain_error(final.local_energies, final.chain_ids)
        te = time.perf_counter()
        _append_e_res(record, hamiltonian, t, energy, err, e0_diag)
        e_res_time += time.perf_counter() - te
    r2 = integrated_r2(record.reports, tcfg.total_time)
    record.r2_integrated = r2.value
    record.r2_reliable = r2.reliable
    record.timings["tvmc"] = time.perf_counter() - t0 - e_res_time
    record.timings["ground_energy"] = e_res_time
    record.timings["per_step"] = record.timings["tvmc"] / tcfg.n_steps
    if directory is not None:
        save_correlations(record.tvmc_correlations, directory / "correlations_tvmc.json")
        save_parameters(psi, directory / "params.npz",
                        extra={"schema": SCHEMA_VERSION, "t": t, "config_hash": config.config_hash()})


def _append_e_res(record: RunRecord, hamiltonian: ProblemHamiltonian, t: float,
                  energy: complex, energy_error: float, diag) -> None:
    _, kappa = hamiltonian.coefficients(t)
    if not kappa > 0:
        return  # normalized residual energy is undefined where K = 0
    e0 = ground_energy(hamiltonian, t, diag)
    n = hamiltonian.n_sites
    record.e_res_times.append(float(t))
    record.e_res.append(residual_energy(energy, e0, kappa, n))
    record.e_res_errors.append(float(energy_error) / n / kappa if math.isfinite(energy_error) else 0.0)


# -- sweeps ------------------------------------------------------------------


def _sweep_worker(args) -> RunRecord:
    config_doc, index, resume, cache = args
    config = RunConfig.from_dict(config_doc)
    rec = run_anneal(config, index, resume=resume, oracle_cache=cache)
    rec.reports = []  # keep inter-process payloads small; the stream is on disk
    return rec


def run_sweep(config: RunConfig, n_workers: int | None = None, resume: bool = False,
              label: str = "") -> tuple[RealizationEnsembleResult, list[RunRecord]]:
    """All realizations of ``config``; failures are recorded, not raised.

    Realizations run in separate processes when ``n_workers > 1``. The
    oracle cache lives next to the run directories.
    """
    config.validate()
    n_workers = worker_count(1) if n_workers is None else n_workers
    count = config.n_realizations
    cache = None if config.output_dir is None else Path(config.output_dir) / "oracle-cache"
    args = [(config.to_dict(), i, resume, cache) for i in range(count)]
    if n_workers > 1 and count > 1:
        with ProcessPoolExecutor(max_workers=min(n_workers, count)) as pool:
            records = list(pool.map(_sweep_worker, args))
    else:
        records = [run_anneal(config, i, resume=resume, oracle_cache=cache) for i in range(count)]
    n_sites = records[0].n_sites
    ensemble = aggregate(n_sites, [r.to_realization_record() for r in records], label)
    if config.output_dir is not None:
        out = Path(config.output_dir)
        out.mkdir(parents=True, exist_ok=True)
        doc = ensemble.to_dict()
        doc["schema_version"] = SCHEMA_VERSION
        doc["config"] = config.to_dict()
        doc["code_version"] = code_version()
        _write_json(out / "ensemble.json", doc)
    return ensemble, records


# -- benchmark ---------------------------------------------------------------


@dataclass
class BenchmarkResult:
    sizes: list[int]
    per_step: list[float]
    repeats: list[list[float]]
    exponent: float
    intercept: float
    reliable: bool
    notes: list[str] = field(default_factory=list)

    def table(self) -> list[dict]:
        return [{"n_sites": n, "seconds_per_step": t, "repeats": r}
                for n, t, r in zip(self.sizes, self.per_step, self.repeats)]

    def to_dict(self) -> dict:
        return {"schema": SCHEMA_VERSION, "rows": self.table(), "exponent": self.exponent,
                "intercept": self.intercept, "reliable": self.reliable, "notes": self.notes}


def time_steps(config: RunConfig, n_timed: int = 2, n_warmup: int = 1) -> float:
    """Median wall time of ``n_timed`` TDVP steps after ``n_warmup`` untimed ones.

    The warm-up also absorbs thermalization of fresh chains and JIT compilation.
    """
    realization = build_realization(config, 0)
    schedule = make_schedule(config.schedule.family, config.total_time, **config.schedule.params)
    hamiltonian = ProblemHamiltonian(realization, schedule)
    tcfg = config.tdvp_config()
    psi = init_driving_ground(realization.n_sites, config.orders)
    if psi.factor_orders and config.factor_init_scale > 0:
        psi = perturb_factors(psi, config.factor_init_scale,
                              np.random.default_rng(derive_seed(config.master_seed, "factor_init", 0)))
    engine = TdvpEngine(hamiltonian, tcfg, seed=derive_seed(config.master_seed, "chains", 0))
    t = 0.0
    times = []
    for step in range(n_warmup + n_timed):
        t0 = time.perf_counter()
        psi, _ = engine.step(psi, t)
        if step >= n_warmup:
            times.append(time.perf_counter() - t0)
        t = (step + 1) * tcfg.dt
    return float(np.median(times))


def benchmark_scaling(sizes: Sequence[int], template: RunConfig, repeats: int = 2,
                      n_timed: int = 2, noise_tolerance: float = 0.5) -> BenchmarkResult:
    """Per-step wall time for each diamond size and the log-log slope.

    A size whose repeats differ by more than ``noise_tolerance`` (relative to
    their mean) marks the whole result unreliable.
    """
    sizes = [int(n) for n in sizes]
    if len(set(sizes)) < 3:
        raise ConfigError("benchmark needs at least three distinct sizes")
    per_step, all_reps, notes = [], [], []
    reliable = True
    for n in sizes:
        cfg = template.replace(lattice=LatticeSpec(kind="diamond", n_sites=n), mode="tvmc",
                               validation_every=0, output_dir=None)
        reps = [time_steps(cfg, n_timed=n_timed) for _ in range(repeats)]
        mean = float(np.mean(reps))
        if len(reps) > 1 and (max(reps) - min(reps)) > noise_tolerance * mean:
            reliable = False
            notes.append(f"N={n}: repeat spread {max(reps) - min(reps):.3g}s exceeds "
                         f"{noise_tolerance:.0%} of mean {mean:.3g}s")
        per_step.append(float(min(reps)))
        all_reps.append(reps)
        logger.info("N=%d: %.3g s/step (repeats %s)", n, per_step[-1], reps)
    slope, intercept = np.polyfit(np.log(sizes), np.log(per_step), 1)
    return BenchmarkResult(sizes, per_step, all_reps, float(slope), float(intercept), reliable, notes)
