"""Baselines, the experiment runner and report emission."""

from __future__ import annotations

import copy
import csv
import io
import json
import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .benchmarks import BenchmarkError, gen_benchmark
from .circuit import Circuit
from .planner import optimize_subset_circuit, remap_circuit
from .recombine import Executor, LocalResult, refine_global, run_multilayer
from .sim import Distribution, NoiseModel
from . import sim

log = logging.getLogger(__name__)

METHODS = ("original", "jigsaw", "optimized", "sqem", "qutracer")
CONFIG_VERSION = 1


class ConfigError(ValueError):
    pass


@dataclass
class MethodResult:
    method: str
    dist: Distribution
    normalized_shots: float = 1.0
    avg_two_qubit: float = 0.0
    copies: int = 0
    extra: dict = field(default_factory=dict)


# ---- helpers -----------------------------------------------------------------

def device_noise(n: int, seed: int = 0, p1=(0.0005, 0.002), p2=(0.005, 0.02), readout=(0.01, 0.05)) -> NoiseModel:
    """Heterogeneous device-like model with per-qubit rates drawn uniformly from the ranges."""
    rng = np.random.default_rng(seed)
    ov = {}
    for q in range(n):
        ro = rng.uniform(*readout)
        ov[q] = {"p1": float(rng.uniform(*p1)), "p2": float(rng.uniform(*p2)), "readout": (float(ro), float(ro))}
    return NoiseModel(float(np.mean(p1)), float(np.mean(p2)), (0.0, 0.0), ov)


def _finite(d: Distribution, shots: int | None, rng) -> Distribution:
    if not shots:
        return d
    return sim.counts_to_dist(sim.sample_distribution(d, shots, rng))


def chunk_subsets(qubits, size: int) -> list[tuple[int, ...]]:
    """Consecutive groups of ``size`` measured qubits (the last group may be smaller)."""
    qubits = list(qubits)
    if size < 1:
        raise ValueError("subset size must be positive")
    return [tuple(qubits[i:i + size]) for i in range(0, len(qubits), size)]


# ---- methods ---------------------------------------------------------------------

def run_original(c: Circuit, nm: NoiseModel, shots: int | None = None, seed: int = 0) -> MethodResult:
    d = _finite(sim.noisy_distribution(c, nm), shots, np.random.default_rng(seed))
    return MethodResult("original", d, 1.0, float(c.two_qubit_count()))


def _subset_local(c: Circuit, nm: NoiseModel, subset, optimize: bool, num_physical: int | None) -> tuple[Distribution, int]:
    sub = optimize_subset_circuit(c, subset) if optimize else c.with_measured(subset)
    perm, logical_nm = remap_circuit(sub, nm, num_physical)
    return sim.noisy_distribution(sub, logical_nm, list(subset)), sub.two_qubit_count()


def run_jigsaw(
    c: Circuit,
    nm: NoiseModel,
    shots: int | None = None,
    subset_size: int = 2,
    seed: int = 0,
    optimize: bool = False,
    num_physical: int | None = None,
) -> MethodResult:
    """Half the shots on the global circuit, half spread over subset circuits.

    Each subset circuit measures only its subset and is mapped onto the
    physical qubits with the lowest readout error. With ``optimize`` the
    subset circuits are first shrunk by causal-cone pruning and Z bypass.
    """
    rng = np.random.default_rng(seed)
    subsets = chunk_subsets(c.measured, subset_size)
    glob = _finite(sim.noisy_distribution(c, nm), shots // 2 if shots else None, rng)
    per = max(1, (shots - shots // 2) // len(subsets)) if shots else None
    locals_ = []
    twoq = [c.two_qubit_count()]
    for sub in subsets:
        d, cnt = _subset_local(c, nm, sub, optimize, num_physical)
        locals_.append(LocalResult(sub, _finite(d, per, rng)))
        twoq.append(cnt)
    refined = refine_global(glob, locals_, c.measured)
    name = "optimized" if optimize else "jigsaw"
    return MethodResult(name, refined, 1.0, float(np.mean(twoq)), len(subsets))


def run_optimized_subsetting(c, nm, shots=None, subset_size=2, seed=0, num_physical=None) -> MethodResult:
    return run_jigsaw(c, nm, shots, subset_size, seed, optimize=True, num_physical=num_physical)


def _copy_method(name, c, nm, shots, subsets, seed, executor=None, **kw) -> MethodResult:
    rng = np.random.default_rng(seed)
    glob = _finite(sim.noisy_distribution(c, nm), shots, rng)
    s = max(len(x) for x in subsets)
    spc = math.ceil(s / c.num_qubits * shots) if shots else None
    ex = executor or Executor(nm, spc, seed + 1)
    res = run_multilayer(c, subsets, kw.pop("layers_to_check", None), nm, executor=ex, global_raw=glob, **kw)
    k = shots or 100_000
    spc_eff = spc or math.ceil(s / c.num_qubits * k)
    norm = 1.0 + res.copies * spc_eff / k
    skipped = [list(o.subset) for o in res.per_subset if o.skipped]
    avg2 = (res.avg_two_qubit * res.copies + c.two_qubit_count()) / (res.copies + 1)
    return MethodResult(name, res.global_refined, norm, avg2, res.copies, {"skipped": skipped, "result": res})


def run_sqem(c: Circuit, nm: NoiseModel, shots: int | None = None, subsets=None, seed: int = 0, executor=None) -> MethodResult:
    """Tomographic baseline: full state tomography of the last checked segment, no tracing or pruning."""
    subsets = [(q,) for q in c.measured] if subsets is None else subsets
    return _copy_method(
        "sqem", c, nm, shots, subsets, seed, executor,
        layers_to_check=1, full_tomography=True, prune=False, track=False, full_final=True,
    )


def run_qutracer(
    c: Circuit, nm: NoiseModel, shots: int | None = None, subsets=None, layers_to_check=None, seed: int = 0, executor=None
) -> MethodResult:
    subsets = [(q,) for q in c.measured] if subsets is None else subsets
    return _copy_method("qutracer", c, nm, shots, subsets, seed, executor, layers_to_check=layers_to_check)


# ---- configuration -----------------------------------------------------------------

_TOP_KEYS = {
    "version", "name", "benchmark", "noise", "methods", "subset_size", "jigsaw_subset_size",
    "shots", "seed", "layers_to_check", "backend", "sweep", "num_physical", "outputs",
}
_SWEEP_TARGETS = {"noise.readout", "noise.p1", "noise.p2", "layers_to_check", "seed"}


def _check_keys(d: dict, allowed: set, where: str):
    unknown = set(d) - allowed
    if unknown:
        raise ConfigError(f"unknown key(s) in {where}: {sorted(unknown)}")


@dataclass
class ExperimentConfig:
    """Validated experiment description.

    ``noise`` is either an inline noise-model dict, ``{"file": path}`` or a
    device preset ``{"device": {"seed": .., "p1": [lo, hi], ...}}``.
    ``sweep`` is ``{"param": target, "values": [...]}`` where ``target`` is one
    of the noise rates, ``layers_to_check``, ``seed`` or ``benchmark.<param>``.
    """

    benchmark: dict
    noise: dict
    methods: tuple[str, ...] = ("original", "qutracer")
    subset_size: int = 1
    jigsaw_subset_size: int = 2
    shots: int = 100_000
    seed: int = 0
    layers_to_check: int | None = None
    backend: str = "exact"
    sweep: dict | None = None
    num_physical: int | None = None
    name: str = "experiment"
    outputs: dict = field(default_factory=dict)

    @classmethod
    def from_dict(cls, d: dict, base_dir: str = ".") -> "ExperimentConfig":
        if not isinstance(d, dict):
            raise ConfigError("config must be a JSON object")
        _check_keys(d, _TOP_KEYS, "config")
        if d.get("version") != CONFIG_VERSION:
            raise ConfigError(f"config version must be {CONFIG_VERSION}")
        bench = d.get("benchmark")
        if not isinstance(bench, dict) or "id" not in bench:
            raise ConfigError("benchmark must be an object with an 'id'")
        _check_keys(bench, {"id", "params"}, "benchmark")
        noise = d.get("noise", {})
        if "file" in noise:
            path = os.path.join(base_dir, noise["file"])
            if not os.path.exists(path):
                raise ConfigError(f"noise file {path} does not exist")
            with open(path) as fh:
                noise = json.load(fh)
        methods = tuple(d.get("methods", ("original", "qutracer")))
        bad = [m for m in methods if m not in METHODS]
        if bad or not methods:
            raise ConfigError(f"unknown method(s) {bad}; choose from {list(METHODS)}")
        backend = d.get("backend", "exact")
        if backend not in ("exact", "sampler"):
            raise ConfigError("backend must be 'exact' or 'sampler'")
        subset_size = int(d.get("subset_size", 1))
        if subset_size not in (1, 2):
            raise ConfigError("subset_size must be 1 or 2")
        shots = int(d.get("shots", 100_000))
        if shots < 1:
            raise ConfigError("shots must be positive")
        sweep = d.get("sweep")
        if sweep is not None:
            _check_keys(sweep, {"param", "values"}, "sweep")
            target = sweep.get("param", "")
            if target not in _SWEEP_TARGETS and not target.startswith("benchmark."):
                raise ConfigError(f"cannot sweep {target!r}")
            if not isinstance(sweep.get("values"), list):
                raise ConfigError("sweep values must be a list")
        cfg = cls(
            benchmark={"id": bench["id"], "params": dict(bench.get("params", {}))},
            noise=dict(noise),
            methods=methods,
            subset_size=subset_size,
            jigsaw_subset_size=int(d.get("jigsaw_subset_size", 2)),
            shots=shots,
            seed=int(d.get("seed", 0)),
            layers_to_check=d.get("layers_to_check"),
            backend=backend,
            sweep=sweep,
            num_physical=d.get("num_physical"),
            name=str(d.get("name", "experiment")),
            outputs=dict(d.get("outputs", {})),
        )
        cfg.circuit()  # validates the benchmark parameters
        cfg.noise_model()
        return cfg

    @classmethod
    def from_json(cls, text: str, base_dir: str = ".") -> "ExperimentConfig":
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"invalid JSON: {exc}") from exc
        return cls.from_dict(data, base_dir)

    def to_dict(self) -> dict:
        d = {
            "version": CONFIG_VERSION, "name": self.name, "benchmark": self.benchmark, "noise": self.noise,
            "methods": list(self.methods), "subset_size": self.subset_size,
            "jigsaw_subset_size": self.jigsaw_subset_size, "shots": self.shots, "seed": self.seed,
            "layers_to_check": self.layers_to_check, "backend": self.backend, "num_physical": self.num_physical,
            "outputs": self.outputs,
        }
        if self.sweep is not None:
            d["sweep"] = self.sweep
        return d

    def circuit(self) -> Circuit:
        try:
            return gen_benchmark(self.benchmark["id"], self.benchmark["params"])
        except BenchmarkError as exc:
            raise ConfigError(str(exc)) from exc

    def noise_model(self) -> NoiseModel:
        try:
            if "device" in self.noise:
                dev = dict(self.noise["device"])
                n = dev.pop("num_qubits", None) or self.circuit().num_qubits
                return device_noise(n, **{k: (tuple(v) if isinstance(v, list) else v) for k, v in dev.items()})
            return NoiseModel.from_dict(self.noise)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"invalid noise model: {exc}") from exc

    def points(self) -> list[tuple[object, "ExperimentConfig"]]:
        """One concrete config per sweep value (or the config itself)."""
        if not self.sweep:
            return [(None, self)]
        out = []
        target = self.sweep["param"]
        for v in self.sweep["values"]:
            cfg = copy.deepcopy(self)
            cfg.sweep = None
            if target.startswith("benchmark."):
                cfg.benchmark["params"][target.split(".", 1)[1]] = v
            elif target.startswith("noise."):
                key = target.split(".", 1)[1]
                if "device" in cfg.noise:
                    raise ConfigError("cannot sweep a rate of a device preset")
                cfg.noise[key] = [v, v] if key == "readout" else v
            elif target == "layers_to_check":
                cfg.layers_to_check = v
            else:
                cfg.seed = int(v)
            out.append((v, cfg))
        return out


# ---- runner and report ---------------------------------------------------------

@dataclass
class Report:
    name: str
    rows: list[dict]
    sweep_param: str | None = None
    failures: list[dict] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"name": self.name, "sweep_param": self.sweep_param, "rows": self.rows, "failures": self.failures}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)

    def fidelity(self, method: str, sweep_value=None) -> float | None:
        for r in self.rows:
            if r["method"] == method and r["sweep_value"] == sweep_value:
                return r["fidelity"]
        return None


def _run_method(method: str, cfg: ExperimentConfig, c: Circuit, nm: NoiseModel) -> MethodResult:
    shots = cfg.shots if cfg.backend == "sampler" else None
    subsets = chunk_subsets(c.measured, cfg.subset_size)
    if method == "original":
        return run_original(c, nm, shots, cfg.seed)
    if method == "jigsaw":
        return run_jigsaw(c, nm, shots, cfg.jigsaw_subset_size, cfg.seed, num_physical=cfg.num_physical)
    if method == "optimized":
        return run_optimized_subsetting(c, nm, shots, cfg.jigsaw_subset_size, cfg.seed, cfg.num_physical)
    if method == "sqem":
        return run_sqem(c, nm, shots, subsets, cfg.seed)
    res = run_qutracer(c, nm, shots, subsets, cfg.layers_to_check, cfg.seed)
    if shots is None:
        # exact backend: normalised shots still follow the configured shot count
        res.normalized_shots = 1.0 + res.copies * math.ceil(cfg.subset_size / c.num_qubits * cfg.shots) / cfg.shots
    return res


def run_point(sweep_value, cfg: ExperimentConfig) -> tuple[list[dict], list[dict]]:
    c = cfg.circuit()
    nm = cfg.noise_model()
    ideal = sim.ideal_distribution(c)
    rows, failures = [], []
    base = None
    for method in cfg.methods:
        try:
            res = _run_method(method, cfg, c, nm)
        except Exception as exc:  # recorded, the run continues
            log.error("method %s failed: %s", method, exc)
            failures.append({"sweep_value": sweep_value, "method": method, "error": f"{type(exc).__name__}: {exc}"})
            continue
        fid = min(1.0, max(0.0, sim.hellinger_fidelity(ideal, res.dist)))
        if method == "original":
            base = fid
        rows.append({
            "sweep_value": sweep_value,
            "method": method,
            "fidelity": round(fid, 12),
            "normalized_shots": round(res.normalized_shots, 6),
            "avg_two_qubit": round(res.avg_two_qubit, 6),
            "copies": res.copies,
        })
    for r in rows:
        r["improvement"] = round(r["fidelity"] - base, 12) if base is not None else None
    return rows, failures


def _jobs(jobs: int | None) -> int:
    env = os.environ.get("QUTRACE_JOBS")
    if env:
        return max(1, int(env))
    return max(1, jobs or 1)


def run_experiment(cfg: ExperimentConfig, jobs: int | None = None) -> Report:
    """Run every method at every sweep point; rows come back in sweep then method order."""
    points = cfg.points()
    n = _jobs(jobs)
    if n > 1 and len(points) > 1:
        with ProcessPoolExecutor(max_workers=n) as pool:
            parts = list(pool.map(run_point, *zip(*points)))
    else:
        parts = [run_point(v, p) for v, p in points]
    rows = [r for part, _ in parts for r in part]
    failures = [f for _, part in parts for f in part]
    return Report(cfg.name, rows, cfg.sweep["param"] if cfg.sweep else None, failures)


PLOT_COLUMNS = ("sweep_value", "method", "fidelity")
TABLE_COLUMNS = ("sweep_value", "method", "fidelity", "improvement", "normalized_shots", "avg_two_qubit", "copies")


def emit_plotdata(report: Report) -> str:
    """Long-format CSV with one ``(sweep_value, method, fidelity)`` row per result."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(PLOT_COLUMNS)
    for r in report.rows:
        w.writerow([r["sweep_value"] if r["sweep_value"] is not None else "", r["method"], repr(r["fidelity"])])
    return buf.getvalue()


def emit_table(report: Report) -> str:
    """CSV in the column layout of the results tables."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(TABLE_COLUMNS)
    for r in report.rows:
        w.writerow(["" if r[k] is None else r[k] for k in TABLE_COLUMNS])
    return buf.getvalue()
