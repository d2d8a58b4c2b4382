"""Bayesian refinement of global distributions and the multi-layer driver.

Distributions are dicts from bitstrings to probabilities. A global key covers
the measured qubits with the lowest one rightmost; ``measured`` tells which
qubit sits at which position (default: qubit ``k`` at position ``k``).
"""

from __future__ import annotations

import itertools
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .circuit import Circuit, Gate
from .pauli import PauliString
from .qspc import BASIS_GATES, MitigatedResult, PostSelectionError, assemble, execute_exact
from .sim import Distribution, NoiseModel
from . import sim

log = logging.getLogger(__name__)


def _positions(subset, measured, width: int) -> list[int]:
    order = list(range(width)) if measured is None else list(measured)
    try:
        return [order.index(q) for q in subset]
    except ValueError as exc:
        raise ValueError(f"subset {tuple(subset)} is not measured") from exc


def _sub_key(key: str, pos) -> str:
    n = len(key)
    return "".join(key[n - 1 - p] for p in reversed(pos))


def marginal(d: Distribution, subset, measured=None) -> Distribution:
    """Sum out every bit not in ``subset``; the result is keyed with ``subset[0]`` rightmost."""
    if not d:
        return {}
    width = len(next(iter(d)))
    pos = _positions(subset, measured, width)
    out: dict[str, float] = {}
    for k, p in d.items():
        sk = _sub_key(k, pos)
        out[sk] = out.get(sk, 0.0) + p
    tot = sum(out.values())
    return {k: v / tot for k, v in sorted(out.items())} if tot > 0 else out


@dataclass
class LocalResult:
    subset: tuple[int, ...]
    dist: Distribution
    basis: str = ""
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        self.subset = tuple(self.subset)
        if len(self.subset) not in (1, 2):
            raise ValueError("local results cover one or two qubits")
        self.basis = self.basis or "Z" * len(self.subset)

    def to_dict(self) -> dict:
        return {"subset": list(self.subset), "basis": self.basis, "dist": dict(sorted(self.dist.items())),
                "provenance": self.provenance}


def bayes_update(glob: Distribution, local: LocalResult | Distribution, subset=None, measured=None) -> Distribution:
    """Reweight ``glob`` so its marginal on the subset equals the local distribution.

    ``P'(k) = P(k) M(s(k)) / P_marg(s(k))``. Local outcomes the global
    distribution never produced are spread uniformly over all completions.
    """
    if isinstance(local, LocalResult):
        subset, m = local.subset, local.dist
    else:
        m = local
    if not glob:
        return {}
    width = len(next(iter(glob)))
    pos = _positions(subset, measured, width)
    tot_m = sum(m.values())
    m = {k: v / tot_m for k, v in m.items()}
    tot_g = sum(glob.values())
    marg: dict[str, float] = {}
    for k, p in glob.items():
        sk = _sub_key(k, pos)
        marg[sk] = marg.get(sk, 0.0) + p / tot_g
    out: dict[str, float] = {}
    for k, p in glob.items():
        sk = _sub_key(k, pos)
        if marg[sk] > 0 and m.get(sk, 0.0) > 0:
            out[k] = p / tot_g * m[sk] / marg[sk]
    rest = [q for q in range(width) if q not in pos]
    for sk, v in m.items():
        if v > 0 and marg.get(sk, 0.0) <= 0:
            share = v / 2 ** len(rest)
            for bits in itertools.product("01", repeat=len(rest)):
                key = ["0"] * width
                for p_, ch in zip(pos, reversed(sk)):
                    key[width - 1 - p_] = ch
                for p_, ch in zip(rest, bits):
                    key[width - 1 - p_] = ch
                k = "".join(key)
                out[k] = out.get(k, 0.0) + share
    tot = sum(out.values())
    return {k: v / tot for k, v in sorted(out.items()) if v > 0}


def basis_distribution(rho: np.ndarray, letters: str) -> Distribution:
    """Outcome distribution of measuring each subset qubit in its basis letter (``I`` read as Z)."""
    s = int(round(math.log2(rho.shape[0])))
    r = np.asarray(rho, dtype=complex)
    for q, letter in enumerate(letters):
        for kind in BASIS_GATES["Z" if letter == "I" else letter]:
            r = sim.apply_gate_dm(r, Gate(kind, (q,)), s, None)
    probs = np.clip(np.real(np.diag(r)), 0, None)
    probs = probs / probs.sum()
    return sim.probs_to_dist(probs, s)


@dataclass
class LayerState:
    """Mitigated subset state entering the next checked layer."""

    subset: tuple[int, ...]
    state: np.ndarray
    layer: int = 0

    def __post_init__(self):
        w = np.linalg.eigvalsh((self.state + self.state.conj().T) / 2)
        if w.min() < -1e-9 or abs(np.trace(self.state) - 1) > 1e-9:
            raise ValueError("layer state must be a density matrix")

    def distribution(self, letters: str) -> Distribution:
        return basis_distribution(self.state, letters)


def feed_forward(prev: LayerState | dict | None, ensemble, results) -> list[Distribution]:
    """Refine the mid-circuit bits of each copy against the mitigated state at the cut.

    ``prev`` is a :class:`LayerState` (any basis available) or a mapping from
    basis letters to mitigated distributions. Copies without mid-circuit bits,
    or whose basis has no mitigated distribution, pass through unchanged.
    """
    if prev is None or ensemble.tracked:
        return list(results)
    s = ensemble.s
    out = []
    for copy, dist in zip(ensemble.copies, results):
        if copy.mid is None or not dist:
            out.append(dist)
            continue
        letters = "".join(copy.mid)
        if isinstance(prev, LayerState):
            target = prev.distribution(letters)
        elif letters in prev:
            target = prev[letters]
        else:
            log.warning("no mitigated %s distribution at the cut; copy left unrefined", letters)
            out.append(dist)
            continue
        # mid bits are the left half of the key: positions s..2s-1
        mid_qubits = list(range(s, 2 * s))
        out.append(bayes_update(dist, target, mid_qubits))
    return out


# ---- execution ------------------------------------------------------------------

class Executor:
    """Runs copy ensembles on the exact backend, optionally drawing finite shots.

    Raw per-copy results are cached by payload so that sweeps over the
    number of checked layers reuse earlier executions.
    """

    def __init__(self, nm: NoiseModel | None, shots_per_copy: int | None = None, seed: int = 0):
        self.nm = nm
        self.shots_per_copy = shots_per_copy
        self.rng = np.random.default_rng(seed)
        self.cache: dict = {}
        self.copies_run = 0
        self.two_qubit_total = 0

    def run(self, ens, ctx) -> list[Distribution]:
        key = (ens.manifest(), tuple(map(str, ctx.prefix)), tuple(map(str, ctx.segment)))
        if key not in self.cache:
            res = execute_exact(ens, ctx)
            if self.shots_per_copy:
                res = [sim.counts_to_dist(sim.sample_distribution(d, self.shots_per_copy, self.rng)) for d in res]
            self.cache[key] = res
        twoq = Circuit(ctx.num_qubits, ctx.prefix + ctx.segment).two_qubit_count()
        self.copies_run += len(ens.copies)
        self.two_qubit_total += twoq * len(ens.copies)
        return self.cache[key]


@dataclass
class SubsetOutcome:
    subset: tuple[int, ...]
    per_layer: list[MitigatedResult] = field(default_factory=list)
    local: LocalResult | None = None
    copies: int = 0
    skipped: str | None = None

    def to_dict(self) -> dict:
        return {
            "subset": list(self.subset),
            "per_layer": [r.to_dict() for r in self.per_layer],
            "local": self.local.to_dict() if self.local else None,
            "copies": self.copies,
            "skipped": self.skipped,
        }


def _z_values(pullback: dict, exps: dict) -> dict[str, float]:
    vals = {}
    for zs, obs in pullback.items():
        v = 0.0
        for letters, coeff in obs.items():
            v += (coeff * (1.0 if set(letters) == {"I"} else exps[letters])).real
        vals[zs] = v
    return vals


def mitigate_subset(
    c: Circuit,
    subset,
    layers_to_check: int | None,
    executor: Executor,
    *,
    full_tomography: bool = False,
    prune: bool = True,
    track: bool = True,
    full_final: bool | None = None,
) -> SubsetOutcome:
    """Chain QSPC over the checked segments of one subset and return its final local distribution."""
    from .planner import copy_context, copies_for, dist_from_z_expectations, evolve_state, plan_subset
    from .qspc import pauli_expectations, project_psd

    subset = tuple(sorted(subset))
    s = len(subset)
    plan = plan_subset(c, subset, layers_to_check, full_final)
    out = SubsetOutcome(subset)
    if not plan.checked:
        if layers_to_check == 0:
            out.skipped = "no layers checked"
            return out
        if any(j not in plan.bypassed for j in range(len(plan.segments))):
            out.skipped = "no checkable segment"
            return out
        # every segment bypassed: the subset marginal follows from local ops alone
        zero = np.zeros((2**s, 2**s), dtype=complex)
        zero[0, 0] = 1
        vals = _z_values(plan.final_pullback, pauli_expectations(zero, s))
        out.local = LocalResult(subset, dist_from_z_expectations(vals, s), provenance={"layers": 0})
        return out
    prev = None
    for j, idx in enumerate(plan.checked):
        tracked = track and j == 0 and plan.tracked_first
        ens = copies_for(plan, idx, tracked, full_tomography)
        ctx = copy_context(plan, idx, executor.nm, tracked, prune)
        raw = executor.run(ens, ctx)
        out.copies += len(ens.copies)
        refined = feed_forward(prev, ens, raw)
        try:
            res = assemble(ens, refined)
        except PostSelectionError as exc:
            log.warning("subset %s skipped: %s", subset, exc)
            out.skipped = str(exc)
            return out
        out.per_layer.append(res)
        if j + 1 < len(plan.checked):
            nxt = plan.segments[plan.checked[j + 1]]
            rho = evolve_state(res.state, plan.local_ops_between(plan.segments[idx].end, nxt.start), subset)
            prev = LayerState(subset, project_psd(rho)[0], layer=j)
    vals = _z_values(plan.final_pullback, out.per_layer[-1].expectations)
    dist = dist_from_z_expectations(vals, s)
    out.local = LocalResult(subset, dist, provenance={"layers": len(plan.checked), "segments": list(plan.checked)})
    return out


@dataclass
class MultilayerResult:
    global_raw: Distribution
    global_refined: Distribution
    per_subset: list[SubsetOutcome]
    fidelity: dict = field(default_factory=dict)
    copies: int = 0
    avg_two_qubit: float = 0.0

    def to_dict(self) -> dict:
        return {
            "global_raw": dict(sorted(self.global_raw.items())),
            "global_refined": dict(sorted(self.global_refined.items())),
            "per_subset": [o.to_dict() for o in self.per_subset],
            "fidelity": self.fidelity,
        }


def refine_global(glob: Distribution, locals_, measured=None) -> Distribution:
    """Sequential Bayesian updates in ascending subset order."""
    out = dict(glob)
    for loc in sorted(locals_, key=lambda r: tuple(r.subset)):
        out = bayes_update(out, loc, measured=measured)
    return out


def run_multilayer(
    c: Circuit,
    subsets,
    layers_to_check: int | None,
    nm: NoiseModel,
    shots: int | None = None,
    seed: int = 0,
    executor: Executor | None = None,
    global_raw: Distribution | None = None,
    **kw,
) -> MultilayerResult:
    """Global run plus per-subset multi-layer QSPC, merged by Bayesian refinement."""
    rng = np.random.default_rng(seed)
    if global_raw is None:
        global_raw = sim.noisy_distribution(c, nm)
        if shots:
            global_raw = sim.counts_to_dist(sim.sample_distribution(global_raw, shots, rng))
    if executor is None:
        spc = None
        if shots:
            s = max(len(x) for x in subsets) if subsets else 1
            spc = math.ceil(s / c.num_qubits * shots)
        executor = Executor(nm, spc, seed + 1)
    before_copies, before_2q = executor.copies_run, executor.two_qubit_total
    outcomes = [mitigate_subset(c, sub, layers_to_check, executor, **kw) for sub in sorted(map(tuple, subsets))]
    refined = refine_global(global_raw, [o.local for o in outcomes if o.local is not None], c.measured)
    ncopies = executor.copies_run - before_copies
    avg2 = (executor.two_qubit_total - before_2q) / ncopies if ncopies else 0.0
    return MultilayerResult(global_raw, refined, outcomes, copies=ncopies, avg_two_qubit=avg2)
