"""Cut placement, circuit-shrinking passes and cost accounting for one subset.

A subset's history is split into items: *local* ops (acting only on subset
wires, simulated classically) and *segments* (runs of ops that touch the
subset and something else, each protected by one Pauli check per subset
qubit). Cuts sit on the subset wires before and after every segment.
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .circuit import Circuit, CircuitError, CutPoint, Gate, commutes, embed, gate_unitary, propagate_pauli
from .pauli import PauliString, all_paulis, pauli_decompose
from .qspc import CheckPair, CopyContext, build_copies, observables_for
from . import sim

CHECK_PREFERENCE = ("Z", "X", "Y")


class PlanError(ValueError):
    pass


# ---- passes ------------------------------------------------------------------

def prune_false_dependencies(c: Circuit, measured=None) -> Circuit:
    """Drop every op the measured wires do not depend on.

    Walking backwards, an op is kept when it touches a measured wire or fails
    to commute with a kept later op it shares a wire with. Every dropped op
    commutes with all kept ops after it, so moving it past them to the end of
    the circuit (after the measurements, on unmeasured wires) is a valid
    reordering; the single backward pass therefore reaches the closure of
    adjacent commuting transpositions without an iteration cap.
    """
    measured = set(c.measured if measured is None else measured)
    kept: list[int] = []
    by_wire: dict[int, list[int]] = {}
    for i in range(len(c.ops) - 1, -1, -1):
        g = c.ops[i]
        keep = bool(set(g.qubits) & measured)
        if not keep:
            later = {j for q in g.qubits for j in by_wire.get(q, ())}
            keep = any(not commutes(g, c.ops[j]) for j in sorted(later))
        if keep:
            kept.append(i)
            for q in g.qubits:
                by_wire.setdefault(q, []).append(i)
    kept.reverse()
    return Circuit(c.num_qubits, tuple(c.ops[i] for i in kept), (), tuple(sorted(measured)))


def prune_indices(c: Circuit, measured) -> list[int]:
    """Indices of ops kept by :func:`prune_false_dependencies`."""
    measured = set(measured)
    kept: list[int] = []
    by_wire: dict[int, list[int]] = {}
    for i in range(len(c.ops) - 1, -1, -1):
        g = c.ops[i]
        keep = bool(set(g.qubits) & measured)
        if not keep:
            later = {j for q in g.qubits for j in by_wire.get(q, ())}
            keep = any(not commutes(g, c.ops[j]) for j in sorted(later))
        if keep:
            kept.append(i)
            for q in g.qubits:
                by_wire.setdefault(q, []).append(i)
    return sorted(kept)


def bypass_gates(c: Circuit, qubits, basis="Z") -> tuple[Circuit, list[dict]]:
    """Remove trailing ops that cannot change the ``basis`` statistics of ``qubits``.

    Scanning from the end, an op is removed while none of its wires is blocked
    by a kept later op and it commutes with the basis Pauli on every traced
    wire it touches (a diagonal gate leaves Z marginals alone). Kept ops block
    their wires. ``basis`` is one letter or one letter per qubit.
    """
    qubits = [qubits] if isinstance(qubits, int) else list(qubits)
    letters = basis if len(basis) == len(qubits) else basis * len(qubits)
    traced = dict(zip(qubits, letters))
    blocked: set[int] = set()
    kept: list[Gate] = []
    removed: list[dict] = []
    for i in range(len(c.ops) - 1, -1, -1):
        g = c.ops[i]
        ok = not (set(g.qubits) & blocked)
        if ok:
            for q in g.qubits:
                if q in traced and not commutes(g, PauliString.single(c.num_qubits, q, traced[q])):
                    ok = False
                    break
        if ok:
            removed.append({"index": i, "gate": str(g)})
        else:
            kept.append(g)
            blocked.update(g.qubits)
    kept.reverse()
    removed.reverse()
    return Circuit(c.num_qubits, tuple(kept), (), c.measured), removed


def optimize_subset_circuit(c: Circuit, subset) -> Circuit:
    """Causal-cone pruning followed by Z-basis bypass, measuring only ``subset``."""
    pruned = prune_false_dependencies(c, subset)
    out, _ = bypass_gates(pruned, subset, "Z")
    return out.with_measured(subset)


# ---- local (subset-only) operator algebra -------------------------------------

def local_unitary(g: Gate, subset) -> np.ndarray:
    """Matrix of an op acting only on subset wires, in the subset basis (bit k = subset[k])."""
    return embed(gate_unitary(g), g.qubits, subset)


def pullback(obs: dict[str, complex], ops, subset) -> dict[str, complex]:
    """Heisenberg picture ``O -> G^+ O G`` through ``ops`` applied in circuit order.

    ``obs`` maps subset-order Pauli letters to coefficients. The ops are
    undone last-first.
    """
    s = len(subset)
    mat = sum(v * PauliString(k).to_matrix() for k, v in obs.items())
    for g in reversed(list(ops)):
        u = local_unitary(g, subset)
        mat = u.conj().T @ mat @ u
    out = pauli_decompose(mat, s)
    return {k: v for k, v in out.items() if abs(v) > 1e-12}


def evolve_state(rho: np.ndarray, ops, subset) -> np.ndarray:
    for g in ops:
        u = local_unitary(g, subset)
        rho = u @ rho @ u.conj().T
    return rho


def z_strings(s: int) -> list[str]:
    """Non-identity Z-type strings on ``s`` subset qubits."""
    return ["".join(t) for t in itertools.product("IZ", repeat=s) if set(t) != {"I"}]


def dist_from_z_expectations(vals: dict[str, float], s: int) -> dict[str, float]:
    """Bit distribution from the Z-string expectations (clipped and renormalised)."""
    probs = np.zeros(2**s)
    for idx in range(2**s):
        tot = 1.0
        for zs, v in vals.items():
            parity = sum((idx >> k) & 1 for k, ch in enumerate(zs) if ch == "Z") % 2
            tot += v * (-1 if parity else 1)
        probs[idx] = tot / 2**s
    probs = np.clip(probs, 0, None)
    if probs.sum() <= 0:
        probs = np.ones(2**s)
    probs /= probs.sum()
    return {format(i, f"0{s}b"): float(p) for i, p in enumerate(probs)}


# ---- cut placement ---------------------------------------------------------------

@dataclass
class Segment:
    """A run of ops touching the subset, checked as one unit.

    ``start``/``end`` are op indices (inclusive) in the planned circuit;
    ``ops`` are the indices of ops inside the window that touch the subset.
    """

    start: int
    end: int
    ops: tuple[int, ...]
    checks: tuple[CheckPair, ...]

    def to_dict(self) -> dict:
        return {
            "start": self.start,
            "end": self.end,
            "ops": list(self.ops),
            "checks": [c.to_dict() for c in self.checks],
        }


@dataclass
class Budget:
    copies_per_check: list[int]
    checks: int
    total_copies: int
    shots_per_copy: int
    normalized_shots: float

    def to_dict(self) -> dict:
        return {
            "copies_per_check": self.copies_per_check,
            "checks": self.checks,
            "total_copies": self.total_copies,
            "shots_per_copy": self.shots_per_copy,
            "normalized_shots": self.normalized_shots,
        }


@dataclass
class SubsetPlan:
    circuit: Circuit
    subset: tuple[int, ...]
    items: list  # ("local", op index) | ("segment", Segment)
    cuts: list[CutPoint]
    segments: list[Segment]
    checked: list[int] = field(default_factory=list)  # indices into segments
    bypassed: list[int] = field(default_factory=list)
    bases_needed: dict[int, tuple[str, ...]] = field(default_factory=dict)
    final_pullback: dict[str, dict[str, complex]] = field(default_factory=dict)
    tracked_first: bool = False
    budget: Budget | None = None

    @property
    def s(self) -> int:
        return len(self.subset)

    def local_ops_between(self, lo: int, hi: int) -> list[Gate]:
        """Local ops whose index lies strictly between op indices ``lo`` and ``hi``."""
        return [self.circuit.ops[i] for kind, i in self.items if kind == "local" and lo < i < hi]

    @property
    def classical_prefix(self) -> list[Gate]:
        first = self.segments[0].start if self.segments else len(self.circuit.ops)
        return self.local_ops_between(-1, first)

    def to_dict(self) -> dict:
        return {
            "subset": list(self.subset),
            "cuts": [{"qubit": c.qubit, "after_op": c.after_op} for c in self.cuts],
            "segments": [seg.to_dict() for seg in self.segments],
            "checked": list(self.checked),
            "bypassed": list(self.bypassed),
            "bases": {str(k): list(v) for k, v in sorted(self.bases_needed.items())},
            "tracked_first": self.tracked_first,
            "budget": self.budget.to_dict() if self.budget else None,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


def _valid_letters(state: dict[int, dict[str, PauliString]], g: Gate, subset: set) -> dict | None:
    """Propagate every candidate check through ``g``; ``None`` if some qubit loses all."""
    out = {}
    for q, cands in state.items():
        keep = {}
        for letter, p in cands.items():
            p2 = propagate_pauli([g], p)
            if p2 is not None and set(p2.support) <= subset:
                keep[letter] = p2
        if not keep:
            return None
        out[q] = keep
    return out


def _fixed_letters(state: dict[int, dict[str, PauliString]], g: Gate) -> dict | None:
    """Candidates whose image commutes with a subset-only op; ``None`` if some qubit loses all.

    Such an op joins an open segment only when it leaves a check image
    untouched, otherwise it is lifted out and simulated classically.
    """
    out = {}
    for q, cands in state.items():
        keep = {ltr: p for ltr, p in cands.items() if propagate_pauli([g], p) == p}
        if not keep:
            return None
        out[q] = keep
    return out


def _fresh_checks(n: int, subset) -> dict[int, dict[str, PauliString]]:
    # propagation starts from C_L^dagger (Paulis here are Hermitian, so C_L itself)
    return {q: {ltr: PauliString.single(n, q, ltr) for ltr in CHECK_PREFERENCE} for q in subset}


def _segment_checks(c: Circuit, subset, op_idx) -> tuple[CheckPair, ...] | None:
    sset = set(subset)
    state = _fresh_checks(c.num_qubits, subset)
    for i in op_idx:
        state = _valid_letters(state, c.ops[i], sset)
        if state is None:
            return None
    checks = []
    for q in subset:
        letter = next(ltr for ltr in CHECK_PREFERENCE if ltr in state[q])
        left = PauliString.single(c.num_qubits, q, letter)
        checks.append(CheckPair(left, state[q][letter], tuple(subset)))
    return tuple(checks)


def place_cuts(c: Circuit, subset) -> SubsetPlan:
    """Greedy left-to-right segmentation of the ops touching ``subset``.

    Ops acting only on subset wires outside an open segment are local. An op
    that also touches other wires opens a segment or extends the open one as
    long as every subset qubit keeps a single-qubit Pauli check whose image
    ``C_R`` stays a Pauli string confined to the subset. A subset-only op
    extends the open segment only if it commutes with a surviving check image.
    Local ops trailing a segment are handed back to the classical side.
    """
    subset = tuple(sorted(subset))
    if len(subset) not in (1, 2):
        raise PlanError("subset size must be 1 or 2")
    sset = set(subset)
    n = c.num_qubits
    items: list = []
    segments: list[Segment] = []
    open_ops: list[int] | None = None
    state = None

    def close():
        nonlocal open_ops, state
        ops_ = list(open_ops)
        trailing = []
        while ops_ and set(c.ops[ops_[-1]].qubits) <= sset:
            trailing.append(ops_.pop())
        checks = _segment_checks(c, subset, ops_)
        seg = Segment(ops_[0], ops_[-1], tuple(ops_), checks)
        segments.append(seg)
        items.append(("segment", seg))
        for i in reversed(trailing):
            items.append(("local", i))
        open_ops, state = None, None

    for i, g in enumerate(c.ops):
        touch = set(g.qubits) & sset
        if not touch:
            continue
        inside = set(g.qubits) <= sset
        if open_ops is not None:
            nxt = _fixed_letters(state, g) if inside else _valid_letters(state, g, sset)
            if nxt is not None:
                open_ops.append(i)
                state = nxt
                continue
            close()
        if inside:
            items.append(("local", i))
            continue
        state = _valid_letters(_fresh_checks(n, subset), g, sset)
        if state is None:
            raise PlanError(f"{g} admits no single-qubit Pauli check confined to subset {subset}")
        open_ops = [i]
    if open_ops is not None:
        close()

    last_touch = max((i for i, g in enumerate(c.ops) if set(g.qubits) & sset), default=-1)
    cuts = []
    for seg in segments:
        for q in subset:
            cuts.append(CutPoint(q, seg.start - 1))
        if seg.end != last_touch:
            for q in subset:
                cuts.append(CutPoint(q, seg.end))
    # cuts on the same wire at the same boundary coincide
    cuts = sorted(set(cuts), key=lambda cp: (cp.after_op, cp.qubit))
    return SubsetPlan(c, subset, items, cuts, segments)


def segment_circuit(plan: SubsetPlan, seg: Segment) -> Circuit:
    """All ops of the segment window (including interleaved background ops)."""
    c = plan.circuit
    return Circuit(c.num_qubits, c.ops[seg.start:seg.end + 1])


def simulate_local(c: Circuit, subset) -> tuple[list[tuple[int, Gate]], Circuit]:
    """Split off the ops acting only on subset wires outside checked segments.

    Returns the lifted ``(index, gate)`` list (to be applied classically to the
    tracked subset state) and the residual circuit without them.
    """
    plan = place_cuts(c, subset)
    lifted = [(i, c.ops[i]) for kind, i in plan.items if kind == "local"]
    drop = {i for i, _ in lifted}
    residual = c.with_ops([g for i, g in enumerate(c.ops) if i not in drop])
    return lifted, residual


def segment_commutes(c: Circuit, seg: Segment, pauli: PauliString) -> bool:
    ops = [c.ops[i] for i in range(seg.start, seg.end + 1)]
    return propagate_pauli(ops, pauli) == pauli


def traceback(plan: SubsetPlan, layers_to_check: int | None = None, full_final: bool | None = None) -> SubsetPlan:
    """Backward pass from the final Z measurement of the subset.

    The required observables are pulled back through local ops by conjugation;
    a segment commuting with every required Pauli is bypassed. The first
    segment that does not is the last checked one, and the bases needed there
    are the Paulis of the pulled-back observables. Earlier checked segments
    feed the next layer and need the full subset state.
    """
    c, subset, s = plan.circuit, plan.subset, plan.s
    n = c.num_qubits
    req = {zs: {zs: 1.0} for zs in z_strings(s)}
    pos = len(c.ops)
    bypassed = []
    last = None
    for idx in range(len(plan.segments) - 1, -1, -1):
        seg = plan.segments[idx]
        local = plan.local_ops_between(seg.end, pos)
        req = {k: pullback(v, local, subset) for k, v in req.items()}
        paulis = {p for v in req.values() for p in v if set(p) != {"I"}}
        if all(segment_commutes(c, seg, _lift(p, subset, n)) for p in paulis):
            bypassed.append(idx)
            pos = seg.start
            continue
        last = idx
        pos = seg.end
        break
    if last is None:
        local = plan.local_ops_between(-1, pos)
        req = {k: pullback(v, local, subset) for k, v in req.items()}
    plan.bypassed = sorted(bypassed)
    plan.final_pullback = req
    live = list(range(last + 1)) if last is not None else []
    k = len(live) if layers_to_check is None else max(0, min(layers_to_check, len(live)))
    plan.checked = live[len(live) - k:]
    if full_final is None:
        full_final = s > 1
    plan.bases_needed = {}
    for idx in plan.checked:
        if idx == last and not full_final:
            need = sorted({p for v in req.values() for p in v if set(p) != {"I"}})
            plan.bases_needed[idx] = tuple(need) if need else ("Z" * s,)
        else:
            plan.bases_needed[idx] = observables_for("all", s)
    first = plan.checked[0] if plan.checked else None
    plan.tracked_first = first is not None and not any(
        plan.segments[j].start < plan.segments[first].start for j in range(len(plan.segments))
    )
    return plan


def _lift(letters: str, subset, n: int) -> PauliString:
    full = ["I"] * n
    for q, ch in zip(subset, letters):
        full[q] = ch
    return PauliString("".join(full))


def plan_subset(c: Circuit, subset, layers_to_check: int | None = None, full_final: bool | None = None) -> SubsetPlan:
    return traceback(place_cuts(c, subset), layers_to_check, full_final)


# ---- copies per checked segment, budget ---------------------------------------

def subset_state_before(plan: SubsetPlan, seg_index: int) -> np.ndarray:
    """Noiseless subset state at the cut before a segment preceded only by local ops."""
    s = plan.s
    rho = np.zeros((2**s, 2**s), dtype=complex)
    rho[0, 0] = 1
    return evolve_state(rho, plan.local_ops_between(-1, plan.segments[seg_index].start), plan.subset)


def copies_for(plan: SubsetPlan, seg_index: int, tracked: bool | None = None, full_tomography: bool = False):
    seg = plan.segments[seg_index]
    if tracked is None:
        tracked = plan.tracked_first and seg_index == plan.checked[0]
    rho = subset_state_before(plan, seg_index) if tracked else None
    bases = plan.bases_needed.get(seg_index, observables_for("all", plan.s))
    return build_copies(
        segment_circuit(plan, seg), seg.checks, rho, bases,
        subset=plan.subset, full_tomography=full_tomography, verify=False,
    )


def budget(plans, shots_original: int, symmetry_weight=None) -> Budget:
    """Copy and shot accounting over the checked segments of ``plans``.

    Every copy gets ``ceil(s/n * shots_original)`` shots. The normalised shot
    count adds the original global run (weight one) to the copy shots divided
    by ``shots_original``.
    """
    plans = [plans] if isinstance(plans, SubsetPlan) else list(plans)
    per_check = []
    spc = 0
    for plan in plans:
        n = plan.circuit.num_qubits
        spc = max(spc, math.ceil(plan.s / n * shots_original))
        for idx in plan.checked:
            per_check.append(len(copies_for(plan, idx)))
    total = sum(per_check)
    norm = 1.0 + total * spc / shots_original if shots_original else float("nan")
    b = Budget(per_check, len(per_check), total, spc, norm)
    for plan in plans:
        plan.budget = b
    return b


# ---- device mapping -----------------------------------------------------------------

def remap(live_qubits, nm: sim.NoiseModel, num_physical: int, two_qubit_usage=None, measured=None) -> dict[int, int]:
    """Greedy logical-to-physical assignment on a low-noise part of the device.

    Measured logical qubits are placed first, then the rest, each group in
    order of decreasing two-qubit usage. Each goes to the free physical qubit
    with the lowest score ``readout error (if measured) + usage * p2``; ties
    go to the lowest physical index.
    """
    live = list(live_qubits)
    if len(live) > num_physical:
        raise PlanError(f"{len(live)} live qubits do not fit on {num_physical} physical qubits")
    usage = two_qubit_usage or {}
    measured = set(live if measured is None else measured)
    order = sorted(live, key=lambda q: (q not in measured, -usage.get(q, 0), q))
    free = list(range(num_physical))
    mapping = {}
    for q in order:
        def score(p):
            ro = sum(nm.readout_pair(p)) / 2 if q in measured else 0.0
            return ro + usage.get(q, 0) * nm.qubit_p2(p)
        best = min(free, key=lambda p: (score(p), p))
        mapping[q] = best
        free.remove(best)
    return mapping


def remap_circuit(c: Circuit, nm: sim.NoiseModel, num_physical: int | None = None) -> tuple[list[int], sim.NoiseModel]:
    """Full permutation for ``c`` (live qubits first) and the logical view of the device."""
    n = c.num_qubits
    num_physical = n if num_physical is None else num_physical
    live = sorted(set(c.active_qubits) | set(c.measured))
    usage = {}
    for g in c.ops:
        if g.num_qubits == 2:
            for q in g.qubits:
                usage[q] = usage.get(q, 0) + 1
    mapping = remap(live, nm, num_physical, usage, c.measured)
    rest = [p for p in range(num_physical) if p not in mapping.values()]
    perm = [mapping[q] if q in mapping else rest.pop(0) for q in range(n)]
    return perm, nm.remapped(perm)


# ---- symmetry -----------------------------------------------------------------

def _apply_perm(subset, perm) -> tuple[int, ...]:
    return tuple(sorted(perm[q] for q in subset))


def check_automorphism(c: Circuit, perm, tol: float = 1e-9) -> bool:
    """Spot check: relabelling the qubits leaves the ideal output distribution invariant."""
    n = c.num_qubits
    psi = sim.statevector(c)
    probs = np.abs(psi) ** 2
    permuted = np.zeros_like(probs)
    for idx, p in enumerate(probs):
        j = 0
        for q in range(n):
            if (idx >> q) & 1:
                j |= 1 << perm[q]
        permuted[j] = p
    return float(np.abs(permuted - probs).max()) < tol


def exploit_symmetry(subsets, group, c: Circuit | None = None) -> dict[tuple, list[tuple[tuple, tuple]]]:
    """Group subsets into orbits under the supplied qubit permutations.

    Returns ``{representative: [(member, perm), ...]}`` where ``perm`` maps the
    representative onto the member. The group is closed under composition
    before use; each generator is spot-checked on ``c`` when given.
    """
    gens = [tuple(p) for p in group]
    if c is not None:
        for p in gens:
            if not check_automorphism(c, p):
                raise PlanError(f"permutation {p} is not a symmetry of the circuit")
    n = len(gens[0]) if gens else 0
    elems = {tuple(range(n))} if gens else set()
    frontier = list(elems)
    while frontier:
        a = frontier.pop()
        for g in gens:
            comp = tuple(g[a[q]] for q in range(n))
            if comp not in elems:
                elems.add(comp)
                frontier.append(comp)
    elems = sorted(elems)
    orbits: dict[tuple, list] = {}
    seen = set()
    for sub in sorted(tuple(sorted(x)) for x in subsets):
        if sub in seen:
            continue
        members = []
        for p in elems or [None]:
            img = sub if p is None else _apply_perm(sub, p)
            if img in {tuple(sorted(x)) for x in subsets} and img not in seen:
                seen.add(img)
                members.append((img, p if p is not None else tuple(range(max(sub) + 1))))
        orbits[sub] = members
    return orbits


def permute_local_dist(dist: dict, rep, member, perm) -> dict:
    """Carry a representative's local distribution over to a symmetric subset."""
    s = len(rep)
    out = {}
    for key, p in dist.items():
        bits = {perm[q]: key[s - 1 - k] for k, q in enumerate(rep)}
        new = "".join(bits[q] for q in reversed(member))
        out[new] = out.get(new, 0.0) + p
    return out


# ---- device payloads for one checked segment -----------------------------------

def copy_context(plan: SubsetPlan, seg_index: int, nm: sim.NoiseModel | None, tracked: bool, prune: bool = True) -> CopyContext:
    """Prefix and payload actually sent to the device for one checked segment.

    With ``prune`` the payload keeps only window ops in the causal cone of the
    subset at the segment end, and the prefix only ops in the cone of the
    wires the payload reads. A tracked prefix never touches the subset (its
    state comes from classical simulation).
    """
    c, subset = plan.circuit, plan.subset
    n = c.num_qubits
    seg = plan.segments[seg_index]
    window = list(c.ops[seg.start:seg.end + 1])
    if prune:
        window = [window[i] for i in prune_indices(Circuit(n, tuple(window)), subset)]
    before = list(c.ops[:seg.start])
    if tracked:
        before = [g for g in before if not set(g.qubits) & set(subset)]
    if prune:
        reads = set(subset) | {q for g in window for q in g.qubits}
        before = [before[i] for i in prune_indices(Circuit(n, tuple(before)), reads)]
    return CopyContext(n, tuple(before), tuple(window), tuple(subset), nm)
