"""Noisy execution backends, readout confusion, expectations and fidelity.

Two backends are provided: a dense density-matrix simulator (exact, used as
the oracle for everything else) and a Pauli-trajectory statevector sampler for
larger registers. Readout error is always a classical bit-flip applied after
an ideal projective measurement.
"""

from __future__ import annotations

import json
import math
from collections import Counter, defaultdict
from dataclasses import dataclass, field

import numpy as np

from .circuit import Circuit, Gate, gate_unitary
from .pauli import PAULI_MATRICES, PauliString

EXACT_LIMIT = 12

Distribution = dict  # bitstring -> probability, qubit 0 rightmost
Counts = dict  # bitstring -> int


class SimulationError(ValueError):
    pass


# ---- noise model -------------------------------------------------------------

@dataclass
class NoiseModel:
    """Depolarizing gate noise plus classical readout flips.

    ``readout`` is either one ``(P(1|0), P(0|1))`` pair applied to every qubit
    or a per-qubit list of pairs. ``overrides`` maps a qubit to a dict with any
    of ``p1``, ``p2`` and ``readout``; the error of a two-qubit gate is the mean
    of the ``p2`` values of its qubits.
    """

    p1: float = 0.0
    p2: float = 0.0
    readout: tuple | list = (0.0, 0.0)
    overrides: dict = field(default_factory=dict)
    relaxation: dict | None = None  # {"t1", "t2", "time_1q", "time_2q"}, same time units

    def __post_init__(self):
        probs = [self.p1, self.p2]
        for ov in self.overrides.values():
            probs += [ov.get("p1", 0.0), ov.get("p2", 0.0), *ov.get("readout", (0.0, 0.0))]
        if self._per_qubit_readout():
            probs += [p for pair in self.readout for p in pair]
        else:
            probs += list(self.readout)
        if any(not 0.0 <= p <= 1.0 for p in probs):
            raise ValueError("noise probabilities must lie in [0, 1]")
        self.overrides = {int(k): dict(v) for k, v in self.overrides.items()}

    def _per_qubit_readout(self) -> bool:
        return len(self.readout) > 0 and isinstance(self.readout[0], (list, tuple))

    @classmethod
    def ideal(cls) -> "NoiseModel":
        return cls()

    @classmethod
    def uniform(cls, p1=0.0, p2=0.0, readout=0.0) -> "NoiseModel":
        return cls(p1, p2, (readout, readout))

    def qubit_p1(self, q: int) -> float:
        return self.overrides.get(q, {}).get("p1", self.p1)

    def qubit_p2(self, q: int) -> float:
        return self.overrides.get(q, {}).get("p2", self.p2)

    def gate_error(self, g: Gate) -> float:
        if g.num_qubits == 1:
            return self.qubit_p1(g.qubits[0])
        return float(np.mean([self.qubit_p2(q) for q in g.qubits]))

    def readout_pair(self, q: int) -> tuple[float, float]:
        if q in self.overrides and "readout" in self.overrides[q]:
            return tuple(self.overrides[q]["readout"])
        if self._per_qubit_readout():
            return tuple(self.readout[q]) if q < len(self.readout) else (0.0, 0.0)
        return tuple(self.readout)

    def is_noiseless(self) -> bool:
        return self.gate_noiseless() and self.readout_noiseless()

    def gate_noiseless(self) -> bool:
        return (
            self.p1 == 0 and self.p2 == 0 and not self.relaxation
            and all(v.get("p1", 0) == 0 and v.get("p2", 0) == 0 for v in self.overrides.values())
        )

    def readout_noiseless(self, qubits=None) -> bool:
        qubits = range(64) if qubits is None else qubits
        return all(max(self.readout_pair(q)) == 0 for q in qubits)

    def without_readout(self) -> "NoiseModel":
        ov = {q: {k: v for k, v in d.items() if k != "readout"} for q, d in self.overrides.items()}
        return NoiseModel(self.p1, self.p2, (0.0, 0.0), ov, self.relaxation)

    def remapped(self, mapping) -> "NoiseModel":
        """Logical view of a device: logical qubit ``q`` sits on physical ``mapping[q]``."""
        ov = {}
        for q, phys in enumerate(mapping):
            ov[q] = {"p1": self.qubit_p1(phys), "p2": self.qubit_p2(phys), "readout": self.readout_pair(phys)}
        return NoiseModel(self.p1, self.p2, (0.0, 0.0), ov, self.relaxation)

    def to_dict(self) -> dict:
        return {
            "p1": self.p1,
            "p2": self.p2,
            "readout": [list(p) for p in self.readout] if self._per_qubit_readout() else list(self.readout),
            "overrides": {str(q): {k: (list(v) if isinstance(v, tuple) else v) for k, v in d.items()}
                          for q, d in self.overrides.items()},
            "relaxation": self.relaxation,
            "seed_policy": "explicit",
        }

    @classmethod
    def from_dict(cls, d: dict) -> "NoiseModel":
        ro = d.get("readout", (0.0, 0.0))
        if ro and isinstance(ro[0], (list, tuple)):
            ro = [tuple(p) for p in ro]
        else:
            ro = tuple(ro)
        ov = {int(q): {k: (tuple(v) if isinstance(v, list) else v) for k, v in o.items()}
              for q, o in d.get("overrides", {}).items()}
        return cls(d.get("p1", 0.0), d.get("p2", 0.0), ro, ov, d.get("relaxation"))

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "NoiseModel":
        return cls.from_dict(json.loads(text))


# ---- density-matrix kernels --------------------------------------------------
#
# A density matrix over n qubits is viewed as a tensor with 2n axes (rows then
# columns); qubit q lives on row axis n-1-q and column axis 2n-1-q.

def _axis(n: int, q: int) -> int:
    return n - 1 - q


def apply_unitary_dm(rho: np.ndarray, u: np.ndarray, qubits, n: int) -> np.ndarray:
    k = len(qubits)
    t = rho.reshape([2] * (2 * n))
    g = u.reshape([2] * (2 * k))
    rows = [_axis(n, q) for q in qubits]
    cols = [n + a for a in rows]
    t = np.tensordot(g, t, axes=(list(range(k, 2 * k)), rows))
    t = np.moveaxis(t, list(range(k)), rows)
    t = np.tensordot(g.conj(), t, axes=(list(range(k, 2 * k)), cols))
    t = np.moveaxis(t, list(range(k)), cols)
    return t.reshape(2**n, 2**n)


def apply_kraus_dm(rho: np.ndarray, kraus, qubits, n: int) -> np.ndarray:
    return sum(apply_unitary_dm(rho, k, qubits, n) for k in kraus)


def _trace_replace(t: np.ndarray, n: int, q: int) -> np.ndarray:
    """``tr_q(rho) (x) I/2`` on tensor form."""
    r, c = _axis(n, q), n + _axis(n, q)
    t = np.moveaxis(t, (r, c), (-2, -1))
    tr = t[..., 0, 0] + t[..., 1, 1]
    out = np.zeros_like(t)
    out[..., 0, 0] = tr / 2
    out[..., 1, 1] = tr / 2
    return np.moveaxis(out, (-2, -1), (r, c))


def depolarize_dm(rho: np.ndarray, qubits, p: float, n: int) -> np.ndarray:
    """``rho -> (1-p) rho + p (I/2^k (x) tr_Q rho)`` on the qubits ``Q``."""
    if p == 0:
        return rho
    t = rho.reshape([2] * (2 * n))
    mixed = t
    for q in qubits:
        mixed = _trace_replace(mixed, n, q)
    return ((1 - p) * t + p * mixed).reshape(2**n, 2**n)


def pauli_channel_dm(rho: np.ndarray, terms, n: int) -> np.ndarray:
    """Apply ``sum_k p_k P_k rho P_k`` for ``terms = [(p_k, PauliString), ...]``."""
    out = np.zeros_like(rho)
    for prob, pauli in terms:
        if prob == 0:
            continue
        sub = pauli.support
        if not sub:
            out += prob * rho
            continue
        mats = [PAULI_MATRICES[pauli.letters[q]] for q in sub]
        cur = rho
        for q, m in zip(sub, mats):
            cur = apply_unitary_dm(cur, m, (q,), n)
        out += prob * cur
    return out


def _relaxation_kraus(t1: float, t2: float, dt: float) -> list[np.ndarray]:
    gamma = 1 - math.exp(-dt / t1) if t1 > 0 else 0.0
    t_phi = 1 / max(1 / t2 - 1 / (2 * t1), 1e-300) if t2 > 0 else math.inf
    lam = 1 - math.exp(-dt / t_phi) if math.isfinite(t_phi) else 0.0
    ad = [np.array([[1, 0], [0, math.sqrt(1 - gamma)]]), np.array([[0, math.sqrt(gamma)], [0, 0]])]
    pd = [np.array([[1, 0], [0, math.sqrt(1 - lam)]]), np.array([[0, 0], [0, math.sqrt(lam)]])]
    return [a @ b for a in ad for b in pd]


def partial_trace(rho: np.ndarray, keep, n: int) -> np.ndarray:
    """Reduced state on ``keep``; bit ``k`` of the result index is ``keep[k]``."""
    keep = list(keep)
    t = rho.reshape([2] * (2 * n))
    drop = [q for q in range(n) if q not in keep]
    # trace dropped qubits, highest axis first so earlier indices stay valid
    letters = list(range(2 * n))
    for q in drop:
        letters[n + _axis(n, q)] = letters[_axis(n, q)]
    out_rows = [_axis(n, q) for q in reversed(keep)]
    out = out_rows + [n + a for a in out_rows]
    res = np.einsum(t, letters, out)
    m = len(keep)
    return res.reshape(2**m, 2**m)


def apply_gate_dm(rho: np.ndarray, g: Gate, n: int, nm: NoiseModel | None) -> np.ndarray:
    rho = apply_unitary_dm(rho, gate_unitary(g), g.qubits, n)
    if nm is not None:
        rho = depolarize_dm(rho, g.qubits, nm.gate_error(g), n)
        if nm.relaxation:
            rx = nm.relaxation
            dt = rx["time_1q"] if g.num_qubits == 1 else rx["time_2q"]
            kraus = _relaxation_kraus(rx["t1"], rx["t2"], dt)
            for q in g.qubits:
                rho = apply_kraus_dm(rho, kraus, (q,), n)
    return rho


def zero_state_dm(n: int) -> np.ndarray:
    rho = np.zeros((2**n, 2**n), dtype=complex)
    rho[0, 0] = 1.0
    return rho


def run_dm(rho: np.ndarray, ops, n: int, nm: NoiseModel | None) -> np.ndarray:
    for g in ops:
        rho = apply_gate_dm(rho, g, n, nm)
    return rho


def simulate_exact(
    c: Circuit,
    nm: NoiseModel | None = None,
    initial: np.ndarray | None = None,
    limit: int = EXACT_LIMIT,
) -> np.ndarray:
    """Final density matrix of ``c``: each gate's unitary followed by its depolarizing channel."""
    if c.num_qubits > limit:
        raise SimulationError(
            f"{c.num_qubits} qubits exceeds the exact limit of {limit}; use sample() instead"
        )
    rho = zero_state_dm(c.num_qubits) if initial is None else np.array(initial, dtype=complex)
    return run_dm(rho, c.ops, c.num_qubits, nm)


# ---- distributions -----------------------------------------------------------

def probs_to_dist(probs: np.ndarray, n: int, cutoff: float = 0.0) -> Distribution:
    return {format(i, f"0{n}b"): float(p) for i, p in enumerate(probs) if p > cutoff}


def dist_to_probs(d: Distribution, n: int | None = None) -> np.ndarray:
    n = len(next(iter(d))) if n is None else n
    out = np.zeros(2**n)
    for k, v in d.items():
        out[int(k, 2)] = v
    return out


def measured_probs(rho: np.ndarray, n: int, qubits=None) -> np.ndarray:
    """Z-basis probabilities of ``qubits`` (bit k of the index is ``qubits[k]``)."""
    qubits = list(range(n)) if qubits is None else list(qubits)
    if qubits == list(range(n)):
        return np.clip(np.real(np.diag(rho)), 0, None)
    return np.clip(np.real(np.diag(partial_trace(rho, qubits, n))), 0, None)


def confusion_matrix(pair) -> np.ndarray:
    """``A[read, true]`` for one bit with ``pair = (P(1|0), P(0|1))``."""
    p01, p10 = pair
    return np.array([[1 - p01, p10], [p01, 1 - p10]])


def apply_confusion(probs: np.ndarray, pairs) -> np.ndarray:
    """Independent per-bit confusion on a probability vector; ``pairs[k]`` acts on bit k."""
    m = len(pairs)
    t = probs.reshape([2] * m) if m else probs
    for k, pair in enumerate(pairs):
        if max(pair) == 0:
            continue
        ax = m - 1 - k
        t = np.moveaxis(np.tensordot(confusion_matrix(pair), t, axes=([1], [ax])), 0, ax)
    return t.reshape(-1)


def readout_channel(d: Distribution, nm: NoiseModel, qubits=None) -> Distribution:
    """Convolve ``d`` with per-qubit bit-flip confusion.

    Bit ``k`` of each key (counted from the right) is read on qubit
    ``qubits[k]`` (default: qubit ``k``).
    """
    n = len(next(iter(d)))
    qubits = list(range(n)) if qubits is None else list(qubits)
    out = apply_confusion(dist_to_probs(d, n), [nm.readout_pair(q) for q in qubits])
    return probs_to_dist(out / out.sum(), n)


def normalize(d: Distribution) -> Distribution:
    total = sum(d.values())
    return {k: v / total for k, v in d.items()}


def counts_to_dist(counts: Counts) -> Distribution:
    return normalize({k: float(v) for k, v in counts.items() if v})


def noisy_distribution(c: Circuit, nm: NoiseModel, qubits=None) -> Distribution:
    """Exact output distribution of the measured qubits including readout error."""
    qubits = list(c.measured) if qubits is None else list(qubits)
    rho = simulate_exact(c, nm)
    probs = measured_probs(rho, c.num_qubits, qubits)
    probs = apply_confusion(probs, [nm.readout_pair(q) for q in qubits])
    return probs_to_dist(probs / probs.sum(), len(qubits))


def ideal_distribution(c: Circuit, qubits=None) -> Distribution:
    qubits = list(c.measured) if qubits is None else list(qubits)
    psi = statevector(c)
    probs = np.abs(psi) ** 2
    if qubits != list(range(c.num_qubits)):
        probs = _marginal_probs(probs, c.num_qubits, qubits)
    return probs_to_dist(probs, len(qubits), cutoff=1e-15)


def _marginal_probs(probs: np.ndarray, n: int, qubits) -> np.ndarray:
    t = probs.reshape([2] * n)
    drop = tuple(_axis(n, q) for q in range(n) if q not in qubits)
    t = t.sum(axis=drop) if drop else t
    kept = sorted(qubits, reverse=True)  # remaining axes in descending qubit order
    order = [kept.index(q) for q in reversed(list(qubits))]
    return np.transpose(t, order).reshape(-1)


def sample_distribution(d: Distribution, shots: int, rng: np.random.Generator) -> Counts:
    keys = sorted(d)
    p = np.array([d[k] for k in keys], dtype=float)
    draws = rng.multinomial(shots, p / p.sum())
    return {k: int(v) for k, v in zip(keys, draws) if v}


# ---- statevector + trajectory sampler ---------------------------------------

def apply_unitary_sv(psi: np.ndarray, u: np.ndarray, qubits, n: int) -> np.ndarray:
    k = len(qubits)
    t = psi.reshape([2] * n)
    axes = [_axis(n, q) for q in qubits]
    t = np.tensordot(u.reshape([2] * (2 * k)), t, axes=(list(range(k, 2 * k)), axes))
    return np.moveaxis(t, list(range(k)), axes).reshape(-1)


def statevector(c: Circuit) -> np.ndarray:
    psi = np.zeros(2**c.num_qubits, dtype=complex)
    psi[0] = 1.0
    for g in c.ops:
        psi = apply_unitary_sv(psi, gate_unitary(g), g.qubits, c.num_qubits)
    return psi


def _non_identity_paulis(k: int) -> list[list[str]]:
    from itertools import product
    return [list(t) for t in product("IXYZ", repeat=k) if any(ch != "I" for ch in t)]


def sample(c: Circuit, nm: NoiseModel, shots: int, seed: int) -> Counts:
    """Pauli-trajectory sampling of the measured qubits.

    Each noisy gate inserts, with probability ``p (4^k - 1) / 4^k``, a uniformly
    random non-identity Pauli on its support; this is the trajectory unravelling
    of the depolarizing channel used by :func:`simulate_exact`. Shots sharing an
    error pattern share one statevector evolution.
    """
    if shots <= 0:
        raise ValueError("shots must be positive")
    if nm.relaxation:
        raise SimulationError("the trajectory sampler does not support relaxation; use simulate_exact")
    rng = np.random.default_rng(seed)
    n = c.num_qubits
    ops = list(c.ops)
    patterns: dict[int, list[tuple[int, int]]] = defaultdict(list)
    for gi, g in enumerate(ops):
        p = nm.gate_error(g)
        if p == 0:
            continue
        k = g.num_qubits
        p_err = p * (4**k - 1) / 4**k
        hit = rng.binomial(shots, p_err)
        if hit == 0:
            continue
        shot_ids = rng.choice(shots, size=hit, replace=False)
        which = rng.integers(0, 4**k - 1, size=hit)
        for s, w in zip(shot_ids.tolist(), which.tolist()):
            patterns[s].append((gi, w))

    groups = Counter(tuple(v) for v in patterns.values())
    clean = shots - len(patterns)
    if clean:
        groups[()] += clean

    unitaries = [gate_unitary(g) for g in ops]
    cache_ok = (2**n) * (len(ops) + 1) <= 5e7
    clean_states = None
    if cache_ok:
        psi = np.zeros(2**n, dtype=complex)
        psi[0] = 1
        clean_states = [psi]
        for g, u in zip(ops, unitaries):
            psi = apply_unitary_sv(psi, u, g.qubits, n)
            clean_states.append(psi)

    paulis = {1: _non_identity_paulis(1), 2: _non_identity_paulis(2)}
    meas = list(c.measured)
    outcomes = []
    for pattern in sorted(groups):
        count = groups[pattern]
        errs = dict(pattern)
        start = pattern[0][0] if pattern else len(ops)
        if clean_states is not None:
            psi = clean_states[start].copy()
            first = start
        else:
            psi = np.zeros(2**n, dtype=complex)
            psi[0] = 1
            first = 0
        for gi in range(first, len(ops)):
            g = ops[gi]
            psi = apply_unitary_sv(psi, unitaries[gi], g.qubits, n)
            if gi in errs:
                letters = paulis[g.num_qubits][errs[gi]]
                for q, ch in zip(g.qubits, letters):
                    if ch != "I":
                        psi = apply_unitary_sv(psi, PAULI_MATRICES[ch], (q,), n)
        probs = np.abs(psi) ** 2
        if meas != list(range(n)):
            probs = _marginal_probs(probs, n, meas)
        probs = probs / probs.sum()
        draws = rng.multinomial(count, probs)
        idx = np.repeat(np.arange(len(probs)), draws)
        outcomes.append(idx)
    idx = np.concatenate(outcomes)
    # classical readout flips, bit k belongs to meas[k]
    m = len(meas)
    for k, q in enumerate(meas):
        p01, p10 = nm.readout_pair(q)
        if p01 == 0 and p10 == 0:
            continue
        bit = (idx >> k) & 1
        u = rng.random(idx.shape[0])
        flip = np.where(bit == 0, u < p01, u < p10)
        idx = idx ^ (flip.astype(np.int64) << k)
    tally = np.bincount(idx, minlength=2**m)
    return {format(i, f"0{m}b"): int(v) for i, v in enumerate(tally) if v}


# ---- observables and metrics -------------------------------------------------

def expectation(state, obs: PauliString) -> float:
    """``tr(rho O)`` for a density matrix, or the parity average for a Z-basis distribution."""
    if isinstance(state, dict):
        if any(ch in "XY" for ch in obs.letters):
            raise ValueError("X/Y observable against a Z-basis distribution; rotate the basis first")
        zs = [q for q, ch in enumerate(obs.letters) if ch == "Z"]
        total = 0.0
        for key, p in state.items():
            parity = sum(key[-1 - q] == "1" for q in zs) % 2
            total += p * (-1 if parity else 1)
        val = obs.phase * total
    else:
        val = np.trace(np.asarray(state) @ obs.to_matrix())
    if abs(np.imag(val)) > 1e-10:
        raise ValueError(f"observable {obs} has a non-real expectation {val}")
    return float(np.real(val))


def hellinger_fidelity(p: Distribution, q: Distribution) -> float:
    """``(sum_k sqrt(p_k q_k))**2`` over the union of outcomes."""
    s = sum(math.sqrt(max(p[k], 0.0) * max(q[k], 0.0)) for k in p.keys() & q.keys())
    return min(1.0, s * s)
