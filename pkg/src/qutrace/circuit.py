"""Circuit intermediate representation, gate matrices and commutation checks."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from functools import reduce

import numpy as np

from .pauli import I2, X2, Y2, Z2, PauliString

ONE_QUBIT = {"H", "X", "Y", "Z", "S", "Sdg", "RX", "RY", "RZ", "U1Q"}
TWO_QUBIT = {"CP", "CX", "CZ", "SWAP", "CU1Q"}
GATE_KINDS = ONE_QUBIT | TWO_QUBIT
N_PARAMS = {"RX": 1, "RY": 1, "RZ": 1, "CP": 1}
MATRIX_KINDS = {"U1Q", "CU1Q"}
DIAGONAL_KINDS = {"Z", "S", "Sdg", "RZ", "CZ", "CP"}

EXACT_VERIFY_LIMIT = 10


class CircuitError(ValueError):
    pass


def _as_matrix_tuple(m) -> tuple:
    arr = np.asarray(m, dtype=complex)
    if arr.shape != (2, 2):
        raise CircuitError(f"expected a 2x2 matrix, got shape {arr.shape}")
    return tuple(tuple(complex(v) for v in row) for row in arr)


@dataclass(frozen=True)
class Gate:
    kind: str
    qubits: tuple[int, ...]
    params: tuple[float, ...] = ()
    matrix: tuple | None = None

    def __post_init__(self):
        if self.kind not in GATE_KINDS:
            raise CircuitError(f"unknown gate kind {self.kind!r}")
        object.__setattr__(self, "qubits", tuple(int(q) for q in self.qubits))
        object.__setattr__(self, "params", tuple(float(p) for p in self.params))
        arity = 1 if self.kind in ONE_QUBIT else 2
        if len(self.qubits) != arity:
            raise CircuitError(f"{self.kind} acts on {arity} qubit(s), got {self.qubits}")
        if len(set(self.qubits)) != len(self.qubits):
            raise CircuitError(f"repeated qubit in {self.kind}{self.qubits}")
        if len(self.params) != N_PARAMS.get(self.kind, 0):
            raise CircuitError(f"{self.kind} takes {N_PARAMS.get(self.kind, 0)} angle(s)")
        if self.kind in MATRIX_KINDS:
            if self.matrix is None:
                raise CircuitError(f"{self.kind} needs an explicit 2x2 matrix")
            object.__setattr__(self, "matrix", _as_matrix_tuple(self.matrix))
        elif self.matrix is not None:
            raise CircuitError(f"{self.kind} does not carry a matrix")

    @property
    def num_qubits(self) -> int:
        return len(self.qubits)

    @property
    def is_diagonal(self) -> bool:
        if self.kind in DIAGONAL_KINDS:
            return True
        if self.kind in MATRIX_KINDS:
            m = np.array(self.matrix)
            return abs(m[0, 1]) < 1e-14 and abs(m[1, 0]) < 1e-14
        return False

    def unitary(self) -> np.ndarray:
        return gate_unitary(self)

    def inverse(self) -> "Gate":
        if self.kind in ("RX", "RY", "RZ", "CP"):
            return Gate(self.kind, self.qubits, (-self.params[0],))
        if self.kind == "S":
            return Gate("Sdg", self.qubits)
        if self.kind == "Sdg":
            return Gate("S", self.qubits)
        if self.kind in MATRIX_KINDS:
            return Gate(self.kind, self.qubits, matrix=np.array(self.matrix).conj().T)
        return self

    def remapped(self, mapping) -> "Gate":
        return Gate(self.kind, tuple(mapping[q] for q in self.qubits), self.params, self.matrix)

    def to_dict(self) -> dict:
        d = {"kind": self.kind, "qubits": list(self.qubits), "params": list(self.params)}
        if self.matrix is not None:
            d["matrix"] = [[v.real, v.imag] for row in self.matrix for v in row]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "Gate":
        matrix = None
        if d.get("matrix") is not None:
            flat = [complex(re, im) for re, im in d["matrix"]]
            matrix = np.array(flat).reshape(2, 2)
        return cls(d["kind"], tuple(d["qubits"]), tuple(d.get("params", ())), matrix)

    def __str__(self) -> str:
        args = f"({', '.join(f'{p:.4g}' for p in self.params)})" if self.params else ""
        return f"{self.kind}{args}{list(self.qubits)}"


def _rx(t):
    c, s = np.cos(t / 2), np.sin(t / 2)
    return np.array([[c, -1j * s], [-1j * s, c]])


def _ry(t):
    c, s = np.cos(t / 2), np.sin(t / 2)
    return np.array([[c, -s], [s, c]], dtype=complex)


def _rz(t):
    return np.diag([np.exp(-0.5j * t), np.exp(0.5j * t)])


_FIXED = {
    "H": np.array([[1, 1], [1, -1]], dtype=complex) / np.sqrt(2),
    "X": X2,
    "Y": Y2,
    "Z": Z2,
    "S": np.diag([1, 1j]),
    "Sdg": np.diag([1, -1j]),
    "CX": np.array([[1, 0, 0, 0], [0, 1, 0, 0], [0, 0, 0, 1], [0, 0, 1, 0]], dtype=complex),
    "CZ": np.diag([1, 1, 1, -1]).astype(complex),
    "SWAP": np.array([[1, 0, 0, 0], [0, 0, 1, 0], [0, 1, 0, 0], [0, 0, 0, 1]], dtype=complex),
}


def gate_unitary(g: Gate) -> np.ndarray:
    """Dense unitary of ``g``.

    Two-qubit matrices are written in the basis ``|q_first q_second>`` with the
    first listed qubit as the most significant bit (control first for CX, CP
    and CU1Q).
    """
    if g.kind in _FIXED:
        return _FIXED[g.kind].copy()
    if g.kind == "RX":
        return _rx(g.params[0])
    if g.kind == "RY":
        return _ry(g.params[0])
    if g.kind == "RZ":
        return _rz(g.params[0])
    if g.kind == "CP":
        return np.diag([1, 1, 1, np.exp(1j * g.params[0])])
    m = np.array(g.matrix, dtype=complex)
    if g.kind == "U1Q":
        return m
    out = np.eye(4, dtype=complex)
    out[2:, 2:] = m
    return out


def embed(mat: np.ndarray, qubits, support) -> np.ndarray:
    """Lift ``mat`` acting on ``qubits`` (first = most significant) to ``support``.

    The returned matrix uses the index convention of the package: bit ``k`` of
    the index is ``support[k]``.
    """
    support = list(support)
    n = len(support)
    k = len(qubits)
    full = np.eye(2**n, dtype=complex).reshape([2] * (2 * n))
    # tensor axis of support[k] is n-1-k (big-endian reshape)
    axes = [n - 1 - support.index(q) for q in qubits]
    g = mat.reshape([2] * (2 * k))
    full = np.tensordot(g, full, axes=(list(range(k, 2 * k)), axes))
    full = np.moveaxis(full, list(range(k)), axes)
    return full.reshape(2**n, 2**n)


def polar_unitary(m: np.ndarray) -> np.ndarray:
    """Closest unitary to ``m`` (polar projection)."""
    u, _, vh = np.linalg.svd(m)
    return u @ vh


def matrix_power_unitary(m: np.ndarray, k: int) -> np.ndarray:
    """``m ** (2**k)`` by repeated squaring with re-unitarisation on drift."""
    out = np.asarray(m, dtype=complex)
    for _ in range(k):
        out = out @ out
        if np.linalg.norm(out.conj().T @ out - np.eye(len(out))) > 1e-12:
            out = polar_unitary(out)
    return out


Op = Gate | PauliString


def _op_support(op: Op) -> tuple[int, ...]:
    return op.qubits if isinstance(op, Gate) else op.support


def _op_matrix_on(op: Op, support) -> np.ndarray:
    if isinstance(op, Gate):
        return embed(gate_unitary(op), op.qubits, support)
    local = [op.letters[q] for q in support]
    mats = [{"I": I2, "X": X2, "Y": Y2, "Z": Z2}[ch] for ch in reversed(local)]
    return op.phase * reduce(np.kron, mats, np.ones((1, 1)))


def commutes(a: Op, b: Op, tol: float = 1e-10) -> bool:
    """Whether the two operators commute on the union of their supports."""
    if isinstance(a, PauliString) and isinstance(b, PauliString):
        return a.commutes_with(b)
    sa, sb = set(_op_support(a)), set(_op_support(b))
    if not sa & sb:
        return True
    support = sorted(sa | sb)
    ma, mb = _op_matrix_on(a, support), _op_matrix_on(b, support)
    return float(np.linalg.norm(ma @ mb - mb @ ma)) < tol


@dataclass(frozen=True)
class CutPoint:
    qubit: int
    after_op: int


@dataclass(frozen=True)
class Circuit:
    num_qubits: int
    ops: tuple[Gate, ...] = ()
    cut_points: tuple[CutPoint, ...] = ()
    measured: tuple[int, ...] | None = None

    def __post_init__(self):
        if self.num_qubits < 1:
            raise CircuitError("a circuit needs at least one qubit")
        object.__setattr__(self, "ops", tuple(self.ops))
        object.__setattr__(
            self, "cut_points", tuple(c if isinstance(c, CutPoint) else CutPoint(*c) for c in self.cut_points)
        )
        meas = tuple(range(self.num_qubits)) if self.measured is None else tuple(sorted(set(self.measured)))
        object.__setattr__(self, "measured", meas)
        for g in self.ops:
            if max(g.qubits) >= self.num_qubits or min(g.qubits) < 0:
                raise CircuitError(f"{g} is outside a {self.num_qubits}-qubit register")
        for c in self.cut_points:
            if not 0 <= c.qubit < self.num_qubits or not -1 <= c.after_op < len(self.ops):
                raise CircuitError(f"invalid cut point {c}")
        if any(not 0 <= q < self.num_qubits for q in meas):
            raise CircuitError("measured qubit outside register")

    def __len__(self) -> int:
        return len(self.ops)

    def __iter__(self):
        return iter(self.ops)

    def with_ops(self, ops, cut_points=()) -> "Circuit":
        return Circuit(self.num_qubits, tuple(ops), tuple(cut_points), self.measured)

    def with_measured(self, measured) -> "Circuit":
        return Circuit(self.num_qubits, self.ops, self.cut_points, tuple(measured))

    def append(self, *gates: Gate) -> "Circuit":
        return Circuit(self.num_qubits, self.ops + tuple(gates), self.cut_points, self.measured)

    def compose(self, other: "Circuit") -> "Circuit":
        return self.append(*other.ops)

    def inverse(self) -> "Circuit":
        return self.with_ops([g.inverse() for g in reversed(self.ops)])

    @property
    def active_qubits(self) -> tuple[int, ...]:
        return tuple(sorted({q for g in self.ops for q in g.qubits}))

    def two_qubit_count(self) -> int:
        """Two-qubit gate count with CU1Q weighted as 2."""
        return sum(2 if g.kind == "CU1Q" else 1 for g in self.ops if g.num_qubits == 2)

    def unitary(self, support=None, limit: int | None = None) -> np.ndarray:
        support = list(range(self.num_qubits)) if support is None else list(support)
        if limit is not None and len(support) > limit:
            raise CircuitError(f"dense unitary over {len(support)} qubits exceeds limit {limit}")
        u = np.eye(2 ** len(support), dtype=complex)
        for g in self.ops:
            u = embed(gate_unitary(g), g.qubits, support) @ u
        return u

    def to_dict(self) -> dict:
        return {
            "n": self.num_qubits,
            "ops": [g.to_dict() for g in self.ops],
            "cuts": [{"qubit": c.qubit, "after_op": c.after_op} for c in self.cut_points],
            "measured": list(self.measured),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Circuit":
        return cls(
            int(d["n"]),
            tuple(Gate.from_dict(g) for g in d["ops"]),
            tuple(CutPoint(c["qubit"], c["after_op"]) for c in d.get("cuts", [])),
            tuple(d["measured"]) if "measured" in d else None,
        )

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_dict(), **kw)

    @classmethod
    def from_json(cls, text: str) -> "Circuit":
        return cls.from_dict(json.loads(text))

    def __str__(self) -> str:
        return f"Circuit(n={self.num_qubits}, ops=[{', '.join(map(str, self.ops))}])"


def check_condition(
    segment: Circuit,
    c_left: PauliString,
    c_right: PauliString,
    limit: int = EXACT_VERIFY_LIMIT,
    tol: float = 1e-9,
) -> bool:
    """Whether ``C_R U C_L == U`` for the segment's dense unitary ``U``."""
    support = sorted(set(segment.active_qubits) | set(c_left.support) | set(c_right.support))
    if not support:
        return abs(c_left.phase * c_right.phase - 1) < tol
    if len(support) > limit:
        raise CircuitError(
            f"segment spans {len(support)} qubits (limit {limit}); "
            "verify the check per commuting sub-segment instead"
        )
    u = segment.unitary(support)
    lhs = _op_matrix_on(c_right, support) @ u @ _op_matrix_on(c_left, support)
    return float(np.linalg.norm(lhs - u)) < tol


# ---- single-qubit state views ------------------------------------------------

def bloch_to_density(x: float, y: float, z: float) -> np.ndarray:
    return 0.5 * (I2 + x * X2 + y * Y2 + z * Z2)


def density_to_bloch(rho: np.ndarray) -> tuple[float, float, float]:
    return tuple(float(np.real(np.trace(rho @ p))) for p in (X2, Y2, Z2))


@dataclass
class SingleQubitState:
    """2x2 operator on one wire. ``virtual`` marks non-physical operators such as ``Z rho``."""

    matrix: np.ndarray
    virtual: bool = False
    projection: float = 0.0  # radial correction applied during reconstruction

    def __post_init__(self):
        self.matrix = np.asarray(self.matrix, dtype=complex)
        if self.matrix.shape != (2, 2):
            raise ValueError("single-qubit state must be 2x2")
        if not self.virtual:
            if np.linalg.norm(self.matrix - self.matrix.conj().T) > 1e-9:
                raise ValueError("physical state must be Hermitian")
            if abs(np.trace(self.matrix) - 1) > 1e-9:
                raise ValueError("physical state must have unit trace")
            if np.linalg.norm(self.bloch) > 1 + 1e-9:
                raise ValueError("Bloch vector outside the unit ball")

    @classmethod
    def from_bloch(cls, x, y, z) -> "SingleQubitState":
        return cls(bloch_to_density(x, y, z))

    @property
    def bloch(self) -> np.ndarray:
        return np.array(density_to_bloch(self.matrix))


# ---- Pauli propagation -------------------------------------------------------

def conjugate_pauli(g: Gate, p: PauliString, tol: float = 1e-10) -> PauliString | None:
    """``g p g^dagger`` when it is again a (phased) Pauli string, else ``None``."""
    if not set(g.qubits) & set(p.support):
        return p
    local = p.restrict(g.qubits[::-1])  # restrict() keeps qubit order; first listed = most significant
    sub = PauliString(local.letters, 0)
    u = gate_unitary(g)
    m = u @ sub.to_matrix() @ u.conj().T
    k = len(g.qubits)
    for cand in _paulis_on(k):
        c = np.trace(cand.to_matrix().conj().T @ m) / 2**k
        if abs(abs(c) - 1) < tol:
            try:
                ph = _phase_of(c)
            except ValueError:
                return None
            letters = list(p.letters)
            for pos, q in enumerate(g.qubits[::-1]):
                letters[q] = cand.letters[pos]
            return PauliString("".join(letters), p.power + ph)
        if abs(c) > tol:
            return None
    return None


def _phase_of(c) -> int:
    for k, ph in enumerate((1, 1j, -1, -1j)):
        if abs(c - ph) < 1e-9:
            return k
    raise ValueError("non-Pauli phase")


_PAULI_CACHE: dict[int, list[PauliString]] = {}


def _paulis_on(k: int) -> list[PauliString]:
    if k not in _PAULI_CACHE:
        from .pauli import all_paulis
        _PAULI_CACHE[k] = all_paulis(k)
    return _PAULI_CACHE[k]


def propagate_pauli(ops, p: PauliString) -> PauliString | None:
    """Heisenberg-forward image ``U p U^dagger`` through ``ops`` (first op applied first)."""
    for g in ops:
        p = conjugate_pauli(g, p)
        if p is None:
            return None
    return p
