"""Phased Pauli strings and single-qubit Pauli algebra.

Letters are stored in qubit order (``letters[q]`` acts on qubit ``q``).
Text labels follow the bitstring convention used everywhere else in the
package: qubit 0 is the rightmost character, so ``PauliString.from_label("ZX")``
has ``X`` on qubit 0 and ``Z`` on qubit 1.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import reduce
from itertools import product

import numpy as np

I2 = np.eye(2, dtype=complex)
X2 = np.array([[0, 1], [1, 0]], dtype=complex)
Y2 = np.array([[0, -1j], [1j, 0]], dtype=complex)
Z2 = np.array([[1, 0], [0, -1]], dtype=complex)

PAULI_MATRICES = {"I": I2, "X": X2, "Y": Y2, "Z": Z2}

_PHASES = (1, 1j, -1, -1j)

# single-letter product table: (a, b) -> (power of i, letter)
_MUL = {
    ("I", "I"): (0, "I"), ("I", "X"): (0, "X"), ("I", "Y"): (0, "Y"), ("I", "Z"): (0, "Z"),
    ("X", "I"): (0, "X"), ("X", "X"): (0, "I"), ("X", "Y"): (1, "Z"), ("X", "Z"): (3, "Y"),
    ("Y", "I"): (0, "Y"), ("Y", "X"): (3, "Z"), ("Y", "Y"): (0, "I"), ("Y", "Z"): (1, "X"),
    ("Z", "I"): (0, "Z"), ("Z", "X"): (1, "Y"), ("Z", "Y"): (3, "X"), ("Z", "Z"): (0, "I"),
}


def _phase_power(phase) -> int:
    for k, ph in enumerate(_PHASES):
        if abs(complex(phase) - ph) < 1e-12:
            return k
    raise ValueError(f"phase {phase!r} is not in {{+1, -1, +i, -i}}")


@dataclass(frozen=True)
class PauliString:
    """An element ``i**power * P_{n-1} (x) ... (x) P_0`` of the n-qubit Pauli group."""

    letters: str
    power: int = 0

    def __post_init__(self):
        if any(ch not in "IXYZ" for ch in self.letters):
            raise ValueError(f"invalid Pauli letters {self.letters!r}")
        object.__setattr__(self, "power", self.power % 4)

    @classmethod
    def from_label(cls, label: str, phase=1) -> "PauliString":
        return cls(label[::-1], _phase_power(phase))

    @classmethod
    def single(cls, n: int, qubit: int, letter: str, phase=1) -> "PauliString":
        letters = ["I"] * n
        letters[qubit] = letter
        return cls("".join(letters), _phase_power(phase))

    @classmethod
    def identity(cls, n: int) -> "PauliString":
        return cls("I" * n)

    @property
    def phase(self) -> complex:
        return _PHASES[self.power]

    @property
    def num_qubits(self) -> int:
        return len(self.letters)

    @property
    def label(self) -> str:
        return self.letters[::-1]

    @property
    def support(self) -> tuple[int, ...]:
        return tuple(q for q, ch in enumerate(self.letters) if ch != "I")

    @property
    def is_hermitian(self) -> bool:
        return self.power in (0, 2)

    def letter(self, qubit: int) -> str:
        return self.letters[qubit]

    def __mul__(self, other: "PauliString") -> "PauliString":
        return pauli_multiply(self, other)

    def __neg__(self) -> "PauliString":
        return PauliString(self.letters, self.power + 2)

    def dagger(self) -> "PauliString":
        return PauliString(self.letters, -self.power)

    def commutes_with(self, other: "PauliString") -> bool:
        if self.num_qubits != other.num_qubits:
            raise ValueError("Pauli strings act on different register sizes")
        clashes = sum(
            1 for a, b in zip(self.letters, other.letters) if a != "I" and b != "I" and a != b
        )
        return clashes % 2 == 0

    def restrict(self, qubits) -> "PauliString":
        """Letters on ``qubits`` (in the given order), phase kept."""
        return PauliString("".join(self.letters[q] for q in qubits), self.power)

    def to_matrix(self) -> np.ndarray:
        # kron from the most significant qubit down so that bit q of the
        # matrix index is qubit q
        mats = [PAULI_MATRICES[ch] for ch in reversed(self.letters)] or [np.ones((1, 1))]
        return self.phase * reduce(np.kron, mats)

    def __str__(self) -> str:
        sign = {0: "+", 1: "+i", 2: "-", 3: "-i"}[self.power]
        return f"{sign}{self.label}"


def pauli_multiply(a: PauliString, b: PauliString) -> PauliString:
    """Group product ``a * b`` with the accumulated phase."""
    if a.num_qubits != b.num_qubits:
        raise ValueError(
            f"cannot multiply Pauli strings of length {a.num_qubits} and {b.num_qubits}"
        )
    power = a.power + b.power
    letters = []
    for x, y in zip(a.letters, b.letters):
        k, ch = _MUL[(x, y)]
        power += k
        letters.append(ch)
    return PauliString("".join(letters), power)


def all_paulis(n: int, include_identity: bool = True) -> list[PauliString]:
    """All 4**n unphased Pauli strings in a fixed (lexicographic, qubit-0-first) order."""
    out = [PauliString("".join(t)) for t in product("IXYZ", repeat=n)]
    if not include_identity:
        out = out[1:]
    return out


def pauli_decompose(mat: np.ndarray, n: int) -> dict[str, complex]:
    """Coefficients ``c_P = tr(P M) / 2**n`` keyed by qubit-order letters; zeros dropped."""
    dim = 2**n
    coeffs = {}
    for p in all_paulis(n):
        c = np.trace(p.to_matrix() @ mat) / dim
        if abs(c) > 1e-13:
            coeffs[p.letters] = complex(c)
    return coeffs
