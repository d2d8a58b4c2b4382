"""Virtual Pauli checks on a qubit subset.

A check pair ``(C_L, C_R)`` around a segment ``U`` with ``C_R U C_L = U``
post-selects away every error that anticommutes with ``C_R``. Instead of
running the sandwich with an ancilla, the post-selected expectation is
written as a sum of terms

    term(a, b) = tr( eps(U C_L^a rho C_L^b+ U+) C_R^b+ O C_R^a ),  a, b in {0,1}^s

(numerator with the observable ``O``, denominator with ``O = I``). Each term
is evaluated with prepare-and-measure circuit copies: the input operator
``C_L^a rho C_L^b+`` is expanded in the Pauli basis on the subset and each
Pauli is realised by preparing the four states ``|0>, |1>, |+>, |i>`` with
signed weights. ``term(b, a)`` is the complex conjugate of ``term(a, b)`` so
only one of each off-diagonal pair is emitted.

When the subset's input state is classically known ("tracked") the Pauli
expansion coefficients are computed exactly; otherwise the subset is measured
mid-circuit and the coefficient becomes the measured eigenvalue.
"""

from __future__ import annotations

import itertools
import json
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .circuit import (
    EXACT_VERIFY_LIMIT,
    Circuit,
    Gate,
    SingleQubitState,
    bloch_to_density,
    check_condition,
    gate_unitary,
    propagate_pauli,
)
from .pauli import PAULI_MATRICES, PauliString, all_paulis, pauli_decompose
from . import sim

log = logging.getLogger(__name__)

PREP_LABELS = ("0", "1", "+", "i")
_S2 = 1 / math.sqrt(2)
PREP_VECTORS = {
    "0": np.array([1, 0], dtype=complex),
    "1": np.array([0, 1], dtype=complex),
    "+": np.array([_S2, _S2], dtype=complex),
    "-": np.array([_S2, -_S2], dtype=complex),
    "i": np.array([_S2, 1j * _S2], dtype=complex),
    "-i": np.array([_S2, -1j * _S2], dtype=complex),
}
# gates that prepare each label from |0>, and rotate each basis onto Z
PREP_GATES = {"0": (), "1": ("X",), "+": ("H",), "i": ("H", "S")}
BASIS_GATES = {"Z": (), "X": ("H",), "Y": ("Sdg", "H")}

# Pauli letter as a signed sum of the four preparable projectors
_LETTER_WEIGHTS = {
    "I": {"0": 1, "1": 1},
    "Z": {"0": 1, "1": -1},
    "X": {"+": 2, "0": -1, "1": -1},
    "Y": {"i": 2, "0": -1, "1": -1},
}

TERM_NAMES = {(0, 0): "T5", (1, 0): "T6", (0, 1): "T7", (1, 1): "T8"}


class CheckError(ValueError):
    pass


class PostSelectionError(ValueError):
    pass


def projector(label: str) -> np.ndarray:
    v = PREP_VECTORS[label]
    return np.outer(v, v.conj())


def decompose_operator(a: np.ndarray) -> dict[str, complex]:
    """Weights ``w`` with ``a = sum_l w_l |l><l|`` over ``|0>, |1>, |+>, |i>``.

    ``|->`` and ``|-i>`` never appear: they are eliminated through
    ``|-><-| = |0><0| + |1><1| - |+><+|`` and its Y analogue.
    """
    a = np.asarray(a, dtype=complex)
    tx = np.trace(a @ PAULI_MATRICES["X"])
    ty = np.trace(a @ PAULI_MATRICES["Y"])
    tz = np.trace(a @ PAULI_MATRICES["Z"])
    t = np.trace(a)
    return {
        "0": complex((t - tx - ty + tz) / 2),
        "1": complex((t - tx - ty - tz) / 2),
        "+": complex(tx),
        "i": complex(ty),
    }


@dataclass(frozen=True)
class PrepSpec:
    """Weighted single-qubit preparations ``(label, qubit, weight)``."""

    entries: tuple[tuple[str, int, complex], ...]

    def matrix(self) -> np.ndarray:
        return sum((w * projector(lbl) for lbl, _, w in self.entries), np.zeros((2, 2), dtype=complex))

    @property
    def labels(self) -> tuple[str, ...]:
        return tuple(lbl for lbl, _, _ in self.entries)


def decompose_left_check(letter: str, rho, qubit: int = 0, tol: float = 1e-12) -> PrepSpec:
    """Preparations realising ``P rho`` for a single-qubit check letter ``P`` and a tracked ``rho``."""
    m = rho.matrix if isinstance(rho, SingleQubitState) else np.asarray(rho, dtype=complex)
    if abs(np.trace(m) - 1) > 1e-9:
        raise ValueError("tracked state must have unit trace")
    weights = decompose_operator(PAULI_MATRICES[letter] @ m)
    return PrepSpec(tuple((lbl, qubit, w) for lbl, w in weights.items() if abs(w) > tol))


@dataclass(frozen=True)
class CheckPair:
    """One Pauli check around a segment; both operators act on the full register."""

    c_left: PauliString
    c_right: PauliString
    subset: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "subset", tuple(self.subset))
        for p in (self.c_left, self.c_right):
            if not set(p.support) <= set(self.subset):
                raise CheckError(f"check {p} acts outside the subset {self.subset}")

    @classmethod
    def single(cls, n: int, qubit: int, letter: str = "Z", right: PauliString | None = None) -> "CheckPair":
        left = PauliString.single(n, qubit, letter)
        return cls(left, left if right is None else right, (qubit,))

    def local(self, subset) -> tuple[PauliString, PauliString]:
        return self.c_left.restrict(subset), self.c_right.restrict(subset)

    def to_dict(self) -> dict:
        return {"c_left": str(self.c_left), "c_right": str(self.c_right), "subset": list(self.subset)}


def right_check_for(segment_ops, c_left: PauliString) -> PauliString | None:
    """The ``C_R = U C_L^+ U^+`` matching ``c_left`` when it is a Pauli string."""
    return propagate_pauli(segment_ops, c_left.dagger())


def verify_checks(segment: Circuit, checks, limit: int = EXACT_VERIFY_LIMIT) -> None:
    for chk in checks:
        support = set(segment.active_qubits) | set(chk.c_left.support) | set(chk.c_right.support)
        if len(support) <= limit:
            ok = check_condition(segment, chk.c_left, chk.c_right, limit=limit)
        else:
            ok = right_check_for(segment.ops, chk.c_left) == chk.c_right
        if not ok:
            raise CheckError(
                f"check ({chk.c_left}, {chk.c_right}) violates C_R U C_L = U on segment {segment}"
            )


# ---- copy ensemble -----------------------------------------------------------

@dataclass(frozen=True)
class Contribution:
    """``factor * Re(coeff * E[lambda_mid * parity_final])`` added to ``(tag, observable)``."""

    tag: str
    observable: str  # subset-order letters; all I for the denominator
    mid_pauli: str  # letters whose eigenvalues weight the mid-circuit outcome
    final_pauli: str  # letters whose parity is read at the end
    coeff: complex
    factor: int

    @property
    def value_coeff(self) -> float:
        return self.factor * self.coeff.real


@dataclass(frozen=True)
class CircuitCopy:
    """One prepare-and-measure circuit: optional mid-circuit measurement of the
    subset, re-preparation, the payload, and a final basis measurement."""

    mid: tuple[str, ...] | None
    prep: tuple[str, ...]
    basis: tuple[str, ...]
    contributions: tuple[Contribution, ...]
    payload: Circuit | None = None

    @property
    def key(self):
        return (self.mid or (), self.prep, self.basis)

    @property
    def term_tags(self) -> tuple[str, ...]:
        return tuple(sorted({c.tag for c in self.contributions}))

    @property
    def weight(self) -> complex:
        return complex(sum(c.coeff for c in self.contributions))

    def to_dict(self) -> dict:
        return {
            "mid": list(self.mid) if self.mid else None,
            "prep": list(self.prep),
            "basis": list(self.basis),
            "weight": [self.weight.real, self.weight.imag],
            "term_tag": list(self.term_tags),
            "contributions": [
                {
                    "tag": c.tag, "observable": c.observable, "mid": c.mid_pauli,
                    "final": c.final_pauli, "coeff": [c.coeff.real, c.coeff.imag], "factor": c.factor,
                }
                for c in self.contributions
            ],
        }


@dataclass
class CopyEnsemble:
    subset: tuple[int, ...]
    observables: tuple[str, ...]
    copies: list[CircuitCopy]
    constants: list[Contribution]
    tracked: bool
    checks: tuple[CheckPair, ...] = ()
    segment: Circuit | None = None

    def __len__(self) -> int:
        return len(self.copies)

    def __iter__(self):
        return iter(self.copies)

    @property
    def s(self) -> int:
        return len(self.subset)

    def manifest(self) -> str:
        data = {
            "subset": list(self.subset),
            "tracked": self.tracked,
            "observables": list(self.observables),
            "checks": [c.to_dict() for c in self.checks],
            "payload": self.segment.to_dict() if self.segment is not None else None,
            "copies": [c.to_dict() for c in self.copies],
        }
        return json.dumps(data, sort_keys=True)


def observables_for(bases, s: int) -> tuple[str, ...]:
    """Observable letter strings for requested bases.

    ``bases`` may be ``"all"`` (every non-identity Pauli on the subset), a set
    of single letters (for ``s = 1``) or explicit letter strings.
    """
    if bases == "all":
        return tuple(p.letters for p in all_paulis(s, include_identity=False))
    out = []
    for b in bases:
        if len(b) != s:
            raise ValueError(f"observable {b!r} does not match subset size {s}")
        if set(b) - set("IXYZ") or set(b) == {"I"}:
            raise ValueError(f"invalid observable {b!r}")
        out.append(b)
    return tuple(sorted(set(out)))


def _pauli_power(p: PauliString, a) -> PauliString:
    return p if a else PauliString.identity(p.num_qubits)


def _ordered_product(ps) -> PauliString:
    out = None
    for p in ps:
        out = p if out is None else out * p
    return out


def build_copies(
    segment: Circuit | None,
    checks,
    rho_in: np.ndarray | None = None,
    observables=("Z",),
    *,
    subset=None,
    full_tomography: bool = False,
    verify: bool = True,
    tol: float = 1e-12,
) -> CopyEnsemble:
    """Enumerate the circuit copies for the checked segment.

    ``checks`` holds one :class:`CheckPair` per protected qubit (their left
    operators multiply in list order). ``rho_in`` is the tracked ``2^s x 2^s``
    state of the subset (bit ``k`` of its index is ``subset[k]``) or ``None``
    when the subset has to be measured mid-circuit. ``full_tomography`` emits
    every mid-basis / preparation / final-basis combination instead of only
    the needed ones.
    """
    checks = tuple(checks) if not isinstance(checks, CheckPair) else (checks,)
    if subset is None:
        subset = tuple(sorted({q for c in checks for q in c.subset}))
    subset = tuple(subset)
    s = len(subset)
    if s not in (1, 2):
        raise ValueError("subset size must be 1 or 2")
    if segment is not None and verify:
        verify_checks(segment, checks)
    obs = tuple(observables) if not isinstance(observables, str) else (observables,)
    obs = observables_for(obs, s) if obs != ("all",) else observables_for("all", s)
    targets = list(obs) + ["I" * s]
    tracked = rho_in is not None
    if tracked:
        rho_in = np.asarray(rho_in, dtype=complex)
        if rho_in.shape != (2**s, 2**s):
            raise ValueError("tracked state has the wrong dimension")

    lefts = [c.local(subset)[0] for c in checks]
    rights = [c.local(subset)[1] for c in checks]
    nchk = len(checks)
    bits = list(itertools.product((0, 1), repeat=nchk))

    def cl(a):
        return _ordered_product([_pauli_power(p, x) for p, x in zip(lefts, a)]) if nchk else PauliString.identity(s)

    def cr(a):
        return _ordered_product([_pauli_power(p, x) for p, x in zip(rights, a)][::-1]) if nchk else PauliString.identity(s)

    def tag_of(a, b):
        if nchk == 1:
            return TERM_NAMES[(a[0], b[0])]
        return "".join(TERM_NAMES[(x, y)] for x, y in zip(a, b))

    scale = 2.0**-s
    raw: dict[tuple, complex] = {}
    const: dict[tuple, complex] = {}
    for a in bits:
        for b in bits:
            if a != b and a < b:
                continue  # recovered as the conjugate of term(b, a)
            factor = 1 if a == b else 2
            cla, clb, cra, crb = cl(a), cl(b), cr(a), cr(b)
            for m in all_paulis(s):
                if tracked:
                    cm = np.trace(m.to_matrix() @ rho_in)
                    if abs(cm) < tol:
                        continue
                else:
                    cm = 1.0
                op = cla * m * clb.dagger()
                per_qubit = [_LETTER_WEIGHTS[ch] for ch in op.letters]
                preps = [
                    (tuple(lbl for lbl, _ in combo), op.phase * np.prod([w for _, w in combo]))
                    for combo in itertools.product(*[list(d.items()) for d in per_qubit])
                ]
                mid_pauli = "I" * s if tracked else m.letters
                for o in targets:
                    p = crb.dagger() * PauliString(o) * cra
                    for prep, w in preps:
                        coeff = scale * cm * w * p.phase
                        if abs(coeff) < tol:
                            continue
                        key = (tag_of(a, b), o, mid_pauli, p.letters, prep, factor)
                        if set(p.letters) == {"I"} and set(mid_pauli) == {"I"}:
                            ck = (tag_of(a, b), o, factor)
                            const[ck] = const.get(ck, 0) + coeff
                        else:
                            raw[key] = raw.get(key, 0) + coeff

    # requirements: (mid requirement, prep, final requirement) with None as wildcard
    reqs: dict[tuple, list[Contribution]] = {}
    for (tag, o, mp, fp, prep, factor), coeff in sorted(raw.items()):
        if abs(factor * coeff.real) < tol and (factor == 2 or abs(coeff) < tol):
            continue
        mid_req = None if tracked else tuple(None if ch == "I" else ch for ch in mp)
        fin_req = tuple(None if ch == "I" else ch for ch in fp)
        reqs.setdefault((mid_req, prep, fin_req), []).append(
            Contribution(tag, o, mp, fp, complex(coeff), factor)
        )

    copies: dict[tuple, list[Contribution]] = {}
    if full_tomography:
        mids = [None] if tracked else list(itertools.product("XYZ", repeat=s))
        for mid in mids:
            for prep in itertools.product(PREP_LABELS, repeat=s):
                for fin in itertools.product("XYZ", repeat=s):
                    copies[(mid, prep, fin)] = []

    def wild_count(r):
        mid_req, _, fin_req = r
        return sum(x is None for x in (mid_req or ())) + sum(x is None for x in fin_req)

    def compatible(req, key):
        mid_req, prep, fin_req = req
        mid, kprep, fin = key
        if prep != kprep:
            return False
        if mid_req is not None and any(r is not None and r != k for r, k in zip(mid_req, mid)):
            return False
        return all(r is None or r == k for r, k in zip(fin_req, fin))

    for req in sorted(reqs, key=lambda r: (wild_count(r), _req_sort_key(r))):
        match = next((k for k in sorted(copies, key=_key_sort) if compatible(req, k)), None)
        if match is None:
            mid_req, prep, fin_req = req
            mid = None if mid_req is None else tuple("Z" if x is None else x for x in mid_req)
            match = (mid, prep, tuple("Z" if x is None else x for x in fin_req))
            copies.setdefault(match, [])
        copies[match].extend(reqs[req])

    out = [
        CircuitCopy(mid, prep, fin, tuple(contribs), segment)
        for (mid, prep, fin), contribs in sorted(copies.items(), key=lambda kv: _key_sort(kv[0]))
    ]
    constants = [Contribution(tag, o, "I" * s, "I" * s, complex(v), f) for (tag, o, f), v in sorted(const.items())]
    return CopyEnsemble(subset, obs, out, constants, tracked, checks, segment)


def _req_sort_key(r):
    mid_req, prep, fin_req = r
    return (tuple(x or "" for x in (mid_req or ())), prep, tuple(x or "" for x in fin_req))


def _key_sort(k):
    mid, prep, fin = k
    return (mid or (), prep, fin)


# ---- assembly ----------------------------------------------------------------

def _eigen_sign(key: str, offset: int, letters: str) -> int:
    """Product of (-1)^bit over positions where ``letters`` is not I.

    ``key`` holds the final bits in its last ``s`` characters and the mid bits
    before them; subset position ``k`` is the ``k``-th character from the right
    within its group.
    """
    sign = 1
    n = len(key)
    for k, ch in enumerate(letters):
        if ch != "I" and key[n - 1 - offset - k] == "1":
            sign = -sign
    return sign


def contribution_expectation(dist: dict, contrib: Contribution, s: int) -> float:
    total = 0.0
    for key, p in dist.items():
        total += p * _eigen_sign(key, 0, contrib.final_pauli) * (
            _eigen_sign(key, s, contrib.mid_pauli) if len(key) > s else 1
        )
    return total


@dataclass
class MitigatedResult:
    subset: tuple[int, ...]
    expectations: dict[str, float]
    numerators: dict[str, float]
    denominator: float
    acceptance: float
    terms: dict[tuple[str, str], complex] = field(default_factory=dict)
    state: np.ndarray | None = None
    projection: float = 0.0
    imag_residue: float = 0.0

    @property
    def post_selection_rate(self) -> float:
        return self.acceptance

    def qubit_state(self) -> SingleQubitState | None:
        if self.state is None or len(self.subset) != 1:
            return None
        return SingleQubitState(self.state, projection=self.projection)

    def to_dict(self) -> dict:
        return {
            "subset": list(self.subset),
            "expectations": dict(sorted(self.expectations.items())),
            "numerators": dict(sorted(self.numerators.items())),
            "denominator": self.denominator,
            "post_selection_rate": self.acceptance,
            "projection": self.projection,
            "imag_residue": self.imag_residue,
        }


def assemble(ensemble: CopyEnsemble, results, warn_threshold: float = 1e-6) -> MitigatedResult:
    """Combine per-copy outcome distributions into mitigated expectations.

    ``results[i]`` is the outcome distribution of ``ensemble.copies[i]``; keys
    are the mid-circuit bits followed by the final bits (final only for
    tracked ensembles).
    """
    if len(results) != len(ensemble.copies):
        raise ValueError("every copy needs a result")
    s = ensemble.s
    terms: dict[tuple[str, str], complex] = {}
    value: dict[str, float] = {}
    for contrib in ensemble.constants:
        terms[(contrib.tag, contrib.observable)] = terms.get((contrib.tag, contrib.observable), 0) + contrib.coeff
        value[contrib.observable] = value.get(contrib.observable, 0.0) + contrib.value_coeff
    for copy, dist in zip(ensemble.copies, results):
        for contrib in copy.contributions:
            e = contribution_expectation(dist, contrib, s)
            k = (contrib.tag, contrib.observable)
            terms[k] = terms.get(k, 0) + contrib.coeff * e
            value[contrib.observable] = value.get(contrib.observable, 0.0) + contrib.factor * (contrib.coeff * e).real
    den_key = "I" * s
    den = value.get(den_key, 0.0)
    if not den > 0:
        raise PostSelectionError(f"post-selection mass vanished (denominator {den:.3g})")
    # diagonal terms are real by construction; their imaginary part measures inconsistency
    residue = max(
        (abs(v.imag) for (tag, _), v in terms.items() if _is_diagonal_tag(tag)), default=0.0
    )
    if residue > warn_threshold:
        log.warning("imaginary residue %.3g in QSPC assembly", residue)
    nums = {o: value.get(o, 0.0) for o in ensemble.observables}
    exps = {o: v / den for o, v in nums.items()}
    res = MitigatedResult(
        ensemble.subset, exps, nums, den, den / 4 ** len(ensemble.checks), terms, imag_residue=residue
    )
    full = set(observables_for("all", s))
    if full <= set(exps):
        if s == 1:
            st = reconstruct_qubit(exps["X"], exps["Y"], exps["Z"], delta=math.inf)
            res.state, res.projection = st.matrix, st.projection
        else:
            res.state, res.projection = reconstruct_density(exps, s)
    return res


def _is_diagonal_tag(tag: str) -> bool:
    parts = [tag[i:i + 2] for i in range(0, len(tag), 2)]
    a = tuple(int(p in ("T6", "T8")) for p in parts)
    b = tuple(int(p in ("T7", "T8")) for p in parts)
    return a == b


def reconstruct_qubit(x: float, y: float, z: float, delta: float = 0.05) -> SingleQubitState:
    """Single-qubit state from Bloch components, radially projected into the ball."""
    for v in (x, y, z):
        if not -1 - delta <= v <= 1 + delta:
            raise ValueError(f"expectation {v} outside [-1, 1] beyond tolerance {delta}")
    r = math.sqrt(x * x + y * y + z * z)
    corr = 0.0
    if r > 1:
        corr = r - 1
        x, y, z = x / r, y / r, z / r
    return SingleQubitState(bloch_to_density(x, y, z), projection=corr)


def pauli_expectations(rho: np.ndarray, s: int) -> dict[str, float]:
    return {
        p.letters: float(np.real(np.trace(rho @ p.to_matrix())))
        for p in all_paulis(s, include_identity=False)
    }


def density_from_expectations(exps: dict[str, float], s: int) -> np.ndarray:
    rho = np.eye(2**s, dtype=complex)
    for letters, v in exps.items():
        if set(letters) != {"I"}:
            rho = rho + v * PauliString(letters).to_matrix()
    return rho / 2**s


def project_psd(rho: np.ndarray) -> tuple[np.ndarray, float]:
    """Nearest unit-trace positive semidefinite matrix by eigenvalue clipping."""
    rho = (rho + rho.conj().T) / 2
    w, v = np.linalg.eigh(rho)
    neg = float(-w[w < 0].sum())
    w = np.clip(w, 0, None)
    if w.sum() <= 0:
        w = np.ones_like(w)
    w = w / w.sum()
    return (v * w) @ v.conj().T, neg


def reconstruct_density(exps: dict[str, float], s: int) -> tuple[np.ndarray, float]:
    if s == 1:
        st = reconstruct_qubit(exps["X"], exps["Y"], exps["Z"], delta=math.inf)
        return st.matrix, st.projection
    return project_psd(density_from_expectations(exps, s))


# ---- dense oracle for the physical sandwich ---------------------------------

def _channel_kraus(channel, n: int):
    """Kraus operators from ``[(prob, PauliString), ...]`` or a list of matrices."""
    out = []
    for item in channel:
        if isinstance(item, tuple) and len(item) == 2 and isinstance(item[1], PauliString):
            prob, p = item
            if prob:
                out.append(math.sqrt(prob) * p.to_matrix())
        else:
            out.append(np.asarray(item, dtype=complex))
    return out


def pcs_postselect_oracle(segment: Circuit, channel, checks, rho_in: np.ndarray):
    """Post-selected output of the ideal ancilla-based sandwich by dense algebra.

    Returns ``(rho_out, acceptance)`` where the acceptance is the trace of the
    unnormalised post-selected state divided by ``4^c`` for ``c`` checks, so it
    equals one without noise.
    """
    checks = (checks,) if isinstance(checks, CheckPair) else tuple(checks)
    n = segment.num_qubits
    u = segment.unitary(limit=sim.EXACT_LIMIT)
    rho = u @ np.asarray(rho_in, dtype=complex) @ u.conj().T
    rights = [c.c_right.to_matrix() for c in checks]
    kraus = _channel_kraus(channel, n) if channel else [np.eye(2**n)]
    unnorm = np.zeros_like(rho)
    for e in kraus:
        k = np.zeros_like(e)
        for a in itertools.product((0, 1), repeat=len(checks)):
            cra = np.eye(2**n, dtype=complex)
            for r, x in zip(rights, a):
                if x:
                    cra = r @ cra
            k = k + cra @ e @ cra.conj().T
        unnorm = unnorm + k @ rho @ k.conj().T
    tr = float(np.real(np.trace(unnorm)))
    if tr <= 1e-15:
        raise PostSelectionError("post-selected state has zero trace")
    return unnorm / tr, tr / 4 ** len(checks)


# ---- exact execution of copies ----------------------------------------------

@dataclass
class CopyContext:
    """Everything needed to run an ensemble's copies on the exact backend.

    ``prefix`` runs on the device before the cut (for tracked ensembles it must
    leave the subset wires untouched); ``segment`` is the payload after the
    cut. ``channel`` is an optional extra Pauli mixture applied after the
    payload, used to inject a known error model.
    """

    num_qubits: int
    prefix: tuple[Gate, ...]
    segment: tuple[Gate, ...]
    subset: tuple[int, ...]
    nm: sim.NoiseModel | None = None
    channel: tuple = ()


def _noisy_1q(kind: str, q: int) -> Gate:
    return Gate(kind, (q,))


def execute_exact(ens: CopyEnsemble, ctx: CopyContext) -> list[dict]:
    """Outcome distribution of every copy, simulated on reduced density matrices.

    The prefix is simulated once. For every mid-circuit setting the subset is
    rotated and measured; each outcome branch leaves an (unnormalised) state on
    the remaining wires, the subset is re-prepared, the payload runs, and the
    final basis is read. Readout flips act on both mid-circuit and final bits.
    """
    nm = ctx.nm
    gate_nm = nm if nm is not None and not nm.gate_noiseless() else None
    subset = list(ctx.subset)
    s = len(subset)
    if ens.tracked and any(set(g.qubits) & set(subset) for g in ctx.prefix):
        raise ValueError("a tracked ensemble's prefix must not act on the subset")
    chan_support = {q for _, p in ctx.channel for q in p.support}
    seg_wires = sorted({q for g in ctx.segment for q in g.qubits} | set(subset) | chan_support)
    wires = sorted(set(seg_wires) | {q for g in ctx.prefix for q in g.qubits})
    if len(wires) > sim.EXACT_LIMIT:
        raise sim.SimulationError(f"copy needs {len(wires)} live qubits; exact limit is {sim.EXACT_LIMIT}")
    wmap = {q: i for i, q in enumerate(wires)}
    nw = len(wires)
    rho = sim.run_dm(sim.zero_state_dm(nw), [g.remapped(wmap) for g in ctx.prefix], nw, gate_nm)

    vmap = {q: i for i, q in enumerate(seg_wires)}
    nv = len(seg_wires)
    s_pos = [vmap[q] for q in subset]
    seg_ops = [g.remapped(vmap) for g in ctx.segment]
    channel = [(p, PauliString("".join(pp.letters[q] for q in seg_wires), pp.power)) for p, pp in ctx.channel]
    ro_pairs = [nm.readout_pair(q) if nm is not None else (0.0, 0.0) for q in subset]

    branch_cache: dict = {}

    def branches(mid):
        """[(bits, rest-state tensor with S sliced out)] for one mid setting."""
        if mid in branch_cache:
            return branch_cache[mid]
        r = rho
        if mid is not None:
            for q, letter in zip(subset, mid):
                for kind in BASIS_GATES[letter]:
                    r = sim.apply_gate_dm(r, _noisy_1q(kind, wmap[q]), nw, gate_nm)
        keep = [wmap[q] for q in seg_wires]
        rv = sim.partial_trace(r, keep, nw).reshape([2] * (2 * nv))
        def sliced(bits):
            idx = [slice(None)] * (2 * nv)
            for pos, b in zip(s_pos, bits):
                ax = nv - 1 - pos
                idx[ax] = b
                idx[nv + ax] = b
            return rv[tuple(idx)]

        all_bits = list(itertools.product((0, 1), repeat=s))
        if mid is None:
            out = [(None, sum(sliced(b) for b in all_bits))]  # trace out the subset
        else:
            out = [(b, sliced(b)) for b in all_bits]
        branch_cache[mid] = out
        return out

    def embed_rest(rest: np.ndarray) -> np.ndarray:
        full = np.zeros([2] * (2 * nv), dtype=complex)
        idx = [slice(None)] * (2 * nv)
        for pos in s_pos:
            ax = nv - 1 - pos
            idx[ax] = 0
            idx[nv + ax] = 0
        full[tuple(idx)] = rest
        return full.reshape(2**nv, 2**nv)

    seg_cache: dict = {}

    def run_segment(mid, bi, rest, prep):
        key = (mid, bi, prep)
        if key not in seg_cache:
            r = embed_rest(rest)
            for pos, lbl in zip(s_pos, prep):
                for kind in PREP_GATES[lbl]:
                    r = sim.apply_gate_dm(r, _noisy_1q(kind, pos), nv, gate_nm)
            r = sim.run_dm(r, seg_ops, nv, gate_nm)
            if channel:
                r = sim.pauli_channel_dm(r, channel, nv)
            seg_cache[key] = r
        return seg_cache[key]

    results = []
    for copy in ens.copies:
        mid = copy.mid if not ens.tracked else None
        joint = np.zeros((2**s if mid is not None else 1, 2**s))
        for bi, (bits, rest) in enumerate(branches(mid)):
            r = run_segment(mid, bi, rest, copy.prep)
            for pos, letter in zip(s_pos, copy.basis):
                for kind in BASIS_GATES[letter]:
                    r = sim.apply_gate_dm(r, _noisy_1q(kind, pos), nv, gate_nm)
            probs = sim.measured_probs(r, nv, s_pos)
            probs = sim.apply_confusion(probs, ro_pairs)
            row = 0 if bits is None else sum(b << k for k, b in enumerate(bits))
            joint[row] = probs
        if mid is not None:
            # readout flips on the mid-circuit bits
            joint = np.stack([sim.apply_confusion(joint[:, f], ro_pairs) for f in range(2**s)], axis=1)
            flat = {}
            for b in range(2**s):
                for f in range(2**s):
                    if joint[b, f] > 0:
                        flat[format(b, f"0{s}b") + format(f, f"0{s}b")] = float(joint[b, f])
        else:
            flat = {format(f, f"0{s}b"): float(joint[0, f]) for f in range(2**s) if joint[0, f] > 0}
        results.append(flat)
    return results


# ---- cut-and-reconstruct baseline ---------------------------------------------

@dataclass(frozen=True)
class TomographyCopy:
    prep: tuple[str, ...]
    basis: tuple[str, ...]

    def key(self) -> str:
        return f"prep={''.join(self.prep) or '-'}|basis={''.join(self.basis) or '-'}"


@dataclass
class TomographyResult:
    copies: list[TomographyCopy]
    state: np.ndarray
    expectations: dict[str, float]
    results: list[dict]


def _prep_operator_weights(rho_in: np.ndarray, n: int) -> dict[tuple[str, ...], complex]:
    """Weights over products of the four preparable projectors summing to ``rho_in``."""
    out: dict[tuple[str, ...], complex] = {}
    for letters, c in pauli_decompose(rho_in, n).items():
        for combo in itertools.product(*(_LETTER_WEIGHTS[ch].items() for ch in letters)):
            labels = tuple(lbl for lbl, _ in combo)
            w = c * math.prod(x for _, x in combo)
            out[labels] = out.get(labels, 0) + w
    return out


def tomographic_baseline(
    segment: Circuit,
    measure_sites,
    prep_sites=(),
    rho_in: np.ndarray | None = None,
    nm: sim.NoiseModel | None = None,
) -> TomographyResult:
    """Standard wire-cut reconstruction of the state on ``measure_sites``.

    Every prep site takes each of ``|0>, |1>, |+>, |i>`` and every measure
    site each of the X, Y, Z bases: ``3**m * 4**n`` copies. The state entering
    the prep sites (``rho_in``, default ``|0..0>``) is expanded over the
    preparations and the output Pauli expectations are read from the basis
    settings. Other wires start in ``|0>``.
    """
    msites = sorted(measure_sites)
    psites = list(prep_sites)
    m, n = len(msites), len(psites)
    if rho_in is None:
        rho_in = np.zeros((2**n, 2**n), dtype=complex)
        rho_in[0, 0] = 1
    copies = [
        TomographyCopy(prep, basis)
        for prep in itertools.product(PREP_LABELS, repeat=n)
        for basis in itertools.product("XYZ", repeat=m)
    ]
    N = segment.num_qubits
    results = []
    for cp in copies:
        ops = [Gate(k, (q,)) for lbl, q in zip(cp.prep, psites) for k in PREP_GATES[lbl]]
        ops += list(segment.ops)
        ops += [Gate(k, (q,)) for letter, q in zip(cp.basis, msites) for k in BASIS_GATES[letter]]
        c = Circuit(N, tuple(ops), (), tuple(msites))
        if nm is None:
            results.append(sim.ideal_distribution(c, msites))
        else:
            results.append(sim.noisy_distribution(c, nm, msites))
    weights = _prep_operator_weights(np.asarray(rho_in, dtype=complex), n)
    by_key = {(cp.prep, cp.basis): d for cp, d in zip(copies, results)}
    exps = {}
    for p in all_paulis(m, include_identity=False):
        basis = tuple(ch if ch != "I" else "Z" for ch in p.letters)
        val = 0.0
        for prep, w in weights.items():
            d = by_key[(prep, basis)]
            val += w * sum(prob * _eigen_sign(k, 0, p.letters) for k, prob in d.items())
        exps[p.letters] = float(np.real(val))
    trace = float(np.real(sum(weights.values())))
    rho = density_from_expectations({k: v / trace for k, v in exps.items()}, m) if m else np.ones((1, 1))
    return TomographyResult(copies, rho, exps, results)
