"""Benchmark circuit generators.

Registers are listed least significant qubit first, so the natural integer
value of a register reads directly off the bitstring (qubit 0 rightmost).
The Fourier transforms are swap-free: after ``qft`` on register ``r``,
qubit ``r[j]`` carries the phase ``2*pi*x / 2**(j+1)``.
"""

from __future__ import annotations

import math

import numpy as np

from .circuit import Circuit, CircuitError, Gate, matrix_power_unitary


class BenchmarkError(ValueError):
    pass


def qft(reg) -> list[Gate]:
    reg = list(reg)
    ops = []
    for j in range(len(reg) - 1, -1, -1):
        ops.append(Gate("H", (reg[j],)))
        for i in range(j - 1, -1, -1):
            ops.append(Gate("CP", (reg[i], reg[j]), (math.pi / 2 ** (j - i),)))
    return ops


def iqft(reg) -> list[Gate]:
    return [g.inverse() for g in reversed(qft(reg))]


def _load_value(reg, value: int) -> list[Gate]:
    if value < 0 or value >= 2 ** len(reg):
        raise BenchmarkError(f"value {value} does not fit in {len(reg)} qubits")
    return [Gate("X", (q,)) for k, q in enumerate(reg) if (value >> k) & 1]


def iqft_circuit(n: int, value: int | None = None) -> Circuit:
    """Inverse QFT on a product input.

    With ``value=None`` the input is the uniform superposition (output all
    zeros). Otherwise each qubit ``j`` is prepared as ``H`` followed by
    ``RZ(2*pi*value / 2**(j+1))`` so the noiseless output is ``value``.
    """
    reg = list(range(n))
    ops = [Gate("H", (q,)) for q in reg]
    if value is not None:
        if not 0 <= value < 2**n:
            raise BenchmarkError(f"value {value} does not fit in {n} qubits")
        ops += [Gate("RZ", (j,), (2 * math.pi * value / 2 ** (j + 1),)) for j in reg if value % 2 ** (j + 1)]
    return Circuit(n, tuple(ops + iqft(reg)))


def qpe(num_ancilla: int, unitary=None, eigenstate=None, phase: float | None = None) -> Circuit:
    """Phase estimation of a 2x2 unitary on target qubit ``num_ancilla``.

    Ancilla ``j`` controls ``U**(2**(t-1-j))`` so the swap-free inverse QFT
    leaves the phase estimate as the natural register value. The controlled
    powers are applied smallest first. ``phase`` builds ``diag(1, e^{2 pi i
    phase})`` with eigenstate ``|1>``. ``eigenstate`` is a list of gate kinds
    preparing the target (default ``["X"]`` with ``phase``).
    """
    t = num_ancilla
    if t < 1:
        raise BenchmarkError("QPE needs at least one ancilla")
    if unitary is None:
        if phase is None:
            raise BenchmarkError("give either unitary or phase")
        unitary = np.diag([1, np.exp(2j * math.pi * phase)])
        eigenstate = ["X"] if eigenstate is None else eigenstate
    u = np.asarray(unitary, dtype=complex)
    if u.shape != (2, 2) or not np.allclose(u.conj().T @ u, np.eye(2), atol=1e-9):
        raise BenchmarkError("unitary must be a 2x2 unitary matrix")
    target = t
    ops = [Gate(k, (target,)) for k in (eigenstate or [])]
    ops += [Gate("H", (j,)) for j in range(t)]
    for j in range(t - 1, -1, -1):
        ops.append(Gate("CU1Q", (j, target), matrix=matrix_power_unitary(u, t - 1 - j)))
    ops += iqft(range(t))
    return Circuit(t + 1, tuple(ops), (), tuple(range(t)))


def bernstein_vazirani(secret: str) -> Circuit:
    """BV over ``len(secret)`` data qubits plus an ancilla (the top qubit).

    ``secret`` is a bitstring in the usual orientation (qubit 0 rightmost);
    the noiseless output on the data qubits is ``secret``.
    """
    if not secret or set(secret) - {"0", "1"}:
        raise BenchmarkError(f"invalid secret {secret!r}")
    n = len(secret)
    anc = n
    ops = [Gate("X", (anc,)), Gate("H", (anc,))]
    ops += [Gate("H", (q,)) for q in range(n)]
    ops += [Gate("CX", (q, anc)) for q in range(n) if secret[n - 1 - q] == "1"]
    ops += [Gate("H", (q,)) for q in range(n)]
    return Circuit(n + 1, tuple(ops), (), tuple(range(n)))


def qft_adder(na: int, nb: int, a: int = 0, b: int = 0) -> Circuit:
    """``b <- a + b mod 2**nb`` in Fourier space; a on qubits ``0..na-1``, b above it."""
    areg = list(range(na))
    breg = list(range(na, na + nb))
    ops = _load_value(areg, a) + _load_value(breg, b) + qft(breg)
    for j, bq in enumerate(breg):
        for i, aq in enumerate(areg):
            if i <= j:
                ops.append(Gate("CP", (aq, bq), (math.pi * 2.0 ** (i - j),)))
    ops += iqft(breg)
    return Circuit(na + nb, tuple(ops), (), tuple(breg))


def _ccp(c1: int, c2: int, t: int, theta: float) -> list[Gate]:
    """Doubly controlled phase from CP and CX."""
    return [
        Gate("CP", (c2, t), (theta / 2,)),
        Gate("CX", (c1, c2)),
        Gate("CP", (c2, t), (-theta / 2,)),
        Gate("CX", (c1, c2)),
        Gate("CP", (c1, t), (theta / 2,)),
    ]


def qft_multiplier(na: int, nb: int, a: int = 0, b: int = 0, nout: int | None = None) -> Circuit:
    """``out <- a * b mod 2**nout`` with registers a, b, out stacked from qubit 0."""
    nout = na + nb if nout is None else nout
    areg = list(range(na))
    breg = list(range(na, na + nb))
    oreg = list(range(na + nb, na + nb + nout))
    ops = _load_value(areg, a) + _load_value(breg, b) + qft(oreg)
    for k, oq in enumerate(oreg):
        for i, aq in enumerate(areg):
            for j, bq in enumerate(breg):
                if i + j <= k:
                    ops += _ccp(aq, bq, oq, math.pi * 2.0 ** (i + j - k))
    ops += iqft(oreg)
    return Circuit(na + nb + nout, tuple(ops), (), tuple(oreg))


def _angles(count: int, angles, seed: int) -> list[float]:
    if angles is None:
        return list(np.random.default_rng(seed).uniform(0, 2 * math.pi, count))
    angles = [float(x) for x in angles]
    if len(angles) != count:
        raise BenchmarkError(f"expected {count} angles, got {len(angles)}")
    return angles


def vqe_ansatz(n: int, layers: int = 1, reps: int = 1, angles=None, seed: int = 0) -> Circuit:
    """Hardware-efficient ansatz: an RY layer, then per layer ``reps`` linear CZ chains and an RY layer."""
    if n < 2 or layers < 0 or reps < 1:
        raise BenchmarkError("VQE needs n >= 2, layers >= 0, reps >= 1")
    th = _angles(n * (layers + 1), angles, seed)
    ops = [Gate("RY", (q,), (th[q],)) for q in range(n)]
    for layer in range(layers):
        for _ in range(reps):
            ops += [Gate("CZ", (q, q + 1)) for q in range(n - 1)]
        ops += [Gate("RY", (q,), (th[(layer + 1) * n + q],)) for q in range(n)]
    return Circuit(n, tuple(ops))


def ring_edges(n: int) -> list[tuple[int, int]]:
    return [(q, (q + 1) % n) for q in range(n)] if n > 2 else [(0, 1)]


def zz_phase(a: int, b: int, theta: float) -> list[Gate]:
    """``exp(-i theta/2 Z_a Z_b)`` up to global phase, as RZ, RZ and a controlled phase."""
    return [Gate("RZ", (a,), (theta,)), Gate("RZ", (b,), (theta,)), Gate("CP", (a, b), (-2 * theta,))]


def qaoa_maxcut(n: int, edges=None, gammas=(0.7,), betas=(0.3,)) -> Circuit:
    """MaxCut QAOA: H layer, then per layer ZZ phases on every edge and an RX(2 beta) mixer."""
    edges = ring_edges(n) if edges is None else [tuple(e) for e in edges]
    if len(gammas) != len(betas):
        raise BenchmarkError("gammas and betas must have the same length")
    for a, b in edges:
        if a == b or not (0 <= a < n and 0 <= b < n):
            raise BenchmarkError(f"invalid edge {(a, b)}")
    ops = [Gate("H", (q,)) for q in range(n)]
    for g, b in zip(gammas, betas):
        for u, v in edges:
            ops += zz_phase(u, v, g)
        ops += [Gate("RX", (q,), (2 * b,)) for q in range(n)]
    return Circuit(n, tuple(ops))


GENERATORS = {
    "iqft": iqft_circuit,
    "qpe": qpe,
    "bv": bernstein_vazirani,
    "qft_adder": qft_adder,
    "qft_multiplier": qft_multiplier,
    "vqe": vqe_ansatz,
    "qaoa": qaoa_maxcut,
}


def gen_benchmark(name: str, params: dict | None = None) -> Circuit:
    if name not in GENERATORS:
        raise BenchmarkError(f"unknown benchmark {name!r}; choose from {sorted(GENERATORS)}")
    try:
        return GENERATORS[name](**(params or {}))
    except TypeError as exc:
        raise BenchmarkError(f"bad parameters for {name}: {exc}") from exc
    except CircuitError as exc:
        raise BenchmarkError(str(exc)) from exc
