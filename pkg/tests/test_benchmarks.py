import math

import numpy as np
import pytest

from qutrace import sim
from qutrace.benchmarks import (
    BenchmarkError,
    bernstein_vazirani,
    gen_benchmark,
    iqft_circuit,
    qaoa_maxcut,
    qft,
    qft_adder,
    qft_multiplier,
    qpe,
    vqe_ansatz,
)
from qutrace.circuit import Circuit, Gate


def _top(d):
    return max(d, key=d.get)


def _fourier_state(n, x):
    """Product state with qubit j in (|0> + e^{2 pi i x / 2^(j+1)} |1>)/sqrt2."""
    psi = np.ones(2**n, dtype=complex) / 2 ** (n / 2)
    for idx in range(2**n):
        for j in range(n):
            if (idx >> j) & 1:
                psi[idx] *= np.exp(2j * math.pi * x / 2 ** (j + 1))
    return psi


@pytest.mark.parametrize("x", range(8))
def test_qft_matches_product_form(x):
    n = 3
    ops = [Gate("X", (q,)) for q in range(n) if (x >> q) & 1] + qft(range(n))
    psi = sim.statevector(Circuit(n, tuple(ops)))
    assert abs(abs(np.vdot(_fourier_state(n, x), psi)) - 1) < 1e-10


@pytest.mark.parametrize("value", [None, 0, 3, 5, 7])
def test_iqft_recovers_value(value):
    d = sim.ideal_distribution(iqft_circuit(3, value))
    want = format(value or 0, "03b")
    assert d[want] == pytest.approx(1.0)


@pytest.mark.parametrize("k", range(8))
def test_qpe_exact_phases(k):
    d = sim.ideal_distribution(qpe(3, phase=k / 8))
    assert d[format(k, "03b")] == pytest.approx(1.0)


def test_qpe_inexact_phase_peaks_at_nearest():
    d = sim.ideal_distribution(qpe(4, phase=0.3))
    assert _top(d) == format(round(0.3 * 16), "04b")


@pytest.mark.parametrize("secret", ["1", "101", "0110", "11111"])
def test_bv_reveals_secret(secret):
    assert sim.ideal_distribution(bernstein_vazirani(secret))[secret] == pytest.approx(1.0)


@pytest.mark.parametrize("a,b", [(a, b) for a in range(4) for b in range(8)])
def test_adder_all_inputs(a, b):
    d = sim.ideal_distribution(qft_adder(2, 3, a, b))
    assert d[format((a + b) % 8, "03b")] == pytest.approx(1.0)


@pytest.mark.parametrize("a,b", [(a, b) for a in range(4) for b in range(4)])
def test_multiplier_all_inputs(a, b):
    d = sim.ideal_distribution(qft_multiplier(2, 2, a, b))
    assert d[format(a * b, "04b")] == pytest.approx(1.0)


def test_vqe_structure():
    c = vqe_ansatz(5, layers=2, reps=3, seed=0)
    assert c.two_qubit_count() == 2 * 3 * 4
    assert sum(g.kind == "RY" for g in c.ops) == 15
    assert vqe_ansatz(4, 1, seed=7).ops == vqe_ansatz(4, 1, seed=7).ops


def test_zz_phase_matches_exponential():
    c = qaoa_maxcut(2, [(0, 1)], gammas=(0.37,), betas=(0.0,))
    psi = sim.statevector(c)
    zz = np.array([1, -1, -1, 1])
    want = np.exp(-0.5j * 0.37 * zz) / 2
    assert abs(abs(np.vdot(want, psi)) - 1) < 1e-10


def test_qaoa_ring_symmetric():
    d = sim.ideal_distribution(qaoa_maxcut(4))
    rot = {k: d[k[1:] + k[0]] for k in d}
    assert all(abs(rot[k] - d[k]) < 1e-12 for k in d)


def test_gen_benchmark_errors():
    assert gen_benchmark("bv", {"secret": "11"}).num_qubits == 3
    with pytest.raises(BenchmarkError):
        gen_benchmark("nope")
    with pytest.raises(BenchmarkError):
        gen_benchmark("bv", {"secret": "12"})
    with pytest.raises(BenchmarkError):
        gen_benchmark("qpe", {"num_ancilla": 3})
    with pytest.raises(BenchmarkError):
        gen_benchmark("vqe", {"n": 3, "bogus": 1})
