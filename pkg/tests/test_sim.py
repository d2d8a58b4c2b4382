import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from qutrace import sim
from qutrace.circuit import Circuit, Gate
from qutrace.pauli import PauliString
from qutrace.sim import NoiseModel


def one(kind, p1=0.0):
    return Circuit(1, (Gate(kind, (0,)),)), NoiseModel.uniform(p1=p1)


def test_simulate_exact_examples():
    c, nm = one("H")
    np.testing.assert_allclose(np.diag(sim.simulate_exact(c, nm)).real, [0.5, 0.5], atol=1e-12)
    c, nm = one("X", 0.1)
    assert sim.expectation(sim.simulate_exact(c, nm), PauliString("Z")) == pytest.approx(-0.9, abs=1e-12)
    rho = sim.simulate_exact(Circuit(2, ()))
    assert rho[0, 0] == 1 and np.count_nonzero(rho) == 1


def test_readout_channel_examples():
    nm = NoiseModel.uniform(readout=0.1)
    out = sim.readout_channel({"1": 1.0}, nm)
    assert out["1"] == pytest.approx(0.9) and out["0"] == pytest.approx(0.1)
    out = sim.readout_channel({"00": 1.0}, nm)
    expected = {"00": 0.81, "01": 0.09, "10": 0.09, "11": 0.01}
    for k, v in expected.items():
        assert out[k] == pytest.approx(v, abs=1e-12)
    # confusion-matrix oracle
    a = sim.confusion_matrix((0.1, 0.1))
    np.testing.assert_allclose(np.kron(a, a) @ np.array([1, 0, 0, 0]), [0.81, 0.09, 0.09, 0.01])
    assert sim.readout_channel({"01": 1.0}, NoiseModel()) == {"01": 1.0}


@given(st.floats(0, 1), st.floats(0, 1))
def test_confusion_columns_are_stochastic(a, b):
    np.testing.assert_array_equal(sim.confusion_matrix((a, b)).sum(axis=0), [1.0, 1.0])


def test_expectation_examples():
    assert sim.expectation({"0": 0.5, "1": 0.5}, PauliString("Z")) == 0
    assert sim.expectation(np.diag([1, 0]).astype(complex), PauliString("Z")) == 1
    rho = (np.eye(2) + 0.6 * np.array([[0, 1], [1, 0]])) / 2
    assert sim.expectation(rho, PauliString("X")) == pytest.approx(0.6)


def test_hellinger_examples():
    p = {"0": 0.5, "1": 0.5}
    assert sim.hellinger_fidelity(p, p) == pytest.approx(1.0)
    assert sim.hellinger_fidelity({"0": 1.0}, {"1": 1.0}) == 0.0
    assert sim.hellinger_fidelity(p, {"0": 1.0}) == pytest.approx(0.5)


dists = st.dictionaries(st.sampled_from(["00", "01", "10", "11"]), st.floats(0.01, 1), min_size=1)


@given(dists, dists)
def test_hellinger_symmetric_and_bounded(p, q):
    p, q = sim.normalize(p), sim.normalize(q)
    f = sim.hellinger_fidelity(p, q)
    assert f == sim.hellinger_fidelity(q, p)
    assert 0.0 <= f <= 1.0


def test_sample_determinism_and_frequency():
    c = Circuit(1, (Gate("H", (0,)),))
    a = sim.sample(c, NoiseModel(), 10**6, seed=3)
    assert a == sim.sample(c, NoiseModel(), 10**6, seed=3)
    assert abs(a.get("0", 0) / 10**6 - 0.5) < 0.002


def test_sampled_depolarized_x():
    c = Circuit(1, (Gate("X", (0,)),))
    shots = 20000
    counts = sim.sample(c, NoiseModel.uniform(p1=0.1), shots, seed=5)
    z = (counts.get("0", 0) - counts.get("1", 0)) / shots
    sigma = math.sqrt((1 - 0.81) / shots)
    assert abs(z + 0.9) < 3 * sigma


def test_trace_preserved_over_many_gates(rng):
    nm = NoiseModel.uniform(0.01, 0.05, 0.0)
    ops = []
    for _ in range(1000):
        if rng.random() < 0.5:
            ops.append(Gate("RY", (int(rng.integers(3)),), (float(rng.normal()),)))
        else:
            a, b = rng.choice(3, 2, replace=False)
            ops.append(Gate("CX", (int(a), int(b))))
    rho = sim.simulate_exact(Circuit(3, tuple(ops)), nm)
    assert abs(np.trace(rho) - 1) < 1e-10


@pytest.mark.parametrize("seed", range(200))
def test_sampler_agrees_with_exact(seed):
    """Per-qubit Z expectations from trajectories sit within 4 sigma of the exact values."""
    rng = np.random.default_rng(seed)
    n = int(rng.integers(1, 5))
    ops = []
    for _ in range(int(rng.integers(1, 10))):
        if n > 1 and rng.random() < 0.4:
            a, b = rng.choice(n, 2, replace=False)
            ops.append(Gate(str(rng.choice(["CX", "CZ"])), (int(a), int(b))))
        else:
            ops.append(Gate(str(rng.choice(["RX", "RY"])), (int(rng.integers(n)),), (float(rng.normal()),)))
    c = Circuit(n, tuple(ops))
    nm = NoiseModel.uniform(0.02, 0.05, 0.03)
    exact = sim.noisy_distribution(c, nm)
    shots = 4000
    for s in range(5):
        counts = sim.sample(c, nm, shots, seed=100 * seed + s)
        d = sim.counts_to_dist(counts)
        for q in range(n):
            z = PauliString.single(n, q, "Z")
            e, m = sim.expectation(exact, z), sim.expectation(d, z)
            sigma = math.sqrt(max(1 - e * e, 1e-3) / shots)
            assert abs(m - e) < 4 * sigma


def test_exact_limit():
    with pytest.raises(sim.SimulationError):
        sim.simulate_exact(Circuit(13, ()))


def test_noise_model_roundtrip():
    nm = NoiseModel(0.001, 0.01, [(0.02, 0.03), (0.01, 0.01)], {1: {"p2": 0.02}})
    back = NoiseModel.from_json(nm.to_json())
    assert back.readout_pair(0) == (0.02, 0.03)
    assert back.qubit_p2(1) == 0.02
    with pytest.raises(ValueError):
        NoiseModel(p1=1.5)
