import itertools

import numpy as np
import pytest
from hypothesis import given, strategies as st

from qutrace import sim
from qutrace.benchmarks import qaoa_maxcut, qpe, vqe_ansatz
from qutrace.circuit import Circuit, Gate
from qutrace.planner import (
    PlanError,
    budget,
    bypass_gates,
    copies_for,
    exploit_symmetry,
    optimize_subset_circuit,
    permute_local_dist,
    place_cuts,
    plan_subset,
    prune_false_dependencies,
    prune_indices,
    remap,
    simulate_local,
)

from helpers import random_circuit


def _dist_close(a, b, tol=1e-10):
    return all(abs(a.get(k, 0) - b.get(k, 0)) < tol for k in set(a) | set(b))


# ---- cut placement -------------------------------------------------------------

def test_qpe_tracked_ancilla_gets_three_cuts():
    c = qpe(3, phase=1 / 8)
    plan = plan_subset(c, (0,))
    assert len(plan.cuts) == 3
    assert plan.checked == [0]
    assert plan.bases_needed[0] == ("X",)
    assert plan.tracked_first


def test_qpe_pruning_removes_lower_power_controlled_unitaries():
    c = qpe(3, phase=1 / 8)
    cu = [i for i, g in enumerate(c.ops) if g.kind == "CU1Q"]
    keep = prune_indices(c, [0])
    # CU on ancilla 2 and CU^2 on ancilla 1 never reach ancilla 0
    assert cu[0] not in keep and cu[1] not in keep and cu[2] in keep


def test_vqe_two_layers_four_cuts():
    c = vqe_ansatz(4, layers=2, seed=3)
    plan = place_cuts(c, (0,))
    assert len(plan.cuts) == 4
    assert len(plan.segments) == 2


def test_single_qubit_gates_only_gives_no_segments():
    c = Circuit(2, (Gate("H", (0,)), Gate("RX", (0,), (0.3,)), Gate("H", (1,))))
    plan = plan_subset(c, (0,))
    assert plan.segments == [] and plan.checked == []
    assert budget([plan], 1000).total_copies == 0
    assert budget([plan], 1000).normalized_shots == 1.0


def test_subset_size_limited():
    with pytest.raises(PlanError):
        place_cuts(Circuit(3, ()), (0, 1, 2))


# ---- pruning and bypass -------------------------------------------------------

def test_prune_full_measurement_is_identity():
    rng = np.random.default_rng(5)
    c = random_circuit(rng, 4, 20)
    assert prune_false_dependencies(c, range(4)).ops == c.ops


def test_bypass_examples():
    c = Circuit(2, (Gate("H", (0,)), Gate("CZ", (0, 1)), Gate("RZ", (0,), (0.4,))))
    out, log = bypass_gates(c, 0, "Z")
    assert [g.kind for g in out.ops] == ["H"]
    assert len(log) == 2
    out, _ = bypass_gates(Circuit(1, (Gate("H", (0,)),)), 0, "Z")
    assert [g.kind for g in out.ops] == ["H"]


def test_simulate_local_lifts_subset_only_gates():
    c = Circuit(2, (Gate("H", (0,)), Gate("CZ", (0, 1)), Gate("H", (0,))))
    lifted, residual = simulate_local(c, (0,))
    assert [g.kind for _, g in lifted] == ["H", "H"]
    assert [g.kind for g in residual.ops] == ["CZ"]
    c2 = Circuit(2, (Gate("CZ", (0, 1)),))
    assert simulate_local(c2, (0,))[1].ops == c2.ops


@pytest.mark.parametrize("tail,basis", [(["H"], "X"), (["S", "H"], "Y"), ([], "Z")])
def test_traceback_pulls_final_z_back(tail, basis):
    ops = [Gate("H", (1,)), Gate("H", (0,)), Gate("CZ", (1, 0))] + [Gate(k, (0,)) for k in tail]
    if basis == "Z":
        ops = [Gate("H", (1,)), Gate("H", (0,)), Gate("CP", (1, 0), (0.7,)), Gate("H", (0,)), Gate("CX", (1, 0))]
    c = Circuit(2, tuple(ops))
    plan = plan_subset(c, (0,))
    assert plan.bases_needed[plan.checked[-1]] == (basis,)


def test_diagonal_segment_is_bypassed():
    c = Circuit(2, (Gate("H", (0,)), Gate("H", (1,)), Gate("CP", (0, 1), (0.4,))))
    plan = plan_subset(c, (0,))
    assert plan.bypassed == [0] and plan.checked == []


class TestSemanticPreservation:
    @given(st.integers(0, 10**6), st.integers(2, 6))
    def test_prune(self, seed, n):
        rng = np.random.default_rng(seed)
        c = random_circuit(rng, n, 25)
        meas = sorted(int(q) for q in rng.choice(n, int(rng.integers(1, n + 1)), replace=False))
        p = prune_false_dependencies(c, meas)
        assert len(p.ops) <= len(c.ops)
        assert _dist_close(sim.ideal_distribution(c, meas), sim.ideal_distribution(p, meas))

    @given(st.integers(0, 10**6), st.integers(2, 6))
    def test_bypass_and_optimize(self, seed, n):
        rng = np.random.default_rng(seed)
        c = random_circuit(rng, n, 25)
        sub = sorted(int(q) for q in rng.choice(n, min(n, 2), replace=False))
        out, _ = bypass_gates(c, sub, "Z")
        assert _dist_close(sim.ideal_distribution(c, sub), sim.ideal_distribution(out, sub))
        opt = optimize_subset_circuit(c, sub)
        assert len(opt.ops) <= len(c.ops)
        assert _dist_close(sim.ideal_distribution(c, sub), sim.ideal_distribution(opt, sub))

    @given(st.integers(0, 10**6))
    def test_checks_valid_on_random_plans(self, seed):
        rng = np.random.default_rng(seed)
        n = int(rng.integers(2, 5))
        c = random_circuit(rng, n, 15)
        sub = tuple(sorted(int(q) for q in rng.choice(n, int(rng.integers(1, 3)), replace=False)))
        plan = plan_subset(c, sub)
        for seg in plan.segments:
            ops = [c.ops[i] for i in range(seg.start, seg.end + 1)]
            u = Circuit(n, tuple(ops)).unitary()
            for chk in seg.checks:
                assert set(chk.c_right.support) <= set(sub)
                np.testing.assert_allclose(
                    u @ chk.c_left.to_matrix(), chk.c_right.to_matrix() @ u, atol=1e-9
                )


# ---- remap ------------------------------------------------------------------------

def _ro_model(errs):
    return sim.NoiseModel(0.0, 0.0, [(e, e) for e in errs])


def _exhaustive_best(errs, k):
    return min(itertools.combinations(range(len(errs)), k), key=lambda c: (sum(errs[q] for q in c), c))


def test_remap_examples():
    assert remap([0, 1, 2], _ro_model([0.02] * 5), 5) == {0: 0, 1: 1, 2: 2}
    errs = (0.01, 0.05, 0.01, 0.02, 0.09)
    m = remap([0, 1, 2], _ro_model(errs), 5)
    assert set(m.values()) == set(_exhaustive_best(errs, 3)) == {0, 2, 3}
    bad = [0.01] * 5
    bad[1] = 0.1
    assert 1 not in remap([0, 1, 2, 3], _ro_model(bad), 5).values()
    with pytest.raises(PlanError):
        remap([0, 1, 2], _ro_model(errs), 2)


@given(st.lists(st.floats(0.001, 0.2), min_size=3, max_size=7), st.integers(1, 3))
def test_remap_matches_exhaustive_readout_oracle(errs, k):
    m = remap(list(range(k)), _ro_model(errs), len(errs))
    got = sum(errs[p] for p in m.values())
    assert got == pytest.approx(sum(errs[q] for q in _exhaustive_best(errs, k)))


# ---- symmetry -----------------------------------------------------------------

def _graph_automorphisms(n, edges):
    es = {frozenset(e) for e in edges}
    return [p for p in itertools.permutations(range(n)) if {frozenset((p[a], p[b])) for a, b in es} == es]


def test_ring_pairs_form_one_orbit():
    n = 6
    c = qaoa_maxcut(n)
    pairs = [(q, (q + 1) % n) for q in range(n)]
    orbits = exploit_symmetry(pairs, [tuple((q + 1) % n for q in range(n))], c)
    assert len(orbits) == 1
    assert sorted(m for m, _ in next(iter(orbits.values()))) == sorted(tuple(sorted(p)) for p in pairs)


def test_path_graph_two_orbits_matches_automorphism_oracle():
    edges = [(0, 1), (1, 2), (2, 3)]
    c = qaoa_maxcut(4, edges)
    group = _graph_automorphisms(4, edges)
    assert len(group) == 2
    orbits = exploit_symmetry(edges, group, c)
    assert len(orbits) == 2
    assert sorted(len(v) for v in orbits.values()) == [1, 2]


def test_trivial_group_keeps_every_subset():
    pairs = [(0, 1), (1, 2), (2, 3)]
    orbits = exploit_symmetry(pairs, [])
    assert sorted(orbits) == pairs


def test_non_automorphism_rejected():
    c = qaoa_maxcut(4, [(0, 1), (1, 2), (2, 3)])
    with pytest.raises(PlanError):
        exploit_symmetry([(0, 1)], [(1, 2, 0, 3)], c)


def test_replicated_distribution_matches_member():
    n = 5
    c = qaoa_maxcut(n)
    rot = tuple((q + 1) % n for q in range(n))
    orbits = exploit_symmetry([(0, 1), (1, 2), (2, 3)], [rot], c)
    rep, members = next(iter(orbits.items()))
    d = sim.ideal_distribution(c, rep)
    for member, perm in members:
        want = sim.ideal_distribution(c, member)
        assert _dist_close(permute_local_dist(d, rep, member, perm), want, 1e-9)


# ---- budget -------------------------------------------------------------------

def test_budget_bounds():
    c = qpe(3, phase=1 / 8)
    plan = plan_subset(c, (0,))
    b = budget([plan], 10_000)
    assert all(x <= 18 for x in b.copies_per_check)
    assert b.shots_per_copy == int(np.ceil(10_000 / 4))
    assert b.normalized_shots == pytest.approx(1 + b.total_copies * b.shots_per_copy / 10_000)
    assert np.isfinite(b.normalized_shots)


@pytest.mark.parametrize("seed", range(6))
def test_copies_per_check_within_bound(seed):
    rng = np.random.default_rng(seed)
    c = random_circuit(rng, 4, 20)
    for s in (1, 2):
        plan = plan_subset(c, tuple(range(s)))
        for idx in plan.checked:
            assert len(copies_for(plan, idx)) <= 30**s


def test_budget_grows_linearly_with_layers():
    totals = []
    for p in range(1, 5):
        c = qaoa_maxcut(6, gammas=[0.5] * p, betas=[0.3] * p)
        plans = [plan_subset(c, pair) for pair in ((0, 1), (2, 3), (4, 5))]
        totals.append(budget(plans, 10_000).normalized_shots)
    diffs = np.diff(totals)
    assert np.all(diffs > 0)
    np.testing.assert_allclose(diffs, diffs[0], rtol=1e-12)
