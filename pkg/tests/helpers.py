"""Random instance generators shared by the property and acceptance tests."""

import numpy as np

from qutrace import sim
from qutrace.circuit import Circuit, Gate, propagate_pauli
from qutrace.pauli import PauliString
from qutrace.qspc import CheckPair, CopyContext, assemble, build_copies, execute_exact, pcs_postselect_oracle

ONE_Q = ["H", "S", "X", "RX", "RY", "RZ"]
TWO_Q = ["CX", "CZ", "CP"]


def random_gate(rng, n: int) -> Gate:
    if n > 1 and rng.random() < 0.5:
        a, b = (int(x) for x in rng.choice(n, 2, replace=False))
        kind = str(rng.choice(TWO_Q))
        return Gate(kind, (a, b), (float(rng.uniform(-3, 3)),) if kind == "CP" else ())
    kind = str(rng.choice(ONE_Q))
    q = int(rng.integers(n))
    return Gate(kind, (q,), (float(rng.uniform(-3, 3)),) if kind.startswith("R") else ())


def random_circuit(rng, n: int, depth: int) -> Circuit:
    return Circuit(n, tuple(random_gate(rng, n) for _ in range(depth)))


def random_checked_segment(rng, n: int, subset, depth: int, max_tries: int = 200):
    """Random gates whose Z checks on ``subset`` stay Paulis confined to the subset.

    Returns the segment and one CheckPair per subset qubit.
    """
    subset = tuple(subset)
    images = {q: PauliString.single(n, q, "Z") for q in subset}
    ops = []
    tries = 0
    while len(ops) < depth and tries < max_tries:
        tries += 1
        g = random_gate(rng, n)
        nxt = {}
        for q, p in images.items():
            p2 = propagate_pauli([g], p)
            if p2 is None or not set(p2.support) <= set(subset):
                break
            nxt[q] = p2
        else:
            ops.append(g)
            images = nxt
    checks = tuple(CheckPair(PauliString.single(n, q, "Z"), images[q], subset) for q in subset)
    return Circuit(n, tuple(ops)), checks


def random_pauli_channel(rng, n: int, terms: int = 3):
    """Random Pauli mixture ``[(prob, PauliString)]`` including the identity."""
    probs = rng.dirichlet(np.ones(terms + 1))
    out = [(float(probs[0]), PauliString("I" * n))]
    for p in probs[1:]:
        out.append((float(p), PauliString("".join(rng.choice(list("IXYZ"), n)))))
    return out


def random_density(rng, dim: int) -> np.ndarray:
    a = rng.normal(size=(dim, dim)) + 1j * rng.normal(size=(dim, dim))
    rho = a @ a.conj().T
    return rho / np.trace(rho)


def run_copies(seg, checks, subset, prefix, rho_s, observables, channel=(), nm=None, full=False):
    ens = build_copies(seg, checks, rho_s, observables, subset=subset, full_tomography=full)
    ctx = CopyContext(seg.num_qubits, tuple(prefix), seg.ops, subset, nm, tuple(channel))
    return ens, assemble(ens, execute_exact(ens, ctx))


def oracle_case(seed: int, tracked: bool):
    """One random segment checked against the dense post-selection oracle.

    Returns the largest expectation error and the acceptance error.
    """
    rng = np.random.default_rng(seed)
    n = int(rng.integers(2, 6))
    s = 2 if (n >= 3 and rng.random() < 0.2) else 1
    subset = tuple(sorted(int(q) for q in rng.choice(n, s, replace=False)))
    seg, checks = random_checked_segment(rng, n, subset, int(rng.integers(2, 9)))
    channel = random_pauli_channel(rng, n)
    obs = ("X", "Y", "Z") if s == 1 else ("ZZ", "XI", "IY")
    rest = [q for q in range(n) if q not in subset]
    if tracked:
        rho_s = random_density(rng, 2**s)
        prefix = [Gate("RY", (q,), (float(rng.uniform(0, 3)),)) for q in rest]
        rest_rho = sim.partial_trace(sim.simulate_exact(Circuit(n, tuple(prefix))), rest, n)
        rho_in = embed_product(rho_s, subset, rest_rho, rest, n)
    else:
        rho_s = None
        prefix = [Gate("RY", (q,), (float(rng.uniform(0, 3)),)) for q in range(n)]
        prefix += [Gate("CX", (q, (q + 1) % n)) for q in range(n - 1)]
        rho_in = sim.simulate_exact(Circuit(n, tuple(prefix)))
    _, res = run_copies(seg, checks, subset, prefix, rho_s, obs, channel)
    want, acc = pcs_postselect_oracle(seg, channel, checks, rho_in)
    red = sim.partial_trace(want, list(subset), n)
    err = max(abs(res.expectations[k] - sim.expectation(red, PauliString(k))) for k in obs)
    return err, abs(res.acceptance - acc)


def embed_product(rho_s, subset, rho_r, rest, n):
    """Tensor ``rho_s`` on ``subset`` with ``rho_r`` on ``rest`` into an n-qubit state."""
    order = list(subset) + list(rest)
    full = np.kron(rho_r, rho_s) if rest else rho_s
    # kron puts the first factor's qubits on the high side: reorder to natural labels
    t = full.reshape([2] * (2 * n))
    pos = {q: n - 1 - i for i, q in enumerate(order)}
    perm = [pos[q] for q in reversed(range(n))]
    t = t.transpose(perm + [p + n for p in perm])
    return t.reshape(2**n, 2**n)
