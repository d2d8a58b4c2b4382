import itertools

import numpy as np
from hypothesis import given, strategies as st

from qutrace.pauli import PAULI_MATRICES, PauliString, all_paulis, pauli_decompose, pauli_multiply


def test_single_qubit_products():
    assert pauli_multiply(PauliString("Z"), PauliString("X")) == PauliString("Y", 1)
    assert pauli_multiply(PauliString("X"), PauliString("X")) == PauliString("I")
    assert PauliString.from_label("ZI") * PauliString.from_label("IX") == PauliString.from_label("ZX")


def test_product_table_matches_matrices():
    for a, b in itertools.product("IXYZ", repeat=2):
        prod = pauli_multiply(PauliString(a), PauliString(b))
        np.testing.assert_allclose(prod.to_matrix(), PAULI_MATRICES[a] @ PAULI_MATRICES[b], atol=0)


def test_label_orientation():
    p = PauliString.from_label("ZX")
    assert p.letter(0) == "X" and p.letter(1) == "Z"
    np.testing.assert_allclose(p.to_matrix(), np.kron(PAULI_MATRICES["Z"], PAULI_MATRICES["X"]))


letters = st.text(alphabet="IXYZ", min_size=1, max_size=3)


@given(letters, st.data())
def test_commutation_agrees_with_matrices(a, data):
    b = data.draw(st.text(alphabet="IXYZ", min_size=len(a), max_size=len(a)))
    pa, pb = PauliString(a), PauliString(b)
    ma, mb = pa.to_matrix(), pb.to_matrix()
    assert pa.commutes_with(pb) == np.allclose(ma @ mb, mb @ ma)


@given(letters, st.integers(0, 3))
def test_dagger_and_hermiticity(a, power):
    p = PauliString(a, power)
    np.testing.assert_allclose(p.dagger().to_matrix(), p.to_matrix().conj().T)
    assert p.is_hermitian == np.allclose(p.to_matrix(), p.to_matrix().conj().T)


def test_decompose_roundtrip(rng):
    m = rng.normal(size=(4, 4)) + 1j * rng.normal(size=(4, 4))
    coeffs = pauli_decompose(m, 2)
    back = sum(c * PauliString(k).to_matrix() for k, c in coeffs.items())
    np.testing.assert_allclose(back, m, atol=1e-12)
    assert len(all_paulis(2)) == 16
