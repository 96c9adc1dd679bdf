import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from refocus.algebra import (
    build_basis,
    from_coherence,
    structure_constants,
    to_coherence,
    validate_basis,
)


@pytest.mark.parametrize("n", [1, 2, 3])
def test_basis_orthonormal_and_hermitian(n):
    b = build_basis(n)
    N = 2**n
    S = b.matrices
    assert S.shape == (N * N, N, N)
    assert np.allclose(S[0], np.eye(N))
    gram = np.einsum("aij,bji->ab", S, S)
    assert np.abs(gram - N * np.eye(N * N)).max() < 1e-12
    assert np.abs(S - S.conj().transpose(0, 2, 1)).max() < 1e-14
    assert np.abs(np.einsum("aii->a", S[1:])).max() < 1e-14


def test_single_qubit_labels():
    b = build_basis(1)
    assert b.labels == ("I", "X", "Y", "Z")
    assert np.trace(b.matrices[3] @ b.matrices[3]).real == pytest.approx(2.0)


@pytest.mark.parametrize("n", [0, -1, 1.5])
def test_rejects_bad_qubit_count(n):
    with pytest.raises(ValueError):
        build_basis(n)


def test_validate_rejects_non_orthogonal():
    b = build_basis(1)
    bad = b.matrices.copy()
    bad[2] = bad[1]
    with pytest.raises(ValueError):
        validate_basis(type(b)(2, bad, b.labels))


def test_levi_civita_and_anticommutator():
    sc = structure_constants(build_basis(1))
    # C[g, a, b] with full indices: X=1, Y=2, Z=3
    assert sc.C[3, 1, 2] == pytest.approx(1.0)
    assert sc.C[3, 2, 1] == pytest.approx(-1.0)
    assert sc.B[0, 1, 1] == pytest.approx(1.0)
    assert np.all(sc.B[1:, 1:, 1:] == 0)
    eps = np.zeros((3, 3, 3))
    for i, j, k in [(0, 1, 2), (1, 2, 0), (2, 0, 1)]:
        eps[k, i, j], eps[k, j, i] = 1, -1
    assert np.array_equal(sc.C_traceless, eps)


@pytest.mark.parametrize("n", [1, 2])
def test_structure_constant_reconstruction(n):
    b = build_basis(n)
    sc = structure_constants(b)
    S = b.matrices
    assert np.array_equal(sc.C, -np.swapaxes(sc.C, 1, 2))
    assert np.array_equal(sc.B, np.swapaxes(sc.B, 1, 2))
    prod = np.einsum("aij,bjk->abik", S, S)
    comm = prod - prod.transpose(1, 0, 2, 3)
    anti = prod + prod.transpose(1, 0, 2, 3)
    assert np.abs(comm - 2j * np.einsum("gab,gij->abij", sc.C, S)).max() < 1e-10
    assert np.abs(anti - 2 * np.einsum("gab,gij->abij", sc.B, S)).max() < 1e-10


def test_two_qubit_commutator():
    b = build_basis(2)
    sc = structure_constants(b)
    xi, yi, zi = b.index("XI"), b.index("YI"), b.index("ZI")
    S = b.matrices
    comm = S[xi] @ S[yi] - S[yi] @ S[xi]
    assert np.allclose(comm, 2j * S[zi])
    assert sc.C[zi, xi, yi] == pytest.approx(1.0)


def test_coherence_pure_and_mixed():
    b = build_basis(1)
    up = np.array([[1, 0], [0, 0]], dtype=complex)
    assert np.allclose(to_coherence(up, b), [0, 0, 1])
    assert np.allclose(to_coherence(np.eye(2) / 2, b), 0)


def test_coherence_rejects_bad_trace():
    with pytest.raises(ValueError):
        to_coherence(np.eye(2), build_basis(1))


@st.composite
def density_matrices(draw, n=1):
    N = 2**n
    re = draw(st.lists(st.floats(-1, 1), min_size=N * N, max_size=N * N))
    im = draw(st.lists(st.floats(-1, 1), min_size=N * N, max_size=N * N))
    A = np.array(re).reshape(N, N) + 1j * np.array(im).reshape(N, N)
    rho = A @ A.conj().T + 1e-3 * np.eye(N)
    return rho / np.trace(rho).real


@settings(max_examples=50, deadline=None)
@given(density_matrices(1))
def test_coherence_roundtrip_and_bound(rho):
    b = build_basis(1)
    R = to_coherence(rho, b)
    assert np.abs(from_coherence(R, b) - rho).max() < 1e-12
    purity = np.trace(rho @ rho).real
    # R^2 = N tr(rho^2) - 1 <= N - 1
    assert R @ R == pytest.approx(2 * purity - 1, abs=1e-12)
    assert R @ R <= 1 + 1e-12


@settings(max_examples=20, deadline=None)
@given(density_matrices(2))
def test_two_qubit_roundtrip(rho):
    b = build_basis(2)
    R = to_coherence(rho, b)
    assert np.abs(from_coherence(R, b) - rho).max() < 1e-12
    assert R @ R <= 3 + 1e-12
