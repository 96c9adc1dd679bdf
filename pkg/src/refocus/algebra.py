"""Hermitian operator basis, structure constants and coherence vectors.

The basis for ``n`` qubits is the set of tensor-product Pauli strings,
normalized so that ``tr(S_a S_b) = N delta_ab`` with ``N = 2**n``.  The
identity comes first; the remaining strings are ordered lexicographically
in their Pauli indices (``0=I, 1=X, 2=Y, 3=Z``).
"""

from dataclasses import dataclass, field
from functools import reduce
from itertools import product
from typing import List, Tuple

import numpy as np

HERMITICITY_TOL = 1e-10

PAULI = np.array(
    [
        [[1, 0], [0, 1]],
        [[0, 1], [1, 0]],
        [[0, -1j], [1j, 0]],
        [[1, 0], [0, -1]],
    ],
    dtype=complex,
)
_LETTERS = "IXYZ"


@dataclass(frozen=True)
class OperatorBasis:
    n_levels: int
    matrices: np.ndarray = field(repr=False)
    labels: Tuple[str, ...]

    @property
    def size(self) -> int:
        return self.matrices.shape[0]

    @property
    def traceless(self) -> np.ndarray:
        """The ``N**2 - 1`` traceless elements (index ``a >= 1``)."""
        return self.matrices[1:]

    def index(self, label: str) -> int:
        return self.labels.index(label)

    def field_operator(self, vec) -> np.ndarray:
        """Return ``sum_a vec_a S_a / 2`` for a vector over the traceless sector."""
        vec = np.asarray(vec)
        if vec.shape[-1] != self.size - 1:
            raise ValueError(
                f"expected {self.size - 1} components, got {vec.shape[-1]}"
            )
        return 0.5 * np.tensordot(vec, self.traceless, axes=([-1], [0]))


@dataclass(frozen=True)
class StructureConstants:
    """``[S_a, S_b] = 2i C[g, a, b] S_g`` and ``{S_a, S_b} = 2 B[g, a, b] S_g``.

    Arrays are indexed ``[gamma, alpha, beta]`` over the full basis.
    """

    C: np.ndarray = field(repr=False)
    B: np.ndarray = field(repr=False)

    @property
    def C_traceless(self) -> np.ndarray:
        return self.C[1:, 1:, 1:]


def build_basis(n_qubits: int) -> OperatorBasis:
    """Tensor-product Pauli basis for ``n_qubits`` qubits, identity first."""
    if int(n_qubits) != n_qubits or n_qubits <= 0:
        raise ValueError(f"n_qubits must be a positive integer, got {n_qubits!r}")
    n_qubits = int(n_qubits)
    mats: List[np.ndarray] = []
    labels: List[str] = []
    for idx in product(range(4), repeat=n_qubits):
        mats.append(reduce(np.kron, (PAULI[i] for i in idx)))
        labels.append("".join(_LETTERS[i] for i in idx))
    return OperatorBasis(2**n_qubits, np.array(mats), tuple(labels))


def validate_basis(basis: OperatorBasis, tol: float = HERMITICITY_TOL) -> None:
    S = basis.matrices
    N = basis.n_levels
    if S.shape != (N * N, N, N):
        raise ValueError("basis must contain N**2 matrices of size N x N")
    if not np.allclose(S[0], np.eye(N), atol=tol):
        raise ValueError("first basis element must be the identity")
    if np.max(np.abs(S - np.conj(np.swapaxes(S, -1, -2)))) > tol:
        raise ValueError("basis matrices must be Hermitian")
    gram = np.einsum("aij,bji->ab", S, S)
    if np.max(np.abs(gram - N * np.eye(N * N))) > tol:
        raise ValueError("basis is not orthogonal with tr(S_a S_b) = N delta_ab")


def structure_constants(basis: OperatorBasis) -> StructureConstants:
    validate_basis(basis)
    S = basis.matrices
    N = basis.n_levels
    prod = np.einsum("aij,bjk->abik", S, S)
    comm = prod - np.swapaxes(prod, 0, 1)
    anti = prod + np.swapaxes(prod, 0, 1)
    # tr(S_g X) for each pair
    C = np.einsum("gji,abij->gab", S, comm) / (2j * N)
    B = np.einsum("gji,abij->gab", S, anti) / (2 * N)
    C, B = C.real.copy(), B.real.copy()
    # exact (anti)symmetry as stored
    C = 0.5 * (C - np.swapaxes(C, 1, 2))
    B = 0.5 * (B + np.swapaxes(B, 1, 2))
    C[np.abs(C) < 1e-14] = 0.0
    B[np.abs(B) < 1e-14] = 0.0
    return StructureConstants(C, B)


def to_coherence(rho, basis: OperatorBasis, tol: float = HERMITICITY_TOL) -> np.ndarray:
    """Coherence vector ``R_a = tr(rho S_a)``, ``a >= 1``."""
    rho = np.asarray(rho, dtype=complex)
    N = basis.n_levels
    if rho.shape != (N, N):
        raise ValueError(f"density matrix must be {N}x{N}")
    if np.max(np.abs(rho - rho.conj().T)) > tol:
        raise ValueError("density matrix is not Hermitian")
    if abs(np.trace(rho) - 1) > tol:
        raise ValueError(f"density matrix trace is {np.trace(rho).real:.6g}, not 1")
    return np.einsum("ij,aji->a", rho, basis.traceless).real


def from_coherence(R, basis: OperatorBasis) -> np.ndarray:
    R = np.asarray(R, dtype=float)
    N = basis.n_levels
    if R.shape != (N * N - 1,):
        raise ValueError(f"coherence vector must have {N * N - 1} entries")
    return (basis.matrices[0] + np.tensordot(R, basis.traceless, axes=1)) / N
