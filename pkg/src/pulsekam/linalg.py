"""Dense complex operator algebra for small dimensions.

Operators are plain ``numpy`` arrays of shape ``(d, d)``; most helpers also
accept stacks ``(..., d, d)`` so that whole time grids can be processed in
one call.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

HERMITIAN_TOL = 1e-14
UNITARY_TOL = 1e-12

SIGMA0 = np.eye(2, dtype=complex)
SIGMA1 = np.array([[0, 1], [1, 0]], dtype=complex)
SIGMA2 = np.array([[0, -1j], [1j, 0]], dtype=complex)
SIGMA3 = np.array([[1, 0], [0, -1]], dtype=complex)
PAULI = np.stack([SIGMA1, SIGMA2, SIGMA3])


class DimensionError(ValueError):
    """Operator has the wrong shape for the requested operation."""


class HermiticityError(ValueError):
    """Operator is not Hermitian within tolerance."""


class PreconditionError(ValueError):
    """A structural precondition (e.g. tracelessness) is violated."""


@dataclass(frozen=True)
class PauliVector:
    """Coefficients of ``c0*I + c1*s1 + c2*s2 + c3*s3``."""

    c0: float
    c1: float
    c2: float
    c3: float

    @property
    def vector(self) -> np.ndarray:
        return np.array([self.c1, self.c2, self.c3])

    @property
    def traceless(self) -> bool:
        return self.c0 == 0.0

    def to_matrix(self) -> np.ndarray:
        return self.c0 * SIGMA0 + np.tensordot(self.vector, PAULI, axes=1)

    def __iter__(self):
        return iter((self.c0, self.c1, self.c2, self.c3))


def dagger(M: np.ndarray) -> np.ndarray:
    return np.conj(np.swapaxes(M, -1, -2))


def hermitize(M: np.ndarray) -> np.ndarray:
    """Return the Hermitian part ``(M + M^dagger)/2``."""
    return 0.5 * (M + dagger(M))


def commutator(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    return A @ B - B @ A


def _check_square(M: np.ndarray, dim: int | None = None) -> None:
    if M.ndim < 2 or M.shape[-1] != M.shape[-2]:
        raise DimensionError(f"expected square operator, got shape {M.shape}")
    if dim is not None and M.shape[-1] != dim:
        raise DimensionError(f"expected {dim}x{dim} operator, got shape {M.shape}")


def is_hermitian(M: np.ndarray, tol: float = HERMITIAN_TOL) -> bool:
    scale = max(1.0, float(np.max(np.abs(M), initial=0.0)))
    return bool(np.max(np.abs(M - dagger(M)), initial=0.0) <= tol * scale)


def _require_hermitian(M: np.ndarray, tol: float = HERMITIAN_TOL) -> None:
    if not is_hermitian(M, tol):
        raise HermiticityError("operator is not Hermitian")


def unitarity_defect(U: np.ndarray) -> float:
    """Spectral norm of ``U^dagger U - I``."""
    d = U.shape[-1]
    return spectral_norm(dagger(U) @ U - np.eye(d))


def pauli_decompose(M: np.ndarray) -> PauliVector:
    """Decompose a Hermitian 2x2 operator on the basis ``(I, s1, s2, s3)``."""
    M = np.asarray(M, dtype=complex)
    _check_square(M, 2)
    if M.ndim != 2:
        raise DimensionError("pauli_decompose expects a single 2x2 operator")
    _require_hermitian(M)
    c0 = 0.5 * np.trace(M).real
    c = 0.5 * np.einsum("kij,ji->k", PAULI, M).real
    return PauliVector(float(c0), float(c[0]), float(c[1]), float(c[2]))


def pauli_components(M: np.ndarray) -> np.ndarray:
    """Complex Pauli coefficients ``(..., 4)`` of stacked 2x2 operators (no checks)."""
    c0 = 0.5 * (M[..., 0, 0] + M[..., 1, 1])
    c1 = 0.5 * (M[..., 0, 1] + M[..., 1, 0])
    c2 = 0.5j * (M[..., 0, 1] - M[..., 1, 0])
    c3 = 0.5 * (M[..., 0, 0] - M[..., 1, 1])
    return np.stack([c0, c1, c2, c3], axis=-1)


def _exp_su2(H: np.ndarray) -> np.ndarray:
    # exp(-i(c0 + c.sigma)) = e^{-i c0} (cos|c| I - i sin|c| c_hat.sigma)
    c = pauli_components(H).real
    c0 = c[..., 0]
    vec = c[..., 1:]
    r = np.sqrt(np.sum(vec**2, axis=-1))
    cos_r = np.cos(r)
    # sin(r)/r, finite at r = 0
    sinc_r = np.sinc(r / np.pi)
    phase = np.exp(-1j * c0)
    a = vec * sinc_r[..., None]
    out = np.empty(H.shape, dtype=complex)
    out[..., 0, 0] = cos_r - 1j * a[..., 2]
    out[..., 1, 1] = cos_r + 1j * a[..., 2]
    out[..., 0, 1] = -1j * a[..., 0] - a[..., 1]
    out[..., 1, 0] = -1j * a[..., 0] + a[..., 1]
    return out * phase[..., None, None]


def unitary_exp(H: np.ndarray, check: bool = True) -> np.ndarray:
    """Return ``exp(-iH)`` for a Hermitian operator (or a stack of them).

    The 2x2 case uses the closed SU(2) form; larger dimensions go through a
    Hermitian eigendecomposition.
    """
    H = np.asarray(H, dtype=complex)
    _check_square(H)
    if check:
        _require_hermitian(H, 1e-12)
    if H.shape[-1] == 2:
        return _exp_su2(H)
    w, Q = np.linalg.eigh(hermitize(H))
    return (Q * np.exp(-1j * w)[..., None, :]) @ dagger(Q)


def spectral_norm(M: np.ndarray) -> float | np.ndarray:
    """Largest singular value; vectorized over leading axes."""
    M = np.asarray(M)
    s = np.linalg.svd(M, compute_uv=False)
    out = s[..., 0]
    return float(out) if out.ndim == 0 else out


def ad_pow(A: np.ndarray, B: np.ndarray, k: int) -> np.ndarray:
    """Nested commutator ``[A, [A, ... [A, B]]]`` with ``k`` brackets."""
    if k < 0:
        raise ValueError("k must be nonnegative")
    if A.shape[-2:] != B.shape[-2:]:
        raise DimensionError(f"dimension mismatch {A.shape} vs {B.shape}")
    out = np.array(B, dtype=complex)
    for _ in range(k):
        out = commutator(A, out)
    return out


def pauli_length(W: np.ndarray) -> np.ndarray:
    """``sqrt(c1^2 + c2^2 + c3^2)`` for stacked 2x2 operators, unchecked."""
    c = pauli_components(W)[..., 1:]
    return np.sqrt(np.sum(np.abs(c) ** 2, axis=-1))


def lambda_of(W: np.ndarray, tol: float = 1e-10) -> float:
    """``sqrt(-det W)`` for a traceless Hermitian 2x2 operator."""
    W = np.asarray(W, dtype=complex)
    _check_square(W, 2)
    if abs(np.trace(W)) > tol:
        raise PreconditionError("W must be traceless")
    if np.max(np.abs(W - dagger(W))) > tol:
        raise PreconditionError("W must be Hermitian")
    return float(np.sqrt(max(0.0, -np.linalg.det(W).real)))
