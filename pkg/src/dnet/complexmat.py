"""Complex matrices as (real, imaginary) pairs of real tensors.

Keeping the autodiff core real-valued sidesteps complex-derivative
conventions entirely: every complex operation below is built from real
tensor ops and is differentiable through both parts, except ``cinv``,
which is only needed by the classical (non-learned) precoders.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ShapeError, SingularMatrixError

PIVOT_TOL = 1e-12


@dataclass
class ComplexMatrix:
    """Rank-2 complex matrix; ``re`` and ``im`` share one shape."""

    re: Tensor
    im: Tensor

    def __post_init__(self):
        if self.re.shape != self.im.shape:
            raise ShapeError(f"re/im shapes differ: {self.re.shape} vs {self.im.shape}")
        if self.re.ndim != 2:
            raise ShapeError(f"ComplexMatrix must be rank 2, got shape {self.re.shape}")

    @property
    def shape(self):
        return self.re.shape

    @classmethod
    def from_array(cls, a, requires_grad: bool = False) -> "ComplexMatrix":
        a = np.asarray(a, dtype=np.complex128)
        return cls(Tensor(a.real, requires_grad), Tensor(a.imag, requires_grad))

    def to_array(self) -> np.ndarray:
        return self.re.data + 1j * self.im.data


def cmatmul(are: Tensor, aim: Tensor, bre: Tensor, bim: Tensor) -> tuple[Tensor, Tensor]:
    """(A B) for complex operands given as real/imag tensors; differentiable.

    Accepts 2-D operands or 3-D batches, same as ``autodiff.matmul``.
    """
    re = ad.sub(ad.matmul(are, bre), ad.matmul(aim, bim))
    im = ad.add(ad.matmul(are, bim), ad.matmul(aim, bre))
    return re, im


def cmul(a: ComplexMatrix, b: ComplexMatrix) -> ComplexMatrix:
    """Complex matrix product."""
    re, im = cmatmul(a.re, a.im, b.re, b.im)
    return ComplexMatrix(re, im)


def chermitian(a: ComplexMatrix) -> ComplexMatrix:
    """Conjugate transpose."""
    return ComplexMatrix(ad.transpose(a.re), ad.neg(ad.transpose(a.im)))


def cdiag(a: ComplexMatrix) -> ComplexMatrix:
    """The (i, i) entries of a square matrix, as a 1 x K complex row."""
    k = a.shape[0]
    if a.shape != (k, k):
        raise ShapeError(f"cdiag needs a square matrix, got {a.shape}")
    return ComplexMatrix(ad.reshape(ad.diagonal(a.re), (1, k)),
                         ad.reshape(ad.diagonal(a.im), (1, k)))


def cfrobenius_norm(a: ComplexMatrix) -> Tensor:
    """Frobenius norm as a differentiable scalar tensor."""
    return ad.sqrt(ad.add(ad.sum_all(ad.square(a.re)), ad.sum_all(ad.square(a.im))))


def cinv_array(a: np.ndarray, pivot_tol: float = PIVOT_TOL) -> np.ndarray:
    """Inverse of a square complex matrix by Gauss-Jordan with partial pivoting.

    Raises ``SingularMatrixError`` carrying the offending pivot magnitude.
    """
    a = np.asarray(a, dtype=np.complex128)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ShapeError(f"cinv needs a square matrix, got {a.shape}")
    n = a.shape[0]
    aug = np.concatenate([a.copy(), np.eye(n, dtype=np.complex128)], axis=1)
    for col in range(n):
        p = col + int(np.argmax(np.abs(aug[col:, col])))
        pivot = float(np.abs(aug[p, col]))
        if pivot < pivot_tol:
            raise SingularMatrixError(pivot)
        if p != col:
            aug[[col, p]] = aug[[p, col]]
        aug[col] /= aug[col, col]
        factor = aug[:, col].copy()
        factor[col] = 0.0
        aug -= np.outer(factor, aug[col])
    return np.ascontiguousarray(aug[:, n:])


def cinv(a: ComplexMatrix) -> ComplexMatrix:
    """Matrix inverse; not differentiable (classical baselines only)."""
    return ComplexMatrix.from_array(cinv_array(a.to_array()))
