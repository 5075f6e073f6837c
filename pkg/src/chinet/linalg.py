"""Dense real linear-algebra kernels.

Matrices are plain 2-D ``float64`` numpy arrays and third-order cores are 3-D
arrays laid out as ``f[l, j, k]`` (output index first). Every function here is
pure and returns freshly allocated arrays.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionError, NumericalError

__all__ = [
    "Spectrum",
    "rq_reduced",
    "rq_thin",
    "sym_evd",
    "khatri_rao_t",
    "frobenius",
    "gram_step",
    "sym_pack",
    "sym_unpack",
    "symmetrise_core",
]


def _as_matrix(M, name="M"):
    M = np.asarray(M, dtype=np.float64)
    if M.ndim != 2:
        raise DimensionError(f"{name} must be 2-D, got shape {M.shape}")
    if not np.all(np.isfinite(M)):
        raise NumericalError(f"{name} contains non-finite entries")
    return M


@dataclass(frozen=True)
class Spectrum:
    """Eigenpairs of a symmetric matrix, eigenvalues sorted descending.

    Column ``i`` of ``vectors`` is paired with ``values[i]``.
    """

    values: np.ndarray
    vectors: np.ndarray

    def __len__(self):
        return len(self.values)


def rq_thin(M) -> tuple[np.ndarray, np.ndarray]:
    """Thin RQ factorisation ``M = R @ Q`` for any shape.

    With ``k = min(n, m)``, ``R`` is ``n x k`` and ``Q`` is ``k x m`` with
    orthonormal rows. ``R`` is upper triangular (trapezoidal when ``n > m``) with a
    non-negative diagonal.
    """
    M = _as_matrix(M)
    n, m = M.shape
    # RQ of M from QR of the row-reversed transpose.
    Qt, Rt = np.linalg.qr(M[::-1].T, mode="reduced")  # (m, k), (k, n)
    R = Rt.T[::-1, ::-1]
    Q = Qt.T[::-1]
    k = R.shape[1]
    # Diagonal of R sits at R[n - k + i, i].
    diag = R[n - k + np.arange(k), np.arange(k)]
    signs = np.where(diag < 0, -1.0, 1.0)
    return np.ascontiguousarray(R * signs), np.ascontiguousarray(Q * signs[:, None])


def rq_reduced(M) -> tuple[np.ndarray, np.ndarray]:
    """Reduced RQ decomposition of a wide matrix: ``M = R @ Q``, ``Q Q^T = I_n``.

    ``M`` must be ``n x m`` with ``n <= m``; ``R`` is ``n x n`` upper triangular.
    """
    M = _as_matrix(M)
    n, m = M.shape
    if n > m:
        raise DimensionError(f"rq_reduced needs rows <= cols, got {n}x{m}")
    return rq_thin(M)


def sym_evd(G) -> Spectrum:
    """Eigendecomposition of a symmetric matrix, largest eigenvalue first."""
    G = _as_matrix(G, "G")
    if G.shape[0] != G.shape[1]:
        raise DimensionError(f"sym_evd needs a square matrix, got {G.shape}")
    G = 0.5 * (G + G.T)
    values, vectors = np.linalg.eigh(G)
    # eigh sorts ascending; flip to descending.
    return Spectrum(values[::-1].copy(), np.ascontiguousarray(vectors[:, ::-1]))


def khatri_rao_t(A, B) -> np.ndarray:
    """Transposed Khatri-Rao product: ``f[l, j, k] = A[l, j] * B[l, k]``."""
    A = _as_matrix(A, "A")
    B = _as_matrix(B, "B")
    if A.shape != B.shape:
        raise DimensionError(f"khatri_rao_t shape mismatch: {A.shape} vs {B.shape}")
    return A[:, :, None] * B[:, None, :]


def frobenius(T) -> float:
    return float(np.sqrt(np.sum(np.square(np.asarray(T, dtype=np.float64)))))


def gram_step(f, G_next) -> np.ndarray:
    """Pull a bond Gram matrix down through one symmetric isometric core.

    ``G[a, b] = sum_{l, l', c} f[l, c, a] G_next[l, l'] f[l', c, b]``. The sibling
    leg ``c`` is contracted with its own adjoint, which is the identity because
    the subtree feeding it is isometric.
    """
    f = np.asarray(f, dtype=np.float64)
    G_next = _as_matrix(G_next, "G_next")
    if f.ndim != 3 or f.shape[1] != f.shape[2]:
        raise DimensionError(f"core must have shape (out, in, in), got {f.shape}")
    h_out, h_in, _ = f.shape
    if G_next.shape != (h_out, h_out):
        raise DimensionError(f"G_next must be {h_out}x{h_out}, got {G_next.shape}")
    flat = f.reshape(h_out, h_in * h_in)
    T = (G_next @ flat).reshape(h_out * h_in, h_in)
    G = T.T @ f.reshape(h_out * h_in, h_in)
    return 0.5 * (G + G.T)


def symmetrise_core(f) -> np.ndarray:
    f = np.asarray(f, dtype=np.float64)
    return 0.5 * (f + f.transpose(0, 2, 1))


def _triu(h):
    rows, cols = np.triu_indices(h)
    weights = np.where(rows == cols, 1.0, np.sqrt(2.0))
    return rows, cols, weights


def sym_pack(f) -> np.ndarray:
    """Isometric coordinates of symmetric slices.

    Maps each symmetric ``h x h`` slice of ``f`` to its upper triangle, with
    off-diagonal entries scaled by sqrt(2) so that Frobenius inner products are
    preserved. Result has shape ``(out, h (h + 1) / 2)``.
    """
    f = np.asarray(f, dtype=np.float64)
    rows, cols, weights = _triu(f.shape[1])
    return f[:, rows, cols] * weights


def sym_unpack(P, h: int) -> np.ndarray:
    """Inverse of :func:`sym_pack`."""
    P = np.asarray(P, dtype=np.float64)
    rows, cols, weights = _triu(h)
    if P.shape[1] != len(rows):
        raise DimensionError(f"packed width {P.shape[1]} does not match h={h}")
    f = np.zeros((P.shape[0], h, h))
    vals = P / weights
    f[:, rows, cols] = vals
    f[:, cols, rows] = vals
    return f
