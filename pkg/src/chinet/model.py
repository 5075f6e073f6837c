"""The chi-net data model and its forward semantics.

A chi-net embeds the bias-augmented input ``(1, x)`` with a linear map ``e``, then
applies ``L`` layers that each clone the activation and feed both copies into a
bilinear core, and finally unembeds with ``u``::

    x_1     = e @ (1, x)
    x_{i+1} = f_i(x_i, x_i)            # f_i[l, j, k] x_i[j] x_i[k]
    logits  = u @ x_{L+1}

Cores are stored either factored (``(A x) * (B x)``, the training form) or dense.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Sequence, Union

import numpy as np

from . import linalg
from .errors import DimensionError, SizeGuardError

POLY_SIZE_LIMIT = 10**7


@dataclass(frozen=True)
class FactoredCore:
    A: np.ndarray
    B: np.ndarray

    def __post_init__(self):
        if self.A.shape != self.B.shape:
            raise DimensionError(f"A and B differ in shape: {self.A.shape} vs {self.B.shape}")

    @property
    def out_dim(self) -> int:
        return self.A.shape[0]

    @property
    def in_dim(self) -> int:
        return self.A.shape[1]

    def apply(self, X):
        return (X @ self.A.T) * (X @ self.B.T)


@dataclass(frozen=True)
class DenseCore:
    f: np.ndarray
    symmetric: bool = False

    def __post_init__(self):
        f = self.f
        if f.ndim != 3 or f.shape[1] != f.shape[2]:
            raise DimensionError(f"dense core must be (out, in, in), got {f.shape}")
        if self.symmetric and not np.array_equal(f, f.transpose(0, 2, 1)):
            raise ValueError("core flagged symmetric is not exactly symmetric")

    @property
    def out_dim(self) -> int:
        return self.f.shape[0]

    @property
    def in_dim(self) -> int:
        return self.f.shape[1]

    def apply(self, X):
        n = X.shape[0]
        h_out, h_in, _ = self.f.shape
        T = (X @ self.f.reshape(h_out * h_in, h_in).T).reshape(n, h_out, h_in)
        return np.einsum("nlj,nj->nl", T, X)


Core = Union[FactoredCore, DenseCore]


@dataclass(frozen=True)
class ChiNet:
    embedding: np.ndarray
    cores: tuple = ()
    unembedding: np.ndarray = field(default=None)

    def __post_init__(self):
        object.__setattr__(self, "cores", tuple(self.cores))
        dims = [self.embedding.shape[0]]
        for i, core in enumerate(self.cores, start=1):
            if core.in_dim != dims[-1]:
                raise DimensionError(
                    f"core {i} expects bond dim {core.in_dim}, previous layer gives {dims[-1]}"
                )
            dims.append(core.out_dim)
        if self.unembedding.shape[1] != dims[-1]:
            raise DimensionError(
                f"unembedding expects {self.unembedding.shape[1]}, last bond is {dims[-1]}"
            )

    @property
    def depth(self) -> int:
        return len(self.cores)

    @property
    def d_in(self) -> int:
        return self.embedding.shape[1] - 1

    @property
    def n_classes(self) -> int:
        return self.unembedding.shape[0]

    @property
    def bond_dims(self) -> list[int]:
        """Dimensions of bonds 1 .. L+1."""
        return [self.embedding.shape[0]] + [c.out_dim for c in self.cores]

    def with_cores(self, cores) -> "ChiNet":
        return replace(self, cores=tuple(cores))


def init_chinet(d_in: int, hidden: Union[int, Sequence[int]], depth: int, n_classes: int, rng) -> ChiNet:
    """Factored chi-net with weights uniform in +-sqrt(1/fan_in)."""
    if np.isscalar(hidden):
        hidden = [int(hidden)] * (depth + 1)
    hidden = list(hidden)
    if len(hidden) != depth + 1:
        raise DimensionError(f"need {depth + 1} bond widths, got {len(hidden)}")

    def uniform(rows, cols):
        bound = np.sqrt(1.0 / cols)
        return rng.uniform(-bound, bound, size=(rows, cols))

    embedding = uniform(hidden[0], d_in + 1)
    cores = [FactoredCore(uniform(hidden[i + 1], hidden[i]), uniform(hidden[i + 1], hidden[i]))
             for i in range(depth)]
    return ChiNet(embedding, cores, uniform(n_classes, hidden[-1]))


def augment(x) -> np.ndarray:
    """Prepend the constant bias coordinate: ``x -> (1, x)``. Works on batches too."""
    x = np.asarray(x, dtype=np.float64)
    ones = np.ones(x.shape[:-1] + (1,))
    return np.concatenate([ones, x], axis=-1)


def hidden_states(net: ChiNet, X, norm_scales=None) -> list[np.ndarray]:
    """Activations at bonds 1 .. L+1 for a batch ``X`` of shape (n, d_in).

    ``norm_scales[i]`` divides the output of core ``i + 1`` (eval-mode normalisation).
    """
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    if X.shape[1] != net.d_in:
        raise DimensionError(f"input has {X.shape[1]} features, net expects {net.d_in}")
    h = augment(X) @ net.embedding.T
    states = [h]
    for i, core in enumerate(net.cores):
        h = core.apply(h)
        if norm_scales is not None:
            h = h / norm_scales[i]
        states.append(h)
    return states


def forward(net: ChiNet, x, norm_scales=None) -> np.ndarray:
    """Raw logits. Accepts a single vector or an (n, d_in) batch."""
    x = np.asarray(x, dtype=np.float64)
    logits = hidden_states(net, x, norm_scales)[-1] @ net.unembedding.T
    return logits[0] if x.ndim == 1 else logits


def to_dense(core: Core) -> DenseCore:
    if isinstance(core, DenseCore):
        return core
    return DenseCore(linalg.khatri_rao_t(core.A, core.B))


def symmetrise(net: ChiNet) -> ChiNet:
    """Replace every core by its symmetric part (dense). Leaves the function unchanged."""
    cores = []
    for core in net.cores:
        if isinstance(core, DenseCore) and core.symmetric:
            cores.append(core)
        else:
            cores.append(DenseCore(linalg.symmetrise_core(to_dense(core).f), symmetric=True))
    return net.with_cores(cores)


@dataclass(frozen=True)
class PolyTensor:
    """Coefficients of the unfolded tree: shape (n_classes, D, ..., D) with 2**L input legs."""

    coefficients: np.ndarray

    @property
    def degree(self) -> int:
        return self.coefficients.ndim - 1

    def evaluate(self, x) -> np.ndarray:
        """Contract every input leg with the augmented ``x`` (single vector)."""
        z = augment(x)
        out = self.coefficients
        for _ in range(self.degree):
            out = out @ z
        return out

    def matrix(self) -> np.ndarray:
        return self.coefficients.reshape(self.coefficients.shape[0], -1)


def _check_poly_size(net: ChiNet):
    D = net.d_in + 1
    size = float(D) ** (2**net.depth) * net.n_classes
    if size > POLY_SIZE_LIMIT:
        raise SizeGuardError(
            f"materialising needs {size:.3g} coefficients (> {POLY_SIZE_LIMIT:.0e})"
        )


def subtree_maps(net: ChiNet) -> list[np.ndarray]:
    """Materialised lower subtrees ``T_i`` mapping D^(2^(i-1)) inputs to bond i, i = 1..L+1."""
    _check_poly_size(net)
    T = net.embedding
    maps = [T]
    for core in net.cores:
        f = to_dense(core).f
        T = f.reshape(f.shape[0], -1) @ np.kron(T, T)
        maps.append(T)
    return maps


def materialise_poly(net: ChiNet) -> PolyTensor:
    T = subtree_maps(net)[-1]
    D = net.d_in + 1
    coeffs = (net.unembedding @ T).reshape((net.n_classes,) + (D,) * (2**net.depth))
    return PolyTensor(coeffs)


def is_orthogonal(net: ChiNet, tol: float = 1e-9) -> bool:
    """True when the embedding and every core have orthonormal matricised rows."""
    mats = [net.embedding] + [to_dense(c).f.reshape(c.out_dim, -1) for c in net.cores]
    return all(np.max(np.abs(M @ M.T - np.eye(M.shape[0]))) <= tol for M in mats)


def subtree_grams(net: ChiNet) -> list[np.ndarray]:
    """``K_i = T_i T_i^T`` for every bond, by contraction and without materialising ``T_i``.

    ``K_1 = e e^T`` and ``K_{i+1}[l, m] = sum f[l, a, b] K_i[a, c] K_i[b, d] f[m, c, d]``,
    which costs ``O(h_out h^3)`` per core.
    """
    K = net.embedding @ net.embedding.T
    grams = [K]
    for core in net.cores:
        f = to_dense(core).f
        T = np.einsum("lab,ac->lcb", f, K)
        T = T @ K
        K = T.reshape(f.shape[0], -1) @ f.reshape(f.shape[0], -1).T
        grams.append(K)
    return grams


def net_frobenius(net: ChiNet) -> float:
    """Frobenius norm of the network viewed as one linear map on the unfolded input space.

    Orthogonalised nets need no contraction: their norm is that of the unembedding.
    """
    if is_orthogonal(net):
        return linalg.frobenius(net.unembedding)
    K = subtree_grams(net)[-1]
    u = net.unembedding
    return float(np.sqrt(max(np.sum((u @ K) * u), 0.0)))
