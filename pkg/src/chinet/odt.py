"""Orthogonalisation, diagonalisation and truncation of chi-nets.

The three passes run in sequence:

* :func:`orthogonalise` sweeps bottom-up, replacing each matricised core by the
  row-orthonormal factor of a reduced RQ decomposition and pushing the triangular
  factor into the next core (``f_{i+1} (R (x) R)``, or ``u R`` at the top).
* :func:`diagonalise` walks top-down, building the Gram matrix of every bond from
  the one above it (:func:`chinet.linalg.gram_step`) and eigendecomposing it.
* :func:`truncate` rotates every bond into its eigenbasis and keeps the leading
  ``r_i`` directions.

Bonds are numbered 1 .. L+1 as in the model; list index ``i - 1`` holds bond ``i``.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import linalg
from .errors import DimensionError, NumericalError
from .model import ChiNet, DenseCore, forward, net_frobenius, symmetrise

SYMMETRY_TOL = 1e-10
ZERO_EIG_RTOL = 1e-12


class OrthNet(ChiNet):
    """A chi-net whose embedding and cores have orthonormal matricised rows.

    Only the unembedding carries the non-orthogonal part of the network, so the
    Frobenius norm of the whole unfolded network equals ``||u||_F``.
    """

    def isometry_residuals(self) -> list[float]:
        mats = [self.embedding] + [c.f.reshape(c.out_dim, -1) for c in self.cores]
        return [float(np.max(np.abs(M @ M.T - np.eye(M.shape[0])))) for M in mats]


@dataclass(frozen=True)
class BondSpectrum:
    spectra: tuple

    def __len__(self):
        return len(self.spectra)

    def __getitem__(self, i) -> linalg.Spectrum:
        return self.spectra[i]

    @property
    def eigenvalues(self) -> list[np.ndarray]:
        return [s.values for s in self.spectra]


@dataclass(frozen=True)
class TruncationPlan:
    ranks: tuple
    epsilon: float | None = None


@dataclass(frozen=True)
class DiagonalisedNet:
    """A chi-net expressed in the eigenbases of its bonds, plus the kept eigenvalues."""

    net: ChiNet
    eigenvalues: tuple

    @property
    def ranks(self) -> list[int]:
        return self.net.bond_dims


def _contract_both_legs(f, M):
    """``f'[l, a, b] = sum_{j,k} f[l, j, k] M[j, a] M[k, b]``."""
    h_out, h_in, _ = f.shape
    t = (f.reshape(h_out * h_in, h_in) @ M).reshape(h_out, h_in, -1)
    t = np.einsum("ljb,ja->lab", t, M)
    return t


def _resymmetrise(f, what):
    scale = max(1.0, float(np.max(np.abs(f))))
    asym = float(np.max(np.abs(f - f.transpose(0, 2, 1)))) if f.size else 0.0
    if asym > SYMMETRY_TOL * scale:
        raise NumericalError(f"{what}: symmetry lost after contraction ({asym:.2e})")
    return linalg.symmetrise_core(f)


def orthogonalise(net: ChiNet) -> OrthNet:
    """Make the embedding and all cores isometric without changing the network function.

    Cores are factorised on their symmetric subspace, so each new core stays exactly
    symmetric. Bond dimensions never grow; a bond shrinks when its incoming map
    cannot have full row rank (for instance ``h_1 > d_in + 1``).
    """
    net = symmetrise(net)
    R, Q = linalg.rq_thin(net.embedding)
    embedding = Q
    cores = []
    for i, core in enumerate(net.cores, start=1):
        f = _resymmetrise(_contract_both_legs(core.f, R), f"core {i}")
        h_in = f.shape[1]
        R, Qp = linalg.rq_thin(linalg.sym_pack(f))
        cores.append(DenseCore(linalg.sym_unpack(Qp, h_in), symmetric=True))
    return OrthNet(embedding, cores, net.unembedding @ R)


def gram_sequence(onet: OrthNet) -> list[np.ndarray]:
    """Gram matrices ``G_1 .. G_{L+1}`` (bond order), computed top-down.

    ``G_{L+1} = u^T u`` and ``G_i = gram_step(f_i, G_{i+1})``.
    """
    G = onet.unembedding.T @ onet.unembedding
    grams = [G]
    for core in reversed(onet.cores):
        G = linalg.gram_step(core.f, G)
        grams.append(G)
    return grams[::-1]


def diagonalise(onet: OrthNet) -> BondSpectrum:
    return BondSpectrum(tuple(linalg.sym_evd(G) for G in gram_sequence(onet)))


def _tail_rank(values, threshold_fraction, power=1):
    lam = np.clip(np.asarray(values, dtype=np.float64), 0.0, None)
    if lam.size == 0 or lam[0] <= 0:
        return 1
    lam = np.where(lam < ZERO_EIG_RTOL * lam[0], 0.0, lam) ** power
    total = lam.sum()
    # tail[r] = sum of lam[r:], so keeping r values discards tail[r]
    tail = np.concatenate([np.cumsum(lam[::-1])[::-1], [0.0]])
    ok = np.flatnonzero(tail <= threshold_fraction * total)
    return max(1, int(ok[0]))


def select_ranks(spectrum: BondSpectrum, epsilon: float, depth: int, power: int = 1) -> TruncationPlan:
    """Smallest per-bond ranks meeting the hierarchical error budget.

    Each bond discards a tail with ``sum_{j > r} lam_j^power <= eps^2 / (2^(L+1) - 1)
    * sum_j lam_j^power``, the denominator being the number of projectors in the
    unfolded tree. With ``power=1`` (default) the tail is measured in squared singular
    values of the network, which is what makes ``||chi - chi'||_F <= eps ||chi||_F``
    hold. ``power=2`` measures it in squared Gram eigenvalues instead.
    """
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    budget = epsilon**2 / (2 ** (depth + 1) - 1)
    ranks = tuple(_tail_rank(s.values, budget, power) for s in spectrum.spectra)
    return TruncationPlan(ranks, epsilon)


def rotate(onet: OrthNet, spectrum: BondSpectrum) -> ChiNet:
    """Express ``onet`` in the full eigenbasis of every bond (no truncation)."""
    V = [s.vectors for s in spectrum.spectra]
    if len(V) != onet.depth + 1:
        raise DimensionError(f"spectrum has {len(V)} bonds, net has {onet.depth + 1}")
    embedding = V[0].T @ onet.embedding
    cores = []
    for i, core in enumerate(onet.cores):
        f = np.tensordot(V[i + 1].T, _contract_both_legs(core.f, V[i]), axes=1)
        cores.append(DenseCore(_resymmetrise(f, f"core {i + 1}"), symmetric=True))
    return ChiNet(embedding, cores, onet.unembedding @ V[-1])


def slice_ranks(net: ChiNet, ranks: Sequence[int]) -> ChiNet:
    """Keep the leading ``ranks[i]`` coordinates of every bond of an eigenbasis net."""
    dims = net.bond_dims
    if len(ranks) != len(dims):
        raise DimensionError(f"need {len(dims)} ranks, got {len(ranks)}")
    for bond, (r, h) in enumerate(zip(ranks, dims), start=1):
        if not 1 <= r <= h:
            raise DimensionError(f"rank {r} for bond {bond} outside 1..{h}")
    r = list(ranks)
    embedding = net.embedding[: r[0]].copy()
    cores = [DenseCore(np.ascontiguousarray(c.f[: r[i + 1], : r[i], : r[i]]), symmetric=True)
             for i, c in enumerate(net.cores)]
    return ChiNet(embedding, cores, net.unembedding[:, : r[-1]].copy())


def truncate(onet: OrthNet, spectrum: BondSpectrum, plan: TruncationPlan | Sequence[int]) -> ChiNet:
    ranks = plan.ranks if isinstance(plan, TruncationPlan) else tuple(plan)
    return slice_ranks(rotate(onet, spectrum), ranks)


def decompose(net: ChiNet, epsilon: float | None = None, ranks: Sequence[int] | None = None):
    """Run the whole pipeline. Returns ``(DiagonalisedNet, BondSpectrum, TruncationPlan)``.

    Without ``epsilon`` or ``ranks`` the result keeps every bond at full rank.
    """
    if epsilon is not None and ranks is not None:
        raise ValueError("give either epsilon or ranks, not both")
    onet = orthogonalise(net)
    spectrum = diagonalise(onet)
    if ranks is not None:
        plan = TruncationPlan(tuple(int(r) for r in ranks))
    elif epsilon is not None:
        plan = select_ranks(spectrum, epsilon, onet.depth)
    else:
        plan = TruncationPlan(tuple(onet.bond_dims))
    truncated = truncate(onet, spectrum, plan)
    kept = tuple(s.values[:r].copy() for s, r in zip(spectrum.spectra, plan.ranks))
    return DiagonalisedNet(truncated, kept), spectrum, plan


def removal_order(eigenvalues: Sequence[np.ndarray]) -> list[int]:
    """Bond index (0-based) of each successively removed dimension.

    Dimensions are ranked by ``lam / lam_max`` of their own bond, smallest first; the
    leading direction of every bond is never removed.
    """
    keys = []
    for b, lam in enumerate(eigenvalues):
        lam = np.asarray(lam, dtype=np.float64)
        top = lam[0] if lam.size and lam[0] > 0 else 1.0
        norm = lam / top
        for j in range(1, lam.size):
            # ties: remove the later (tail) index of a bond first
            keys.append((norm[j], -j, b))
    keys.sort()
    return [b for _, _, b in keys]


def sweep_points(total_removable: int, steps: int | None) -> list[int]:
    if steps is None or steps >= total_removable:
        return list(range(total_removable + 1))
    return sorted(set(np.linspace(0, total_removable, steps + 1).round().astype(int).tolist()))


def truncation_sweep(diag_full: ChiNet, eigenvalues, images, labels, steps: int | None = 40):
    """Cumulatively remove bond dimensions and re-evaluate.

    ``diag_full`` is the full-rank eigenbasis net (``decompose(net)[0].net``).
    Returns rows of ``(removed_frac, accuracy, loss, frobenius, ranks)`` where
    ``frobenius`` is the exact ``||chi'||_F`` of the truncated net.
    """
    from .train import evaluate  # train imports odt-free modules only

    dims = diag_full.bond_dims
    total = sum(dims)
    order = removal_order(eigenvalues)
    rows = []
    for n_removed in sweep_points(len(order), steps):
        ranks = list(dims)
        for b in order[:n_removed]:
            ranks[b] -= 1
        net = slice_ranks(diag_full, ranks)
        acc, loss = evaluate(net, images, labels)
        rows.append((n_removed / total, acc, loss, net_frobenius(net), tuple(ranks)))
    return rows


def local_svd(net: ChiNet) -> list[np.ndarray]:
    """Normalised singular values of the embedding and each matricised core.

    Entry ``i`` describes bond ``i + 1`` (the output bond of that map).
    """
    net = symmetrise(net)
    mats = [net.embedding] + [c.f.reshape(c.out_dim, -1) for c in net.cores]
    out = []
    for M in mats:
        s = np.linalg.svd(M, compute_uv=False)
        out.append(s / s[0] if s.size and s[0] > 0 else s)
    return out


def effective_dim(values) -> float:
    """Participation ratio ``(sum s)^2 / sum s^2`` of a singular-value list."""
    s = np.asarray(values, dtype=np.float64)
    sq = float(np.sum(s * s))
    if sq == 0.0:
        raise ValueError("effective_dim needs at least one positive value")
    return float(np.sum(s)) ** 2 / sq


def odt_singular_values(eigenvalues) -> np.ndarray:
    """Singular values of the network at a bond from its Gram eigenvalues."""
    return np.sqrt(np.clip(np.asarray(eigenvalues, dtype=np.float64), 0.0, None))


def max_relative_deviation(net_a: ChiNet, net_b: ChiNet, X) -> float:
    """Largest logit deviation, each input's deviation measured against its largest ``|logit|`` under ``net_a``."""
    a = np.atleast_2d(forward(net_a, X))
    b = np.atleast_2d(forward(net_b, X))
    scale = np.maximum(np.max(np.abs(a), axis=1), 1e-300)
    return float(np.max(np.max(np.abs(a - b), axis=1) / scale))
