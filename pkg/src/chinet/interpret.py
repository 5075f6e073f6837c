"""Weight-based interpretation of a diagonalised chi-net.

Everything here reads weights only: atoms are embedding rows in the bond-1
eigenbasis, interaction matrices are symmetric core slices, and class features are
eigenpairs of the root core contracted with the unembedding. A class logit is the
quadratic form ``a^T M_c a`` of the root input ``a``, so the per-feature scores
``lam_k <v_k, a>^2`` add up to it exactly.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import linalg
from .errors import DimensionError
from .model import ChiNet, hidden_states, symmetrise, to_dense
from .odt import DiagonalisedNet

FEATURE_RTOL = 1e-13
DISPLAY_RTOL = 1e-6


def _net(dnet) -> ChiNet:
    return symmetrise(dnet.net if isinstance(dnet, DiagonalisedNet) else dnet)


@dataclass(frozen=True)
class BiasPath:
    """Where the constant (bias) signal lives at each bond 1..L+1.

    ``index[i]`` is the coordinate of bond ``i + 1`` with the largest overlap with
    the bias-only activation, ``value[i]`` that activation's entry there.
    """

    index: tuple
    value: tuple
    overlap: tuple


def bias_path(dnet) -> BiasPath:
    net = _net(dnet)
    states = hidden_states(net, np.zeros((1, net.d_in)))
    idx, val, ov = [], [], []
    for h in states:
        x0 = h[0]
        c = int(np.argmax(np.abs(x0)))
        norm = np.linalg.norm(x0)
        idx.append(c)
        val.append(float(x0[c]))
        ov.append(float(abs(x0[c]) / norm) if norm > 0 else 0.0)
    return BiasPath(tuple(idx), tuple(val), tuple(ov))


# -- atoms and interaction matrices ------------------------------------------------


@dataclass(frozen=True)
class Atom:
    bond: int
    index: int
    vector: np.ndarray  # over the augmented input, bias coordinate first
    importance: float
    image_shape: tuple | None = None

    @property
    def image(self):
        if not self.image_shape or not all(self.image_shape):
            return None
        return self.vector[1:].reshape(self.image_shape)


def atoms(dnet: DiagonalisedNet, image_shape=None) -> list[Atom]:
    """Embedding rows ordered by bond-1 eigenvalue, largest first."""
    net = _net(dnet)
    lam = np.asarray(dnet.eigenvalues[0]) if isinstance(dnet, DiagonalisedNet) else np.zeros(net.bond_dims[0])
    order = np.argsort(-lam, kind="stable")
    return [Atom(1, int(i), net.embedding[i].copy(), float(lam[i]), image_shape) for i in order]


@dataclass(frozen=True)
class InteractionMatrix:
    layer: int
    output_index: int
    matrix: np.ndarray
    constant_index: int
    constant_norm: float
    diagonal_norm: float
    offdiag_norm: float


def _constant_mask(h, c):
    mask = np.zeros((h, h), dtype=bool)
    mask[c, :] = True
    mask[:, c] = True
    return mask


def interaction_matrix(dnet, layer: int, output_index: int, constant_index: int = 0) -> InteractionMatrix:
    """Slice ``f_layer[l, :, :]`` split into constant, diagonal and off-diagonal parts."""
    net = _net(dnet)
    if not 1 <= layer <= net.depth:
        raise DimensionError(f"layer {layer} outside 1..{net.depth}")
    f = net.cores[layer - 1]
    M = linalg.symmetrise_core(f.f[output_index:output_index + 1])[0]
    h = M.shape[0]
    const = _constant_mask(h, constant_index)
    diag = np.eye(h, dtype=bool) & ~const
    off = ~const & ~diag
    return InteractionMatrix(
        layer, output_index, M, constant_index,
        float(np.sqrt(np.sum(M[const] ** 2))),
        float(np.sqrt(np.sum(M[diag] ** 2))),
        float(np.sqrt(np.sum(M[off] ** 2))),
    )


def constant_fraction(core, constant_index: int = 0) -> float:
    """Share of a core's squared norm held by entries touching the constant coordinate."""
    f = linalg.symmetrise_core(to_dense(core).f if hasattr(core, "out_dim") else core)
    total = float(np.sum(f * f))
    if total == 0.0:
        return 0.0
    mask = _constant_mask(f.shape[1], constant_index)
    return float(np.sum(f[:, mask] ** 2)) / total


# -- class features -----------------------------------------------------------


@dataclass
class EigenFeature:
    class_index: int
    eigenvalue: float
    vector: np.ndarray  # unit norm, lives on bond L (the root's input)
    rank: int
    projection: np.ndarray | None = field(default=None, repr=False)

    @property
    def positive(self) -> bool:
        return self.eigenvalue > 0


def root_class_matrix(dnet, class_index: int) -> np.ndarray:
    """``M_c[j, k] = sum_l u[c, l] f_L[l, j, k]``: the class-c logit as a quadratic form."""
    net = _net(dnet)
    if net.depth == 0:
        raise DimensionError("a depth-0 net has no root core")
    if not 0 <= class_index < net.n_classes:
        raise DimensionError(f"class {class_index} outside 0..{net.n_classes - 1}")
    f = net.cores[-1].f
    M = np.tensordot(net.unembedding[class_index], f, axes=1)
    return 0.5 * (M + M.T)


def class_eigenfeatures(M, class_index: int = 0, rtol: float = FEATURE_RTOL) -> list[EigenFeature]:
    """Signed eigenpairs of ``M`` ordered by ``|lam|``; eigenvalues that are numerically zero are dropped."""
    spec = linalg.sym_evd(M)
    lam, V = spec.values, spec.vectors
    if lam.size == 0:
        return []
    top = np.max(np.abs(lam))
    if top == 0.0:
        return []
    order = np.argsort(-np.abs(lam), kind="stable")
    keep = [i for i in order if abs(lam[i]) > rtol * top]
    return [EigenFeature(class_index, float(lam[i]), V[:, i].copy(), r) for r, i in enumerate(keep)]


def linear_trace(dnet, v, bond: int, down_to="input", mode: str = "constant", path: BiasPath | None = None):
    """Carry a bond vector down to bond 1 or the input space through the linear part of each core.

    ``mode="constant"`` uses only the constant-interaction slice of every core below:
    ``L[l, m] = 2 * beta * f[l, c, m]`` where ``c`` is the bond's bias coordinate and
    ``beta`` its bias-only activation. ``mode="jacobian"`` uses the full Jacobian of
    each core at zero input, which yields the exact degree-1 coefficients.
    At the input level the embedding is transposed and the bias coordinate dropped.
    """
    net = _net(dnet)
    if not 1 <= bond <= net.depth + 1:
        raise DimensionError(f"bond {bond} outside 1..{net.depth + 1}")
    w = np.asarray(v, dtype=np.float64)
    if w.shape != (net.bond_dims[bond - 1],):
        raise DimensionError(f"vector of length {w.shape} does not live on bond {bond}")
    stop = 1 if down_to in (1, "1", "bond1") else 0
    if mode == "constant":
        path = path or bias_path(net)
    elif mode == "jacobian":
        states = hidden_states(net, np.zeros((1, net.d_in)))
    else:
        raise ValueError(f"unknown trace mode {mode!r}")
    for j in range(bond - 1, 0, -1):
        f = net.cores[j - 1].f
        if mode == "constant":
            c = path.index[j - 1]
            lin = 2.0 * path.value[j - 1] * f[:, c, :]
        else:
            lin = 2.0 * np.einsum("lam,a->lm", f, states[j - 1][0])
        w = lin.T @ w
    if stop == 1:
        return w
    return (net.embedding.T @ w)[1:]


def all_class_features(dnet, project: bool = True, mode: str = "constant") -> dict[int, list[EigenFeature]]:
    net = _net(dnet)
    path = bias_path(net) if mode == "constant" else None
    out = {}
    for c in range(net.n_classes):
        feats = class_eigenfeatures(root_class_matrix(net, c), c)
        if project:
            for ft in feats:
                ft.projection = linear_trace(net, ft.vector, net.depth, "input", mode, path)
        out[c] = feats
    return out


# -- explanations -------------------------------------------------------------


@dataclass
class ExplanationReport:
    logits: np.ndarray
    latent: np.ndarray
    scores: dict  # class -> array aligned with that class's feature list
    features: dict
    squared: bool = True

    def class_sum(self, c) -> float:
        return float(np.sum(self.scores[c]))

    def top(self, k: int = 10):
        """``(class, feature, score)`` triples with the largest ``|score|`` over all classes."""
        items = [(c, ft, float(s)) for c, feats in self.features.items()
                 for ft, s in zip(feats, self.scores[c])]
        items.sort(key=lambda t: -abs(t[2]))
        return items[:k]

    def to_dict(self, top_k: int = 10, display_rtol: float = DISPLAY_RTOL) -> dict:
        classes = []
        for c, feats in self.features.items():
            s = np.asarray(self.scores[c])
            lam_max = max((abs(ft.eigenvalue) for ft in feats), default=0.0)
            shown = [i for i, ft in enumerate(feats) if abs(ft.eigenvalue) >= display_rtol * lam_max]
            pos = sorted((float(s[i]) for i in shown if s[i] > 0), reverse=True)
            neg = sorted(float(s[i]) for i in shown if s[i] < 0)
            classes.append({
                "class": int(c),
                "logit": float(self.logits[c]),
                "score_sum": self.class_sum(c),
                "positive_scores": pos,
                "negative_scores": neg,
            })
        top = [{
            "class": int(c),
            "rank": ft.rank,
            "eigenvalue": ft.eigenvalue,
            "activation": float(ft.vector @ self.latent),
            "score": s,
        } for c, ft, s in self.top(top_k)]
        return {
            "prediction": int(np.argmax(self.logits)),
            "squared_activations": self.squared,
            "logits": [float(z) for z in self.logits],
            "classes": classes,
            "top_features": top,
        }


def score_latent(features: list[EigenFeature], a, squared: bool = True) -> np.ndarray:
    """Per-feature scores of a root latent ``a``."""
    a = np.asarray(a, dtype=np.float64)
    if not features:
        return np.zeros(0)
    V = np.stack([ft.vector for ft in features])
    if V.shape[1] != a.shape[-1]:
        raise DimensionError(f"features live on a bond of size {V.shape[1]}, latent has {a.shape[-1]}")
    lam = np.array([ft.eigenvalue for ft in features])
    act = V @ a
    return lam * act**2 if squared else lam * act


def explain(dnet, features: dict, x, squared: bool = True) -> ExplanationReport:
    """Score every class feature on input ``x``.

    ``squared=True`` scores ``lam <v, a>^2`` (these sum to the class logit);
    ``squared=False`` scores ``lam <v, a>``.
    """
    net = _net(dnet)
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (net.d_in,):
        raise DimensionError(f"input has shape {x.shape}, model expects ({net.d_in},)")
    states = hidden_states(net, x[None])
    a = states[-2][0]
    logits = states[-1][0] @ net.unembedding.T
    scores = {c: score_latent(feats, a, squared) for c, feats in features.items()}
    return ExplanationReport(logits, a, scores, features, squared)
