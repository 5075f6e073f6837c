"""Training: RMS batch normalisation, softmax cross-entropy, hand-written backward
passes, AdamW with a cosine schedule, and a ReLU MLP baseline.

Parameters live in flat ``dict[str, ndarray]`` maps while training:
``embedding``, ``core{i}.A``, ``core{i}.B`` and ``unembedding`` for chi-nets;
``embedding``, ``hidden{i}.W``, ``hidden{i}.b`` and ``unembedding`` for the MLP.
Layer indices start at 1.
"""
from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field

import numpy as np

from .data import Dataset, add_noise
from .errors import DimensionError
from .model import ChiNet, DenseCore, FactoredCore, augment, forward, init_chinet

NORM_GUARD = 1e-12


@dataclass
class TrainConfig:
    learning_rate: float = 1e-3
    weight_decay: float = 1.0
    batch_size: int = 2048
    epochs: int = 20
    noise_sigma: float = 0.3
    noise_mode: str = "pixel"
    schedule: str = "cosine"
    beta1: float = 0.9
    beta2: float = 0.999
    eps_adam: float = 1e-8
    seed: int = 0
    hidden: int = 256
    depth: int = 3
    normalise: bool = True
    norm_momentum: float = 0.1
    norm_stat_grad: bool = True

    def __post_init__(self):
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be non-negative")
        if self.batch_size <= 0:
            raise ValueError("batch_size must be positive")
        if self.epochs < 0:
            raise ValueError("epochs must be non-negative")
        if self.schedule not in ("cosine", "constant"):
            raise ValueError(f"unknown schedule {self.schedule!r}")
        if self.noise_mode not in ("pixel", "norm"):
            raise ValueError(f"unknown noise_mode {self.noise_mode!r}")


@dataclass
class NormState:
    """Running average of the batch activation RMS for one layer."""

    momentum: float = 0.1
    running: float = 1.0
    updated: bool = False
    last: float = 1.0  # statistic used by the most recent call


def rms_norm_apply(acts, state: NormState, training: bool) -> np.ndarray:
    """Divide activations by one scalar: the batch-mean row RMS (train) or its running average (eval)."""
    if training:
        stat = float(np.mean(np.sqrt(np.mean(acts * acts, axis=1)))) if len(acts) else 0.0
        if stat < NORM_GUARD:
            state.last = 1.0
            return acts
        if state.updated:
            state.running = (1 - state.momentum) * state.running + state.momentum * stat
        else:
            state.running, state.updated = stat, True
        state.last = stat
        return acts / stat
    if state.running < NORM_GUARD:
        return acts
    state.last = state.running
    return acts / state.running


def rms_norm_backward(dy, out, stat):
    """Gradient through ``out / stat`` including the dependence of the batch statistic on ``out``."""
    n, h = out.shape
    row_rms = np.sqrt(np.mean(out * out, axis=1))
    safe = np.where(row_rms > 0, row_rms, 1.0)
    dstat_dout = np.where(row_rms[:, None] > 0, out / (n * h * safe[:, None]), 0.0)
    return dy / stat - (np.sum(dy * out) / stat**2) * dstat_dout


def softmax_xent(logits, label):
    """Loss and gradient for a single example (max-subtracted for stability)."""
    z = np.asarray(logits, dtype=np.float64)
    z = z - z.max()
    logsum = np.log(np.sum(np.exp(z)))
    probs = np.exp(z - logsum)
    grad = probs.copy()
    grad[label] -= 1.0
    return float(logsum - z[label]), grad


def softmax_xent_batch(logits, labels):
    """Mean loss over the batch and its gradient with respect to the logits."""
    z = logits - logits.max(axis=1, keepdims=True)
    logsum = np.log(np.sum(np.exp(z), axis=1))
    n = len(labels)
    rows = np.arange(n)
    loss = float(np.mean(logsum - z[rows, labels]))
    grad = np.exp(z - logsum[:, None])
    grad[rows, labels] -= 1.0
    return loss, grad / n


def cosine_lr(step: int, total_steps: int, base_lr: float) -> float:
    if total_steps <= 0:
        return base_lr
    return base_lr * 0.5 * (1.0 + math.cos(math.pi * step / total_steps))


@dataclass
class AdamState:
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    step: int = 0


def adamw_step(params: dict, grads: dict, moments: AdamState, cfg: TrainConfig, lr_t: float) -> dict:
    """One AdamW update with decoupled weight decay. ``moments`` is advanced in place."""
    moments.step += 1
    t = moments.step
    b1, b2 = cfg.beta1, cfg.beta2
    out = {}
    for name, p in params.items():
        g = grads[name]
        m = moments.m.get(name)
        if m is None:
            m = np.zeros_like(p)
            moments.v[name] = np.zeros_like(p)
        m = b1 * m + (1 - b1) * g
        v = b2 * moments.v[name] + (1 - b2) * g * g
        moments.m[name], moments.v[name] = m, v
        m_hat = m / (1 - b1**t)
        v_hat = v / (1 - b2**t)
        decayed = p - lr_t * cfg.weight_decay * p
        out[name] = decayed - lr_t * m_hat / (np.sqrt(v_hat) + cfg.eps_adam)
    return out


# -- chi-net parameters -------------------------------------------------------


def chinet_params(net: ChiNet) -> dict:
    params = {"embedding": net.embedding.copy()}
    for i, core in enumerate(net.cores, start=1):
        if not isinstance(core, FactoredCore):
            raise TypeError("training needs factored cores")
        params[f"core{i}.A"] = core.A.copy()
        params[f"core{i}.B"] = core.B.copy()
    params["unembedding"] = net.unembedding.copy()
    return params


def chinet_from_params(params: dict) -> ChiNet:
    depth = sum(1 for k in params if k.endswith(".A"))
    cores = [FactoredCore(params[f"core{i}.A"], params[f"core{i}.B"]) for i in range(1, depth + 1)]
    return ChiNet(params["embedding"], cores, params["unembedding"])


def _chinet_forward(params, X, scales):
    depth = sum(1 for k in params if k.endswith(".A"))
    Xa = augment(X)
    h = Xa @ params["embedding"].T
    cache = {"Xa": Xa, "layers": []}
    for i in range(1, depth + 1):
        p = h @ params[f"core{i}.A"].T
        q = h @ params[f"core{i}.B"].T
        out = p * q
        s = scales(i - 1, out)
        cache["layers"].append((h, p, q, s, out))
        h = out / s
    cache["top"] = h
    return h @ params["unembedding"].T, cache


def _norm_grad(dh, out, s, stat_grad):
    if stat_grad and s != 1.0:
        return rms_norm_backward(dh, out, s)
    return dh / s


def _chinet_backward(params, cache, dlogits, stat_grad=False):
    grads = {"unembedding": dlogits.T @ cache["top"]}
    dh = dlogits @ params["unembedding"]
    for i in range(len(cache["layers"]), 0, -1):
        h, p, q, s, out = cache["layers"][i - 1]
        dout = _norm_grad(dh, out, s, stat_grad)
        dp, dq = dout * q, dout * p
        grads[f"core{i}.A"] = dp.T @ h
        grads[f"core{i}.B"] = dq.T @ h
        dh = dp @ params[f"core{i}.A"] + dq @ params[f"core{i}.B"]
    grads["embedding"] = dh.T @ cache["Xa"]
    return grads


def backward(net: ChiNet, x_batch, dlogits, norm_scales=None) -> dict:
    """Exact parameter gradients given ``dL/dlogits``.

    Normalisation scalars, if any, are treated as constants.
    """
    params = chinet_params(net)
    x_batch = np.atleast_2d(np.asarray(x_batch, dtype=np.float64))
    dlogits = np.atleast_2d(np.asarray(dlogits, dtype=np.float64))
    if dlogits.shape != (len(x_batch), net.n_classes):
        raise DimensionError(f"dlogits shape {dlogits.shape} does not match batch")

    def scales(i, _out):
        return 1.0 if norm_scales is None else norm_scales[i]

    _, cache = _chinet_forward(params, x_batch, scales)
    return _chinet_backward(params, cache, dlogits)


def fold_norm(net: ChiNet, scales) -> ChiNet:
    """Contract each running RMS scalar into the weights downstream of it."""
    scales = [s.running if isinstance(s, NormState) else float(s) for s in scales]
    if len(scales) != net.depth:
        raise DimensionError(f"need {net.depth} norm scalars, got {len(scales)}")
    cores = list(net.cores)
    unembedding = net.unembedding
    for i, s in enumerate(scales):
        if s == 1.0:
            continue
        if i + 1 < len(cores):
            nxt = cores[i + 1]
            if isinstance(nxt, FactoredCore):
                cores[i + 1] = FactoredCore(nxt.A / s, nxt.B / s)
            else:
                cores[i + 1] = DenseCore(nxt.f / (s * s), nxt.symmetric)
        else:
            unembedding = unembedding / s
    return ChiNet(net.embedding, cores, unembedding)


# -- ReLU baseline ------------------------------------------------------------


@dataclass(frozen=True)
class MLP:
    params: dict

    @property
    def depth(self) -> int:
        return sum(1 for k in self.params if k.endswith(".W"))


def init_mlp(d_in, hidden, depth, n_classes, rng) -> MLP:
    def uniform(rows, cols):
        bound = np.sqrt(1.0 / cols)
        return rng.uniform(-bound, bound, size=(rows, cols))

    params = {"embedding": uniform(hidden, d_in + 1)}
    for i in range(1, depth + 1):
        params[f"hidden{i}.W"] = uniform(hidden, hidden)
        params[f"hidden{i}.b"] = np.zeros(hidden)
    params["unembedding"] = uniform(n_classes, hidden)
    return MLP(params)


def _mlp_forward(params, X, scales):
    depth = sum(1 for k in params if k.endswith(".W"))
    Xa = augment(X)
    h = Xa @ params["embedding"].T
    cache = {"Xa": Xa, "layers": []}
    for i in range(1, depth + 1):
        z = h @ params[f"hidden{i}.W"].T + params[f"hidden{i}.b"]
        out = np.maximum(z, 0.0)
        s = scales(i - 1, out)
        cache["layers"].append((h, z, s, out))
        h = out / s
    cache["top"] = h
    return h @ params["unembedding"].T, cache


def _mlp_backward(params, cache, dlogits, stat_grad=False):
    grads = {"unembedding": dlogits.T @ cache["top"]}
    dh = dlogits @ params["unembedding"]
    for i in range(len(cache["layers"]), 0, -1):
        h, z, s, out = cache["layers"][i - 1]
        dz = _norm_grad(dh, out, s, stat_grad) * (z > 0)
        grads[f"hidden{i}.W"] = dz.T @ h
        grads[f"hidden{i}.b"] = dz.sum(axis=0)
        dh = dz @ params[f"hidden{i}.W"]
    grads["embedding"] = dh.T @ cache["Xa"]
    return grads


def mlp_forward(mlp: MLP, X, norm_scales=None):
    def scales(i, _out):
        return 1.0 if norm_scales is None else norm_scales[i]

    return _mlp_forward(mlp.params, np.atleast_2d(X), scales)[0]


# -- training loop ------------------------------------------------------------


@dataclass
class TrainResult:
    params: dict
    norm_states: list
    metrics: list  # rows of (epoch, train_loss, test_acc, lr)
    arch: str = "chinet"

    @property
    def scales(self) -> list[float]:
        return [s.running for s in self.norm_states]

    @property
    def net(self) -> ChiNet:
        """Raw trained chi-net (normalisation not folded in)."""
        return chinet_from_params(self.params)

    def folded(self) -> ChiNet:
        return fold_norm(self.net, self.norm_states)

    def predict_logits(self, X):
        if self.arch == "chinet":
            return forward(self.net, X, self.scales)
        return mlp_forward(MLP(self.params), X, self.scales)


def evaluate_logits(logits, labels) -> tuple[float, float]:
    labels = np.asarray(labels)
    if len(labels) == 0:
        return float("nan"), float("nan")
    loss, _ = softmax_xent_batch(logits, labels)
    return float(np.mean(np.argmax(logits, axis=1) == labels)), loss


def evaluate(net: ChiNet, images, labels, norm_scales=None, batch: int = 1024) -> tuple[float, float]:
    """Accuracy and mean cross-entropy of ``net`` (inputs are never perturbed)."""
    chunks = [forward(net, images[i:i + batch], norm_scales) for i in range(0, len(images), batch)]
    logits = np.concatenate(chunks) if chunks else np.zeros((0, net.n_classes))
    return evaluate_logits(logits, labels)


_ARCHS = {
    "chinet": (_chinet_forward, _chinet_backward),
    "relu": (_mlp_forward, _mlp_backward),
}


def _fit(params, arch, train_ds: Dataset, cfg: TrainConfig, test_ds, rng, log=None) -> TrainResult:
    if len(train_ds) == 0:
        raise ValueError("training dataset is empty")
    fwd, bwd = _ARCHS[arch]
    depth = sum(1 for k in params if k.endswith((".A", ".W")))
    states = [NormState(cfg.norm_momentum) for _ in range(depth)]

    def train_scales(i, out):
        if not cfg.normalise:
            return 1.0
        rms_norm_apply(out, states[i], training=True)
        return states[i].last

    n = len(train_ds)
    steps_per_epoch = math.ceil(n / cfg.batch_size)
    total_steps = steps_per_epoch * cfg.epochs
    moments = AdamState()
    metrics = []
    step = 0
    lr = cfg.learning_rate
    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(n)
        losses = []
        for start in range(0, n, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            X = add_noise(train_ds.images[idx], cfg.noise_sigma, rng, cfg.noise_mode)
            logits, cache = fwd(params, X, train_scales)
            loss, dlogits = softmax_xent_batch(logits, train_ds.labels[idx])
            grads = bwd(params, cache, dlogits, cfg.normalise and cfg.norm_stat_grad)
            lr = cosine_lr(step, total_steps, cfg.learning_rate) if cfg.schedule == "cosine" else cfg.learning_rate
            params = adamw_step(params, grads, moments, cfg, lr)
            losses.append(loss)
            step += 1
        result = TrainResult(params, states, metrics, arch)
        test_acc = float("nan")
        if test_ds is not None and len(test_ds):
            test_acc, _ = evaluate_logits(result.predict_logits(test_ds.images), test_ds.labels)
        metrics.append((epoch, float(np.mean(losses)), test_acc, lr))
        if log is not None:
            log(epoch, metrics[-1])
    return TrainResult(params, states, metrics, arch)


def train(net: ChiNet, dataset: Dataset, cfg: TrainConfig, test: Dataset | None = None,
          rng=None, log=None) -> TrainResult:
    """Train a factored chi-net. ``rng`` defaults to a stream seeded with ``cfg.seed``."""
    rng = np.random.default_rng(cfg.seed) if rng is None else rng
    return _fit(chinet_params(net), "chinet", dataset, cfg, test, rng, log)


def train_relu_baseline(dims, dataset: Dataset, cfg: TrainConfig, test: Dataset | None = None,
                        rng=None, log=None) -> TrainResult:
    """Train the ReLU MLP with the chi-net's widths; ``dims = (d_in, hidden, depth, n_classes)``."""
    rng = np.random.default_rng(cfg.seed) if rng is None else rng
    d_in, hidden, depth, n_classes = dims
    mlp = init_mlp(d_in, hidden, depth, n_classes, rng)
    return _fit(dict(mlp.params), "relu", dataset, cfg, test, rng, log)


def train_from_config(train_ds: Dataset, cfg: TrainConfig, test: Dataset | None = None,
                      arch: str = "chinet", n_classes: int | None = None, log=None) -> TrainResult:
    """Initialise from ``cfg.seed`` and train; the whole run draws from one RNG stream."""
    rng = np.random.default_rng(cfg.seed)
    n_classes = n_classes or train_ds.n_classes
    if arch == "chinet":
        net = init_chinet(train_ds.d_in, cfg.hidden, cfg.depth, n_classes, rng)
        return train(net, train_ds, cfg, test, rng, log)
    if arch == "relu":
        return train_relu_baseline((train_ds.d_in, cfg.hidden, cfg.depth, n_classes),
                                   train_ds, cfg, test, rng, log)
    raise ValueError(f"unknown architecture {arch!r}")


def config_fields() -> dict:
    return {f.name: f for f in dataclasses.fields(TrainConfig)}
