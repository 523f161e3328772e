"""Small feedforward networks written directly against numpy.

The networks here are surrogates for one-step dynamics, so besides the usual
forward pass and MSE training they expose the exact Jacobian of the output
with respect to the input (needed by the costate recursion).

Weights are stored per layer as ``(out, in)`` matrices, so a layer computes
``z = a @ W.T + b`` on a batch ``a`` of shape ``(n, in)``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import TrainingDivergedError, ValidationError

MODEL_FORMAT_VERSION = 1

ACTIVATIONS = ("sigmoid", "tanh", "relu", "identity")


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def _activate(tag, z):
    if tag == "tanh":
        return np.tanh(z)
    if tag == "sigmoid":
        return _sigmoid(z)
    if tag == "relu":
        return np.maximum(z, 0.0)
    return z


def _activate_grad(tag, z, a):
    # a is the activation output for z; reused where the derivative allows it
    if tag == "tanh":
        return 1.0 - a * a
    if tag == "sigmoid":
        return a * (1.0 - a)
    if tag == "relu":
        return (z > 0.0).astype(z.dtype)
    return np.ones_like(z)


@dataclass(frozen=True)
class MlpSpec:
    """Architecture of a fully connected network with a linear output layer."""

    layer_sizes: tuple
    activations: tuple
    seed: int = 0

    def __post_init__(self):
        sizes = tuple(int(s) for s in self.layer_sizes)
        acts = tuple(self.activations)
        object.__setattr__(self, "layer_sizes", sizes)
        object.__setattr__(self, "activations", acts)
        if len(sizes) < 2:
            raise ValidationError("layer_sizes needs at least an input and an output size")
        if any(s < 1 for s in sizes):
            raise ValidationError(f"layer_sizes must be positive, got {list(sizes)}")
        if len(acts) != len(sizes) - 2:
            raise ValidationError(
                f"expected {len(sizes) - 2} hidden activations, got {len(acts)}")
        for a in acts:
            if a not in ACTIVATIONS:
                raise ValidationError(f"unknown activation {a!r}; choose from {ACTIVATIONS}")
        if not 0 <= int(self.seed) < 2**64:
            raise ValidationError("seed must be an unsigned 64-bit integer")

    @property
    def input_dim(self):
        return self.layer_sizes[0]

    @property
    def output_dim(self):
        return self.layer_sizes[-1]


@dataclass
class MlpNetwork:
    spec: MlpSpec
    weights: list
    biases: list

    def __post_init__(self):
        sizes = self.spec.layer_sizes
        if len(self.weights) != len(sizes) - 1 or len(self.biases) != len(sizes) - 1:
            raise ValidationError("number of weight/bias arrays does not match layer_sizes")
        self.weights = [np.asarray(w, dtype=np.float64) for w in self.weights]
        self.biases = [np.asarray(b, dtype=np.float64) for b in self.biases]
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.shape != (sizes[i + 1], sizes[i]) or b.shape != (sizes[i + 1],):
                raise ValidationError(
                    f"layer {i}: expected W {(sizes[i + 1], sizes[i])} and b {(sizes[i + 1],)}, "
                    f"got {w.shape} and {b.shape}")
            if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
                raise ValidationError(f"layer {i} has non-finite parameters")

    @property
    def activations(self):
        # output layer is always linear
        return self.spec.activations + ("identity",)

    def copy(self):
        return MlpNetwork(self.spec, [w.copy() for w in self.weights],
                          [b.copy() for b in self.biases])

    def __call__(self, x):
        return forward(self, x)


@dataclass
class Dataset:
    inputs: np.ndarray
    targets: np.ndarray
    ranges: list = field(default_factory=list)
    noise_sigma: float = 0.0
    seed: int = 0
    # number of leading input columns that are states (the rest are controls)
    state_dim: int = 0

    def __post_init__(self):
        self.inputs = np.atleast_2d(np.asarray(self.inputs, dtype=np.float64))
        self.targets = np.asarray(self.targets, dtype=np.float64)
        if self.targets.ndim == 1:
            self.targets = self.targets[:, None]
        n = self.inputs.shape[0]
        if n < 1:
            raise ValidationError("dataset must contain at least one sample")
        if self.targets.shape[0] != n:
            raise ValidationError(
                f"inputs have {n} rows but targets have {self.targets.shape[0]}")
        if not (np.all(np.isfinite(self.inputs)) and np.all(np.isfinite(self.targets))):
            raise ValidationError("dataset contains non-finite entries")

    def __len__(self):
        return self.inputs.shape[0]


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 200
    batch_size: int = 256
    learning_rate: float = 1e-3
    optimizer: str = "adam"
    train_fraction: float = 0.8
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    # multiplicative learning-rate decay applied at the end of every epoch
    lr_decay: float = 1.0

    def __post_init__(self):
        if int(self.epochs) < 1 or int(self.batch_size) < 1:
            raise ValidationError("epochs and batch_size must be positive")
        if not self.learning_rate > 0:
            raise ValidationError("learning_rate must be positive")
        if self.optimizer not in ("sgd", "adam"):
            raise ValidationError(f"optimizer must be 'sgd' or 'adam', got {self.optimizer!r}")
        if not 0.0 < self.train_fraction <= 1.0:
            raise ValidationError("train_fraction must lie in (0, 1]")
        if not 0.0 < self.lr_decay <= 1.0:
            raise ValidationError("lr_decay must lie in (0, 1]")


@dataclass
class TrainReport:
    final_train_mse: float
    test_ape_percent: float
    epochs_run: int
    loss_curve: list
    initial_train_mse: float = float("nan")
    # largest absolute error on the held-out split, per output
    test_max_abs_error: float = float("nan")

    def as_dict(self):
        return {
            "final_train_mse": self.final_train_mse,
            "test_ape_percent": self.test_ape_percent,
            "epochs_run": self.epochs_run,
            "initial_train_mse": self.initial_train_mse,
            "test_max_abs_error": self.test_max_abs_error,
        }


def mlp_init(spec: MlpSpec) -> MlpNetwork:
    """Xavier-uniform weights and zero biases, reproducible from ``spec.seed``."""
    rng = np.random.default_rng(spec.seed)
    weights, biases = [], []
    for fan_in, fan_out in zip(spec.layer_sizes[:-1], spec.layer_sizes[1:]):
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-limit, limit, size=(fan_out, fan_in)))
        biases.append(np.zeros(fan_out))
    return MlpNetwork(spec, weights, biases)


def _as_batch(net, x):
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    xb = x[None, :] if single else x
    if xb.ndim != 2 or xb.shape[1] != net.spec.input_dim:
        raise ValidationError(
            f"network expects inputs of length {net.spec.input_dim}, got shape {x.shape}")
    return xb, single


def _forward_cache(net, xb):
    zs, acts = [], [xb]
    a = xb
    for w, b, tag in zip(net.weights, net.biases, net.activations):
        z = a @ w.T + b
        a = _activate(tag, z)
        zs.append(z)
        acts.append(a)
    return zs, acts


def forward(net: MlpNetwork, x) -> np.ndarray:
    """Evaluate the network on one input vector or on a batch of rows."""
    xb, single = _as_batch(net, x)
    a = xb
    for w, b, tag in zip(net.weights, net.biases, net.activations):
        a = _activate(tag, a @ w.T + b)
    return a[0] if single else a


def input_jacobian(net: MlpNetwork, x) -> np.ndarray:
    """Exact d(output)/d(input).

    Returns ``(out, in)`` for a single input, ``(n, out, in)`` for a batch.
    """
    xb, single = _as_batch(net, x)
    zs, acts = _forward_cache(net, xb)
    n = xb.shape[0]
    k = net.spec.output_dim
    g = np.broadcast_to(np.eye(k), (n, k, k))
    for layer in range(len(net.weights) - 1, -1, -1):
        tag = net.activations[layer]
        if tag != "identity":
            g = g * _activate_grad(tag, zs[layer], acts[layer + 1])[:, None, :]
        g = g @ net.weights[layer]
    return g[0] if single else g


def mse_gradients(net: MlpNetwork, inputs, targets):
    """Mean squared error over all samples and outputs, and its parameter gradients.

    Returns ``(loss, weight_grads, bias_grads)``.
    """
    xb, _ = _as_batch(net, inputs)
    y = np.asarray(targets, dtype=np.float64).reshape(xb.shape[0], -1)
    zs, acts = _forward_cache(net, xb)
    resid = acts[-1] - y
    loss = float(np.mean(resid * resid))
    delta = 2.0 * resid / resid.size
    gw = [None] * len(net.weights)
    gb = [None] * len(net.weights)
    for layer in range(len(net.weights) - 1, -1, -1):
        tag = net.activations[layer]
        if tag != "identity":
            delta = delta * _activate_grad(tag, zs[layer], acts[layer + 1])
        gw[layer] = delta.T @ acts[layer]
        gb[layer] = delta.sum(axis=0)
        if layer:
            delta = delta @ net.weights[layer]
    return loss, gw, gb


def ape(predictions, targets, eps=1e-3) -> float:
    """Average percentage error, denominators floored at ``eps``."""
    p = np.asarray(predictions, dtype=np.float64).ravel()
    t = np.asarray(targets, dtype=np.float64).ravel()
    if p.size == 0 or t.size == 0:
        raise ValidationError("ape needs at least one sample")
    if p.shape != t.shape:
        raise ValidationError(f"length mismatch: {p.size} predictions vs {t.size} targets")
    return float(np.mean(np.abs(p - t) / np.maximum(np.abs(t), eps)) * 100.0)


def split_indices(n, train_fraction, seed):
    """Deterministic shuffled train/test split.  The test part may be empty."""
    order = np.random.default_rng(seed).permutation(n)
    n_train = max(1, int(round(train_fraction * n)))
    return order[:n_train], order[n_train:]


def _fold_scaling(net, x_mean, x_scale, y_mean, y_scale):
    """Rewrite a net trained on standardized data so it acts on raw data."""
    out = net.copy()
    w0 = out.weights[0] / x_scale
    out.biases[0] = out.biases[0] - w0 @ x_mean
    out.weights[0] = w0
    out.weights[-1] = out.weights[-1] * y_scale[:, None]
    out.biases[-1] = out.biases[-1] * y_scale + y_mean
    return out


def train(net: MlpNetwork, data: Dataset, cfg: TrainConfig):
    """Minibatch MSE training.

    Inputs and targets are standardized with training-split statistics and the
    scaling is folded back into the first and last layers afterwards, so the
    returned network maps raw inputs to raw targets. ``net`` itself is not
    modified; the trained copy is returned together with the report.
    """
    if data.inputs.shape[1] != net.spec.input_dim or data.targets.shape[1] != net.spec.output_dim:
        raise ValidationError(
            f"dataset is {data.inputs.shape[1]}->{data.targets.shape[1]} but network is "
            f"{net.spec.input_dim}->{net.spec.output_dim}")

    train_idx, test_idx = split_indices(len(data), cfg.train_fraction, cfg.seed)
    x_tr, y_tr = data.inputs[train_idx], data.targets[train_idx]

    x_mean = x_tr.mean(axis=0)
    x_scale = x_tr.std(axis=0)
    x_scale[x_scale < 1e-12] = 1.0
    y_mean = y_tr.mean(axis=0)
    y_scale = y_tr.std(axis=0)
    y_scale[y_scale < 1e-12] = 1.0
    xs = (x_tr - x_mean) / x_scale
    ys = (y_tr - y_mean) / y_scale

    # initial parameters are interpreted in standardized coordinates
    work = net.copy()
    params = work.weights + work.biases
    m = [np.zeros_like(p) for p in params]
    v = [np.zeros_like(p) for p in params]
    rng = np.random.default_rng([cfg.seed, 1])
    n = xs.shape[0]
    lr = cfg.learning_rate
    step = 0
    nl = len(work.weights)

    def raw_mse():
        pred = forward(_fold_scaling(work, x_mean, x_scale, y_mean, y_scale), x_tr)
        return float(np.mean((pred - y_tr) ** 2))

    initial = raw_mse()
    curve = []
    for epoch in range(cfg.epochs):
        order = rng.permutation(n)
        for bi, start in enumerate(range(0, n, cfg.batch_size)):
            idx = order[start:start + cfg.batch_size]
            loss, gw, gb = mse_gradients(work, xs[idx], ys[idx])
            if not np.isfinite(loss):
                raise TrainingDivergedError(epoch, bi)
            grads = gw + gb
            step += 1
            if cfg.optimizer == "adam":
                c1 = 1.0 - cfg.beta1 ** step
                c2 = 1.0 - cfg.beta2 ** step
                for p, g, mi, vi in zip(params, grads, m, v):
                    mi *= cfg.beta1
                    mi += (1.0 - cfg.beta1) * g
                    vi *= cfg.beta2
                    vi += (1.0 - cfg.beta2) * g * g
                    p -= lr * (mi / c1) / (np.sqrt(vi / c2) + cfg.eps)
            else:
                for p, g in zip(params, grads):
                    p -= lr * g
        lr *= cfg.lr_decay
        epoch_mse = raw_mse()
        if not np.isfinite(epoch_mse):
            raise TrainingDivergedError(epoch, -1)
        curve.append(epoch_mse)
    work.weights, work.biases = params[:nl], params[nl:]

    trained = _fold_scaling(work, x_mean, x_scale, y_mean, y_scale)
    x_te, y_te = (data.inputs[test_idx], data.targets[test_idx]) if len(test_idx) else (x_tr, y_tr)
    pred = forward(trained, x_te)
    report = TrainReport(curve[-1], ape(pred, y_te), cfg.epochs, curve, initial,
                         float(np.max(np.abs(pred - y_te))))
    return trained, report


def network_to_dict(net: MlpNetwork) -> dict:
    return {
        "version": MODEL_FORMAT_VERSION,
        "layer_sizes": list(net.spec.layer_sizes),
        "activations": list(net.spec.activations),
        "seed": int(net.spec.seed),
        "weights": [w.tolist() for w in net.weights],
        "biases": [b.tolist() for b in net.biases],
    }


def network_from_dict(doc: dict) -> MlpNetwork:
    if doc.get("version") != MODEL_FORMAT_VERSION:
        raise ValidationError(f"unsupported model version {doc.get('version')!r}")
    try:
        spec = MlpSpec(tuple(doc["layer_sizes"]), tuple(doc["activations"]), int(doc.get("seed", 0)))
        return MlpNetwork(spec, [np.array(w, dtype=np.float64) for w in doc["weights"]],
                          [np.array(b, dtype=np.float64) for b in doc["biases"]])
    except KeyError as exc:
        raise ValidationError(f"model document is missing field {exc.args[0]!r}") from None


def save_network(net: MlpNetwork, path) -> None:
    # json writes floats with repr(), which round-trips float64 exactly
    Path(path).write_text(json.dumps(network_to_dict(net), indent=1) + "\n")


def load_network(path) -> MlpNetwork:
    return network_from_dict(json.loads(Path(path).read_text()))
