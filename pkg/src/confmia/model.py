"""Feed-forward softmax classifier trained with plain mini-batch SGD.

Model file layout (little-endian)::

    "CMLP" | version u32 = 1 | L u32 (affine layers) | activation u8
    | L+1 layer widths u64 (input, hidden..., classes)
    | for each layer: W f64[in*out] row-major (in, out), then b f64[out]
"""

from dataclasses import dataclass, field

import numpy as np

from . import binio
from .errors import TrainingDivergenceError, ValidationError
from .rng import generator

MAGIC = b"CMLP"
VERSION = 1
LOG_CLAMP = 1e-45
ACTIVATIONS = ("relu", "tanh")


@dataclass(frozen=True)
class Architecture:
    input_dim: int
    num_classes: int
    hidden_dims: tuple = (64,)
    activation: str = "relu"

    def __post_init__(self):
        object.__setattr__(self, "hidden_dims", tuple(int(h) for h in self.hidden_dims))
        if self.num_classes < 2:
            raise ValidationError("num_classes must be >= 2")
        if self.input_dim < 1 or any(h < 1 for h in self.hidden_dims):
            raise ValidationError("all layer widths must be >= 1")
        if self.activation not in ACTIVATIONS:
            raise ValidationError(f"unknown activation {self.activation!r}")

    @property
    def widths(self):
        return (self.input_dim, *self.hidden_dims, self.num_classes)


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 21
    batch_size: int = 32
    learning_rate: float = 0.1
    seed: int = 0
    init_scale: float = 0.1

    def validate(self):
        if self.epochs < 1:
            raise ValidationError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ValidationError("batch_size must be >= 1")
        if not self.learning_rate > 0:
            raise ValidationError("learning_rate must be > 0")
        if not self.init_scale > 0:
            raise ValidationError("init_scale must be > 0")


@dataclass(frozen=True, eq=False)
class Classifier:
    architecture: Architecture
    weights: tuple
    biases: tuple = field(default=())

    def __post_init__(self):
        widths = self.architecture.widths
        ws = tuple(np.array(w, dtype=np.float64) for w in self.weights)
        bs = tuple(np.array(b, dtype=np.float64) for b in self.biases)
        if len(ws) != len(widths) - 1 or len(bs) != len(ws):
            raise ValidationError("layer count does not match architecture")
        for k, (w, b) in enumerate(zip(ws, bs)):
            if w.shape != (widths[k], widths[k + 1]) or b.shape != (widths[k + 1],):
                raise ValidationError(f"layer {k} has inconsistent shape {w.shape}/{b.shape}")
            if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
                raise ValidationError(f"layer {k} has non-finite parameters")
            w.setflags(write=False)
            b.setflags(write=False)
        object.__setattr__(self, "weights", ws)
        object.__setattr__(self, "biases", bs)

    @classmethod
    def zeros(cls, arch):
        w = arch.widths
        return cls(arch,
                   tuple(np.zeros((w[k], w[k + 1])) for k in range(len(w) - 1)),
                   tuple(np.zeros(w[k + 1]) for k in range(len(w) - 1)))

    def parameters(self):
        """Parameters in file order: W0, b0, W1, b1, ..."""
        out = []
        for w, b in zip(self.weights, self.biases):
            out.extend((w, b))
        return out

    def with_parameters(self, params):
        return Classifier(self.architecture, tuple(params[0::2]), tuple(params[1::2]))

    def __eq__(self, other):
        if not isinstance(other, Classifier):
            return NotImplemented
        return model_to_bytes(self) == model_to_bytes(other)


def softmax(logits):
    """Row-wise softmax with max subtraction; works on vectors and matrices."""
    z = np.asarray(logits, dtype=np.float64)
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def _act(z, kind):
    return np.maximum(z, 0.0) if kind == "relu" else np.tanh(z)


def _act_grad(z, a, kind):
    return (z > 0).astype(np.float64) if kind == "relu" else 1.0 - a * a


def logits(model, X):
    a = np.asarray(X, dtype=np.float64)
    last = len(model.weights) - 1
    for k, (w, b) in enumerate(zip(model.weights, model.biases)):
        a = a @ w + b
        if k < last:
            a = _act(a, model.architecture.activation)
    return a


def _check_input(model, X):
    X = np.asarray(X, dtype=np.float64)
    d = model.architecture.input_dim
    if X.shape[-1:] != (d,) or X.ndim > 2:
        raise ValidationError(f"expected input of dimension {d}, got shape {X.shape}")
    if not np.all(np.isfinite(X)):
        raise ValidationError("input contains non-finite values")
    return X


def forward(model, x):
    """Class probabilities f(x) for one feature vector (or a batch of rows)."""
    return softmax(logits(model, _check_input(model, x)))


def cross_entropy(probs, y):
    probs = np.asarray(probs, dtype=np.float64)
    if not 0 <= y < probs.shape[-1]:
        raise ValidationError(f"class id {y} out of range for {probs.shape[-1]} classes")
    return float(-np.log(probs[y] + LOG_CLAMP))


def loss_and_grads(model, X, y):
    """Mean clamped cross-entropy over a batch and its parameter gradients.

    Gradients are returned in :meth:`Classifier.parameters` order.
    """
    return _loss_and_grads(model.weights, model.biases,
                           model.architecture.activation, X, y)


def _loss_and_grads(weights, biases, activation, X, y):
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    y = np.atleast_1d(np.asarray(y))
    n = X.shape[0]
    pre, post = [], [X]
    a = X
    last = len(weights) - 1
    for k, (w, b) in enumerate(zip(weights, biases)):
        z = a @ w + b
        pre.append(z)
        if k < last:
            a = _act(z, activation)
            post.append(a)
    p = softmax(z)
    rows = np.arange(n)
    py = p[rows, y]
    loss = float(np.mean(-np.log(py + LOG_CLAMP)))
    # d/dz of -log(p_y + eps) = p_y / (p_y + eps) * (p - onehot)
    delta = p.copy()
    delta[rows, y] -= 1.0
    delta *= (py / (py + LOG_CLAMP))[:, None] / n
    grads = [None] * (2 * len(weights))
    for k in range(last, -1, -1):
        grads[2 * k] = post[k].T @ delta
        grads[2 * k + 1] = delta.sum(axis=0)
        if k > 0:
            delta = (delta @ weights[k].T) * _act_grad(pre[k - 1], post[k], activation)
    return loss, grads


def init_classifier(arch, cfg, rng):
    w = arch.widths
    weights, biases = [], []
    for k in range(len(w) - 1):
        weights.append(rng.uniform(-cfg.init_scale, cfg.init_scale, size=(w[k], w[k + 1])))
        biases.append(rng.uniform(-cfg.init_scale, cfg.init_scale, size=w[k + 1]))
    return Classifier(arch, tuple(weights), tuple(biases))


def train(ds, arch, cfg, on_epoch=None):
    """Train a classifier on ``ds`` with seeded init and per-epoch shuffling.

    ``on_epoch(epoch, model)`` is called after every epoch when given.
    Raises :class:`TrainingDivergenceError` on a non-finite batch loss.
    """
    cfg.validate()
    if ds.num_examples == 0:
        raise ValidationError("cannot train on an empty dataset")
    if arch.input_dim != ds.dim or arch.num_classes != ds.num_classes:
        raise ValidationError(
            f"architecture ({arch.input_dim}->{arch.num_classes}) does not match "
            f"dataset ({ds.dim} features, {ds.num_classes} classes)")
    rng = generator(cfg.seed)
    params = init_classifier(arch, cfg, rng).parameters()
    params = [p.copy() for p in params]
    weights, biases = params[0::2], params[1::2]
    X, Y = ds.features, ds.labels
    for epoch in range(cfg.epochs):
        order = rng.permutation(ds.num_examples)
        for bi, start in enumerate(range(0, ds.num_examples, cfg.batch_size)):
            idx = order[start:start + cfg.batch_size]
            loss, grads = _loss_and_grads(weights, biases, arch.activation, X[idx], Y[idx])
            if not np.isfinite(loss) or not all(np.all(np.isfinite(g)) for g in grads):
                raise TrainingDivergenceError(epoch, bi)
            for p, g in zip(params, grads):
                p -= cfg.learning_rate * g
        if on_epoch is not None:
            on_epoch(epoch, Classifier(arch, tuple(weights), tuple(biases)))
    if not all(np.all(np.isfinite(p)) for p in params):
        raise TrainingDivergenceError(cfg.epochs - 1, -1)
    return Classifier(arch, tuple(weights), tuple(biases))


def accuracy(model, ds):
    return float(np.mean(np.argmax(logits(model, ds.features), axis=1) == ds.labels))


def mean_loss(model, ds):
    return loss_and_grads(model, ds.features, ds.labels)[0]


def gradient_check(model, x, y, epsilon=1e-5, max_params=200, seed=0):
    """Max relative error between analytic and central-difference gradients.

    Up to ``max_params`` parameter coordinates are sampled (all of them when
    the model is smaller). Relative error is ``|a - n| / max(|a|, |n|, 1e-6)``.
    """
    if not 0 < epsilon <= 1e-2:
        raise ValidationError("epsilon must lie in (0, 1e-2]")
    x = _check_input(model, x)
    _, grads = loss_and_grads(model, x, [y])
    params = [p.copy() for p in model.parameters()]
    coords = [(k, i) for k, p in enumerate(params) for i in range(p.size)]
    if len(coords) > max_params:
        pick = generator(seed).choice(len(coords), size=max_params, replace=False)
        coords = [coords[i] for i in np.sort(pick)]
    worst = 0.0
    for k, i in coords:
        flat = params[k].reshape(-1)
        orig = flat[i]
        flat[i] = orig + epsilon
        up = cross_entropy(forward(model.with_parameters(params), x), y)
        flat[i] = orig - epsilon
        down = cross_entropy(forward(model.with_parameters(params), x), y)
        flat[i] = orig
        numeric = (up - down) / (2 * epsilon)
        analytic = grads[k].reshape(-1)[i]
        denom = max(abs(analytic), abs(numeric), 1e-6)
        worst = max(worst, abs(analytic - numeric) / denom)
    return worst


def model_to_bytes(model):
    arch = model.architecture
    w = arch.widths
    out = [MAGIC, binio.U32.pack(VERSION), binio.U32.pack(len(w) - 1),
           binio.U8.pack(ACTIVATIONS.index(arch.activation))]
    out += [binio.U64.pack(x) for x in w]
    for p in model.parameters():
        out.append(binio.f64le(p))
    return b"".join(out)


def model_from_bytes(data, path=None):
    r = binio.Reader(data, path)
    r.magic(MAGIC)
    r.version(VERSION)
    nl_off = r.pos
    n_layers = r.u32("layer count")
    if n_layers < 1:
        r.fail("model needs at least one layer", nl_off)
    act_off = r.pos
    act = r.u8("activation code")
    if act >= len(ACTIVATIONS):
        r.fail(f"unknown activation code {act}", act_off)
    dims_off = r.pos
    widths = [r.u64("layer width") for _ in range(n_layers + 1)]
    try:
        arch = Architecture(widths[0], widths[-1], tuple(widths[1:-1]), ACTIVATIONS[act])
    except ValidationError as exc:
        r.fail(str(exc), dims_off)
    params = []
    for k in range(n_layers):
        params.append(r.array("<f8", widths[k] * widths[k + 1], f"layer {k} weights")
                      .reshape(widths[k], widths[k + 1]))
        params.append(r.array("<f8", widths[k + 1], f"layer {k} biases"))
    r.finish()
    try:
        return Classifier(arch, tuple(params[0::2]), tuple(params[1::2]))
    except ValidationError as exc:
        r.fail(str(exc), dims_off)


def save_model(model, path):
    binio.write_atomic(path, model_to_bytes(model))


def load_model(path):
    r = binio.read_file(path)
    return model_from_bytes(r.data, r.path)
