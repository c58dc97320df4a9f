"""Neural IK trained through a frozen forward-kinematics model.

The network maps a normalized pose ``(p / L, q)`` to ``2n`` raw outputs read as
``(sin, cos)`` pairs. Training never sees joint targets: the predicted angles
are pushed through forward kinematics and the Cartesian loss of
:mod:`ikforge.metrics` is backpropagated through the analytic FK gradient,
the ``atan2`` decoding and the dense layers.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ikforge import __version__
from ikforge import quaternion as quat
from ikforge.chain import ChainSpec, Pose, forward_kinematics
from ikforge.metrics import LossWeights, decode_config, loss_and_grad, penalized_loss

PRESETS = {
    "planar3": (256, 256),
    "arm6": (512,) * 6,
    "chain15": (1024,) * 3,
}
DESK_PRESETS = {**PRESETS, "chain15": (256,) * 3}
# activation and weight decay per chain; chains not listed use the
# MlpSpec / TrainOpts defaults. The redundant 15-DoF chain overfits a relu
# net at 32000 samples, tanh plus decay generalizes far better.
TRAINING_PRESETS = {"chain15": {"activation": "tanh", "weight_decay": 0.03}}

FORMAT_TAG = "ikforge-model"
FORMAT_VERSION = "v1"

# keeps the decode Jacobian finite if a raw pair collapses to (0, 0)
_MIN_RADIUS2 = 1e-30


class ModelFormatError(ValueError):
    """A model document is malformed or inconsistent."""


class TrainingDivergedError(RuntimeError):
    pass


def _tanh(x):
    return np.tanh(x)


def _tanh_grad(y):
    return 1.0 - y * y


def _relu(x):
    return np.maximum(x, 0.0)


def _relu_grad(y):
    return (y > 0.0).astype(y.dtype)


# activation -> (function, derivative expressed through the activation output)
ACTIVATIONS = {"tanh": (_tanh, _tanh_grad), "relu": (_relu, _relu_grad)}


@dataclass(frozen=True)
class MlpSpec:
    output_dim: int
    hidden: tuple = (256, 256)
    input_dim: int = 7
    activation: str = "relu"
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))
        if self.input_dim != 7:
            raise ValueError("input_dim must be 7 (position + quaternion)")
        if self.output_dim < 2 or self.output_dim % 2:
            raise ValueError("output_dim must be 2 * DoF")
        if any(h < 1 for h in self.hidden):
            raise ValueError("hidden widths must be >= 1")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")

    @classmethod
    def for_chain(cls, chain: ChainSpec, hidden=None, **kw):
        if hidden is None:
            hidden = PRESETS.get(chain.name, (256, 256))
        return cls(output_dim=2 * chain.dof, hidden=tuple(hidden), **kw)

    @property
    def widths(self):
        return (self.input_dim, *self.hidden, self.output_dim)


@dataclass
class MlpParams:
    """Weights ``W`` with shape ``(fan_out, fan_in)`` and biases per layer."""

    weights: list
    biases: list

    def __post_init__(self):
        if len(self.weights) != len(self.biases) or not self.weights:
            raise ValueError("weights and biases must be non-empty and of equal count")
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.ndim != 2 or b.shape != (w.shape[0],):
                raise ValueError(f"layer {i}: bias shape {b.shape} does not match weights {w.shape}")
            if i and w.shape[1] != self.weights[i - 1].shape[0]:
                raise ValueError(f"layer {i}: fan-in {w.shape[1]} does not match previous "
                                 f"width {self.weights[i - 1].shape[0]}")

    @property
    def widths(self):
        return (self.weights[0].shape[1], *(w.shape[0] for w in self.weights))

    def arrays(self):
        return [*self.weights, *self.biases]

    def copy(self):
        return MlpParams([w.copy() for w in self.weights], [b.copy() for b in self.biases])


def init_mlp(spec: MlpSpec) -> MlpParams:
    """Glorot-uniform weights and zero biases, deterministic in ``spec.seed``."""
    rng = np.random.default_rng(spec.seed)
    weights, biases = [], []
    widths = spec.widths
    for fan_in, fan_out in zip(widths[:-1], widths[1:]):
        bound = math.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-bound, bound, size=(fan_out, fan_in)))
        biases.append(np.zeros(fan_out))
    return MlpParams(weights, biases)


def center_output(params: MlpParams, config, gain: float):
    """Set the output biases so the untouched network leans toward ``config``.

    Each (sin, cos) bias pair becomes ``gain * (sin, cos)`` of the joint
    value. With all-zero biases the initial prediction is a random angle per
    input, and for chains with several IK branches the optimizer then
    settles on different branches in different parts of the workspace.
    """
    config = np.asarray(config, dtype=float)
    b = params.biases[-1]
    if b.shape != (2 * len(config),):
        raise ValueError("config length does not match the network output")
    b[0::2] = gain * np.sin(config)
    b[1::2] = gain * np.cos(config)
    return params


def _forward(params, x, activation):
    act = ACTIVATIONS[activation][0]
    hs = [x]
    h = x
    last = len(params.weights) - 1
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        h = h @ w.T + b
        if i < last:
            h = act(h)
        hs.append(h)
    return hs


def mlp_forward(params: MlpParams, x, activation="relu"):
    """Raw outputs for one input (7,) or a batch (B, 7); the output layer is linear."""
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != params.widths[0]:
        raise ValueError(f"input has {x.shape[-1]} features, network expects {params.widths[0]}")
    return _forward(params, x, activation)[-1]


def normalize_pose(position, orientation, scale):
    """Network input ``(p * scale, canonical q)`` for one pose or a batch."""
    p = np.asarray(position, dtype=float) * scale
    q = quat.canonical(quat.normalize(orientation))
    return np.concatenate([p, q], axis=-1)


def dt_loss(chain: ChainSpec, raw_output, target: Pose, weights: LossWeights = LossWeights()) -> float:
    """Decode raw outputs and score the implied configuration against ``target``."""
    raw = np.asarray(raw_output, dtype=float)
    if raw.shape != (2 * chain.dof,):
        raise ValueError(f"raw output must have length {2 * chain.dof}")
    return penalized_loss(chain, decode_config(raw), target, weights)


def _decode_grad(raw, g_theta):
    """Chain ``dL/dtheta`` through ``theta = atan2(s, c)``."""
    s = raw[..., 0::2]
    c = raw[..., 1::2]
    r2 = np.maximum(s * s + c * c, _MIN_RADIUS2)
    out = np.empty_like(raw)
    out[..., 0::2] = g_theta * c / r2
    out[..., 1::2] = -g_theta * s / r2
    return out


def _batch_loss_grad(chain, params, activation, x, target_p, target_q, weights):
    """Mean loss over the batch and its gradient for every parameter array."""
    hs = _forward(params, x, activation)
    raw = hs[-1]
    theta = np.arctan2(raw[:, 0::2], raw[:, 1::2])
    loss, g_theta = loss_and_grad(chain, theta, target_p, target_q, weights)
    batch = len(x)
    delta = _decode_grad(raw, g_theta) / batch
    dact = ACTIVATIONS[activation][1]
    gw = [None] * len(params.weights)
    gb = [None] * len(params.weights)
    for i in range(len(params.weights) - 1, -1, -1):
        gw[i] = delta.T @ hs[i]
        gb[i] = delta.sum(axis=0)
        if i:
            delta = (delta @ params.weights[i]) * dact(hs[i])
    return float(np.mean(loss)), MlpParams(gw, gb)


def dt_backward(chain: ChainSpec, params: MlpParams, x, target: Pose,
                weights: LossWeights = LossWeights(), activation="relu"):
    """Gradient of :func:`dt_loss` (mean over a batch) w.r.t. every network parameter.

    ``x`` is one normalized input (7,) or a batch (B, 7); ``target`` is a Pose
    or a pair of arrays ``(positions, quaternions)`` matching the batch.
    Returns ``(loss, grads)`` with ``grads`` shaped like ``params``.
    """
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != params.widths[0]:
        raise ValueError(f"input has {x.shape[-1]} features, network expects {params.widths[0]}")
    if params.widths[-1] != 2 * chain.dof:
        raise ValueError("network output does not match the chain DoF")
    if isinstance(target, Pose):
        tp, tq = target.position, target.orientation
    else:
        tp, tq = target
    x2 = np.atleast_2d(x)
    tp = np.broadcast_to(tp, (len(x2), 3))
    tq = np.broadcast_to(tq, (len(x2), 4))
    return _batch_loss_grad(chain, params, activation, x2, tp, tq, weights)


SCHEDULES = ("cosine", "constant")


def scheduled_lr(opts, epoch):
    """Learning rate for the 0-based ``epoch``."""
    if opts.schedule == "constant":
        return opts.learning_rate
    return 0.5 * opts.learning_rate * (1.0 + math.cos(math.pi * epoch / opts.max_epochs))


@dataclass(frozen=True)
class TrainOpts:
    weights: LossWeights = LossWeights()
    learning_rate: float = 3e-3
    batch_size: int = 64
    max_epochs: int = 800
    validation_fraction: float = 0.1
    patience: int = 100
    seed: int = 0
    # "cosine" anneals the learning rate to zero over max_epochs,
    # "constant" keeps it fixed
    schedule: str = "cosine"
    # output biases start at center_gain * (sin, cos) of the joint-range
    # midpoints; 0 keeps the all-zero initialization
    center_gain: float = 2.0
    # decoupled decay of the weight matrices (biases are not decayed)
    weight_decay: float = 0.0

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if not 0.0 <= self.validation_fraction < 1.0:
            raise ValueError("validation_fraction must lie in [0, 1)")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be > 0")
        if self.max_epochs < 1 or self.patience < 1:
            raise ValueError("max_epochs and patience must be >= 1")
        if not self.center_gain >= 0:
            raise ValueError("center_gain must be >= 0")
        if not self.weight_decay >= 0:
            raise ValueError("weight_decay must be >= 0")
        if self.schedule not in SCHEDULES:
            raise ValueError(f"unknown schedule {self.schedule!r}; expected one of {SCHEDULES}")


@dataclass(frozen=True, eq=False)
class TrainedModel:
    chain_name: str
    dof: int
    spec: MlpSpec
    params: MlpParams
    scale: float
    history: tuple = ()
    meta: dict = field(default_factory=dict)

    def predict(self, target: Pose):
        return predict(self, target)

    def predict_batch(self, positions, orientations):
        return predict_batch(self, positions, orientations)


class Adam:
    """Adaptive-moment optimizer over a list of arrays, updated in place.

    ``weight_decay`` shrinks the arrays flagged in ``decayed`` by
    ``lr * weight_decay`` per step, separately from the gradient moments.
    """

    def __init__(self, arrays, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8, weight_decay=0.0, decayed=None):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.weight_decay = weight_decay
        self.decayed = [True] * len(arrays) if decayed is None else list(decayed)
        self.m = [np.zeros_like(a) for a in arrays]
        self.v = [np.zeros_like(a) for a in arrays]
        self.t = 0

    def step(self, arrays, grads):
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for a, g, m, v, dec in zip(arrays, grads, self.m, self.v, self.decayed):
            if dec and self.weight_decay:
                a *= 1.0 - self.lr * self.weight_decay
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            a -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def _mean_loss(chain, params, activation, x, tp, tq, weights, chunk=4096):
    total = 0.0
    for i in range(0, len(x), chunk):
        raw = _forward(params, x[i:i + chunk], activation)[-1]
        theta = np.arctan2(raw[:, 0::2], raw[:, 1::2])
        loss, _ = loss_and_grad(chain, theta, tp[i:i + chunk], tq[i:i + chunk], weights, need_grad=False)
        total += float(np.sum(loss))
    return total / len(x)


def train(chain: ChainSpec, dataset, spec: MlpSpec | None = None, opts: TrainOpts | None = None,
          callback=None) -> TrainedModel:
    """Fit a network by mini-batch Adam on the mean distal-teaching loss.

    ``dataset`` is a :class:`ikforge.datasets.Dataset` or a ``(positions,
    orientations)`` pair; only the poses are used. A validation split is
    carved from it; training stops after ``patience`` epochs without a
    validation improvement (or after ``max_epochs``) and returns the best
    parameters seen. The learning rate follows ``opts.schedule``. ``callback``
    receives ``(epoch, train_loss, val_loss)`` after every epoch.
    """
    spec = spec or MlpSpec.for_chain(chain)
    opts = opts or TrainOpts()
    if spec.output_dim != 2 * chain.dof:
        raise ValueError("spec output_dim does not match the chain DoF")
    if hasattr(dataset, "positions"):
        positions, orientations = dataset.positions, dataset.orientations
    else:
        positions, orientations = dataset
    positions = np.asarray(positions, dtype=float)
    orientations = quat.canonical(quat.normalize(orientations))
    count = len(positions)
    if count == 0:
        raise ValueError("cannot train on an empty dataset")

    scale = 1.0 / chain.total_length
    rng = np.random.default_rng(opts.seed)
    order = rng.permutation(count)
    n_val = int(round(opts.validation_fraction * count))
    if n_val >= count:
        n_val = count - 1
    val_idx, train_idx = order[:n_val], order[n_val:]

    x_all = normalize_pose(positions, orientations, scale)
    x_tr, p_tr, q_tr = x_all[train_idx], positions[train_idx], orientations[train_idx]
    x_va, p_va, q_va = x_all[val_idx], positions[val_idx], orientations[val_idx]

    params = init_mlp(spec)
    if opts.center_gain:
        center_output(params, 0.5 * (chain.lower + chain.upper), opts.center_gain)
    arrays = params.arrays()
    decayed = [True] * len(params.weights) + [False] * len(params.biases)
    optimizer = Adam(arrays, lr=opts.learning_rate, weight_decay=opts.weight_decay, decayed=decayed)
    best, best_val, since_best = params.copy(), math.inf, 0
    history = []
    n_train = len(train_idx)
    for epoch in range(opts.max_epochs):
        optimizer.lr = scheduled_lr(opts, epoch)
        perm = rng.permutation(n_train)
        total = 0.0
        for start in range(0, n_train, opts.batch_size):
            idx = perm[start:start + opts.batch_size]
            loss, grads = _batch_loss_grad(chain, params, spec.activation, x_tr[idx],
                                           p_tr[idx], q_tr[idx], opts.weights)
            if not math.isfinite(loss):
                raise TrainingDivergedError(
                    f"non-finite loss at epoch {epoch + 1}, batch starting at {start}; "
                    f"try a smaller learning rate (currently {opts.learning_rate})")
            optimizer.step(arrays, grads.arrays())
            total += loss * len(idx)
        train_loss = total / n_train
        if n_val:
            val_loss = _mean_loss(chain, params, spec.activation, x_va, p_va, q_va, opts.weights)
        else:
            val_loss = train_loss
        history.append((train_loss, val_loss))
        if callback is not None:
            callback(epoch + 1, train_loss, val_loss)
        if val_loss < best_val:
            best, best_val, since_best = params.copy(), val_loss, 0
        else:
            since_best += 1
            if since_best >= opts.patience:
                break

    meta = {"seed": opts.seed, "w": opts.weights.w, "lam": opts.weights.lam,
            "learning_rate": opts.learning_rate, "schedule": opts.schedule,
            "center_gain": opts.center_gain, "weight_decay": opts.weight_decay, "batch_size": opts.batch_size,
            "samples": count, "validation": n_val, "epochs": len(history), "version": __version__}
    return TrainedModel(chain.name, chain.dof, spec, best, scale, tuple(history), meta)


def predict(model: TrainedModel, target: Pose):
    """Joint configuration for one pose (constant-time in the query)."""
    x = normalize_pose(target.position, target.orientation, model.scale)
    raw = _forward(model.params, x, model.spec.activation)[-1]
    return np.arctan2(raw[0::2], raw[1::2])


def predict_batch(model: TrainedModel, positions, orientations):
    """Configurations for a batch of poses ``(B, 3)``, ``(B, 4)`` in one pass."""
    x = normalize_pose(positions, orientations, model.scale)
    raw = _forward(model.params, np.atleast_2d(x), model.spec.activation)[-1]
    return np.arctan2(raw[:, 0::2], raw[:, 1::2])


def predicted_pose(chain: ChainSpec, model: TrainedModel, target: Pose) -> Pose:
    return forward_kinematics(chain, predict(model, target))


# -- model files --------------------------------------------------------------

def save_model(model: TrainedModel, destination=None):
    """Serialize to the versioned text format; returns the text if no destination.

    Layout: header ``ikforge-model v1 <chain> <dof>``, ``scale <s>``,
    ``layers <k>``, then per layer ``<rows> <cols>``, ``rows`` lines of
    weights and one line of ``rows`` biases. Lines starting with ``#`` carry
    the activation, seed, metadata and per-epoch history.
    """
    fmt = repr
    lines = [f"{FORMAT_TAG} {FORMAT_VERSION} {model.chain_name} {model.dof}",
             f"# mlp activation={model.spec.activation} seed={model.spec.seed}",
             "# meta " + " ".join(f"{k}={v}" for k, v in model.meta.items()),
             f"scale {fmt(float(model.scale))}",
             f"layers {len(model.params.weights)}"]
    for w, b in zip(model.params.weights, model.params.biases):
        lines.append(f"{w.shape[0]} {w.shape[1]}")
        lines.extend(" ".join(fmt(float(v)) for v in row) for row in w)
        lines.append(" ".join(fmt(float(v)) for v in b))
    for i, (tr, va) in enumerate(model.history):
        lines.append(f"# history {i + 1} {fmt(float(tr))} {fmt(float(va))}")
    text = "\n".join(lines) + "\n"
    if destination is None:
        return text
    if hasattr(destination, "write"):
        destination.write(text)
    else:
        with open(destination, "w", encoding="utf-8") as fh:
            fh.write(text)
    return None


def _floats(line, expected, where):
    try:
        vals = np.array([float(v) for v in line.split()])
    except ValueError:
        raise ModelFormatError(f"{where}: non-numeric value") from None
    if len(vals) != expected:
        raise ModelFormatError(f"{where}: expected {expected} values, got {len(vals)}")
    if not np.all(np.isfinite(vals)):
        raise ModelFormatError(f"{where}: non-finite value")
    return vals


def _parse_meta(token):
    k, _, v = token.partition("=")
    for cast in (int, float):
        try:
            return k, cast(v)
        except ValueError:
            pass
    return k, v


def load_model(source, chain: ChainSpec | None = None) -> TrainedModel:
    """Parse a model document (path, stream or text).

    With ``chain`` given, a model for a different chain or DoF is rejected.
    """
    if hasattr(source, "read"):
        text = source.read()
    elif "\n" in str(source):
        text = str(source)
    else:
        with open(source, encoding="utf-8") as fh:
            text = fh.read()
    raw_lines = text.splitlines()
    body, meta, history = [], {}, []
    activation, seed = "tanh", 0
    for line in raw_lines:
        if line.startswith("#"):
            toks = line[1:].split()
            if toks[:1] == ["history"]:
                history.append((float(toks[2]), float(toks[3])))
            elif toks[:1] == ["mlp"]:
                fields = dict(_parse_meta(t) for t in toks[1:] if "=" in t)
                activation = fields.get("activation", activation)
                seed = fields.get("seed", seed)
            elif toks[:1] == ["meta"]:
                meta.update(_parse_meta(t) for t in toks[1:] if "=" in t)
        elif line.strip():
            body.append(line)

    if not body:
        raise ModelFormatError("empty model document")
    head = body[0].split()
    if len(head) != 4 or head[0] != FORMAT_TAG:
        raise ModelFormatError("missing model header")
    if head[1] != FORMAT_VERSION:
        raise ModelFormatError(f"unsupported model version {head[1]!r}")
    chain_name, dof = head[2], int(head[3])
    if chain is not None and (chain.name != chain_name or chain.dof != dof):
        raise ModelFormatError(f"model is for {chain_name!r} ({dof} joints), "
                               f"not {chain.name!r} ({chain.dof} joints)")
    try:
        it = iter(body[1:])
        key, val = next(it).split()
        if key != "scale":
            raise ModelFormatError("expected scale line")
        scale = float(val)
        key, val = next(it).split()
        if key != "layers":
            raise ModelFormatError("expected layer-count line")
        weights, biases = [], []
        for layer in range(int(val)):
            rows, cols = (int(v) for v in next(it).split())
            w = np.empty((rows, cols))
            for r in range(rows):
                w[r] = _floats(next(it), cols, f"layer {layer + 1} row {r + 1}")
            weights.append(w)
            biases.append(_floats(next(it), rows, f"layer {layer + 1} bias"))
    except StopIteration:
        raise ModelFormatError("truncated model document") from None
    except ValueError as err:
        if isinstance(err, ModelFormatError):
            raise
        raise ModelFormatError(f"malformed model document: {err}") from None
    if not math.isfinite(scale) or scale <= 0:
        raise ModelFormatError("scale must be a positive finite number")
    try:
        params = MlpParams(weights, biases)
        spec = MlpSpec(output_dim=params.widths[-1], hidden=params.widths[1:-1],
                       input_dim=params.widths[0], activation=activation, seed=seed)
    except ValueError as err:
        raise ModelFormatError(str(err)) from None
    if spec.output_dim != 2 * dof:
        raise ModelFormatError(f"output width {spec.output_dim} does not match {dof} joints")
    return TrainedModel(chain_name, dof, spec, params, scale, tuple(history), meta)
