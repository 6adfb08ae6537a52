"""Fiducial autoencoder: a ReLU encoder (x, z) -> mu_hat paired with the exact decoder.

The network is plain numpy with hand-written backpropagation.  Inputs are
standardised and outputs are rescaled with constants frozen from the training
set; both live in :class:`EncoderWeights` so a weight file is self-contained.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np

from .models import DataGeneratingModel
from .rng import RandomSource

WEIGHT_FORMAT = "deepfid-encoder"


class TrainingDivergence(RuntimeError):
    def __init__(self, epoch, msg="non-finite loss"):
        super().__init__(f"{msg} at epoch {epoch}")
        self.epoch = epoch


@dataclass(frozen=True)
class EncoderSpec:
    input_dim: int
    hidden_layers: tuple
    output_dim: int
    activation: str = "relu"
    # per output coordinate: "identity" or "softplus" (shifted by output_lower)
    output_transform: tuple = ()
    output_lower: tuple = ()

    def __post_init__(self):
        if not self.hidden_layers:
            raise ValueError("hidden_layers must be non-empty")
        if self.activation != "relu":
            raise ValueError("only the rectifier activation is supported")
        if len(self.output_transform) != self.output_dim:
            raise ValueError("one output transform per output coordinate")
        for t in self.output_transform:
            if t not in ("identity", "softplus"):
                raise ValueError(f"unknown output transform {t!r}")

    @property
    def layer_sizes(self):
        return (self.input_dim, *self.hidden_layers, self.output_dim)

    @property
    def n_layers(self):
        """Total layer count, input and output layers included."""
        return len(self.layer_sizes)


def spec_for_model(model: DataGeneratingModel, hidden_layers=(64,) * 9) -> EncoderSpec:
    """Encoder spec whose output transform maps into the model's domain.

    Coordinates with a finite lower bound get ``lower + softplus``; the rest
    are left unconstrained.
    """
    transforms, lowers = [], []
    for lo in model.lower:
        if np.isfinite(lo):
            transforms.append("softplus")
            lowers.append(float(lo))
        else:
            transforms.append("identity")
            lowers.append(0.0)
    return EncoderSpec(
        input_dim=2 * model.data_dim,
        hidden_layers=tuple(int(h) for h in hidden_layers),
        output_dim=model.param_dim,
        output_transform=tuple(transforms),
        output_lower=tuple(lowers),
    )


@dataclass
class EncoderWeights:
    weights: list
    biases: list
    in_mean: np.ndarray
    in_scale: np.ndarray
    out_offset: np.ndarray
    out_scale: np.ndarray

    def copy(self):
        return EncoderWeights(
            [w.copy() for w in self.weights], [b.copy() for b in self.biases],
            self.in_mean.copy(), self.in_scale.copy(),
            self.out_offset.copy(), self.out_scale.copy(),
        )

    def astype(self, dtype):
        c = self.copy()
        c.weights = [w.astype(dtype) for w in c.weights]
        c.biases = [b.astype(dtype) for b in c.biases]
        for k in ("in_mean", "in_scale", "out_offset", "out_scale"):
            setattr(c, k, getattr(c, k).astype(dtype))
        return c

    def is_finite(self):
        return all(np.all(np.isfinite(a)) for a in self.weights + self.biases)


# --- output transforms ----------------------------------------------------

def _softplus(a):
    return np.logaddexp(0.0, a)


def _softplus_inv(y):
    y = np.asarray(y, dtype=float)
    return np.where(y > 30, y, np.log(np.expm1(np.maximum(y, 1e-300))))


def _sigmoid(a):
    return 0.5 * (1.0 + np.tanh(0.5 * a))


def _apply_transform(spec, pre):
    out = pre.copy()
    for j, t in enumerate(spec.output_transform):
        if t == "softplus":
            out[..., j] = spec.output_lower[j] + _softplus(pre[..., j])
    return out


def _transform_deriv(spec, pre):
    d = np.ones_like(pre)
    for j, t in enumerate(spec.output_transform):
        if t == "softplus":
            d[..., j] = _sigmoid(pre[..., j])
    return d


def _inverse_transform(spec, mu):
    pre = np.array(mu, dtype=float)
    for j, t in enumerate(spec.output_transform):
        if t == "softplus":
            pre[..., j] = _softplus_inv(mu[..., j] - spec.output_lower[j])
    return pre


# --- construction -----------------------------------------------------------

def init_weights(spec: EncoderSpec, rng: RandomSource, inputs=None, params=None) -> EncoderWeights:
    """He-initialised weights, zero biases.

    ``inputs`` (rows of concatenated (x, z)) and ``params`` (rows of mu) set
    the frozen input standardisation and output rescaling; without them both
    are the identity.
    """
    sizes = spec.layer_sizes
    weights, biases = [], []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        weights.append(rng.normal((fan_in, fan_out)) * np.sqrt(2.0 / fan_in))
        biases.append(np.zeros(fan_out))
    in_mean = np.zeros(spec.input_dim)
    in_scale = np.ones(spec.input_dim)
    if inputs is not None:
        inputs = np.asarray(inputs, dtype=float)
        in_mean = inputs.mean(axis=0)
        in_scale = inputs.std(axis=0)
        in_scale[in_scale == 0] = 1.0
    out_offset = np.zeros(spec.output_dim)
    out_scale = np.ones(spec.output_dim)
    if params is not None:
        pre = _inverse_transform(spec, np.asarray(params, dtype=float))
        out_offset = pre.mean(axis=0)
        out_scale = pre.std(axis=0)
        out_scale[out_scale == 0] = 1.0
    return EncoderWeights(weights, biases, in_mean, in_scale, out_offset, out_scale)


def zero_weights(spec: EncoderSpec) -> EncoderWeights:
    sizes = spec.layer_sizes
    return EncoderWeights(
        [np.zeros((a, b)) for a, b in zip(sizes[:-1], sizes[1:])],
        [np.zeros(b) for b in sizes[1:]],
        np.zeros(spec.input_dim), np.ones(spec.input_dim),
        np.zeros(spec.output_dim), np.ones(spec.output_dim),
    )


# --- forward / backward -----------------------------------------------------

def _check_shapes(spec, weights):
    sizes = spec.layer_sizes
    if len(weights.weights) != len(sizes) - 1:
        raise ValueError("weights do not match the encoder spec")
    for w, b, a, c in zip(weights.weights, weights.biases, sizes[:-1], sizes[1:]):
        if w.shape != (a, c) or b.shape != (c,):
            raise ValueError("weights do not match the encoder spec")


def _run(spec, weights, x, z):
    inp = np.concatenate([x, z], axis=-1)
    if inp.shape[-1] != spec.input_dim:
        raise ValueError(f"input has width {inp.shape[-1]}, encoder expects {spec.input_dim}")
    h = (inp - weights.in_mean) / weights.in_scale
    acts = [h]
    n_hidden = len(weights.weights) - 1
    for i in range(n_hidden):
        h = np.maximum(h @ weights.weights[i] + weights.biases[i], 0.0)
        acts.append(h)
    net = h @ weights.weights[-1] + weights.biases[-1]
    pre = net * weights.out_scale + weights.out_offset
    return acts, pre


def encode(spec: EncoderSpec, weights: EncoderWeights, x, z) -> np.ndarray:
    """mu_hat for one (x, z) pair or a batch; x and z broadcast over leading axes."""
    _check_shapes(spec, weights)
    x = np.asarray(x)
    z = np.asarray(z)
    x, z = np.broadcast_arrays(x, z)
    _, pre = _run(spec, weights, x, z)
    return _apply_transform(spec, pre)


class EncoderInverse:
    """Callable (x, Z) -> mu_hat wrapping a trained encoder."""

    def __init__(self, spec: EncoderSpec, weights: EncoderWeights):
        _check_shapes(spec, weights)
        self.spec = spec
        self.weights = weights

    def __call__(self, x, z):
        return encode(self.spec, self.weights, x, z)


@dataclass
class Batch:
    x: np.ndarray
    z: np.ndarray
    mu: np.ndarray

    def __len__(self):
        return len(self.mu)

    def take(self, idx):
        return Batch(self.x[idx], self.z[idx], self.mu[idx])


def fae_loss(model, spec, weights, batch: Batch, w1=1.0, w2=1.0):
    """(total, x_term, mu_term): batch means of ||x - f(z, mu_hat)||^2 and ||mu - mu_hat||^2."""
    total, x_term, mu_term, _ = _loss_and_cache(model, spec, weights, batch, w1, w2)
    return total, x_term, mu_term


def _loss_and_cache(model, spec, weights, batch, w1, w2):
    if len(batch) == 0:
        raise ValueError("empty batch")
    acts, pre = _run(spec, weights, batch.x, batch.z)
    mu_hat = _apply_transform(spec, pre)
    assert np.all(model.in_domain(mu_hat)), "encoder output left the parameter domain"
    x_hat = model._forward(mu_hat, batch.z)
    rx = batch.x - x_hat
    rmu = batch.mu - mu_hat
    x_term = np.mean(np.sum(rx * rx, axis=-1))
    mu_term = np.mean(np.sum(rmu * rmu, axis=-1))
    total = w1 * x_term + w2 * mu_term
    return total, x_term, mu_term, (acts, pre, mu_hat, rx, rmu)


def fae_gradient(model, spec, weights, batch: Batch, w1=1.0, w2=1.0):
    """Exact gradient of :func:`fae_loss` total w.r.t. every weight and bias.

    Returns ``(grad_weights, grad_biases, (total, x_term, mu_term))``.  The
    decoder contributes -2 w1 A^T (x - f(z, mu_hat)) with A = df/dmu.
    """
    total, x_term, mu_term, (acts, pre, mu_hat, rx, rmu) = _loss_and_cache(
        model, spec, weights, batch, w1, w2)
    if not np.isfinite(total):
        raise TrainingDivergence(-1, "non-finite loss in gradient evaluation")
    n = len(batch)
    d_mu = -2.0 * w2 * rmu
    if w1 != 0.0:
        A = model._gradient(mu_hat, batch.z)  # (n, m, p)
        d_mu = d_mu - 2.0 * w1 * np.einsum("nmp,nm->np", A, rx)
    d_mu /= n
    d_net = d_mu * _transform_deriv(spec, pre) * weights.out_scale
    gw = [None] * len(weights.weights)
    gb = [None] * len(weights.biases)
    delta = d_net
    for i in range(len(weights.weights) - 1, -1, -1):
        gw[i] = acts[i].T @ delta
        gb[i] = delta.sum(axis=0)
        if i > 0:
            delta = (delta @ weights.weights[i].T) * (acts[i] > 0)
    return gw, gb, (total, x_term, mu_term)


# --- training -----------------------------------------------------------------

@dataclass
class TrainConfig:
    w1: float = 1.0
    w2: float = 1.0
    epochs: int = 10
    batch_size: int = 128
    learning_rate: float = 1e-3
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_epsilon: float = 1e-8
    train_fraction: float = 0.8
    n_train_params: int = 100_000
    # uniform box over mu for simulating training data
    param_low: tuple = (0.0,)
    param_high: tuple = (6.0,)

    def __post_init__(self):
        if self.w1 < 0 or self.w2 < 0 or self.w1 + self.w2 <= 0:
            raise ValueError("loss weights must be nonnegative with w1 + w2 > 0")
        if not 0.0 < self.train_fraction < 1.0:
            raise ValueError("train_fraction must lie in (0, 1)")
        if self.epochs < 0 or self.batch_size < 1:
            raise ValueError("epochs must be >= 0 and batch_size >= 1")
        if len(self.param_low) != len(self.param_high):
            raise ValueError("param_low and param_high differ in length")


def pilot_box(model: DataGeneratingModel, pilot, rel: float = 0.5):
    """Uniform box pilot * (1 -/+ rel) per coordinate, clipped to the domain."""
    pilot = np.asarray(pilot, dtype=float)
    half = rel * np.abs(pilot)
    lo = np.clip(pilot - half, model.lower, model.upper)
    hi = np.clip(pilot + half, model.lower, model.upper)
    return tuple(lo.tolist()), tuple(hi.tolist())


@dataclass
class TrainingSet:
    train: Batch
    val: Batch


def generate_training_set(model: DataGeneratingModel, cfg: TrainConfig, rng: RandomSource) -> TrainingSet:
    """Simulate (x_k, z_k, mu_k) with mu_k from the config box and split train/validation."""
    lo = np.asarray(cfg.param_low, dtype=float)
    hi = np.asarray(cfg.param_high, dtype=float)
    if lo.shape != (model.param_dim,):
        raise ValueError("parameter box does not match the model dimension")
    if np.any(lo < model.lower) or np.any(hi > model.upper) or np.any(hi < lo):
        raise ValueError("parameter box must lie inside the model domain")
    n = cfg.n_train_params
    mu = lo + (hi - lo) * rng.uniform((n, model.param_dim))
    z = model.sample_noise(rng, n)
    x = model.forward(mu, z)
    perm = rng.permutation(n)
    n_train = int(round(cfg.train_fraction * n))
    full = Batch(x, z, mu)
    return TrainingSet(full.take(perm[:n_train]), full.take(perm[n_train:]))


def make_initial_weights(spec, data: TrainingSet, rng: RandomSource) -> EncoderWeights:
    tr = data.train
    return init_weights(spec, rng, inputs=np.concatenate([tr.x, tr.z], axis=1), params=tr.mu)


@dataclass
class TrainReport:
    epochs: list = field(default_factory=list)
    train_total: list = field(default_factory=list)
    val_total: list = field(default_factory=list)
    val_x: list = field(default_factory=list)
    val_mu: list = field(default_factory=list)

    @property
    def final_val_loss(self):
        return self.val_total[-1]

    def rows(self):
        return list(zip(self.epochs, self.train_total, self.val_total, self.val_x, self.val_mu))


def _eval_loss(model, spec, weights, batch, w1, w2, chunk=8192):
    n = len(batch)
    xs = mus = 0.0
    for s in range(0, n, chunk):
        part = batch.take(slice(s, s + chunk))
        _, xt, mt = fae_loss(model, spec, weights, part, w1, w2)
        xs += xt * len(part)
        mus += mt * len(part)
    xs /= n
    mus /= n
    return w1 * xs + w2 * mus, xs, mus


def train(model, spec, cfg: TrainConfig, data: TrainingSet, rng: RandomSource,
          weights: EncoderWeights | None = None, log=None):
    """Mini-batch Adam on the composite loss.

    Epoch 0 of the report is the validation loss before any update.  Returns
    ``(weights, report)``; the input weights are not modified.
    """
    if weights is None:
        weights = make_initial_weights(spec, data, rng)
    weights = weights.copy()
    params = weights.weights + weights.biases
    m1 = [np.zeros_like(p) for p in params]
    m2 = [np.zeros_like(p) for p in params]
    b1, b2, eps, lr = cfg.adam_beta1, cfg.adam_beta2, cfg.adam_epsilon, cfg.learning_rate
    report = TrainReport()
    vt, vx, vm = _eval_loss(model, spec, weights, data.val, cfg.w1, cfg.w2)
    report.epochs.append(0)
    report.train_total.append(float("nan"))
    report.val_total.append(vt)
    report.val_x.append(vx)
    report.val_mu.append(vm)
    step = 0
    n = len(data.train)
    for epoch in range(1, cfg.epochs + 1):
        perm = rng.permutation(n)
        acc = 0.0
        for s in range(0, n, cfg.batch_size):
            idx = perm[s:s + cfg.batch_size]
            try:
                gw, gb, (tot, _, _) = fae_gradient(model, spec, weights, data.train.take(idx), cfg.w1, cfg.w2)
            except (TrainingDivergence, AssertionError) as exc:
                raise TrainingDivergence(epoch, str(exc)) from exc
            acc += tot * len(idx)
            step += 1
            c1 = 1.0 - b1**step
            c2 = 1.0 - b2**step
            for p, g, a, v in zip(params, gw + gb, m1, m2):
                a *= b1
                a += (1.0 - b1) * g
                v *= b2
                v += (1.0 - b2) * g * g
                p -= lr * (a / c1) / (np.sqrt(v / c2) + eps)
        if not (np.isfinite(acc) and weights.is_finite()):
            raise TrainingDivergence(epoch)
        vt, vx, vm = _eval_loss(model, spec, weights, data.val, cfg.w1, cfg.w2)
        if not np.isfinite(vt):
            raise TrainingDivergence(epoch)
        report.epochs.append(epoch)
        report.train_total.append(acc / n)
        report.val_total.append(vt)
        report.val_x.append(vx)
        report.val_mu.append(vm)
        if log is not None:
            log(f"epoch {epoch}: train {acc / n:.6g}  val {vt:.6g} (x {vx:.6g}, mu {vm:.6g})")
    return weights, report


# --- weight file --------------------------------------------------------------

def save_weights(path, spec: EncoderSpec, weights: EncoderWeights):
    """Write a self-describing JSON weight file (floats in shortest round-trip form)."""
    doc = {
        "format": WEIGHT_FORMAT,
        "version": 1,
        "spec": {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(spec).items()},
        "in_mean": weights.in_mean.tolist(),
        "in_scale": weights.in_scale.tolist(),
        "out_offset": weights.out_offset.tolist(),
        "out_scale": weights.out_scale.tolist(),
        "layers": [{"W": w.tolist(), "b": b.tolist()} for w, b in zip(weights.weights, weights.biases)],
    }
    Path(path).write_text(json.dumps(doc, indent=1) + "\n")


def load_weights(path):
    doc = json.loads(Path(path).read_text())
    if doc.get("format") != WEIGHT_FORMAT:
        raise ValueError(f"{path} is not an encoder weight file")
    s = doc["spec"]
    spec = EncoderSpec(
        input_dim=s["input_dim"], hidden_layers=tuple(s["hidden_layers"]), output_dim=s["output_dim"],
        activation=s["activation"], output_transform=tuple(s["output_transform"]),
        output_lower=tuple(s["output_lower"]),
    )
    weights = EncoderWeights(
        [np.array(l["W"], dtype=float).reshape(a, b)
         for l, a, b in zip(doc["layers"], spec.layer_sizes[:-1], spec.layer_sizes[1:])],
        [np.array(l["b"], dtype=float) for l in doc["layers"]],
        np.array(doc["in_mean"]), np.array(doc["in_scale"]),
        np.array(doc["out_offset"]), np.array(doc["out_scale"]),
    )
    _check_shapes(spec, weights)
    return spec, weights
