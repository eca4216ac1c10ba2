"""Dilated causal CNN scorer with a linear anomaly head.

Layer ``i`` (1-based) is a causal convolution with filter size ``k`` and
dilation ``k**(i-1)``, left zero-padded so every layer keeps length T.  ReLU
sits between layers; the last layer's output is the feature sequence
``h_1..h_T``.  Local scores are ``sigmoid(w . h_t)`` and the global score is
``sigmoid(w . pool(h))`` with max or average pooling over time.

Gradients come from a hand-written reverse pass over a tape of the forward
intermediates; there is no general autodiff here.
"""

import json
from dataclasses import dataclass, field

import numpy as np

POOLING_MODES = ("max", "avg")


def sigmoid(x):
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


@dataclass
class ConvLayer:
    weights: np.ndarray  # (out_channels, in_channels, k); tap k-1 is the current step
    bias: np.ndarray
    dilation: int

    @property
    def k(self) -> int:
        return self.weights.shape[2]

    @property
    def pad(self) -> int:
        return (self.k - 1) * self.dilation

    def apply(self, u: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Return (pre-activation output, left-padded input)."""
        T = u.shape[1]
        up = np.concatenate([np.zeros((u.shape[0], self.pad)), u], axis=1)
        out = np.repeat(self.bias[:, None], T, axis=1)
        for j in range(self.k):
            s = j * self.dilation
            out += self.weights[:, :, j] @ up[:, s : s + T]
        return out, up


@dataclass
class FeatureSequence:
    vectors: np.ndarray  # d x T, columns are h_t
    pooled: np.ndarray  # d


@dataclass
class ScoreSequence:
    local: np.ndarray
    global_: float
    raw_local: np.ndarray  # w . h_t before the sigmoid
    raw_global: float


@dataclass
class Tape:
    model_key: tuple
    padded_inputs: list
    pre_activations: list
    features: np.ndarray
    pooled: np.ndarray
    argmax: np.ndarray | None
    scores: ScoreSequence


@dataclass
class Gradients:
    weights: list
    biases: list
    anomaly_weight: np.ndarray

    def flat(self) -> np.ndarray:
        parts = [g.ravel() for pair in zip(self.weights, self.biases) for g in pair]
        parts.append(self.anomaly_weight.ravel())
        return np.concatenate(parts)

    def __add__(self, other: "Gradients") -> "Gradients":
        return Gradients(
            [a + b for a, b in zip(self.weights, other.weights)],
            [a + b for a, b in zip(self.biases, other.biases)],
            self.anomaly_weight + other.anomaly_weight,
        )

    def scale(self, c: float) -> "Gradients":
        return Gradients(
            [c * g for g in self.weights], [c * g for g in self.biases], c * self.anomaly_weight
        )


@dataclass
class ScorerModel:
    layers: list
    anomaly_weight: np.ndarray
    pooling: str = "max"
    clamp_eps: float = 1e-7
    normalization: dict | None = field(default=None)

    @classmethod
    def create(
        cls,
        d_vars: int,
        d_hidden: int = 32,
        filter_size: int = 2,
        n_layers: int = 7,
        pooling: str = "max",
        clamp_eps: float = 1e-7,
        seed: int = 0,
    ) -> "ScorerModel":
        """Fan-in uniform initialization: U(-a, a), a = sqrt(1 / (in_channels * k))."""
        for name, v in (("d_vars", d_vars), ("d_hidden", d_hidden), ("filter_size", filter_size), ("n_layers", n_layers)):
            if int(v) < 1:
                raise ValueError(f"{name} must be a positive integer, got {v}")
        if pooling not in POOLING_MODES:
            raise ValueError(f"pooling must be one of {POOLING_MODES}, got {pooling!r}")
        rng = np.random.default_rng(seed)
        layers = []
        for i in range(n_layers):
            c_in = d_vars if i == 0 else d_hidden
            a = np.sqrt(1.0 / (c_in * filter_size))
            layers.append(
                ConvLayer(
                    weights=rng.uniform(-a, a, size=(d_hidden, c_in, filter_size)),
                    bias=rng.uniform(-a, a, size=d_hidden),
                    dilation=filter_size**i,
                )
            )
        a = np.sqrt(1.0 / d_hidden)
        w = rng.uniform(-a, a, size=d_hidden)
        return cls(layers=layers, anomaly_weight=w, pooling=pooling, clamp_eps=clamp_eps)

    @property
    def d_vars(self) -> int:
        return self.layers[0].weights.shape[1]

    @property
    def d_hidden(self) -> int:
        return self.anomaly_weight.shape[0]

    @property
    def filter_size(self) -> int:
        return self.layers[0].k

    @property
    def n_layers(self) -> int:
        return len(self.layers)

    @property
    def receptive_field(self) -> int:
        return 1 + sum(layer.pad for layer in self.layers)

    def _key(self) -> tuple:
        return (self.d_vars, self.d_hidden, self.filter_size, self.n_layers, self.pooling)

    # parameters as a flat list of arrays, in the same order as Gradients.flat()
    def parameters(self) -> list:
        params = []
        for layer in self.layers:
            params.extend([layer.weights, layer.bias])
        params.append(self.anomaly_weight)
        return params

    def copy(self) -> "ScorerModel":
        return ScorerModel(
            layers=[ConvLayer(l.weights.copy(), l.bias.copy(), l.dilation) for l in self.layers],
            anomaly_weight=self.anomaly_weight.copy(),
            pooling=self.pooling,
            clamp_eps=self.clamp_eps,
            normalization=None if self.normalization is None else dict(self.normalization),
        )

    def features(self, x: np.ndarray) -> np.ndarray:
        return forward(self, x)[0].vectors


def _values(instance) -> np.ndarray:
    return np.asarray(getattr(instance, "values", instance), dtype=np.float64)


def forward(model: ScorerModel, instance) -> tuple[FeatureSequence, ScoreSequence, Tape]:
    """Run the scorer on one D x T instance (a TemporalInstance or an array)."""
    x = _values(instance)
    if x.ndim != 2 or x.shape[0] != model.d_vars:
        raise ValueError(
            f"dimension mismatch: model expects D={model.d_vars}, instance has shape {x.shape}"
        )
    padded, pre = [], []
    u = x
    for i, layer in enumerate(model.layers):
        z, up = layer.apply(u)
        padded.append(up)
        pre.append(z)
        u = np.maximum(z, 0.0) if i < model.n_layers - 1 else z
    h = u
    if model.pooling == "max":
        argmax = np.argmax(h, axis=1)
        pooled = h[np.arange(h.shape[0]), argmax]
    else:
        argmax = None
        pooled = h.mean(axis=1)
    w = model.anomaly_weight
    raw_local = w @ h
    raw_global = float(w @ pooled)
    eps = model.clamp_eps
    local = np.clip(sigmoid(raw_local), eps, 1.0 - eps)
    glob = float(np.clip(sigmoid(np.array([raw_global]))[0], eps, 1.0 - eps))
    scores = ScoreSequence(local=local, global_=glob, raw_local=raw_local, raw_global=raw_global)
    tape = Tape(model._key(), padded, pre, h, pooled, argmax, scores)
    return FeatureSequence(h, pooled), scores, tape


def activation_raw(model: ScorerModel, tape: Tape) -> np.ndarray:
    """Per-point contributions ``w . h_t`` (the un-normalized activation map)."""
    if tape.model_key != model._key():
        raise ValueError("tape was produced by a different model architecture")
    return model.anomaly_weight @ tape.features


def backward(model: ScorerModel, tape: Tape, grad_local, grad_global: float) -> Gradients:
    """Parameter gradients given dL/ds_t (length T) and dL/ds_* (scalar)."""
    if tape.model_key != model._key():
        raise ValueError("tape was produced by a different model architecture")
    h = tape.features
    d, T = h.shape
    grad_local = np.asarray(grad_local, dtype=np.float64).ravel()
    if grad_local.shape[0] != T:
        raise ValueError(f"grad_local has length {grad_local.shape[0]}, expected {T}")
    s = tape.scores.local
    sg = tape.scores.global_
    g_raw = grad_local * s * (1.0 - s)
    g_raw_glob = float(grad_global) * sg * (1.0 - sg)
    w = model.anomaly_weight

    dw = h @ g_raw + g_raw_glob * tape.pooled
    dh = np.outer(w, g_raw)
    dpooled = w * g_raw_glob
    if model.pooling == "max":
        dh[np.arange(d), tape.argmax] += dpooled
    else:
        dh += dpooled[:, None] / T

    n = model.n_layers
    dWs, dbs = [None] * n, [None] * n
    dz = dh
    for i in range(n - 1, -1, -1):
        layer = model.layers[i]
        up = tape.padded_inputs[i]
        dW = np.empty_like(layer.weights)
        dup = np.zeros_like(up)
        for j in range(layer.k):
            s0 = j * layer.dilation
            dW[:, :, j] = dz @ up[:, s0 : s0 + T].T
            dup[:, s0 : s0 + T] += layer.weights[:, :, j].T @ dz
        dWs[i] = dW
        dbs[i] = dz.sum(axis=1)
        if i > 0:
            du = dup[:, layer.pad :]
            dz = du * (tape.pre_activations[i - 1] > 0)
    return Gradients(dWs, dbs, dw)


# -- checkpoint I/O -----------------------------------------------------------

def model_to_dict(model: ScorerModel) -> dict:
    return {
        "architecture": {
            "D": model.d_vars,
            "d": model.d_hidden,
            "k": model.filter_size,
            "n": model.n_layers,
            "pooling": model.pooling,
            "clamp_eps": model.clamp_eps,
        },
        "layers": [
            {"weights": l.weights.tolist(), "bias": l.bias.tolist(), "dilation": l.dilation}
            for l in model.layers
        ],
        "anomaly_weight": model.anomaly_weight.tolist(),
        "normalization": model.normalization,
    }


def model_from_dict(doc: dict) -> ScorerModel:
    arch = doc["architecture"]
    layers = []
    for i, ld in enumerate(doc["layers"]):
        W = np.array(ld["weights"], dtype=np.float64)
        expected = (arch["d"], arch["D"] if i == 0 else arch["d"], arch["k"])
        if W.shape != expected:
            raise ValueError(f"layer {i + 1} weights have shape {W.shape}, expected {expected}")
        layers.append(ConvLayer(W, np.array(ld["bias"], dtype=np.float64), int(ld["dilation"])))
    if len(layers) != arch["n"]:
        raise ValueError(f"checkpoint has {len(layers)} layers, header says {arch['n']}")
    model = ScorerModel(
        layers=layers,
        anomaly_weight=np.array(doc["anomaly_weight"], dtype=np.float64),
        pooling=arch["pooling"],
        clamp_eps=float(arch["clamp_eps"]),
        normalization=doc.get("normalization"),
    )
    for p in model.parameters():
        if not np.all(np.isfinite(p)):
            raise ValueError("checkpoint contains non-finite parameters")
    return model


def save_model(model: ScorerModel, path, extra: dict | None = None) -> None:
    # json writes floats with repr(), which round-trips doubles exactly
    doc = model_to_dict(model)
    if extra:
        doc.update(extra)
    with open(path, "w") as f:
        json.dump(doc, f)


def load_model(path) -> tuple[ScorerModel, dict]:
    with open(path) as f:
        doc = json.load(f)
    return model_from_dict(doc), doc
