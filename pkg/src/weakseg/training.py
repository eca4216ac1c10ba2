"""Weakly supervised training: classification + margin alignment losses, Adam, early stopping."""

import logging
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from . import dtw
from .evaluation import candidate_thresholds, instance_metrics
from .model import Gradients, ScorerModel, activation_raw, backward, forward
from .pseudolabel import masked_labels, normalize_activation, phi

log = logging.getLogger(__name__)


class NumericalError(RuntimeError):
    """Raised when a loss or gradient becomes NaN or infinite."""


@dataclass
class TrainConfig:
    L: int = 16
    tau: float = 0.5
    beta: float = 0.5
    gamma: float = 0.1
    pooling: str = "max"
    learning_rate: float = 3e-3
    batch_size: int = 8
    max_epochs: int = 50
    patience: int = 20
    seed: int = 0

    def validate(self) -> None:
        if int(self.L) < 1:
            raise ValueError(f"train.L must be >= 1, got {self.L}")
        if not 0.0 < self.tau < 1.0:
            raise ValueError(f"train.tau must be in (0, 1), got {self.tau}")
        if self.beta < 0:
            raise ValueError(f"train.beta must be >= 0, got {self.beta}")
        if not self.gamma > 0:
            raise ValueError(f"train.gamma must be > 0, got {self.gamma}")
        if self.pooling not in ("max", "avg"):
            raise ValueError(f"train.pooling must be 'max' or 'avg', got {self.pooling!r}")
        if not self.learning_rate > 0:
            raise ValueError(f"train.learning_rate must be > 0, got {self.learning_rate}")
        for name in ("batch_size", "max_epochs", "patience"):
            if int(getattr(self, name)) < 1:
                raise ValueError(f"train.{name} must be a positive integer, got {getattr(self, name)}")


@dataclass
class LossReport:
    classification: float
    alignment: float

    @property
    def total(self) -> float:
        return self.classification + self.alignment


@dataclass
class SelectedThreshold:
    tau_star: float
    validation_f1: float
    warning: str | None = None


@dataclass
class EpochRecord:
    epoch: int
    classification: float
    alignment: float
    total: float
    validation_f1: float
    tau_star: float


def classification_loss(s_global: float, y: int) -> float:
    """Binary cross entropy between the instance label and the global score."""
    return -(y * math.log(s_global) + (1 - y) * math.log(1.0 - s_global))


def classification_grad(s_global: float, y: int) -> float:
    return -y / s_global + (1 - y) / (1.0 - s_global)


def alignment_loss(scores, pos, neg, beta: float, gamma: float, clamp_eps: float = 1e-7):
    """Hinge ``[sdtw(pos)/T - sdtw(neg)/T + beta]_+`` and its gradient on local scores.

    ``scores`` is a ScoreSequence or a vector of local scores.  When both
    pseudo-labels are all zero the two alignment costs coincide and the term is
    skipped (value 0).
    """
    s = np.asarray(getattr(scores, "local", scores), dtype=np.float64)
    T = s.size
    pos = np.asarray(pos)
    neg = np.asarray(neg)
    if pos.size > T:
        raise ValueError(f"no feasible alignment: label length L={pos.size} exceeds T={T}")
    if not pos.any() and not neg.any():
        return 0.0, np.zeros(T)
    c_pos = dtw.build_cost_matrix(pos, s, clamp_eps)
    c_neg = dtw.build_cost_matrix(neg, s, clamp_eps)
    v_pos, ws_pos = dtw.sdtw_forward(c_pos, gamma)
    v_neg, ws_neg = dtw.sdtw_forward(c_neg, gamma)
    value = (v_pos - v_neg) / T + beta
    if value <= 0:
        return 0.0, np.zeros(T)
    e_pos = dtw.sdtw_backward(c_pos, ws_pos)
    e_neg = dtw.sdtw_backward(c_neg, ws_neg)
    g = (e_pos * dtw.cost_grad_wrt_scores(pos, s, clamp_eps)).sum(axis=0)
    g -= (e_neg * dtw.cost_grad_wrt_scores(neg, s, clamp_eps)).sum(axis=0)
    return value, g / T


def pseudo_label(model: ScorerModel, tape, L: int, tau: float) -> np.ndarray:
    return phi(normalize_activation(activation_raw(model, tape)), L, tau)


def instance_step(model: ScorerModel, x, y: int, config: TrainConfig, use_alignment: bool = True):
    """Loss and parameter gradients for one instance.

    Returns ``(LossReport, Gradients, bits)`` where ``bits`` is the current
    pseudo-label before masking.
    """
    _, scores, tape = forward(model, x)
    lc = classification_loss(scores.global_, y)
    g_glob = classification_grad(scores.global_, y)
    bits = pseudo_label(model, tape, config.L, config.tau)
    la, g_loc = 0.0, np.zeros(scores.local.size)
    if use_alignment:
        pos, neg = masked_labels(bits, y)
        la, g_loc = alignment_loss(scores, pos, neg, config.beta, config.gamma, model.clamp_eps)
    grads = backward(model, tape, g_loc, g_glob)
    return LossReport(lc, la), grads, bits


class Adam:
    def __init__(self, params, lr: float, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def step(self, params, grads) -> None:
        """Update ``params`` in place."""
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1**self.t
        c2 = 1.0 - b2**self.t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)

    def state_dict(self) -> dict:
        return {"t": self.t, "m": [a.tolist() for a in self.m], "v": [a.tolist() for a in self.v]}

    def load_state_dict(self, state: dict) -> None:
        self.t = int(state["t"])
        self.m = [np.array(a, dtype=np.float64).reshape(m.shape) for a, m in zip(state["m"], self.m)]
        self.v = [np.array(a, dtype=np.float64).reshape(v.shape) for a, v in zip(state["v"], self.v)]


def _grad_list(g: Gradients) -> list:
    out = []
    for w, b in zip(g.weights, g.biases):
        out.extend([w, b])
    out.append(g.anomaly_weight)
    return out


def select_threshold(global_scores, labels) -> SelectedThreshold:
    """Pick the instance threshold with the best F1 (smallest on ties).

    Single-class labels get a threshold above every score and a warning.
    """
    s = np.asarray(global_scores, dtype=np.float64).ravel()
    y = np.asarray(labels).ravel()
    if s.shape != y.shape:
        raise ValueError("global_scores and labels differ in length")
    cands = candidate_thresholds(s)
    if y.size == 0 or y.min() == y.max():
        return SelectedThreshold(float(cands[-1]), instance_metrics(s, y, cands[-1]).f1, "single-class validation labels")
    best_f1, best_thr = -1.0, float(cands[-1])
    for c in cands:
        f1 = instance_metrics(s, y, c).f1
        if f1 > best_f1:
            best_f1, best_thr = f1, float(c)
    return SelectedThreshold(best_thr, best_f1)


def global_scores(model: ScorerModel, dataset) -> np.ndarray:
    return np.array([forward(model, inst)[1].global_ for inst in dataset.instances])


@dataclass
class TrainState:
    """Everything needed to continue an interrupted run."""

    epoch: int = 0
    last_params: list | None = None
    adam: dict | None = None
    best_f1: float = -1.0
    best_valid_loss: float = math.inf
    best_epoch: int = 0
    best_params: list | None = None
    best_threshold: dict | None = None
    bad_epochs: int = 0
    rng_state: dict | None = None
    history: list = field(default_factory=list)

    def to_dict(self) -> dict:
        d = asdict(self)
        for key in ("last_params", "best_params"):
            if d[key] is not None:
                d[key] = [np.asarray(p).tolist() for p in d[key]]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainState":
        st = cls(**d)
        for key in ("last_params", "best_params"):
            if getattr(st, key) is not None:
                setattr(st, key, [np.array(p, dtype=np.float64) for p in getattr(st, key)])
        st.history = [EpochRecord(**r) if isinstance(r, dict) else r for r in st.history]
        return st


@dataclass
class TrainResult:
    model: ScorerModel
    threshold: SelectedThreshold
    history: list
    state: TrainState


def _set_params(model: ScorerModel, values) -> None:
    for p, v in zip(model.parameters(), values):
        p[...] = np.asarray(v).reshape(p.shape)


def train(model: ScorerModel, train_set, valid_set, config: TrainConfig, state: TrainState | None = None,
          on_epoch=None) -> TrainResult:
    """Minibatch Adam on the mean per-instance loss; keeps the best validation epoch.

    ``model`` is updated in place to the last-epoch parameters; the returned
    model holds the best-epoch parameters.  Passing a ``state`` from a
    previous result continues that run.
    """
    config.validate()
    if len(train_set) == 0:
        raise ValueError("training split is empty")
    if len(valid_set) == 0:
        raise ValueError("validation split is empty")
    for ds in (train_set, valid_set):
        if ds.d_vars != model.d_vars:
            raise ValueError(f"dimension mismatch: model expects D={model.d_vars}, {ds.split_tag} split has D={ds.d_vars}")
        for inst in ds.instances:
            if inst.length < config.L:
                raise ValueError(f"instance {inst.id!r}: length {inst.length} < L={config.L}")
    if model.pooling != config.pooling:
        raise ValueError(f"model pooling {model.pooling!r} differs from train.pooling {config.pooling!r}")

    rng = np.random.default_rng(config.seed)
    opt = Adam(model.parameters(), config.learning_rate)
    state = state or TrainState()
    if state.last_params is not None:
        _set_params(model, state.last_params)
    if state.adam is not None:
        opt.load_state_dict(state.adam)
    if state.rng_state is not None:
        rng.bit_generator.state = state.rng_state

    best_model = model.copy()
    if state.best_params is not None:
        _set_params(best_model, state.best_params)
    X = [inst.values for inst in train_set.instances]
    Y = list(train_set.labels)
    n = len(X)
    valid_y = np.asarray(valid_set.labels)

    while state.epoch < config.max_epochs and state.bad_epochs < config.patience:
        epoch = state.epoch + 1
        order = rng.permutation(n)
        sum_c = sum_a = 0.0
        n_empty_pos = 0
        for start in range(0, n, config.batch_size):
            idx = order[start : start + config.batch_size]
            acc = None
            for i in idx:
                rep, g, bits = instance_step(model, X[i], Y[i], config)
                if not (math.isfinite(rep.classification) and math.isfinite(rep.alignment)):
                    raise NumericalError(
                        f"non-finite loss at epoch {epoch}, instance {train_set.instances[i].id!r}: "
                        f"classification={rep.classification}, alignment={rep.alignment}"
                    )
                if Y[i] == 1 and not bits.any():
                    n_empty_pos += 1
                sum_c += rep.classification
                sum_a += rep.alignment
                acc = g if acc is None else acc + g
            grads = _grad_list(acc.scale(1.0 / len(idx)))
            if not all(np.all(np.isfinite(gr)) for gr in grads):
                raise NumericalError(f"non-finite gradient at epoch {epoch}")
            opt.step(model.parameters(), grads)

        scores = global_scores(model, valid_set)
        sel = select_threshold(scores, valid_y)
        valid_loss = float(np.mean([classification_loss(s, y) for s, y in zip(scores, valid_y)]))
        rec = EpochRecord(epoch, sum_c / n, sum_a / n, sum_c / n + sum_a / n, sel.validation_f1, sel.tau_star)
        state.history.append(rec)
        if n_empty_pos:
            log.info("epoch %d: %d positive instances had an all-zero pseudo-label", epoch, n_empty_pos)
        improved = sel.validation_f1 > state.best_f1 or (
            sel.validation_f1 == state.best_f1 and valid_loss < state.best_valid_loss
        )
        if improved:
            if sel.validation_f1 > state.best_f1:
                state.bad_epochs = 0
            else:
                state.bad_epochs += 1
            state.best_f1 = sel.validation_f1
            state.best_valid_loss = valid_loss
            state.best_epoch = epoch
            state.best_threshold = asdict(sel)
            best_model = model.copy()
        else:
            state.bad_epochs += 1
        state.epoch = epoch
        log.info(
            "epoch %d  Lc=%.4f  La=%.4f  valid F1=%.4f  tau*=%.4f",
            epoch, rec.classification, rec.alignment, rec.validation_f1, rec.tau_star,
        )
        if on_epoch is not None:
            on_epoch(rec)

    state.last_params = [p.copy() for p in model.parameters()]
    state.best_params = [p.copy() for p in best_model.parameters()]
    state.adam = opt.state_dict()
    state.rng_state = rng.bit_generator.state
    best_model.normalization = model.normalization
    threshold = SelectedThreshold(**state.best_threshold) if state.best_threshold else select_threshold(
        global_scores(best_model, valid_set), valid_y
    )
    return TrainResult(best_model, threshold, list(state.history), state)
