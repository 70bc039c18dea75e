"""DNN back-end fusion of speaker and spoofing embeddings.

The network maps ``[enrol_spk, test_spk, test_cm]`` through three LeakyReLU
hidden layers (256, 128, 64 by default) to two logits ordered
``(target, non-target/spoof)``. Forward pass, backpropagation, Adam and the
warm-restart cosine schedule are written directly in numpy.
"""

from __future__ import annotations

import math
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .embeddings import EmbeddingStore, mean_enrolment
from .errors import EmbeddingError, InputError, NumericalError, ScoringError
from .protocol import ProtocolSet, TrainRow
from .scoring import ScoreKind, ScoreSet

TARGET = 0
HIDDEN = (256, 128, 64)


@dataclass
class MlpParams:
    """Layer weights ``W[k]`` of shape ``(fan_in, fan_out)`` and biases ``b[k]``."""
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    negative_slope: float = 0.01

    def __post_init__(self):
        if len(self.weights) != len(self.biases) or not self.weights:
            raise ValueError("need one bias vector per weight matrix")
        for k, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.ndim != 2 or b.shape != (w.shape[1],):
                raise ValueError(f"layer {k}: weight {w.shape} and bias {b.shape} do not match")
            if k and w.shape[0] != self.weights[k - 1].shape[1]:
                raise ValueError(f"layer {k}: input width {w.shape[0]} != previous output")
        if self.weights[-1].shape[1] != 2:
            raise ValueError("output layer must have two units")

    @property
    def input_dim(self) -> int:
        return self.weights[0].shape[0]

    @property
    def widths(self) -> tuple[int, ...]:
        return (self.input_dim,) + tuple(w.shape[1] for w in self.weights)

    def arrays(self) -> list[np.ndarray]:
        """Parameters in the order W1, b1, W2, b2, ..."""
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    @classmethod
    def from_arrays(cls, arrays: Sequence[np.ndarray], negative_slope: float = 0.01) -> "MlpParams":
        return cls(list(arrays[0::2]), list(arrays[1::2]), negative_slope)

    def copy(self) -> "MlpParams":
        return MlpParams.from_arrays([a.copy() for a in self.arrays()], self.negative_slope)

    def zeros_like(self) -> "MlpParams":
        return MlpParams.from_arrays([np.zeros_like(a) for a in self.arrays()], self.negative_slope)

    def equals(self, other: "MlpParams") -> bool:
        return (self.negative_slope == other.negative_slope
                and len(self.weights) == len(other.weights)
                and all(np.array_equal(a, b) for a, b in zip(self.arrays(), other.arrays())))


def init_params(spk_dim: int, cm_dim: int, hidden: Sequence[int] = HIDDEN, *,
                seed: int | None = None, rng: np.random.Generator | None = None,
                negative_slope: float = 0.01) -> MlpParams:
    """Glorot-uniform weights, zero biases; input width is ``2*spk_dim + cm_dim``."""
    if rng is None:
        rng = np.random.default_rng(seed)
    widths = [2 * spk_dim + cm_dim, *hidden, 2]
    weights, biases = [], []
    for fan_in, fan_out in zip(widths[:-1], widths[1:]):
        lim = math.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-lim, lim, size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    return MlpParams(weights, biases, negative_slope)


def zero_params(spk_dim: int, cm_dim: int, hidden: Sequence[int] = HIDDEN) -> MlpParams:
    return init_params(spk_dim, cm_dim, hidden, seed=0).zeros_like()


def _softmax(z: np.ndarray) -> np.ndarray:
    e = np.exp(z - z.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def _forward(params: MlpParams, x: np.ndarray):
    """Return logits and the per-layer pre-activations and inputs needed by backprop."""
    a = params.negative_slope
    h = x
    inputs, pre = [], []
    last = len(params.weights) - 1
    for k, (w, b) in enumerate(zip(params.weights, params.biases)):
        inputs.append(h)
        z = h @ w + b
        pre.append(z)
        h = z if k == last else np.where(z > 0, z, a * z)
    return h, inputs, pre


def forward_batch(params: MlpParams, x) -> tuple[np.ndarray, np.ndarray]:
    """Logits ``(n, 2)`` and target-class probabilities ``(n,)``."""
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    if x.shape[1] != params.input_dim:
        raise ScoringError(f"input width {x.shape[1]} != network input width {params.input_dim}")
    logits, _, _ = _forward(params, x)
    return logits, _softmax(logits)[:, TARGET]


def forward(params: MlpParams, enrol_spk, test_spk, test_cm) -> tuple[tuple[float, float], float]:
    x = np.concatenate([np.asarray(enrol_spk, dtype=np.float64).ravel(),
                        np.asarray(test_spk, dtype=np.float64).ravel(),
                        np.asarray(test_cm, dtype=np.float64).ravel()])
    logits, p = forward_batch(params, x[None, :])
    return (float(logits[0, 0]), float(logits[0, 1])), float(p[0])


def _class_index(is_target) -> np.ndarray:
    is_target = np.asarray(is_target, dtype=bool).reshape(-1)
    return np.where(is_target, TARGET, 1 - TARGET)


def batch_loss(params: MlpParams, x, is_target) -> float:
    """Mean softmax cross-entropy, without gradients."""
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    y = _class_index(is_target)
    logits, _, _ = _forward(params, x)
    m = logits.max(axis=1, keepdims=True)
    lse = (m + np.log(np.exp(logits - m).sum(axis=1, keepdims=True)))[:, 0]
    return float(np.mean(lse - logits[np.arange(len(y)), y]))


def loss_and_grad(params: MlpParams, x, is_target) -> tuple[float, MlpParams]:
    """Mean softmax cross-entropy over the batch and its gradient."""
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    y = _class_index(is_target)
    n = len(y)
    if n == 0:
        raise InputError("empty batch")
    if x.shape != (n, params.input_dim):
        raise InputError(f"batch of shape {x.shape}, expected ({n}, {params.input_dim})")
    logits, inputs, pre = _forward(params, x)
    m = logits.max(axis=1, keepdims=True)
    shifted = logits - m
    lse = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    loss = float(np.mean(lse[:, 0] - shifted[np.arange(n), y]))

    delta = np.exp(shifted - lse)
    delta[np.arange(n), y] -= 1.0
    delta /= n
    gw = [None] * len(params.weights)
    gb = [None] * len(params.weights)
    for k in range(len(params.weights) - 1, -1, -1):
        gw[k] = inputs[k].T @ delta
        gb[k] = delta.sum(axis=0)
        if k:
            dh = delta @ params.weights[k].T
            delta = np.where(pre[k - 1] > 0, dh, params.negative_slope * dh)
    return loss, MlpParams(gw, gb, params.negative_slope)


# -- optimiser -----------------------------------------------------------------

@dataclass
class OptimState:
    m: list[np.ndarray]
    v: list[np.ndarray]
    step: int = 0
    lr: float = 0.0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_params(cls, params: MlpParams, **kw) -> "OptimState":
        return cls([np.zeros_like(a) for a in params.arrays()],
                   [np.zeros_like(a) for a in params.arrays()], **kw)


def adam_step(params: MlpParams, grads: MlpParams, opt: OptimState, lr: float) -> tuple[MlpParams, OptimState]:
    """One bias-corrected Adam update; inputs are left untouched."""
    if lr <= 0:
        raise ValueError("learning rate must be positive")
    p_arr, g_arr = params.arrays(), grads.arrays()
    if len(p_arr) != len(g_arr) or any(p.shape != g.shape for p, g in zip(p_arr, g_arr)):
        raise ValueError("gradient shapes do not match parameters")
    for g in g_arr:
        if not np.isfinite(g).all():
            raise NumericalError(f"non-finite gradient at optimiser step {opt.step + 1}")
    t = opt.step + 1
    b1, b2 = opt.beta1, opt.beta2
    c1 = 1.0 - b1 ** t
    c2 = 1.0 - b2 ** t
    new_p, new_m, new_v = [], [], []
    for p, g, m, v in zip(p_arr, g_arr, opt.m, opt.v):
        m = b1 * m + (1.0 - b1) * g
        v = b2 * v + (1.0 - b2) * (g * g)
        new_p.append(p - lr * (m / c1) / (np.sqrt(v / c2) + opt.eps))
        new_m.append(m)
        new_v.append(v)
    return (MlpParams.from_arrays(new_p, params.negative_slope),
            OptimState(new_m, new_v, t, lr, b1, b2, opt.eps))


@dataclass
class ScheduleConfig:
    lr_max: float = 0.1
    lr_min: float = 0.001
    period: int = 1
    restart_mult: int = 1

    def validate(self):
        if not (self.lr_max > self.lr_min > 0):
            raise ValueError("need lr_max > lr_min > 0")
        if int(self.period) != self.period or self.period < 1:
            raise ValueError("period must be an integer >= 1")
        if int(self.restart_mult) != self.restart_mult or self.restart_mult < 1:
            raise ValueError("restart_mult must be an integer >= 1")


def lr_schedule(step: int, config: ScheduleConfig) -> float:
    """Cosine annealing with warm restarts.

    Each cycle decays from ``lr_max`` to ``lr_min``; cycle ``i`` lasts
    ``period * restart_mult**i`` steps and the rate jumps back to ``lr_max``
    at the first step of every cycle.
    """
    config.validate()
    if step < 0:
        raise ValueError("step must be >= 0")
    length = config.period
    pos = step
    if config.restart_mult == 1:
        pos = step % length
    else:
        while pos >= length:
            pos -= length
            length *= config.restart_mult
    cos = math.cos(math.pi * pos / length)
    return config.lr_min + 0.5 * (config.lr_max - config.lr_min) * (1.0 + cos)


# -- training data -------------------------------------------------------------

@dataclass(frozen=True)
class TrainPair:
    enrol_utt: str
    test_utt: str
    kind: str  # target | nontarget | spoof

    def __post_init__(self):
        if self.kind not in ("target", "nontarget", "spoof"):
            raise ValueError(f"bad pair kind {self.kind!r}")
        if self.kind == "target" and self.enrol_utt == self.test_utt:
            raise ValueError("target pair uses the same utterance twice")

    @property
    def is_target(self) -> bool:
        return self.kind == "target"


def build_train_pairs(rows: Sequence[TrainRow], seed: int = 0) -> list[TrainPair]:
    """Sample one target, one non-target and one spoof pair per bona fide anchor.

    Anchors are visited in table order. The target partner is another bona
    fide utterance of the same speaker, the non-target partner a bona fide
    utterance of a different speaker, and the spoof partner a spoofed
    utterance imitating the anchor's speaker. Unsatisfiable categories are
    skipped for that anchor.
    """
    rng = np.random.default_rng(seed)
    bona: dict[str, list[str]] = {}
    spoof: dict[str, list[str]] = {}
    for r in rows:
        (bona if r.is_bonafide else spoof).setdefault(r.speaker, []).append(r.utt)
    if not any(len(u) >= 2 for u in bona.values()):
        raise InputError("degenerate training corpus: no speaker has two bona fide utterances")
    speakers = list(bona)
    pairs = []
    for si, spk in enumerate(speakers):
        own = bona[spk]
        for ai, anchor in enumerate(own):
            if len(own) >= 2:
                j = int(rng.integers(len(own) - 1))
                pairs.append(TrainPair(anchor, own[j if j < ai else j + 1], "target"))
            if len(speakers) >= 2:
                k = int(rng.integers(len(speakers) - 1))
                other = bona[speakers[k if k < si else k + 1]]
                pairs.append(TrainPair(anchor, other[int(rng.integers(len(other)))], "nontarget"))
            sp = spoof.get(spk)
            if sp:
                pairs.append(TrainPair(anchor, sp[int(rng.integers(len(sp)))], "spoof"))
    return pairs


def pair_inputs(pairs: Sequence[TrainPair], spk_store: EmbeddingStore,
                cm_store: EmbeddingStore) -> tuple[np.ndarray, np.ndarray]:
    """Stack network inputs for ``pairs``; returns ``(x, is_target)``."""
    for p in pairs:
        for u in (p.enrol_utt, p.test_utt):
            spk_store.get(u, "speaker store")
        cm_store.get(p.test_utt, "CM embedding store")
    x = np.hstack([spk_store.rows(p.enrol_utt for p in pairs),
                   spk_store.rows(p.test_utt for p in pairs),
                   cm_store.rows(p.test_utt for p in pairs)])
    return x, np.array([p.is_target for p in pairs], dtype=bool)


# -- training loop -------------------------------------------------------------

@dataclass
class TrainConfig:
    batch_size: int = 32
    epochs: int = 20
    seed: int = 0
    hidden: tuple[int, ...] = HIDDEN
    negative_slope: float = 0.01
    lr_max: float = 0.1
    lr_min: float = 0.001
    period: int | None = None  # None: one epoch
    restart_mult: int = 1

    def schedule(self, steps_per_epoch: int) -> ScheduleConfig:
        return ScheduleConfig(self.lr_max, self.lr_min,
                              self.period or steps_per_epoch, self.restart_mult)


@dataclass
class TrainResult:
    params: MlpParams
    initial: MlpParams
    trace: list[tuple[int, float, float]] = field(default_factory=list)
    metadata: dict[str, str] = field(default_factory=dict)


def train(spk_store: EmbeddingStore, cm_store: EmbeddingStore, pairs: Sequence[TrainPair],
          config: TrainConfig = TrainConfig()) -> TrainResult:
    """Mini-batch training with Adam under the warm-restart schedule.

    All randomness (initialisation, then one shuffle per epoch) comes from a
    single generator seeded with ``config.seed``.
    """
    if not pairs:
        raise InputError("no training pairs")
    if config.batch_size < 1 or config.epochs < 0:
        raise ValueError("batch_size must be >= 1 and epochs >= 0")
    x, y = pair_inputs(pairs, spk_store, cm_store)
    rng = np.random.default_rng(config.seed)
    params = init_params(spk_store.dim, cm_store.dim, config.hidden, rng=rng,
                         negative_slope=config.negative_slope)
    initial = params.copy()
    n = len(y)
    steps_per_epoch = -(-n // config.batch_size)
    sched = config.schedule(steps_per_epoch)
    sched.validate()
    opt = OptimState.for_params(params)
    trace = []
    step = 0
    for _ in range(config.epochs):
        order = rng.permutation(n)
        for start in range(0, n, config.batch_size):
            idx = order[start:start + config.batch_size]
            lr = lr_schedule(step, sched)
            with np.errstate(over="ignore", invalid="ignore"):
                # overflow surfaces below as a non-finite loss or gradient
                loss, grads = loss_and_grad(params, x[idx], y[idx])
            if not math.isfinite(loss):
                raise NumericalError(f"training diverged: non-finite loss at step {step}")
            try:
                params, opt = adam_step(params, grads, opt, lr)
            except NumericalError as e:
                raise NumericalError(f"training diverged at step {step}: {e}") from None
            trace.append((step, lr, loss))
            step += 1
    meta = {k: str(v) for k, v in asdict(config).items()}
    meta["hidden"] = ",".join(str(h) for h in config.hidden)
    meta["period"] = str(sched.period)
    meta["spk_dim"] = str(spk_store.dim)
    meta["cm_dim"] = str(cm_store.dim)
    meta["n_pairs"] = str(n)
    return TrainResult(params, initial, trace, meta)


def accuracy(params: MlpParams, x, is_target) -> float:
    _, p = forward_batch(params, x)
    return float(np.mean((p >= 0.5) == np.asarray(is_target, dtype=bool)))


def score_b2(params: MlpParams, protocol: ProtocolSet, spk_store: EmbeddingStore,
             cm_store: EmbeddingStore, normalize_enrol: bool = False) -> ScoreSet:
    """Target-class probability per trial from the averaged enrolment embedding."""
    spk_dim = spk_store.dim
    if 2 * spk_dim + cm_store.dim != params.input_dim:
        raise ScoringError(
            f"embedding dims {spk_dim}+{spk_dim}+{cm_store.dim} do not match network input {params.input_dim}")
    enrol_cache: dict[str, np.ndarray] = {}
    x = np.empty((len(protocol.trials), params.input_dim))
    for i, t in enumerate(protocol.trials):
        try:
            if t.speaker_model not in enrol_cache:
                enrol_cache[t.speaker_model] = mean_enrolment(
                    spk_store, protocol.enrolments[t.speaker_model], normalize_enrol)
            x[i, :spk_dim] = enrol_cache[t.speaker_model]
            x[i, spk_dim:2 * spk_dim] = spk_store.get(t.test_utt, "speaker store")
            x[i, 2 * spk_dim:] = cm_store.get(t.test_utt, "CM embedding store")
        except EmbeddingError as e:
            raise EmbeddingError(f"trial {i + 1} ({t.speaker_model} {t.test_utt}): {e}") from None
    if len(x):
        _, p = forward_batch(params, x)
    else:
        p = np.empty(0)
    return ScoreSet(protocol.trials, p, ScoreKind.FUSED)


# -- model file ----------------------------------------------------------------
# b"SASVMLP1", u32 layer count, then per layer u32 rows, u32 cols, rows*cols
# float64 weights (row-major), cols float64 biases; the remainder of the file
# is UTF-8 ``key=value`` metadata lines.

MODEL_MAGIC = b"SASVMLP1"


def save_model(params: MlpParams, path, metadata: dict[str, str] | None = None) -> None:
    meta = dict(metadata or {})
    meta["negative_slope"] = repr(float(params.negative_slope))
    parts = [MODEL_MAGIC, struct.pack("<I", len(params.weights))]
    for w, b in zip(params.weights, params.biases):
        parts.append(struct.pack("<II", *w.shape))
        parts.append(np.ascontiguousarray(w, dtype="<f8").tobytes())
        parts.append(np.ascontiguousarray(b, dtype="<f8").tobytes())
    for k in sorted(meta):
        v = str(meta[k])
        if "\n" in v or "=" in k:
            raise ValueError(f"metadata entry {k!r} cannot be serialised")
        parts.append(f"{k}={v}\n".encode("utf-8"))
    Path(path).write_bytes(b"".join(parts))


def load_model(path) -> tuple[MlpParams, dict[str, str]]:
    path = Path(path)
    try:
        data = path.read_bytes()
    except OSError as e:
        raise InputError(f"cannot read model file {path}: {e.strerror or e}") from e
    if data[:8] != MODEL_MAGIC:
        raise InputError(f"{path}: not a fusion model file")
    pos = 8
    try:
        (n_layers,) = struct.unpack_from("<I", data, pos)
        pos += 4
        weights, biases = [], []
        for k in range(n_layers):
            rows, cols = struct.unpack_from("<II", data, pos)
            pos += 8
            need = 8 * (rows * cols + cols)
            if pos + need > len(data):
                raise InputError(f"{path}: layer {k} truncated")
            weights.append(np.frombuffer(data, "<f8", rows * cols, pos).reshape(rows, cols).astype(np.float64))
            pos += 8 * rows * cols
            biases.append(np.frombuffer(data, "<f8", cols, pos).astype(np.float64))
            pos += 8 * cols
    except struct.error:
        raise InputError(f"{path}: truncated model header") from None
    meta = {}
    for line in data[pos:].decode("utf-8").splitlines():
        if line:
            k, _, v = line.partition("=")
            meta[k] = v
    slope = float(meta.get("negative_slope", 0.01))
    try:
        params = MlpParams(weights, biases, slope)
    except ValueError as e:
        raise InputError(f"{path}: {e}") from None
    return params, meta


def write_loss_trace(trace, path) -> None:
    lines = ["step,lr,loss\n"] + [f"{s},{lr!r},{loss!r}\n" for s, lr, loss in trace]
    Path(path).write_text("".join(lines), encoding="utf-8")
