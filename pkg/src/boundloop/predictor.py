"""Frame-level boundary predictor: a windowed multilayer perceptron.

Each frame sees the features of its ``2R + 1`` neighbouring frames (zero
padded at the edges). Hidden layers use rectifiers, the output layer is a
single sigmoid unit. Training minimizes binary cross-entropy averaged over
the hardest fraction of frames of each batch, with input span masking,
hidden dropout, Adam, and a linear-warmup cosine learning-rate schedule.
Gradients are derived by hand.
"""

import hashlib
import logging
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .corpus_io import FormatError, read_matrix

logger = logging.getLogger(__name__)

PROB_CLAMP = 1e-7
CHECKPOINT_MAGIC = b"MLP1"


@dataclass
class MLP:
    weights: list          # (fan_in, fan_out) arrays
    biases: list
    context_radius: int

    @property
    def sizes(self):
        return [self.weights[0].shape[0]] + [w.shape[1] for w in self.weights]

    @property
    def n_features(self):
        return self.sizes[0] // (2 * self.context_radius + 1)

    def params(self):
        """Flat parameter list ``[W1, b1, W2, b2, ...]`` (views, not copies)."""
        return [p for wb in zip(self.weights, self.biases) for p in wb]

    def copy(self):
        return MLP([w.copy() for w in self.weights],
                   [b.copy() for b in self.biases], self.context_radius)

    def digest(self):
        h = hashlib.sha256()
        for p in self.params():
            h.update(np.ascontiguousarray(p, dtype="<f8").tobytes())
        return h.hexdigest()


@dataclass
class TrainConfig:
    batch_utterances: int = 12
    max_utterance_s: float = 20.0
    max_updates: int = 2000
    peak_lr: float = 1e-4
    warmup_updates: int = 200
    cosine_period: int = 1000
    dropout: float = 0.10
    mask_fraction: float = 0.15
    mask_span: int = 5
    keep_fraction: float = 0.50
    # fraction of hardest dev frames in the snapshot-selection loss; all
    # frames by default, since the hardest dev frames are mostly label noise
    dev_keep_fraction: float = 1.0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    dev_every: int = 50
    hidden: tuple = (256, 128)
    context_radius: int = 7
    seed: int = 0

    def __post_init__(self):
        self.hidden = tuple(int(h) for h in self.hidden)
        if not 0 < self.keep_fraction <= 1:
            raise ValueError("keep_fraction must lie in (0, 1]")
        if not 0 < self.dev_keep_fraction <= 1:
            raise ValueError("dev_keep_fraction must lie in (0, 1]")
        if not 0 <= self.dropout < 1:
            raise ValueError("dropout must lie in [0, 1)")
        if not 0 <= self.mask_fraction < 1:
            raise ValueError("mask_fraction must lie in [0, 1)")
        if self.batch_utterances < 1 or self.max_updates < 0:
            raise ValueError("batch_utterances must be >= 1 and max_updates >= 0")
        if self.warmup_updates < 0 or self.cosine_period < 1 or self.dev_every < 1:
            raise ValueError("warmup_updates >= 0, cosine_period >= 1, dev_every >= 1 required")
        if self.context_radius < 0 or self.mask_span < 1:
            raise ValueError("context_radius >= 0 and mask_span >= 1 required")


@dataclass
class AdamState:
    step: int
    m: list
    v: list


@dataclass
class TrainResult:
    model: MLP
    train_curve: list = field(default_factory=list)   # (update, batch loss)
    dev_curve: list = field(default_factory=list)     # (update, dev loss)
    best_update: int = 0
    best_dev_loss: float = math.inf


# ---------------------------------------------------------------------------
# model

def init_model(n_features, hidden=(256, 128), context_radius=7, seed=0):
    """Glorot-uniform weights, zero biases; deterministic given ``seed``."""
    sizes = [(2 * context_radius + 1) * n_features, *hidden, 1]
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        bound = math.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    return MLP(weights, biases, context_radius)


def context_stack(features, radius):
    """Rows ``i - radius .. i + radius`` of ``features`` concatenated per frame."""
    x = np.asarray(features, dtype=np.float64)
    n, d = x.shape
    padded = np.zeros((n + 2 * radius, d))
    padded[radius:radius + n] = x
    win = np.lib.stride_tricks.sliding_window_view(padded, n, axis=0)
    # win: (2R+1, d, n) -> (n, (2R+1)*d)
    return np.ascontiguousarray(win.transpose(2, 0, 1).reshape(n, -1))


def span_mask(n_frames, fraction, span, rng):
    """Boolean mask covering at least ``fraction`` of frames with random spans."""
    mask = np.zeros(n_frames, dtype=bool)
    target = int(math.ceil(round(fraction * n_frames, 9)))
    span = min(span, n_frames)
    while mask.sum() < target:
        start = int(rng.integers(0, n_frames - span + 1))
        mask[start:start + span] = True
    return mask


def sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def _prepare_inputs(model, features_list, cfg=None, rng=None):
    """Context-stacked inputs for a batch; masks inputs when ``rng`` is given."""
    blocks = []
    for f in features_list:
        f = np.asarray(f, dtype=np.float64)
        if rng is not None and cfg is not None and cfg.mask_fraction > 0:
            f = f.copy()
            f[span_mask(len(f), cfg.mask_fraction, cfg.mask_span, rng)] = 0.0
        blocks.append(context_stack(f, model.context_radius))
    return np.concatenate(blocks, axis=0)


def _forward(model, x, dropout=0.0, rng=None):
    acts = [x]
    pre = []
    drops = []
    a = x
    n_layers = len(model.weights)
    for k, (w, b) in enumerate(zip(model.weights, model.biases)):
        z = a @ w + b
        pre.append(z)
        if k == n_layers - 1:
            break
        a = np.maximum(z, 0.0)
        if dropout > 0 and rng is not None:
            keep = (rng.random(a.shape) >= dropout) / (1.0 - dropout)
            a = a * keep
            drops.append(keep)
        else:
            drops.append(None)
        acts.append(a)
    probs = sigmoid(pre[-1][:, 0])
    return probs, (acts, pre, drops)


def forward(model, features, train_mode=False, seed=0, cfg=None):
    """Per-frame boundary probabilities for one utterance.

    In train mode, random spans of input frames are zeroed and hidden units
    dropped, both drawn from ``seed`` with rates from ``cfg``.
    """
    cfg = cfg or TrainConfig()
    rng = np.random.default_rng(seed) if train_mode else None
    x = _prepare_inputs(model, [features], cfg, rng)
    probs, _ = _forward(model, x, cfg.dropout if train_mode else 0.0, rng)
    return probs


def predict(model, features_by_utt):
    """Inference-mode probabilities for a dict of feature matrices."""
    return {u: forward(model, f) for u, f in features_by_utt.items()}


# ---------------------------------------------------------------------------
# loss and gradients

def frame_bce(probs, labels):
    p = np.clip(np.asarray(probs, dtype=np.float64), PROB_CLAMP, 1.0 - PROB_CLAMP)
    y = np.asarray(labels, dtype=np.float64)
    return -(y * np.log(p) + (1.0 - y) * np.log1p(-p))


def top_k_mask(losses, keep_fraction):
    n = len(losses)
    k = int(math.ceil(round(keep_fraction * n, 9)))
    order = np.argsort(-losses, kind="stable")
    mask = np.zeros(n, dtype=bool)
    mask[order[:k]] = True
    return mask


def bce_topk_loss(probs, labels, keep_fraction=0.5):
    """Mean cross-entropy over the ``ceil(keep_fraction * N)`` hardest frames.

    Returns ``(loss, mask)``; ties in per-frame loss favour lower indices.
    """
    probs = np.asarray(probs, dtype=np.float64)
    if len(probs) == 0:
        raise ValueError("cannot compute a loss over zero frames")
    if len(probs) != len(labels):
        raise ValueError(f"{len(probs)} probabilities for {len(labels)} labels")
    losses = frame_bce(probs, labels)
    mask = top_k_mask(losses, keep_fraction)
    return float(losses[mask].mean()), mask


def _backward(model, cache, probs, labels, keep_fraction):
    acts, pre, drops = cache
    loss, mask = bce_topk_loss(probs, labels, keep_fraction)
    y = np.asarray(labels, dtype=np.float64)
    inside = (probs > PROB_CLAMP) & (probs < 1.0 - PROB_CLAMP)
    dz = np.where(mask & inside, probs - y, 0.0) / mask.sum()
    # only kept frames carry gradient
    rows = np.flatnonzero(mask)
    delta = dz[rows][:, None]
    n_layers = len(model.weights)
    grads_w = [None] * n_layers
    grads_b = [None] * n_layers
    for k in range(n_layers - 1, -1, -1):
        a_in = acts[k][rows]
        grads_w[k] = a_in.T @ delta
        grads_b[k] = delta.sum(axis=0)
        if k == 0:
            break
        da = delta @ model.weights[k].T
        if drops[k - 1] is not None:
            da = da * drops[k - 1][rows]
        delta = da * (pre[k - 1][rows] > 0)
    grads = [g for wb in zip(grads_w, grads_b) for g in wb]
    return loss, grads


def loss_and_grads(model, features_list, labels_list, cfg=None, rng=None):
    """Batch loss and exact gradients, flat in :meth:`MLP.params` order.

    With ``rng`` the batch is processed in train mode (masking and dropout);
    without it the pass is deterministic. Frame selection pools all frames
    of the batch.
    """
    cfg = cfg or TrainConfig()
    x = _prepare_inputs(model, features_list, cfg, rng)
    labels = np.concatenate([np.asarray(l, dtype=np.float64) for l in labels_list])
    probs, cache = _forward(model, x, cfg.dropout if rng is not None else 0.0, rng)
    return _backward(model, cache, probs, labels, cfg.keep_fraction)


def backward(model, features, labels, cfg=None, seed=None):
    """Gradients of the kept-frame mean loss for one utterance or a batch.

    ``features``/``labels`` may be single arrays or lists of them. A
    ``seed`` turns on train-mode masking and dropout.
    """
    if isinstance(features, np.ndarray) and features.ndim == 2:
        features, labels = [features], [labels]
    rng = np.random.default_rng(seed) if seed is not None else None
    return loss_and_grads(model, features, labels, cfg, rng)[1]


def batch_loss(model, features_list, labels_list, keep_fraction):
    """Deterministic (no masking, no dropout) top-k loss over a set of utterances."""
    x = _prepare_inputs(model, features_list)
    probs, _ = _forward(model, x)
    labels = np.concatenate([np.asarray(l, dtype=np.float64) for l in labels_list])
    return bce_topk_loss(probs, labels, keep_fraction)[0]


# ---------------------------------------------------------------------------
# optimization

def lr_at(step, cfg):
    """Linear warmup to ``peak_lr``, then half-cosine decay to zero."""
    if step < 0:
        raise ValueError("step must be >= 0")
    if step < cfg.warmup_updates:
        return cfg.peak_lr * step / cfg.warmup_updates
    progress = min((step - cfg.warmup_updates) / cfg.cosine_period, 1.0)
    return cfg.peak_lr * 0.5 * (1.0 + math.cos(math.pi * progress))


def adam_init(params):
    return AdamState(0, [np.zeros_like(p) for p in params], [np.zeros_like(p) for p in params])


def adam_step(params, grads, state, lr, cfg):
    """In-place bias-corrected Adam update of ``params``; returns ``state``."""
    if len(params) != len(grads):
        raise ValueError("params and grads differ in length")
    for i, g in enumerate(grads):
        if g.shape != params[i].shape:
            raise ValueError(f"gradient {i} has shape {g.shape}, expected {params[i].shape}")
        if not np.all(np.isfinite(g)):
            kind = "weights" if i % 2 == 0 else "biases"
            raise FloatingPointError(f"non-finite gradient in layer {i // 2 + 1} {kind}")
    state.step += 1
    t = state.step
    c1 = 1.0 - cfg.beta1 ** t
    c2 = 1.0 - cfg.beta2 ** t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m *= cfg.beta1
        m += (1.0 - cfg.beta1) * g
        v *= cfg.beta2
        v += (1.0 - cfg.beta2) * g * g
        p -= lr * (m / c1) / (np.sqrt(v / c2) + cfg.eps)
    return state


# ---------------------------------------------------------------------------
# training

def split_long(features, labels, max_frames):
    """Cut an utterance into chunks of at most ``max_frames`` frames."""
    if len(features) <= max_frames:
        return [(features, labels)]
    return [(features[i:i + max_frames], labels[i:i + max_frames])
            for i in range(0, len(features), max_frames)]


def train(train_set, dev_set, cfg, n_features=None, init_seed=None, augmenter=None,
          hop_s=0.02):
    """Train a fresh predictor and keep the snapshot with the lowest dev loss.

    Parameters
    ----------
    train_set, dev_set : list of (features, labels)
        Per-utterance feature matrices and binary frame targets.
    cfg : TrainConfig
    n_features : int, optional
        Feature dimension; read from the data when omitted.
    init_seed : int, optional
        Seed for the initial weights; defaults to ``cfg.seed``.
    augmenter : callable, optional
        ``augmenter(index, epoch) -> (features, labels)`` giving a fresh
        augmented version of training utterance ``index``. Without it the
        stored features are used and only masking/dropout add noise.
    hop_s : float
        Frame hop, used to split utterances longer than ``max_utterance_s``.

    Returns
    -------
    TrainResult
    """
    if not train_set:
        raise ValueError("training set is empty")
    if not dev_set:
        raise ValueError("a development set is required for snapshot selection")
    n_features = n_features or train_set[0][0].shape[1]
    model = init_model(n_features, cfg.hidden, cfg.context_radius,
                       cfg.seed if init_seed is None else init_seed)
    result = TrainResult(model.copy())
    if cfg.max_updates == 0:
        return result

    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 1]))
    max_frames = max(1, int(round(cfg.max_utterance_s / hop_s)))
    dev_feats = [f for f, _ in dev_set]
    dev_labels = [l for _, l in dev_set]
    params = model.params()
    state = adam_init(params)
    update = 0
    epoch = 0
    while update < cfg.max_updates:
        order = rng.permutation(len(train_set))
        chunks = []
        for i in order:
            f, l = augmenter(int(i), epoch) if augmenter else train_set[i]
            chunks.extend(split_long(f, l, max_frames))
        for s in range(0, len(chunks), cfg.batch_utterances):
            batch = chunks[s:s + cfg.batch_utterances]
            loss, grads = loss_and_grads(model, [f for f, _ in batch],
                                         [l for _, l in batch], cfg, rng)
            update += 1
            adam_step(params, grads, state, lr_at(update, cfg), cfg)
            result.train_curve.append((update, loss))
            if update % cfg.dev_every == 0 or update == cfg.max_updates:
                dev_loss = batch_loss(model, dev_feats, dev_labels, cfg.dev_keep_fraction)
                result.dev_curve.append((update, dev_loss))
                logger.debug("update %d train %.4f dev %.4f", update, loss, dev_loss)
                if dev_loss < result.best_dev_loss:
                    result.best_dev_loss = dev_loss
                    result.best_update = update
                    result.model = model.copy()
            if update >= cfg.max_updates:
                break
        epoch += 1
    return result


# ---------------------------------------------------------------------------
# files

def save_model(path, model):
    """``MLP1`` checkpoint: magic, u32 layer count, u32 context radius,
    u32 layer sizes, then per layer f64 weights (row-major) and biases."""
    sizes = model.sizes
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(struct.pack("<II", len(model.weights), model.context_radius))
        f.write(struct.pack(f"<{len(sizes)}I", *sizes))
        for w, b in zip(model.weights, model.biases):
            f.write(np.ascontiguousarray(w, dtype="<f8").tobytes())
            f.write(np.ascontiguousarray(b, dtype="<f8").tobytes())


def load_model(path):
    raw = Path(path).read_bytes()
    if raw[:4] != CHECKPOINT_MAGIC:
        raise FormatError(f"{path}: bad magic {raw[:4]!r}")
    n_layers, radius = struct.unpack_from("<II", raw, 4)
    off = 12
    sizes = struct.unpack_from(f"<{n_layers + 1}I", raw, off)
    off += 4 * (n_layers + 1)
    expected = off + 8 * sum(a * b + b for a, b in zip(sizes[:-1], sizes[1:]))
    if len(raw) != expected:
        raise FormatError(f"{path}: expected {expected} bytes, found {len(raw)}")
    weights, biases = [], []
    for a, b in zip(sizes[:-1], sizes[1:]):
        weights.append(np.frombuffer(raw, "<f8", a * b, off).reshape(a, b).copy())
        off += 8 * a * b
        biases.append(np.frombuffer(raw, "<f8", b, off).copy())
        off += 8 * b
    return MLP(weights, biases, radius)


def load_external_probs(path, n_frames=None):
    """Load a probability track produced by another model.

    The file is a one-column ``FMX1`` matrix. ``n_frames``, when given, must
    match the track length.
    """
    m = read_matrix(path)
    if m.frames.shape[1] != 1:
        raise FormatError(f"{path}: probability track must have dim 1, got {m.frames.shape[1]}")
    p = m.frames[:, 0].astype(np.float64)
    if not np.all(np.isfinite(p)) or p.min(initial=0.0) < 0 or p.max(initial=0.0) > 1:
        raise ValueError(f"{path}: probabilities outside [0, 1]")
    if n_frames is not None and len(p) != n_frames:
        raise ValueError(f"{path}: {len(p)} frames, features have {n_frames}")
    return p
