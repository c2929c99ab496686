"""The self-training loop.

An iteration turns the current segmentation into frame targets, trains a
freshly initialized predictor on them, fits peak-picking parameters on a
development split so that the predicted boundaries agree best with the
current ones, and re-segments every utterance. Iterating replaces the
pseudo-labels with the predictor's own boundaries.

Several corpora are pooled into one predictor. Gold alignments, when
present, are only read for monitoring and for the ``dev_gold`` stopping
rule.
"""

import logging
import zlib
from dataclasses import dataclass, field

import numpy as np

from . import labeling, peaks
from .corpus_io import AudioClip, Segmentation, gold_segmentation, make_boundaries
from .evaluation import DEFAULT_TOLERANCE, boundary_f1, evaluate, make_report, token_f1
from .features import AugmentConfig, FeatureConfig, augment, draw_params, extract_all, extract_features
from .predictor import MLP, TrainConfig, init_model, predict, train

logger = logging.getLogger(__name__)

STOPPING_MODES = ("fixed", "dev_gold", "self_agreement")


@dataclass
class LoopConfig:
    max_iterations: int = 3
    dilation: int = 1
    train: TrainConfig = field(default_factory=TrainConfig)
    features: FeatureConfig = field(default_factory=FeatureConfig)
    # None disables waveform augmentation (input masking still applies)
    augment: AugmentConfig | None = field(default_factory=AugmentConfig)
    peak_heights: tuple = peaks.DEFAULT_HEIGHTS
    peak_distances: tuple = peaks.DEFAULT_DISTANCES
    peak_objective: str = "boundary"
    tolerance: float = DEFAULT_TOLERANCE
    stopping_mode: str = "fixed"
    agreement_threshold: float = 0.95
    dev_fraction: float = 0.1
    label_edges: bool = False
    seed: int = 0

    def __post_init__(self):
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")
        if not 0 < self.dev_fraction <= 0.5:
            raise ValueError("dev_fraction must lie in (0, 0.5]")
        if self.stopping_mode not in STOPPING_MODES:
            raise ValueError(f"stopping_mode must be one of {STOPPING_MODES}")
        if self.peak_objective not in ("boundary", "token"):
            raise ValueError("peak_objective must be 'boundary' or 'token'")
        if self.dilation < 0:
            raise ValueError("dilation must be >= 0")


@dataclass
class Corpus:
    """Utterances of one corpus, each cut to its VAD span.

    ``features`` rows start at the VAD start; ``clips`` (optional) hold the
    VAD-span audio used for augmentation.
    """
    name: str
    spans: dict
    features: dict
    hop_s: float
    clips: dict | None = None
    alignment: dict | None = None

    @property
    def utts(self):
        return sorted(self.spans)

    def gold_seg(self):
        return gold_segmentation(self.alignment, self.spans) if self.alignment is not None else None


def prepare_corpus(name, clips, vads, feature_cfg=FeatureConfig(), alignment=None, workers=1):
    """Cut clips to their VAD span and extract features."""
    spans = vads if isinstance(vads, dict) else {v.utt_id: (v.start_s, v.end_s) for v in vads}
    cut = {}
    for utt, (lo, hi) in spans.items():
        if utt not in clips:
            raise KeyError(f"no audio for utterance {utt!r}")
        c = clips[utt]
        a, b = int(round(lo * c.sample_rate)), int(round(hi * c.sample_rate))
        cut[utt] = AudioClip(c.samples[a:b], c.sample_rate, utt)
    feats = {u: m.frames for u, m in extract_all(cut, feature_cfg, workers).items()}
    return Corpus(name, dict(spans), feats, feature_cfg.hop_s, cut, alignment)


def dev_split(corpus, fraction, seed):
    """Seeded ``(train_utts, dev_utts)`` partition of a corpus."""
    utts = corpus.utts
    rng = np.random.default_rng(np.random.SeedSequence([seed, zlib.crc32(corpus.name.encode())]))
    n_dev = max(1, int(round(fraction * len(utts))))
    if n_dev >= len(utts):
        raise ValueError(f"corpus {corpus.name!r} is too small for a dev split")
    perm = rng.permutation(len(utts))
    dev = sorted(utts[i] for i in perm[:n_dev])
    train_utts = sorted(utts[i] for i in perm[n_dev:])
    return train_utts, dev


def iteration_seed(seed, iteration):
    return int(np.random.SeedSequence([seed, iteration]).generate_state(1)[0])


# ---------------------------------------------------------------------------
# initial segmentations

def duration_stats(alignment):
    d = np.array([w.end_s - w.start_s for ws in alignment.values() for w in ws])
    return float(d.mean()), float(d.std())


def random_boundaries(span, mean, std, rng, min_duration=0.05):
    """Pack i.i.d. normal token durations left to right inside ``span``."""
    lo, hi = span
    times = []
    t = lo
    while True:
        d = rng.normal(mean, std) if std > 0 else mean
        while d < min_duration:
            d = rng.normal(mean, std)
        t += d
        if t >= hi - 1e-9:
            break
        times.append(t)
    if times and t > hi + 1e-9:
        # the last token would overflow: merge it into its predecessor
        times.pop()
    return make_boundaries(times, span)[0]


def make_initial_segmentation(kind, spans, stats=None, seed=0, path=None):
    """Starting segmentation: ``vad`` edges only, ``random`` durations, or a ``file``."""
    if kind == "vad":
        return Segmentation({u: make_boundaries([], s)[0] for u, s in spans.items()})
    if kind == "random":
        if stats is None:
            raise ValueError("random initialisation needs duration (mean, std)")
        mean, std = stats
        seg = Segmentation()
        for k, utt in enumerate(sorted(spans)):
            rng = np.random.default_rng(np.random.SeedSequence([seed, k]))
            seg[utt] = random_boundaries(spans[utt], mean, std, rng)
        return seg
    if kind == "file":
        from .corpus_io import read_segmentation
        return read_segmentation(path, spans)
    raise ValueError(f"unknown initial segmentation kind {kind!r}")


# ---------------------------------------------------------------------------
# one iteration

@dataclass
class IterationResult:
    iteration: int
    segmentation: dict          # corpus name -> Segmentation
    model: MLP | None
    peak_params: peaks.PeakParams
    peak_fit_score: float
    report: dict                # plain values, safe to serialize


def _relative(boundaries, span, label_edges):
    b = np.asarray(boundaries, dtype=np.float64) - span[0]
    return b if label_edges else b[1:-1]


def frame_targets(corpus, seg, dilation, label_edges=False):
    return {u: labeling.boundaries_to_frame_labels(
                _relative(seg[u], corpus.spans[u], label_edges),
                len(corpus.features[u]), corpus.hop_s, dilation)
            for u in corpus.utts}


def _augmenter(items, cfg, feature_cfg, seed):
    """Fresh augmentation of training item ``i`` for each epoch."""
    def make(i, epoch):
        clip, rel_bounds, n_frames = items[i]
        rng = np.random.default_rng(np.random.SeedSequence([seed, i, epoch]))
        params = draw_params(cfg.augment, rng)
        span_bounds = np.concatenate([[0.0], rel_bounds, [clip.duration]])
        new_clip, b = augment(clip, span_bounds, params)
        if len(new_clip.samples) < feature_cfg.win:
            new_clip = clip
            b = span_bounds
        feats = extract_features(new_clip, feature_cfg).frames
        inner = b if cfg.label_edges else b[1:-1]
        labels = labeling.boundaries_to_frame_labels(inner, len(feats), feature_cfg.hop_s, cfg.dilation)
        return feats, labels
    return make


def _splits(corpora, cfg):
    return {c.name: dev_split(c, cfg.dev_fraction, cfg.seed) for c in corpora}


def run_iteration(corpora, current_seg, cfg, iter_idx, splits=None):
    """One train / fit-peaks / re-segment cycle over all ``corpora``.

    ``current_seg`` maps corpus name to its current :class:`Segmentation`.
    """
    splits = splits or _splits(corpora, cfg)
    seed = iteration_seed(cfg.seed, iter_idx)
    train_set, dev_set, aug_items = [], [], []
    for c in corpora:
        targets = frame_targets(c, current_seg[c.name], cfg.dilation, cfg.label_edges)
        tr, dv = splits[c.name]
        for u in tr:
            train_set.append((c.features[u], targets[u]))
            if c.clips is not None:
                rel = np.asarray(current_seg[c.name][u]) - c.spans[u][0]
                aug_items.append((c.clips[u], rel[1:-1], len(c.features[u])))
        dev_set.extend((c.features[u], targets[u]) for u in dv)

    augmenter = None
    if cfg.augment is not None and len(aug_items) == len(train_set):
        augmenter = _augmenter(aug_items, cfg, cfg.features, seed)
    tcfg = TrainConfig(**{**cfg.train.__dict__, "seed": seed})
    result = train(train_set, dev_set, tcfg, init_seed=seed, augmenter=augmenter, hop_s=corpora[0].hop_s)
    init_digest = init_model(train_set[0][0].shape[1], tcfg.hidden, tcfg.context_radius, seed).digest()

    tracks = {c.name: predict(result.model, c.features) for c in corpora}
    params, fit_score = fit_on_dev(corpora, tracks, current_seg, splits, cfg)
    new_seg = {c.name: peaks.segment(tracks[c.name], params, c.hop_s, c.spans) for c in corpora}

    report = {
        "iteration": iter_idx,
        "seed": seed,
        "init_digest": init_digest,
        "best_update": result.best_update,
        "best_dev_loss": result.best_dev_loss,
        "peak_min_height": params.min_height,
        "peak_min_distance": params.min_distance,
        "peak_fit_f1": fit_score,
        "corpora": {},
    }
    for c in corpora:
        report["corpora"][c.name] = {
            "self_agreement_f1": 100 * boundary_f1(new_seg[c.name], current_seg[c.name], cfg.tolerance)[2],
            "gold": monitor_gold(c, new_seg[c.name], splits[c.name][1], cfg.tolerance),
        }
    logger.info("iteration %d: peaks h=%.2f d=%d fit F1=%.3f", iter_idx, params.min_height,
                params.min_distance, fit_score)
    return IterationResult(iter_idx, new_seg, result.model, params, fit_score, report)


def fit_on_dev(corpora, tracks, reference, splits, cfg):
    dev_tracks, dev_ref, dev_spans = {}, Segmentation(), {}
    for c in corpora:
        for u in splits[c.name][1]:
            key = f"{c.name}/{u}"
            dev_tracks[key] = tracks[c.name][u]
            dev_ref[key] = reference[c.name][u]
            dev_spans[key] = c.spans[u]
    return peaks.fit_peak_params(dev_tracks, dev_ref, dev_spans, corpora[0].hop_s, cfg.tolerance,
                                 cfg.peak_heights, cfg.peak_distances, cfg.peak_objective)


def monitor_gold(corpus, seg, dev_utts, tolerance):
    """Gold metrics on all utterances and on the dev split (None without gold)."""
    if corpus.alignment is None:
        return None
    gold = corpus.gold_seg()
    out = {"all": evaluate(seg, corpus.alignment, gold, corpus.spans, tolerance)}
    sub = Segmentation({u: seg[u] for u in dev_utts})
    out["dev"] = evaluate(sub, {u: corpus.alignment[u] for u in dev_utts},
                          gold.subset(dev_utts), corpus.spans, tolerance)
    return out


# ---------------------------------------------------------------------------
# the loop

@dataclass
class SelfTrainResult:
    segmentation: dict
    iterations: list            # IterationResult, in order
    best_iteration: int         # 0 means the initial segmentation was kept
    init_report: dict

    @property
    def reports(self):
        return [self.init_report] + [it.report for it in self.iterations]

    @property
    def final(self):
        if self.best_iteration == 0:
            return None
        return self.iterations[self.best_iteration - 1]


def _dev_token_f1(corpora, seg, splits, tolerance):
    scores = []
    for c in corpora:
        dev = splits[c.name][1]
        scores.append(token_f1(seg[c.name].subset(dev), {u: c.alignment[u] for u in dev}, tolerance)[2])
    return float(np.mean(scores))


def self_train(corpora, init_seg, cfg, iteration_fn=None):
    """Iterate :func:`run_iteration` and return the segmentation kept by the stopping rule.

    ``fixed`` runs ``max_iterations`` iterations. ``dev_gold`` stops as soon
    as the dev-split token-F1 against gold drops, keeping the previous
    output. ``self_agreement`` stops once successive outputs agree with a
    boundary-F1 above ``agreement_threshold``.
    """
    iteration_fn = iteration_fn or run_iteration
    splits = _splits(corpora, cfg)
    if cfg.stopping_mode == "dev_gold" and any(c.alignment is None for c in corpora):
        raise ValueError("dev_gold stopping needs gold alignments for every corpus")
    init_report = {"iteration": 0, "corpora": {
        c.name: {"gold": monitor_gold(c, init_seg[c.name], splits[c.name][1], cfg.tolerance)}
        for c in corpora}}
    current = init_seg
    best = 0
    prev_score = _dev_token_f1(corpora, init_seg, splits, cfg.tolerance) if cfg.stopping_mode == "dev_gold" else None
    results = []
    for k in range(1, cfg.max_iterations + 1):
        res = iteration_fn(corpora, current, cfg, k, splits)
        results.append(res)
        if cfg.stopping_mode == "dev_gold":
            score = _dev_token_f1(corpora, res.segmentation, splits, cfg.tolerance)
            res.report["dev_gold_token_f1"] = 100 * score
            if score < prev_score:
                logger.info("dev token-F1 fell (%.4f < %.4f); keeping iteration %d", score, prev_score, best)
                break
            prev_score = score
            best = k
        elif cfg.stopping_mode == "self_agreement":
            best = k
            agree = np.mean([boundary_f1(res.segmentation[c.name], current[c.name], cfg.tolerance)[2]
                             for c in corpora])
            res.report["mean_self_agreement_f1"] = 100 * float(agree)
            if agree > cfg.agreement_threshold:
                break
        else:
            best = k
        current = res.segmentation
    final = init_seg if best == 0 else results[best - 1].segmentation
    return SelfTrainResult(final, results, best, init_report)


def apply_model(model, params, corpus):
    """Segment ``corpus`` with a trained model and fitted peak parameters."""
    tracks = predict(model, corpus.features)
    return peaks.segment(tracks, params, corpus.hop_s, corpus.spans)


def leave_one_out(corpora, init_segs, cfg, heldout_id):
    """Self-train without one corpus, then segment that corpus zero-shot.

    The held-out corpus takes no part in training, snapshot selection or
    peak fitting. The returned report holds the held-out corpus under its
    own name and each training corpus under ``train:<name>``.
    """
    names = [c.name for c in corpora]
    if heldout_id not in names:
        raise KeyError(f"unknown held-out corpus {heldout_id!r}; have {names}")
    if len(corpora) < 2:
        raise ValueError("leave-one-out needs at least two corpora")
    held = corpora[names.index(heldout_id)]
    rest = [c for c in corpora if c.name != heldout_id]
    run = self_train(rest, {c.name: init_segs[c.name] for c in rest}, cfg)
    if run.final is None:
        raise RuntimeError("self-training kept the initial segmentation; no model to transfer")
    records = {}
    seg = apply_model(run.final.model, run.final.peak_params, held)
    if held.alignment is not None:
        records[held.name] = evaluate(seg, held.alignment, held.gold_seg(), held.spans, cfg.tolerance)
    for c in rest:
        if c.alignment is not None:
            records[f"train:{c.name}"] = evaluate(run.segmentation[c.name], c.alignment,
                                                  c.gold_seg(), c.spans, cfg.tolerance)
    if not records:
        raise ValueError("no gold alignments to score against")
    report = make_report(records)
    report.segmentation = seg
    return report
