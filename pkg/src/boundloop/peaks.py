"""Boundary extraction from probability tracks by constrained peak picking."""

from dataclasses import dataclass

import numpy as np

from .corpus_io import Segmentation, make_boundaries

DEFAULT_HEIGHTS = tuple(round(0.05 * k, 2) for k in range(1, 20))
DEFAULT_DISTANCES = tuple(range(1, 11))


@dataclass(frozen=True)
class PeakParams:
    min_height: float = 0.5
    min_distance: int = 1

    def __post_init__(self):
        if not 0 < self.min_height < 1:
            raise ValueError("min_height must lie in (0, 1)")
        if self.min_distance < 1:
            raise ValueError("min_distance must be >= 1")


def local_maxima(x):
    """Indices of strict local maxima; a flat top yields its (left) center.

    The first and last samples are never maxima.
    """
    x = np.asarray(x, dtype=np.float64)
    n = len(x)
    if n < 3:
        return np.zeros(0, dtype=np.int64)
    # run-length encode to handle plateaus
    change = np.flatnonzero(np.diff(x) != 0) + 1
    starts = np.concatenate([[0], change])
    ends = np.concatenate([change, [n]]) - 1
    vals = x[starts]
    inner = np.arange(1, len(starts) - 1)
    is_peak = (vals[inner] > vals[inner - 1]) & (vals[inner] > vals[inner + 1])
    runs = inner[is_peak]
    return (starts[runs] + ends[runs]) // 2


def detect_peaks(probs, params):
    """Local maxima at least ``min_height`` high and ``min_distance`` apart.

    Candidates are accepted greedily from the highest down (ties to the
    lower index); a candidate closer than ``min_distance`` frames to an
    accepted peak is discarded. Returns sorted indices.
    """
    x = np.asarray(probs, dtype=np.float64)
    cand = local_maxima(x)
    cand = cand[x[cand] >= params.min_height]
    d = params.min_distance
    if d <= 1 or len(cand) < 2:
        return cand
    order = cand[np.lexsort((cand, -x[cand]))]
    blocked = np.zeros(len(x), dtype=bool)
    keep = []
    for i in order:
        if not blocked[i]:
            keep.append(i)
            blocked[max(0, i - d + 1):i + d] = True
    return np.sort(np.asarray(keep, dtype=np.int64))


def peaks_to_boundaries(indices, hop_s, span):
    """Boundary times of one utterance from peak frame indices."""
    lo, hi = span
    t = lo + np.asarray(indices, dtype=np.float64) * hop_s
    return make_boundaries(t[t < hi], span)[0]


def peaks_to_segmentation(peaks_by_utt, hop_s, spans):
    return Segmentation({u: peaks_to_boundaries(idx, hop_s, spans[u])
                         for u, idx in peaks_by_utt.items()})


def segment(tracks, params, hop_s, spans):
    """Detect peaks on every track and build a :class:`Segmentation`."""
    return peaks_to_segmentation(
        {u: detect_peaks(p, params) for u, p in tracks.items()}, hop_s, spans)


def fit_peak_params(tracks, reference_seg, spans, hop_s, tolerance=0.03,
                    heights=DEFAULT_HEIGHTS, distances=DEFAULT_DISTANCES,
                    objective="boundary"):
    """Exhaustive grid search for the peak parameters best matching a reference.

    The score is boundary-F1 (or token-F1 over the reference's tokens with
    ``objective="token"``) between the detected and the reference
    boundaries. Ties go to the smaller distance, then the larger height.
    Returns ``(PeakParams, score)``.
    """
    from .evaluation import boundary_counts, token_counts, f1_from_counts

    if not heights or not distances:
        raise ValueError("empty peak-parameter grid")
    if set(tracks) != set(reference_seg):
        raise ValueError("tracks and reference cover different utterances")
    count = {"boundary": boundary_counts, "token": token_counts}[objective]
    utts = sorted(tracks)
    ref = [np.asarray(reference_seg[u]) for u in utts]
    best = None
    for d in sorted(distances):
        for h in sorted(heights, reverse=True):
            params = PeakParams(h, d)
            totals = np.zeros(3)
            for u, r in zip(utts, ref):
                hyp = peaks_to_boundaries(detect_peaks(tracks[u], params), hop_s, spans[u])
                totals += count(hyp, r, tolerance)
            score = f1_from_counts(*totals)[2]
            # strict '>' keeps the earlier cell, which is the preferred tie-break
            if best is None or score > best[1]:
                best = (params, score)
    return best
