"""Conversion between boundary times and per-frame binary targets."""

import numpy as np


def time_to_frame(times, hop_s):
    """Nearest frame index, halves rounded up.

    The ratio is first rounded to 9 decimals so that millisecond times such
    as 0.030 s at a 20 ms hop land on the intended half-way point.
    """
    ratio = np.round(np.asarray(times, dtype=np.float64) / hop_s, 9)
    return np.floor(ratio + 0.5).astype(np.int64)


def frames_to_times(indices, hop_s):
    return np.asarray(indices, dtype=np.float64) * hop_s


def boundaries_to_frame_labels(boundaries, n_frames, hop_s, dilation=1):
    """Binary boundary targets for one utterance.

    ``boundaries`` are times relative to the first frame. Each one marks its
    nearest frame and the ``dilation`` frames on either side, clamped to
    the utterance.
    """
    if n_frames < 1:
        raise ValueError("n_frames must be >= 1")
    if dilation < 0:
        raise ValueError("dilation must be >= 0")
    labels = np.zeros(n_frames, dtype=np.int8)
    idx = np.clip(time_to_frame(boundaries, hop_s), 0, n_frames - 1)
    for i in np.unique(idx):
        labels[max(0, i - dilation):min(n_frames, i + dilation + 1)] = 1
    return labels
