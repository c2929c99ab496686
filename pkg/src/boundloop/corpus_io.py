"""Readers and writers for every on-disk artifact of a segmentation run.

Text formats are whitespace separated, one record per line::

    vad file           utt_id start_s end_s
    segmentation file  utt_id time_s
    alignment file     utt_id word start_s end_s

Times are written with millisecond precision. Binary matrices (features and
probability tracks) use the ``FMX1`` layout: magic, little-endian ``u32``
frame count, ``u32`` dimension, ``f32`` hop in seconds, then row-major
``f32`` values.
"""

import logging
import struct
import wave
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple

import numpy as np

logger = logging.getLogger(__name__)

MATRIX_MAGIC = b"FMX1"
_MATRIX_HEADER = struct.Struct("<4sIIf")
TIME_DECIMALS = 3


class FormatError(ValueError):
    """Raised when a file does not follow its expected format."""


class ValidationError(ValueError):
    """Raised when parsed content violates a type invariant.

    ``path`` and ``lineno`` locate the offending record when known.
    """

    def __init__(self, message, path=None, lineno=None):
        self.path = path
        self.lineno = lineno
        where = ""
        if path is not None:
            where = f"{path}:{lineno}: " if lineno is not None else f"{path}: "
        super().__init__(where + message)


@dataclass
class AudioClip:
    samples: np.ndarray
    sample_rate: int
    utt_id: str = ""

    @property
    def duration(self):
        return len(self.samples) / self.sample_rate


class VadSegment(NamedTuple):
    utt_id: str
    start_s: float
    end_s: float


class Word(NamedTuple):
    label: str
    start_s: float
    end_s: float


@dataclass
class FeatureMatrix:
    utt_id: str
    frames: np.ndarray
    hop_s: float

    @property
    def n_frames(self):
        return self.frames.shape[0]


class Segmentation(dict):
    """Mapping ``utt_id -> sorted boundary times`` (numpy float arrays).

    Every entry contains its VAD start and end. ``warn_count`` records how
    many boundaries were clamped into their VAD span while building it.
    """

    def __init__(self, *args, warn_count=0, **kwargs):
        super().__init__(*args, **kwargs)
        self.warn_count = warn_count

    def copy(self):
        return Segmentation({k: v.copy() for k, v in self.items()},
                            warn_count=self.warn_count)

    def subset(self, utt_ids):
        return Segmentation({u: self[u] for u in utt_ids})


# ---------------------------------------------------------------------------
# audio

def read_wav(path):
    """Read a mono 16-bit PCM WAV file into an :class:`AudioClip`."""
    path = Path(path)
    try:
        with wave.open(str(path), "rb") as f:
            n_channels = f.getnchannels()
            width = f.getsampwidth()
            sr = f.getframerate()
            n_frames = f.getnframes()
            data = f.readframes(n_frames)
    except wave.Error as exc:
        # the stdlib reader rejects anything that is not plain PCM
        raise FormatError(f"{path}: format unsupported ({exc})") from exc
    except EOFError as exc:
        raise FormatError(f"{path}: truncated header") from exc
    if n_channels != 1:
        raise FormatError(f"{path}: channels={n_channels} unsupported")
    if width != 2:
        raise FormatError(f"{path}: sample_width={8 * width} bits unsupported")
    if len(data) != 2 * n_frames:
        raise FormatError(
            f"{path}: truncated data ({len(data) // 2} of {n_frames} samples)")
    if n_frames == 0:
        raise FormatError(f"{path}: no samples")
    samples = np.frombuffer(data, dtype="<i2").astype(np.float64) / 32768.0
    return AudioClip(np.clip(samples, -1.0, 1.0), sr, path.stem)


def write_wav(path, clip):
    x = np.clip(np.asarray(clip.samples, dtype=np.float64), -1.0, 1.0)
    pcm = np.clip(np.round(x * 32768.0), -32768, 32767).astype("<i2")
    with wave.open(str(path), "wb") as f:
        f.setnchannels(1)
        f.setsampwidth(2)
        f.setframerate(int(clip.sample_rate))
        f.writeframes(pcm.tobytes())


# ---------------------------------------------------------------------------
# text tables

def _records(path, n_fields):
    path = Path(path)
    with open(path) as f:
        for lineno, line in enumerate(f, 1):
            fields = line.split()
            if not fields or fields[0].startswith("#"):
                continue
            if len(fields) != n_fields:
                raise ValidationError(
                    f"expected {n_fields} fields, got {len(fields)}", path, lineno)
            yield lineno, fields


def _float(text, path, lineno):
    try:
        value = float(text)
    except ValueError:
        raise ValidationError(f"not a number: {text!r}", path, lineno) from None
    if not np.isfinite(value):
        raise ValidationError(f"non-finite time {text!r}", path, lineno)
    return value


def read_vad(path):
    """Parse a VAD table; returns segments sorted by (utt_id, start)."""
    segs = []
    for lineno, (utt, a, b) in _records(path, 3):
        start, end = _float(a, path, lineno), _float(b, path, lineno)
        if start < 0 or not start < end:
            raise ValidationError(f"invalid span [{a}, {b}]", path, lineno)
        segs.append((VadSegment(utt, start, end), lineno))
    segs.sort(key=lambda s: (s[0].utt_id, s[0].start_s))
    for (prev, _), (cur, lineno) in zip(segs, segs[1:]):
        if prev.utt_id == cur.utt_id and cur.start_s < prev.end_s:
            raise ValidationError(
                f"segment overlaps [{prev.start_s}, {prev.end_s}]", path, lineno)
    return [s for s, _ in segs]


def write_vad(path, vads):
    with open(path, "w") as f:
        for s in vads:
            f.write(f"{s.utt_id} {s.start_s:.3f} {s.end_s:.3f}\n")


def vad_spans(vads):
    """Index VAD segments by utterance id.

    The pipeline treats a VAD segment as one utterance, so every id must
    occur once.
    """
    spans = {}
    for s in vads:
        if s.utt_id in spans:
            raise ValidationError(
                f"utterance {s.utt_id!r} has several VAD segments; "
                "give each segment its own id")
        spans[s.utt_id] = (s.start_s, s.end_s)
    return spans


def read_alignment(path, vads=None):
    """Parse a word alignment table into ``{utt_id: [Word, ...]}``.

    When ``vads`` is given, every word must lie inside its utterance span.
    """
    rows = {}
    for lineno, (utt, label, a, b) in _records(path, 4):
        start, end = _float(a, path, lineno), _float(b, path, lineno)
        if start < 0 or not start < end:
            raise ValidationError(f"invalid word span [{a}, {b}]", path, lineno)
        rows.setdefault(utt, []).append((Word(label, start, end), lineno))
    spans = vad_spans(vads) if vads is not None else None
    alignment = {}
    for utt, words in rows.items():
        words.sort(key=lambda w: w[0].start_s)
        for (prev, _), (cur, lineno) in zip(words, words[1:]):
            if cur.start_s < prev.end_s:
                raise ValidationError(
                    f"word {cur.label!r} overlaps {prev.label!r}", path, lineno)
        if spans is not None:
            if utt not in spans:
                raise ValidationError(f"unknown utterance {utt!r}", path, words[0][1])
            lo, hi = spans[utt]
            for w, lineno in words:
                if w.start_s < lo - 5e-4 or w.end_s > hi + 5e-4:
                    raise ValidationError(
                        f"word {w.label!r} outside VAD [{lo}, {hi}]", path, lineno)
        alignment[utt] = [w for w, _ in words]
    return alignment


def write_alignment(path, alignment):
    with open(path, "w") as f:
        for utt in sorted(alignment):
            for w in alignment[utt]:
                f.write(f"{utt} {w.label} {w.start_s:.3f} {w.end_s:.3f}\n")


# ---------------------------------------------------------------------------
# segmentations

def make_boundaries(times, span):
    """Build a valid boundary array for one utterance.

    Times are rounded to the millisecond, clamped into ``span``, deduplicated,
    and the span edges are added. Returns ``(boundaries, n_clamped)``.
    """
    lo, hi = (round(float(v), TIME_DECIMALS) for v in span)
    t = np.round(np.asarray(times, dtype=np.float64).ravel(), TIME_DECIMALS)
    outside = (t < lo) | (t > hi)
    t = np.clip(t, lo, hi)
    t = np.unique(np.concatenate([[lo], t, [hi]]))
    return t, int(outside.sum())


def segmentation_from_times(times_by_utt, spans):
    """Apply :func:`make_boundaries` to each utterance of ``times_by_utt``."""
    seg = Segmentation()
    for utt, times in times_by_utt.items():
        if utt not in spans:
            raise ValidationError(f"unknown utterance {utt!r}")
        seg[utt], n = make_boundaries(times, spans[utt])
        seg.warn_count += n
    return seg


def read_segmentation(path, vads):
    """Read boundary times, inserting VAD edges and clamping strays.

    Utterances present in ``vads`` but absent from the file come back with
    their edges only.
    """
    spans = vad_spans(vads) if not isinstance(vads, dict) else vads
    times = {utt: [] for utt in spans}
    last = {}
    for lineno, (utt, t) in _records(path, 2):
        if utt not in spans:
            raise ValidationError(f"unknown utterance {utt!r}", path, lineno)
        value = _float(t, path, lineno)
        if utt in last and value <= last[utt]:
            raise ValidationError(
                f"times not strictly increasing ({t} after {last[utt]:.3f})",
                path, lineno)
        last[utt] = value
        times[utt].append(value)
    seg = segmentation_from_times(times, spans)
    if seg.warn_count:
        logger.warning("%s: clamped %d boundaries into their VAD span",
                       path, seg.warn_count)
    return seg


def write_segmentation(seg, path):
    with open(path, "w") as f:
        for utt in sorted(seg):
            for t in seg[utt]:
                f.write(f"{utt} {t:.3f}\n")


def gold_segmentation(alignment, spans):
    """Boundaries implied by a word alignment (word edges plus VAD edges)."""
    times = {}
    for utt in spans:
        words = alignment.get(utt, [])
        times[utt] = [t for w in words for t in (w.start_s, w.end_s)]
    return segmentation_from_times(times, spans)


# ---------------------------------------------------------------------------
# binary matrices

def write_matrix(path, matrix, hop_s=0.0):
    """Write a 2-D matrix (a 1-D array is stored as one column)."""
    m = np.asarray(matrix, dtype="<f4")
    if m.ndim == 1:
        m = m[:, None]
    if m.ndim != 2:
        raise ValueError(f"matrix must be 2-D, got shape {m.shape}")
    with open(path, "wb") as f:
        f.write(_MATRIX_HEADER.pack(MATRIX_MAGIC, m.shape[0], m.shape[1], hop_s))
        f.write(np.ascontiguousarray(m).tobytes())


def read_matrix(path):
    """Read an ``FMX1`` file into a :class:`FeatureMatrix`."""
    path = Path(path)
    raw = path.read_bytes()
    if len(raw) < _MATRIX_HEADER.size:
        raise FormatError(f"{path}: truncated header")
    magic, n, dim, hop = _MATRIX_HEADER.unpack_from(raw)
    if magic != MATRIX_MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}")
    body = raw[_MATRIX_HEADER.size:]
    if len(body) != 4 * n * dim:
        raise FormatError(
            f"{path}: header says {n}x{dim} values, body holds {len(body) // 4}")
    frames = np.frombuffer(body, dtype="<f4").reshape(n, dim).copy()
    return FeatureMatrix(path.stem, frames, float(hop))
