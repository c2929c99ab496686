"""Log-mel features and label-preserving waveform augmentation."""

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy.signal import fftconvolve

from .corpus_io import AudioClip, FeatureMatrix, Segmentation, make_boundaries

LOG_FLOOR = 1e-10


@dataclass(frozen=True)
class FeatureConfig:
    sample_rate: int = 16000
    win_ms: float = 25.0
    hop_ms: float = 20.0
    n_mels: int = 40

    @property
    def win(self):
        return int(round(self.sample_rate * self.win_ms / 1000))

    @property
    def hop(self):
        return int(round(self.sample_rate * self.hop_ms / 1000))

    @property
    def hop_s(self):
        return self.hop / self.sample_rate

    @property
    def n_fft(self):
        return 1 << (self.win - 1).bit_length()

    def n_frames(self, n_samples):
        return (n_samples - self.win) // self.hop + 1


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_band_edges(n_mels, sample_rate):
    """The ``n_mels + 2`` corner frequencies (Hz) of the triangular filters."""
    return mel_to_hz(np.linspace(0.0, hz_to_mel(sample_rate / 2), n_mels + 2))


def mel_filterbank(n_mels, n_fft, sample_rate):
    """Triangular filters on the rfft bins, shape ``(n_mels, n_fft//2 + 1)``."""
    edges = mel_band_edges(n_mels, sample_rate)
    bins = np.fft.rfftfreq(n_fft, 1.0 / sample_rate)
    lo, mid, hi = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    up = (bins - lo) / (mid - lo)
    down = (hi - bins) / (hi - mid)
    return np.maximum(0.0, np.minimum(up, down))


_FB_CACHE = {}


def _filterbank(cfg):
    key = (cfg.n_mels, cfg.n_fft, cfg.sample_rate)
    if key not in _FB_CACHE:
        _FB_CACHE[key] = mel_filterbank(*key)
    return _FB_CACHE[key]


def log_mel(samples, cfg):
    """Un-normalized log-mel energies, one row per frame."""
    x = np.asarray(samples, dtype=np.float64)
    n = cfg.n_frames(len(x))
    if n < 1:
        raise ValueError(
            f"clip of {len(x)} samples is shorter than one {cfg.win}-sample window")
    idx = np.arange(cfg.win)[None, :] + cfg.hop * np.arange(n)[:, None]
    frames = x[idx] * np.hanning(cfg.win + 2)[1:-1]
    power = np.abs(np.fft.rfft(frames, n=cfg.n_fft, axis=1)) ** 2
    return np.log(power @ _filterbank(cfg).T + LOG_FLOOR)


def normalize(feats):
    """Per-dimension mean/variance normalization; constant dims become 0."""
    mu = feats.mean(axis=0)
    sd = feats.std(axis=0)
    centered = feats - mu
    safe = np.where(sd > 1e-8 * np.maximum(1.0, np.abs(mu)), sd, np.inf)
    return centered / safe


def extract_features(clip, cfg=FeatureConfig()):
    """Normalized log-mel :class:`FeatureMatrix` of ``clip``."""
    if clip.sample_rate != cfg.sample_rate:
        raise ValueError(
            f"sample rate {clip.sample_rate} does not match configured {cfg.sample_rate}")
    return FeatureMatrix(clip.utt_id, normalize(log_mel(clip.samples, cfg)), cfg.hop_s)


def extract_all(clips, cfg=FeatureConfig(), workers=1):
    """Features for a dict of clips, returned in the same key order."""
    keys = list(clips)
    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            mats = list(pool.map(lambda k: extract_features(clips[k], cfg), keys))
    else:
        mats = [extract_features(clips[k], cfg) for k in keys]
    return dict(zip(keys, mats))


# ---------------------------------------------------------------------------
# augmentation

@dataclass(frozen=True)
class AugmentConfig:
    """Sampling ranges for :func:`draw_params`."""
    room_scale: tuple = (0.0, 100.0)
    pitch_cents: tuple = (-300.0, 300.0)
    stretch_rate: tuple = (0.8, 1.0)
    timedrop_fraction: float = 0.05
    # chance that each effect is applied at all on a given draw
    probability: float = 1.0

    def __post_init__(self):
        if not 0 <= self.room_scale[0] <= self.room_scale[1] <= 100:
            raise ValueError("room_scale range must lie in [0, 100]")
        if self.pitch_cents[0] > self.pitch_cents[1]:
            raise ValueError("pitch_cents range reversed")
        if not 0 < self.stretch_rate[0] <= self.stretch_rate[1]:
            raise ValueError("stretch_rate range must be positive")
        if not 0 <= self.timedrop_fraction < 1:
            raise ValueError("timedrop_fraction must lie in [0, 1)")
        if not 0 <= self.probability <= 1:
            raise ValueError("probability must lie in [0, 1]")


@dataclass(frozen=True)
class AugmentParams:
    stretch_rate: float = 1.0
    pitch_cents: float = 0.0
    room_scale: float = 0.0
    timedrop_fraction: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.stretch_rate <= 0:
            raise ValueError("stretch_rate must be positive")
        if not 0 <= self.room_scale <= 100:
            raise ValueError("room_scale must lie in [0, 100]")
        if not 0 <= self.timedrop_fraction < 1:
            raise ValueError("timedrop_fraction must lie in [0, 1)")


def draw_params(cfg, rng):
    """Draw one concrete :class:`AugmentParams` from the ranges in ``cfg``."""
    on = rng.random(4) < cfg.probability
    u = rng.random(3)
    return AugmentParams(
        stretch_rate=float(cfg.stretch_rate[0] + u[0] * (cfg.stretch_rate[1] - cfg.stretch_rate[0])) if on[0] else 1.0,
        pitch_cents=float(cfg.pitch_cents[0] + u[1] * (cfg.pitch_cents[1] - cfg.pitch_cents[0])) if on[1] else 0.0,
        room_scale=float(cfg.room_scale[0] + u[2] * (cfg.room_scale[1] - cfg.room_scale[0])) if on[2] else 0.0,
        timedrop_fraction=cfg.timedrop_fraction if on[3] else 0.0,
        seed=int(rng.integers(2**32)),
    )


def resample_to(x, n_out):
    """Linear-interpolation resampling of ``x`` to ``n_out`` samples."""
    if n_out == len(x):
        return x.copy()
    pos = np.arange(n_out) * (len(x) / n_out)
    return np.interp(pos, np.arange(len(x)), x)


def time_stretch(x, rate):
    """Speed change by ``rate`` (rate < 1 lengthens); output has round(n/rate) samples."""
    return resample_to(x, max(1, int(round(len(x) / rate))))


def phase_vocoder(x, factor, n_fft=512, hop=128):
    """Duration change by ``factor`` keeping pitch (output ~ factor * len(x))."""
    if len(x) < n_fft:
        x = np.pad(x, (0, n_fft - len(x)))
    win = np.hanning(n_fft + 1)[:-1]
    n_frames = 1 + (len(x) - n_fft) // hop
    frames = np.lib.stride_tricks.sliding_window_view(x, n_fft)[::hop][:n_frames]
    spec = np.fft.rfft(frames * win, axis=1)
    if n_frames < 2:
        return resample_to(x, max(1, int(round(len(x) * factor))))
    steps = np.arange(0, n_frames - 1, 1.0 / factor)
    i = steps.astype(int)
    frac = (steps - i)[:, None]
    mag = np.abs(spec)
    ang = np.angle(spec)
    omega = 2 * np.pi * hop * np.arange(spec.shape[1]) / n_fft
    mags = (1 - frac) * mag[i] + frac * mag[i + 1]
    dphi = ang[i + 1] - ang[i] - omega
    dphi -= 2 * np.pi * np.round(dphi / (2 * np.pi))
    # phase of output frame k accumulates the advances of frames 0..k-1
    advance = np.vstack([ang[:1], omega + dphi[:-1]])
    phase = np.cumsum(advance, axis=0)
    z = np.empty(mags.shape, dtype=np.complex128)
    z.real = mags * np.cos(phase)
    z.imag = mags * np.sin(phase)
    frames = np.fft.irfft(z, n=n_fft, axis=1) * win
    out_len = n_fft + hop * (len(steps) - 1)
    pos = np.arange(n_fft)[None, :] + hop * np.arange(len(steps))[:, None]
    y = np.bincount(pos.ravel(), frames.ravel(), out_len)
    norm = np.bincount(pos.ravel(), np.broadcast_to(win ** 2, frames.shape).ravel(), out_len)
    return y / np.maximum(norm, 1e-3)


def pitch_shift(x, cents):
    """Shift pitch by ``cents`` keeping the length: vocoder stretch, then resample."""
    if cents == 0:
        return x.copy()
    factor = 2.0 ** (cents / 1200.0)
    return resample_to(phase_vocoder(x, factor), len(x))


def reverb(x, room_scale, sample_rate, rng):
    """Convolve with a synthetic exponentially decaying impulse response.

    The decay time grows linearly with ``room_scale``, reaching 0.3 s at 100.
    """
    if room_scale <= 0:
        return x.copy()
    t60 = 0.3 * room_scale / 100.0
    n = max(2, int(t60 * sample_rate))
    t = np.arange(n) / sample_rate
    ir = rng.standard_normal(n) * np.exp(-6.9 * t / t60)
    ir[0] = 0.0
    ir *= math.sqrt(0.5 * room_scale / 100.0) / max(np.linalg.norm(ir), 1e-12)
    ir[0] = 1.0
    return fftconvolve(x, ir)[:len(x)]


def time_drop(x, fraction, sample_rate, rng, span_ms=(10.0, 50.0)):
    """Zero random spans until at least ``fraction`` of the samples are silent."""
    if fraction <= 0:
        return x.copy()
    y = x.copy()
    dropped = np.zeros(len(x), dtype=bool)
    target = int(math.ceil(fraction * len(x)))
    lo, hi = (max(1, int(v * sample_rate / 1000)) for v in span_ms)
    while dropped.sum() < target:
        width = min(int(rng.integers(lo, hi + 1)), len(x))
        start = int(rng.integers(0, len(x) - width + 1))
        dropped[start:start + width] = True
    y[dropped] = 0.0
    return y


def augment(clip, seg, params):
    """Augment a waveform and remap its boundaries.

    Applies time stretch, pitch shift, reverb and time drop in that order,
    then peak-normalizes to 0.95. Only the stretch moves boundaries
    (``t -> t / rate``). ``seg`` may be a :class:`Segmentation` or a single
    boundary array; the same kind is returned.
    """
    rng = np.random.default_rng(params.seed)
    sr = clip.sample_rate
    x = time_stretch(np.asarray(clip.samples, dtype=np.float64), params.stretch_rate)
    x = pitch_shift(x, params.pitch_cents)
    x = reverb(x, params.room_scale, sr, rng)
    x = time_drop(x, params.timedrop_fraction, sr, rng)
    peak = np.max(np.abs(x))
    if peak > 0:
        x = x * (0.95 / peak)
    out_clip = AudioClip(x, sr, clip.utt_id)

    def remap(b):
        b = np.asarray(b, dtype=np.float64) / params.stretch_rate
        lo, hi = b[0], min(b[-1], len(x) / sr)
        return make_boundaries(b[1:-1], (lo, hi))[0]

    if isinstance(seg, dict):
        return out_clip, Segmentation({u: remap(b) for u, b in seg.items()})
    return out_clip, remap(seg)
