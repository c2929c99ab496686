"""Synthetic speech-like corpora with exact word alignments.

Every word type owns a fixed tonal signature: three sinusoids with
type-specific frequencies and amplitudes. A token renders its type's
signature for a drawn duration, with 10 ms raised-cosine fades at both ends.
Tokens are concatenated without pauses to form the voiced part of an
utterance, which is padded with short silences outside the VAD span.

Randomness comes from numpy's PCG64 generator. The lexicon is drawn from
``SeedSequence(lexicon_seed)``; utterance ``i`` draws its layout from
``SeedSequence([seed, i, 0])`` and its additive noise from
``SeedSequence([seed, i, 1])``, so utterances can be generated in any order
and the noise level never changes the layout.
"""

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .corpus_io import (AudioClip, Segmentation, VadSegment, Word,
                        make_boundaries, write_alignment, write_vad, write_wav)

FADE_S = 0.010
N_PARTIALS = 3


@dataclass
class SynthSpec:
    n_utterances: int = 200
    lexicon_size: int = 20
    word_duration_mean_s: float = 0.30
    word_duration_std_s: float = 0.08
    words_per_utterance: tuple = (3, 8)
    sample_rate: int = 16000
    noise_level: float = 0.01
    seed: int = 0
    # defaults to ``seed``; share it between corpora to share word signatures
    lexicon_seed: int | None = None
    min_word_duration_s: float = 0.08
    edge_silence_s: tuple = (0.10, 0.25)
    freq_range_hz: tuple = (150.0, 4000.0)

    def __post_init__(self):
        self.words_per_utterance = tuple(self.words_per_utterance)
        self.edge_silence_s = tuple(self.edge_silence_s)
        self.freq_range_hz = tuple(self.freq_range_hz)
        if self.n_utterances < 1:
            raise ValueError("n_utterances must be >= 1")
        if self.lexicon_size < 2:
            raise ValueError("lexicon_size must be >= 2")
        if self.word_duration_mean_s <= 0 or self.word_duration_std_s < 0:
            raise ValueError("word durations must be positive")
        if not 0 < self.min_word_duration_s <= self.word_duration_mean_s:
            raise ValueError("min_word_duration_s must lie in (0, mean]")
        lo, hi = self.words_per_utterance
        if not 1 <= lo <= hi:
            raise ValueError("words_per_utterance must be a range (lo, hi), 1 <= lo <= hi")
        if not 0 <= self.noise_level < 0.5:
            raise ValueError("noise_level must lie in [0, 0.5)")
        if self.sample_rate <= 0:
            raise ValueError("sample_rate must be positive")
        if not 0 < self.freq_range_hz[0] < self.freq_range_hz[1] < self.sample_rate / 2:
            raise ValueError("freq_range_hz must lie inside (0, sample_rate/2)")


@dataclass
class Lexicon:
    frequencies: np.ndarray   # (n_types, 3) Hz
    amplitudes: np.ndarray    # (n_types, 3)

    @property
    def labels(self):
        width = len(str(len(self.frequencies) - 1))
        return [f"w{k:0{width}d}" for k in range(len(self.frequencies))]


@dataclass
class SynthCorpus:
    spec: SynthSpec
    lexicon: Lexicon
    clips: dict = field(default_factory=dict)
    vads: list = field(default_factory=list)
    alignment: dict = field(default_factory=dict)

    @property
    def spans(self):
        return {v.utt_id: (v.start_s, v.end_s) for v in self.vads}


def make_lexicon(spec):
    seed = spec.seed if spec.lexicon_seed is None else spec.lexicon_seed
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    lo, hi = np.log(spec.freq_range_hz)
    freqs = np.sort(np.exp(rng.uniform(lo, hi, size=(spec.lexicon_size, N_PARTIALS))), axis=1)
    amps = rng.uniform(0.15, 0.25, size=(spec.lexicon_size, N_PARTIALS))
    return Lexicon(freqs, amps)


def render_word(lexicon, word_type, n_samples, sample_rate, phases):
    """Render one token of ``word_type`` lasting ``n_samples`` samples."""
    t = np.arange(n_samples) / sample_rate
    f = lexicon.frequencies[word_type]
    a = lexicon.amplitudes[word_type]
    x = (a[:, None] * np.sin(2 * np.pi * f[:, None] * t + np.asarray(phases)[:, None])).sum(0)
    n_fade = min(int(round(FADE_S * sample_rate)), n_samples // 2)
    if n_fade > 0:
        ramp = 0.5 - 0.5 * np.cos(np.pi * np.arange(n_fade) / n_fade)
        x[:n_fade] *= ramp
        x[n_samples - n_fade:] *= ramp[::-1]
    return x


def _utt_id(spec, i):
    return f"utt{i:0{max(4, len(str(spec.n_utterances - 1)))}d}"


def synth_utterance(spec, lexicon, i):
    """Generate utterance ``i``: returns ``(AudioClip, VadSegment, [Word])``."""
    sr = spec.sample_rate
    rng = np.random.default_rng(np.random.SeedSequence([spec.seed, i, 0]))
    n_words = int(rng.integers(spec.words_per_utterance[0], spec.words_per_utterance[1] + 1))
    types = rng.integers(0, spec.lexicon_size, size=n_words)
    durs = rng.normal(spec.word_duration_mean_s, spec.word_duration_std_s, size=n_words)
    # whole milliseconds keep the alignment exact on disk and in samples
    durs_ms = np.maximum(np.round(durs * 1000), round(spec.min_word_duration_s * 1000)).astype(int)
    lead_ms, tail_ms = (int(round(1000 * v)) for v in rng.uniform(*spec.edge_silence_s, size=2))
    phases = rng.uniform(0, 2 * np.pi, size=(n_words, N_PARTIALS))

    ms = sr // 1000 if sr % 1000 == 0 else None
    total_ms = lead_ms + int(durs_ms.sum()) + tail_ms

    def samples(n_ms):
        return n_ms * ms if ms else int(round(n_ms * sr / 1000))

    x = np.zeros(samples(total_ms))
    words = []
    pos_ms = lead_ms
    label = lexicon.labels
    for k in range(n_words):
        a, b = samples(pos_ms), samples(pos_ms + durs_ms[k])
        x[a:b] = render_word(lexicon, types[k], b - a, sr, phases[k])
        words.append(Word(label[types[k]], pos_ms / 1000, (pos_ms + durs_ms[k]) / 1000))
        pos_ms += durs_ms[k]

    if spec.noise_level > 0:
        noise_rng = np.random.default_rng(np.random.SeedSequence([spec.seed, i, 1]))
        x = x + spec.noise_level * noise_rng.standard_normal(len(x))
    utt = _utt_id(spec, i)
    clip = AudioClip(np.clip(x, -1.0, 1.0), sr, utt)
    vad = VadSegment(utt, lead_ms / 1000, pos_ms / 1000)
    return clip, vad, words


def synth_corpus(spec):
    """Generate a full corpus; deterministic given ``spec``."""
    lexicon = make_lexicon(spec)
    corpus = SynthCorpus(spec, lexicon)
    for i in range(spec.n_utterances):
        clip, vad, words = synth_utterance(spec, lexicon, i)
        corpus.clips[clip.utt_id] = clip
        corpus.vads.append(vad)
        corpus.alignment[clip.utt_id] = words
    return corpus


def write_synth_corpus(corpus, out_dir):
    """Write ``audio/<utt>.wav``, ``vad.txt`` and ``alignment.txt``."""
    out_dir = Path(out_dir)
    (out_dir / "audio").mkdir(parents=True, exist_ok=True)
    for utt, clip in corpus.clips.items():
        write_wav(out_dir / "audio" / f"{utt}.wav", clip)
    write_vad(out_dir / "vad.txt", corpus.vads)
    write_alignment(out_dir / "alignment.txt", corpus.alignment)
    return out_dir


def corrupt_segmentation(gold_seg, jitter_std_s, p_delete, p_insert, seed):
    """Simulate an imperfect segmenter from reference boundaries.

    Each internal boundary is deleted with probability ``p_delete``, and the
    survivors are shifted by Gaussian jitter and kept strictly inside the
    VAD span. Spurious boundaries are added uniformly over the span, a
    Poisson count with mean ``p_insert`` times the number of internal
    reference boundaries. Utterance ``k`` (in sorted id order) uses
    ``SeedSequence([seed, k])``.
    """
    for name, p in (("p_delete", p_delete), ("p_insert", p_insert)):
        if not 0 <= p <= 1:
            raise ValueError(f"{name} must lie in [0, 1]")
    if jitter_std_s < 0:
        raise ValueError("jitter_std_s must be >= 0")
    out = Segmentation()
    for k, utt in enumerate(sorted(gold_seg)):
        rng = np.random.default_rng(np.random.SeedSequence([seed, k]))
        b = np.asarray(gold_seg[utt], dtype=np.float64)
        lo, hi = b[0], b[-1]
        inner = b[1:-1]
        n = len(inner)
        keep = rng.random(n) >= p_delete
        shift = rng.normal(0.0, jitter_std_s, n) if jitter_std_s > 0 else np.zeros(n)
        moved = np.clip(inner + shift, lo + 0.001, hi - 0.001)[keep]
        n_ins = int(rng.poisson(p_insert * n)) if p_insert > 0 else 0
        extra = rng.uniform(lo, hi, n_ins)
        out[utt], _ = make_boundaries(np.concatenate([moved, extra]), (lo, hi))
    return out
