"""
Scoring segmentations and picking peaks
=======================================

A tour of the evaluation and peak-detection building blocks on a small
synthetic corpus: how gold boundaries are derived from an alignment, how
much a simulated imperfect segmenter loses in token-F1 and boundary-F1,
and how a probability track becomes boundaries.
"""

import numpy as np

from boundloop.evaluation import evaluate, make_report
from boundloop.peaks import PeakParams, detect_peaks, fit_peak_params, segment
from boundloop.synthcorpus import SynthSpec, corrupt_segmentation, synth_corpus
from boundloop.corpus_io import gold_segmentation

# A corpus of 30 utterances; every word type has its own tone signature.
corpus = synth_corpus(SynthSpec(n_utterances=30, seed=3))
spans = corpus.spans
gold = gold_segmentation(corpus.alignment, spans)
utt = sorted(gold)[0]
print(utt, "words:", [w.label for w in corpus.alignment[utt]])
print(utt, "boundaries:", gold[utt])

# Jitter, delete and insert boundaries to imitate an unsupervised segmenter.
records = {"gold": evaluate(gold, corpus.alignment, gold, spans)}
for jitter in (0.01, 0.04):
    noisy = corrupt_segmentation(gold, jitter, 0.2, 0.2, seed=0)
    records[f"jitter {jitter * 1000:.0f} ms"] = evaluate(noisy, corpus.alignment, gold, spans)
print(make_report(records).render())

# %%
# Token-F1 needs *both* edges of a token within tolerance, so it falls much
# faster than boundary-F1 as the jitter grows.

# A toy probability track: bumps near each gold boundary plus noise.
hop = 0.02
rng = np.random.default_rng(0)
tracks = {}
for u, (lo, hi) in spans.items():
    n = int(round((hi - lo) / hop))
    t = np.arange(n) * hop + lo
    p = 0.05 * rng.random(n)
    for b in gold[u][1:-1]:
        p += 0.9 * np.exp(-0.5 * ((t - b) / 0.02) ** 2)
    tracks[u] = np.clip(p, 0, 1)

print("peaks in", utt, detect_peaks(tracks[utt], PeakParams(0.5, 3)))

# Fit height and distance so the detected boundaries agree best with gold.
params, score = fit_peak_params(tracks, gold, spans, hop)
print("fitted", params, f"boundary-F1 {score:.3f}")
found = segment(tracks, params, hop, spans)
print(make_report({"peaks": evaluate(found, corpus.alignment, gold, spans)}).render())
