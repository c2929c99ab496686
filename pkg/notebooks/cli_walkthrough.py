"""
Running the pipeline from the command line
==========================================

The same steps through the ``boundloop`` command, driven from Python so
the script is self-contained. Every command writes only under its
``--out`` directory and leaves a ``manifest.json`` that reproduces it.
"""

import tempfile
from pathlib import Path

from boundloop.cli import main

work = Path(tempfile.mkdtemp(prefix="boundloop-"))

# 1. a small synthetic corpus
main(["--out", str(work / "corpus"), "--set", "synth.n_utterances=24", "synth"])

# 2. a config file: hyperparameters plus one corpus block
cfg = work / "run.cfg"
cfg.write_text(f"""\
train.max_updates = 60
train.dev_every = 20
train.warmup_updates = 10
loop.max_iterations = 2
augment.enabled = false
init.kind = corrupt
corpus.syn.audio_dir = {work / 'corpus' / 'audio'}
corpus.syn.vad = {work / 'corpus' / 'vad.txt'}
corpus.syn.alignment = {work / 'corpus' / 'alignment.txt'}
""")

# 3. the full loop; iteration folders hold segmentations, peaks, checkpoints
main(["--config", str(cfg), "--out", str(work / "run"), "selftrain"])
for p in sorted((work / "run").rglob("*")):
    if p.is_file():
        print(p.relative_to(work))

# 4. rerun from the manifest: identical segmentations
main(["--config", str(work / "run" / "manifest.json"), "--out", str(work / "rerun"), "selftrain"])
a = (work / "run" / "final" / "syn.txt").read_bytes()
b = (work / "rerun" / "final" / "syn.txt").read_bytes()
print("identical rerun:", a == b)

# 5. a typo in a key is an error, not a silent default
bad = work / "bad.cfg"
bad.write_text("train.peak_lrr = 0.01\n")
print("exit code:", main(["--config", str(bad), "--out", str(work / "bad"), "synth"]))
