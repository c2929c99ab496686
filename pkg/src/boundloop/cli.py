"""Command-line entry point.

Every command reads a ``section.key = value`` config (see
:mod:`boundloop.config`), writes only below its run directory ``--out``,
and records the resolved configuration in ``manifest.json`` there. Passing
that manifest back as ``--config`` reproduces the run.

Failures print a single ``error: <Kind>: <message>`` line on stderr and exit
nonzero (2 for configuration or usage problems, 1 otherwise).
"""

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .config import ConfigError, load_config, resolve_workers, validate_paths
from .corpus_io import (gold_segmentation, read_alignment, read_matrix, read_segmentation, read_vad,
                        read_wav, vad_spans, write_matrix, write_segmentation)
from .evaluation import evaluate, make_report, read_key_values
from .peaks import PeakParams, fit_peak_params, segment
from .predictor import load_model, predict, save_model, train
from .selftrain import (dev_split, duration_stats, frame_targets, make_initial_segmentation,
                        prepare_corpus, self_train)
from .synthcorpus import corrupt_segmentation, synth_corpus, write_synth_corpus

logger = logging.getLogger("boundloop")


class UsageError(ConfigError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


# ---------------------------------------------------------------------------
# shared helpers

class Run:
    """Resolved config plus the output directory of one command."""

    def __init__(self, args):
        overrides = list(args.set or [])
        if args.seed is not None:
            overrides.append(f"run.seed={args.seed}")
        if args.out is not None:
            overrides.append(f"run.out={args.out}")
        self.cfg = load_config(args.config, overrides)
        self.out = Path(self.cfg.get("run", "out"))
        self.workers = resolve_workers(args.workers, self.cfg)
        self.seed = self.cfg.get("run", "seed")
        self.command = args.command

    def path(self, *parts):
        p = self.out.joinpath(*parts)
        p.parent.mkdir(parents=True, exist_ok=True)
        return p

    def write_manifest(self, extra=None):
        manifest = {"command": self.command, "config": self.cfg.as_dict(),
                    "config_hash": self.cfg.digest(), "seed": self.seed}
        if extra:
            manifest["inputs"] = extra
        self.path("manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")

    def corpus_names(self):
        if not self.cfg.corpora:
            raise ConfigError("no corpus.<name>.* entries in the config")
        return sorted(self.cfg.corpora)

    def spans(self, name):
        return vad_spans(read_vad(self.cfg.corpora[name]["vad"]))

    def alignment(self, name):
        path = self.cfg.corpora[name].get("alignment")
        return read_alignment(path, read_vad(self.cfg.corpora[name]["vad"])) if path else None

    def load_corpora(self, with_alignment=True):
        validate_paths(self.cfg)
        fcfg = self.cfg.feature_config()
        corpora = []
        for name in self.corpus_names():
            keys = self.cfg.corpora[name]
            spans = self.spans(name)
            audio = Path(keys["audio_dir"])
            clips = {}
            for utt in sorted(spans):
                wav = audio / f"{utt}.wav"
                if not wav.exists():
                    raise FileNotFoundError(f"corpus {name!r}: missing audio {wav}")
                clips[utt] = read_wav(wav)
            ali = self.alignment(name) if with_alignment else None
            corpora.append(prepare_corpus(name, clips, spans, fcfg, ali, self.workers))
            logger.info("corpus %s: %d utterances", name, len(spans))
        return corpora


def _named_paths(items, what):
    out = {}
    for item in items or []:
        if "=" not in item:
            raise UsageError(f"{what} must look like NAME=PATH, got {item!r}")
        name, path = item.split("=", 1)
        if not Path(path).exists():
            raise FileNotFoundError(f"{what} {path} does not exist")
        out[name] = path
    return out


def _segmentations(run, items, default_kind="vad"):
    """Per-corpus segmentation from ``--seg NAME=PATH``, ``corpus.<name>.init_seg`` or VAD edges."""
    given = _named_paths(items, "--seg")
    segs = {}
    for name in run.corpus_names():
        path = given.get(name) or run.cfg.corpora[name].get("init_seg")
        spans = run.spans(name)
        segs[name] = (read_segmentation(path, spans) if path
                      else make_initial_segmentation(default_kind, spans))
    return segs


def _write_peaks(path, params, score):
    path.write_text(f"peak.min_height = {params.min_height}\n"
                    f"peak.min_distance = {params.min_distance}\n"
                    f"# fit_f1 = {score:.6f}\n")


def _read_peaks(path):
    cfg = load_config(path)
    return PeakParams(cfg.get("peak", "min_height"), cfg.get("peak", "min_distance"))


def _read_tracks(run, probs_dir, name):
    spans = run.spans(name)
    tracks = {}
    for utt in sorted(spans):
        p = Path(probs_dir) / name / f"{utt}.fmx"
        if not p.exists():
            raise FileNotFoundError(f"missing probability track {p}")
        tracks[utt] = read_matrix(p).frames[:, 0].astype(np.float64)
    return tracks, spans


def _dump_json(path, obj):
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


# ---------------------------------------------------------------------------
# commands

def cmd_synth(run, args):
    corpus = synth_corpus(run.cfg.synth_spec())
    write_synth_corpus(corpus, run.out)
    run.write_manifest()
    print(f"corpus.synth.audio_dir = {run.out / 'audio'}")
    print(f"corpus.synth.vad = {run.out / 'vad.txt'}")
    print(f"corpus.synth.alignment = {run.out / 'alignment.txt'}")


def cmd_features(run, args):
    fcfg = run.cfg.feature_config()
    for c in run.load_corpora(with_alignment=False):
        for utt in c.utts:
            write_matrix(run.path("features", c.name, f"{utt}.fmx"), c.features[utt], fcfg.hop_s)
    run.write_manifest()


def cmd_init_seg(run, args):
    kind = args.kind or run.cfg.get("init", "kind")
    run.cfg.set("init.kind", kind)
    for name in run.corpus_names():
        seg = initial_segmentation(run, name, kind)
        write_segmentation(seg, run.path("init", f"{name}.txt"))
    run.write_manifest()


def initial_segmentation(run, name, kind):
    spans = run.spans(name)
    init = run.cfg.values["init"]
    if kind == "file":
        path = run.cfg.corpora[name].get("init_seg")
        if not path:
            raise ConfigError(f"init.kind = file needs corpus.{name}.init_seg")
        return make_initial_segmentation("file", spans, path=path)
    if kind == "corrupt":
        ali = run.alignment(name)
        if ali is None:
            raise ConfigError(f"init.kind = corrupt needs corpus.{name}.alignment")
        logger.warning("corpus %s: corrupted-gold initialisation reads the gold alignment", name)
        return corrupt_segmentation(gold_segmentation(ali, spans), init["jitter_s"],
                                    init["p_delete"], init["p_insert"], run.seed)
    if kind == "random":
        if init["stats_from_gold"]:
            ali = run.alignment(name)
            if ali is None:
                raise ConfigError(f"init.stats_from_gold needs corpus.{name}.alignment")
            stats = duration_stats(ali)
            logger.warning("corpus %s: random durations use gold statistics (%.3f, %.3f)",
                           name, *stats)
        elif init["mean_s"] > 0:
            stats = (init["mean_s"], init["std_s"])
        else:
            raise ConfigError("init.kind = random needs init.mean_s > 0 or init.stats_from_gold")
        return make_initial_segmentation("random", spans, stats, seed=run.seed)
    if kind == "vad":
        return make_initial_segmentation("vad", spans)
    raise ConfigError(f"unknown init kind {kind!r}")


def cmd_train(run, args):
    corpora = run.load_corpora(with_alignment=False)
    segs = _segmentations(run, args.seg)
    loop = run.cfg.loop_config()
    train_set, dev_set = [], []
    for c in corpora:
        targets = frame_targets(c, segs[c.name], loop.dilation, loop.label_edges)
        tr, dv = dev_split(c, loop.dev_fraction, run.seed)
        train_set += [(c.features[u], targets[u]) for u in tr]
        dev_set += [(c.features[u], targets[u]) for u in dv]
    tcfg = run.cfg.train_config()
    result = train(train_set, dev_set, tcfg, init_seed=run.seed, hop_s=corpora[0].hop_s)
    save_model(run.path("model.mlp"), result.model)
    with open(run.path("train_curve.txt"), "w") as f:
        for update, loss in result.dev_curve:
            f.write(f"{update} {loss:.6f}\n")
    run.write_manifest({"seg": _named_paths(args.seg, "--seg")})
    print(f"best_update {result.best_update} dev_loss {result.best_dev_loss:.6f}")


def cmd_infer(run, args):
    model = load_model(args.model)
    fcfg = run.cfg.feature_config()
    for c in run.load_corpora(with_alignment=False):
        for utt, p in predict(model, c.features).items():
            write_matrix(run.path("probs", c.name, f"{utt}.fmx"), p, fcfg.hop_s)
    run.write_manifest({"model": args.model})


def cmd_fit_peaks(run, args):
    loop = run.cfg.loop_config()
    segs = _segmentations(run, args.seg)
    hop_s = run.cfg.feature_config().hop_s
    tracks, ref, spans = {}, {}, {}
    for name in run.corpus_names():
        t, s = _read_tracks(run, args.probs, name)
        for utt in t:
            tracks[f"{name}/{utt}"] = t[utt]
            ref[f"{name}/{utt}"] = segs[name][utt]
            spans[f"{name}/{utt}"] = s[utt]
    params, score = fit_peak_params(tracks, ref, spans, hop_s, loop.tolerance, loop.peak_heights,
                                    loop.peak_distances, loop.peak_objective)
    _write_peaks(run.path("peaks.txt"), params, score)
    run.write_manifest({"probs": args.probs, "seg": _named_paths(args.seg, "--seg")})
    print(f"min_height {params.min_height} min_distance {params.min_distance} fit_f1 {score:.4f}")


def cmd_segment(run, args):
    params = (_read_peaks(args.peaks) if args.peaks else
              PeakParams(run.cfg.get("peak", "min_height"), run.cfg.get("peak", "min_distance")))
    hop_s = run.cfg.feature_config().hop_s
    for name in run.corpus_names():
        tracks, spans = _read_tracks(run, args.probs, name)
        write_segmentation(segment(tracks, params, hop_s, spans), run.path("seg", f"{name}.txt"))
    run.write_manifest({"probs": args.probs, "peaks": args.peaks})


def cmd_selftrain(run, args):
    corpora = run.load_corpora(with_alignment=True)
    loop = run.cfg.loop_config()
    kind = run.cfg.get("init", "kind")
    init = {}
    for c in corpora:
        init[c.name] = initial_segmentation(run, c.name, kind)
        write_segmentation(init[c.name], run.path("init", f"{c.name}.txt"))
    run.write_manifest()
    result = self_train(corpora, init, loop)
    _dump_json(run.path("iter_00", "report.json"), result.init_report)
    for it in result.iterations:
        d = f"iter_{it.iteration:02d}"
        for name, seg in it.segmentation.items():
            write_segmentation(seg, run.path(d, f"seg_{name}.txt"))
        _write_peaks(run.path(d, "peaks.txt"), it.peak_params, it.peak_fit_score)
        save_model(run.path(d, "model.mlp"), it.model)
        _dump_json(run.path(d, "report.json"), it.report)
    for name, seg in result.segmentation.items():
        write_segmentation(seg, run.path("final", f"{name}.txt"))
    summary = {"best_iteration": result.best_iteration, "iterations_run": len(result.iterations),
               "stopping_mode": loop.stopping_mode}
    records = {c.name: evaluate(result.segmentation[c.name], c.alignment, c.gold_seg(), c.spans,
                                loop.tolerance)
               for c in corpora if c.alignment is not None}
    if records:
        baseline = {c.name: evaluate(init[c.name], c.alignment, c.gold_seg(), c.spans, loop.tolerance)
                    for c in corpora if c.alignment is not None}
        report = make_report(records, baseline)
        run.path("final", "metrics.txt").write_text(report.key_values() + "\n")
        print(report.render())
    _dump_json(run.path("final", "summary.json"), summary)
    print(f"best_iteration {result.best_iteration}")


def cmd_eval(run, args):
    tol = args.tolerance if args.tolerance is not None else run.cfg.get("eval", "tolerance")
    if args.vad:
        vads = read_vad(args.vad)
    else:
        names = run.corpus_names()
        if len(names) != 1:
            raise UsageError("pass --vad or configure exactly one corpus")
        vads = read_vad(run.cfg.corpora[names[0]]["vad"])
    spans = vad_spans(vads)
    gold_words = read_alignment(args.gold, vads)
    hyp = read_segmentation(args.hyp, spans)
    gold_seg = gold_segmentation(gold_words, spans)
    name = args.name or Path(args.hyp).stem
    report = make_report({name: evaluate(hyp, gold_words, gold_seg, spans, tol)})
    run.path("metrics.txt").write_text(report.key_values() + "\n")
    run.write_manifest({"hyp": args.hyp, "gold": args.gold, "vad": args.vad})
    print(report.render())


def cmd_report(run, args):
    records = {}
    for p in args.paths:
        for name, rec in read_key_values(p).items():
            if name in records:
                raise ValueError(f"corpus {name!r} appears in several metric files")
            records[name] = rec
    baseline = None
    if args.baseline:
        baseline = {}
        for p in args.baseline:
            baseline.update(read_key_values(p))
    elif args.baseline_value is not None:
        baseline = {args.metric: args.baseline_value}
    report = make_report(records, baseline, (args.metric,))
    text = report.render() + "\n\n" + report.key_values() + "\n"
    run.path("report.txt").write_text(text)
    run.write_manifest({"paths": args.paths, "baseline": args.baseline,
                        "baseline_value": args.baseline_value})
    print(text, end="")


COMMANDS = {
    "synth": cmd_synth, "features": cmd_features, "init-seg": cmd_init_seg, "train": cmd_train,
    "infer": cmd_infer, "fit-peaks": cmd_fit_peaks, "segment": cmd_segment,
    "selftrain": cmd_selftrain, "eval": cmd_eval, "report": cmd_report,
}


def build_parser():
    p = _Parser(prog="boundloop", description="Self-trained word boundary detection.")
    p.add_argument("--config", help="config file or a previous run's manifest.json")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", help="run directory (all outputs go here)")
    p.add_argument("--workers", type=int, help="parallel utterances (default: $BOUNDLOOP_WORKERS)")
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override one config key")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)
    sub.add_parser("synth", help="generate a synthetic corpus")
    sub.add_parser("features", help="extract log-mel features")
    s = sub.add_parser("init-seg", help="write initial segmentations")
    s.add_argument("--kind", choices=("vad", "random", "file", "corrupt"))
    for name in ("train", "fit-peaks"):
        s = sub.add_parser(name)
        s.add_argument("--seg", action="append", metavar="NAME=PATH", help="target segmentation")
        if name == "fit-peaks":
            s.add_argument("--probs", required=True, help="run directory of `infer`")
    s = sub.add_parser("infer")
    s.add_argument("--model", required=True)
    s = sub.add_parser("segment")
    s.add_argument("--probs", required=True, help="run directory of `infer`")
    s.add_argument("--peaks", help="peaks.txt from fit-peaks (default: peak.* config keys)")
    sub.add_parser("selftrain", help="run the full self-training loop")
    s = sub.add_parser("eval")
    s.add_argument("--hyp", required=True)
    s.add_argument("--gold", required=True, help="word alignment file")
    s.add_argument("--vad")
    s.add_argument("--name")
    s.add_argument("--tolerance", type=float)
    s = sub.add_parser("report", help="average metric files")
    s.add_argument("paths", nargs="+")
    s.add_argument("--baseline", nargs="+")
    s.add_argument("--baseline-value", type=float)
    s.add_argument("--metric", default="token_f1")
    return p


def main(argv=None):
    try:
        args = build_parser().parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
        run = Run(args)
        COMMANDS[args.command](run, args)
        return 0
    except SystemExit as e:          # --help
        return e.code or 0
    except Exception as e:           # noqa: BLE001 - single-line reporting is the contract
        kind = "ConfigError" if isinstance(e, ConfigError) else type(e).__name__
        message = " ".join(str(e).split()) or kind
        print(f"error: {kind}: {message}", file=sys.stderr)
        return 2 if isinstance(e, ConfigError) else 1


if __name__ == "__main__":
    sys.exit(main())
