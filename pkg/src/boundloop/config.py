"""Line-oriented run configuration.

A config file holds ``section.key = value`` lines; ``#`` starts a comment.
Corpora are declared as ``corpus.<name>.<key>``. Unknown keys are errors so
that a misspelt hyperparameter never silently falls back to its default.
"""

import dataclasses
import hashlib
import json
import os
from pathlib import Path

from .features import AugmentConfig, FeatureConfig
from .predictor import TrainConfig
from .synthcorpus import SynthSpec


class ConfigError(ValueError):
    pass


def _fields(cls):
    return {f.name: f for f in dataclasses.fields(cls)}


# section -> {key: type or default value used to coerce strings}
SECTIONS = {
    "run": {"seed": 0, "out": "run", "workers": 1},
    "synth": {k: f.default for k, f in _fields(SynthSpec).items() if k != "seed"} | {"seed": 0},
    "features": {k: f.default for k, f in _fields(FeatureConfig).items()},
    "train": {k: f.default for k, f in _fields(TrainConfig).items() if k != "seed"},
    "augment": {k: f.default for k, f in _fields(AugmentConfig).items()} | {"enabled": True},
    "loop": {"max_iterations": 3, "dilation": 1, "stopping_mode": "fixed", "dev_fraction": 0.1,
             "tolerance": 0.03, "peak_objective": "boundary", "agreement_threshold": 0.95,
             "label_edges": False},
    "peak": {"min_height": 0.5, "min_distance": 1,
             "heights": tuple(round(0.05 * k, 2) for k in range(1, 20)),
             "distances": tuple(range(1, 11))},
    "init": {"kind": "vad", "jitter_s": 0.04, "p_delete": 0.2, "p_insert": 0.2,
             "mean_s": 0.0, "std_s": 0.0, "stats_from_gold": False},
    "eval": {"tolerance": 0.03},
}
CORPUS_KEYS = {"audio_dir", "vad", "alignment", "init_seg"}
PATH_KEYS = CORPUS_KEYS


def _coerce(text, default, key):
    try:
        if isinstance(default, bool):
            low = text.lower()
            if low not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(text)
            return low in ("true", "1", "yes")
        if isinstance(default, int):
            return int(text)
        if isinstance(default, float):
            return float(text)
        if isinstance(default, tuple):
            items = text.replace(",", " ").split()
            kind = type(default[0]) if default else float
            return tuple(kind(v) for v in items)
        if default is None:
            if text.lower() == "none":
                return None
            return int(text) if text.lstrip("-").isdigit() else text
        return text
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {text!r}") from None


class RunConfig:
    """Parsed configuration: ``values[section][key]`` plus ``corpora[name][key]``."""

    def __init__(self):
        self.values = {s: dict(keys) for s, keys in SECTIONS.items()}
        self.corpora = {}
        self.explicit = {}

    def set(self, dotted, text, origin="override"):
        parts = dotted.strip().split(".")
        if parts[0] == "corpus":
            if len(parts) != 3 or parts[2] not in CORPUS_KEYS:
                raise ConfigError(f"unknown key {dotted!r} ({origin}); corpus keys are {sorted(CORPUS_KEYS)}")
            self.corpora.setdefault(parts[1], {})[parts[2]] = text.strip()
        else:
            if len(parts) != 2 or parts[0] not in SECTIONS or parts[1] not in SECTIONS[parts[0]]:
                raise ConfigError(f"unknown key {dotted!r} ({origin})")
            default = SECTIONS[parts[0]][parts[1]]
            self.values[parts[0]][parts[1]] = _coerce(text.strip(), default, dotted)
        self.explicit[dotted.strip()] = text.strip()

    def get(self, section, key):
        return self.values[section][key]

    # -- builders ------------------------------------------------------------

    def synth_spec(self):
        return SynthSpec(**self.values["synth"])

    def feature_config(self):
        return FeatureConfig(**self.values["features"])

    def train_config(self):
        return TrainConfig(**self.values["train"], seed=self.get("run", "seed"))

    def augment_config(self):
        v = dict(self.values["augment"])
        return AugmentConfig(**v) if v.pop("enabled") else None

    def loop_config(self):
        from .selftrain import LoopConfig
        return LoopConfig(train=self.train_config(), features=self.feature_config(),
                          augment=self.augment_config(), peak_heights=self.get("peak", "heights"),
                          peak_distances=self.get("peak", "distances"), seed=self.get("run", "seed"),
                          **self.values["loop"])

    # -- serialization -------------------------------------------------------

    def as_dict(self):
        flat = {}
        for s, keys in self.values.items():
            for k, v in keys.items():
                flat[f"{s}.{k}"] = list(v) if isinstance(v, tuple) else v
        for name, keys in sorted(self.corpora.items()):
            for k, v in sorted(keys.items()):
                flat[f"corpus.{name}.{k}"] = v
        return flat

    def digest(self):
        """Hash of every setting that can change results (not paths or workers)."""
        flat = {k: v for k, v in self.as_dict().items() if k not in ("run.out", "run.workers")}
        text = json.dumps(flat, sort_keys=True)
        return hashlib.sha256(text.encode()).hexdigest()


def load_config(path=None, overrides=()):
    """Read a config file (or a run manifest) and apply ``key=value`` overrides."""
    cfg = RunConfig()
    if path is not None:
        path = Path(path)
        if not path.exists():
            raise ConfigError(f"config file {path} not found")
        if path.suffix == ".json":
            manifest = json.loads(path.read_text())
            for key, value in manifest["config"].items():
                text = " ".join(map(str, value)) if isinstance(value, list) else str(value)
                cfg.set(key, text, origin=str(path))
        else:
            for lineno, line in enumerate(path.read_text().splitlines(), 1):
                line = line.split("#", 1)[0].strip()
                if not line:
                    continue
                if "=" not in line:
                    raise ConfigError(f"{path}:{lineno}: expected 'section.key = value'")
                key, value = line.split("=", 1)
                cfg.set(key, value, origin=f"{path}:{lineno}")
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override {item!r} must look like section.key=value")
        key, value = item.split("=", 1)
        cfg.set(key, value)
    return cfg


def resolve_workers(flag=None, cfg=None):
    if flag is not None:
        return max(1, int(flag))
    env = os.environ.get("BOUNDLOOP_WORKERS")
    if env:
        return max(1, int(env))
    return max(1, int(cfg.get("run", "workers"))) if cfg is not None else 1


def validate_paths(cfg, need_audio=True):
    """Check that every referenced corpus file exists."""
    for name, keys in cfg.corpora.items():
        if "vad" not in keys:
            raise ConfigError(f"corpus {name!r} has no vad file")
        if need_audio and "audio_dir" not in keys:
            raise ConfigError(f"corpus {name!r} has no audio_dir")
        for k in PATH_KEYS & set(keys):
            if not Path(keys[k]).exists():
                raise ConfigError(f"corpus.{name}.{k}: {keys[k]} does not exist")
