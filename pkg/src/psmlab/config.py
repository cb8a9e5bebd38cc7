"""Run configuration: one JSON document, optionally layered over a named preset.

A config has the sections ``system`` (or ``dataset``), ``schedule``, ``loss``,
``net``, ``train``, ``mala``, ``sampler``, ``split`` and ``metrics`` plus the
top-level ``output_dir`` and ``seed``. User values are merged into the preset
section by section, so a config only needs the keys it changes.
"""
import copy
import json
from dataclasses import dataclass

from .data_io import SplitSpec
from .errors import ConfigError
from .net import config_hash
from .potential import system_from_dict
from .sampler import MalaConfig, SamplerConfig
from .schedule import NoiseSchedule
from .train import LossSpec, TrainConfig

# train-section keys handled by the command layer rather than the training loop
CLI_ONLY_TRAIN_KEYS = ("checkpoint_every", "keep")

SECTIONS = ("system", "dataset", "schedule", "loss", "net", "train", "mala", "sampler", "split", "metrics")

BASE = {
    "system": None,
    "dataset": None,
    "schedule": {"kind": "VE", "sigma_min": 0.1, "sigma_max": 5.0},
    "loss": {"variant": "Piecewise", "t_p": 0.05},
    "net": {"hidden_dims": [256, 256, 256], "time_embed_dim": 64},
    "train": {"epochs": 2000, "batch_size": 64, "lr": 2e-4, "weight_decay": 5e-7, "checkpoint_every": 100, "keep": "best"},
    "mala": {"step_size": 1e-3, "n_burn_in": 0, "n_samples": 1000, "thinning": 1, "init": None},
    "sampler": {"n_steps": 1000, "n_samples": 1000, "method": "PC", "corrector_snr": 0.16, "corrector_steps": 1},
    "split": {"mode": "FirstK", "k": 1000, "fraction": 0.1},
    "metrics": {"bins": 40, "range": None, "hr_bins": 100, "energy_bins": 50, "bond_cutoff": 1.8, "stability_threshold": 0.5, "w2_max_points": 512},
    "output_dir": "runs/default",
    "seed": 0,
}

PRESETS = {
    "gauss": {
        "system": {"kind": "GaussianWell", "dim": 1, "mean": 0.0, "std": 1.0},
        "loss": {"variant": "PSM"},
        "net": {"hidden_dims": [64, 64, 64], "time_embed_dim": 32},
        "mala": {"step_size": 0.5, "n_samples": 2000, "thinning": 5, "n_burn_in": 100},
        "split": {"mode": "RandomFraction", "fraction": 1.0},
        "sampler": {"n_samples": 10000},
        "metrics": {"range": [-5.0, 5.0]},
        "output_dir": "runs/gauss",
    },
    "quartic1d": {
        "system": {"kind": "QuarticToy", "d": 1, "box_half_width": 2.0},
        "net": {"hidden_dims": [64, 64, 64], "time_embed_dim": 32},
        "mala": {"step_size": 0.01, "n_samples": 100000, "init": [1.2]},
        "sampler": {"n_samples": 10000},
        "metrics": {"range": [-2.0, 2.0]},
        "output_dir": "runs/quartic1d",
    },
    "quartic2d": {
        "system": {"kind": "QuarticToy", "d": 2, "box_half_width": 2.0},
        "net": {"hidden_dims": [128, 128, 128], "time_embed_dim": 32},
        "mala": {"step_size": 0.01, "n_samples": 100000, "init": [1.2, 0.0]},
        "sampler": {"n_samples": 10000},
        "metrics": {"range": [-2.0, 2.0]},
        "output_dir": "runs/quartic2d",
    },
    "lj13": {
        "system": {"kind": "LennardJonesCluster", "n_particles": 13},
        "mala": {"step_size": 1e-3, "n_samples": 100000, "thinning": 1},
        "sampler": {"n_samples": 500, "zero_com": True},
        "output_dir": "runs/lj13",
    },
    "lj55": {
        "system": {"kind": "LennardJonesCluster", "n_particles": 55},
        "mala": {"step_size": 5e-4, "n_samples": 100000, "thinning": 1},
        "sampler": {"n_samples": 500, "zero_com": True},
        "output_dir": "runs/lj55",
    },
}


def merge(base, overlay):
    """Section-wise merge: dict sections are updated key by key, anything else is replaced."""
    out = copy.deepcopy(base)
    for key, value in overlay.items():
        if key not in BASE:
            raise ConfigError(f"unknown config key {key!r}; expected one of {sorted(BASE)}")
        if isinstance(value, dict) and isinstance(out.get(key), dict) and key != "system":
            out[key] = {**out[key], **value}
        else:
            out[key] = copy.deepcopy(value)
    return out


@dataclass
class RunConfig:
    doc: dict

    @classmethod
    def build(cls, preset=None, user=None, seed=None, output_dir=None):
        doc = copy.deepcopy(BASE)
        if preset is not None:
            if preset not in PRESETS:
                raise ConfigError(f"unknown preset {preset!r}; expected one of {sorted(PRESETS)}")
            doc = merge(doc, PRESETS[preset])
        if user:
            doc = merge(doc, user)
        if seed is not None:
            doc["seed"] = int(seed)
        if output_dir is not None:
            doc["output_dir"] = str(output_dir)
        cfg = cls(doc)
        cfg.validate()
        return cfg

    @classmethod
    def load(cls, path=None, preset=None, seed=None, output_dir=None):
        user = None
        if path is not None:
            try:
                with open(path) as fh:
                    user = json.load(fh)
            except OSError as exc:
                raise ConfigError(f"cannot read config {path}: {exc}") from exc
            except json.JSONDecodeError as exc:
                raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
            if not isinstance(user, dict):
                raise ConfigError(f"{path}: config must be a JSON object")
        return cls.build(preset, user, seed, output_dir)

    def validate(self):
        d = self.doc
        if d["system"] is None and d["dataset"] is None:
            raise ConfigError("config needs a 'system' or a 'dataset'")
        if not isinstance(d["seed"], int) or isinstance(d["seed"], bool):
            raise ConfigError("seed must be an integer")
        # constructing every object runs its own invariant checks
        if d["system"] is not None:
            self.system()
        self.schedule()
        self.train_config()
        self.mala_config()
        self.sampler_config()
        self.split_spec()
        if d["train"].get("keep", "best") not in ("best", "final"):
            raise ConfigError("train.keep must be 'best' (lowest epoch loss) or 'final' (last epoch)")
        m = d["metrics"]
        if m["range"] is not None and not (len(m["range"]) == 2 and m["range"][0] < m["range"][1]):
            raise ConfigError("metrics.range must be [low, high] with low < high")
        for key in ("bins", "hr_bins", "energy_bins"):
            if int(m[key]) < 1:
                raise ConfigError(f"metrics.{key} must be positive")

    def _make(self, factory, section, **extra):
        try:
            return factory(**{**self.doc[section], **extra})
        except TypeError as exc:
            raise ConfigError(f"bad '{section}' section: {exc}") from exc

    @property
    def seed(self):
        return self.doc["seed"]

    @property
    def output_dir(self):
        return self.doc["output_dir"]

    def system(self):
        if self.doc["system"] is None:
            return None
        return system_from_dict(self.doc["system"])

    def schedule(self):
        return self._make(NoiseSchedule, "schedule")

    def loss(self):
        return self._make(LossSpec, "loss")

    def train_config(self, spatial_dim=1, zero_com=False):
        section = {k: v for k, v in self.doc["train"].items() if k not in CLI_ONLY_TRAIN_KEYS}
        try:
            return TrainConfig(
                **section,
                seed=self.seed,
                schedule=self.schedule(),
                loss=self.loss(),
                spatial_dim=spatial_dim,
                zero_com=zero_com,
            )
        except TypeError as exc:
            raise ConfigError(f"bad 'train' section: {exc}") from exc

    def mala_config(self, zero_com=False):
        return self._make(MalaConfig, "mala", seed=self.seed, zero_com=zero_com)

    def sampler_config(self):
        return self._make(SamplerConfig, "sampler", seed=self.seed)

    def split_spec(self):
        return self._make(SplitSpec, "split", seed=self.seed)

    def model_hash(self):
        """Hash of everything that determines a trained model; sampling must match it."""
        keys = ("system", "dataset", "schedule", "loss", "net", "train", "split", "seed")
        return config_hash({k: self.doc[k] for k in keys})

    def full_hash(self):
        return config_hash(self.doc)

    def to_dict(self):
        return copy.deepcopy(self.doc)
