"""Flat key=value run configuration with dotted sections.

A config file is plain text: one `section.key=value` per line, `#` comments
and blank lines ignored. Every key has a typed default, so a minimal file
(possibly empty) describes a complete desk-scale synthetic run. `dump`
prints the fully resolved configuration; feeding that dump back in
reproduces the run.
"""

import os

from . import data
from .backbone import FusionSpec, TransformerConfig
from .engine import TrainRecipe
from .errors import ConfigError
from .model import ModelSpec

# value kinds: int / float / str / bool, opt_* treat "" as None,
# ints / strs are comma lists, heads is a comma list of name:classes
SCHEMA = {
    "model.modalities": "strs",
    "model.audio_grid": "ints",
    "model.audio_patch": "ints",
    "model.video_shape": "ints",
    "model.video_tubelet": "ints",
    "model.encoder": "str",
    "model.S": "int",
    "model.decoder": "str",
    "model.d": "int",
    "model.layers": "int",
    "model.heads": "int",
    "model.mlp": "int",
    "model.dec_d": "int",
    "model.dec_layers": "int",
    "model.dec_heads": "int",
    "model.dec_mlp": "int",
    "model.alpha_audio": "float",
    "model.alpha_video": "float",
    "model.standardize_targets": "bool",

    "train.objective": "str",
    "train.directions": "strs",
    "train.optimizer": "str",
    "train.base_lr": "float",
    "train.batch_size": "int",
    "train.epochs": "float",
    "train.warmup_epochs": "float",
    "train.reference_batch": "int",
    "train.grad_clip": "opt_float",
    "train.layerwise_decay": "opt_float",
    "train.weight_decay": "float",
    "train.beta1": "float",
    "train.beta2": "float",
    "train.momentum": "float",
    "train.label_smoothing": "float",
    "train.mixup_alpha": "float",
    "train.spec_augment": "bool",
    "train.audio_time_shift": "bool",
    "train.stochastic_depth": "float",
    "train.seed": "int",
    "train.checkpoint_every_epochs": "opt_int",
    "train.eval_every_epochs": "opt_int",

    "data.source": "str",
    "data.manifest": "str",
    "data.eval_manifest": "str",
    "data.num_classes": "int",
    "data.rho": "float",
    "data.num_samples": "int",
    "data.eval_samples": "int",
    "data.frames": "int",
    "data.image_size": "int",
    "data.spec_frames": "int",
    "data.spec_bins": "int",
    "data.noise": "float",
    "data.seed": "int",
    "data.eval_seed": "int",

    "finetune.checkpoint": "str",
    "finetune.mode": "str",
    "finetune.heads": "heads",
    "finetune.fusion_layer": "opt_int",
    "finetune.bottleneck_tokens": "int",
    "finetune.pooling": "str",
    "finetune.multilabel": "bool",
    "finetune.video_frames": "opt_int",
    "finetune.freeze_encoder": "bool",

    "eval.checkpoint": "str",
    "eval.views": "int",
    "eval.batch_size": "int",

    "probe.checkpoint": "str",
    "probe.head": "str",
    "probe.lr": "float",
    "probe.steps": "int",
    "probe.batch_size": "int",

    "reconstruct.checkpoint": "str",
    "reconstruct.sample": "int",
    "reconstruct.alpha_audio": "opt_float",
    "reconstruct.alpha_video": "opt_float",

    "sweep.grid": "str",
}

# desk-scale defaults: a tiny model matched to the synthetic data shapes,
# small enough that every command finishes in seconds on a laptop CPU
DEFAULTS = {
    "model.modalities": ("audio", "video"),
    "model.audio_grid": (64, 128),
    "model.audio_patch": (8, 16),
    "model.video_shape": (8, 32, 32),
    "model.video_tubelet": (2, 8, 8),
    "model.encoder": "mid",
    "model.S": 2,
    "model.decoder": "shared",
    "model.d": 32,
    "model.layers": 4,
    "model.heads": 4,
    "model.mlp": 64,
    "model.dec_d": 24,
    "model.dec_layers": 2,
    "model.dec_heads": 4,
    "model.dec_mlp": 48,
    "model.alpha_audio": 0.5,
    "model.alpha_video": 0.9,
    "model.standardize_targets": False,

    "train.objective": "joint",
    "train.directions": ("video_from_audio", "audio_from_video"),
    "train.weight_decay": 0.0,
    "train.beta1": 0.9,
    "train.beta2": 0.95,
    "train.momentum": 0.9,
    "train.mixup_alpha": 0.0,
    "train.spec_augment": False,
    "train.audio_time_shift": False,
    "train.stochastic_depth": 0.0,
    "train.seed": 0,
    "train.checkpoint_every_epochs": None,
    "train.eval_every_epochs": None,

    "data.source": "synthetic",
    "data.manifest": "",
    "data.eval_manifest": "",
    "data.num_classes": 8,
    "data.rho": 1.0,
    "data.num_samples": 64,
    "data.eval_samples": 32,
    "data.frames": 8,
    "data.image_size": 32,
    "data.spec_frames": 64,
    "data.spec_bins": 128,
    "data.noise": 0.1,
    "data.seed": 0,
    "data.eval_seed": 1,

    "finetune.checkpoint": "",
    "finetune.mode": "audiovisual",
    "finetune.heads": (("label", 8),),
    "finetune.fusion_layer": None,
    "finetune.bottleneck_tokens": 4,
    "finetune.pooling": "mean",
    "finetune.multilabel": False,
    "finetune.video_frames": None,
    "finetune.freeze_encoder": False,

    "eval.checkpoint": "",
    "eval.views": 4,
    "eval.batch_size": 8,

    "probe.checkpoint": "",
    "probe.head": "label",
    "probe.lr": 0.1,
    "probe.steps": 500,
    "probe.batch_size": 16,

    "reconstruct.checkpoint": "",
    "reconstruct.sample": 0,
    "reconstruct.alpha_audio": None,
    "reconstruct.alpha_video": None,

    "sweep.grid": "fusion",
}

# optimizer settings differ by phase; the self-supervised defaults favor
# Adam with no decay or clipping, supervised runs get the SGD recipe
PHASE_TRAIN_DEFAULTS = {
    "pretrain": {
        "train.optimizer": "adam",
        "train.base_lr": 1e-3,
        "train.batch_size": 8,
        "train.epochs": 5.0,
        "train.warmup_epochs": 1.0,
        "train.reference_batch": 8,
        "train.grad_clip": None,
        "train.layerwise_decay": None,
        "train.label_smoothing": 0.0,
    },
    "finetune": {
        "train.optimizer": "sgd",
        "train.base_lr": 0.05,
        "train.batch_size": 8,
        "train.epochs": 5.0,
        "train.warmup_epochs": 1.0,
        "train.reference_batch": 8,
        "train.grad_clip": 1.0,
        "train.layerwise_decay": 0.75,
        "train.label_smoothing": 0.1,
    },
}


def read_config_file(path: str) -> dict:
    """Raw key -> value-string pairs from a config file."""
    if not os.path.isfile(path):
        raise ConfigError(f"config file not found: {path}")
    values = {}
    with open(path, encoding="utf-8") as f:
        for lineno, raw in enumerate(f, 1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected key=value, got {line!r}")
            key, _, value = line.partition("=")
            key = key.strip()
            if key in values:
                raise ConfigError(f"{path}:{lineno}: duplicate key {key!r}")
            values[key] = value.strip()
    return values


def _parse_value(key: str, kind: str, text: str):
    try:
        if kind == "int":
            return int(text)
        if kind == "float":
            return float(text)
        if kind == "str":
            return text
        if kind == "bool":
            if text not in ("true", "false"):
                raise ValueError("expected true or false")
            return text == "true"
        if kind == "opt_int":
            return None if text == "" else int(text)
        if kind == "opt_float":
            return None if text == "" else float(text)
        if kind == "ints":
            return tuple(int(p.strip()) for p in text.split(",")) if text else ()
        if kind == "strs":
            return tuple(p.strip() for p in text.split(",")) if text else ()
        if kind == "heads":
            heads = []
            for part in text.split(","):
                name, _, k = part.strip().partition(":")
                if not name or not k:
                    raise ValueError("expected name:classes")
                heads.append((name, int(k)))
            return tuple(heads)
    except ValueError as e:
        raise ConfigError(f"bad value for {key}: {text!r} ({e})") from None
    raise AssertionError(f"unhandled kind {kind}")


def resolve(values: dict, phase: str = "pretrain") -> dict:
    """Typed full configuration from raw string values plus defaults."""
    unknown = sorted(k for k in values if k not in SCHEMA)
    if unknown:
        raise ConfigError("unknown config key(s): " + ", ".join(unknown))
    cfg = dict(DEFAULTS)
    cfg.update(PHASE_TRAIN_DEFAULTS[phase])
    for key, text in values.items():
        cfg[key] = _parse_value(key, SCHEMA[key], text)
    return cfg


def _format_value(v) -> str:
    if v is None:
        return ""
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, tuple):
        if v and isinstance(v[0], tuple):  # heads
            return ",".join(f"{name}:{k}" for name, k in v)
        return ",".join(str(p) for p in v)
    if isinstance(v, float):
        return repr(v)
    return str(v)


def dump(cfg: dict) -> str:
    """One key=value line per setting; parsing the dump reproduces cfg."""
    return "\n".join(f"{k}={_format_value(v)}" for k, v in sorted(cfg.items()))


# ---------------------------------------------------------------------------
# object builders
# ---------------------------------------------------------------------------

def model_spec_from(cfg: dict) -> ModelSpec:
    enc = TransformerConfig(cfg["model.d"], cfg["model.layers"],
                            cfg["model.heads"], cfg["model.mlp"])
    dec = TransformerConfig(cfg["model.dec_d"], cfg["model.dec_layers"],
                            cfg["model.dec_heads"], cfg["model.dec_mlp"])
    fusion = FusionSpec(cfg["model.encoder"], cfg["model.S"], cfg["model.decoder"])
    return ModelSpec(
        modalities=cfg["model.modalities"],
        audio_grid=cfg["model.audio_grid"],
        audio_patch=cfg["model.audio_patch"],
        video_shape=cfg["model.video_shape"],
        video_tubelet=cfg["model.video_tubelet"],
        enc=enc, dec=dec, fusion=fusion,
        alpha_audio=cfg["model.alpha_audio"],
        alpha_video=cfg["model.alpha_video"],
        standardize_targets=cfg["model.standardize_targets"])


def recipe_from(cfg: dict, phase: str) -> TrainRecipe:
    return TrainRecipe(
        phase=phase,
        optimizer=cfg["train.optimizer"],
        base_lr=cfg["train.base_lr"],
        batch_size=cfg["train.batch_size"],
        epochs=cfg["train.epochs"],
        warmup_epochs=cfg["train.warmup_epochs"],
        reference_batch=cfg["train.reference_batch"],
        grad_clip=cfg["train.grad_clip"],
        layerwise_decay=cfg["train.layerwise_decay"],
        weight_decay=cfg["train.weight_decay"],
        beta1=cfg["train.beta1"],
        beta2=cfg["train.beta2"],
        momentum=cfg["train.momentum"],
        label_smoothing=cfg["train.label_smoothing"],
        mixup_alpha=cfg["train.mixup_alpha"],
        spec_augment=cfg["train.spec_augment"],
        audio_time_shift=cfg["train.audio_time_shift"],
        stochastic_depth=cfg["train.stochastic_depth"],
        seed=cfg["train.seed"],
        checkpoint_every_epochs=cfg["train.checkpoint_every_epochs"],
        eval_every_epochs=cfg["train.eval_every_epochs"])


def _synth_config(cfg: dict, num_samples: int, seed: int) -> data.SynthConfig:
    return data.SynthConfig(
        num_classes=cfg["data.num_classes"], rho=cfg["data.rho"],
        num_samples=num_samples, frames=cfg["data.frames"],
        image_size=cfg["data.image_size"], spec_frames=cfg["data.spec_frames"],
        spec_bins=cfg["data.spec_bins"], noise=cfg["data.noise"], seed=seed)


def datasets_from(cfg: dict):
    """(train_dataset, eval_dataset_or_None) from the data section."""
    source = cfg["data.source"]
    if source == "synthetic":
        train = data.generate_synthetic(
            _synth_config(cfg, cfg["data.num_samples"], cfg["data.seed"]))
        ev = None
        if cfg["data.eval_samples"] > 0:
            ev = data.generate_synthetic(
                _synth_config(cfg, cfg["data.eval_samples"], cfg["data.eval_seed"]))
        return train, ev
    if source == "manifest":
        if not cfg["data.manifest"]:
            raise ConfigError("data.manifest is required when data.source=manifest")
        train = data.load_manifest(cfg["data.manifest"])
        ev = data.load_manifest(cfg["data.eval_manifest"]) if cfg["data.eval_manifest"] else None
        return train, ev
    raise ConfigError(f"unknown data.source {source!r}")


def check_synthetic_grids(cfg: dict):
    """Fail early when the model's grids cannot tokenize the synthetic data."""
    if cfg["data.source"] != "synthetic":
        return
    mods = cfg["model.modalities"]
    if "audio" in mods:
        grid = (cfg["data.spec_frames"], cfg["data.spec_bins"])
        if tuple(cfg["model.audio_grid"]) != grid:
            raise ConfigError(
                f"model.audio_grid {cfg['model.audio_grid']} does not match "
                f"synthetic spectrograms {grid}")
    if "video" in mods:
        shape = (cfg["data.frames"], cfg["data.image_size"], cfg["data.image_size"])
        if tuple(cfg["model.video_shape"]) != shape:
            raise ConfigError(
                f"model.video_shape {cfg['model.video_shape']} does not match "
                f"synthetic clips {shape}")


def classifier_spec_from(cfg: dict):
    from .finetune import ClassifierSpec

    return ClassifierSpec(
        mode=cfg["finetune.mode"],
        heads=cfg["finetune.heads"],
        fusion_layer=cfg["finetune.fusion_layer"],
        bottleneck_tokens=cfg["finetune.bottleneck_tokens"],
        pooling=cfg["finetune.pooling"],
        video_frames=cfg["finetune.video_frames"],
        multilabel=cfg["finetune.multilabel"])
