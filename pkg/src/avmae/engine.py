"""Optimizers, schedules, training loops, and checkpoint persistence.

Schedules: linear warmup from 0 to peak = base_lr * batch / reference_batch,
then cosine decay to 0 at the final step. Layerwise decay assigns factor 1 to
heads, decay^(L-i) to block i counted from the bottom, and decay^(L+1) to the
patch projections.

Checkpoint layout: a directory holding manifest.json (architecture dict,
step, tensor names/shapes/dtypes, per-blob sha256) plus one little-endian raw
binary blob per tensor. Histories are append-only CSV rows of
(step, split, metric, value).

Determinism contract: every random draw in a run comes from streams keyed by
(seed, purpose, indices), so fixed seed + single thread reproduces parameter
trajectories bit-exactly.
"""

import dataclasses
import hashlib
import json
import math
import os
from dataclasses import dataclass

import numpy as np

from . import augment, data, kernels
from . import rng as rngmod
from .errors import (CheckpointError, ConfigError, CorruptCheckpoint,
                     DivergedError, InvalidInput)

CHECKPOINT_FORMAT = "avmae.checkpoint.v1"
DIVERGENCE_PATIENCE = 20  # consecutive non-finite losses before aborting


# ---------------------------------------------------------------------------
# recipes and schedules
# ---------------------------------------------------------------------------

@dataclass
class TrainRecipe:
    phase: str = "pretrain"  # pretrain | finetune
    optimizer: str = "adam"  # adam | sgd
    base_lr: float = 3e-4
    batch_size: int = 512
    epochs: float = 800.0
    warmup_epochs: float = 40.0
    reference_batch: int = 512
    grad_clip: float = None
    layerwise_decay: float = None
    weight_decay: float = 0.0
    beta1: float = 0.9
    beta2: float = 0.95
    momentum: float = 0.9
    label_smoothing: float = 0.0
    mixup_alpha: float = 0.0
    spec_augment: bool = False
    audio_time_shift: bool = False
    stochastic_depth: float = 0.0
    seed: int = 0
    steps_per_epoch: int = 1  # set by the loop from the dataset size
    checkpoint_every_epochs: int = None
    eval_every_epochs: int = None

    def __post_init__(self):
        if self.phase not in ("pretrain", "finetune"):
            raise ConfigError(f"unknown phase {self.phase!r}")
        if self.optimizer not in ("adam", "sgd"):
            raise ConfigError(f"unknown optimizer {self.optimizer!r}")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if not (0 <= self.warmup_epochs < self.epochs):
            raise ConfigError(
                f"need 0 <= warmup_epochs < epochs, got {self.warmup_epochs} / {self.epochs}")

    @property
    def total_steps(self) -> int:
        return max(1, int(round(self.epochs * self.steps_per_epoch)))

    @property
    def warmup_steps(self) -> int:
        return int(round(self.warmup_epochs * self.steps_per_epoch))

    @property
    def peak_lr(self) -> float:
        return self.base_lr * self.batch_size / self.reference_batch


def pretrain_recipe(**kw) -> TrainRecipe:
    """Adam, base lr 3e-4 at batch 512, 800 epochs with 40 warmup."""
    kw.setdefault("phase", "pretrain")
    return TrainRecipe(**kw)


def finetune_recipe(**kw) -> TrainRecipe:
    """SGD momentum 0.9, layerwise decay 0.75, clip 1.0, heavy regularizers."""
    defaults = dict(phase="finetune", optimizer="sgd", base_lr=0.1,
                    batch_size=64, reference_batch=64, epochs=50.0,
                    warmup_epochs=2.5, grad_clip=1.0, layerwise_decay=0.75,
                    label_smoothing=0.3, mixup_alpha=0.5, spec_augment=True,
                    stochastic_depth=0.3)
    defaults.update(kw)
    return TrainRecipe(**defaults)


def lr_at(step: int, recipe: TrainRecipe) -> float:
    """Warmup-then-cosine learning rate; continuous and non-negative."""
    if step < 0:
        raise InvalidInput(f"step must be >= 0, got {step}")
    warm = recipe.warmup_steps
    total = recipe.total_steps
    peak = recipe.peak_lr
    if step < warm:
        return peak * step / warm
    if step >= total:
        return 0.0
    progress = (step - warm) / (total - warm)
    return peak * 0.5 * (1.0 + math.cos(math.pi * progress))


def layerwise_lr_factors(num_layers: int, decay: float = 0.75) -> np.ndarray:
    """Multipliers indexed [embeddings, block 0 .. block L-1, head].

    The head gets 1, the top block decay, the bottom block decay^L, and the
    embeddings decay^(L+1); factors increase strictly with depth index for
    decay < 1.
    """
    if num_layers < 1:
        raise InvalidInput("need at least one layer")
    return decay ** (num_layers + 1.0 - np.arange(num_layers + 2))


def param_lr_factor(name: str, num_layers: int, decay: float) -> float:
    """Map a parameter name onto the layerwise schedule.

    Heads, bottleneck tokens, and the final norm train at full rate; patch
    projections at the embedding rate; block parameters by depth, where the
    block index is the first integer segment of the dotted name.
    """
    if decay is None or decay == 1.0:
        return 1.0
    parts = name.split(".")
    if parts[0] == "head" or "bottleneck" in parts:
        return 1.0
    if "proj" in parts:
        return float(decay ** (num_layers + 1))
    for seg in parts:
        if seg.isdigit():
            return float(decay ** (num_layers - int(seg)))
    return 1.0


# ---------------------------------------------------------------------------
# optimizers
# ---------------------------------------------------------------------------

class Adam:
    def __init__(self, params: dict, beta1: float = 0.9, beta2: float = 0.95,
                 eps: float = 1e-8, weight_decay: float = 0.0, lr_factors: dict = None):
        self.params = dict(params)
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.weight_decay = weight_decay
        self.factors = lr_factors or {}
        self.m = {k: np.zeros_like(t.data) for k, t in self.params.items()}
        self.v = {k: np.zeros_like(t.data) for k, t in self.params.items()}
        self.t = 0

    def step(self, lr: float):
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for name, p in self.params.items():
            if p.grad is None:
                continue
            lr_eff = lr * self.factors.get(name, 1.0)
            if self.weight_decay:
                p.data *= 1.0 - lr_eff * self.weight_decay
            g = np.asarray(p.grad, dtype=p.data.dtype)
            kernels.adam_step(p.data, g, self.m[name], self.v[name], lr_eff,
                              self.beta1, self.beta2, self.eps, bc1, bc2)


class SGDMomentum:
    def __init__(self, params: dict, momentum: float = 0.9,
                 weight_decay: float = 0.0, lr_factors: dict = None):
        self.params = dict(params)
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.factors = lr_factors or {}
        self.buf = {k: np.zeros_like(t.data) for k, t in self.params.items()}

    def step(self, lr: float):
        for name, p in self.params.items():
            if p.grad is None:
                continue
            lr_eff = lr * self.factors.get(name, 1.0)
            if self.weight_decay:
                p.data *= 1.0 - lr_eff * self.weight_decay
            g = np.asarray(p.grad, dtype=p.data.dtype)
            kernels.sgdm_step(p.data, g, self.buf[name], lr_eff, self.momentum)


def make_optimizer(recipe: TrainRecipe, params: dict, lr_factors: dict = None):
    if recipe.optimizer == "adam":
        return Adam(params, recipe.beta1, recipe.beta2,
                    weight_decay=recipe.weight_decay, lr_factors=lr_factors)
    return SGDMomentum(params, recipe.momentum,
                       weight_decay=recipe.weight_decay, lr_factors=lr_factors)


def global_grad_norm(params: dict) -> float:
    total = 0.0
    for p in params.values():
        if p.grad is not None:
            g = p.grad.astype(np.float64, copy=False)
            total += float(np.dot(g.ravel(), g.ravel()))
    return math.sqrt(total)


def clip_gradients(params: dict, max_norm: float) -> float:
    """Scale all gradients so the global norm is at most max_norm.

    Returns the pre-clip norm.
    """
    norm = global_grad_norm(params)
    if norm > max_norm:
        scale = max_norm / norm
        for p in params.values():
            if p.grad is not None:
                p.grad *= scale
    return norm


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------

def save_checkpoint(out_dir: str, store, model_dict: dict, step: int,
                    recipe: TrainRecipe = None, extra: dict = None) -> str:
    os.makedirs(out_dir, exist_ok=True)
    tensors = {}
    for idx, (name, t) in enumerate(store.params.items()):
        fname = f"{idx:05d}.bin"
        arr = np.ascontiguousarray(t.data)
        blob = arr.astype(arr.dtype.newbyteorder("<"), copy=False).tobytes()
        with open(os.path.join(out_dir, fname), "wb") as f:
            f.write(blob)
        tensors[name] = {
            "file": fname,
            "shape": list(arr.shape),
            "dtype": str(arr.dtype),
            "sha256": hashlib.sha256(blob).hexdigest(),
        }
    manifest = {
        "format": CHECKPOINT_FORMAT,
        "step": int(step),
        "model": model_dict,
        "recipe": dataclasses.asdict(recipe) if recipe is not None else None,
        "extra": extra or {},
        "tensors": tensors,
    }
    tmp = os.path.join(out_dir, "manifest.json.tmp")
    with open(tmp, "w", encoding="utf-8") as f:
        json.dump(manifest, f, indent=1, sort_keys=True)
    os.replace(tmp, os.path.join(out_dir, "manifest.json"))
    return out_dir


def load_checkpoint(path: str) -> dict:
    """Read a checkpoint directory into {model, step, recipe, extra, tensors}."""
    manifest_path = os.path.join(path, "manifest.json")
    if not os.path.isdir(path) or not os.path.exists(manifest_path):
        raise CheckpointError(f"no checkpoint manifest at {path}")
    try:
        with open(manifest_path, encoding="utf-8") as f:
            manifest = json.load(f)
    except (json.JSONDecodeError, UnicodeDecodeError) as e:
        raise CorruptCheckpoint(f"{manifest_path}: unparseable manifest ({e})") from None
    if manifest.get("format") != CHECKPOINT_FORMAT:
        raise CheckpointError(
            f"{path}: unknown checkpoint format {manifest.get('format')!r}")
    tensors = {}
    for name, meta in manifest["tensors"].items():
        blob_path = os.path.join(path, meta["file"])
        if not os.path.exists(blob_path):
            raise CorruptCheckpoint(f"missing blob for tensor {name}: {meta['file']}")
        with open(blob_path, "rb") as f:
            blob = f.read()
        dtype = np.dtype(meta["dtype"]).newbyteorder("<")
        expected = int(np.prod(meta["shape"], dtype=np.int64)) * dtype.itemsize
        if len(blob) != expected:
            raise CorruptCheckpoint(
                f"tensor {name}: blob has {len(blob)} bytes, expected {expected}")
        if hashlib.sha256(blob).hexdigest() != meta["sha256"]:
            raise CorruptCheckpoint(f"tensor {name}: sha256 mismatch in {meta['file']}")
        arr = np.frombuffer(blob, dtype=dtype).reshape(meta["shape"])
        tensors[name] = arr.astype(arr.dtype.newbyteorder("="), copy=False)
    return {
        "model": manifest["model"],
        "step": manifest["step"],
        "recipe": manifest.get("recipe"),
        "extra": manifest.get("extra", {}),
        "tensors": tensors,
    }


def restore_into(store, tensors: dict):
    """Copy checkpoint tensors into a parameter store, validating shapes.

    The first missing or shape-mismatched tensor (in registration order) is
    named in the raised CheckpointError.
    """
    for name, p in store.params.items():
        if name not in tensors:
            raise CheckpointError(f"checkpoint is missing tensor {name}")
        arr = tensors[name]
        if tuple(arr.shape) != tuple(p.data.shape):
            raise CheckpointError(
                f"tensor {name}: checkpoint shape {tuple(arr.shape)} does not "
                f"match model shape {tuple(p.data.shape)}")
        p.data[...] = arr.astype(p.data.dtype, copy=False)


def load_pretrain_model(path: str):
    """Rebuild a PretrainModel from a checkpoint dir; returns (model, step)."""
    from .model import ModelSpec, PretrainModel

    ckpt = load_checkpoint(path)
    if "kind" in ckpt["model"]:
        raise CheckpointError(
            f"{path} holds a {ckpt['model']['kind']} checkpoint, not a "
            f"pretraining one (no decoder weights)")
    spec = ModelSpec.from_dict(ckpt["model"])
    model = PretrainModel(spec)
    restore_into(model.store, ckpt["tensors"])
    return model, ckpt["step"]


# ---------------------------------------------------------------------------
# history
# ---------------------------------------------------------------------------

class History:
    """Append-only (step, split, metric, value) log, optionally CSV-backed."""

    HEADER = "step,split,metric,value"

    def __init__(self, path: str = None):
        self.path = path
        self.rows = []
        if path and not os.path.exists(path):
            with open(path, "w", encoding="utf-8") as f:
                f.write(self.HEADER + "\n")

    def log(self, step: int, split: str, metric: str, value: float):
        row = (int(step), split, metric, float(value))
        self.rows.append(row)
        if self.path:
            with open(self.path, "a", encoding="utf-8") as f:
                f.write(f"{row[0]},{row[1]},{row[2]},{row[3]!r}\n")

    def last(self, metric: str, split: str = None):
        for step, sp, met, val in reversed(self.rows):
            if met == metric and (split is None or sp == split):
                return val
        return None

    def series(self, metric: str, split: str = None):
        return [v for s, sp, met, v in self.rows
                if met == metric and (split is None or sp == split)]

    @staticmethod
    def read(path: str):
        rows = []
        with open(path, encoding="utf-8") as f:
            header = f.readline().strip()
            if header != History.HEADER:
                raise InvalidInput(f"{path}: unexpected history header {header!r}")
            for line in f:
                step, split, metric, value = line.rstrip("\n").split(",")
                rows.append((int(step), split, metric, float(value)))
        return rows


# ---------------------------------------------------------------------------
# training loops
# ---------------------------------------------------------------------------

def _epoch_count(recipe: TrainRecipe) -> int:
    return int(math.ceil(recipe.total_steps / recipe.steps_per_epoch))


def _with_dataset(recipe: TrainRecipe, dataset) -> TrainRecipe:
    spe = max(1, math.ceil(len(dataset) / recipe.batch_size))
    return dataclasses.replace(recipe, steps_per_epoch=spe)


def pretrain(model, dataset, recipe: TrainRecipe, objective: str = "joint",
             directions=("video_from_audio", "audio_from_video"),
             out_dir: str = None, log_parts: bool = True) -> History:
    """Self-supervised training; writes history and checkpoints under out_dir.

    objective: "joint" (reconstruct both modalities' masked rows) or
    "inpaint" (reconstruct each direction's target rows from the source
    modality alone). A checkpoint of the final parameters always lands in
    out_dir itself; intermediate ones in out_dir/epoch****.
    """
    if objective not in ("joint", "inpaint"):
        raise ConfigError(f"unknown objective {objective!r}")
    if objective == "inpaint":
        if model.spec.fusion.encoder in ("separate", "shared"):
            raise ConfigError(
                f"inpainting needs joint encoder layers; encoder variant is "
                f"{model.spec.fusion.encoder!r}")
        if len(model.spec.modalities) < 2:
            raise ConfigError("inpainting needs both modalities")
    recipe = _with_dataset(recipe, dataset)
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
    history = History(os.path.join(out_dir, "history.csv") if out_dir else None)
    opt = make_optimizer(recipe, model.store.params)
    seed = recipe.seed
    total = recipe.total_steps
    step = 0
    bad_streak = 0
    for epoch in range(_epoch_count(recipe)):
        shuffle_rng = rngmod.stream(seed, "shuffle", epoch)
        for batch in data.make_batches(dataset, recipe.batch_size,
                                       shuffle=True, rng=shuffle_rng):
            if step >= total:
                break
            step_rng = rngmod.stream(seed, "step", step)
            plans = model.make_plans(step_rng)
            model.store.zero_grad()
            if objective == "joint":
                loss, parts = model.forward_joint(batch, plans)
            else:
                loss, parts = model.forward_inpaint(batch, plans, directions, step_rng)
            value = float(loss.data)
            history.log(step, "train", "loss", value)
            if log_parts:
                for name, part in parts.items():
                    history.log(step, "train", f"loss_{name}", float(part.data))
            if not math.isfinite(value):
                bad_streak += 1
                if bad_streak >= DIVERGENCE_PATIENCE:
                    raise DivergedError(
                        f"loss non-finite for {bad_streak} consecutive steps at step {step}")
                step += 1
                continue  # skip the update; gradients would poison parameters
            bad_streak = 0
            loss.backward()
            if recipe.grad_clip:
                clip_gradients(model.store.params, recipe.grad_clip)
            opt.step(lr_at(step, recipe))
            step += 1
        if (out_dir and recipe.checkpoint_every_epochs
                and (epoch + 1) % recipe.checkpoint_every_epochs == 0
                and step < total):
            save_checkpoint(os.path.join(out_dir, f"epoch{epoch + 1:04d}"),
                            model.store, model.spec.to_dict(), step, recipe)
    if out_dir:
        save_checkpoint(out_dir, model.store, model.spec.to_dict(), step, recipe,
                        extra={"objective": objective})
    return history


def _soft_targets(labels: list, heads, smoothing: float) -> dict:
    """Per-head soft targets from a batch's label dicts."""
    from . import finetune as ft

    targets = {}
    for head, num_classes in heads:
        targets[head] = ft.collate_labels(labels, head, num_classes, smoothing)
    return targets


def finetune(clf, dataset, recipe: TrainRecipe, out_dir: str = None,
             eval_dataset=None, freeze_encoder: bool = False) -> History:
    """Supervised training of a classifier built by the finetune module."""
    from . import finetune as ft

    recipe = _with_dataset(recipe, dataset)
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
    history = History(os.path.join(out_dir, "history.csv") if out_dir else None)
    trainable = clf.head_params() if freeze_encoder else clf.store.params
    factors = None
    if recipe.layerwise_decay is not None:
        factors = {name: param_lr_factor(name, clf.num_layers, recipe.layerwise_decay)
                   for name in trainable}
    opt = make_optimizer(recipe, trainable, factors)
    seed = recipe.seed
    total = recipe.total_steps
    step = 0
    bad_streak = 0
    for epoch in range(_epoch_count(recipe)):
        shuffle_rng = rngmod.stream(seed, "shuffle", epoch)
        for batch in data.make_batches(dataset, recipe.batch_size,
                                       shuffle=True, rng=shuffle_rng):
            if step >= total:
                break
            step_rng = rngmod.stream(seed, "step", step)
            arrays = {m: np.asarray(batch[m]) for m in ("audio", "video") if m in batch}
            if recipe.audio_time_shift and "audio" in arrays:
                from .audio import random_time_shift

                arrays["audio"] = np.stack(
                    [random_time_shift(a, step_rng) for a in arrays["audio"]])
            if recipe.spec_augment and "audio" in arrays:
                # frequency-mask width is capped by the grid so small desk
                # configurations can still use the full-size default of 24
                fmax = min(24, arrays["audio"].shape[-1])
                arrays["audio"] = np.stack(
                    [augment.spec_augment(a, step_rng, max_freq_bins=fmax)
                     for a in arrays["audio"]])
            targets = _soft_targets(batch["labels"], clf.heads, recipe.label_smoothing)
            if recipe.mixup_alpha > 0:
                arrays, targets = augment.mixup(arrays, targets,
                                                recipe.mixup_alpha, step_rng)
            clf.store.zero_grad()
            logits = clf.forward(arrays, training=not freeze_encoder, rng=step_rng,
                                 drop_rate=0.0 if freeze_encoder else recipe.stochastic_depth)
            loss = ft.multi_head_loss(logits, targets)
            value = float(loss.data)
            history.log(step, "train", "loss", value)
            if not math.isfinite(value):
                bad_streak += 1
                if bad_streak >= DIVERGENCE_PATIENCE:
                    raise DivergedError(
                        f"loss non-finite for {bad_streak} consecutive steps at step {step}")
                step += 1
                continue
            bad_streak = 0
            loss.backward()
            if recipe.grad_clip:
                clip_gradients(trainable, recipe.grad_clip)
            opt.step(lr_at(step, recipe))
            step += 1
        if (eval_dataset is not None and recipe.eval_every_epochs
                and (epoch + 1) % recipe.eval_every_epochs == 0):
            for name, val in evaluate(clf, eval_dataset, recipe.batch_size).items():
                history.log(step, "eval", name, val)
    if eval_dataset is not None:
        for name, val in evaluate(clf, eval_dataset, recipe.batch_size).items():
            history.log(step, "eval", name, val)
    if out_dir:
        save_checkpoint(out_dir, clf.store, clf.to_dict(), step, recipe)
    return history


def evaluate(clf, dataset, batch_size: int = 8, views: int = 1) -> dict:
    """Deterministic metrics over a dataset; multi-view averages logits."""
    from . import finetune as ft

    logit_sums = None
    labels = []
    for batch in data.make_batches(dataset, batch_size, shuffle=False):
        arrays = {m: np.asarray(batch[m]) for m in ("audio", "video") if m in batch}
        out = ft.multiview_logits(clf, arrays, views)
        if logit_sums is None:
            logit_sums = {h: [] for h in out}
        for h, lg in out.items():
            logit_sums[h].append(lg)
        labels.extend(batch["labels"])
    logits = {h: np.concatenate(parts) for h, parts in logit_sums.items()}
    return ft.compute_metrics(logits, labels, clf.heads)
