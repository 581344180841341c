"""Downstream classifiers built from a pretrained encoder.

Unimodal models reuse one pretrained stream and feed mean-pooled final
tokens to freshly initialized (zero) linear heads. Audiovisual models use
two streams with lateral exchange through a small set of learned bottleneck
tokens from a chosen layer onward: each stream attends over its own tokens
plus the bottlenecks, and the per-stream bottleneck updates are averaged.

Pretrained-weight assignment per pretraining variant:
  separate -> each stream takes its own modality's stack;
  early/shared -> both streams start from the same (joint or shared) stack
                  and untie during training;
  mid (S joint layers) -> lower L-S stream layers come from the per-modality
                  stacks, and the S joint layers initialize the final S
                  layers of BOTH streams.
Heads and bottleneck tokens are always fresh. The decoder is discarded.
"""

from dataclasses import dataclass

import numpy as np

from . import augment
from . import autograd as ag
from . import data as data_mod
from . import engine
from .autograd import Tensor
from .errors import CheckpointError, ConfigError, InvalidInput
from .layers import LayerNorm, Linear, ParamStore, TransformerBlock, sinusoid_positions
from .model import ModelSpec
from .tokens import grid_coords


def default_fusion_layer(num_layers: int) -> int:
    # 8 for the 12-layer Base stack, 16 for the 24-layer Large stack
    return (2 * num_layers) // 3


@dataclass(frozen=True)
class ClassifierSpec:
    mode: str  # audio | video | audiovisual
    heads: tuple  # ((name, class_count), ...)
    fusion_layer: int = None  # audiovisual only; None -> 2L/3
    bottleneck_tokens: int = 4
    pooling: str = "mean"
    video_frames: int = None  # None -> pretraining frame count
    multilabel: bool = False

    def __post_init__(self):
        if self.mode not in ("audio", "video", "audiovisual"):
            raise ConfigError(f"unknown classifier mode {self.mode!r}")
        heads = tuple((str(n), int(k)) for n, k in self.heads)
        object.__setattr__(self, "heads", heads)
        if not heads:
            raise ConfigError("classifier needs at least one head")
        if len({n for n, _ in heads}) != len(heads):
            raise ConfigError("duplicate head names")
        for name, k in heads:
            if k < 2:
                raise ConfigError(f"head {name!r} needs >= 2 classes")
        if self.pooling != "mean":
            raise ConfigError(f"unknown pooling {self.pooling!r}")
        if self.bottleneck_tokens < 1 and self.mode == "audiovisual":
            raise ConfigError("audiovisual fusion needs >= 1 bottleneck token")

    @property
    def modalities(self) -> tuple:
        return ("audio", "video") if self.mode == "audiovisual" else (self.mode,)

    def to_dict(self) -> dict:
        return {"mode": self.mode, "heads": [list(h) for h in self.heads],
                "fusion_layer": self.fusion_layer,
                "bottleneck_tokens": self.bottleneck_tokens,
                "pooling": self.pooling, "video_frames": self.video_frames,
                "multilabel": self.multilabel}

    @classmethod
    def from_dict(cls, d: dict) -> "ClassifierSpec":
        return cls(mode=d["mode"], heads=tuple(tuple(h) for h in d["heads"]),
                   fusion_layer=d["fusion_layer"],
                   bottleneck_tokens=d["bottleneck_tokens"],
                   pooling=d["pooling"], video_frames=d["video_frames"],
                   multilabel=d["multilabel"])


def _rescaled_coords(grid_ft: tuple, grid_pre: tuple) -> np.ndarray:
    """Token coordinates for the finetune grid, stretched onto the pretrain
    coordinate range axis-wise so the fixed positional table stays in the
    distribution the encoder was trained on."""
    coords = grid_coords(grid_ft).astype(np.float64)
    for ax, (nf, npre) in enumerate(zip(grid_ft, grid_pre)):
        if nf != npre and nf > 1:
            coords[:, ax] *= (npre - 1) / (nf - 1)
    return coords


class ClassifierModel:
    """Finetuning model: modality streams + optional bottleneck fusion + heads."""

    def __init__(self, pre_spec: ModelSpec, clf: ClassifierSpec, seed: int = 0):
        for m in clf.modalities:
            if m not in ("audio", "video"):
                raise ConfigError(f"unknown modality {m!r}")
        self.pre_spec = pre_spec
        self.clf = clf
        L = pre_spec.enc.layers
        d = pre_spec.enc.d
        self.num_layers = L
        self.fusion_layer = clf.fusion_layer
        if clf.mode == "audiovisual":
            if self.fusion_layer is None:
                self.fusion_layer = default_fusion_layer(L)
            if not (0 <= self.fusion_layer < L):
                raise ConfigError(
                    f"fusion_layer {self.fusion_layer} outside [0, {L})")

        # finetuning may use a different clip length than pretraining
        if clf.video_frames is not None:
            if clf.video_frames % pre_spec.video_tubelet[0]:
                raise ConfigError(
                    f"video_frames {clf.video_frames} not divisible by "
                    f"tubelet length {pre_spec.video_tubelet[0]}")
            t, h, w = pre_spec.video_shape
            self.video_shape = (clf.video_frames, h, w)
        else:
            self.video_shape = pre_spec.video_shape

        self.store = ParamStore(seed=seed, dtype=np.dtype(pre_spec.dtype))
        self.proj = {}
        self.positions = {}
        self.blocks = {}
        self.norms = {}
        for m in clf.modalities:
            grid = self._token_grid(m)
            pre_grid = pre_spec.token_grid(m)
            self.positions[m] = sinusoid_positions(_rescaled_coords(grid, pre_grid), d)
            self.proj[m] = Linear(self.store, f"ft.proj.{m}", pre_spec.patch_width(m), d)
            self.blocks[m] = [TransformerBlock(self.store, f"ft.{m}.{i}", d,
                                               pre_spec.enc.heads, pre_spec.enc.mlp)
                              for i in range(L)]
            self.norms[m] = LayerNorm(self.store, f"ft.norm.{m}", d)
        if clf.mode == "audiovisual":
            self.bottleneck = self.store.normal("ft.bottleneck",
                                                (clf.bottleneck_tokens, d), 0.02)
        self.head_layers = {name: Linear(self.store, f"head.{name}",
                                         d * len(clf.modalities), k, zero_init=True)
                            for name, k in clf.heads}

    # ------------------------------------------------------------------
    @property
    def heads(self) -> tuple:
        return self.clf.heads

    def _token_grid(self, m: str) -> tuple:
        if m == "audio":
            return self.pre_spec.token_grid("audio")
        t, h, w = self.video_shape
        tt, th, tw = self.pre_spec.video_tubelet
        return (t // tt, h // th, w // tw)

    def head_params(self) -> dict:
        return {n: t for n, t in self.store.params.items() if n.startswith("head.")}

    def to_dict(self) -> dict:
        return {"kind": "classifier", "pretrain": self.pre_spec.to_dict(),
                "classifier": self.clf.to_dict()}

    def tokenize(self, arrays: dict) -> dict:
        from .audio import patchify_spectrogram
        from .video import tubelet_tokenize

        out = {}
        for m in self.clf.modalities:
            if m not in arrays:
                raise InvalidInput(f"batch lacks required modality {m!r}")
            if m == "audio":
                seq = patchify_spectrogram(np.asarray(arrays["audio"]),
                                           self.pre_spec.audio_patch,
                                           validate_bins=False)
            else:
                seq = tubelet_tokenize(np.asarray(arrays["video"]),
                                       self.pre_spec.video_tubelet)
            expect = int(np.prod(self._token_grid(m)))
            if seq.n != expect:
                raise InvalidInput(
                    f"{m} input yields {seq.n} tokens, model expects {expect}")
            out[m] = seq
        return out

    def _drop_pair(self, batch: int, rate: float, rng, training: bool):
        if not training or rate == 0.0 or rng is None:
            return None
        return (augment.branch_scales(batch, rate, rng, training),
                augment.branch_scales(batch, rate, rng, training))

    def forward(self, arrays: dict, training: bool = False, rng=None,
                drop_rate: float = 0.0) -> dict:
        """Logits per head for a batch dict of raw modality arrays."""
        seqs = self.tokenize(arrays)
        dtype = self.store.dtype
        x = {}
        batch = None
        for m, seq in seqs.items():
            emb = np.asarray(seq.embeddings, dtype=dtype)
            if emb.ndim == 2:
                emb = emb[None]
            batch = emb.shape[0]
            h = self.proj[m](Tensor(emb))
            x[m] = ag.add(h, Tensor(self.positions[m].astype(dtype)))

        rates = augment.stochastic_depth_rates(self.num_layers, drop_rate)
        order = [m for m in ("audio", "video") if m in x]
        fuse_from = self.fusion_layer if self.clf.mode == "audiovisual" else self.num_layers
        btk = None
        for i in range(self.num_layers):
            if i == fuse_from:
                nb = self.clf.bottleneck_tokens
                btk = ag.broadcast_to(
                    ag.reshape(self.bottleneck, (1, nb, self.bottleneck.data.shape[-1])),
                    (batch, nb, self.bottleneck.data.shape[-1]))
            if btk is None:
                for m in order:
                    drop = self._drop_pair(batch, rates[i], rng, training)
                    x[m] = self.blocks[m][i](x[m], drop)
            else:
                nb = self.clf.bottleneck_tokens
                updates = []
                for m in order:
                    n_m = x[m].data.shape[-2]
                    drop = self._drop_pair(batch, rates[i], rng, training)
                    y = self.blocks[m][i](ag.concat([x[m], btk], axis=1), drop)
                    x[m] = ag.slice_axis(y, 1, 0, n_m)
                    updates.append(ag.slice_axis(y, 1, n_m, n_m + nb))
                btk = updates[0]
                for u in updates[1:]:
                    btk = ag.add(btk, u)
                if len(updates) > 1:
                    btk = ag.mul(btk, 1.0 / len(updates))
        pooled = [ag.mean_axis(self.norms[m](x[m]), 1) for m in order]
        feats = pooled[0] if len(pooled) == 1 else ag.concat(pooled, axis=-1)
        return {name: head(feats) for name, head in self.head_layers.items()}


# ---------------------------------------------------------------------------
# pretrained-weight assignment
# ---------------------------------------------------------------------------

def init_mapping(pre_spec: ModelSpec, model: ClassifierModel):
    """(finetune name -> pretrain name, fresh names) covering every parameter."""
    enc = pre_spec.fusion.encoder
    L = pre_spec.enc.layers
    S = pre_spec.fusion.S if enc == "mid" else 0

    def block_source(m: str, i: int) -> str:
        if enc == "separate":
            return f"enc.{m}.{i}"
        if enc == "shared":
            return f"enc.shared.{i}"
        if enc == "early":
            return f"enc.joint.{i}"
        return f"enc.{m}.{i}" if i < L - S else f"enc.joint.{i}"

    def norm_source(m: str) -> str:
        if enc == "separate":
            return f"enc.norm.{m}"
        if enc == "shared":
            return "enc.norm.shared"
        return "enc.norm.joint"

    mapping = {}
    fresh = []
    for name in model.store.params:
        parts = name.split(".")
        if parts[0] == "head" or name == "ft.bottleneck":
            fresh.append(name)
            continue
        rest = ".".join(parts[2:])
        if parts[1] == "proj":
            mapping[name] = f"enc.proj.{parts[2]}.{parts[3]}"
        elif parts[1] == "norm":
            mapping[name] = f"{norm_source(parts[2])}.{parts[3]}"
        else:
            m, i = parts[1], int(parts[2])
            mapping[name] = f"{block_source(m, i)}.{'.'.join(parts[3:])}"
    return mapping, fresh


def _build(ckpt_path: str, clf: ClassifierSpec, seed: int = 0) -> ClassifierModel:
    ckpt = engine.load_checkpoint(ckpt_path)
    if "kind" in ckpt["model"]:
        raise CheckpointError(
            f"{ckpt_path} is a {ckpt['model']['kind']} checkpoint; classifier "
            f"building needs a pretraining checkpoint")
    pre_spec = ModelSpec.from_dict(ckpt["model"])
    for m in clf.modalities:
        if m not in pre_spec.modalities:
            raise CheckpointError(
                f"checkpoint was pretrained without {m!r}; cannot initialize "
                f"a {clf.mode} classifier from it")
    model = ClassifierModel(pre_spec, clf, seed=seed)
    mapping, _ = init_mapping(pre_spec, model)
    for ft_name, src_name in mapping.items():
        if src_name not in ckpt["tensors"]:
            raise ConfigError(
                f"weight assignment needs {src_name} (for {ft_name}) but the "
                f"checkpoint does not provide it")
        arr = ckpt["tensors"][src_name]
        dst = model.store.params[ft_name]
        if tuple(arr.shape) != tuple(dst.data.shape):
            raise CheckpointError(
                f"tensor {src_name}: checkpoint shape {tuple(arr.shape)} does "
                f"not fit {ft_name} {tuple(dst.data.shape)}")
        dst.data[...] = arr.astype(dst.data.dtype, copy=False)
    return model


def build_unimodal_classifier(ckpt_path: str, clf: ClassifierSpec,
                              seed: int = 0) -> ClassifierModel:
    if clf.mode not in ("audio", "video"):
        raise ConfigError("unimodal classifier mode must be audio or video")
    return _build(ckpt_path, clf, seed)


def build_audiovisual_classifier(ckpt_path: str, clf: ClassifierSpec,
                                 seed: int = 0) -> ClassifierModel:
    if clf.mode != "audiovisual":
        raise ConfigError("audiovisual classifier mode must be audiovisual")
    return _build(ckpt_path, clf, seed)


def random_classifier(pre_spec: ModelSpec, clf: ClassifierSpec,
                      seed: int = 0) -> ClassifierModel:
    """Same architecture, no pretrained weights (control condition)."""
    return ClassifierModel(pre_spec, clf, seed=seed)


def load_classifier(path: str) -> ClassifierModel:
    ckpt = engine.load_checkpoint(path)
    if ckpt["model"].get("kind") != "classifier":
        raise CheckpointError(f"{path} is not a classifier checkpoint")
    model = ClassifierModel(ModelSpec.from_dict(ckpt["model"]["pretrain"]),
                            ClassifierSpec.from_dict(ckpt["model"]["classifier"]))
    engine.restore_into(model.store, ckpt["tensors"])
    return model


# ---------------------------------------------------------------------------
# losses, labels, metrics
# ---------------------------------------------------------------------------

def collate_labels(labels: list, head: str, num_classes: int,
                   smoothing: float = 0.0) -> np.ndarray:
    """Label dicts -> (B, K) soft targets for one head.

    Integer labels become (smoothed) one-hots; tuple labels become multi-hot
    distributions normalized to sum 1.
    """
    rows = []
    for i, lab in enumerate(labels):
        if head not in lab:
            raise InvalidInput(f"sample {i} has no label for head {head!r}")
        rows.append(lab[head])
    if any(isinstance(r, (tuple, list, set, frozenset)) for r in rows):
        out = np.zeros((len(rows), num_classes))
        for i, r in enumerate(rows):
            idx = sorted(r) if isinstance(r, (tuple, list, set, frozenset)) else [r]
            if not idx:
                raise InvalidInput(f"sample {i}: empty multilabel set")
            out[i, np.asarray(idx)] = 1.0 / len(idx)
        return out
    return augment.label_smooth(np.asarray(rows), num_classes, smoothing)


def multi_head_loss(logits: dict, targets: dict):
    """Unweighted sum of per-head soft-target cross-entropies."""
    if set(logits) != set(targets):
        raise InvalidInput(
            f"head mismatch: logits {sorted(logits)} vs labels {sorted(targets)}")
    total = None
    for head in logits:
        lg = logits[head]
        t = np.asarray(targets[head], dtype=lg.data.dtype)
        if t.shape != lg.data.shape:
            raise InvalidInput(
                f"head {head!r}: targets {t.shape} vs logits {lg.data.shape}")
        logp = ag.log_softmax(lg)
        per_example = ag.sum_axis(ag.mul(logp, Tensor(-t)), 1)
        ce = ag.mean_all(per_example)
        total = ce if total is None else ag.add(total, ce)
    return total


def accuracy(logits: np.ndarray, labels: np.ndarray) -> float:
    return float(np.mean(np.argmax(logits, axis=-1) == np.asarray(labels)))


def mean_average_precision(scores: np.ndarray, positives: list) -> float:
    """Macro-averaged AP over classes that have at least one positive."""
    scores = np.asarray(scores)
    n, k = scores.shape
    hot = np.zeros((n, k), dtype=bool)
    for i, pos in enumerate(positives):
        idx = list(pos) if isinstance(pos, (tuple, list, set, frozenset)) else [pos]
        hot[i, np.asarray(idx, dtype=int)] = True
    aps = []
    for c in range(k):
        npos = int(hot[:, c].sum())
        if npos == 0:
            continue
        order = np.argsort(-scores[:, c], kind="stable")
        rel = hot[order, c]
        hits = np.cumsum(rel)
        prec = hits / np.arange(1, n + 1)
        aps.append(float(prec[rel].sum() / npos))
    if not aps:
        raise InvalidInput("no positive labels; mAP undefined")
    return float(np.mean(aps))


def compute_metrics(logits: dict, labels: list, heads) -> dict:
    """Per-head top-1 (or mAP for multilabel), plus action accuracy when the
    verb and noun heads are both present."""
    out = {}
    argmaxes = {}
    for head, num_classes in heads:
        raw = [lab.get(head) for lab in labels]
        if any(r is None for r in raw):
            raise InvalidInput(f"missing label for head {head!r}")
        if any(isinstance(r, (tuple, list, set, frozenset)) for r in raw):
            out[f"{head}_map"] = mean_average_precision(logits[head], raw)
        else:
            idx = np.asarray(raw)
            argmaxes[head] = (np.argmax(logits[head], axis=-1), idx)
            out[f"{head}_top1"] = accuracy(logits[head], idx)
    if "verb" in argmaxes and "noun" in argmaxes:
        (pv, tv), (pn, tn) = argmaxes["verb"], argmaxes["noun"]
        out["action_top1"] = float(np.mean((pv == tv) & (pn == tn)))
    return out


# ---------------------------------------------------------------------------
# multi-view evaluation
# ---------------------------------------------------------------------------

def _view_clip(clip: np.ndarray, count: int, view: int, views: int) -> np.ndarray:
    """Temporally strided window `view` of `views` from a (..., T, H, W, 3) clip."""
    t = clip.shape[-4]
    if t == count:
        return clip
    if t < count:
        # too short: loop circularly; every view coincides
        return np.take(clip, np.arange(count) % t, axis=-4)
    stride = max(1, t // count)
    span = stride * (count - 1) + 1
    if views == 1:
        start = (t - span) // 2
    else:
        start = int(round(view * (t - span) / (views - 1)))
    idx = start + stride * np.arange(count)
    return np.take(clip, idx, axis=-4)


def multiview_logits(clf: ClassifierModel, arrays: dict, views: int = 1) -> dict:
    """Average per-view logits (softmax scores in multilabel mode).

    Views differ only in the temporal crop of the video; audio is shared.
    Video inputs already at the model's frame count make all views coincide.
    """
    if views < 1:
        raise InvalidInput("views must be >= 1")
    count = clf.video_shape[0]
    needs_views = "video" in arrays and views > 1
    acc = None
    for v in range(views if needs_views else 1):
        view_arrays = dict(arrays)
        if "video" in arrays:
            view_arrays["video"] = _view_clip(np.asarray(arrays["video"]),
                                              count, v, views if needs_views else 1)
        with ag.no_grad():
            out = clf.forward(view_arrays, training=False)
        scores = {}
        for h, lg in out.items():
            val = lg.data
            if clf.clf.multilabel:
                e = np.exp(val - val.max(axis=-1, keepdims=True))
                val = e / e.sum(axis=-1, keepdims=True)
            scores[h] = np.asarray(val, dtype=np.float64)
        if acc is None:
            acc = scores
        else:
            acc = {h: acc[h] + scores[h] for h in acc}
    n = views if needs_views else 1
    return {h: a / n for h, a in acc.items()}


# ---------------------------------------------------------------------------
# linear probing
# ---------------------------------------------------------------------------

def extract_features(model, dataset, batch_size: int = 16):
    """Frozen-encoder features: per-modality mean-pooled tokens, concatenated.

    Returns (features (N, D) float64, labels list of dicts).
    """
    feats = []
    labels = []
    for batch in data_mod.make_batches(dataset, batch_size, shuffle=False):
        arrays = {m: batch[m] for m in model.spec.modalities if m in batch}
        with ag.no_grad():
            f = model.encode_features(arrays)
        order = [m for m in ("audio", "video") if m in f]
        feats.append(np.concatenate([np.asarray(f[m].data, dtype=np.float64)
                                     for m in order], axis=-1))
        labels.extend(batch["labels"])
    return np.concatenate(feats), labels


def _softmax_probe(x_train, y_train, num_classes, lr=0.1, steps=500):
    """Full-batch multinomial logistic regression; deterministic, convex."""
    n, d = x_train.shape
    w = np.zeros((d, num_classes))
    b = np.zeros(num_classes)
    onehot = np.zeros((n, num_classes))
    onehot[np.arange(n), y_train] = 1.0
    mw = np.zeros_like(w)
    mb = np.zeros_like(b)
    for _ in range(steps):
        z = x_train @ w + b
        z -= z.max(axis=1, keepdims=True)
        p = np.exp(z)
        p /= p.sum(axis=1, keepdims=True)
        g = (p - onehot) / n
        gw = x_train.T @ g
        gb = g.sum(axis=0)
        mw = 0.9 * mw + gw
        mb = 0.9 * mb + gb
        w -= lr * mw
        b -= lr * mb
    return w, b


def linear_probe(model, train_dataset, eval_dataset, num_classes: int,
                 head: str = "label", batch_size: int = 16,
                 lr: float = 0.1, steps: int = 500) -> dict:
    """Train only a linear head on frozen-encoder features.

    Returns train and eval top-1 accuracy. Feature extraction runs once, so
    the frozen-encoder contract (bit-identical features across epochs) holds
    by construction.
    """
    x_train, lab_train = extract_features(model, train_dataset, batch_size)
    y_train = np.asarray([lab[head] for lab in lab_train])
    mu = x_train.mean(axis=0)
    sd = x_train.std(axis=0) + 1e-8
    x_train = (x_train - mu) / sd
    w, b = _softmax_probe(x_train, y_train, num_classes, lr=lr, steps=steps)
    out = {"train_top1": accuracy(x_train @ w + b, y_train)}
    if eval_dataset is not None:
        x_eval, lab_eval = extract_features(model, eval_dataset, batch_size)
        y_eval = np.asarray([lab[head] for lab in lab_eval])
        x_eval = (x_eval - mu) / sd
        out["eval_top1"] = accuracy(x_eval @ w + b, y_eval)
    return out
