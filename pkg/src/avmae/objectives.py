"""Decoder variants and the two pretraining objectives.

Joint reconstruction: decode unshuffled full-length sequences of both
modalities and take mean squared error over masked rows only, audio and
video terms weighted equally.

Modality inpainting: encode one (masked) modality alone, append the other
modality's mask token k = n_tgt - u_src times with target-side decoder
positions, decode, and score the k mask rows against the target patches.
"""

import warnings
from dataclasses import dataclass

import numpy as np

from . import autograd as ag
from .autograd import Tensor
from .backbone import FusionSpec, TransformerConfig
from .errors import ConfigError, InvalidInput, ShapeError
from .layers import LayerNorm, Linear, ParamStore, TransformerBlock
from .audio import patchify_spectrogram
from .video import tubelet_tokenize

STANDARDIZE_EPS = 1e-6

# direction name -> (target modality, source modality)
DIRECTIONS = {
    "video_from_audio": ("video", "audio"),
    "audio_from_video": ("audio", "video"),
}


@dataclass
class PatchTargets:
    audio: object = None  # ndarray (..., n_a, 256)
    video: object = None  # ndarray (..., n_v, 1536)
    standardized: bool = False

    def get(self, modality: str):
        x = getattr(self, modality)
        if x is None:
            raise InvalidInput(f"no {modality} targets present")
        return x


def _standardize_rows(x: np.ndarray) -> np.ndarray:
    mu = x.mean(axis=-1, keepdims=True)
    var = x.var(axis=-1, keepdims=True)
    return (x - mu) / np.sqrt(var + STANDARDIZE_EPS)


def patch_targets(raw_audio_spec=None, raw_clip=None, standardize: bool = False,
                  audio_patch=(16, 16), tubelet=(2, 16, 16)) -> PatchTargets:
    """Patchified ground truth in tokenizer row order, optionally row-standardized."""
    out = PatchTargets(standardized=standardize)
    if raw_audio_spec is not None:
        a = patchify_spectrogram(np.asarray(raw_audio_spec), audio_patch, validate_bins=False).embeddings
        out.audio = _standardize_rows(a) if standardize else a
    if raw_clip is not None:
        v = tubelet_tokenize(np.asarray(raw_clip), tubelet).embeddings
        out.video = _standardize_rows(v) if standardize else v
    return out


class Decoder:
    """Per-modality embed/mask-token/positions/prediction around a block stack.

    variant early: one stack over the concatenated modalities; separate: one
    stack per modality; shared: one stack applied per modality.
    """

    def __init__(self, store: ParamStore, cfg: TransformerConfig, variant: str,
                 patch_widths: dict, positions: dict, modalities, d_enc: int):
        if variant not in ("early", "separate", "shared"):
            raise ConfigError(f"unknown decoder variant {variant!r}")
        self.cfg = cfg
        self.variant = variant
        self.modalities = tuple(modalities)
        self.positions = {m: np.asarray(positions[m]) for m in self.modalities}
        self.embed = {m: Linear(store, f"dec.embed.{m}", d_enc, cfg.d) for m in self.modalities}
        self.mask_token = {m: store.normal(f"dec.mask_token.{m}", (cfg.d,), 0.02)
                           for m in self.modalities}

        def block(name, i):
            return TransformerBlock(store, f"{name}.{i}", cfg.d, cfg.heads, cfg.mlp)

        if variant == "early":
            self.joint = [block("dec.joint", i) for i in range(cfg.layers)]
            self.norms = {"joint": LayerNorm(store, "dec.norm.joint", cfg.d)}
        elif variant == "separate":
            self.streams = {m: [block(f"dec.{m}", i) for i in range(cfg.layers)]
                            for m in self.modalities}
            self.norms = {m: LayerNorm(store, f"dec.norm.{m}", cfg.d) for m in self.modalities}
        else:
            self.shared = [block("dec.shared", i) for i in range(cfg.layers)]
            self.norms = {"shared": LayerNorm(store, "dec.norm.shared", cfg.d)}

        self.pred = {m: Linear(store, f"dec.pred.{m}", cfg.d, patch_widths[m])
                     for m in self.modalities}

    def _stack_for(self, modality: str):
        if self.variant == "early":
            return self.joint, self.norms["joint"]
        if self.variant == "separate":
            return self.streams[modality], self.norms[modality]
        return self.shared, self.norms["shared"]

    def forward_stack(self, seq: Tensor, modality: str) -> Tensor:
        """Run one sequence through the stack appropriate for `modality`."""
        blocks, norm = self._stack_for(modality)
        x = seq
        for b in blocks:
            x = b(x)
        return norm(x)

    def decode(self, z: dict) -> dict:
        """Full-sequence predictions per modality, shape (..., n_m, width_m)."""
        order = [m for m in self.modalities if m in z]
        if self.variant == "early" and len(order) > 1:
            x = ag.concat([z[m] for m in order], axis=-2)
            x = self.forward_stack(x, order[0])
            out = {}
            off = 0
            for m in order:
                n = z[m].data.shape[-2]
                h = ag.slice_axis(x, x.data.ndim - 2, off, off + n)
                out[m] = self.pred[m](h)
                off += n
            return out
        return {m: self.pred[m](self.forward_stack(z[m], m)) for m in order}


def joint_reconstruction_loss(z: dict, targets: PatchTargets, plans: dict,
                              decoder: Decoder, fusion: FusionSpec):
    """Masked-row MSE summed over modalities; returns (total, per-modality).

    z holds unshuffled full-length decoder-width sequences. Per modality the
    loss is the mean over masked rows of the per-value squared error, so the
    value is invariant to how many rows are masked at fixed per-row error.
    """
    if fusion.encoder == "separate" and fusion.decoder == "separate":
        warnings.warn(
            "encoder=separate with decoder=separate couples nothing across "
            "modalities; this trains two independent single-modality models",
            RuntimeWarning,
        )
    preds = decoder.decode(z)
    parts = {}
    total = None
    for m, pred in preds.items():
        plan = plans[m]
        if pred.data.shape[-2] != plan.n:
            raise ShapeError(f"{m}: decoded {pred.data.shape[-2]} rows, plan has n={plan.n}")
        if plan.num_masked == 0:
            parts[m] = Tensor(np.zeros((), dtype=pred.data.dtype))
            continue
        axis = pred.data.ndim - 2
        p = ag.take(pred, plan.masked_indices, axis=axis)
        t = np.take(np.asarray(targets.get(m), dtype=pred.data.dtype), plan.masked_indices, axis=-2)
        d = ag.sub(p, Tensor(t))
        parts[m] = ag.mean_all(ag.mul(d, d))
    for m in parts:
        total = parts[m] if total is None else ag.add(total, parts[m])
    return total, parts


def build_inpainting_sequence(e_src: Tensor, src_modality: str, target_modality: str,
                              plans: dict, mask_token: Tensor, dec_positions: dict,
                              rng: np.random.Generator, encoder_variant: str = "early"):
    """Assemble z = [e_src || mask_token x k] with decoder positions.

    e_src is the source modality's encoded (and decoder-embedded) unmasked
    tokens; they keep their own decoder positions. The k = n_tgt - u_src mask
    slots get target-side decoder positions for k target rows drawn from the
    target plan's masked set first (all of it, plus a random draw from the
    kept set, when k exceeds the masked count). Returns (sequence, rows).
    """
    if encoder_variant in ("separate", "shared"):
        raise ConfigError(
            f"inpainting requires cross-modal attention in the encoder; "
            f"variant {encoder_variant!r} has no joint layers")
    src_plan = plans[src_modality]
    tgt_plan = plans[target_modality]
    u_src = e_src.data.shape[-2]
    if u_src != src_plan.u:
        raise ShapeError(f"encoded {src_modality} has {u_src} rows, plan keeps {src_plan.u}")
    n_tgt = tgt_plan.n
    k = n_tgt - u_src
    if k <= 0:
        raise ConfigError(
            f"inpainting {target_modality} from {src_modality} needs "
            f"n_{target_modality} ({n_tgt}) > unmasked {src_modality} count ({u_src}); "
            f"alpha_{src_modality}={src_plan.alpha} is too low for these token counts")

    masked = tgt_plan.masked_indices
    if k <= len(masked):
        rows = np.sort(rng.choice(masked, size=k, replace=False))
    else:
        extra = rng.choice(tgt_plan.kept_indices, size=k - len(masked), replace=False)
        rows = np.sort(np.concatenate([masked, extra]))

    dtype = e_src.data.dtype
    lead = e_src.data.shape[:-2]
    d = mask_token.data.shape[-1]
    src_pos = dec_positions[src_modality][src_plan.kept_indices].astype(dtype, copy=False)
    tgt_pos = dec_positions[target_modality][rows].astype(dtype, copy=False)
    src_part = ag.add(e_src, Tensor(src_pos))
    mask_rows = ag.broadcast_to(ag.reshape(mask_token, (1,) * len(lead) + (1, d)), lead + (k, d))
    tgt_part = ag.add(mask_rows, Tensor(tgt_pos))
    seq = ag.concat([src_part, tgt_part], axis=src_part.data.ndim - 2)
    return seq, rows


def inpainting_loss(enc_out: dict, targets: PatchTargets, plans: dict, decoder: Decoder,
                    directions, rng: np.random.Generator, fusion: FusionSpec):
    """Sum of per-direction masked-row MSE; returns (total, per-direction)."""
    directions = tuple(directions)
    if not directions:
        raise InvalidInput("at least one inpainting direction is required")
    parts = {}
    total = None
    for name in directions:
        if name not in DIRECTIONS:
            raise InvalidInput(f"unknown inpainting direction {name!r}")
        tgt, src = DIRECTIONS[name]
        e = decoder.embed[src](enc_out[src])
        seq, rows = build_inpainting_sequence(
            e, src, tgt, plans, decoder.mask_token[tgt], decoder.positions,
            rng, encoder_variant=fusion.encoder)
        hidden = decoder.forward_stack(seq, tgt)
        n = hidden.data.shape[-2]
        k = len(rows)
        tail = ag.slice_axis(hidden, hidden.data.ndim - 2, n - k, n)
        pred = decoder.pred[tgt](tail)
        t = np.take(np.asarray(targets.get(tgt), dtype=pred.data.dtype), rows, axis=-2)
        diff = ag.sub(pred, Tensor(t))
        parts[name] = ag.mean_all(ag.mul(diff, diff))
        total = parts[name] if total is None else ag.add(total, parts[name])
    return total, parts
