"""Pretraining model: frontends + fusion encoder + decoder + objectives."""

from dataclasses import dataclass, field

import numpy as np

from . import autograd as ag
from . import masking
from .backbone import (DEC_BASE, VIT_BASE, FusionEncoder, FusionSpec,
                       TransformerConfig)
from .errors import ConfigError, InvalidInput
from .layers import ParamStore, sinusoid_positions
from .objectives import (Decoder, inpainting_loss, joint_reconstruction_loss,
                         patch_targets)
from .tokens import grid_coords


@dataclass(frozen=True)
class ModelSpec:
    """Everything needed to rebuild a model from a checkpoint manifest."""

    modalities: tuple = ("audio", "video")
    audio_grid: tuple = (800, 128)  # spectrogram cells (time frames, mel bins)
    audio_patch: tuple = (16, 16)
    video_shape: tuple = (16, 224, 224)  # frames, height, width
    video_tubelet: tuple = (2, 16, 16)
    enc: TransformerConfig = VIT_BASE
    dec: TransformerConfig = DEC_BASE
    fusion: FusionSpec = field(default_factory=FusionSpec)
    alpha_audio: float = 0.5
    alpha_video: float = 0.9
    standardize_targets: bool = False
    dtype: str = "float32"

    def __post_init__(self):
        for m in self.modalities:
            if m not in ("audio", "video"):
                raise ConfigError(f"unknown modality {m!r}")
        if not self.modalities:
            raise ConfigError("at least one modality is required")
        if self.audio_grid[0] % self.audio_patch[0] or self.audio_grid[1] % self.audio_patch[1]:
            raise ConfigError(f"audio grid {self.audio_grid} not divisible by patch {self.audio_patch}")
        T, H, W = self.video_shape
        tt, th, tw = self.video_tubelet
        if T % tt or H % th or W % tw:
            raise ConfigError(f"video shape {self.video_shape} not divisible by tubelet {self.video_tubelet}")

    def token_grid(self, modality: str) -> tuple:
        if modality == "audio":
            return (self.audio_grid[0] // self.audio_patch[0],
                    self.audio_grid[1] // self.audio_patch[1])
        T, H, W = self.video_shape
        tt, th, tw = self.video_tubelet
        return (T // tt, H // th, W // tw)

    def n_tokens(self, modality: str) -> int:
        return int(np.prod(self.token_grid(modality)))

    def patch_width(self, modality: str) -> int:
        if modality == "audio":
            return self.audio_patch[0] * self.audio_patch[1]
        tt, th, tw = self.video_tubelet
        return tt * th * tw * 3

    def alpha(self, modality: str) -> float:
        return self.alpha_audio if modality == "audio" else self.alpha_video

    def to_dict(self) -> dict:
        return {
            "modalities": list(self.modalities),
            "audio_grid": list(self.audio_grid),
            "audio_patch": list(self.audio_patch),
            "video_shape": list(self.video_shape),
            "video_tubelet": list(self.video_tubelet),
            "enc": [self.enc.d, self.enc.layers, self.enc.heads, self.enc.mlp],
            "dec": [self.dec.d, self.dec.layers, self.dec.heads, self.dec.mlp],
            "fusion": [self.fusion.encoder, self.fusion.S, self.fusion.decoder],
            "alpha_audio": self.alpha_audio,
            "alpha_video": self.alpha_video,
            "standardize_targets": self.standardize_targets,
            "dtype": self.dtype,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ModelSpec":
        return cls(
            modalities=tuple(d["modalities"]),
            audio_grid=tuple(d["audio_grid"]),
            audio_patch=tuple(d["audio_patch"]),
            video_shape=tuple(d["video_shape"]),
            video_tubelet=tuple(d["video_tubelet"]),
            enc=TransformerConfig(*d["enc"]),
            dec=TransformerConfig(*d["dec"]),
            fusion=FusionSpec(*d["fusion"]),
            alpha_audio=d["alpha_audio"],
            alpha_video=d["alpha_video"],
            standardize_targets=d["standardize_targets"],
            dtype=d["dtype"],
        )


class PretrainModel:
    def __init__(self, spec: ModelSpec, seed: int = 0):
        self.spec = spec
        self.store = ParamStore(seed=seed, dtype=np.dtype(spec.dtype))
        widths = {m: spec.patch_width(m) for m in spec.modalities}
        enc_pos = {m: sinusoid_positions(grid_coords(spec.token_grid(m)), spec.enc.d)
                   for m in spec.modalities}
        dec_pos = {m: sinusoid_positions(grid_coords(spec.token_grid(m)), spec.dec.d)
                   for m in spec.modalities}
        self.encoder = FusionEncoder(self.store, spec.enc, spec.fusion, widths,
                                     enc_pos, spec.modalities)
        self.decoder = Decoder(self.store, spec.dec, spec.fusion.decoder, widths,
                               dec_pos, spec.modalities, spec.enc.d)

    # ------------------------------------------------------------------
    def tokenize(self, batch: dict) -> dict:
        """Patchify raw batch arrays into pre-projection TokenSequences."""
        from .audio import patchify_spectrogram
        from .video import tubelet_tokenize

        out = {}
        for m in self.spec.modalities:
            if m not in batch:
                continue
            if m == "audio":
                seq = patchify_spectrogram(np.asarray(batch["audio"]),
                                           self.spec.audio_patch, validate_bins=False)
            else:
                seq = tubelet_tokenize(np.asarray(batch["video"]), self.spec.video_tubelet)
            if seq.n != self.spec.n_tokens(m):
                raise InvalidInput(f"{m} batch yields {seq.n} tokens, model expects {self.spec.n_tokens(m)}")
            out[m] = seq
        if not out:
            raise InvalidInput("batch contains none of the model's modalities")
        return out

    def make_plans(self, rng: np.random.Generator, alpha_override: dict = None) -> dict:
        alphas = {m: self.spec.alpha(m) for m in self.spec.modalities}
        if alpha_override:
            alphas.update(alpha_override)
        plans = {}
        for m in self.spec.modalities:
            a = alphas[m]
            n = self.spec.n_tokens(m)
            plans[m] = masking.make_masking_plan(n, a, rng) if a > 0 else masking.full_plan(n)
        return plans

    def targets(self, batch: dict):
        return patch_targets(batch.get("audio"), batch.get("video"),
                             standardize=self.spec.standardize_targets,
                             audio_patch=self.spec.audio_patch,
                             tubelet=self.spec.video_tubelet)

    def encode_masked(self, patches: dict, plans: dict) -> dict:
        seqs = {}
        for m, seq in patches.items():
            projected = self.encoder.project_tokens(seq)
            seqs[m] = masking.apply_mask(projected, plans[m])
        return self.encoder.encode(seqs)

    def _unshuffled(self, enc_out: dict, plans: dict) -> dict:
        z = {}
        for m, e in enc_out.items():
            emb = self.decoder.embed[m](e)
            z[m] = masking.unshuffle(emb, plans[m], self.decoder.mask_token[m],
                                     self.decoder.positions[m])
        return z

    # ------------------------------------------------------------------
    def forward_joint(self, batch: dict, plans: dict):
        """Joint-reconstruction loss on one batch; returns (total, parts)."""
        patches = self.tokenize(batch)
        targets = self.targets(batch)
        enc_out = self.encode_masked(patches, plans)
        z = self._unshuffled(enc_out, plans)
        return joint_reconstruction_loss(z, targets, plans, self.decoder, self.spec.fusion)

    def forward_inpaint(self, batch: dict, plans: dict, directions, rng: np.random.Generator):
        """Modality-inpainting loss; each direction encodes its source alone."""
        patches = self.tokenize(batch)
        targets = self.targets(batch)
        from .objectives import DIRECTIONS
        sources = []
        for name in directions:
            if name not in DIRECTIONS:
                raise InvalidInput(f"unknown inpainting direction {name!r}")
            src = DIRECTIONS[name][1]
            if src not in sources:
                sources.append(src)
        enc_out = {}
        for src in sources:
            projected = self.encoder.project_tokens(patches[src])
            seq = masking.apply_mask(projected, plans[src])
            enc_out[src] = self.encoder.encode({src: seq})[src]
        return inpainting_loss(enc_out, targets, plans, self.decoder, directions,
                               rng, self.spec.fusion)

    def predict_patches(self, batch: dict, plans: dict) -> dict:
        """Full-length decoder predictions per modality (for reconstruction)."""
        patches = self.tokenize(batch)
        enc_out = self.encode_masked(patches, plans)
        z = self._unshuffled(enc_out, plans)
        return self.decoder.decode(z)

    def encode_features(self, batch: dict) -> dict:
        """Unmasked per-modality encodings, mean-pooled to one vector each."""
        patches = self.tokenize(batch)
        seqs = {m: self.encoder.project_tokens(seq) for m, seq in patches.items()}
        enc_out = self.encoder.encode(seqs)
        return {m: ag.mean_axis(e, e.data.ndim - 2) for m, e in enc_out.items()}
