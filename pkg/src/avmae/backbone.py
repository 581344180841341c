"""Token projection, positional embedding, and the four encoder fusion variants.

Variants (applied to post-masking token sequences):
  early    - concatenate modalities, one transformer stack, split outputs
  separate - one stack per modality, disjoint parameters
  shared   - one parameter set applied to each modality independently
  mid      - L-S per-modality layers, then concatenation, then S joint layers

No class token and no attention masking anywhere; modality identity enters
only through the distinct positional tables and projections.
"""

from dataclasses import dataclass

import numpy as np

from . import autograd as ag
from .autograd import Tensor
from .errors import ConfigError, InvalidInput, ShapeError
from .layers import LayerNorm, Linear, ParamStore, TransformerBlock
from .tokens import TokenSequence

ENCODER_VARIANTS = ("early", "separate", "shared", "mid")
DECODER_VARIANTS = ("early", "separate", "shared")


@dataclass(frozen=True)
class TransformerConfig:
    d: int
    layers: int
    heads: int
    mlp: int

    def __post_init__(self):
        if self.layers < 1:
            raise ConfigError("transformer needs at least one layer")
        if self.d % self.heads:
            raise ConfigError(f"hidden size {self.d} not divisible by {self.heads} heads")


# standard ViT encoder configurations and the matching decoders
VIT_BASE = TransformerConfig(768, 12, 12, 3072)
VIT_LARGE = TransformerConfig(1024, 24, 16, 4096)
DEC_BASE = TransformerConfig(384, 4, 6, 1536)
DEC_LARGE = TransformerConfig(512, 4, 8, 2048)


@dataclass(frozen=True)
class FusionSpec:
    encoder: str = "mid"
    S: int = 2
    decoder: str = "shared"

    def __post_init__(self):
        if self.encoder not in ENCODER_VARIANTS:
            raise ConfigError(f"unknown encoder variant {self.encoder!r}; choose from {ENCODER_VARIANTS}")
        if self.decoder not in DECODER_VARIANTS:
            raise ConfigError(f"unknown decoder variant {self.decoder!r}; choose from {DECODER_VARIANTS}")
        if self.encoder == "mid" and self.S < 1:
            raise ConfigError("mid fusion needs S >= 1 shared layers")


def _run(x: Tensor, blocks) -> Tensor:
    for b in blocks:
        x = b(x)
    return x


class FusionEncoder:
    """Projection + positional embedding + one of the four fusion stacks."""

    def __init__(self, store: ParamStore, cfg: TransformerConfig, spec: FusionSpec,
                 patch_widths: dict, positions: dict, modalities=("audio", "video")):
        self.cfg = cfg
        self.spec = spec
        self.modalities = tuple(modalities)
        self.positions = {m: np.asarray(positions[m]) for m in self.modalities}
        self.proj = {m: Linear(store, f"enc.proj.{m}", patch_widths[m], cfg.d)
                     for m in self.modalities}
        L = cfg.layers

        def block(name, i):
            return TransformerBlock(store, f"{name}.{i}", cfg.d, cfg.heads, cfg.mlp)

        v = spec.encoder
        if v == "early":
            self.joint = [block("enc.joint", i) for i in range(L)]
            self.norms = {"joint": LayerNorm(store, "enc.norm.joint", cfg.d)}
        elif v == "separate":
            self.streams = {m: [block(f"enc.{m}", i) for i in range(L)] for m in self.modalities}
            self.norms = {m: LayerNorm(store, f"enc.norm.{m}", cfg.d) for m in self.modalities}
        elif v == "shared":
            self.shared = [block("enc.shared", i) for i in range(L)]
            self.norms = {"shared": LayerNorm(store, "enc.norm.shared", cfg.d)}
        else:  # mid
            if spec.S > L:
                raise ConfigError(f"mid fusion S={spec.S} exceeds depth L={L}")
            self.streams = {m: [block(f"enc.{m}", i) for i in range(L - spec.S)]
                            for m in self.modalities}
            self.joint = [block("enc.joint", i) for i in range(L - spec.S, L)]
            self.norms = {"joint": LayerNorm(store, "enc.norm.joint", cfg.d)}

    def project_tokens(self, patches: TokenSequence) -> TokenSequence:
        """Linear patch projection plus the encoder positional table."""
        m = patches.modality
        if m not in self.proj:
            raise InvalidInput(f"model has no {m!r} stream")
        table = self.positions[m]
        if patches.n != table.shape[0]:
            raise ShapeError(f"{m}: {patches.n} patches but position table has {table.shape[0]} rows")
        emb = patches.embeddings
        if not isinstance(emb, Tensor):
            emb = Tensor(np.asarray(emb, dtype=self.proj[m].w.data.dtype))
        x = self.proj[m](emb)
        pos = Tensor(table.astype(x.data.dtype, copy=False))
        return TokenSequence(ag.add(x, pos), patches.positions, m)

    def encode(self, seqs: dict) -> dict:
        """Run the fusion stack; returns per-modality output Tensors.

        seqs maps modality -> post-masking TokenSequence. Sequence lengths are
        preserved per modality for every variant.
        """
        order = [m for m in self.modalities if m in seqs]
        if not order:
            raise InvalidInput("encode() needs at least one modality")
        xs = {m: seqs[m].embeddings for m in order}
        v = self.spec.encoder

        if v == "separate":
            return {m: self.norms[m](_run(xs[m], self.streams[m])) for m in order}
        if v == "shared":
            return {m: self.norms["shared"](_run(xs[m], self.shared)) for m in order}
        if v == "mid":
            xs = {m: _run(xs[m], self.streams[m]) for m in order}
        joint_in = [xs[m] for m in order]
        x = joint_in[0] if len(joint_in) == 1 else ag.concat(joint_in, axis=-2)
        x = self.norms["joint"](_run(x, self.joint))
        out = {}
        off = 0
        for m in order:
            n = xs[m].data.shape[-2]
            out[m] = ag.slice_axis(x, x.data.ndim - 2, off, off + n)
            off += n
        return out
