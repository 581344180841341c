"""Random token masking, and unshuffling mask tokens back in for decoding.

A MaskingPlan partitions {0..n-1} into kept and masked indices with keep
count u = floor((1-alpha)*n). apply_mask drops the masked rows before the
encoder; unshuffle rebuilds the full-length sequence by placing encoded rows
at their kept indices and a learned per-modality mask token everywhere else,
then adds fresh (decoder) positional embeddings to every slot.
"""

from dataclasses import dataclass

import numpy as np

from . import autograd as ag
from .autograd import Tensor
from .errors import InvalidInput, ShapeError
from .tokens import TokenSequence


@dataclass(frozen=True)
class MaskingPlan:
    n: int
    alpha: float
    kept_indices: np.ndarray  # strictly increasing, length u
    masked_indices: np.ndarray  # strictly increasing complement
    seed: object = None  # provenance only

    @property
    def u(self) -> int:
        return len(self.kept_indices)

    @property
    def num_masked(self) -> int:
        return len(self.masked_indices)


def make_masking_plan(n: int, alpha: float, rng: np.random.Generator) -> MaskingPlan:
    """Uniformly random keep-set of size u = floor((1-alpha)*n)."""
    if n < 1:
        raise InvalidInput("token count must be >= 1")
    if not (0.0 <= alpha < 1.0):
        raise InvalidInput(f"masking ratio must be in [0, 1), got {alpha}")
    u = int(np.floor((1.0 - alpha) * n))
    if u < 1:
        raise InvalidInput(f"keep count floor((1-{alpha})*{n}) = 0; lower the ratio")
    perm = rng.permutation(n)
    kept = np.sort(perm[:u]).astype(np.int64)
    masked = np.sort(perm[u:]).astype(np.int64)
    return MaskingPlan(n=n, alpha=float(alpha), kept_indices=kept, masked_indices=masked)


def full_plan(n: int) -> MaskingPlan:
    """Degenerate plan keeping everything (alpha = 0)."""
    return MaskingPlan(n=n, alpha=0.0, kept_indices=np.arange(n, dtype=np.int64),
                       masked_indices=np.arange(0, dtype=np.int64))


def apply_mask(tokens: TokenSequence, plan: MaskingPlan) -> TokenSequence:
    """Keep only plan.kept_indices rows (order preserved), positions carried."""
    if tokens.n != plan.n:
        raise ShapeError(f"plan is for {plan.n} tokens, sequence has {tokens.n}")
    emb = tokens.embeddings
    axis = (emb.data.ndim if isinstance(emb, Tensor) else emb.ndim) - 2
    if isinstance(emb, Tensor):
        kept = ag.take(emb, plan.kept_indices, axis=axis)
    else:
        kept = np.ascontiguousarray(np.take(emb, plan.kept_indices, axis=axis))
    return TokenSequence(kept, tokens.positions[plan.kept_indices], tokens.modality)


def unshuffle(encoded, plan: MaskingPlan, mask_token: Tensor, decoder_positions: np.ndarray):
    """Rebuild the full n-length sequence for the decoder.

    encoded: Tensor (..., u, d); mask_token: Tensor (d,); decoder_positions:
    ndarray (n, d). Output (..., n, d) with encoded row i at kept_indices[i],
    the mask token at every masked slot, and positions added everywhere.
    """
    enc = encoded if isinstance(encoded, Tensor) else Tensor(encoded)
    u = enc.data.shape[-2]
    if u != plan.u:
        raise ShapeError(f"encoded length {u} != plan keep count {plan.u}")
    if decoder_positions.shape[0] != plan.n:
        raise ShapeError("decoder position table length != plan.n")
    d = enc.data.shape[-1]
    lead = enc.data.shape[:-2]
    k = plan.n - u
    if k > 0:
        mask_rows = ag.broadcast_to(ag.reshape(mask_token, (1,) * len(lead) + (1, d)),
                                    lead + (k, d))
        stacked = ag.concat([enc, mask_rows], axis=-2)
    else:
        stacked = enc
    # stacked row j corresponds to grid slot perm[j]; invert to gather per slot
    perm = np.concatenate([plan.kept_indices, plan.masked_indices])
    inv = np.empty(plan.n, dtype=np.int64)
    inv[perm] = np.arange(plan.n)
    out = ag.take(stacked, inv, axis=stacked.data.ndim - 2)
    pos = decoder_positions.astype(enc.data.dtype, copy=False)
    return ag.add(out, Tensor(pos))
