"""Token sequences: the currency passed between frontends, masking and models.

A TokenSequence bundles an embedding matrix with per-token grid coordinates
and a modality tag. Frontends produce pre-projection sequences whose width is
the flattened patch size (256 audio, 1536 video); the backbone maps them to
model width d. The embedding array may carry leading batch axes; positions
are shared across the batch (one masking plan per step applies to all rows).
"""

from dataclasses import dataclass

import numpy as np

from .autograd import Tensor
from .errors import InvalidInput


@dataclass
class TokenSequence:
    embeddings: object  # ndarray or autograd.Tensor, shape (..., n, width)
    positions: np.ndarray  # (n, k) grid coordinates, k axes
    modality: str  # "audio" | "video"

    def __post_init__(self):
        if self.modality not in ("audio", "video"):
            raise InvalidInput(f"unknown modality: {self.modality!r}")

    @property
    def n(self) -> int:
        return int(self._data().shape[-2])

    @property
    def width(self) -> int:
        return int(self._data().shape[-1])

    def _data(self):
        return self.embeddings.data if isinstance(self.embeddings, Tensor) else self.embeddings


def grid_coords(shape) -> np.ndarray:
    """Row-major integer coordinates for a token grid, shape (prod(shape), k)."""
    axes = [np.arange(s) for s in shape]
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack([m.ravel() for m in mesh], axis=1).astype(np.float64)
