"""Video frontend: frame sampling, RGB normalization, tubelet tokenization.

Clips are (T, H, W, 3) RGB grids normalized to [-1, 1]. Tokenization cuts the
clip into spatio-temporal tubelets (2 frames x 16 x 16 pixels by default),
each flattened to 2*16*16*3 = 1536 values, ordered time-major then row-major
spatially. Patch-internal value order is (t, h, w, channel).
"""

import numpy as np

from .errors import InvalidInput, ShapeError
from .tokens import TokenSequence, grid_coords

TUBELET = (2, 16, 16)


def normalize_rgb(raw: np.ndarray) -> np.ndarray:
    """Map uint8-range RGB values [0, 255] to [-1, 1] via v/127.5 - 1."""
    x = np.asarray(raw, dtype=np.float64)
    if x.size and (x.min() < 0 or x.max() > 255):
        raise InvalidInput("RGB values outside [0, 255]")
    return x / 127.5 - 1.0


def denormalize_rgb(clip: np.ndarray) -> np.ndarray:
    """Inverse of normalize_rgb, back to the [0, 255] range (float)."""
    return (np.asarray(clip, dtype=np.float64) + 1.0) * 127.5


def sample_frames(video: np.ndarray, count: int, mode: str = "random", rng=None) -> np.ndarray:
    """Pick `count` frames at uniform stride; videos too short loop circularly.

    mode "center" places the sampling window symmetrically; mode "random"
    draws the start offset uniformly. The stride is max(1, T // count).
    """
    v = np.asarray(video)
    if count <= 0:
        raise InvalidInput("frame count must be positive")
    if mode not in ("random", "center"):
        raise InvalidInput(f"unknown sampling mode: {mode!r}")
    T = v.shape[0]
    if T < 1:
        raise InvalidInput("video has no frames")
    if count > T:
        # circular looping; start 0 in center mode so short clips are stable
        start = 0 if mode == "center" else int(rng.integers(0, T))
        idx = (start + np.arange(count)) % T
        return v[idx]
    stride = max(1, T // count)
    span = stride * (count - 1) + 1
    if mode == "center":
        start = (T - span) // 2
    else:
        start = int(rng.integers(0, T - span + 1))
    return v[start : start + span : stride]


def tubelet_tokenize(clip: np.ndarray, tubelet=TUBELET) -> TokenSequence:
    """Cut a (..., T, H, W, 3) clip into flattened tubelets.

    Returns n = (T/tt)*(H/th)*(W/tw) patches of tt*th*tw*3 values carrying
    (t, h, w) grid coordinates.
    """
    c = np.asarray(clip)
    tt, th, tw = tubelet
    if c.ndim < 4 or c.shape[-1] != 3:
        raise ShapeError(f"expected (..., T, H, W, 3) clip, got shape {c.shape}")
    T, H, W = c.shape[-4], c.shape[-3], c.shape[-2]
    if T % tt or H % th or W % tw:
        raise ShapeError(f"clip {T}x{H}x{W} not divisible by tubelet {tt}x{th}x{tw}")
    lead = c.shape[:-4]
    g = c.reshape(lead + (T // tt, tt, H // th, th, W // tw, tw, 3))
    # (..., T/tt, H/th, W/tw, tt, th, tw, 3)
    g = np.moveaxis(g, (-6, -4), (-4, -3))
    n = (T // tt) * (H // th) * (W // tw)
    patches = g.reshape(lead + (n, tt * th * tw * 3))
    pos = grid_coords((T // tt, H // th, W // tw))
    return TokenSequence(np.ascontiguousarray(patches), pos, "video")


def tubelet_untokenize(patches: np.ndarray, clip_shape, tubelet=TUBELET) -> np.ndarray:
    """Inverse of tubelet_tokenize for the trailing (n, width) axes."""
    p = np.asarray(patches)
    tt, th, tw = tubelet
    T, H, W = clip_shape
    lead = p.shape[:-2]
    g = p.reshape(lead + (T // tt, H // th, W // tw, tt, th, tw, 3))
    g = np.moveaxis(g, (-4, -3), (-6, -4))
    return np.ascontiguousarray(g.reshape(lead + (T, H, W, 3)))
