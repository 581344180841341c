"""Finetuning-time augmentation and regularization.

Spectrogram masking fills erased spans with the grid mean so the erased
region is uninformative rather than a fixed sentinel value. Mixup draws one
coefficient per batch and applies the same convex blend, with the same
pairing permutation, to every modality and every label head. Stochastic
depth ramps the drop rate linearly from 0 at the first block to the
configured rate at the last block and is identity at eval time.
"""

import numpy as np

from .errors import InvalidInput


def spec_augment(spec: np.ndarray, rng, time_masks: int = 2,
                 max_time_frac: float = 0.1, freq_masks: int = 2,
                 max_freq_bins: int = 24) -> np.ndarray:
    """Erase random time and frequency spans from one (T, F) spectrogram."""
    spec = np.asarray(spec)
    if spec.ndim != 2:
        raise InvalidInput(f"spec_augment expects (T, F), got {spec.shape}")
    t, f = spec.shape
    max_t = int(np.floor(max_time_frac * t))
    if max_t > t or max_freq_bins > f:
        raise InvalidInput(
            f"mask sizes (time {max_t}, freq {max_freq_bins}) exceed grid {spec.shape}")
    out = spec.copy()
    fill = float(spec.mean())
    for _ in range(time_masks):
        width = int(rng.integers(0, max_t + 1))
        if width == 0:
            continue
        start = int(rng.integers(0, t - width + 1))
        out[start : start + width, :] = fill
    for _ in range(freq_masks):
        width = int(rng.integers(0, max_freq_bins + 1))
        if width == 0:
            continue
        start = int(rng.integers(0, f - width + 1))
        out[:, start : start + width] = fill
    return out


def label_smooth(indices: np.ndarray, num_classes: int, eps: float) -> np.ndarray:
    """Class indices (B,) -> smoothed one-hot targets (B, K) summing to 1."""
    indices = np.asarray(indices)
    if np.any(indices < 0) or np.any(indices >= num_classes):
        raise InvalidInput("label index out of range")
    if not (0.0 <= eps < 1.0):
        raise InvalidInput(f"smoothing must be in [0, 1), got {eps}")
    out = np.full((indices.shape[0], num_classes), eps / num_classes)
    out[np.arange(indices.shape[0]), indices] += 1.0 - eps
    return out


def mixup(arrays: dict, targets: dict, alpha: float, rng):
    """Convex-blend a batch with a shuffled copy of itself.

    arrays: modality -> (B, ...) float array. targets: head -> (B, K) soft
    labels. One lam ~ Beta(alpha, alpha) and one permutation are shared by
    all entries so audio, video, and labels stay aligned.
    """
    if alpha <= 0:
        return arrays, targets
    sizes = {a.shape[0] for a in arrays.values()} | {t.shape[0] for t in targets.values()}
    if len(sizes) != 1:
        raise InvalidInput(f"inconsistent batch sizes: {sorted(sizes)}")
    b = sizes.pop()
    lam = float(rng.beta(alpha, alpha))
    perm = rng.permutation(b)
    mixed_arrays = {m: lam * a + (1.0 - lam) * a[perm] for m, a in arrays.items()}
    mixed_targets = {h: lam * t + (1.0 - lam) * t[perm] for h, t in targets.items()}
    return mixed_arrays, mixed_targets


def stochastic_depth_rates(num_blocks: int, rate: float) -> np.ndarray:
    """Per-block drop rates ramping linearly from 0 to `rate`."""
    if not (0.0 <= rate < 1.0):
        raise InvalidInput(f"drop rate must be in [0, 1), got {rate}")
    if num_blocks == 1:
        return np.array([rate])
    return rate * np.arange(num_blocks) / (num_blocks - 1)


def branch_scales(batch: int, drop_rate: float, rng, training: bool) -> np.ndarray:
    """Per-sample residual-branch scales (B, 1, 1).

    Training: 0 with probability drop_rate, else 1/(1-drop_rate), so the
    expected branch output is unchanged. Eval or rate 0: all ones.
    """
    if not training or drop_rate == 0.0:
        return np.ones((batch, 1, 1))
    keep = (rng.random(batch) >= drop_rate).astype(np.float64)
    return (keep / (1.0 - drop_rate)).reshape(batch, 1, 1)
