"""Export reconstruction image grids: original / masked / reconstructed.

Each modality gets one PNG with three rows. Row 1 renders the input, row 2
grays out the masked token slots, and row 3 renders the decoder prediction
with the original patches pasted back at the unmasked slots, so unmasked
pixels in row 3 match row 1 bit-exactly.
"""

import os

import numpy as np
from PIL import Image

from .audio import unpatchify_spectrogram
from .errors import InvalidInput
from .objectives import STANDARDIZE_EPS
from .video import denormalize_rgb, tubelet_untokenize

GRAY = 128


def _audio_to_u8(grid: np.ndarray, vmin: float, vmax: float) -> np.ndarray:
    # one linear value map shared by all three rows; bins vertical, time horizontal
    span = (vmax - vmin) or 1.0
    u = np.clip(np.round((grid - vmin) / span * 255.0), 0, 255).astype(np.uint8)
    return np.ascontiguousarray(u.T)


def _video_to_u8(clip: np.ndarray) -> np.ndarray:
    u = np.clip(np.round(denormalize_rgb(clip)), 0, 255).astype(np.uint8)
    return np.concatenate(list(u), axis=1)  # frames side by side


def _paint_audio_slots(img: np.ndarray, slots, spec):
    pt, pf = spec.audio_patch
    grid_f = spec.token_grid("audio")[1]
    for j in slots:
        jt, jb = divmod(int(j), grid_f)
        img[jb * pf:(jb + 1) * pf, jt * pt:(jt + 1) * pt] = GRAY


def _paint_video_slots(img: np.ndarray, slots, spec):
    tt, th, tw = spec.video_tubelet
    _, gh, gw = spec.token_grid("video")
    width = spec.video_shape[2]
    for j in slots:
        jt, rem = divmod(int(j), gh * gw)
        jh, jw = divmod(rem, gw)
        for f in range(jt * tt, (jt + 1) * tt):
            img[jh * th:(jh + 1) * th,
                f * width + jw * tw:f * width + (jw + 1) * tw] = GRAY


def export_reconstructions(model, sample: dict, out_dir: str,
                           rng: np.random.Generator,
                           alpha_override: dict = None) -> list:
    """Write one three-row PNG per modality; returns the file paths."""
    spec = model.spec
    missing = [m for m in spec.modalities if m not in sample]
    if missing:
        raise InvalidInput(f"sample lacks the model's {missing} input")
    os.makedirs(out_dir, exist_ok=True)

    arrays = {m: np.asarray(sample[m], dtype=np.float64)[None]
              for m in spec.modalities}
    plans = model.make_plans(rng, alpha_override)
    seqs = model.tokenize(arrays)
    preds = model.predict_patches(arrays, plans)

    paths = []
    for m in spec.modalities:
        orig = np.asarray(seqs[m].embeddings[0], dtype=np.float64)
        pred = np.asarray(preds[m].data[0], dtype=np.float64)
        if spec.standardize_targets:
            # predictions live in per-patch standardized space; map back
            mu = orig.mean(axis=-1, keepdims=True)
            sd = np.sqrt(orig.var(axis=-1, keepdims=True) + STANDARDIZE_EPS)
            pred = pred * sd + mu
        kept = plans[m].kept_indices
        pred[kept] = orig[kept]  # show the original input at unmasked patches

        if m == "audio":
            grid = unpatchify_spectrogram(orig, spec.audio_grid, spec.audio_patch)
            recon = unpatchify_spectrogram(pred, spec.audio_grid, spec.audio_patch)
            vmin, vmax = float(grid.min()), float(grid.max())
            row1 = _audio_to_u8(grid, vmin, vmax)
            row2 = row1.copy()
            _paint_audio_slots(row2, plans[m].masked_indices, spec)
            row3 = _audio_to_u8(recon, vmin, vmax)
            image = Image.fromarray(np.concatenate([row1, row2, row3], axis=0), "L")
        else:
            clip = tubelet_untokenize(orig, spec.video_shape, spec.video_tubelet)
            recon = tubelet_untokenize(pred, spec.video_shape, spec.video_tubelet)
            row1 = _video_to_u8(clip)
            row2 = row1.copy()
            _paint_video_slots(row2, plans[m].masked_indices, spec)
            row3 = _video_to_u8(recon)
            image = Image.fromarray(np.concatenate([row1, row2, row3], axis=0), "RGB")

        path = os.path.join(out_dir, f"{m}.png")
        image.save(path)
        paths.append(path)
    return paths
