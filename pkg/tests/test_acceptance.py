"""Acceptance gate: eleven numbered checks, one printed PASS/FAIL line each.

Run with `pytest tests/test_acceptance.py -v -s` to see the checklist; the
slow items are 6 (overfit, ~15 s), 5 (dense gradient check, ~20 s) and 7
(probe benefit, several minutes of real pretraining per seed).
"""

import dataclasses
import json
import os

import numpy as np
import pytest
from PIL import Image

from avmae import audio, augment, autograd as ag, cli, data, engine
from avmae import finetune as ft
from avmae import masking, objectives, rng as rngmod, video
from avmae.autograd import Tensor
from avmae.backbone import FusionEncoder, FusionSpec, TransformerConfig
from avmae.errors import ConfigError, CorruptCheckpoint
from avmae.layers import ParamStore, sinusoid_positions
from avmae.model import ModelSpec, PretrainModel
from avmae.objectives import joint_reconstruction_loss
from avmae.tokens import TokenSequence, grid_coords

import oracles


def _report(num: int, desc: str, ok: bool, detail: str = ""):
    line = f"[{'PASS' if ok else 'FAIL'}] criterion {num:2d}: {desc}"
    if detail:
        line += f"  ({detail})"
    print(line)
    assert ok, line


# ---------------------------------------------------------------------------
# shared tiny configurations
# ---------------------------------------------------------------------------

def _micro_spec(dtype: str) -> ModelSpec:
    # 4 audio + 8 video tokens, d=8 everywhere: ~1.5k parameters
    return ModelSpec(
        modalities=("audio", "video"),
        audio_grid=(8, 4), audio_patch=(4, 2),
        video_shape=(2, 4, 4), video_tubelet=(1, 2, 2),
        enc=TransformerConfig(8, 1, 2, 8), dec=TransformerConfig(8, 1, 2, 8),
        fusion=FusionSpec("early", 1, "shared"),
        alpha_audio=0.5, alpha_video=0.6,  # inpaint needs u_video < n_audio
        dtype=dtype)


def _micro_batch(dtype, seed: int) -> dict:
    g = np.random.default_rng(seed)
    return {"audio": g.normal(size=(1, 8, 4)).astype(dtype),
            "video": g.uniform(-1.0, 1.0, size=(1, 2, 4, 4, 3)).astype(dtype)}


def _overfit_spec() -> ModelSpec:
    return ModelSpec(
        modalities=("audio", "video"),
        audio_grid=(32, 8), audio_patch=(8, 4),
        video_shape=(4, 8, 8), video_tubelet=(2, 4, 4),
        enc=TransformerConfig(32, 2, 4, 64), dec=TransformerConfig(16, 1, 4, 32),
        fusion=FusionSpec("mid", 1, "shared"),
        alpha_audio=0.5, alpha_video=0.5)


def _probe_spec() -> ModelSpec:
    # wider audio grid: the class stripes need enough mel bins to separate
    return ModelSpec(
        modalities=("audio", "video"),
        audio_grid=(32, 36), audio_patch=(8, 4),
        video_shape=(4, 8, 8), video_tubelet=(2, 4, 4),
        enc=TransformerConfig(16, 2, 4, 32), dec=TransformerConfig(16, 1, 4, 32),
        fusion=FusionSpec("mid", 1, "shared"),
        alpha_audio=0.5, alpha_video=0.5)


# ---------------------------------------------------------------------------
# 1. token arithmetic
# ---------------------------------------------------------------------------

def test_criterion_01_token_arithmetic():
    wave = rngmod.stream(0, "accept-wave").normal(size=8 * audio.SAMPLE_RATE)
    spec = audio.compute_log_mel(wave)
    audio_tokens = audio.patchify_spectrogram(spec, (16, 16)).n

    clip = rngmod.stream(0, "accept-clip").uniform(-1, 1, size=(16, 224, 224, 3))
    video_tokens = video.tubelet_tokenize(clip, (2, 16, 16)).n

    full = ModelSpec()  # full-scale defaults
    ok = (spec.shape == (800, 128) and audio_tokens == 400 and video_tokens == 1568
          and full.n_tokens("audio") == 400 and full.n_tokens("video") == 1568)
    _report(1, "8 s audio -> 800x128 -> 400 tokens; 16x224x224 clip -> 1568 tubelets",
            ok, f"spectrogram {spec.shape}, {audio_tokens} audio / {video_tokens} video tokens")


# ---------------------------------------------------------------------------
# 2. loss reads masked rows only
# ---------------------------------------------------------------------------

class _RawTargets:
    """Target shim exposing plain per-modality patch arrays."""

    def __init__(self, arrays: dict):
        self.arrays = arrays

    def get(self, m: str) -> np.ndarray:
        return self.arrays[m]


def test_criterion_02_masked_only_loss():
    model = PretrainModel(_micro_spec("float64"), seed=1)
    batch = _micro_batch(np.float64, seed=2)
    targets = model.targets(batch)
    base = {m: np.asarray(targets.get(m)) for m in ("audio", "video")}

    exact = 0
    for s in range(100):
        plans = model.make_plans(rngmod.stream(s, "accept-mask-property"))
        enc = model.encode_masked(model.tokenize(batch), plans)
        z = model._unshuffled(enc, plans)
        loss, _ = joint_reconstruction_loss(z, targets, plans, model.decoder,
                                            model.spec.fusion)
        bumped = {m: np.array(a, copy=True) for m, a in base.items()}
        g = np.random.default_rng(s)
        for m, arr in bumped.items():
            kept = plans[m].kept_indices
            arr[..., kept, :] += 10.0 + g.normal(size=arr[..., kept, :].shape)
        loss_b, _ = joint_reconstruction_loss(z, _RawTargets(bumped), plans,
                                              model.decoder, model.spec.fusion)
        exact += float(loss.data) == float(loss_b.data)

    # sanity: touching a masked row must move the loss
    plans = model.make_plans(rngmod.stream(0, "accept-mask-property"))
    enc = model.encode_masked(model.tokenize(batch), plans)
    z = model._unshuffled(enc, plans)
    loss, _ = joint_reconstruction_loss(z, targets, plans, model.decoder, model.spec.fusion)
    poked = {m: np.array(a, copy=True) for m, a in base.items()}
    poked["audio"][..., plans["audio"].masked_indices[0], :] += 1.0
    moved, _ = joint_reconstruction_loss(z, _RawTargets(poked), plans,
                                         model.decoder, model.spec.fusion)
    ok = exact == 100 and float(moved.data) != float(loss.data)
    _report(2, "perturbing targets at kept rows changes the loss by exactly 0",
            ok, f"{exact}/100 seeds bit-equal, masked-row poke moves the loss")


# ---------------------------------------------------------------------------
# 3. inpainting mask-token counts at full scale
# ---------------------------------------------------------------------------

def test_criterion_03_inpainting_counts():
    rng = rngmod.stream(0, "accept-inpaint-counts")
    plans = {"audio": masking.make_masking_plan(400, 0.5, rng),
             "video": masking.make_masking_plan(1568, 0.9, rng)}
    d = 8
    dec_pos = {"audio": np.zeros((400, d)), "video": np.zeros((1568, d))}
    token = Tensor(np.zeros(d))

    e_audio = Tensor(np.zeros((plans["audio"].u, d)))
    seq_v, rows_v = objectives.build_inpainting_sequence(
        e_audio, "audio", "video", plans, token, dec_pos, rng, "early")

    e_video = Tensor(np.zeros((plans["video"].u, d)))
    seq_a, rows_a = objectives.build_inpainting_sequence(
        e_video, "video", "audio", plans, token, dec_pos, rng, "mid")

    ok = (plans["audio"].u == 200 and plans["video"].u == 156
          and len(rows_v) == 1568 - 200 == 1368
          and seq_v.data.shape == (1568, d)
          and set(rows_v) <= set(plans["video"].masked_indices)
          and len(rows_a) == 400 - 156 == 244
          and seq_a.data.shape == (400, d)
          # 244 > 200 masked slots, so the draw spills into kept ones
          and set(plans["audio"].masked_indices) <= set(rows_a))

    with pytest.raises(ConfigError):
        objectives.build_inpainting_sequence(
            e_audio, "audio", "video", plans, token, dec_pos, rng, "separate")
    with pytest.raises(ConfigError):
        objectives.build_inpainting_sequence(
            e_audio, "audio", "video", plans, token, dec_pos, rng, "shared")
    low = dict(plans)
    low["video"] = masking.make_masking_plan(1568, 0.5, rng)  # u = 784 >= 400
    with pytest.raises(ConfigError):
        e_low = Tensor(np.zeros((low["video"].u, d)))
        objectives.build_inpainting_sequence(
            e_low, "video", "audio", low, token, dec_pos, rng, "early")

    _report(3, "mask-token counts 1368 (video-from-audio) and 244 (audio-from-video)",
            ok, f"u_audio=200 u_video=156, invalid variants and ratios rejected")


# ---------------------------------------------------------------------------
# 4. encoder variant equivalences
# ---------------------------------------------------------------------------

CFG4 = TransformerConfig(d=16, layers=4, heads=2, mlp=32)
GRIDS4 = {"audio": (5, 2), "video": (2, 3, 2)}
WIDTHS4 = {"audio": 12, "video": 24}
N4 = {"audio": 10, "video": 12}


def _encoder4(fusion: FusionSpec, seed: int):
    store = ParamStore(seed=seed, dtype=np.float64)
    pos = {m: sinusoid_positions(grid_coords(GRIDS4[m]), CFG4.d) for m in GRIDS4}
    return store, FusionEncoder(store, CFG4, fusion, WIDTHS4, pos, ("audio", "video"))


def _encode4(enc, seed: int):
    g = np.random.default_rng(seed)
    seqs = {m: TokenSequence(g.normal(size=(2, N4[m], WIDTHS4[m])),
                             grid_coords(GRIDS4[m]), m) for m in N4}
    return enc.encode({m: enc.project_tokens(s) for m, s in seqs.items()})


def test_criterion_04_architecture_equivalences():
    # shared == separate with both stacks tied to the shared weights
    s_store, shared = _encoder4(FusionSpec("shared", 2, "shared"), seed=3)
    p_store, sep = _encoder4(FusionSpec("separate", 2, "shared"), seed=4)
    for name, p in p_store.params.items():
        if name.startswith("enc.audio.") or name.startswith("enc.video."):
            p.data[...] = s_store.params["enc.shared." + name.split(".", 2)[2]].data
        elif name.startswith("enc.norm."):
            p.data[...] = s_store.params["enc.norm.shared." + name.split(".")[-1]].data
        elif name.startswith("enc.proj."):
            p.data[...] = s_store.params[name].data
    out_s, out_p = _encode4(shared, 5), _encode4(sep, 5)
    tied_diff = max(float(np.max(np.abs(out_s[m].data - out_p[m].data)))
                    for m in ("audio", "video"))

    # mid fusion with every layer joint == early fusion (same init seed)
    _, early = _encoder4(FusionSpec("early", 2, "shared"), seed=6)
    _, mid = _encoder4(FusionSpec("mid", CFG4.layers, "shared"), seed=6)
    out_e, out_m = _encode4(early, 7), _encode4(mid, 7)
    mid_diff = max(float(np.max(np.abs(out_e[m].data - out_m[m].data)))
                   for m in ("audio", "video"))

    ok = tied_diff < 1e-5 and mid_diff < 1e-5
    _report(4, "shared == tied separate, mid(S=L) == early (d=16, L=4)",
            ok, f"max abs diffs {tied_diff:.2e} / {mid_diff:.2e}")


# ---------------------------------------------------------------------------
# 5. end-to-end gradient check, both objectives
# ---------------------------------------------------------------------------

_DIRECTIONS = ("video_from_audio", "audio_from_video")


def _loss_fn(model, batch, objective, plans):
    def call():
        if objective == "joint":
            loss, _ = model.forward_joint(batch, plans)
        else:
            # fresh generator per call keeps the row draw identical
            loss, _ = model.forward_inpaint(batch, plans, _DIRECTIONS,
                                            rngmod.stream(0, "accept-gc-rows"))
        return loss
    return call


def _analytic_grads(model, loss_fn):
    model.store.zero_grad()
    loss = loss_fn()
    loss.backward()
    return {n: (p.grad.copy() if p.grad is not None else np.zeros_like(p.data))
            for n, p in model.store.params.items()}, loss


def _fd_param_gradient(model, loss_fn, name):
    p = model.store.params[name]
    orig = p.data.copy()

    def f(x):
        p.data[...] = x
        return float(loss_fn().data)

    fd = oracles.fd_gradient(f, orig.astype(np.float64))
    p.data[...] = orig
    return fd


def test_criterion_05_end_to_end_gradient_check():
    m32 = PretrainModel(_micro_spec("float32"), seed=0)
    m64 = PretrainModel(_micro_spec("float64"), seed=0)
    # evaluate both precisions at the same (float32-quantized) point
    for name, p in m64.store.params.items():
        p.data[...] = m32.store.params[name].data.astype(np.float64)
    n_params = m64.store.size()

    batch64 = _micro_batch(np.float64, seed=5)
    batch32 = {m: a.astype(np.float32) for m, a in batch64.items()}
    plans = m64.make_plans(rngmod.stream(0, "accept-gc-mask"))

    # FD noise here is ~1e-10 absolute. Coordinates below the floor are
    # compared against the floor, which mutes that noise on structurally
    # zero gradients (the qkv bias is softmax-shift-invariant) while still
    # flagging any genuinely missing gradient at >=1e-9 magnitude.
    floor = 1e-3
    worst = {"float32": 0.0, "float64": 0.0}
    for objective in ("joint", "inpaint"):
        f64 = _loss_fn(m64, batch64, objective, plans)
        f32 = _loss_fn(m32, batch32, objective, plans)
        g64, _ = _analytic_grads(m64, f64)
        g32, loss32 = _analytic_grads(m32, f32)
        assert loss32.data.dtype == np.float32  # the 32-bit leg stays 32-bit
        for name in m64.store.params:
            fd = _fd_param_gradient(m64, f64, name)
            worst["float64"] = max(worst["float64"], oracles.rel_err(g64[name], fd, floor))
            worst["float32"] = max(worst["float32"], oracles.rel_err(g32[name], fd, floor))

    ok = n_params <= 2000 and worst["float64"] < 1e-6 and worst["float32"] < 1e-3
    _report(5, "analytic gradients match central differences for both objectives",
            ok, f"{n_params} params, rel err {worst['float64']:.1e} (64-bit) "
                f"/ {worst['float32']:.1e} (32-bit)")


# ---------------------------------------------------------------------------
# 6. overfit a fixed batch
# ---------------------------------------------------------------------------

def test_criterion_06_overfit_fixed_batch():
    ds = data.generate_synthetic(data.SynthConfig(
        num_classes=4, num_samples=8, frames=4, image_size=8,
        spec_frames=32, spec_bins=8, noise=0.0, seed=0))
    model = PretrainModel(_overfit_spec(), seed=0)
    recipe = engine.pretrain_recipe(base_lr=3e-3, batch_size=8, reference_batch=8,
                                    epochs=2000.0, warmup_epochs=100.0)
    losses = engine.pretrain(model, ds, recipe, objective="joint").series("loss")
    ratio = min(losses) / losses[0]
    ok = len(losses) == 2000 and ratio < 0.1
    _report(6, "fixed batch of 8 reaches <10% of the step-0 loss within 2000 steps",
            ok, f"loss {losses[0]:.4f} -> {min(losses):.4f}, ratio {ratio:.4f}")


# ---------------------------------------------------------------------------
# 7. pretraining beats random init under linear probing
# ---------------------------------------------------------------------------

def test_criterion_07_pretraining_benefit():
    gaps = []
    for seed in range(3):
        train = data.generate_synthetic(data.SynthConfig(
            num_classes=8, rho=0.9, num_samples=512, frames=4, image_size=8,
            spec_frames=32, spec_bins=36, noise=0.2, seed=seed))
        test = data.generate_synthetic(data.SynthConfig(
            num_classes=8, rho=0.9, num_samples=256, frames=4, image_size=8,
            spec_frames=32, spec_bins=36, noise=0.2, seed=1000 + seed))
        pre = PretrainModel(_probe_spec(), seed=seed)
        recipe = engine.pretrain_recipe(base_lr=1e-3, batch_size=64,
                                        reference_batch=64, epochs=400.0,
                                        warmup_epochs=20.0, seed=seed)
        engine.pretrain(pre, train, recipe, objective="joint")
        rnd = PretrainModel(_probe_spec(), seed=100 + seed)
        probed = ft.linear_probe(pre, train, test, num_classes=8)
        baseline = ft.linear_probe(rnd, train, test, num_classes=8)
        gaps.append(probed["eval_top1"] - baseline["eval_top1"])
    mean_gap = float(np.mean(gaps))
    ok = mean_gap >= 0.15
    _report(7, "400-epoch pretrained probe beats random-init probe by >=15 points",
            ok, "gaps " + " ".join(f"{g:+.3f}" for g in gaps) + f", mean {mean_gap:+.3f}")


# ---------------------------------------------------------------------------
# 8. schedule and recipe closed forms
# ---------------------------------------------------------------------------

def test_criterion_08_schedule_closed_forms():
    recipe = engine.pretrain_recipe(base_lr=3e-4, batch_size=512, reference_batch=512,
                                    epochs=800.0, warmup_epochs=40.0)
    recipe = dataclasses.replace(recipe, steps_per_epoch=100)
    warm, total = recipe.warmup_steps, recipe.total_steps
    mid = warm + (total - warm) // 2
    lr_ok = (engine.lr_at(warm, recipe) == 3e-4
             and engine.lr_at(warm // 2, recipe) == 3e-4 * (warm // 2) / warm
             and engine.lr_at(0, recipe) == 0.0
             and engine.lr_at(total, recipe) == 0.0
             and engine.lr_at(mid, recipe)
             == 3e-4 * 0.5 * (1.0 + np.cos(np.pi * (mid - warm) / (total - warm))))

    factors = engine.layerwise_lr_factors(12, 0.75)
    layer_ok = (np.array_equal(factors, 0.75 ** (13.0 - np.arange(14)))
                and factors[-1] == 1.0 and factors[-2] == 0.75
                and factors[0] == 0.75 ** 13)

    smoothed = augment.label_smooth(np.array([5]), 309, 0.3)[0]
    on, off = smoothed[5], smoothed[0]
    smooth_ok = (abs(on - (1.0 - 0.3 + 0.3 / 309)) < 1e-12
                 and abs(off - 0.3 / 309) < 1e-12
                 and abs(smoothed.sum() - 1.0) < 1e-12
                 and np.count_nonzero(smoothed != off) == 1)

    ok = lr_ok and layer_ok and smooth_ok
    _report(8, "warmup peak 3e-4 at batch 512, layerwise 0.75^k, smoothing to 1e-12",
            ok, f"peak {engine.lr_at(warm, recipe)!r}, on-value {float(on)!r}")


# ---------------------------------------------------------------------------
# 9. bit-identical training histories
# ---------------------------------------------------------------------------

def _hundred_step_history():
    ds = data.generate_synthetic(data.SynthConfig(
        num_classes=4, num_samples=8, frames=4, image_size=8,
        spec_frames=32, spec_bins=8, noise=0.1, seed=3))
    model = PretrainModel(_overfit_spec(), seed=7)
    recipe = engine.pretrain_recipe(base_lr=1e-3, batch_size=4, reference_batch=4,
                                    epochs=50.0, warmup_epochs=5.0, seed=7)
    return engine.pretrain(model, ds, recipe, objective="joint").rows


def test_criterion_09_deterministic_histories():
    rows_a = _hundred_step_history()
    rows_b = _hundred_step_history()
    steps = sum(1 for r in rows_a if r[2] == "loss")
    ok = steps == 100 and rows_a == rows_b
    _report(9, "two same-seed runs log bit-identical 100-step histories",
            ok, f"{steps} steps, {len(rows_a)} rows compared")


# ---------------------------------------------------------------------------
# 10. checkpoint round-trip and corruption detection
# ---------------------------------------------------------------------------

def test_criterion_10_checkpoint_round_trip(tmp_path):
    ds = data.generate_synthetic(data.SynthConfig(
        num_classes=4, num_samples=4, frames=4, image_size=8,
        spec_frames=32, spec_bins=8, noise=0.1, seed=4))
    batch = next(data.make_batches(ds, 4))
    arrays = {"audio": batch["audio"], "video": batch["video"]}
    model = PretrainModel(_overfit_spec(), seed=11)
    plans = model.make_plans(rngmod.stream(0, "accept-roundtrip"))
    with ag.no_grad():
        loss_before, _ = model.forward_joint(arrays, plans)
        preds_before = model.predict_patches(arrays, plans)

    ckpt = str(tmp_path / "ckpt")
    engine.save_checkpoint(ckpt, model.store, model.spec.to_dict(), step=123)
    loaded, step = engine.load_pretrain_model(ckpt)
    params_equal = all(np.array_equal(p.data, loaded.store.params[n].data)
                       for n, p in model.store.params.items())
    with ag.no_grad():
        loss_after, _ = loaded.forward_joint(arrays, plans)
        preds_after = loaded.predict_patches(arrays, plans)
    ok = (step == 123 and params_equal
          and float(loss_before.data) == float(loss_after.data)
          and all(np.array_equal(preds_before[m].data, preds_after[m].data)
                  for m in ("audio", "video")))

    with open(os.path.join(ckpt, "manifest.json"), encoding="utf-8") as f:
        first_blob = sorted(v["file"] for v in json.load(f)["tensors"].values())[0]
    blob_path = os.path.join(ckpt, first_blob)
    blob = bytearray(open(blob_path, "rb").read())
    blob[len(blob) // 2] ^= 0xFF
    open(blob_path, "wb").write(bytes(blob))
    with pytest.raises(CorruptCheckpoint):
        engine.load_checkpoint(ckpt)

    _report(10, "save -> load -> forward is bit-identical; corrupt blob detected",
            ok, f"step {step}, {len(model.store.params)} tensors compared")


# ---------------------------------------------------------------------------
# 11. reconstruction grids paste originals at unmasked slots
# ---------------------------------------------------------------------------

def test_criterion_11_reconstruction_paste_rule(tmp_path):
    spec = ModelSpec(
        modalities=("audio", "video"),
        audio_grid=(32, 8), audio_patch=(8, 4),
        video_shape=(4, 8, 8), video_tubelet=(2, 4, 4),
        enc=TransformerConfig(16, 2, 2, 32), dec=TransformerConfig(12, 1, 2, 16),
        fusion=FusionSpec("mid", 1, "shared"),
        alpha_audio=0.5, alpha_video=0.5)
    model = PretrainModel(spec, seed=2)
    ckpt = str(tmp_path / "ckpt")
    engine.save_checkpoint(ckpt, model.store, model.spec.to_dict(), step=0)

    cfg = tmp_path / "reconstruct.cfg"
    cfg.write_text("\n".join([
        "train.seed=3",
        "data.source=synthetic",
        "data.num_classes=4",
        "data.num_samples=2",
        "data.eval_samples=0",
        "data.frames=4",
        "data.image_size=8",
        "data.spec_frames=32",
        "data.spec_bins=8",
        "data.noise=0.05",
        "data.seed=5",
        f"reconstruct.checkpoint={ckpt}",
        "reconstruct.sample=0",
    ]) + "\n")
    out = tmp_path / "grids"
    rc = cli.main(["reconstruct", "--config", str(cfg), "--out", str(out)])
    assert rc == 0

    # replay the command's masking plans
    loaded, _ = engine.load_pretrain_model(ckpt)
    plans = loaded.make_plans(rngmod.stream(3, "reconstruct", 0))

    a_img = np.asarray(Image.open(out / "audio.png"))  # (3*bins, frames)
    bins = 8
    a_orig, a_recon = a_img[:bins], a_img[2 * bins:]
    pt, pf = 8, 4
    gf = bins // pf
    a_match, a_masked_diff = True, False
    for j in range(plans["audio"].n):
        jt, jb = divmod(j, gf)
        rect = (slice(jb * pf, (jb + 1) * pf), slice(jt * pt, (jt + 1) * pt))
        same = np.array_equal(a_orig[rect], a_recon[rect])
        if j in set(plans["audio"].kept_indices):
            a_match &= same
        else:
            a_masked_diff |= not same

    v_img = np.asarray(Image.open(out / "video.png"))  # (3*H, T*W, 3)
    H = W = 8
    v_orig, v_recon = v_img[:H], v_img[2 * H:]
    tt, th, tw = 2, 4, 4
    gh = gw = H // th
    v_match, v_masked_diff = True, False
    for j in range(plans["video"].n):
        jt, rem = divmod(j, gh * gw)
        jh, jw = divmod(rem, gw)
        same = True
        for f in range(jt * tt, (jt + 1) * tt):
            rect = (slice(jh * th, (jh + 1) * th),
                    slice(f * W + jw * tw, f * W + (jw + 1) * tw))
            same &= np.array_equal(v_orig[rect], v_recon[rect])
        if j in set(plans["video"].kept_indices):
            v_match &= same
        else:
            v_masked_diff |= not same

    ok = a_match and v_match and a_masked_diff and v_masked_diff
    _report(11, "grid row 3 equals row 1 bit-exactly at every unmasked slot",
            ok, f"kept {plans['audio'].u} audio / {plans['video'].u} video slots pasted")
