"""Fusion encoder shapes, variant equivalences, and structural properties."""

import numpy as np
import pytest

from avmae import autograd as ag
from avmae.autograd import Tensor
from avmae.backbone import FusionEncoder, FusionSpec, TransformerConfig
from avmae.errors import ConfigError, InvalidInput, ShapeError
from avmae.layers import ParamStore, sinusoid_positions
from avmae.tokens import TokenSequence, grid_coords

CFG = TransformerConfig(d=16, layers=4, heads=2, mlp=32)
WIDTHS = {"audio": 12, "video": 24}
GRIDS = {"audio": (5, 2), "video": (2, 3, 2)}
N = {"audio": 10, "video": 12}


def _positions(d):
    return {m: sinusoid_positions(grid_coords(GRIDS[m]), d) for m in GRIDS}


def _encoder(spec, seed=0, cfg=CFG):
    store = ParamStore(seed=seed, dtype=np.float64)
    return store, FusionEncoder(store, cfg, spec, WIDTHS, _positions(cfg.d), ("audio", "video"))


def _inputs(seed=1, batch=2):
    g = np.random.default_rng(seed)
    return {m: TokenSequence(g.normal(size=(batch, N[m], WIDTHS[m])), grid_coords(GRIDS[m]), m)
            for m in ("audio", "video")}


def _project_all(enc, seqs):
    return {m: enc.project_tokens(s) for m, s in seqs.items()}


@pytest.mark.parametrize("variant,S", [("early", 0), ("separate", 0), ("shared", 0), ("mid", 2)])
def test_shapes_preserved_per_variant(variant, S):
    spec = FusionSpec(variant, S or 2, "shared")
    store, enc = _encoder(spec)
    out = enc.encode(_project_all(enc, _inputs()))
    assert out["audio"].data.shape == (2, 10, 16)
    assert out["video"].data.shape == (2, 12, 16)


def test_projection_count_anchor():
    # 400 audio patches project to a 400-token sequence at model width
    store = ParamStore(seed=0, dtype=np.float64)
    cfg = TransformerConfig(d=16, layers=1, heads=2, mlp=16)
    grids = {"audio": (50, 8), "video": (1, 1, 1)}
    pos = {m: sinusoid_positions(grid_coords(grids[m]), cfg.d) for m in grids}
    enc = FusionEncoder(store, cfg, FusionSpec("separate", 2, "shared"),
                        {"audio": 256, "video": 1536}, pos, ("audio", "video"))
    g = np.random.default_rng(0)
    seq = TokenSequence(g.normal(size=(400, 256)), grid_coords(grids["audio"]), "audio")
    out = enc.project_tokens(seq)
    assert out.embeddings.data.shape == (400, 16)


def test_projection_is_linear_plus_position():
    store, enc = _encoder(FusionSpec("early", 2, "shared"))
    pos = enc.positions["audio"]
    zero = TokenSequence(np.zeros((1, N["audio"], WIDTHS["audio"])), grid_coords(GRIDS["audio"]), "audio")
    out0 = enc.project_tokens(zero).embeddings.data[0]
    np.testing.assert_allclose(out0, pos, atol=1e-12)  # bias starts at zero
    g = np.random.default_rng(2)
    x = g.normal(size=(1, N["audio"], WIDTHS["audio"]))
    one = enc.project_tokens(TokenSequence(x, grid_coords(GRIDS["audio"]), "audio")).embeddings.data
    two = enc.project_tokens(TokenSequence(2 * x, grid_coords(GRIDS["audio"]), "audio")).embeddings.data
    np.testing.assert_allclose(two - pos, 2 * (one - pos), atol=1e-9)


def test_unknown_modality_rejected():
    store, enc = _encoder(FusionSpec("early", 2, "shared"))
    with pytest.raises(InvalidInput):
        TokenSequence(np.zeros((2, 3)), np.zeros((2, 1)), "text")
    seq = TokenSequence(np.zeros((1, N["audio"], WIDTHS["audio"])), grid_coords(GRIDS["audio"]), "audio")
    solo_store = ParamStore(seed=0, dtype=np.float64)
    solo = FusionEncoder(solo_store, CFG, FusionSpec("early", 2, "shared"),
                         {"video": WIDTHS["video"]}, {"video": _positions(CFG.d)["video"]},
                         ("video",))
    with pytest.raises(InvalidInput):
        solo.project_tokens(seq)


def test_wrong_patch_width_rejected():
    store, enc = _encoder(FusionSpec("early", 2, "shared"))
    seq = TokenSequence(np.zeros((1, N["audio"], 7)), grid_coords(GRIDS["audio"]), "audio")
    with pytest.raises(Exception):
        enc.project_tokens(seq)


def _tie(dst_store, src_store, mapping):
    for dst, src in mapping.items():
        dst_store.params[dst].data[...] = src_store.params[src].data


def test_shared_equals_separate_with_tied_weights():
    s_store, shared = _encoder(FusionSpec("shared", 2, "shared"), seed=3)
    p_store, sep = _encoder(FusionSpec("separate", 2, "shared"), seed=4)
    # copy every shared block/norm tensor into both separate stacks
    mapping = {}
    for name in p_store.params:
        if name.startswith("enc.audio.") or name.startswith("enc.video."):
            tail = name.split(".", 2)[2]
            mapping[name] = f"enc.shared.{tail}"
        elif name.startswith("enc.norm."):
            mapping[name] = "enc.norm.shared." + name.split(".")[-1]
        elif name.startswith("enc.proj."):
            mapping[name] = name
    for dst, src in mapping.items():
        p_store.params[dst].data[...] = s_store.params[src].data

    seqs = _inputs(seed=5)
    out_a = shared.encode(_project_all(shared, seqs))
    out_b = sep.encode(_project_all(sep, seqs))
    for m in ("audio", "video"):
        diff = np.max(np.abs(out_a[m].data - out_b[m].data))
        assert diff < 1e-5, f"{m}: {diff}"


def test_mid_with_full_s_equals_early():
    # identical seeds register identical names in identical order
    _, early = _encoder(FusionSpec("early", 2, "shared"), seed=6)
    _, mid = _encoder(FusionSpec("mid", CFG.layers, "shared"), seed=6)
    seqs = _inputs(seed=7)
    out_a = early.encode(_project_all(early, seqs))
    out_b = mid.encode(_project_all(mid, seqs))
    for m in ("audio", "video"):
        diff = np.max(np.abs(out_a[m].data - out_b[m].data))
        assert diff < 1e-5, f"{m}: {diff}"


def test_mid_s_out_of_range_rejected():
    with pytest.raises(ConfigError):
        _encoder(FusionSpec("mid", CFG.layers + 1, "shared"))
    with pytest.raises(ConfigError):
        FusionSpec("mid", 0, "shared")


def test_unknown_variant_names_rejected():
    with pytest.raises(ConfigError):
        FusionSpec("late", 2, "shared")
    with pytest.raises(ConfigError):
        FusionSpec("early", 2, "mid")


def test_permutation_equivariance_separate_and_shared():
    for variant in ("separate", "shared"):
        store, enc = _encoder(FusionSpec(variant, 2, "shared"), seed=8)
        seqs = _inputs(seed=9)
        out = enc.encode(_project_all(enc, seqs))["audio"].data
        perm = np.random.default_rng(0).permutation(N["audio"])
        # permute tokens together with their positional rows
        permuted_pos = {m: enc.positions[m].copy() for m in enc.positions}
        permuted_pos["audio"] = enc.positions["audio"][perm]
        enc.positions = permuted_pos
        pseqs = dict(seqs)
        pseqs["audio"] = TokenSequence(seqs["audio"].embeddings[:, perm, :],
                                       seqs["audio"].positions[perm], "audio")
        out_p = enc.encode(_project_all(enc, pseqs))["audio"].data
        np.testing.assert_allclose(out_p, out[:, perm, :], atol=1e-8)


def test_single_modality_encoding_works_for_all_variants():
    for variant, S in [("early", 2), ("separate", 2), ("shared", 2), ("mid", 2)]:
        store, enc = _encoder(FusionSpec(variant, S, "shared"), seed=10)
        seqs = _inputs(seed=11)
        out = enc.encode({"audio": enc.project_tokens(seqs["audio"])})
        assert out["audio"].data.shape == (2, 10, 16)


def test_gradients_reach_all_encoder_params():
    store, enc = _encoder(FusionSpec("mid", 2, "shared"), seed=12)
    out = enc.encode(_project_all(enc, _inputs(seed=13)))
    loss = ag.add(ag.mean_all(ag.mul(out["audio"], out["audio"])),
                  ag.mean_all(ag.mul(out["video"], out["video"])))
    loss.backward()
    missing = [n for n, t in store.params.items() if t.grad is None]
    assert missing == []


def test_sinusoid_positions_shape_and_uniqueness():
    pos = sinusoid_positions(grid_coords((5, 4)), 16)
    assert pos.shape == (20, 16)
    # distinct grid points get distinct embeddings
    assert len({tuple(np.round(r, 9)) for r in pos}) == 20
    with pytest.raises(ConfigError):
        sinusoid_positions(grid_coords((2, 2, 2)), 4)  # too narrow to split
