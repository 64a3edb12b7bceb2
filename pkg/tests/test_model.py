"""Network construction, band attention semantics, checkpoints."""

import numpy as np
import pytest

import mfcmnet.autograd as ag
import mfcmnet.model as mo
from mfcmnet.autograd import Tensor
from mfcmnet.model import (
    BandTooThin,
    CheckpointMismatch,
    ConfigError,
    MfcaConfig,
    MfcmNet,
    MfcmNetConfig,
    micro_config,
)


def eval_logits(net, x):
    return net.forward(Tensor(x), mode="eval").data


def random_input(seed, n=2, hw=48):
    rng = np.random.default_rng(seed)
    return rng.uniform(0.0, 1.0, size=(n, 3, hw, hw)).astype(np.float32)


# ---------------------------------------------------------------- configs


def test_conv_output_size_floor():
    assert mo.conv_output_size(9, 3, 2, 1) == 5
    assert mo.conv_output_size(10, 3, 2, 1) == 5
    assert mo.conv_output_size(8, 3, 1, 1) == 8
    assert mo.conv_output_size(5, 1, 1, 0) == 5


def test_inverted_residual_spec():
    s = mo.InvertedResidualSpec(16, 2, 16, 1)
    assert s.hidden_channels == 32
    assert s.has_skip
    assert not mo.InvertedResidualSpec(16, 2, 32, 1).has_skip  # channel change
    assert not mo.InvertedResidualSpec(16, 2, 16, 2).has_skip  # downsampling
    with pytest.raises(ConfigError):
        mo.InvertedResidualSpec(16, 2, 16, 3).validate()
    with pytest.raises(ConfigError):
        mo.InvertedResidualSpec(0, 2, 16, 1).validate()


def test_micro_config_topology():
    cfg = micro_config(96, 96)
    assert cfg.stem_channels == 8
    stage_tuples = [
        (s.in_channels, s.expansion_factor, s.out_channels, s.stride) for s in cfg.stages
    ]
    assert stage_tuples == [(8, 2, 16, 2), (16, 2, 16, 1), (16, 2, 32, 2)]
    assert cfg.mfca_after_stage == 2
    assert cfg.input_shape == (3, 96, 96)
    assert cfg.feature_shape(2) == (16, 24, 24)
    assert cfg.feature_shape(3) == (32, 12, 12)
    cfg.validate()


def test_default_config_is_full_resolution():
    cfg = mo.default_config()
    assert cfg.input_shape == (3, 224, 224)
    cfg.validate()


def test_config_validation_errors():
    cfg = micro_config(96, 96)
    broken = MfcmNetConfig(
        stem_channels=8,
        stages=(mo.InvertedResidualSpec(9, 2, 16, 2),) + cfg.stages[1:],  # chain break
        mfca=cfg.mfca,
        mfca_after_stage=2,
        head_hidden=0,
        input_shape=(3, 96, 96),
    )
    with pytest.raises(ConfigError):
        broken.validate()
    thin = micro_config(8, 96)  # attention stage sees a 2-row map
    with pytest.raises(BandTooThin):
        thin.validate()


def test_config_dict_roundtrip_and_unknown_keys():
    cfg = micro_config(64, 96, mfca=MfcaConfig(dct_coeffs_per_band=6, variant="inverse_transform"))
    d = cfg.to_dict()
    back = MfcmNetConfig.from_dict(d)
    assert back == cfg
    d["surprise"] = 1
    with pytest.raises(ConfigError):
        MfcmNetConfig.from_dict(d)
    d2 = cfg.to_dict()
    d2["mfca"]["surprise"] = 1
    with pytest.raises(ConfigError):
        MfcmNetConfig.from_dict(d2)


def test_config_json_is_canonical():
    blob = mo.config_json_bytes(micro_config(96, 96))
    import json

    parsed = json.loads(blob)
    assert list(parsed.keys()) == sorted(parsed.keys())
    assert b" " not in blob  # compact separators


# ---------------------------------------------------------------- bands


def test_band_rows_distribution():
    assert mo.band_rows(10) == [4, 3, 3]
    assert mo.band_rows(9) == [3, 3, 3]
    assert mo.band_rows(11) == [4, 4, 3]
    assert mo.band_rows(3) == [1, 1, 1]
    with pytest.raises(BandTooThin):
        mo.band_rows(2)


def test_split_bands_covers_input():
    x = np.random.default_rng(0).normal(size=(2, 4, 10, 5))
    bands = mo.split_bands(x)
    assert [b.shape[2] for b in bands] == [4, 3, 3]
    assert np.array_equal(np.concatenate(bands, axis=2), x)


def test_zigzag_indices_jpeg_order():
    z = mo.zigzag_indices(8, 8)
    pairs = [(int(k) // 8, int(k) % 8) for k in z[:10]]
    assert pairs == [(0, 0), (0, 1), (1, 0), (2, 0), (1, 1), (0, 2), (0, 3), (1, 2), (2, 1), (3, 0)]
    assert sorted(z.tolist()) == list(range(64))  # permutation
    z23 = mo.zigzag_indices(2, 3)
    assert [(int(k) // 3, int(k) % 3) for k in z23] == [(0, 0), (0, 1), (1, 0), (1, 1), (0, 2), (1, 2)]


def test_mfca_statistics_against_manual_dct():
    rng = np.random.default_rng(7)
    band = rng.normal(size=(2, 3, 4, 5))
    k = 6
    got = mo.mfca_statistics(Tensor(band), k).data
    coeffs = ag.dct2d_ortho(Tensor(band)).data.reshape(2, 3, 20)
    want = coeffs[:, :, mo.zigzag_indices(4, 5)[:k]]
    assert got.shape == (2, 3, k)
    assert np.array_equal(got, want)


def test_mfca_statistics_k1_is_scaled_mean():
    # the DC coefficient of the orthonormal transform is mean * sqrt(h*w)
    rng = np.random.default_rng(8)
    band = rng.normal(size=(3, 5, 6, 7))
    got = mo.mfca_statistics(Tensor(band), 1).data[:, :, 0]
    want = band.mean(axis=(2, 3)) * np.sqrt(6 * 7)
    assert np.allclose(got, want, rtol=1e-12)


def test_mfca_statistics_clips_k():
    band = np.random.default_rng(9).normal(size=(1, 2, 2, 3))
    full = mo.mfca_statistics(Tensor(band), 6).data
    clipped = mo.mfca_statistics(Tensor(band), 60).data
    assert np.array_equal(full, clipped)
    assert full.shape == (1, 2, 6)


def test_mfca_module_k_used_and_attention_shape():
    rng = np.random.default_rng(10)
    m = mo.MfcaModule(8, (4, 3), MfcaConfig(dct_coeffs_per_band=50), rng, np.float32)
    assert m.k_used == 3  # min band area is 1 row x 3 cols
    feats = rng.normal(size=(2, 8, 4, 3)).astype(np.float32)
    att = m.attention(Tensor(feats)).data
    assert att.shape == (2, 8, 4, 3)
    assert (att > 0).all() and (att < 1).all()  # sigmoid output
    # per-band weights are constant across the rows of their band
    rows = mo.band_rows(4)
    top = 0
    for r in rows:
        block = att[:, :, top : top + r, :]
        assert np.ptp(block, axis=(2, 3)).max() == 0.0
        top += r


def test_channel_weights_match_attention():
    rng = np.random.default_rng(11)
    m = mo.MfcaModule(8, (6, 5), MfcaConfig(), rng, np.float64)
    feats = rng.normal(size=(2, 8, 6, 5))
    att = m.attention(Tensor(feats)).data
    weights = m.channel_weights(feats)
    assert len(weights) == 3
    rows = mo.band_rows(6)
    top = 0
    for band_idx, r in enumerate(rows):
        assert weights[band_idx].shape == (2, 8)
        assert np.array_equal(weights[band_idx], att[:, :, top, 0])
        top += r


def test_band_locality_of_channel_weights():
    rng = np.random.default_rng(12)
    m = mo.MfcaModule(8, (9, 4), MfcaConfig(), rng, np.float64)
    feats = rng.normal(size=(1, 8, 9, 4))
    rows = mo.band_rows(9)
    perturbed = feats.copy()
    perturbed[:, :, rows[0] + rows[1] :, :] += rng.normal(size=(1, 8, rows[2], 4))
    w0 = m.channel_weights(feats)
    w1 = m.channel_weights(perturbed)
    assert np.array_equal(w0[0], w1[0])  # low band untouched
    assert np.array_equal(w0[1], w1[1])  # mid band untouched
    assert not np.array_equal(w0[2], w1[2])


def test_inverse_transform_variant_is_parameter_free():
    cfg_b = micro_config(96, 96)
    cfg_i = micro_config(96, 96, mfca=MfcaConfig(variant="inverse_transform"))
    net_b = MfcmNet(cfg_b, seed=3)
    net_i = MfcmNet(cfg_i, seed=3)
    assert net_i.mfca.fc1 is None
    assert net_b.num_parameters() - net_i.num_parameters() == sum(
        p.data.size for n, p in net_b.named_parameters() if n.startswith("mfca.")
    )
    x = random_input(1, n=2, hw=96)
    out = eval_logits(net_i, x)
    assert out.shape == (2, 1)
    assert np.isfinite(out).all()


# ---------------------------------------------------------------- network


def test_forward_shapes_and_modes():
    net = MfcmNet(micro_config(48, 48), seed=5)
    x = random_input(2, n=3)
    train_out = net.forward(Tensor(x), mode="train")
    eval_out = net.forward(Tensor(x), mode="eval")
    assert train_out.data.shape == (3, 1)
    assert eval_out.data.shape == (3, 1)
    with pytest.raises(ag.ShapeMismatch):
        net.forward(Tensor(np.zeros((1, 3, 50, 48), dtype=np.float32)), mode="eval")
    with pytest.raises(ValueError):
        net.forward(Tensor(x), mode="predict")


def test_parameter_count_frozen():
    assert MfcmNet(micro_config(96, 96), seed=0).num_parameters() == 4717


def test_he_uniform_init_bounds():
    net = MfcmNet(micro_config(48, 48), seed=9)
    w = dict(net.named_parameters())["stage1.depthwise.conv.weight"].data
    fan_in = w.shape[1] * w.shape[2] * w.shape[3]
    bound = np.sqrt(6.0 / fan_in)
    assert np.abs(w).max() <= bound
    assert np.abs(w).max() > 0.5 * bound  # actually spread out
    assert np.array_equal(dict(net.named_parameters())["head.out.bias"].data, np.zeros(1))
    assert np.array_equal(dict(net.named_parameters())["stem.bn.gamma"].data, np.ones(8))


def test_seed_determinism_of_init():
    a = MfcmNet(micro_config(48, 48), seed=21)
    b = MfcmNet(micro_config(48, 48), seed=21)
    c = MfcmNet(micro_config(48, 48), seed=22)
    for (_, pa), (_, pb) in zip(a.named_parameters(), b.named_parameters()):
        assert np.array_equal(pa.data, pb.data)
    assert any(
        not np.array_equal(pa.data, pc.data)
        for (_, pa), (_, pc) in zip(a.named_parameters(), c.named_parameters())
    )


def test_all_ones_attention_equals_skip_bitwise():
    net = MfcmNet(micro_config(48, 48), seed=6)
    for seed in range(5):
        x = random_input(100 + seed)
        ones = net.forward(Tensor(x), mode="eval", attention_mode="ones").data
        skip = net.forward(Tensor(x), mode="eval", attention_mode="skip").data
        assert np.array_equal(ones, skip)


def test_mfca_attention_changes_logits():
    net = MfcmNet(micro_config(48, 48), seed=6)
    x = random_input(200)
    full = net.forward(Tensor(x), mode="eval", attention_mode="mfca").data
    skip = net.forward(Tensor(x), mode="eval", attention_mode="skip").data
    assert not np.array_equal(full, skip)


def test_zeroed_projection_makes_skip_block_identity():
    net = MfcmNet(micro_config(48, 48), seed=7)
    block = net.stages[1]  # 16 -> 16, stride 1: the skip block
    assert block.spec.has_skip
    block.project.conv.weight.data[:] = 0.0
    block.project.bn.gamma.data[:] = 0.0
    block.project.bn.beta.data[:] = 0.0
    x = Tensor(np.random.default_rng(13).normal(size=(2, 16, 12, 12)).astype(np.float32))
    out = block(x, mode="eval", update_running=False)
    assert np.array_equal(out.data, x.data)


def test_train_mode_updates_running_stats_only_when_asked():
    net = MfcmNet(micro_config(48, 48), seed=8)
    state = net.stem.bn.state
    before = state.running_mean.copy()
    x = random_input(300)
    net.forward(Tensor(x), mode="train", update_running=False)
    assert np.array_equal(state.running_mean, before)
    net.forward(Tensor(x), mode="train")
    assert not np.array_equal(state.running_mean, before)


# ---------------------------------------------------------------- checkpoints


def test_checkpoint_roundtrip_bit_identical(tmp_path):
    net = MfcmNet(micro_config(48, 48), seed=14)
    x = random_input(400)
    before = eval_logits(net, x)
    p = tmp_path / "m.mfck"
    mo.save_checkpoint(net, str(p))
    back = mo.load_checkpoint(str(p))
    assert back.cfg == net.cfg
    assert np.array_equal(eval_logits(back, x), before)
    # saving the loaded model reproduces the file byte for byte
    p2 = tmp_path / "m2.mfck"
    mo.save_checkpoint(back, str(p2))
    assert p.read_bytes() == p2.read_bytes()


def test_checkpoint_preserves_running_stats(tmp_path):
    net = MfcmNet(micro_config(48, 48), seed=15)
    net.forward(Tensor(random_input(500)), mode="train")  # move the stats
    p = tmp_path / "m.mfck"
    mo.save_checkpoint(net, str(p))
    back = mo.load_checkpoint(str(p))
    assert np.array_equal(back.stem.bn.state.running_mean, net.stem.bn.state.running_mean)
    assert np.array_equal(back.stem.bn.state.running_var, net.stem.bn.state.running_var)


def test_checkpoint_rejects_malformed_files(tmp_path):
    net = MfcmNet(micro_config(48, 48), seed=16)
    p = tmp_path / "m.mfck"
    mo.save_checkpoint(net, str(p))
    blob = p.read_bytes()

    def expect_reject(mutated):
        q = tmp_path / "bad.mfck"
        q.write_bytes(mutated)
        with pytest.raises(CheckpointMismatch):
            mo.load_checkpoint(str(q))

    expect_reject(b"XXXX" + blob[4:])  # magic
    expect_reject(blob[:4] + bytes([9]) + blob[5:])  # version
    expect_reject(blob[: len(blob) // 2])  # truncated tensor
    header_end = 4 + 1 + 4
    expect_reject(blob[:header_end] + b"{]" + blob[header_end + 2 :])  # config json


def test_checkpoint_preserves_dtype(tmp_path):
    net = MfcmNet(micro_config(48, 48), seed=17, dtype=np.float64)
    p = tmp_path / "m64.mfck"
    mo.save_checkpoint(net, str(p))
    back = mo.load_checkpoint(str(p))
    assert back.dtype == np.float64
    assert back.stem.conv.weight.data.dtype == np.float64
