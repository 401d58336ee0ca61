import numpy as np
import pytest

from casnet.dsp import StftConfig, extract_features, stft
from casnet.model import (
    ModelConfig,
    WeightError,
    WeightManifest,
    align_and_fuse,
    cwq,
    cwq_sequence,
    decode,
    dpr_forward,
    encode,
    enhance_waveforms,
    random_manifest,
    required_tensors,
)
from casnet.scene import synth_noise, synth_speech
from casnet.transport import ChannelModel

CFG = ModelConfig()


@pytest.fixture(scope="module")
def manifest():
    return random_manifest(CFG, seed=42)


@pytest.fixture(scope="module")
def zero_bias_manifest():
    base = random_manifest(CFG, seed=0)
    tensors = {
        k: (np.zeros_like(v) if "bias" in k or k.endswith("pad_frame") else v)
        for k, v in base.tensors.items()
    }
    return WeightManifest(tensors, CFG)


def _mix(seed, n=16000):
    return synth_speech(n / 16000, seed=seed) + 0.05 * synth_noise(
        n / 16000, seed=seed + 77, kind="white"
    )


def _features(x):
    return extract_features(stft(x, StftConfig()), CFG.alpha)


# --- manifest ------------------------------------------------------------


def test_manifest_save_load_round_trip(manifest, tmp_path):
    path = tmp_path / "w.casw"
    manifest.save(path)
    loaded = WeightManifest.load(path)
    assert loaded.digest() == manifest.digest()
    for name, arr in manifest.tensors.items():
        assert np.array_equal(loaded[name], arr)
    assert loaded.config == manifest.config


def test_manifest_detects_payload_corruption(manifest, tmp_path):
    path = tmp_path / "w.casw"
    manifest.save(path)
    blob = bytearray(path.read_bytes())
    blob[-3] ^= 0x55
    path.write_bytes(bytes(blob))
    with pytest.raises(WeightError, match="digest"):
        WeightManifest.load(path)


def test_manifest_errors_name_the_offending_tensor():
    tensors = {
        name: np.zeros(shape, dtype=np.float32)
        for name, shape in required_tensors(CFG).items()
    }
    missing = dict(tensors)
    del missing["dpr_enc.intra.proj.weight"]
    with pytest.raises(WeightError, match="dpr_enc.intra.proj.weight"):
        WeightManifest(missing, CFG)
    bad = dict(tensors)
    bad["enc2.conv.weight"] = np.zeros((16, 16, 1, 5), dtype=np.float32)
    with pytest.raises(WeightError, match="enc2.conv.weight"):
        WeightManifest(bad, CFG)


def test_manifest_describe_lists_everything(manifest):
    text = manifest.describe()
    assert "enc1.conv.weight" in text
    assert "cwq2.pad_frame" in text
    assert "total" in text


# --- encode ---------------------------------------------------------------


def test_encode_shape_contract(manifest):
    for n_t in (1, 7, 40):
        phi = np.random.default_rng(n_t).standard_normal((3, n_t, 257)).astype(np.float32)
        h, skips = encode(phi, manifest)
        assert h.shape == (16, n_t, 32)
        assert [s.shape[2] for s in skips] == [128, 64, 32]


def test_encode_parameter_sharing_bit_identical(manifest):
    phi = _features(_mix(1))
    h1, _ = encode(phi, manifest)
    h2, _ = encode(phi, manifest)
    assert np.array_equal(h1, h2)


def test_encode_zero_input_zero_biases_gives_zero(zero_bias_manifest):
    h, skips = encode(np.zeros((3, 6, 257), np.float32), zero_bias_manifest)
    assert np.all(h == 0)
    assert all(np.all(s == 0) for s in skips)


def test_encode_rejects_bad_shapes(manifest):
    with pytest.raises(ValueError):
        encode(np.zeros((2, 5, 257), np.float32), manifest)
    with pytest.raises(ValueError):
        encode(np.zeros((3, 5, 129), np.float32), manifest)


# --- dpr -------------------------------------------------------------------


def test_dpr_shape_preserved(manifest):
    h = np.random.default_rng(0).standard_normal((16, 9, 32)).astype(np.float32)
    out = dpr_forward(h, manifest)
    assert out.shape == h.shape


def test_dpr_inter_path_is_frame_causal(manifest):
    rng = np.random.default_rng(1)
    h = rng.standard_normal((16, 12, 32)).astype(np.float32)
    for k in (0, 4, 10):
        h2 = h.copy()
        h2[:, k + 1 :, :] += rng.standard_normal((16, 11 - k, 32)).astype(np.float32)
        a = dpr_forward(h, manifest)
        b = dpr_forward(h2, manifest)
        assert np.array_equal(a[:, : k + 1, :], b[:, : k + 1, :])
        assert not np.array_equal(a[:, k + 1 :, :], b[:, k + 1 :, :])


# --- cwq --------------------------------------------------------------------


def _frame(seed):
    return np.random.default_rng(seed).standard_normal((16, 32)).astype(np.float32)


def test_cwq_zero_out_projection_returns_query(manifest):
    tensors = dict(manifest.tensors)
    tensors["cwq1.out_proj.weight"] = np.zeros((512, 512), dtype=np.float32)
    tensors["cwq1.out_proj.bias"] = np.zeros(512, dtype=np.float32)
    w = WeightManifest(tensors, CFG)
    q = _frame(0)
    keys = [[_frame(1), _frame(2), _frame(3)]]
    out = cwq(q, keys, w)
    assert np.array_equal(out, q)


def test_cwq_attention_weights_sum_to_one(manifest):
    # all-ones values + identity output projection expose the softmax total
    tensors = dict(manifest.tensors)
    tensors["cwq1.v_proj.weight"] = np.zeros((512, 512), dtype=np.float32)
    tensors["cwq1.v_proj.bias"] = np.ones(512, dtype=np.float32)
    tensors["cwq1.out_proj.weight"] = np.eye(512, dtype=np.float32)
    tensors["cwq1.out_proj.bias"] = np.zeros(512, dtype=np.float32)
    w = WeightManifest(tensors, CFG)
    q = _frame(4)
    out = cwq(q, [[_frame(5), _frame(6), _frame(7)], [None, _frame(8), _frame(9)]], w)
    assert np.max(np.abs(out - q - 1.0)) <= 1e-6


def test_cwq_gap_padding_and_no_context(manifest):
    q = _frame(1)
    out = cwq(q, [[None, None, None]], manifest)
    assert out.shape == (16, 32)
    with pytest.raises(ValueError, match="no context"):
        cwq(q, [], manifest)
    nofb = ModelConfig(pad_mode="none")
    w2 = random_manifest(nofb, seed=1)
    with pytest.raises(ValueError, match="no context"):
        cwq(q, [[None, None, None]], w2)
    out2 = cwq(q, [[None, _frame(2), None]], w2)
    assert out2.shape == (16, 32)


def test_cwq_window_length_enforced(manifest):
    with pytest.raises(ValueError, match="window"):
        cwq(_frame(0), [[_frame(1), _frame(2)]], manifest)


def test_cwq_sequence_is_frame_causal(manifest):
    rng = np.random.default_rng(2)
    h_ref = rng.standard_normal((16, 10, 32)).astype(np.float32)
    feats = rng.standard_normal((16, 10, 32)).astype(np.float32)
    for k in (0, 3, 8):
        h2 = h_ref.copy()
        f2 = feats.copy()
        h2[:, k + 1 :, :] += 1.0
        f2[:, k + 1 :, :] -= 2.0
        a = cwq_sequence(h_ref, [(feats, None)], manifest)
        b = cwq_sequence(h2, [(f2, None)], manifest)
        assert np.array_equal(a[:, : k + 1, :], b[:, : k + 1, :])


def test_cwq_sequence_matches_per_frame_op(manifest):
    rng = np.random.default_rng(3)
    h_ref = rng.standard_normal((16, 6, 32)).astype(np.float32)
    feats = rng.standard_normal((16, 6, 32)).astype(np.float32)
    seq = cwq_sequence(h_ref, [(feats, None)], manifest)
    for k in range(6):
        window = [
            feats[:, j, :] if 0 <= j < 6 else None for j in range(k - 2, k + 1)
        ]
        single = cwq(h_ref[:, k, :], [window], manifest)
        # both paths are float32; allow for blocked-matmul rounding differences
        assert np.max(np.abs(seq[:, k, :] - single)) <= 1e-4


# --- align/fuse + decode -----------------------------------------------------


def test_align_and_fuse_degenerate_single_channel(manifest):
    h = np.random.default_rng(4).standard_normal((16, 8, 32)).astype(np.float32)
    out = align_and_fuse(h, [], manifest)
    assert out.shape == (16, 8, 32)
    assert np.array_equal(out, dpr_forward(h, manifest, prefix="dpr_fuse"))


def test_align_and_fuse_permutation_invariant_for_identical_nodes(manifest):
    rng = np.random.default_rng(5)
    h = rng.standard_normal((16, 6, 32)).astype(np.float32)
    f = rng.standard_normal((16, 6, 32)).astype(np.float32)
    out_ab = align_and_fuse(h, [f, f.copy()], manifest)
    out_ba = align_and_fuse(h, [f.copy(), f], manifest)
    assert np.array_equal(out_ab, out_ba)


def test_align_and_fuse_shape_mismatch(manifest):
    h = np.zeros((16, 6, 32), np.float32)
    with pytest.raises(ValueError, match="shape"):
        align_and_fuse(h, [np.zeros((16, 5, 32), np.float32)], manifest)


def test_decode_shape_and_nonnegativity(manifest):
    phi = np.random.default_rng(6).standard_normal((3, 9, 257)).astype(np.float32)
    h, skips = encode(phi, manifest)
    mag = decode(h, skips, manifest)
    assert mag.shape == (9, 257)
    assert np.all(mag >= 0)


def test_decode_zero_inputs_zero_biases(zero_bias_manifest):
    h = np.zeros((16, 5, 32), np.float32)
    skips = [
        np.zeros((16, 5, 128), np.float32),
        np.zeros((16, 5, 64), np.float32),
        np.zeros((16, 5, 32), np.float32),
    ]
    assert np.all(decode(h, skips, zero_bias_manifest) == 0)


def test_decode_skip_mismatch_rejected(manifest):
    h = np.zeros((16, 5, 32), np.float32)
    skips = [
        np.zeros((16, 5, 128), np.float32),
        np.zeros((16, 4, 64), np.float32),
        np.zeros((16, 5, 32), np.float32),
    ]
    with pytest.raises(ValueError, match="skip"):
        decode(h, skips, manifest)


# --- end-to-end enhance -------------------------------------------------------


def test_enhance_output_length_and_determinism(manifest):
    mixes = [_mix(1, 16000 + 123), _mix(2, 16000 + 123)]
    r1 = enhance_waveforms(mixes, manifest, rank=4)
    r2 = enhance_waveforms(mixes, manifest, rank=4)
    assert len(r1.wave) == 16000 + 123
    assert np.array_equal(r1.wave, r2.wave)


def test_enhance_single_channel_runs(manifest):
    r = enhance_waveforms([_mix(3)], manifest)
    assert len(r.wave) == 16000
    assert r.nsa == 1.0
    assert r.gaps == 0


def test_enhance_full_rank_matches_raw(manifest):
    mixes = [_mix(4), _mix(5), _mix(6)]
    raw = enhance_waveforms(mixes, manifest, mode="raw")
    full = enhance_waveforms(mixes, manifest, rank=16)
    assert np.max(np.abs(raw.wave - full.wave)) <= 1e-5
    assert full.nsa_report.asymptotic == 3.0
    assert raw.nsa == 1.0


def test_enhance_full_drop_degrades_gracefully(manifest):
    mixes = [_mix(7), _mix(8)]
    r = enhance_waveforms(
        mixes, manifest, rank=4, channel=ChannelModel(drop_prob=1.0, jitter_seed=3)
    )
    assert len(r.wave) == 16000
    assert r.delivered == 0
    assert r.gaps > 0
    assert np.all(np.isfinite(r.wave))


def test_enhance_reports_nsa(manifest):
    mixes = [_mix(9), _mix(10)]
    r = enhance_waveforms(mixes, manifest, rank=4)
    assert r.nsa_report.asymptotic == 0.75
    assert r.feature_mse is not None
