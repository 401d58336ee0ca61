import numpy as np
import pytest

from casnet.metrics import NsaReport, nsa, si_sdr, stoi
from casnet.scene import synth_noise, synth_speech

# Frozen from tests/oracles/stoi_reference.py on the deterministic fixture
# below (speech seed 11, pink noise seed 22 at 0 dB SNR, 4 s at 16 kHz).
STOI_FIXTURE_VALUE = 0.882653


def test_nsa_asymptotic_defaults():
    rep = nsa(T=249, D=16, F_prime=32, a=4, signal_len=64000)
    assert rep.asymptotic == 0.75
    assert rep.total_samples_sent == 249 * 48 * 4
    assert rep.nsa == pytest.approx(0.74700, abs=1e-5)


def test_nsa_full_rank_exceeds_raw():
    rep = nsa(T=249, D=16, F_prime=32, a=16, signal_len=64000)
    assert rep.asymptotic == 3.0
    assert rep.nsa > 1.0


def test_nsa_linear_in_rank():
    vals = [nsa(100, 16, 32, a, 32000).asymptotic for a in range(1, 17)]
    diffs = np.diff(vals)
    assert np.allclose(diffs, 48 / 256)
    assert vals[3] == 0.75


def test_nsa_validation():
    with pytest.raises(ValueError):
        nsa(0, 16, 32, 4, 64000)
    with pytest.raises(ValueError):
        nsa(10, 16, 32, 4, -1)


def test_si_sdr_identical_signals_hit_cap():
    s = np.random.default_rng(0).standard_normal(8000)
    assert si_sdr(s, s) == 100.0


def test_si_sdr_scale_invariance():
    s = np.random.default_rng(1).standard_normal(8000)
    n = np.random.default_rng(2).standard_normal(8000)
    est = s + 0.3 * n
    base = si_sdr(est, s)
    for alpha in (0.1, 2.0, -5.0, 1e3):
        assert abs(si_sdr(alpha * est, s) - base) <= 1e-9


def test_si_sdr_orthogonal_equal_power_noise_is_zero_db():
    rng = np.random.default_rng(3)
    s = rng.standard_normal(16000)
    n = rng.standard_normal(16000)
    n -= (np.dot(n, s) / np.dot(s, s)) * s
    n *= np.linalg.norm(s) / np.linalg.norm(n)
    assert abs(si_sdr(s + n, s)) <= 1e-9


def test_si_sdr_errors():
    s = np.ones(100)
    with pytest.raises(ValueError):
        si_sdr(s, np.zeros(100))
    with pytest.raises(ValueError):
        si_sdr(s, np.ones(99))


def test_stoi_perfect_reconstruction():
    s = synth_speech(4.0, seed=5)
    assert abs(stoi(s, s) - 1.0) <= 1e-6


def test_stoi_uncorrelated_noise_pairs_score_near_zero():
    vals = [
        stoi(synth_noise(4.0, seed=200 + i, kind="white"), synth_noise(4.0, seed=300 + i, kind="white"))
        for i in range(10)
    ]
    assert all(abs(v) < 0.2 for v in vals)


def test_stoi_noise_against_speech_scores_low():
    s = synth_speech(4.0, seed=11)
    vals = [stoi(synth_noise(4.0, seed=100 + i, kind="white"), s) for i in range(5)]
    assert all(v < 0.45 for v in vals)  # clipping floor of the metric
    assert all(v < stoi(s + synth_noise(4.0, seed=50, kind="white"), s) for v in vals)


def test_stoi_matches_reference_fixture():
    s = synth_speech(4.0, 16000, seed=11)
    n = synth_noise(4.0, 16000, seed=22, kind="pink")
    n = n * np.sqrt(np.mean(s**2) / np.mean(n**2))
    assert abs(stoi(s + n, s, 16000) - STOI_FIXTURE_VALUE) <= 0.01


def test_stoi_too_short_rejected():
    s = synth_speech(4.0, seed=5)
    with pytest.raises(ValueError, match="short|segment"):
        stoi(s[:3000], s[:3000])
    with pytest.raises(ValueError):
        stoi(s[:100], s)
