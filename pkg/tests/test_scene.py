import numpy as np
import pytest

from casnet.scene import (
    NoiseSpec,
    Room,
    SceneSpec,
    image_method_rir,
    image_sources,
    load_scene_spec,
    random_scene,
    render_scene,
    save_scene_spec,
    synth_noise,
    synth_speech,
)

FS = 16000
ROOM = Room(dims=(6.0, 5.0, 3.0), absorption=0.5, max_order=1)


def test_order_zero_single_integer_delay_impulse():
    # distance chosen so the delay is exactly 100 samples
    d = 100 * ROOM.c / FS
    src = (1.0, 1.0, 1.0)
    mic = (1.0 + d, 1.0, 1.0)
    h = image_method_rir(ROOM, src, mic, order=0, fs=FS)
    peak = np.argmax(np.abs(h))
    assert peak == 100
    assert h[100] == pytest.approx(1.0 / (4 * np.pi * d), rel=1e-9)
    others = h.copy()
    others[100] = 0.0
    assert np.max(np.abs(others)) < 1e-12


def test_order_one_has_direct_plus_six_images():
    pulses = image_sources(ROOM, (2.0, 2.0, 1.5), (3.0, 2.5, 1.2), order=1)
    assert len(pulses) == 7


def test_doubling_distance_halves_direct_amplitude():
    src = (1.0, 2.0, 1.5)
    p1 = image_sources(ROOM, src, (2.0, 2.0, 1.5), order=0)
    p2 = image_sources(ROOM, src, (3.0, 2.0, 1.5), order=0)
    assert p1[0][1] == pytest.approx(2 * p2[0][1], rel=1e-12)


def test_coincident_geometry_rejected():
    with pytest.raises(ValueError, match="coincident"):
        image_sources(ROOM, (1.0, 1.0, 1.0), (1.0, 1.0, 1.0), order=1)


def test_room_and_scene_validation():
    with pytest.raises(ValueError):
        Room(dims=(0.0, 5.0, 3.0))
    with pytest.raises(ValueError):
        Room(dims=(4, 4, 3), absorption=1.5)
    with pytest.raises(ValueError):
        SceneSpec(ROOM, (1, 1, 1), [(9.0, 1, 1)], [NoiseSpec((2, 2, 2))])
    with pytest.raises(ValueError):
        SceneSpec(ROOM, (1, 1, 1), [(2, 2, 2)], [])
    with pytest.raises(ValueError):
        SceneSpec(ROOM, (1, 1, 1), [(2, 2, 2)], [NoiseSpec((2, 2, 1))] * 4)


def _small_scene(m=2, snr=0.0, order=1):
    room = Room(dims=(6.0, 5.0, 3.0), absorption=0.5, max_order=order)
    mics = [(2.0 + 0.3 * i, 2.0, 1.5) for i in range(m)]
    return SceneSpec(
        room=room,
        source_pos=(4.0, 3.0, 1.6),
        mic_pos=mics,
        noise_specs=[NoiseSpec((1.0, 4.0, 1.2))],
        snr_db=snr,
    )


def test_render_snr_exact_at_reference():
    spec = _small_scene(snr=0.0)
    speech = synth_speech(1.5, seed=1)
    noise = synth_noise(1.5, seed=2)
    res = render_scene(spec, speech, [noise])
    p_s = np.mean(res.speech_images[0] ** 2)
    p_n = np.mean(res.noise_images[0] ** 2)
    assert abs(p_s - p_n) <= 1e-6 * p_s
    spec5 = _small_scene(snr=5.0)
    res5 = render_scene(spec5, speech, [noise])
    ratio = np.mean(res5.speech_images[0] ** 2) / np.mean(res5.noise_images[0] ** 2)
    assert 10 * np.log10(ratio) == pytest.approx(5.0, abs=1e-9)


def test_render_additivity_identity():
    spec = _small_scene()
    res = render_scene(spec, synth_speech(1.2, seed=3), [synth_noise(1.2, seed=4)])
    recon = res.speech_images + res.noise_images
    assert np.max(np.abs(res.mixes - recon)) <= 1e-12


def test_render_target_is_reference_speech_image():
    spec = _small_scene()
    res = render_scene(spec, synth_speech(1.2, seed=5), [synth_noise(1.2, seed=6)])
    assert np.array_equal(res.target, res.speech_images[0])
    spec.target = "direct-path"
    res_d = render_scene(spec, synth_speech(1.2, seed=5), [synth_noise(1.2, seed=6)])
    assert not np.array_equal(res_d.target, res.target)


def test_anechoic_propagation_delay_between_mics():
    room = Room(dims=(20.0, 10.0, 5.0), absorption=0.5, max_order=0)
    d = 1.5
    spec = SceneSpec(
        room=room,
        source_pos=(2.0, 5.0, 2.5),
        mic_pos=[(2.0 + d, 5.0, 2.5), (2.0 + 2 * d, 5.0, 2.5)],
        noise_specs=[NoiseSpec((18.0, 8.0, 2.0))],
        snr_db=40.0,
    )
    speech = synth_speech(1.0, seed=7)
    res = render_scene(spec, speech, [synth_noise(1.0, seed=8)])
    a, b = res.speech_images[0], res.speech_images[1]
    lags = np.arange(-300, 301)
    xc = [np.dot(a[300:-300], b[300 + lag : len(b) - 300 + lag]) for lag in lags]
    peak_lag = lags[int(np.argmax(xc))]
    expected = d / room.c * FS
    assert abs(peak_lag - expected) <= 1.0


def test_render_deterministic():
    spec = _small_scene()
    speech = synth_speech(1.1, seed=9)
    noise = synth_noise(1.1, seed=10)
    r1 = render_scene(spec, speech, [noise])
    r2 = render_scene(spec, speech, [noise])
    assert np.array_equal(r1.mixes, r2.mixes)
    assert np.array_equal(r1.target, r2.target)


def test_render_errors():
    spec = _small_scene()
    with pytest.raises(ValueError, match="degenerate source"):
        render_scene(spec, np.zeros(FS * 2), [synth_noise(2.0, seed=1)])
    with pytest.raises(ValueError, match="one second"):
        render_scene(spec, synth_speech(0.5, seed=1), [synth_noise(0.5, seed=1)])
    with pytest.raises(ValueError, match="noise waveforms"):
        render_scene(spec, synth_speech(1.1, seed=1), [])


@pytest.mark.parametrize("m", [1, 4, 12])
def test_channel_count_generality(m):
    spec = random_scene(seed=m, n_mics=m, snr_db=0.0, n_noises=1)
    res = render_scene(spec, synth_speech(1.0, seed=m), [synth_noise(1.0, seed=m)])
    assert res.mixes.shape[0] == m


def test_scene_spec_yaml_round_trip(tmp_path):
    spec = random_scene(seed=3, n_mics=4)
    path = tmp_path / "scene.yaml"
    save_scene_spec(spec, path)
    loaded = load_scene_spec(path)
    assert loaded.n_mics == 4
    assert loaded.room.dims == spec.room.dims
    assert loaded.snr_db == spec.snr_db
    assert [n.position for n in loaded.noise_specs] == [
        n.position for n in spec.noise_specs
    ]
    with open(path, "w") as fh:
        fh.write("room: {}\n")
    with pytest.raises(ValueError, match="malformed"):
        load_scene_spec(path)
