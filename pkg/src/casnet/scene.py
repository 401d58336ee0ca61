"""Multichannel scene synthesis: image-method RIRs and SNR-controlled mixing."""

import math
from dataclasses import dataclass, field

import numpy as np
import yaml
from scipy.signal import fftconvolve

# Fractional delays use an 81-tap Hann-windowed sinc; sample-rounded delays
# would distort the TDOA tests.
_SINC_HALF = 40


@dataclass(frozen=True)
class Room:
    """Shoebox room with uniform wall absorption.

    absorption is the energy absorption coefficient; the per-reflection
    amplitude factor is sqrt(1 - absorption). max_order 0 means anechoic.
    """

    dims: tuple[float, float, float]
    absorption: float = 0.5
    max_order: int = 2
    c: float = 343.0

    def __post_init__(self):
        if len(self.dims) != 3 or any(d <= 0 for d in self.dims):
            raise ValueError("room dims must be three positive lengths")
        if not 0.0 < self.absorption <= 1.0:
            raise ValueError("absorption must be in (0, 1]")
        if self.max_order < 0:
            raise ValueError("max_order must be >= 0")
        if self.c <= 0:
            raise ValueError("speed of sound must be positive")

    def contains(self, pos) -> bool:
        return all(0.0 < p < d for p, d in zip(pos, self.dims))


@dataclass(frozen=True)
class NoiseSpec:
    position: tuple[float, float, float]
    wav: str | None = None  # synthesized when omitted


@dataclass
class SceneSpec:
    room: Room
    source_pos: tuple[float, float, float]
    mic_pos: list
    noise_specs: list
    snr_db: float = 0.0
    seed: int = 0
    target: str = "reverberant"  # or "direct-path"

    def __post_init__(self):
        if len(self.mic_pos) < 1:
            raise ValueError("need at least one microphone")
        if not 1 <= len(self.noise_specs) <= 3:
            raise ValueError("noise source count must be in [1, 3]")
        for p in [self.source_pos, *self.mic_pos] + [n.position for n in self.noise_specs]:
            if not self.room.contains(p):
                raise ValueError(f"position {tuple(p)} is not strictly inside the room")
        if not math.isfinite(self.snr_db):
            raise ValueError("snr_db must be finite")
        if self.target not in ("reverberant", "direct-path"):
            raise ValueError(f"unknown target mode {self.target!r}")

    @property
    def n_mics(self) -> int:
        return len(self.mic_pos)


def image_sources(room: Room, src, mic, order: int):
    """Image-source pulse list up to the given reflection order.

    Returns (delay_seconds, amplitude) pairs: one direct path plus one entry
    per image whose total wall-bounce count is <= order.
    """
    src = np.asarray(src, dtype=np.float64)
    mic = np.asarray(mic, dtype=np.float64)
    if np.array_equal(src, mic):
        raise ValueError("coincident geometry: source and microphone overlap")
    if order < 0:
        raise ValueError("order must be >= 0")
    beta = math.sqrt(1.0 - room.absorption)
    dims = np.asarray(room.dims)
    pulses = []
    rng_r = range(-order, order + 1)
    for qx in (0, 1):
        for qy in (0, 1):
            for qz in (0, 1):
                q = np.array([qx, qy, qz])
                for rx in rng_r:
                    for ry in rng_r:
                        for rz in rng_r:
                            r = np.array([rx, ry, rz])
                            bounces = int(np.sum(np.abs(r - q)) + np.sum(np.abs(r)))
                            if bounces > order:
                                continue
                            pos = (1 - 2 * q) * src + 2 * r * dims
                            d = float(np.linalg.norm(pos - mic))
                            pulses.append((d / room.c, beta**bounces / (4.0 * math.pi * d)))
    return pulses


def image_method_rir(room: Room, src, mic, order: int, fs: int) -> np.ndarray:
    """Room impulse response as a sum of fractional-delay sinc pulses."""
    pulses = image_sources(room, src, mic, order)
    max_delay = max(p[0] for p in pulses) * fs
    n = int(math.floor(max_delay)) + _SINC_HALF + 2
    h = np.zeros(n)
    for delay_s, amp in pulses:
        delay = delay_s * fs
        lo = max(0, int(math.ceil(delay)) - _SINC_HALF)
        hi = min(n - 1, int(math.floor(delay)) + _SINC_HALF)
        t = np.arange(lo, hi + 1) - delay
        kernel = np.sinc(t) * (0.5 + 0.5 * np.cos(np.pi * t / (_SINC_HALF + 0.5)))
        h[lo : hi + 1] += amp * kernel
    return h


@dataclass
class RenderResult:
    """Per-channel mixture decomposition of one rendered scene."""

    mixes: np.ndarray  # (M, N)
    target: np.ndarray  # (N,) clean component at the reference channel
    speech_images: np.ndarray  # (M, N) speech convolved with each RIR
    noise_images: np.ndarray  # (M, N) summed scaled noise at each mic
    snr_db: float


def _convolve_trunc(x: np.ndarray, h: np.ndarray, n: int) -> np.ndarray:
    return fftconvolve(x, h)[:n]


def _fit_length(x: np.ndarray, n: int) -> np.ndarray:
    if len(x) >= n:
        return x[:n]
    reps = int(math.ceil(n / len(x)))
    return np.tile(x, reps)[:n]


def render_scene(spec: SceneSpec, speech: np.ndarray, noises: list, fs: int = 16000) -> RenderResult:
    """Mix reverberant speech and noise images at a prescribed reference SNR.

    Every mic hears speech convolved with its RIR plus the scaled sum of all
    noise images; the scale makes speech/noise power at the reference channel
    (index 0) match spec.snr_db. The returned target is the clean speech
    component at the reference, reverberant or direct-path per spec.target.
    """
    speech = np.asarray(speech, dtype=np.float64)
    if len(speech) < fs:
        raise ValueError("speech must be at least one second long")
    if float(np.dot(speech, speech)) == 0.0:
        raise ValueError("degenerate source: speech has zero power")
    if len(noises) != len(spec.noise_specs):
        raise ValueError(
            f"expected {len(spec.noise_specs)} noise waveforms, got {len(noises)}"
        )
    n = len(speech)
    m = spec.n_mics
    room = spec.room

    speech_images = np.zeros((m, n))
    for i, mic in enumerate(spec.mic_pos):
        h = image_method_rir(room, spec.source_pos, mic, room.max_order, fs)
        speech_images[i] = _convolve_trunc(speech, h, n)

    noise_images = np.zeros((m, n))
    for ns, wav in zip(spec.noise_specs, noises):
        x = _fit_length(np.asarray(wav, dtype=np.float64), n)
        for i, mic in enumerate(spec.mic_pos):
            h = image_method_rir(room, ns.position, mic, room.max_order, fs)
            noise_images[i] += _convolve_trunc(x, h, n)

    p_speech = float(np.mean(speech_images[0] ** 2))
    p_noise = float(np.mean(noise_images[0] ** 2))
    if p_noise == 0.0:
        raise ValueError("degenerate noise: zero power at the reference")
    gain = math.sqrt(p_speech / (p_noise * 10.0 ** (spec.snr_db / 10.0)))
    noise_images = noise_images * gain

    if spec.target == "direct-path":
        h0 = image_method_rir(room, spec.source_pos, spec.mic_pos[0], 0, fs)
        target = _convolve_trunc(speech, h0, n)
    else:
        target = speech_images[0].copy()

    return RenderResult(
        mixes=speech_images + noise_images,
        target=target,
        speech_images=speech_images,
        noise_images=noise_images,
        snr_db=spec.snr_db,
    )


# --- synthetic program material ----------------------------------------------


def synth_speech(duration_s: float, fs: int = 16000, seed: int = 0) -> np.ndarray:
    """Speech-shaped test signal: modulated harmonic voicing plus breath noise."""
    rng = np.random.default_rng(seed)
    n = int(duration_s * fs)
    t = np.arange(n) / fs
    f0 = 110.0 + 30.0 * np.sin(2 * np.pi * 0.7 * t + rng.uniform(0, 2 * np.pi))
    phase = 2 * np.pi * np.cumsum(f0) / fs
    voiced = sum(
        (0.7**k) * np.sin((k + 1) * phase + rng.uniform(0, 2 * np.pi)) for k in range(8)
    )
    # syllabic energy envelope, ~4 Hz
    env = 0.5 * (1 + np.sin(2 * np.pi * 3.7 * t + rng.uniform(0, 2 * np.pi)))
    env = env**2 + 0.05
    breath = rng.standard_normal(n)
    b = np.fft.rfft(breath)
    freqs = np.fft.rfftfreq(n, 1 / fs)
    b *= np.exp(-freqs / 2500.0)
    breath = np.fft.irfft(b, n)
    x = env * (voiced + 1.5 * breath)
    return 0.3 * x / np.max(np.abs(x))


def synth_noise(duration_s: float, fs: int = 16000, seed: int = 0, kind: str = "pink") -> np.ndarray:
    """Seeded broadband noise, white or 1/f-shaped."""
    rng = np.random.default_rng(seed)
    n = int(duration_s * fs)
    x = rng.standard_normal(n)
    if kind == "white":
        return 0.1 * x
    if kind == "pink":
        spec = np.fft.rfft(x)
        freqs = np.fft.rfftfreq(n, 1 / fs)
        spec[1:] /= np.sqrt(freqs[1:])
        spec[0] = 0.0
        x = np.fft.irfft(spec, n)
        return 0.1 * x / np.std(x)
    raise ValueError(f"unknown noise kind {kind!r}")


def random_scene(
    seed: int,
    n_mics: int = 6,
    snr_db: float | None = None,
    n_noises: int | None = None,
    near_reference: bool = False,
) -> SceneSpec:
    """Randomized but valid scene geometry, deterministic in the seed.

    near_reference places the first microphone (the fusion center) within
    arm's reach of the talker, the usual assignment when one device doubles
    as the reference.
    """
    rng = np.random.default_rng(seed)
    dims = tuple(rng.uniform(4.0, 9.0, size=3))
    dims = (dims[0], dims[1], min(dims[2], 3.5))
    room = Room(dims=dims, absorption=float(rng.uniform(0.3, 0.9)), max_order=2)

    def pos():
        return tuple(rng.uniform(0.4, np.asarray(dims) - 0.4))

    if n_noises is None:
        n_noises = int(rng.integers(1, 4))
    if snr_db is None:
        snr_db = float(rng.uniform(-5.0, 15.0))
    source = pos()
    mics = [pos() for _ in range(n_mics)]
    if near_reference and n_mics >= 1:
        ref = np.asarray(source) + rng.uniform(-1.0, 1.0, 3) * [0.6, 0.6, 0.2]
        ref = np.clip(ref, 0.4, np.asarray(dims) - 0.4)
        if np.array_equal(ref, np.asarray(source)):
            ref[0] += 0.1
        mics[0] = tuple(ref)
    return SceneSpec(
        room=room,
        source_pos=source,
        mic_pos=mics,
        noise_specs=[NoiseSpec(position=pos()) for _ in range(n_noises)],
        snr_db=snr_db,
        seed=seed,
    )


# --- config file --------------------------------------------------------------


def save_scene_spec(spec: SceneSpec, path):
    doc = {
        "room": {
            "dims": [float(d) for d in spec.room.dims],
            "absorption": spec.room.absorption,
            "max_order": spec.room.max_order,
            "c": spec.room.c,
        },
        "source": [float(v) for v in spec.source_pos],
        "mics": [[float(v) for v in p] for p in spec.mic_pos],
        "noises": [
            {"pos": [float(v) for v in ns.position], **({"wav": ns.wav} if ns.wav else {})}
            for ns in spec.noise_specs
        ],
        "snr_db": float(spec.snr_db),
        "seed": int(spec.seed),
        "target": spec.target,
    }
    with open(path, "w") as fh:
        yaml.safe_dump(doc, fh, sort_keys=False)


def load_scene_spec(path) -> SceneSpec:
    with open(path) as fh:
        doc = yaml.safe_load(fh)
    try:
        room = Room(
            dims=tuple(doc["room"]["dims"]),
            absorption=float(doc["room"].get("absorption", 0.5)),
            max_order=int(doc["room"].get("max_order", 2)),
            c=float(doc["room"].get("c", 343.0)),
        )
        return SceneSpec(
            room=room,
            source_pos=tuple(doc["source"]),
            mic_pos=[tuple(p) for p in doc["mics"]],
            noise_specs=[
                NoiseSpec(position=tuple(n["pos"]), wav=n.get("wav")) for n in doc["noises"]
            ],
            snr_db=float(doc.get("snr_db", 0.0)),
            seed=int(doc.get("seed", 0)),
            target=doc.get("target", "reverberant"),
        )
    except (KeyError, TypeError) as exc:
        raise ValueError(f"{path}: malformed scene config ({exc})") from exc
