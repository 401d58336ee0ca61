"""STFT analysis/synthesis, input feature maps, and Griffin-Lim reconstruction."""

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class StftConfig:
    """Analysis/synthesis framing parameters.

    win_len must be twice the hop (50% overlap Hann satisfies COLA, so the
    inverse transform is exact on the interior).
    """

    win_len: int = 512
    hop: int = 256
    window: str = "hann"
    fs: int = 16000

    def __post_init__(self):
        if self.window != "hann":
            raise ValueError(f"unsupported window {self.window!r}")
        if self.win_len != 2 * self.hop:
            raise ValueError("win_len must equal 2*hop")
        if self.fs <= 0:
            raise ValueError("fs must be positive")

    @property
    def n_bins(self) -> int:
        return self.win_len // 2 + 1

    def n_frames(self, n_samples: int) -> int:
        if n_samples < self.win_len:
            raise ValueError(
                f"insufficient samples: need at least {self.win_len}, got {n_samples}"
            )
        return 1 + (n_samples - self.win_len) // self.hop


def hann_window(win_len: int) -> np.ndarray:
    """Periodic Hann window."""
    return 0.5 * (1.0 - np.cos(2.0 * np.pi * np.arange(win_len) / win_len))


@dataclass
class Spectrogram:
    """One-sided complex STFT, frames along axis 0, bins along axis 1."""

    data: np.ndarray
    config: StftConfig

    def __post_init__(self):
        self.data = np.asarray(self.data)
        if self.data.ndim != 2 or self.data.shape[1] != self.config.n_bins:
            raise ValueError(
                f"spectrogram must be T x {self.config.n_bins}, got {self.data.shape}"
            )
        if not np.all(np.isfinite(self.data)):
            raise ValueError("spectrogram contains non-finite entries")

    @property
    def n_frames(self) -> int:
        return self.data.shape[0]


def stft(x: np.ndarray, cfg: StftConfig | None = None) -> Spectrogram:
    """Forward STFT without center padding.

    Frame t covers samples [t*hop, t*hop + win_len); T = 1 + (N - win)//hop.
    Raises ValueError if the signal is shorter than one window.
    """
    cfg = cfg or StftConfig()
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise ValueError("expected a mono sample buffer")
    n_frames = cfg.n_frames(len(x))
    win = hann_window(cfg.win_len)
    idx = cfg.hop * np.arange(n_frames)[:, None] + np.arange(cfg.win_len)[None, :]
    frames = x[idx] * win
    return Spectrogram(np.fft.rfft(frames, axis=1), cfg)


def istft(spec: Spectrogram) -> np.ndarray:
    """Inverse STFT by windowed overlap-add.

    Uses the analysis window for synthesis and normalizes by the overlap-added
    squared window, which is exact on the interior. The normalizer is floored
    at 1e-2 so modified spectra cannot blow up where the window sum vanishes;
    the affected samples are only the outermost taper of the first and last
    window. Output length is (T-1)*hop + win_len.
    """
    cfg = spec.config
    win = hann_window(cfg.win_len)
    frames = np.fft.irfft(spec.data, n=cfg.win_len, axis=1) * win
    n_out = (spec.n_frames - 1) * cfg.hop + cfg.win_len
    out = np.zeros(n_out)
    norm = np.zeros(n_out)
    for t in range(spec.n_frames):
        lo = t * cfg.hop
        out[lo : lo + cfg.win_len] += frames[t]
        norm[lo : lo + cfg.win_len] += win * win
    out /= np.maximum(norm, 1e-2)
    return out


@dataclass
class InputFeature:
    """Per-channel network input: stacked (compressed magnitude, cos, sin) maps."""

    maps: np.ndarray  # (3, T, F)

    def __post_init__(self):
        self.maps = np.asarray(self.maps)
        if self.maps.ndim != 3 or self.maps.shape[0] != 3:
            raise ValueError(f"feature maps must be 3 x T x F, got {self.maps.shape}")


def extract_features(spec: Spectrogram, alpha: float = 0.5) -> InputFeature:
    """Power-compressed magnitude plus unit-circle phase maps.

    Zero-magnitude bins have undefined phase; they get (cos, sin) = (1, 0)
    so the maps stay finite and unit-norm.
    """
    if not 0.0 < alpha <= 1.0:
        raise ValueError("alpha must be in (0, 1]")
    mag = np.abs(spec.data)
    nz = mag > 0.0
    cos = np.ones_like(mag)
    sin = np.zeros_like(mag)
    cos[nz] = spec.data.real[nz] / mag[nz]
    sin[nz] = spec.data.imag[nz] / mag[nz]
    return InputFeature(np.stack([mag**alpha, cos, sin]))


def griffin_lim(
    mag: np.ndarray,
    init_phase: np.ndarray,
    cfg: StftConfig | None = None,
    iters: int = 1,
) -> np.ndarray:
    """Phase refinement by alternating synthesis and re-analysis.

    Each iteration resynthesizes the current estimate, re-analyzes it, and
    keeps the new phase under the fixed target magnitude. iters=0 is plain
    inverse STFT of mag*exp(i*init_phase).
    """
    cfg = cfg or StftConfig()
    mag = np.asarray(mag, dtype=np.float64)
    if np.any(mag < 0):
        raise ValueError("magnitude must be non-negative")
    if iters < 0:
        raise ValueError("iters must be >= 0")
    spec = mag * np.exp(1j * np.asarray(init_phase, dtype=np.float64))
    for _ in range(iters):
        x = istft(Spectrogram(spec, cfg))
        spec = mag * np.exp(1j * np.angle(stft(x, cfg).data))
    return istft(Spectrogram(spec, cfg))
