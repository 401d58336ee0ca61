"""Objective quality metrics (SI-SDR, STOI) and transmission accounting (NSA)."""

from dataclasses import dataclass

import numpy as np
from scipy.signal import resample_poly

SI_SDR_CAP_DB = 100.0


@dataclass(frozen=True)
class NsaReport:
    """Transmitted-sample accounting for one compressed stream.

    nsa is the per-microphone ratio of sent samples, T*(D+F')*a, to raw audio
    samples. asymptotic drops the edge effects: (D+F')*a/hop.
    """

    T: int
    D: int
    F_prime: int
    a: int
    hop: int
    total_samples_sent: int
    raw_samples: int
    nsa: float
    asymptotic: float


def nsa(
    T: int,
    D: int,
    F_prime: int,
    a: int,
    signal_len: int,
    fs: int = 16000,
    hop: int = 256,
) -> NsaReport:
    """Exact and asymptotic normalized sample amount for rank-a feature sending."""
    if min(T, D, F_prime, a, signal_len, fs, hop) <= 0:
        raise ValueError("all NSA inputs must be positive")
    sent = T * (D + F_prime) * a
    return NsaReport(
        T=T,
        D=D,
        F_prime=F_prime,
        a=a,
        hop=hop,
        total_samples_sent=sent,
        raw_samples=signal_len,
        nsa=sent / signal_len,
        asymptotic=(D + F_prime) * a / hop,
    )


def si_sdr(est: np.ndarray, ref: np.ndarray) -> float:
    """Scale-invariant signal-to-distortion ratio in dB, capped at +/-100.

    The reference is scaled by the optimal projection coefficient before the
    distortion ratio is formed, so the score ignores any global gain on est.
    """
    est = np.asarray(est, dtype=np.float64)
    ref = np.asarray(ref, dtype=np.float64)
    if est.shape != ref.shape:
        raise ValueError(f"length mismatch: {est.shape} vs {ref.shape}")
    ref_energy = float(np.dot(ref, ref))
    if ref_energy == 0.0:
        raise ValueError("reference signal is identically zero")
    alpha = float(np.dot(est, ref)) / ref_energy
    target = alpha * ref
    err = est - target
    num = float(np.dot(target, target))
    den = float(np.dot(err, err))
    if den == 0.0:
        return SI_SDR_CAP_DB
    if num == 0.0:
        return -SI_SDR_CAP_DB
    return float(np.clip(10.0 * np.log10(num / den), -SI_SDR_CAP_DB, SI_SDR_CAP_DB))


# --- STOI -------------------------------------------------------------------
# Band-correlation intelligibility metric: 1/3-octave energies at 10 kHz,
# 384 ms analysis segments, clipped normalized correlations averaged over
# bands and segments.

_STOI_FS = 10000
_STOI_FRAME = 256
_STOI_HOP = 128
_STOI_NFFT = 512
_STOI_NBANDS = 15
_STOI_MINFREQ = 150.0
_STOI_SEG = 30  # frames per segment (384 ms)
_STOI_BETA = -15.0  # clipping SDR floor, dB
_STOI_DYN_RANGE = 40.0  # silent-frame threshold below peak, dB


def _third_octave_bands() -> np.ndarray:
    """Boolean (bands, bins) matrix; edges snapped to nearest FFT bin."""
    freqs = np.linspace(0, _STOI_FS, _STOI_NFFT + 1)[: _STOI_NFFT // 2 + 1]
    k = np.arange(_STOI_NBANDS)
    cf = _STOI_MINFREQ * 2.0 ** (k / 3.0)
    lo = cf * 2.0 ** (-1.0 / 6.0)
    hi = cf * 2.0 ** (1.0 / 6.0)
    bands = np.zeros((_STOI_NBANDS, len(freqs)), dtype=bool)
    for i in range(_STOI_NBANDS):
        lo_bin = int(np.argmin((freqs - lo[i]) ** 2))
        hi_bin = int(np.argmin((freqs - hi[i]) ** 2))
        bands[i, lo_bin:hi_bin] = True
    return bands


def _frame_starts(n: int) -> np.ndarray:
    return np.arange(0, n - _STOI_FRAME + 1, _STOI_HOP)


def _remove_silent_frames(x: np.ndarray, y: np.ndarray):
    """Drop frames more than 40 dB below the loudest reference frame.

    Kept frames are Hann-windowed and overlap-added back into shorter signals
    so both inputs stay sample-aligned.
    """
    starts = _frame_starts(len(x))
    win = np.hanning(_STOI_FRAME + 2)[1:-1]
    energies = np.array(
        [20.0 * np.log10(np.linalg.norm(x[s : s + _STOI_FRAME] * win) + 1e-300) for s in starts]
    )
    keep = energies - np.max(energies) + _STOI_DYN_RANGE > 0
    n_keep = int(np.sum(keep))
    if n_keep == 0:
        raise ValueError("reference contains no active frames")
    out_len = (n_keep - 1) * _STOI_HOP + _STOI_FRAME
    xs = np.zeros(out_len)
    ys = np.zeros(out_len)
    pos = 0
    for s, k in zip(starts, keep):
        if not k:
            continue
        xs[pos : pos + _STOI_FRAME] += x[s : s + _STOI_FRAME] * win
        ys[pos : pos + _STOI_FRAME] += y[s : s + _STOI_FRAME] * win
        pos += _STOI_HOP
    return xs, ys


def _band_energies(x: np.ndarray, bands: np.ndarray) -> np.ndarray:
    starts = _frame_starts(len(x))
    win = np.hanning(_STOI_FRAME + 2)[1:-1]
    frames = np.stack([x[s : s + _STOI_FRAME] * win for s in starts])
    spec = np.fft.rfft(frames, n=_STOI_NFFT, axis=1)
    power = np.abs(spec) ** 2
    return np.sqrt(power @ bands.T)  # (frames, bands)


def stoi(est: np.ndarray, ref: np.ndarray, fs: int = 16000) -> float:
    """Short-time objective intelligibility of est against the clean ref."""
    est = np.asarray(est, dtype=np.float64)
    ref = np.asarray(ref, dtype=np.float64)
    if est.shape != ref.shape:
        raise ValueError(f"length mismatch: {est.shape} vs {ref.shape}")
    if fs != _STOI_FS:
        gcd = np.gcd(int(fs), _STOI_FS)
        est = resample_poly(est, _STOI_FS // gcd, fs // gcd)
        ref = resample_poly(ref, _STOI_FS // gcd, fs // gcd)
    if len(ref) < _STOI_FRAME + (_STOI_SEG - 1) * _STOI_HOP:
        raise ValueError("signal too short for one analysis segment")
    ref, est = _remove_silent_frames(ref, est)
    bands = _third_octave_bands()
    x = _band_energies(ref, bands)  # clean
    y = _band_energies(est, bands)  # processed
    n_frames = x.shape[0]
    if n_frames < _STOI_SEG:
        raise ValueError("too few active frames for one analysis segment")
    clip_gain = 10.0 ** (-_STOI_BETA / 20.0)
    scores = []
    for m in range(_STOI_SEG, n_frames + 1):
        xs = x[m - _STOI_SEG : m, :]  # (30, bands)
        ys = y[m - _STOI_SEG : m, :]
        alpha = np.sqrt(
            np.sum(xs**2, axis=0) / np.maximum(np.sum(ys**2, axis=0), 1e-300)
        )
        ys_scaled = np.minimum(ys * alpha, xs * (1.0 + clip_gain))
        xc = xs - np.mean(xs, axis=0)
        yc = ys_scaled - np.mean(ys_scaled, axis=0)
        denom = np.linalg.norm(xc, axis=0) * np.linalg.norm(yc, axis=0)
        denom = np.maximum(denom, 1e-300)
        scores.append(np.sum(xc * yc, axis=0) / denom)
    return float(np.mean(scores))
