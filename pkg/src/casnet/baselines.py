"""Oracle MVDR beamformer: true spatial covariances, distortionless reference gain."""

from dataclasses import dataclass

import numpy as np

from .dsp import Spectrogram, istft


@dataclass
class SpatialCovariance:
    """Per-frequency Hermitian M x M covariances of the speech and noise parts."""

    speech: np.ndarray  # (F, M, M)
    noise: np.ndarray  # (F, M, M), diagonally loaded

    def __post_init__(self):
        if self.speech.shape != self.noise.shape or self.speech.ndim != 3:
            raise ValueError("covariance stacks must share an (F, M, M) shape")

    @property
    def n_mics(self) -> int:
        return self.speech.shape[1]


def _stack(stfts: list[Spectrogram]) -> np.ndarray:
    data = np.stack([s.data for s in stfts])  # (M, T, F)
    if any(s.data.shape != stfts[0].data.shape for s in stfts):
        raise ValueError("channels disagree on STFT shape")
    return data


def estimate_oracle_cov(
    speech_stfts: list[Spectrogram], noise_stfts: list[Spectrogram]
) -> SpatialCovariance:
    """Time-averaged outer products of the true speech and noise components.

    Requires at least M frames so the averages are not trivially rank
    deficient; the noise covariance gets 1e-6 * trace/M diagonal loading.
    """
    s = _stack(speech_stfts)
    n = _stack(noise_stfts)
    if s.shape != n.shape:
        raise ValueError("speech and noise STFT stacks must align")
    m, t, _ = s.shape
    if t < m:
        raise ValueError(f"rank deficient: {t} frames for {m} channels")
    r_s = np.einsum("mtf,ntf->fmn", s, np.conj(s)) / t
    r_n = np.einsum("mtf,ntf->fmn", n, np.conj(n)) / t
    load = 1e-6 * np.trace(r_n, axis1=1, axis2=2).real / m
    r_n = r_n + load[:, None, None] * np.eye(m)
    return SpatialCovariance(speech=r_s, noise=r_n)


def steering_vectors(cov: SpatialCovariance, ref: int = 0) -> np.ndarray:
    """Principal speech eigenvector per frequency, scaled to unit reference gain."""
    _, m, _ = cov.speech.shape
    _, vecs = np.linalg.eigh(cov.speech)
    d = vecs[:, :, -1]  # top eigenvector per frequency
    ref_entry = d[:, ref]
    scale = np.abs(ref_entry)
    if np.any(scale < 1e-12):
        raise ValueError("reference channel carries no speech at some frequency")
    return d / ref_entry[:, None]


def mvdr_enhance(
    mix_stfts: list[Spectrogram], cov: SpatialCovariance, ref: int = 0
) -> np.ndarray:
    """Classical w = Rn^-1 d / (d^H Rn^-1 d) filter-and-sum, then inverse STFT."""
    x = _stack(mix_stfts)  # (M, T, F)
    m = x.shape[0]
    if cov.n_mics != m:
        raise ValueError("covariance channel count does not match mixture")
    d = steering_vectors(cov, ref)  # (F, M)
    try:
        rinv_d = np.linalg.solve(cov.noise, d[:, :, None])[:, :, 0]  # (F, M)
    except np.linalg.LinAlgError as exc:
        raise ValueError("noise covariance is singular despite loading") from exc
    denom = np.einsum("fm,fm->f", np.conj(d), rinv_d)
    if np.any(np.abs(denom) < 1e-300):
        raise ValueError("degenerate MVDR denominator")
    w = rinv_d / denom[:, None]
    out = np.einsum("fm,mtf->tf", np.conj(w), x)
    return istft(Spectrogram(out, mix_stfts[0].config))
