"""WAV file I/O: mono PCM16/float32, optional linear-interpolation resampling."""

import numpy as np
from scipy.io import wavfile


def read_wav(path, target_fs: int = 16000, resample: bool = True):
    """Load a mono WAV as float64 in [-1, 1] at target_fs.

    Files at other rates are resampled by linear interpolation unless
    resample=False, in which case a rate mismatch raises.
    """
    fs, data = wavfile.read(path)
    if data.ndim != 1:
        raise ValueError(f"{path}: expected mono, got {data.shape[1]} channels")
    if data.dtype == np.int16:
        x = data.astype(np.float64) / 32768.0
    elif data.dtype == np.int32:
        x = data.astype(np.float64) / 2147483648.0
    elif data.dtype in (np.float32, np.float64):
        x = data.astype(np.float64)
    else:
        raise ValueError(f"{path}: unsupported sample format {data.dtype}")
    if fs != target_fs:
        if not resample:
            raise ValueError(f"{path}: sample rate {fs} != {target_fs} and resampling disabled")
        n_out = int(round(len(x) * target_fs / fs))
        t_in = np.arange(len(x)) / fs
        t_out = np.arange(n_out) / target_fs
        x = np.interp(t_out, t_in, x)
    return x, target_fs


def write_wav(path, x: np.ndarray, fs: int = 16000, fmt: str = "float32"):
    """Write a mono waveform as float32 (default) or clipped PCM16."""
    x = np.asarray(x, dtype=np.float64)
    if fmt == "float32":
        wavfile.write(path, fs, x.astype(np.float32))
    elif fmt == "pcm16":
        scaled = np.clip(np.round(x * 32767.0), -32768, 32767).astype(np.int16)
        wavfile.write(path, fs, scaled)
    else:
        raise ValueError(f"unsupported format {fmt!r}")
