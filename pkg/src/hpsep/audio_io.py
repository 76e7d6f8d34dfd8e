"""WAV reading and writing.

Readable inputs are RIFF/WAVE files holding 16-bit PCM or 32-bit IEEE
float, mono or stereo; stereo is downmixed by averaging the channels.
Everything downstream runs at 44.1 kHz, so other rates are rejected
unless explicitly waived (there is no resampler here). Output is always
float-32 mono, which round-trips bit-exactly.
"""

from __future__ import annotations

import numpy as np
from scipy.io import wavfile

__all__ = ["AudioError", "SAMPLE_RATE", "read_wav", "write_wav"]

SAMPLE_RATE = 44100
_PCM16_SCALE = 32768.0


class AudioError(ValueError):
    """Unreadable, unsupported, or wrong-rate audio file."""


def read_wav(path, allow_other_rate=False):
    """Read a WAV file into (float64 mono samples, sample rate).

    16-bit PCM is scaled by 1/32768 so full-scale positive reads as
    32767/32768. Stereo becomes the mean of the two channels.
    """
    try:
        rate, data = wavfile.read(path)
    except FileNotFoundError:
        raise
    except Exception as exc:  # scipy raises bare ValueError on bad RIFF data
        raise AudioError(f"cannot read {path}: {exc}") from exc

    if data.dtype == np.int16:
        samples = data.astype(np.float64) / _PCM16_SCALE
    elif data.dtype == np.float32:
        samples = data.astype(np.float64)
    else:
        raise AudioError(
            f"{path}: unsupported sample format {data.dtype}; "
            "expected 16-bit PCM or 32-bit float"
        )

    if samples.ndim == 2:
        if samples.shape[1] not in (1, 2):
            raise AudioError(f"{path}: expected mono or stereo, got {samples.shape[1]} channels")
        samples = samples.mean(axis=1)
    elif samples.ndim != 1:
        raise AudioError(f"{path}: unexpected sample layout {samples.shape}")

    if rate != SAMPLE_RATE and not allow_other_rate:
        raise AudioError(
            f"{path}: sample rate {rate} Hz, expected {SAMPLE_RATE} Hz "
            "(pass --resample-off-ok to accept it unresampled)"
        )
    return samples, rate


def write_wav(path, samples, rate=SAMPLE_RATE):
    """Write mono float-32 samples."""
    samples = np.asarray(samples)
    if samples.ndim != 1:
        raise AudioError(f"refusing to write non-mono data of shape {samples.shape}")
    if not np.all(np.isfinite(samples)):
        raise AudioError("refusing to write non-finite samples")
    wavfile.write(path, int(rate), samples.astype(np.float32))
