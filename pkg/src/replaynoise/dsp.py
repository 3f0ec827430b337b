"""Waveform I/O and spectrogram front-end.

Turns 16 kHz mono recordings into fixed-size, mean-normalized log-power
spectrograms for the detector network: 25 ms Hamming frames, 10 ms shift,
512-point FFT (257 bins), natural log of the power spectrum with a small
floor.  Utterances are cropped or tiled to a fixed frame count so every
network input has the same shape.
"""

from __future__ import annotations

import struct
import wave
from dataclasses import dataclass
from pathlib import Path

import numpy as np

DEFAULT_SAMPLE_RATE = 16000
FRAME_LEN = 400       # 25 ms at 16 kHz
FRAME_SHIFT = 160     # 10 ms at 16 kHz
N_FFT = 512
N_BINS = N_FFT // 2 + 1
LOG_FLOOR = 1e-10
TARGET_FRAMES = 400   # 4 s of frames at 10 ms shift

_PCM_SCALE = 32768.0  # symmetric int16 <-> float scaling, exact round trip
_FEATURE_MAGIC = b"SPEC"


class WavFormatError(ValueError):
    """Raised when a WAV file is not PCM-16 mono."""


@dataclass
class Waveform:
    """Mono audio: 1-D float samples in [-1, 1] plus a sample rate in Hz."""

    samples: np.ndarray
    sample_rate: int = DEFAULT_SAMPLE_RATE

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.ndim != 1 or self.samples.size == 0:
            raise ValueError("waveform samples must be a non-empty 1-D sequence")
        if not np.isfinite(self.samples).all():
            raise ValueError("waveform samples must be finite")
        if self.sample_rate <= 0:
            raise ValueError(f"sample_rate must be positive, got {self.sample_rate}")

    def __len__(self) -> int:
        return self.samples.size

    @property
    def duration(self) -> float:
        return self.samples.size / self.sample_rate


def read_wav(path: str | Path) -> Waveform:
    """Read a RIFF PCM-16 mono WAV file into a float waveform.

    Samples are scaled by 1/32768 so the output lies in [-1, 1).

    Raises:
        FileNotFoundError: if the file does not exist.
        WavFormatError: for compressed, multi-channel, or non-16-bit files,
            naming the offending field.
    """
    with wave.open(str(path), "rb") as f:
        if f.getcomptype() != "NONE":
            raise WavFormatError(f"compression type must be NONE (PCM), got {f.getcomptype()!r}")
        if f.getnchannels() != 1:
            raise WavFormatError(f"channel count must be 1 (mono), got {f.getnchannels()}")
        if f.getsampwidth() != 2:
            raise WavFormatError(f"sample width must be 2 bytes (PCM 16-bit), got {f.getsampwidth()}")
        sample_rate = f.getframerate()
        raw = f.readframes(f.getnframes())
    samples = np.frombuffer(raw, dtype="<i2").astype(np.float64) / _PCM_SCALE
    return Waveform(samples, sample_rate)


def write_wav(path: str | Path, w: Waveform) -> None:
    """Write a waveform as RIFF PCM-16 mono. Values are clipped to full scale."""
    ints = np.clip(np.rint(w.samples * _PCM_SCALE), -32768, 32767).astype("<i2")
    with wave.open(str(path), "wb") as f:
        f.setnchannels(1)
        f.setsampwidth(2)
        f.setframerate(w.sample_rate)
        f.writeframes(ints.tobytes())


def num_frames(n_samples: int, frame_len: int = FRAME_LEN, frame_shift: int = FRAME_SHIFT) -> int:
    """Frame count of an STFT without edge padding: 1 + floor((n - len)/shift)."""
    if n_samples < frame_len:
        raise ValueError(f"signal too short for one frame: {n_samples} < {frame_len} samples")
    return 1 + (n_samples - frame_len) // frame_shift


def stft(
    w: Waveform,
    frame_len: int = FRAME_LEN,
    frame_shift: int = FRAME_SHIFT,
    n_fft: int = N_FFT,
) -> np.ndarray:
    """Log-power spectrogram, shape (frames, n_fft//2 + 1).

    Each frame is Hamming-windowed, zero-padded to ``n_fft``, and reduced to
    ln(|FFT|^2 + 1e-10) over the non-negative frequency bins.  No dithering
    or pre-emphasis is applied.
    """
    if frame_len > n_fft:
        raise ValueError(f"frame_len {frame_len} exceeds n_fft {n_fft}")
    frames = num_frames(len(w), frame_len, frame_shift)
    idx = np.arange(frame_len)[None, :] + frame_shift * np.arange(frames)[:, None]
    windowed = w.samples[idx] * np.hamming(frame_len)
    power = np.abs(np.fft.rfft(windowed, n=n_fft, axis=1)) ** 2
    return np.log(power + LOG_FLOOR)


def fix_length(s: np.ndarray, target_frames: int = TARGET_FRAMES, rng: np.random.Generator | None = None) -> np.ndarray:
    """Crop or tile a (frames, bins) spectrogram to exactly ``target_frames`` rows.

    Longer inputs keep a contiguous window at a random offset drawn from
    ``rng``; shorter inputs are tiled end-to-end and truncated.
    """
    s = np.asarray(s)
    if s.ndim != 2 or s.shape[0] < 1:
        raise ValueError("spectrogram must be a non-empty 2-D array")
    n = s.shape[0]
    if n == target_frames:
        return s.copy()
    if n > target_frames:
        if rng is None:
            rng = np.random.default_rng(0)
        offset = int(rng.integers(0, n - target_frames + 1))
        return s[offset:offset + target_frames].copy()
    reps = -(-target_frames // n)  # ceil division
    return np.tile(s, (reps, 1))[:target_frames].copy()


def mean_normalize(s: np.ndarray) -> np.ndarray:
    """Subtract the per-bin mean over frames (utterance-level mean removal)."""
    s = np.asarray(s)
    if s.ndim != 2 or s.shape[0] < 1:
        raise ValueError("spectrogram must be a non-empty 2-D array")
    return s - s.mean(axis=0, keepdims=True)


def write_features(path: str | Path, s: np.ndarray) -> None:
    """Store a spectrogram as little-endian binary: magic "SPEC", u32 frames,
    u32 bins, then row-major float32 values."""
    s = np.ascontiguousarray(s, dtype="<f4")
    if s.ndim != 2:
        raise ValueError("feature matrix must be 2-D")
    with open(path, "wb") as f:
        f.write(struct.pack("<4sII", _FEATURE_MAGIC, s.shape[0], s.shape[1]))
        f.write(s.tobytes())


def read_features(path: str | Path) -> np.ndarray:
    """Load a spectrogram written by :func:`write_features` (float32)."""
    with open(path, "rb") as f:
        header = f.read(12)
        if len(header) != 12:
            raise ValueError(f"truncated feature file: {path}")
        magic, frames, bins = struct.unpack("<4sII", header)
        if magic != _FEATURE_MAGIC:
            raise ValueError(f"bad feature file magic {magic!r} in {path}")
        payload = f.read(frames * bins * 4)
    if len(payload) != frames * bins * 4:
        raise ValueError(f"truncated feature payload in {path}")
    return np.frombuffer(payload, dtype="<f4").reshape(frames, bins).copy()
