"""Audio DSP: decode WAV, resample to the canonical 48 kHz rate, fix clips to
ten seconds, plan rarity-based chunking, and compute log-mel spectrograms.

Mel features are cached on disk as little-endian float32 matrices behind a
16-byte header (see save_mel / load_mel).
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import BinaryIO

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy import fft as _fft
from scipy.io import wavfile
from scipy.signal import resample_poly

CANONICAL_RATE = 48_000
CLIP_SECONDS = 10
MAX_CHUNKS = 5
RARE_SPECIES_MAX_COUNT = 40  # chunking applies below this corpus count

_MEL_MAGIC = b"MELX"
_MEL_VERSION = 1


class AudioError(Exception):
    pass


class UnsupportedEncoding(AudioError):
    pass


class CorruptFile(AudioError):
    pass


class ConfigMismatch(AudioError):
    pass


@dataclass
class AudioClip:
    samples: np.ndarray  # float64 mono, in [-1, 1]
    sample_rate: int
    source_recording_id: str = ""
    chunk_index: int = 0

    @property
    def duration(self) -> float:
        return len(self.samples) / self.sample_rate


@dataclass
class MelConfig:
    sample_rate: int = CANONICAL_RATE
    mel_bins: int = 64
    hop: int = 480
    window: int = 1024
    fmin: float = 0.0
    fmax: float | None = None  # defaults to sample_rate / 2
    log_floor: float = 1e-10

    def __post_init__(self):
        if self.mel_bins < 1:
            raise ConfigMismatch(f"mel_bins must be >= 1, got {self.mel_bins}")
        if self.window < self.hop:
            raise ConfigMismatch(
                f"window ({self.window}) must be >= hop ({self.hop})")
        if self.fmax is None:
            self.fmax = self.sample_rate / 2


@dataclass
class MelSpectrogram:
    values: np.ndarray  # frames x mel_bins, log-power
    sample_rate: int
    hop: int
    window: int

    @property
    def frames(self) -> int:
        return self.values.shape[0]

    @property
    def mel_bins(self) -> int:
        return self.values.shape[1]


def load_wav(path: str | Path | BinaryIO, recording_id: str = "") -> AudioClip:
    """Decode a PCM WAV (16/24/32-bit int or 32-bit float) to mono in [-1, 1]."""
    if hasattr(path, "read"):
        head = path.read(12)
        path.seek(0)
    else:
        path = Path(path)
        with path.open("rb") as fh:
            head = fh.read(12)
    if len(head) < 12 or head[:4] not in (b"RIFF", b"RIFX") or head[8:12] != b"WAVE":
        raise CorruptFile(f"not a RIFF/WAVE file: {path}")

    try:
        rate, data = wavfile.read(path)
    except ValueError as exc:
        if "unknown wave file format" in str(exc).lower():
            raise UnsupportedEncoding(str(exc)) from exc
        raise CorruptFile(f"{path}: {exc}") from exc
    except (struct.error, EOFError) as exc:
        raise CorruptFile(f"{path}: truncated or garbled chunk: {exc}") from exc

    if data.dtype == np.int16:
        samples = data.astype(np.float64) / 32768.0
    elif data.dtype == np.int32:  # includes 24-bit, left-justified by scipy
        samples = data.astype(np.float64) / 2147483648.0
    elif data.dtype == np.float32:
        samples = data.astype(np.float64)
    else:
        raise UnsupportedEncoding(
            f"{path}: unsupported sample dtype {data.dtype}; "
            "expected 16/24/32-bit int or 32-bit float")

    if samples.ndim > 1:
        samples = samples.mean(axis=1)
    if not np.all(np.isfinite(samples)):
        raise CorruptFile(f"{path}: non-finite samples")
    return AudioClip(samples=samples, sample_rate=int(rate),
                     source_recording_id=recording_id)


def save_wav(clip: AudioClip, path: str | Path) -> None:
    """Write 16-bit PCM (scaling symmetric with load_wav's 1/32768)."""
    scaled = np.clip(np.round(clip.samples * 32768.0), -32768, 32767)
    wavfile.write(str(path), clip.sample_rate, scaled.astype(np.int16))


def resample(clip: AudioClip, target_rate: int = CANONICAL_RATE) -> AudioClip:
    """Band-limited rate conversion (polyphase windowed-sinc, Kaiser beta 14).

    Endpoint-linear padding keeps DC signals flat at the boundaries. Equal
    rates return the clip unchanged.
    """
    if clip.sample_rate <= 0:
        raise ValueError(f"sample_rate must be positive, got {clip.sample_rate}")
    if clip.sample_rate == target_rate:
        return clip
    g = math.gcd(target_rate, clip.sample_rate)
    up, down = target_rate // g, clip.sample_rate // g
    samples = resample_poly(clip.samples, up, down,
                            window=("kaiser", 14.0), padtype="line")
    return AudioClip(samples=samples, sample_rate=target_rate,
                     source_recording_id=clip.source_recording_id,
                     chunk_index=clip.chunk_index)


def fix_length(clip: AudioClip, seconds: int = CLIP_SECONDS) -> AudioClip:
    """Crop from the head or zero-pad at the tail to exactly `seconds`."""
    target = seconds * clip.sample_rate
    samples = clip.samples
    if len(samples) > target:
        samples = samples[:target]
    elif len(samples) < target:
        samples = np.concatenate(
            [samples, np.zeros(target - len(samples), dtype=samples.dtype)])
    return AudioClip(samples=samples, sample_rate=clip.sample_rate,
                     source_recording_id=clip.source_recording_id,
                     chunk_index=clip.chunk_index)


def chunk_plan(clip_length_seconds: float, species_corpus_count: int) -> int:
    """How many ten-second chunks a recording contributes.

    Recordings longer than ten seconds of species with fewer than
    RARE_SPECIES_MAX_COUNT corpus examples are split into consecutive
    ten-second windows (last window padded), capped at MAX_CHUNKS.
    Everything else contributes a single clip.
    """
    if clip_length_seconds <= 0:
        raise ValueError("clip length must be positive")
    if clip_length_seconds <= CLIP_SECONDS:
        return 1
    if species_corpus_count >= RARE_SPECIES_MAX_COUNT:
        return 1
    return min(MAX_CHUNKS, math.ceil(clip_length_seconds / CLIP_SECONDS))


def chunk_clip(clip: AudioClip, n_chunks: int) -> list[AudioClip]:
    """Cut consecutive non-overlapping ten-second windows from t=0.

    The trailing partial window is zero-padded; every chunk keeps the source
    recording id so it shares the recording's captions downstream.
    """
    window = CLIP_SECONDS * clip.sample_rate
    chunks = []
    for i in range(n_chunks):
        piece = AudioClip(samples=clip.samples[i * window:(i + 1) * window],
                          sample_rate=clip.sample_rate,
                          source_recording_id=clip.source_recording_id,
                          chunk_index=i)
        chunks.append(fix_length(piece))
    return chunks


def hz_to_mel(f):
    """HTK mel scale."""
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_filterbank(config: MelConfig) -> np.ndarray:
    """Triangular filters on the HTK mel scale, peak weight 1, shape
    (mel_bins, 1 + window // 2)."""
    n_fft_bins = config.window // 2 + 1
    fft_freqs = np.arange(n_fft_bins) * config.sample_rate / config.window
    mel_edges = np.linspace(hz_to_mel(config.fmin), hz_to_mel(config.fmax),
                            config.mel_bins + 2)
    hz_edges = mel_to_hz(mel_edges)
    bank = np.zeros((config.mel_bins, n_fft_bins))
    for b in range(config.mel_bins):
        lo, center, hi = hz_edges[b], hz_edges[b + 1], hz_edges[b + 2]
        rising = (fft_freqs - lo) / max(center - lo, 1e-12)
        falling = (hi - fft_freqs) / max(hi - center, 1e-12)
        bank[b] = np.clip(np.minimum(rising, falling), 0.0, None)
    return bank


def mel_spectrogram(clip: AudioClip, config: MelConfig | None = None) -> MelSpectrogram:
    """Hann-window STFT power with center padding, mel filterbank, then
    log(x + log_floor). Frame count is 1 + len // hop."""
    config = config or MelConfig()
    if clip.sample_rate != config.sample_rate:
        raise ConfigMismatch(
            f"clip rate {clip.sample_rate} != config rate {config.sample_rate}")
    x = np.asarray(clip.samples, dtype=np.float64)
    half = config.window // 2
    padded = np.concatenate([np.zeros(half), x, np.zeros(config.window)])
    n_frames = 1 + len(x) // config.hop
    frames = sliding_window_view(padded, config.window)[::config.hop][:n_frames]
    window = np.hanning(config.window)
    spectrum = _fft.rfft(frames * window, axis=1, workers=-1)
    power = spectrum.real ** 2 + spectrum.imag ** 2
    mel_power = power @ mel_filterbank(config).T
    return MelSpectrogram(values=np.log(mel_power + config.log_floor),
                          sample_rate=config.sample_rate,
                          hop=config.hop, window=config.window)


def save_mel(mel: MelSpectrogram, path: str | Path) -> None:
    """Binary cache: 16-byte header {magic, frames, melBins, version}, then
    row-major little-endian float32."""
    header = _MEL_MAGIC + struct.pack("<III", mel.frames, mel.mel_bins,
                                      _MEL_VERSION)
    body = mel.values.astype("<f4").tobytes(order="C")
    Path(path).write_bytes(header + body)


def load_mel(path: str | Path,
             config: MelConfig | None = None) -> MelSpectrogram:
    config = config or MelConfig()
    raw = Path(path).read_bytes()
    if len(raw) < 16 or raw[:4] != _MEL_MAGIC:
        raise CorruptFile(f"{path}: bad feature-cache header")
    frames, mel_bins, version = struct.unpack("<III", raw[4:16])
    if version != _MEL_VERSION:
        raise CorruptFile(f"{path}: unsupported cache version {version}")
    expected = 16 + frames * mel_bins * 4
    if len(raw) != expected:
        raise CorruptFile(f"{path}: expected {expected} bytes, found {len(raw)}")
    values = np.frombuffer(raw[16:], dtype="<f4").reshape(frames, mel_bins)
    return MelSpectrogram(values=values.astype(np.float64),
                          sample_rate=config.sample_rate,
                          hop=config.hop, window=config.window)
