"""WAV decoding, mono mixdown, and resampling.

Only RIFF/WAVE containers are accepted (PCM 16/24/32-bit integer and
32/64-bit IEEE float). Compressed formats such as MP3 must be converted
to WAV upstream; the decoder rejects them with :class:`UnsupportedCodec`.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

PIPELINE_RATE_HZ = 22050

_WAVE_FORMAT_PCM = 1
_WAVE_FORMAT_IEEE_FLOAT = 3


class AudioError(Exception):
    """Base class for decode failures."""


class MalformedContainer(AudioError):
    """Bytes are not a structurally valid RIFF/WAVE file."""


class UnsupportedCodec(AudioError):
    """Container is readable but the codec is outside the PCM/float contract."""


class EmptyAudio(AudioError):
    """WAV file decoded to zero frames."""


@dataclass
class AudioClip:
    """Audio samples plus their rate.

    ``samples`` is float64, either 1-D (mono) or 2-D with shape
    (frames, channels) before mixdown. Amplitudes stay within [-1, 1].
    """

    samples: np.ndarray
    sample_rate_hz: int

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.sample_rate_hz <= 0:
            raise ValueError("sample_rate_hz must be positive")

    @property
    def n_channels(self) -> int:
        return 1 if self.samples.ndim == 1 else self.samples.shape[1]

    def __len__(self) -> int:
        return self.samples.shape[0]


def _looks_like_mp3(data: bytes) -> bool:
    if data[:3] == b"ID3":
        return True
    # MPEG audio frame sync: 11 set bits.
    return len(data) >= 2 and data[0] == 0xFF and (data[1] & 0xE0) == 0xE0


def decode_wav(data: bytes) -> AudioClip:
    """Decode WAV bytes to a mono clip with amplitudes in [-1, 1].

    Integer PCM is scaled by 1 / 2^(bits-1); float samples are clamped to
    [-1, 1]. Multi-channel input is averaged to mono.
    """
    if _looks_like_mp3(data):
        raise UnsupportedCodec("MP3 input; convert to WAV first")
    if len(data) < 12 or data[:4] != b"RIFF" or data[8:12] != b"WAVE":
        raise MalformedContainer("missing RIFF/WAVE header")

    fmt = None
    payload = None
    pos = 12
    while pos + 8 <= len(data):
        chunk_id = data[pos : pos + 4]
        (chunk_size,) = struct.unpack_from("<I", data, pos + 4)
        body = data[pos + 8 : pos + 8 + chunk_size]
        if len(body) < chunk_size:
            raise MalformedContainer(f"chunk {chunk_id!r} truncated")
        if chunk_id == b"fmt ":
            if chunk_size < 16:
                raise MalformedContainer("fmt chunk too small")
            fmt = struct.unpack_from("<HHIIHH", body, 0)
        elif chunk_id == b"data":
            payload = body
        pos += 8 + chunk_size + (chunk_size & 1)  # chunks are word-aligned

    if fmt is None:
        raise MalformedContainer("no fmt chunk")
    if payload is None:
        raise MalformedContainer("no data chunk")

    audio_format, n_channels, sample_rate, _, block_align, bits = fmt
    if n_channels < 1:
        raise MalformedContainer("zero channels")
    if sample_rate <= 0:
        raise MalformedContainer("non-positive sample rate")

    if audio_format == _WAVE_FORMAT_PCM:
        if bits not in (16, 24, 32):
            raise UnsupportedCodec(f"{bits}-bit PCM not supported")
    elif audio_format == _WAVE_FORMAT_IEEE_FLOAT:
        if bits not in (32, 64):
            raise UnsupportedCodec(f"{bits}-bit float not supported")
    else:
        raise UnsupportedCodec(f"wave format code {audio_format}")

    bytes_per_sample = bits // 8
    frame_size = bytes_per_sample * n_channels
    if block_align not in (0, frame_size):
        raise MalformedContainer("block_align inconsistent with fmt fields")
    n_frames = len(payload) // frame_size
    if n_frames == 0:
        raise EmptyAudio("zero data frames")
    payload = payload[: n_frames * frame_size]

    if audio_format == _WAVE_FORMAT_PCM:
        if bits == 16:
            raw = np.frombuffer(payload, dtype="<i2").astype(np.float64)
        elif bits == 32:
            raw = np.frombuffer(payload, dtype="<i4").astype(np.float64)
        else:  # 24-bit: widen each 3-byte sample to int32, then shift down
            b = np.frombuffer(payload, dtype=np.uint8).reshape(-1, 3)
            as32 = (
                b[:, 0].astype(np.int32)
                | (b[:, 1].astype(np.int32) << 8)
                | (b[:, 2].astype(np.int32) << 16)
            )
            as32 = (as32 << 8) >> 8  # sign-extend
            raw = as32.astype(np.float64)
        samples = raw / float(2 ** (bits - 1))
    else:
        dtype = "<f4" if bits == 32 else "<f8"
        samples = np.frombuffer(payload, dtype=dtype).astype(np.float64)
        samples = np.clip(samples, -1.0, 1.0)

    samples = samples.reshape(n_frames, n_channels)
    clip = AudioClip(samples=samples, sample_rate_hz=sample_rate)
    return to_mono(clip)


def read_wav(path) -> AudioClip:
    with open(path, "rb") as fh:
        return decode_wav(fh.read())


def to_mono(clip: AudioClip) -> AudioClip:
    """Average channels; mono input passes through unchanged."""
    if clip.samples.ndim == 1:
        return clip
    mono = clip.samples.mean(axis=1)
    return AudioClip(samples=mono, sample_rate_hz=clip.sample_rate_hz)


def resample(clip: AudioClip, target_rate_hz: int) -> AudioClip:
    """Linear-interpolation resample to ``target_rate_hz``.

    Output length is round(n * target / source). Same-rate input is
    returned unchanged. Aliasing above the target Nyquist is accepted.
    """
    if target_rate_hz <= 0:
        raise ValueError("target_rate_hz must be positive")
    if clip.samples.ndim != 1:
        raise ValueError("resample expects a mono clip")
    if clip.sample_rate_hz == target_rate_hz:
        return clip
    n_in = len(clip)
    n_out = int(round(n_in * target_rate_hz / clip.sample_rate_hz))
    positions = np.arange(n_out, dtype=np.float64) * (
        clip.sample_rate_hz / target_rate_hz
    )
    out = np.interp(positions, np.arange(n_in, dtype=np.float64), clip.samples)
    return AudioClip(samples=out, sample_rate_hz=target_rate_hz)
