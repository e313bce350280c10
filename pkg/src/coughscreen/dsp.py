"""Audio feature extraction: short-time power spectra, the mel filterbank,
time-averaged cepstral coefficients, and the normalized 64x64 log-mel image.

Frame geometry is fixed at 2048-sample Hann windows with a 512-sample hop
at 22050 Hz (93 ms / 23 ms). The transform stack is implemented directly
(radix-2 FFT, orthonormal DCT-II) so the whole pipeline is a bit-exact
contract with no library version drift.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .audio_io import PIPELINE_RATE_HZ, AudioClip, resample
from .dataset import ClinicalFlags

N_MELS = 64
N_MFCC = 39
IMAGE_SIZE = 64
POWER_FLOOR = 1e-10
DB_RANGE = 80.0

# Mel scale breakpoints: linear at 200/3 Hz per mel below 1 kHz (so
# mel(1000) = 15), logarithmic above with frequency ratio 6.4 per 27 mels.
_MEL_HZ_STEP = 200.0 / 3.0
_MEL_BREAK_HZ = 1000.0
_MEL_BREAK = _MEL_BREAK_HZ / _MEL_HZ_STEP
_MEL_LOG_STEP = math.log(6.4) / 27.0


class DspError(Exception):
    pass


class ClipTooShort(DspError):
    """Clip has fewer than 2 samples and cannot be reflect-padded."""


@dataclass(frozen=True)
class FrameParams:
    sample_rate_hz: int = PIPELINE_RATE_HZ
    fft_size: int = 2048
    hop: int = 512

    def __post_init__(self):
        if self.fft_size & (self.fft_size - 1):
            raise ValueError("fft_size must be a power of two")
        if not 0 < self.hop <= self.fft_size:
            raise ValueError("hop must be in (0, fft_size]")


@dataclass(frozen=True)
class MelFilterbank:
    weights: np.ndarray  # (n_mels, fft_size // 2 + 1), non-negative
    center_hz: np.ndarray  # (n_mels,), strictly increasing


@dataclass
class FeatureVector:
    """Model input triple: 39 mean MFCCs, 64x64 mel image, 2 binary flags."""

    mfcc: np.ndarray
    image: np.ndarray
    clinical: np.ndarray

    def __post_init__(self):
        self.mfcc = np.asarray(self.mfcc, dtype=np.float64)
        self.image = np.asarray(self.image, dtype=np.float64)
        self.clinical = np.asarray(self.clinical, dtype=np.float64)
        if self.mfcc.shape != (N_MFCC,):
            raise ValueError(f"mfcc must have shape ({N_MFCC},)")
        if self.image.shape != (IMAGE_SIZE, IMAGE_SIZE):
            raise ValueError(f"image must be {IMAGE_SIZE}x{IMAGE_SIZE}")
        if self.clinical.shape != (2,):
            raise ValueError("clinical must have shape (2,)")


def hann_window(n: int) -> np.ndarray:
    """Periodic Hann window: 0.5 - 0.5*cos(2*pi*k/n), k = 0..n-1."""
    if n < 1:
        raise ValueError("window length must be >= 1")
    k = np.arange(n, dtype=np.float64)
    return 0.5 - 0.5 * np.cos(2.0 * np.pi * k / n)


def _bit_reverse_indices(n: int) -> np.ndarray:
    bits = n.bit_length() - 1
    idx = np.arange(n)
    rev = np.zeros(n, dtype=np.int64)
    for _ in range(bits):
        rev = (rev << 1) | (idx & 1)
        idx >>= 1
    return rev


def fft_radix2(x: np.ndarray) -> np.ndarray:
    """Iterative radix-2 FFT along the last axis (length must be 2^k)."""
    x = np.asarray(x)
    n = x.shape[-1]
    if n == 0 or n & (n - 1):
        raise ValueError("FFT length must be a power of two")
    y = np.ascontiguousarray(x[..., _bit_reverse_indices(n)], dtype=np.complex128)
    m = 2
    while m <= n:
        half = m // 2
        tw = np.exp(-2j * np.pi * np.arange(half) / m)
        g = y.reshape(y.shape[:-1] + (n // m, m))
        a = g[..., :half]
        b = g[..., half:] * tw
        g[..., half:] = a - b
        g[..., :half] = a + b
        m *= 2
    return y


def rfft_radix2(x: np.ndarray) -> np.ndarray:
    """Non-negative-frequency bins (n/2 + 1) of the radix-2 FFT."""
    n = x.shape[-1]
    return fft_radix2(x)[..., : n // 2 + 1]


def power_spectrogram(clip: AudioClip, params: FrameParams = FrameParams()) -> np.ndarray:
    """Squared-magnitude STFT, shape (fft_size/2 + 1, T).

    The clip is reflect-padded by fft_size/2 on each side; frames start at
    hop multiples, so T = 1 + floor(len(clip) / hop).
    """
    if clip.sample_rate_hz != params.sample_rate_hz:
        raise ValueError(
            f"clip rate {clip.sample_rate_hz} != frame rate {params.sample_rate_hz}"
        )
    x = clip.samples
    if x.ndim != 1:
        raise ValueError("power_spectrogram expects a mono clip")
    if len(x) < 2:
        raise ClipTooShort("need at least 2 samples to reflect-pad")

    pad = params.fft_size // 2
    padded = np.pad(x, (pad, pad), mode="reflect")
    n_frames = 1 + len(x) // params.hop
    starts = np.arange(n_frames) * params.hop
    frames = padded[starts[:, None] + np.arange(params.fft_size)[None, :]]
    frames = frames * hann_window(params.fft_size)
    spectrum = rfft_radix2(frames)
    power = spectrum.real**2 + spectrum.imag**2
    return power.T


def hz_to_mel(freq_hz) -> np.ndarray:
    f = np.asarray(freq_hz, dtype=np.float64)
    linear = f / _MEL_HZ_STEP
    logpart = _MEL_BREAK + np.log(np.maximum(f, _MEL_BREAK_HZ) / _MEL_BREAK_HZ) / _MEL_LOG_STEP
    return np.where(f < _MEL_BREAK_HZ, linear, logpart)


def mel_to_hz(mel) -> np.ndarray:
    m = np.asarray(mel, dtype=np.float64)
    linear = m * _MEL_HZ_STEP
    logpart = _MEL_BREAK_HZ * np.exp(_MEL_LOG_STEP * (np.maximum(m, _MEL_BREAK) - _MEL_BREAK))
    return np.where(m < _MEL_BREAK, linear, logpart)


@lru_cache(maxsize=8)
def _filterbank_cached(sample_rate_hz: int, fft_size: int, n_mels: int) -> MelFilterbank:
    if n_mels < 2:
        raise ValueError("n_mels must be >= 2")
    fmax = sample_rate_hz / 2.0
    mel_points = np.linspace(0.0, float(hz_to_mel(fmax)), n_mels + 2)
    hz_points = mel_to_hz(mel_points)
    bin_hz = np.arange(fft_size // 2 + 1) * (sample_rate_hz / fft_size)

    fdiff = np.diff(hz_points)
    ramps = hz_points[:, None] - bin_hz[None, :]
    lower = -ramps[:-2] / fdiff[:-1, None]
    upper = ramps[2:] / fdiff[1:, None]
    weights = np.maximum(0.0, np.minimum(lower, upper))

    # Area normalization: each triangle integrates to a fixed value.
    enorm = 2.0 / (hz_points[2:] - hz_points[:-2])
    weights = weights * enorm[:, None]
    weights.flags.writeable = False
    centers = hz_points[1:-1].copy()
    centers.flags.writeable = False
    return MelFilterbank(weights=weights, center_hz=centers)


def mel_filterbank(params: FrameParams = FrameParams(), n_mels: int = N_MELS) -> MelFilterbank:
    return _filterbank_cached(params.sample_rate_hz, params.fft_size, n_mels)


def log_mel(power_spec: np.ndarray, fb: MelFilterbank) -> np.ndarray:
    """Mel-projected power in dB, floored 80 dB below the peak."""
    mel_power = fb.weights @ power_spec
    db = 10.0 * np.log10(np.maximum(mel_power, POWER_FLOOR))
    return np.maximum(db, db.max() - DB_RANGE)


@lru_cache(maxsize=4)
def dct_ortho_matrix(n: int) -> np.ndarray:
    """Orthonormal DCT-II matrix, rows indexed by coefficient."""
    j = np.arange(n, dtype=np.float64)
    k = np.arange(n, dtype=np.float64)[:, None]
    mat = np.sqrt(2.0 / n) * np.cos(np.pi * (j + 0.5) * k / n)
    mat[0] /= np.sqrt(2.0)
    mat.flags.writeable = False
    return mat


def mfcc_mean(log_mel_matrix: np.ndarray, n_mfcc: int = N_MFCC) -> np.ndarray:
    """First ``n_mfcc`` DCT-II coefficients per frame, averaged over time."""
    n_bands, n_frames = log_mel_matrix.shape
    if n_frames < 1:
        raise ValueError("need at least one frame")
    coeffs = dct_ortho_matrix(n_bands)[:n_mfcc] @ log_mel_matrix
    return coeffs.mean(axis=1)


def mel_image(log_mel_matrix: np.ndarray, size: int = IMAGE_SIZE) -> np.ndarray:
    """Resize along time to ``size`` columns and min-max normalize to [0, 1].

    Interpolation is linear with endpoints pinned to the first and last
    frames. A constant matrix maps to all 0.5.
    """
    n_bands, n_frames = log_mel_matrix.shape
    if n_bands != size:
        raise ValueError(f"expected {size} mel bands, got {n_bands}")
    if n_frames == 1:
        resized = np.repeat(log_mel_matrix, size, axis=1)
    else:
        pos = np.arange(size, dtype=np.float64) * (n_frames - 1) / (size - 1)
        i0 = np.floor(pos).astype(np.int64)
        i1 = np.minimum(i0 + 1, n_frames - 1)
        frac = pos - i0
        resized = log_mel_matrix[:, i0] * (1.0 - frac) + log_mel_matrix[:, i1] * frac
    lo = resized.min()
    hi = resized.max()
    if hi == lo:
        return np.full((size, size), 0.5)
    return (resized - lo) / (hi - lo)


def extract_features(
    clip: AudioClip,
    flags: ClinicalFlags,
    params: FrameParams = FrameParams(),
) -> FeatureVector:
    """Run the full feature pipeline on one clip."""
    clip = resample(clip, params.sample_rate_hz)
    power = power_spectrogram(clip, params)
    fb = mel_filterbank(params)
    logm = log_mel(power, fb)
    return FeatureVector(
        mfcc=mfcc_mean(logm),
        image=mel_image(logm),
        clinical=np.array(
            [float(flags.respiratory_condition), float(flags.fever_or_myalgia)]
        ),
    )


def feature_payload(fv: FeatureVector) -> bytes:
    """Canonical little-endian byte layout of one feature vector.

    39 float64 MFCCs, 4096 float64 image values row-major, then one byte
    per clinical flag. This is the cache record payload and the digest
    preimage used by the inference service.
    """
    return (
        fv.mfcc.astype("<f8").tobytes()
        + fv.image.astype("<f8").tobytes()
        + bytes(int(v) for v in fv.clinical)
    )


def feature_digest(fv: FeatureVector) -> str:
    return hashlib.sha256(feature_payload(fv)).hexdigest()
