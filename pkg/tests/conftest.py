"""Shared fixtures: WAV byte builders and synthetic corpora.

The builders here are intentionally independent of the package code (raw
struct packing, numpy.fft for band noise) so tests exercise the library
against externally constructed inputs.
"""

import struct

import numpy as np
import pytest

from coughscreen import dataset, dsp
from coughscreen.audio_io import read_wav

RATE = 22050


def pcm16_wav(samples, rate=RATE, channels=1):
    """Build WAV bytes around int16 PCM samples (values in [-1, 1])."""
    arr = np.asarray(samples, dtype=np.float64)
    pcm = np.round(np.clip(arr, -1.0, 1.0) * 32767.0).astype("<i2").tobytes()
    return _wrap_wav(pcm, rate, channels, bits=16, fmt_code=1)


def raw_wav(frames_bytes, rate, channels, bits, fmt_code):
    """Wrap already-encoded sample bytes in a RIFF/WAVE container."""
    return _wrap_wav(frames_bytes, rate, channels, bits, fmt_code)


def _wrap_wav(pcm, rate, channels, bits, fmt_code):
    block_align = channels * bits // 8
    fmt = b"fmt " + struct.pack(
        "<IHHIIHH", 16, fmt_code, channels, rate, rate * block_align, block_align, bits
    )
    data = b"data" + struct.pack("<I", len(pcm)) + pcm
    return b"RIFF" + struct.pack("<I", 4 + len(fmt) + len(data)) + b"WAVE" + fmt + data


def band_noise(rng, center_hz, n=RATE, rate=RATE):
    """Noise with energy confined to [0.8, 1.2] x center_hz, peak 0.5."""
    spec = np.zeros(n // 2 + 1, dtype=complex)
    freqs = np.fft.rfftfreq(n, 1.0 / rate)
    band = (freqs > center_hz * 0.8) & (freqs < center_hz * 1.2)
    spec[band] = rng.normal(size=band.sum()) + 1j * rng.normal(size=band.sum())
    x = np.fft.irfft(spec, n)
    return 0.5 * x / np.max(np.abs(x))


def synth_records(tmp_dir, n_clips, seed=1234, pos_flag_p=0.8, neg_flag_p=0.2):
    """Write a separable corpus: positives are 3 kHz band noise with flags
    biased on, negatives 300 Hz with flags biased off. Returns records."""
    rng = np.random.default_rng(seed)
    audio_dir = tmp_dir / "audio"
    audio_dir.mkdir(parents=True, exist_ok=True)
    records = []
    half = n_clips // 2
    for i in range(n_clips):
        positive = i < half
        rid = f"c{i:04d}"
        path = audio_dir / f"{rid}.wav"
        path.write_bytes(pcm16_wav(band_noise(rng, 3000.0 if positive else 300.0)))
        p = pos_flag_p if positive else neg_flag_p
        symptoms = frozenset({"fever and/or chills"}) if rng.random() < p else frozenset()
        conditions = frozenset({"asthma"}) if rng.random() < p else frozenset()
        records.append(
            dataset.SampleRecord(
                id=rid,
                audio_path=str(path),
                label=dataset.POSITIVE if positive else dataset.NEGATIVE,
                source="synthetic",
                symptoms=symptoms,
                conditions=conditions,
            )
        )
    return records


def features_for(records):
    out = {}
    for rec in records:
        clip = read_wav(rec.audio_path)
        out[rec.id] = dsp.extract_features(clip, dataset.derive_flags(rec))
    return out


@pytest.fixture(scope="session")
def mini_corpus(tmp_path_factory):
    """60 separable clips with extracted features, for fast training tests."""
    root = tmp_path_factory.mktemp("mini_corpus")
    records = synth_records(root, 60, seed=404)
    return records, features_for(records)


@pytest.fixture(scope="session")
def random_features():
    """A deterministic batch of synthetic FeatureVectors (no audio)."""
    rng = np.random.default_rng(2024)
    fvs = []
    for _ in range(8):
        fvs.append(
            dsp.FeatureVector(
                mfcc=rng.normal(size=39),
                image=rng.uniform(size=(64, 64)),
                clinical=np.array(
                    [float(rng.integers(2)), float(rng.integers(2))]
                ),
            )
        )
    return fvs
