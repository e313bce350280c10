"""Decoder and resampler behavior against hand-built WAV bytes."""

import struct

import numpy as np
import pytest

from coughscreen.audio_io import (
    AudioClip,
    EmptyAudio,
    MalformedContainer,
    UnsupportedCodec,
    decode_wav,
    read_wav,
    resample,
    to_mono,
)

from conftest import pcm16_wav, raw_wav


def test_int16_scaling_exact():
    pcm = struct.pack("<4h", 32767, -32768, 16384, 0)
    clip = decode_wav(raw_wav(pcm, 8000, 1, 16, 1))
    expected = np.array([32767 / 32768, -1.0, 0.5, 0.0])
    assert clip.sample_rate_hz == 8000
    np.testing.assert_array_equal(clip.samples, expected)


def test_int24_sign_extension():
    def pack24(v):
        return struct.pack("<i", v)[:3]

    pcm = pack24(2**23 - 1) + pack24(-(2**23)) + pack24(-1) + pack24(0)
    clip = decode_wav(raw_wav(pcm, 8000, 1, 24, 1))
    expected = np.array([(2**23 - 1) / 2**23, -1.0, -1 / 2**23, 0.0])
    np.testing.assert_array_equal(clip.samples, expected)


def test_int32_scaling():
    pcm = struct.pack("<2i", 2**31 - 1, -(2**31))
    clip = decode_wav(raw_wav(pcm, 8000, 1, 32, 1))
    expected = np.array([(2**31 - 1) / 2**31, -1.0])
    np.testing.assert_array_equal(clip.samples, expected)


def test_float32_clamped():
    pcm = struct.pack("<4f", 0.25, -0.5, 1.5, -2.0)
    clip = decode_wav(raw_wav(pcm, 44100, 1, 32, 3))
    np.testing.assert_allclose(clip.samples, [0.25, -0.5, 1.0, -1.0], rtol=1e-6)


def test_float64_decodes():
    pcm = struct.pack("<3d", 0.125, -0.625, 0.0)
    clip = decode_wav(raw_wav(pcm, 16000, 1, 64, 3))
    np.testing.assert_array_equal(clip.samples, [0.125, -0.625, 0.0])


def test_stereo_mixdown_is_channel_mean():
    # frames: (L, R) interleaved
    pcm = struct.pack("<4h", 16384, -16384, 32767, 32767)
    clip = decode_wav(raw_wav(pcm, 8000, 2, 16, 1))
    assert clip.n_channels == 1
    np.testing.assert_array_equal(clip.samples, [0.0, 32767 / 32768])


def test_mp3_id3_tag_rejected():
    with pytest.raises(UnsupportedCodec):
        decode_wav(b"ID3\x04\x00" + b"\x00" * 100)


def test_mp3_frame_sync_rejected():
    with pytest.raises(UnsupportedCodec):
        decode_wav(b"\xff\xfb\x90\x00" + b"\x00" * 100)


def test_non_riff_rejected():
    with pytest.raises(MalformedContainer):
        decode_wav(b"OggS" + b"\x00" * 40)


def test_truncated_data_chunk_rejected():
    good = pcm16_wav(np.zeros(100))
    with pytest.raises(MalformedContainer):
        decode_wav(good[:-10])


def test_missing_data_chunk_rejected():
    fmt = b"fmt " + struct.pack("<IHHIIHH", 16, 1, 1, 8000, 16000, 2, 16)
    blob = b"RIFF" + struct.pack("<I", 4 + len(fmt)) + b"WAVE" + fmt
    with pytest.raises(MalformedContainer):
        decode_wav(blob)


def test_compressed_format_code_rejected():
    pcm = struct.pack("<2h", 0, 0)
    with pytest.raises(UnsupportedCodec):
        decode_wav(raw_wav(pcm, 8000, 1, 16, 2))  # 2 = ADPCM


def test_8bit_pcm_rejected():
    with pytest.raises(UnsupportedCodec):
        decode_wav(raw_wav(b"\x80\x80", 8000, 1, 8, 1))


def test_zero_frames_rejected():
    with pytest.raises(EmptyAudio):
        decode_wav(raw_wav(b"", 8000, 1, 16, 1))


def test_inconsistent_block_align_rejected():
    pcm = struct.pack("<2h", 0, 0)
    fmt = b"fmt " + struct.pack("<IHHIIHH", 16, 1, 1, 8000, 16000, 7, 16)
    data = b"data" + struct.pack("<I", len(pcm)) + pcm
    blob = b"RIFF" + struct.pack("<I", 4 + len(fmt) + len(data)) + b"WAVE" + fmt + data
    with pytest.raises(MalformedContainer):
        decode_wav(blob)


def test_extra_chunk_with_odd_size_is_skipped():
    # LIST chunk of odd length exercises the word-alignment walk.
    pcm = struct.pack("<2h", 16384, -16384)
    junk = b"LIST" + struct.pack("<I", 5) + b"INFOx" + b"\x00"  # pad byte
    fmt = b"fmt " + struct.pack("<IHHIIHH", 16, 1, 1, 8000, 16000, 2, 16)
    data = b"data" + struct.pack("<I", len(pcm)) + pcm
    body = junk + fmt + data
    blob = b"RIFF" + struct.pack("<I", 4 + len(body)) + b"WAVE" + body
    clip = decode_wav(blob)
    np.testing.assert_array_equal(clip.samples, [0.5, -0.5])


def test_read_wav_round_trip(tmp_path):
    rng = np.random.default_rng(7)
    x = rng.uniform(-0.9, 0.9, size=500)
    path = tmp_path / "clip.wav"
    path.write_bytes(pcm16_wav(x, rate=22050))
    clip = read_wav(path)
    assert clip.sample_rate_hz == 22050
    # writer quantizes at 32767, decoder rescales by 2^15: exact expectation
    np.testing.assert_array_equal(clip.samples, np.round(x * 32767.0) / 32768.0)
    np.testing.assert_allclose(clip.samples, x, atol=1.5 / 32768)


def test_randomized_int16_round_trips():
    rng = np.random.default_rng(42)
    for _ in range(20):
        n = int(rng.integers(1, 400))
        x = rng.uniform(-1.0, 1.0, size=n)
        clip = decode_wav(pcm16_wav(x, rate=16000))
        assert len(clip) == n
        expected = np.round(np.clip(x, -1, 1) * 32767.0) / 32768.0
        np.testing.assert_array_equal(clip.samples, expected)


def test_to_mono_passthrough_for_mono():
    clip = AudioClip(samples=np.array([0.1, 0.2]), sample_rate_hz=8000)
    assert to_mono(clip) is clip


def test_resample_same_rate_unchanged():
    clip = AudioClip(samples=np.array([0.1, 0.2, 0.3]), sample_rate_hz=22050)
    out = resample(clip, 22050)
    assert out is clip


def test_resample_output_length_rule():
    for n_in, src, dst in [(48000, 48000, 22050), (100, 8000, 22050), (7, 3, 2)]:
        clip = AudioClip(samples=np.zeros(n_in), sample_rate_hz=src)
        out = resample(clip, dst)
        assert len(out) == int(round(n_in * dst / src))
        assert out.sample_rate_hz == dst


def test_resample_linear_ramp_exact():
    # A straight line is reproduced exactly by linear interpolation.
    n = 101
    ramp = np.linspace(0.0, 1.0, n)
    clip = AudioClip(samples=ramp, sample_rate_hz=8000)
    out = resample(clip, 16000)
    positions = np.arange(len(out)) * (8000 / 16000)
    expected = positions / (n - 1)
    expected[positions >= n - 1] = 1.0  # clamped at the right edge
    np.testing.assert_allclose(out.samples, expected, atol=1e-12)


def test_resample_rejects_bad_rate():
    clip = AudioClip(samples=np.zeros(10), sample_rate_hz=8000)
    with pytest.raises(ValueError):
        resample(clip, 0)
