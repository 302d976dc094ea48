import struct

import numpy as np
import pytest

from wvad.audio_io import (
    LabelTrack,
    Waveform,
    num_frames,
    parse_labels,
    read_labels,
    read_wav,
    write_labels,
    write_wav,
)
from wvad.core import FormatError


def raw_wav(path, pcm, rate=8000, channels=1, bits=16, tag=1):
    data = np.asarray(pcm, dtype="<i2").tobytes()
    block = channels * bits // 8
    fmt = struct.pack("<HHIIHH", tag, channels, rate, rate * block, block, bits)
    body = b"WAVE" + b"fmt " + struct.pack("<I", 16) + fmt + b"data" + struct.pack("<I", len(data)) + data
    path.write_bytes(b"RIFF" + struct.pack("<I", len(body)) + body)


def test_read_scaling(tmp_path):
    raw_wav(tmp_path / "a.wav", [0, 16384, -32768])
    wav = read_wav(tmp_path / "a.wav")
    np.testing.assert_array_equal(wav.samples, [0.0, 0.5, -1.0])
    assert wav.sample_rate == 8000


def test_stereo_rejected(tmp_path):
    raw_wav(tmp_path / "s.wav", [0, 1, 2, 3], channels=2)
    with pytest.raises(FormatError):
        read_wav(tmp_path / "s.wav")


def test_non_pcm_rejected(tmp_path):
    raw_wav(tmp_path / "f.wav", [0, 1], tag=3)
    with pytest.raises(FormatError):
        read_wav(tmp_path / "f.wav")


def test_malformed_header(tmp_path):
    (tmp_path / "bad.wav").write_bytes(b"RIFX0000WAVE")
    with pytest.raises(FormatError):
        read_wav(tmp_path / "bad.wav")
    raw_wav(tmp_path / "t.wav", [1, 2, 3, 4])
    data = (tmp_path / "t.wav").read_bytes()
    (tmp_path / "t.wav").write_bytes(data[:-3])
    with pytest.raises(FormatError):
        read_wav(tmp_path / "t.wav")


def test_sine_round_trip(tmp_path):
    t = np.arange(800) / 8000
    x = 0.8 * np.sin(2 * np.pi * 440 * t)
    write_wav(tmp_path / "s.wav", Waveform(x, 8000))
    back = read_wav(tmp_path / "s.wav")
    assert back.sample_rate == 8000
    # one LSB of PCM16 is 2**-15
    assert np.max(np.abs(back.samples - x)) <= 2 ** -15


def test_clamp_on_write(tmp_path):
    write_wav(tmp_path / "c.wav", Waveform([1.5, -1.5, 0.0], 8000))
    pcm = np.frombuffer((tmp_path / "c.wav").read_bytes()[44:], dtype="<i2")
    np.testing.assert_array_equal(pcm, [32767, -32768, 0])


def test_write_then_read_exact_values(tmp_path):
    write_wav(tmp_path / "e.wav", Waveform([0.0, 0.5, -1.0], 16000))
    back = read_wav(tmp_path / "e.wav")
    np.testing.assert_array_equal(back.samples, [0.0, 0.5, -1.0])
    assert back.sample_rate == 16000


@pytest.mark.parametrize("length,expected", [(800, 9), (160, 1), (159, 0)])
def test_num_frames(length, expected):
    assert num_frames(length, 160, 80) == expected


class TestLabels:
    def test_parse(self):
        track = parse_labels("0\n1\n1")
        np.testing.assert_array_equal(track.onehot, [[1, 0], [0, 1], [0, 1]])

    def test_empty_body(self):
        track = parse_labels("#frame=160 hop=80 rate=8000\n")
        assert len(track) == 0
        assert (track.frame_len, track.hop, track.sample_rate) == (160, 80, 8000)

    def test_round_trip(self, tmp_path):
        track = LabelTrack.from_binary([0, 1, 1, 0, 1], 160, 80, 8000)
        write_labels(tmp_path / "l.txt", track)
        assert (tmp_path / "l.txt").read_text().splitlines()[0] == "#frame=160 hop=80 rate=8000"
        back = read_labels(tmp_path / "l.txt")
        np.testing.assert_array_equal(back.onehot, track.onehot)
        assert (back.frame_len, back.hop, back.sample_rate) == (160, 80, 8000)

    def test_bad_token(self):
        with pytest.raises(FormatError):
            parse_labels("0\n2\n")

    def test_header_mismatch(self):
        with pytest.raises(FormatError):
            parse_labels("#frame=160 hop=80 rate=8000\n0\n", sample_rate=16000)

    def test_bad_header(self):
        with pytest.raises(FormatError):
            parse_labels("#frames: 160\n0\n")

    def test_onehot_invariant(self):
        with pytest.raises(FormatError):
            LabelTrack(np.array([[1, 1]]), 160, 80, 8000)
