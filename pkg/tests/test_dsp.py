"""Front-end tests: WAV I/O, STFT, length fixing, mean normalization."""

import math
import wave

import numpy as np
import pytest

from replaynoise import dsp


def _write_pcm16(path, samples_int16, sample_rate=16000, channels=1, sampwidth=2):
    """Independent WAV writer used as the I/O oracle."""
    data = np.asarray(samples_int16, dtype="<i2").tobytes()
    with wave.open(str(path), "wb") as f:
        f.setnchannels(channels)
        f.setsampwidth(sampwidth)
        f.setframerate(sample_rate)
        f.writeframes(data)


class TestReadWav:
    def test_one_second_of_silence(self, tmp_path):
        path = tmp_path / "silence.wav"
        _write_pcm16(path, np.zeros(16000, dtype=np.int16))
        w = dsp.read_wav(path)
        assert len(w) == 16000
        assert w.sample_rate == 16000
        assert np.all(w.samples == 0.0)

    def test_full_scale_sample_maps_near_one(self, tmp_path):
        path = tmp_path / "full.wav"
        _write_pcm16(path, np.array([32767, 0, -32768], dtype=np.int16))
        w = dsp.read_wav(path)
        assert abs(w.samples[0] - 1.0) < 1e-4
        assert abs(w.samples[2] + 1.0) < 1e-4

    def test_write_read_round_trip_is_exact(self, tmp_path):
        rng = np.random.default_rng(5)
        path_a = tmp_path / "a.wav"
        path_b = tmp_path / "b.wav"
        _write_pcm16(path_a, rng.integers(-32768, 32768, size=4000, dtype=np.int64).astype(np.int16))
        first = dsp.read_wav(path_a)
        dsp.write_wav(path_b, first)
        second = dsp.read_wav(path_b)
        assert np.array_equal(first.samples, second.samples)
        assert first.sample_rate == second.sample_rate

    def test_missing_file(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            dsp.read_wav(tmp_path / "nope.wav")

    def test_stereo_rejected(self, tmp_path):
        path = tmp_path / "stereo.wav"
        _write_pcm16(path, np.zeros(400, dtype=np.int16), channels=2)
        with pytest.raises(dsp.WavFormatError, match="channel"):
            dsp.read_wav(path)

    def test_wrong_sample_width_rejected(self, tmp_path):
        path = tmp_path / "w8.wav"
        with wave.open(str(path), "wb") as f:
            f.setnchannels(1)
            f.setsampwidth(1)
            f.setframerate(16000)
            f.writeframes(bytes(100))
        with pytest.raises(dsp.WavFormatError, match="sample width"):
            dsp.read_wav(path)


class TestStft:
    def test_dc_energy_stays_in_bin_zero(self):
        w = dsp.Waveform(np.full(16000, 0.5))
        spec = dsp.stft(w)
        # analytic window-spectrum oracle: find where the Hamming main lobe
        # (zero-padded to 512) has fallen 30 dB below its peak
        win_power = np.abs(np.fft.rfft(np.hamming(400), 512)) ** 2
        beyond = int(np.argmax(win_power < win_power[0] / 1e3))
        assert beyond > 0
        gap = spec[:, 0, None] - spec[:, beyond:]
        assert np.all(gap >= math.log(1e3))

    @pytest.mark.parametrize("k", [13, 32, 100, 200])
    def test_bin_centered_sinusoid_peaks_at_its_bin(self, k):
        t = np.arange(16000)
        freq = k * 16000 / 512
        w = dsp.Waveform(0.5 * np.sin(2 * np.pi * freq * t / 16000))
        spec = dsp.stft(w)
        interior = spec[1:-1]
        assert np.all(interior.argmax(axis=1) == k)

    def test_frame_count_formula_on_default_input(self):
        w = dsp.Waveform(np.ones(16000))
        assert dsp.stft(w).shape == (98, 257)  # 1 + (16000-400)//160

    def test_frame_count_formula_random_lengths(self):
        rng = np.random.default_rng(11)
        for _ in range(50):
            n = int(rng.integers(400, 30000))
            w = dsp.Waveform(rng.standard_normal(n))
            expected = 1 + (n - 400) // 160
            assert dsp.stft(w).shape == (expected, 257)

    def test_too_short_signal_rejected(self):
        w = dsp.Waveform(np.ones(399))
        with pytest.raises(ValueError, match="too short"):
            dsp.stft(w)

    def test_shift_by_frame_shift_drops_first_frame(self):
        rng = np.random.default_rng(3)
        samples = rng.standard_normal(5000)
        full = dsp.stft(dsp.Waveform(samples))
        shifted = dsp.stft(dsp.Waveform(samples[160:]))
        overlap = shifted.shape[0]
        assert np.allclose(shifted, full[1:1 + overlap], atol=1e-6)


class TestFixLength:
    def test_exact_length_returned_unchanged(self):
        rng = np.random.default_rng(0)
        s = rng.standard_normal((400, 7))
        out = dsp.fix_length(s, 400, np.random.default_rng(1))
        assert np.array_equal(out, s)

    def test_short_input_tiles_rows(self):
        s = np.arange(150 * 3, dtype=float).reshape(150, 3)
        out = dsp.fix_length(s, 400, np.random.default_rng(1))
        assert out.shape == (400, 3)
        assert np.array_equal(out[:150], s)
        assert np.array_equal(out[150:300], s)
        assert np.array_equal(out[300:], s[:100])

    def test_long_input_keeps_contiguous_window(self):
        rng = np.random.default_rng(2)
        s = rng.standard_normal((500, 4))
        out = dsp.fix_length(s, 400, np.random.default_rng(9))
        assert out.shape == (400, 4)
        # the output must be one of the 101 possible contiguous slices
        matches = [o for o in range(101) if np.array_equal(out, s[o:o + 400])]
        assert len(matches) == 1
        # and hence every output row equals some input row
        for row in out[::50]:
            assert any(np.array_equal(row, r) for r in s)

    def test_same_rng_seed_same_window(self):
        s = np.random.default_rng(4).standard_normal((900, 2))
        a = dsp.fix_length(s, 400, np.random.default_rng(77))
        b = dsp.fix_length(s, 400, np.random.default_rng(77))
        assert np.array_equal(a, b)

    def test_output_always_target_frames(self):
        rng = np.random.default_rng(6)
        for _ in range(30):
            n = int(rng.integers(1, 1200))
            s = rng.standard_normal((n, 5))
            assert dsp.fix_length(s, 400, rng).shape == (400, 5)


class TestMeanNormalize:
    def test_constant_input_becomes_zero(self):
        s = np.full((12, 5), 3.7)
        # zero up to one rounding of the column mean
        assert np.max(np.abs(dsp.mean_normalize(s))) < 1e-12

    def test_two_point_column(self):
        s = np.array([[1.0], [3.0]])
        assert np.array_equal(dsp.mean_normalize(s), np.array([[-1.0], [1.0]]))

    def test_column_means_vanish(self):
        s = np.random.default_rng(8).standard_normal((400, 257)) * 5 + 2
        out = dsp.mean_normalize(s)
        # direct recomputation of per-bin means
        assert np.max(np.abs(out.mean(axis=0))) < 1e-9

    def test_idempotent(self):
        s = np.random.default_rng(9).standard_normal((120, 33))
        once = dsp.mean_normalize(s)
        twice = dsp.mean_normalize(once)
        assert np.max(np.abs(twice - once)) < 1e-9


class TestFeatureFiles:
    def test_round_trip(self, tmp_path):
        s = np.random.default_rng(1).standard_normal((57, 13)).astype(np.float32)
        path = tmp_path / "x.spec"
        dsp.write_features(path, s)
        back = dsp.read_features(path)
        assert back.dtype == np.float32
        assert np.array_equal(back, s)

    def test_header_layout(self, tmp_path):
        path = tmp_path / "x.spec"
        dsp.write_features(path, np.zeros((3, 4), dtype=np.float32))
        blob = path.read_bytes()
        assert blob[:4] == b"SPEC"
        assert int.from_bytes(blob[4:8], "little") == 3
        assert int.from_bytes(blob[8:12], "little") == 4
        assert len(blob) == 12 + 3 * 4 * 4

    def test_bad_magic_rejected(self, tmp_path):
        path = tmp_path / "bad.spec"
        path.write_bytes(b"NOPE" + bytes(8))
        with pytest.raises(ValueError, match="magic"):
            dsp.read_features(path)

    def test_truncated_payload_rejected(self, tmp_path):
        path = tmp_path / "short.spec"
        dsp.write_features(path, np.zeros((4, 4), dtype=np.float32))
        path.write_bytes(path.read_bytes()[:-8])
        with pytest.raises(ValueError, match="truncated"):
            dsp.read_features(path)
