import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from gapfill.signal import (AudioBuffer, Segment, SegmentSpec, generate_pure_tone,
                            pure_tone_grid, read_wav, rms, split_segment, write_wav)


class TestAudioBuffer:
    def test_converts_to_float64(self):
        buf = AudioBuffer(np.arange(4, dtype=np.int16))
        assert buf.samples.dtype == np.float64

    @pytest.mark.parametrize("bad", [np.zeros((2, 2)), np.array([0.0, np.nan]),
                                     np.array([np.inf])])
    def test_rejects_invalid_samples(self, bad):
        with pytest.raises(ValueError):
            AudioBuffer(bad)

    def test_rejects_nonpositive_rate(self):
        with pytest.raises(ValueError):
            AudioBuffer(np.zeros(3), 0)


class TestSegmentSpec:
    def test_defaults(self):
        s = SegmentSpec()
        assert (s.total_len, s.gap_len, s.context_len) == (5120, 1024, 2048)
        assert (s.gap_start, s.gap_stop) == (2048, 3072)

    def test_from_ms(self):
        s = SegmentSpec.from_ms(48)
        assert (s.gap_len, s.context_len) == (768, 2176)

    def test_inconsistent_lengths_rejected(self):
        with pytest.raises(ValueError):
            SegmentSpec(5120, 1000, 2048)


class TestSplitSegment:
    def test_parts_concatenate_back(self, rng, spec):
        x = rng.standard_normal(spec.total_len)
        seg = split_segment(AudioBuffer(x), spec)
        np.testing.assert_array_equal(seg.full().samples, x)
        assert len(seg.before) == len(seg.after) == 2048

    def test_wrong_length_rejected(self, spec):
        with pytest.raises(ValueError):
            split_segment(AudioBuffer(np.zeros(100)), spec)

    def test_segment_checks_part_lengths(self, spec):
        with pytest.raises(ValueError):
            Segment(AudioBuffer(np.zeros(3)), AudioBuffer(np.zeros(3)),
                    AudioBuffer(np.zeros(3)), spec)

    def test_reversal_swaps_contexts(self, noisy_segment):
        r = noisy_segment.reversed()
        np.testing.assert_array_equal(r.full().samples, noisy_segment.full().samples[::-1])


class TestTones:
    def test_tone_values(self):
        buf = generate_pure_tone(1000, 0.5, 0.3, 16)
        n = np.arange(16)
        np.testing.assert_allclose(buf.samples, 0.3 * np.sin(2 * np.pi * 1000 * n / 16000 + 0.5))

    @pytest.mark.parametrize("freq", [0.0, 8000.0, 9000.0, -5.0])
    def test_aliasing_rejected(self, freq):
        with pytest.raises(ValueError):
            generate_pure_tone(freq, 0, 1, 10)

    def test_grid_size_and_ranges(self):
        grid = pure_tone_grid(600, 4, 3)
        assert len(grid) == 7200
        f, p, a = np.array(grid).T
        assert f.min() == pytest.approx(20) and f.max() == pytest.approx(8000)
        assert p.min() == 0 and p.max() == pytest.approx(np.pi)
        assert a.min() == pytest.approx(0.1) and a.max() == pytest.approx(1.0)

    def test_grid_is_log_spaced(self):
        f = np.unique([g[0] for g in pure_tone_grid(10, 2, 2)])
        ratios = f[1:] / f[:-1]
        np.testing.assert_allclose(ratios, ratios[0])


class TestRms:
    def test_sine_rms(self):
        x = np.sin(2 * np.pi * np.arange(1600) / 16)
        assert rms(x) == pytest.approx(1 / np.sqrt(2))

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            rms(np.zeros(0))

    @given(st.floats(-10, 10, allow_nan=False), st.integers(1, 50))
    def test_constant(self, c, n):
        assert rms(np.full(n, c)) == pytest.approx(abs(c))


class TestWav:
    def test_pcm16_round_trip_bit_exact(self, tmp_path, rng):
        ints = rng.integers(-32768, 32767, 1000)
        buf = AudioBuffer(ints / 32768.0)
        write_wav(tmp_path / "a.wav", buf)
        back = read_wav(tmp_path / "a.wav")
        np.testing.assert_array_equal(back.samples, buf.samples)

    def test_float_round_trip(self, tmp_path, rng):
        buf = AudioBuffer(rng.uniform(-1, 1, 500), 22050)
        write_wav(tmp_path / "f.wav", buf, "FLOAT")
        back = read_wav(tmp_path / "f.wav")
        assert back.sample_rate == 22050
        np.testing.assert_allclose(back.samples, buf.samples, atol=1e-7)

    def test_stereo_identical_channels_average_to_mono(self, tmp_path, rng):
        from scipy.io import wavfile
        mono = rng.integers(-1000, 1000, 300).astype(np.int16)
        wavfile.write(tmp_path / "s.wav", 16000, np.stack([mono, mono], axis=1))
        np.testing.assert_array_equal(read_wav(tmp_path / "s.wav").samples, mono / 32768.0)

    @settings(max_examples=20, deadline=None)
    @given(st.floats(0.1, 5.0))
    def test_scaling_commutes_with_full(self, factor):
        x = np.linspace(-1, 1, 5120)
        seg = split_segment(AudioBuffer(x), SegmentSpec())
        np.testing.assert_allclose(seg.scaled(factor).full().samples, factor * x)
