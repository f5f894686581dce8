import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from gapfill.signal import AudioBuffer, SegmentSpec, split_segment
from gapfill.tf import (FrameLayout, STFTParams, TFMatrix, assemble_full, default_layout,
                        full_stft, gap_frames, istft, make_hann_pr, prepare_context,
                        project_consistent, read_tf, stft, write_tf)

P = STFTParams()


def brute_force_ola(g, gamma, a):
    M = len(g)
    total = np.zeros(a)
    for n in range(a):
        total[n] = sum(g[(n + k * a) % M] * gamma[(n + k * a) % M] for k in range(M // a))
    return total


class TestWindows:
    @pytest.mark.parametrize("M,a", [(512, 128), (8, 2), (64, 16)])
    def test_perfect_reconstruction_condition(self, M, a):
        g, gamma = make_hann_pr(M, a)
        np.testing.assert_allclose(brute_force_ola(g, gamma, a), 1.0, atol=1e-12)

    def test_window_symmetric_nonnegative(self):
        g, _ = make_hann_pr(512, 128)
        np.testing.assert_allclose(g, g[::-1], atol=1e-15)
        assert np.all(g > 0)

    def test_hop_must_divide(self):
        with pytest.raises(ValueError):
            make_hann_pr(512, 100)

    def test_params_require_quarter_hop(self):
        with pytest.raises(ValueError):
            STFTParams(512, 256)
        assert P.n_bins == 257


class TestStft:
    def test_zero_signal(self):
        assert not np.any(stft(np.zeros(5120), P).coeffs)

    def test_definition(self, rng):
        x = rng.standard_normal(1000)
        tf = stft(x, P, 3, 100)
        k, m = 2, 17
        n = np.arange(512)
        ref = np.sum(x[100 + 2 * 128 + n] * P.window * np.exp(-2j * np.pi * m * n / 512))
        assert tf.coeffs[m, k] == pytest.approx(ref, abs=1e-12)

    def test_bin_centred_tone(self):
        m = 20
        x = np.sin(2 * np.pi * m * np.arange(2048) / 512)
        mag = np.abs(stft(x, P).coeffs[:, 5])
        assert np.argmax(mag) == m
        far = np.r_[mag[:m - 1], mag[m + 2:]]
        assert 20 * np.log10(far.max() / mag[m]) <= -30
        # amplitude normalisation: unit sine gives unit coefficient
        assert mag[m] == pytest.approx(1.0, rel=1e-9)

    def test_out_of_range_reads_zero(self, rng):
        x = rng.standard_normal(600)
        a = stft(x, P, 2, -128).coeffs
        padded = np.r_[np.zeros(128), x]
        np.testing.assert_allclose(a, stft(padded, P, 2, 0).coeffs, atol=1e-12)


class TestIstft:
    def test_round_trip_noise(self, rng):
        x = rng.standard_normal(5120)
        y = istft(stft(x, P)).samples
        assert np.max(np.abs(x - y)) < 1e-10

    def test_zero(self):
        assert not np.any(istft(TFMatrix(np.zeros((257, 5)), P)).samples)

    def test_linearity(self, rng):
        A = rng.standard_normal((257, 9)) + 1j * rng.standard_normal((257, 9))
        B = rng.standard_normal((257, 9)) + 1j * rng.standard_normal((257, 9))
        ta, tb = TFMatrix(A, P), TFMatrix(B, P)
        np.testing.assert_allclose(istft(ta + tb).samples,
                                   istft(ta).samples + istft(tb).samples, atol=1e-12)

    def test_projection_idempotent(self, rng):
        C = rng.standard_normal((257, 12)) + 1j * rng.standard_normal((257, 12))
        once = project_consistent(C, P)
        np.testing.assert_allclose(project_consistent(once, P), once, atol=1e-10)

    @settings(max_examples=25, deadline=None)
    @given(arrays(np.float64, 5120, elements=st.floats(-1, 1)))
    def test_round_trip_property(self, x):
        assert np.max(np.abs(istft(stft(x, P)).samples - x)) < 1e-10

    def test_energy_ratio_constant(self, rng):
        # frames covering the whole zero-extended support form a tight frame
        w = np.full(257, 2.0)
        w[[0, -1]] = 1.0
        ratios = []
        for _ in range(5):
            x = rng.standard_normal(1024)
            c = stft(x, P, 1024 // 128 + 3, -384).coeffs
            ratios.append(np.sum(w[:, None] * np.abs(c) ** 2) / np.sum(x ** 2))
        np.testing.assert_allclose(ratios, ratios[0], rtol=1e-9)


class TestLayout:
    def test_counts_emerge_from_geometry(self):
        lay = default_layout()
        assert lay.pad == 384
        assert (lay.context_frames, lay.kept_frames, lay.discarded_frames) == (16, 13, 3)
        assert (lay.gap_frames, lay.interior_frames, lay.total_frames) == (11, 5, 37)
        assert range(37)[lay.interior_slice] == range(16, 21)
        assert range(37)[lay.gap_slice] == range(13, 24)
        assert lay.gap_support == (1664, 3456)

    def test_interior_frames_are_inside_gap(self):
        lay = default_layout()
        for k in range(lay.total_frames):
            lo, hi = lay.frame_span(k)
            inside = lo >= 2048 and hi <= 3072
            assert inside == (k in range(37)[lay.interior_slice])

    def test_short_gap_layout(self):
        lay = FrameLayout(P, SegmentSpec.from_ms(48))
        assert lay.interior_frames == 3 and lay.total_frames == 37

    def test_geometry_must_align_with_hop(self):
        with pytest.raises(ValueError):
            FrameLayout(P, SegmentSpec(5120, 1020, 2050))


class TestContext:
    def test_shape(self, noisy_segment):
        ctx = prepare_context(noisy_segment)
        assert ctx.data.shape == (4, 257, 16)

    def test_silent(self):
        seg = split_segment(AudioBuffer(np.zeros(5120)), SegmentSpec())
        assert not np.any(prepare_context(seg).data)

    def test_only_border_frames_see_padding(self, rng, spec):
        x = rng.standard_normal(5120)
        seg = split_segment(AudioBuffer(x), spec)
        ctx = prepare_context(seg)
        full = full_stft(seg.full(), P, default_layout())
        np.testing.assert_allclose(ctx.before.coeffs[:, :13], full.coeffs[:, :13], atol=1e-12)
        np.testing.assert_allclose(ctx.after.coeffs[:, 3:], full.coeffs[:, 24:], atol=1e-12)
        assert not np.allclose(ctx.before.coeffs[:, 13:], full.coeffs[:, 13:16])

    def test_after_context_origin(self, noisy_segment):
        assert prepare_context(noisy_segment).after.frame_origin == -384


class TestAssembly:
    def test_true_gap_frames_reconstruct(self, noisy_segment):
        lay = default_layout()
        full = full_stft(noisy_segment.full(), P, lay)
        ctx = prepare_context(noisy_segment)
        gap = full.frames(lay.gap_slice)
        out = assemble_full(ctx.before, gap, ctx.after, lay)
        assert out.n_frames == 37
        np.testing.assert_allclose(istft(out).samples, noisy_segment.full().samples, atol=1e-8)

    def test_gap_edit_only_touches_gap_support(self, noisy_segment, rng):
        lay = default_layout()
        ctx = prepare_context(noisy_segment)
        junk = TFMatrix(rng.standard_normal((257, 11)) + 1j * rng.standard_normal((257, 11)), P)
        y = istft(assemble_full(ctx.before, junk, ctx.after, lay)).samples
        x = noisy_segment.full().samples
        np.testing.assert_allclose(y[:1664], x[:1664], atol=1e-8)
        np.testing.assert_allclose(y[3456:], x[3456:], atol=1e-8)
        assert not np.allclose(y[1664:3456], x[1664:3456])

    def test_shape_mismatch_rejected(self, noisy_segment):
        ctx = prepare_context(noisy_segment)
        with pytest.raises(ValueError):
            assemble_full(ctx.before, TFMatrix(np.zeros((257, 10)), P), ctx.after)

    def test_gap_frames_depend_only_on_gap(self, noisy_segment, rng):
        lay = default_layout()
        x = noisy_segment.full().samples.copy()
        a = gap_frames(full_stft(AudioBuffer(x), P, lay)).coeffs
        x[:2048] = rng.standard_normal(2048)
        x[3072:] = 0
        b = gap_frames(full_stft(AudioBuffer(x), P, lay)).coeffs
        np.testing.assert_array_equal(a, b)
        assert a.shape == (257, 5)

    def test_gap_frames_needs_full_layout(self):
        with pytest.raises(ValueError):
            gap_frames(TFMatrix(np.zeros((257, 30)), P))


class TestSerialization:
    def test_round_trip(self, tmp_path, rng):
        tf = TFMatrix(rng.standard_normal((257, 7)) + 1j * rng.standard_normal((257, 7)), P)
        write_tf(tmp_path / "c.tf", tf)
        raw = (tmp_path / "c.tf").read_bytes()
        assert raw[:4] == b"GFTF" and len(raw) == 16 + 257 * 7 * 16
        np.testing.assert_array_equal(read_tf(tmp_path / "c.tf").coeffs, tf.coeffs)

    def test_bad_magic(self, tmp_path):
        (tmp_path / "x").write_bytes(b"XXXX" + bytes(12))
        with pytest.raises(ValueError):
            read_tf(tmp_path / "x")

    def test_non_finite_rejected(self):
        with pytest.raises(ValueError):
            TFMatrix(np.full((257, 1), np.nan), P)
