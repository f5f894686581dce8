import csv
import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from gapfill.evaluation import (LONG_GAP_SPEC, SHORT_GAP_SPEC, SNR_CAP_DB, EvalReport,
                                GapExtensionMode, IdentityMethod, LPCMethod, NetworkMethod,
                                UndefinedSNR, ZeroMethod, evaluate_dataset, extend_gap,
                                moving_average, probe_tones, snr, snr_ms, snr_td, tone_segment)
from gapfill.nn.network import NetworkModel, toy_config
from gapfill.signal import AudioBuffer, SegmentSpec, generate_pure_tone, split_segment


def zero_weights(variant):
    m = NetworkModel(toy_config(variant))
    for *_, p in m.named_params():
        p[...] = 0
    return m


class TestSnr:
    def test_identities(self, rng):
        x = rng.standard_normal(100)
        assert snr(x, np.zeros(100)) == 0.0
        assert snr(x, 2 * x) == pytest.approx(0.0, abs=1e-12)
        assert snr(x, x) == SNR_CAP_DB

    def test_silent_reference(self):
        with pytest.raises(UndefinedSNR):
            snr(np.zeros(3), np.ones(3))

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            snr(np.ones(3), np.ones(4))

    @settings(max_examples=50)
    @given(st.floats(-1e3, 1e3).filter(lambda c: abs(c) > 1e-3), st.integers(0, 2**31))
    def test_joint_scale_invariance(self, c, seed):
        r = np.random.default_rng(seed)
        x, y = r.standard_normal(50), r.standard_normal(50)
        assert snr(c * x, c * y) == pytest.approx(snr(x, y), abs=1e-9)


class TestSegmentMetrics:
    def test_perfect(self, noisy_segment):
        assert snr_td(noisy_segment, noisy_segment.full()) == SNR_CAP_DB
        assert snr_ms(noisy_segment, noisy_segment.full()) == SNR_CAP_DB

    def test_zero_gap(self, noisy_segment):
        assert snr_td(noisy_segment, ZeroMethod().restore(noisy_segment)) == 0.0

    def test_sign_flipped_gap(self, noisy_segment):
        x = noisy_segment.full().samples.copy()
        x[2048:3072] *= -1
        assert snr_td(noisy_segment, AudioBuffer(x)) == pytest.approx(-6.02, abs=0.01)

    def test_ms_sign_invariant(self, noisy_segment):
        assert snr_ms(noisy_segment, noisy_segment.full().scaled(-1)) == SNR_CAP_DB

    def test_ms_ignores_delay_by_one_period(self):
        seg = tone_segment(500.0, 0.0, 0.8)
        delayed = AudioBuffer(np.roll(seg.full().samples, 16))  # half a period
        assert snr_td(seg, delayed) < 0
        assert snr_ms(seg, delayed) >= 40
        shifted = AudioBuffer(np.roll(seg.full().samples, 32))  # full period
        assert snr_ms(seg, shifted) >= 40

    @pytest.mark.parametrize("phi", [0.3, 1.7, 2.9])
    def test_ms_phase_rotation(self, phi):
        a = tone_segment(700.0, 0.0, 0.5)
        b = generate_pure_tone(700.0, phi, 0.5, 5120)
        assert snr_ms(a, b) >= 40

    def test_wrong_length(self, noisy_segment):
        with pytest.raises(ValueError):
            snr_td(noisy_segment, AudioBuffer(np.zeros(10)))


class TestExtendGap:
    @pytest.fixture
    def seg48(self, rng):
        return split_segment(AudioBuffer(rng.standard_normal(5120)), SHORT_GAP_SPEC)

    @pytest.mark.parametrize("mode,start", [("centered", 2176 - 128), ("forward", 2176),
                                            ("backward", 2176 - 256)])
    def test_new_gap_position(self, seg48, mode, start):
        ext = extend_gap(seg48, mode)
        assert ext.gap_start == start and ext.gap_len == 1024
        lo, hi = ext.eval_span
        assert ext.gap_start <= lo and hi <= ext.gap_start + ext.gap_len

    @pytest.mark.parametrize("mode", list(GapExtensionMode))
    def test_samples_untouched(self, seg48, mode):
        ext = extend_gap(seg48, mode)
        np.testing.assert_array_equal(ext.samples.samples, seg48.full().samples)

    @pytest.mark.parametrize("mode", list(GapExtensionMode))
    def test_context_never_sees_original_gap(self, seg48, mode):
        ext = extend_gap(seg48, mode)
        net = ext.network_segment()
        lo, hi = ext.eval_span
        shift = ext.shift
        ctx_idx = np.r_[np.arange(0, 2048), np.arange(3072, 5120)] + shift
        assert not np.any((ctx_idx >= lo) & (ctx_idx < hi))
        # retained context equals the original samples where available
        x = seg48.full().samples
        inside = (ctx_idx >= 0) & (ctx_idx < 5120)
        ctx = np.r_[net.before.samples, net.after.samples]
        np.testing.assert_array_equal(ctx[inside], x[ctx_idx[inside]])
        assert not np.any(ctx[~inside])

    def test_merge_only_writes_original_gap(self, seg48):
        ext = extend_gap(seg48, "forward")
        junk = AudioBuffer(np.full(5120, 7.0))
        out = ext.merge(junk).samples
        x = seg48.full().samples
        np.testing.assert_array_equal(out[:2176], x[:2176])
        np.testing.assert_array_equal(out[2944:], x[2944:])
        assert np.all(out[2176:2944] == 7.0)

    def test_wrong_geometry(self, noisy_segment):
        with pytest.raises(ValueError):
            extend_gap(noisy_segment, "centered")

    def test_bad_mode(self, seg48):
        with pytest.raises(ValueError):
            extend_gap(seg48, "sideways")


class TestEvaluateDataset:
    def test_identity_and_zero(self, rng):
        segs = [(i, split_segment(AudioBuffer(rng.standard_normal(5120)), SegmentSpec()))
                for i in range(4)]
        rep = evaluate_dataset(segs, [IdentityMethod(), ZeroMethod()])
        agg = rep.aggregates()
        assert agg["identity"]["snr_td_db"]["mean"] == SNR_CAP_DB
        assert agg["identity"]["snr_td_db"]["std"] == 0.0
        assert agg["identity"]["snr_td_db"]["n_capped"] == 4
        assert agg["zero"]["snr_td_db"]["mean"] == 0.0

    def test_silent_segment_excluded(self):
        segs = [(0, split_segment(AudioBuffer(np.zeros(5120)), SegmentSpec()))]
        rep = evaluate_dataset(segs, [ZeroMethod()])
        assert rep.records == [] and rep.excluded == {"zero": 1}

    def test_aggregates_recomputable(self, tmp_path, rng):
        segs = [(i, split_segment(AudioBuffer(rng.standard_normal(5120)), SegmentSpec()))
                for i in range(3)]
        rep = evaluate_dataset(segs, [LPCMethod(order=30), ZeroMethod()])
        rep.write(tmp_path / "r.csv", tmp_path / "r.json")
        data = json.loads((tmp_path / "r.json").read_text())
        assert data["schema"] == "gapfill.eval-report" and data["version"] == 1
        with open(tmp_path / "r.csv") as fh:
            rows = list(csv.DictReader(fh))
        assert list(rows[0]) == ["segment_id", "method", "snr_td_db", "snr_ms_db", "capped_flag"]
        back = EvalReport.read_csv(tmp_path / "r.csv")
        for method, agg in back.aggregates().items():
            for metric in ("snr_td_db", "snr_ms_db"):
                vals = [float(r[metric]) for r in rows if r["method"] == method]
                assert np.mean(vals) == pytest.approx(data["methods"][method][metric]["mean"],
                                                      abs=1e-12)
                assert np.std(vals) == pytest.approx(data["methods"][method][metric]["std"],
                                                     abs=1e-12)

    def test_short_gap_extension_modes(self, rng):
        x = generate_pure_tone(440, 0, 0.5, 5120).samples
        segs = [(0, split_segment(AudioBuffer(x), SHORT_GAP_SPEC))]
        rep = evaluate_dataset(segs, [NetworkMethod(zero_weights("complex")), LPCMethod()])
        tags = {r.method for r in rep.records}
        assert tags == {"lpc", "complex/forward", "complex/backward", "complex/centered"}
        ext = rep.extension_aggregates()
        assert ext["pooled"]["complex"]["snr_td_db"]["n"] == 3
        assert ext["mode_averaged"]["complex"]["snr_td_db"]["n"] == 1
        for r in rep.records:
            if r.method.startswith("complex"):
                assert r.snr_td_db == pytest.approx(0.0, abs=1e-9)

    def test_parallel_matches_serial(self, rng):
        segs = [(i, split_segment(AudioBuffer(rng.standard_normal(5120)), SegmentSpec()))
                for i in range(4)]
        a = evaluate_dataset(segs, [LPCMethod(order=20)], jobs=1)
        b = evaluate_dataset(segs, [LPCMethod(order=20)], jobs=2)
        assert a.records == b.records


class TestProbe:
    def test_moving_average_window(self):
        v = np.arange(60, dtype=float)
        out = moving_average(v)
        assert out[30] == pytest.approx(np.mean(v[18:43]))
        assert out[0] == v[0] and out[1] == pytest.approx(np.mean(v[0:3]))
        assert out[-1] == v[-1]
        np.testing.assert_allclose(moving_average(np.ones(40)), 1.0)

    def test_zero_model_flat_curve(self):
        grid = [(f, p, a) for f in (100.0, 1000.0, 3000.0, 8000.0) for p in (0.0, 1.0)
                for a in (0.5,)]
        curve = probe_tones(NetworkMethod(zero_weights("magnitude")), grid)
        assert list(curve.freqs) == [100.0, 1000.0, 3000.0]  # Nyquist tone skipped
        np.testing.assert_allclose(curve.raw, 0.0, atol=1e-9)
        np.testing.assert_allclose(curve.smoothed, 0.0, atol=1e-9)

    def test_curve_csv(self, tmp_path):
        curve = probe_tones(IdentityMethod(), [(440.0, 0.0, 1.0), (880.0, 0.0, 1.0)])
        curve.write_csv(tmp_path / "c.csv")
        rows = list(csv.reader(open(tmp_path / "c.csv")))
        assert rows[0] == ["freq_hz", "snr_ms_db", "snr_ms_smoothed_db"] and len(rows) == 3
