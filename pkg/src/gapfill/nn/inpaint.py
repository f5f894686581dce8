"""Gap restoration with a trained network."""

from __future__ import annotations

import numpy as np

from ..phase import MagnitudeGrid, RetrievalConfig, reconstruct_from_magnitude
from ..signal import AudioBuffer, Segment
from ..tf import FrameLayout, STFTParams, TFMatrix, assemble_full, istft, prepare_context
from .network import NetworkModel


def predict_gap(model: NetworkModel, segments, params: STFTParams | None = None,
                batch_size: int = 64):
    """Network outputs and context transforms for a list of segments."""
    contexts = [prepare_context(s, params) for s in segments]
    preds = []
    for i in range(0, len(contexts), batch_size):
        x = np.stack([c.data for c in contexts[i:i + batch_size]])
        preds.append(model.forward(x, training=False).astype(np.float64))
    return np.concatenate(preds), contexts


def restore_from_prediction(pred: np.ndarray, context, seg: Segment, variant: str,
                            retrieval: RetrievalConfig = RetrievalConfig()) -> AudioBuffer:
    """Turn one network output into a full-length signal.

    Complex outputs are inserted between the kept context frames and
    synthesised directly. Magnitude outputs (clamped at zero) are joined
    with the context magnitudes, phase is retrieved on the whole grid (with
    the known context coefficients held fixed unless
    ``retrieval.clamp_context`` is off) and then synthesised.
    """
    params = context.before.params
    layout = FrameLayout(params, seg.spec)
    if variant == "complex":
        gap = TFMatrix(pred[0] + 1j * pred[1], params)
        return istft(assemble_full(context.before, gap, context.after, layout))

    gap_mag = TFMatrix(np.maximum(pred[0], 0.0), params)
    known = assemble_full(context.before, gap_mag, context.after, layout).coeffs
    mags = np.abs(known)
    mags[:, layout.gap_slice] = gap_mag.coeffs.real
    mask = np.zeros(mags.shape, bool)
    mask[:, :layout.kept_frames] = True
    mask[:, layout.kept_frames + layout.gap_frames:] = True
    if retrieval.clamp_context:
        coeffs = reconstruct_from_magnitude(MagnitudeGrid(mags, params), retrieval, known, mask)
    else:
        gap_only = reconstruct_from_magnitude(MagnitudeGrid(mags[:, layout.gap_slice], params),
                                              retrieval)
        full = known.copy()
        full[:, layout.gap_slice] = gap_only.coeffs
        coeffs = TFMatrix(full, params)
    return istft(coeffs)


def inpaint(model: NetworkModel, seg: Segment, retrieval: RetrievalConfig = RetrievalConfig(),
            params: STFTParams | None = None) -> AudioBuffer:
    """Restore ``seg`` (``total_len`` samples) from its contexts."""
    params = params or STFTParams(sample_rate=seg.spec.sample_rate)
    layout = FrameLayout(params, seg.spec)
    if layout.gap_frames != model.config.output_shape[2]:
        raise ValueError(f"model predicts {model.config.output_shape[2]} gap frames, "
                         f"segment geometry needs {layout.gap_frames}")
    pred, contexts = predict_gap(model, [seg], params)
    return restore_from_prediction(pred[0], contexts[0], seg, model.config.variant, retrieval)


def inpaint_many(model: NetworkModel, segments, retrieval: RetrievalConfig = RetrievalConfig(),
                 params: STFTParams | None = None, batch_size: int = 64):
    segments = list(segments)
    if not segments:
        return []
    pred, contexts = predict_gap(model, segments, params, batch_size)
    return [restore_from_prediction(p, c, s, model.config.variant, retrieval)
            for p, c, s in zip(pred, contexts, segments)]
