"""Corpus ingestion, segmentation and the on-disk segment store.

Store layout (directory)::

    meta.json      segment geometry, source label, per-split counts
    index.jsonl    one record per segment: id, source, offset, split
    segments.f32   little-endian float32 samples, total_len per segment
"""

from __future__ import annotations

import json
import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from math import gcd
from pathlib import Path

import numpy as np
from scipy.signal import resample_poly

from .signal import DEFAULT_RATE, AudioBuffer, Segment, SegmentSpec, read_wav, rms, split_segment

log = logging.getLogger(__name__)

SPLITS = ("train", "validation", "test")
SILENCE_THRESHOLD = 1e-4


class EmptyStoreError(ValueError):
    pass


@dataclass
class CorpusManifest:
    entries: list  # (path, split or None)
    source: str = ""

    def __post_init__(self):
        paths = [str(p) for p, _ in self.entries]
        if len(set(paths)) != len(paths):
            raise ValueError("manifest paths must be unique")
        for _, split in self.entries:
            if split is not None and split not in SPLITS:
                raise ValueError(f"invalid split tag {split!r}")

    @property
    def tagged(self) -> bool:
        return bool(self.entries) and all(s is not None for _, s in self.entries)

    @classmethod
    def read(cls, path: str | Path, source: str = "") -> "CorpusManifest":
        """JSON lines with ``path`` and optional ``split``; relative paths are
        resolved against the manifest's directory."""
        path = Path(path)
        entries = []
        for lineno, line in enumerate(path.read_text().splitlines(), 1):
            if not line.strip():
                continue
            rec = json.loads(line)
            if "path" not in rec:
                raise ValueError(f"{path}:{lineno}: missing 'path'")
            unknown = set(rec) - {"path", "split"}
            if unknown:
                raise ValueError(f"{path}:{lineno}: unknown fields {sorted(unknown)}")
            p = Path(rec["path"])
            if not p.is_absolute():
                p = path.parent / p
            entries.append((str(p), rec.get("split")))
        return cls(entries, source or path.stem)


def ingest(path: str | Path, sample_rate: int = DEFAULT_RATE) -> AudioBuffer:
    """Read a WAV file as mono at ``sample_rate`` (polyphase windowed-sinc resampling)."""
    buf = read_wav(path)
    if buf.sample_rate == sample_rate:
        return buf
    g = gcd(buf.sample_rate, sample_rate)
    y = resample_poly(buf.samples, sample_rate // g, buf.sample_rate // g)
    return AudioBuffer(y, sample_rate)


def remove_silence(buffer: AudioBuffer, threshold: float = SILENCE_THRESHOLD,
                   block_ms: float = 32.0) -> AudioBuffer:
    """Drop every block of ``block_ms`` whose RMS is below ``threshold``."""
    x = buffer.samples
    block = max(1, int(round(block_ms * buffer.sample_rate / 1000)))
    keep = [x[i:i + block] for i in range(0, len(x), block)
            if rms(x[i:i + block]) >= threshold]
    out = np.concatenate(keep) if keep else np.zeros(0)
    return AudioBuffer(out, buffer.sample_rate)


def segmentize(buffer: AudioBuffer, spec: SegmentSpec, shift: int = 512,
               min_gap_rms: float = SILENCE_THRESHOLD):
    """Overlapping segments starting at offsets ``0, shift, 2 shift, ...``.

    Returns ``(offset, Segment)`` pairs; segments whose gap RMS is below
    ``min_gap_rms`` are discarded.
    """
    out = []
    x = buffer.samples
    for start in range(0, len(x) - spec.total_len + 1, shift):
        seg = split_segment(AudioBuffer(x[start:start + spec.total_len], buffer.sample_rate), spec)
        if rms(seg.gap) >= min_gap_rms:
            out.append((start, seg))
    return out


def assign_splits(manifest: CorpusManifest, fractions=(0.7, 0.2, 0.1), seed: int = 0) -> list:
    """Split tag per manifest entry.

    Tags in the manifest win; otherwise whole files are shuffled with
    ``seed`` and dealt out by ``fractions`` (rounded, remainder to the last
    split), so no file contributes to two splits.
    """
    if manifest.tagged:
        return [s for _, s in manifest.entries]
    if len(fractions) != 3 or min(fractions) < 0 or abs(sum(fractions) - 1) > 1e-9:
        raise ValueError("fractions must be three nonnegative numbers summing to 1")
    n = len(manifest.entries)
    order = np.random.default_rng(seed).permutation(n)
    n_train = int(round(fractions[0] * n))
    n_val = min(int(round(fractions[1] * n)), n - n_train)
    tags = [None] * n
    for rank, i in enumerate(order):
        tags[i] = "train" if rank < n_train else "validation" if rank < n_train + n_val else "test"
    for i, (_, s) in enumerate(manifest.entries):
        if s is not None:
            tags[i] = s
    return tags


def _process_file(args):
    path, spec, shift, threshold = args
    try:
        buf = ingest(path, spec.sample_rate)
    except Exception as exc:  # reported and skipped
        return path, None, f"{type(exc).__name__}: {exc}"
    buf = remove_silence(buf, threshold)
    segs = segmentize(buf, spec, shift, threshold)
    if not segs:
        return path, (np.zeros(0, dtype=int), np.zeros((0, spec.total_len), np.float32)), None
    offsets = np.array([o for o, _ in segs])
    data = np.stack([s.full().samples for _, s in segs]).astype(np.float32)
    return path, (offsets, data), None


@dataclass
class SegmentStore:
    root: Path
    spec: SegmentSpec
    index: list = field(default_factory=list)
    source: str = ""

    @property
    def counts(self) -> dict:
        c = {s: 0 for s in SPLITS}
        for rec in self.index:
            c[rec["split"]] += 1
        return c

    def __len__(self) -> int:
        return len(self.index)

    def _data(self) -> np.ndarray:
        path = self.root / "segments.f32"
        if not len(self.index):
            return np.zeros((0, self.spec.total_len), np.float32)
        return np.memmap(path, dtype="<f4", mode="r").reshape(-1, self.spec.total_len)

    def ids(self, split: str | None = None) -> list:
        return [r["id"] for r in self.index if split is None or r["split"] == split]

    def segment(self, seg_id: int) -> Segment:
        row = np.asarray(self._data()[seg_id], dtype=np.float64)
        return split_segment(AudioBuffer(row, self.spec.sample_rate), self.spec)

    def segments(self, split: str | None = None, limit: int | None = None):
        ids = self.ids(split)[:limit]
        data = self._data()
        return [(i, split_segment(AudioBuffer(np.asarray(data[i], np.float64),
                                              self.spec.sample_rate), self.spec)) for i in ids]

    @classmethod
    def open(cls, root: str | Path) -> "SegmentStore":
        root = Path(root)
        meta = json.loads((root / "meta.json").read_text())
        spec = SegmentSpec(**meta["spec"])
        index = [json.loads(l) for l in (root / "index.jsonl").read_text().splitlines() if l]
        return cls(root, spec, index, meta.get("source", ""))


def build_store(manifest: CorpusManifest, spec: SegmentSpec, out_dir: str | Path | None,
                fractions=(0.7, 0.2, 0.1), seed: int = 0, shift: int = 512,
                threshold: float = SILENCE_THRESHOLD, jobs: int = 1):
    """Ingest, clean and segment every manifest file and persist the store.

    With ``out_dir=None`` nothing is written (dry run); the returned store
    then only carries the index. Returns ``(store, failures)`` where
    ``failures`` lists ``(path, message)`` for files that could not be read.
    """
    tags = assign_splits(manifest, fractions, seed)
    jobs_args = [(p, spec, shift, threshold) for p, _ in manifest.entries]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_process_file, jobs_args))
    else:
        results = [_process_file(a) for a in jobs_args]

    failures, index, blobs = [], [], []
    for (path, payload, err), split in zip(results, tags):
        if err is not None:
            log.warning("skipping %s: %s", path, err)
            failures.append((path, err))
            continue
        offsets, data = payload
        for off, row in zip(offsets, data):
            index.append({"id": len(index), "source": os.path.relpath(path)
                          if not os.path.isabs(path) else path,
                          "offset": int(off), "split": split})
            blobs.append(row)
    if not index:
        raise EmptyStoreError("no segments survived ingestion")

    root = Path(out_dir) if out_dir is not None else Path(".")
    store = SegmentStore(root, spec, index, manifest.source)
    if out_dir is not None:
        root.mkdir(parents=True, exist_ok=True)
        with open(root / "segments.f32", "wb") as fh:
            for row in blobs:
                fh.write(np.asarray(row, dtype="<f4").tobytes())
        with open(root / "index.jsonl", "w") as fh:
            for rec in index:
                fh.write(json.dumps(rec, sort_keys=True) + "\n")
        meta = {"spec": asdict(spec), "source": manifest.source, "counts": store.counts,
                "shift": shift, "threshold": threshold, "seed": seed}
        (root / "meta.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    return store, failures


def counts_table(store: SegmentStore) -> str:
    counts = store.counts
    total = sum(counts.values()) or 1
    lines = [f"{'split':<12}{'count':>10}{'percent':>10}"]
    for s in SPLITS:
        lines.append(f"{s:<12}{counts[s]:>10}{100 * counts[s] / total:>10.1f}")
    return "\n".join(lines)
