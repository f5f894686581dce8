"""``gapfill`` command-line entry point.

Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import os
import sys
from pathlib import Path

from .dataset import CorpusManifest, EmptyStoreError, SegmentStore, build_store, counts_table
from .evaluation import (SHORT_GAP_SPEC, GapExtensionMode, IdentityMethod, LPCMethod,
                         NetworkMethod, ZeroMethod, evaluate_dataset, extend_gap, probe_tones,
                         snr_ms, snr_td)
from .nn.checkpoint import load_checkpoint, save_checkpoint
from .nn.loss import LossParams
from .nn.network import VARIANTS, NetworkModel, canonical_config, toy_config
from .nn.train import TrainSchedule, make_examples, train
from .phase import RetrievalConfig
from .signal import AudioBuffer, SegmentSpec, pure_tone_grid, read_wav, split_segment, write_wav
from .tf import STFTParams

log = logging.getLogger("gapfill")

EXIT_OK, EXIT_RUNTIME, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    """Bad flags, configuration or inputs; maps to exit code 2."""


# configuration ----------------------------------------------------------------

_SECTIONS = {
    "segment": SegmentSpec,
    "stft": STFTParams,
    "train": TrainSchedule,
    "loss": LossParams,
    "retrieval": RetrievalConfig,
}
_SIMPLE = {
    "network": {"size": "canonical"},
    "dataset": {"fractions": [0.7, 0.2, 0.1], "shift": 512, "threshold": 1e-4},
}


@dataclasses.dataclass
class RunConfig:
    segment: SegmentSpec = dataclasses.field(default_factory=SegmentSpec)
    stft: STFTParams = dataclasses.field(default_factory=STFTParams)
    train: TrainSchedule = dataclasses.field(default_factory=TrainSchedule)
    loss: LossParams = dataclasses.field(default_factory=LossParams)
    retrieval: RetrievalConfig = dataclasses.field(default_factory=RetrievalConfig)
    network: dict = dataclasses.field(default_factory=lambda: dict(_SIMPLE["network"]))
    dataset: dict = dataclasses.field(default_factory=lambda: dict(_SIMPLE["dataset"]))
    seed: int | None = None

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        unknown = set(d) - set(_SECTIONS) - set(_SIMPLE) - {"seed"}
        if unknown:
            raise UsageError(f"unknown config keys: {sorted(unknown)}")
        kwargs = {}
        for name, typ in _SECTIONS.items():
            sec = d.get(name, {})
            allowed = {f.name for f in dataclasses.fields(typ)}
            bad = set(sec) - allowed
            if bad:
                raise UsageError(f"unknown keys in [{name}]: {sorted(bad)}")
            try:
                kwargs[name] = typ(**sec)
            except (TypeError, ValueError) as exc:
                raise UsageError(f"invalid [{name}]: {exc}") from exc
        for name, defaults in _SIMPLE.items():
            sec = d.get(name, {})
            bad = set(sec) - set(defaults)
            if bad:
                raise UsageError(f"unknown keys in [{name}]: {sorted(bad)}")
            kwargs[name] = {**defaults, **sec}
        if kwargs["network"]["size"] not in ("canonical", "toy"):
            raise UsageError("network.size must be 'canonical' or 'toy'")
        if kwargs["stft"].sample_rate != kwargs["segment"].sample_rate:
            raise UsageError("stft and segment sample rates differ")
        seed = d.get("seed")
        if seed is not None and not isinstance(seed, int):
            raise UsageError("seed must be an integer")
        return cls(**kwargs, seed=seed)

    @classmethod
    def load(cls, path: str | None) -> "RunConfig":
        if path is None:
            return cls()
        try:
            data = json.loads(Path(path).read_text())
        except OSError as exc:
            raise UsageError(f"cannot read config {path}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise UsageError(f"config {path} is not valid JSON: {exc}") from exc
        if not isinstance(data, dict):
            raise UsageError("config must be a JSON object")
        return cls.from_dict(data)


def resolve_seed(args, cfg: RunConfig) -> int:
    """``--seed`` beats ``GAPFILL_SEED`` beats the config file; default 0."""
    if getattr(args, "seed", None) is not None:
        return args.seed
    env = os.environ.get("GAPFILL_SEED")
    if env is not None:
        try:
            return int(env)
        except ValueError as exc:
            raise UsageError(f"GAPFILL_SEED must be an integer, got {env!r}") from exc
    return cfg.seed if cfg.seed is not None else 0


def _require_file(path, what: str):
    if path is None or not Path(path).is_file():
        raise UsageError(f"{what} not found: {path}")


def _load_model(path):
    _require_file(path, "model checkpoint")
    model, _, _ = load_checkpoint(path, with_optimizer=False)
    return model


# commands ---------------------------------------------------------------------

def cmd_dataset_build(args, cfg: RunConfig) -> int:
    _require_file(args.manifest, "manifest")
    try:
        manifest = CorpusManifest.read(args.manifest)
    except (ValueError, json.JSONDecodeError) as exc:
        raise UsageError(f"invalid manifest: {exc}") from exc
    ds = cfg.dataset
    if args.out is None and not args.dry_run:
        raise UsageError("--out is required unless --dry-run is given")
    try:
        store, failures = build_store(manifest, cfg.segment, None if args.dry_run else args.out,
                                      tuple(ds["fractions"]), resolve_seed(args, cfg),
                                      int(ds["shift"]), float(ds["threshold"]), args.jobs)
    except EmptyStoreError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    for path, msg in failures:
        print(f"skipped {path}: {msg}", file=sys.stderr)
    print(counts_table(store))
    return EXIT_OK


def _network_config(variant: str, size: str):
    return toy_config(variant) if size == "toy" else canonical_config(variant)


def cmd_train(args, cfg: RunConfig) -> int:
    if not (Path(args.store) / "index.jsonl").is_file():
        raise UsageError(f"segment store not found: {args.store}")
    store = SegmentStore.open(args.store)
    seed = resolve_seed(args, cfg)
    schedule = cfg.train
    overrides = {k: getattr(args, k) for k in ("phase1_steps", "phase2_steps", "batch_size",
                                                "monitor_every") if getattr(args, k) is not None}
    if overrides:
        try:
            schedule = dataclasses.replace(schedule, **overrides)
        except ValueError as exc:
            raise UsageError(str(exc)) from exc
    size = args.size or cfg.network["size"]

    if args.resume:
        _require_file(args.resume, "checkpoint")
        model, optimizer, _ = load_checkpoint(args.resume)
        if args.variant and args.variant != model.config.variant:
            raise UsageError(f"checkpoint is a {model.config.variant} model")
    else:
        if not args.variant:
            raise UsageError("--variant is required when not resuming")
        model = NetworkModel(_network_config(args.variant, size), seed=seed)
        optimizer = None

    train_segs = [s for _, s in store.segments("train", args.limit)]
    val_segs = [s for _, s in store.segments("validation", args.limit)] or train_segs
    if not train_segs:
        raise UsageError("store has no training segments")
    variant = model.config.variant
    train_xy = make_examples(train_segs, variant, cfg.stft)
    val_xy = make_examples(val_segs, variant, cfg.stft)
    out = Path(args.out)

    def on_monitor(m, opt, entry):
        print(f"step {entry['step']}  lr {entry['lr']:.0e}  val_nmse {entry['val_nmse']:.6f}",
              flush=True)
        if entry["step"]:
            save_checkpoint(out, m, opt, {"seed": seed})

    model, optimizer, _ = train(model, train_xy, schedule, cfg.loss, val_xy, seed,
                                optimizer, on_monitor)
    save_checkpoint(out, model, optimizer, {"seed": seed})
    print(f"wrote {out} at step {model.step}")
    return EXIT_OK


def _method(name: str, models: dict, cfg: RunConfig):
    if name == "lpc":
        return LPCMethod()
    if name == "identity":
        return IdentityMethod()
    if name == "zero":
        return ZeroMethod()
    if name in VARIANTS:
        if name not in models:
            raise UsageError(f"method {name!r} needs --model with a {name} checkpoint")
        return NetworkMethod(models[name], cfg.retrieval, cfg.stft)
    raise UsageError(f"unknown method {name!r}")


def _models(paths) -> dict:
    out = {}
    for p in paths or []:
        m = _load_model(p)
        out[m.config.variant] = m
    return out


def cmd_inpaint(args, cfg: RunConfig) -> int:
    _require_file(args.input, "input")
    buf = read_wav(args.input)
    n = len(buf)
    if args.gap_len <= 0 or args.gap_start < 0 or args.gap_start + args.gap_len > n:
        raise UsageError(f"gap [{args.gap_start}, {args.gap_start + args.gap_len}) "
                         f"outside the file of {n} samples")
    if buf.sample_rate != cfg.segment.sample_rate:
        raise UsageError(f"input must be sampled at {cfg.segment.sample_rate} Hz")
    try:
        spec = SegmentSpec.from_gap(args.gap_len, cfg.segment.total_len, buf.sample_rate)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    lo = args.gap_start - spec.context_len
    hi = lo + spec.total_len
    if lo < 0 or hi > n:
        raise UsageError(f"need {spec.context_len} context samples on both sides of the gap")
    method = _method(args.method, _models([args.model] if args.model else []), cfg)

    seg = split_segment(AudioBuffer(buf.samples[lo:hi], buf.sample_rate), spec)
    if method.native_spec is not None and method.native_spec != spec:
        if spec.gap_len >= method.native_spec.gap_len:
            raise UsageError(f"gap longer than the model's {method.native_spec.gap_len} samples")
        ext = extend_gap(seg, GapExtensionMode(args.extension), method.native_spec)
        restored = ext.merge(method.restore(ext.network_segment()))
    else:
        restored = method.restore(seg)

    out = buf.samples.copy()
    out[args.gap_start:args.gap_start + args.gap_len] = \
        restored.samples[spec.gap_start:spec.gap_stop]
    write_wav(args.out, AudioBuffer(out, buf.sample_rate), "FLOAT" if args.float else "PCM_16")
    if args.truth:
        _require_file(args.truth, "ground truth")
        truth = read_wav(args.truth)
        if len(truth) != n:
            raise UsageError("ground truth length differs from input")
        tseg = split_segment(AudioBuffer(truth.samples[lo:hi], truth.sample_rate), spec)
        print(f"snr_td_db {snr_td(tseg, restored):.3f}")
        print(f"snr_ms_db {snr_ms(tseg, restored, cfg.stft):.3f}")
    return EXIT_OK


def cmd_evaluate(args, cfg: RunConfig) -> int:
    if not (Path(args.store) / "index.jsonl").is_file():
        raise UsageError(f"segment store not found: {args.store}")
    store = SegmentStore.open(args.store)
    models = _models(args.model)
    methods = [_method(m.strip(), models, cfg) for m in args.methods.split(",") if m.strip()]
    if not methods:
        raise UsageError("no methods given")
    segments = store.segments(args.split, args.limit)
    if not segments:
        raise UsageError(f"store has no {args.split} segments")
    if args.gap_ms == 48:
        segments = [(i, split_segment(s.full(), SHORT_GAP_SPEC)) for i, s in segments]
    elif args.gap_ms != 64:
        raise UsageError("--gap-ms must be 64 or 48")
    extension = None if args.extension == "all" else args.extension
    report = evaluate_dataset(segments, methods, extension, cfg.stft, args.jobs)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    report.write(out / "records.csv", out / "aggregates.json")
    for tag, agg in report.aggregates().items():
        print(f"{tag:<22} snr_td {agg['snr_td_db']['mean']:8.3f}  "
              f"snr_ms {agg['snr_ms_db']['mean']:8.3f}  n {agg['snr_td_db']['n']}")
    return EXIT_OK


def cmd_probe_tones(args, cfg: RunConfig) -> int:
    method = NetworkMethod(_load_model(args.model), cfg.retrieval, cfg.stft)
    grid = pure_tone_grid(args.n_freq, args.n_phase, args.n_amp, args.fmin, args.fmax)
    curve = probe_tones(method, grid, cfg.stft)
    curve.write_csv(args.out)
    print(f"wrote {len(curve.freqs)} frequencies to {args.out}")
    return EXIT_OK


# parser -----------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON run configuration; flags take precedence")
    common.add_argument("--seed", type=int, help="overrides GAPFILL_SEED and the config")
    common.add_argument("--jobs", type=int, default=1, help="worker processes")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="gapfill", description="Audio gap restoration toolkit.")
    sub = p.add_subparsers(dest="command", required=True)

    ds = sub.add_parser("dataset", help="segment store operations")
    ds_sub = ds.add_subparsers(dest="dataset_command", required=True)
    b = ds_sub.add_parser("build", parents=[common], help="build a segment store")
    b.add_argument("--manifest", required=True)
    b.add_argument("--out")
    b.add_argument("--dry-run", action="store_true", help="print counts without writing")
    b.set_defaults(func=cmd_dataset_build)

    t = sub.add_parser("train", parents=[common], help="train a network")
    t.add_argument("--variant", choices=VARIANTS)
    t.add_argument("--store", required=True)
    t.add_argument("--out", required=True)
    t.add_argument("--resume")
    t.add_argument("--size", choices=("canonical", "toy"))
    t.add_argument("--phase1-steps", type=int)
    t.add_argument("--phase2-steps", type=int)
    t.add_argument("--batch-size", type=int)
    t.add_argument("--monitor-every", type=int)
    t.add_argument("--limit", type=int, help="use at most this many segments per split")
    t.set_defaults(func=cmd_train)

    i = sub.add_parser("inpaint", parents=[common], help="restore a gap in a WAV file")
    i.add_argument("--in", dest="input", required=True)
    i.add_argument("--gap-start", type=int, required=True)
    i.add_argument("--gap-len", type=int, required=True)
    i.add_argument("--method", choices=("lpc",) + VARIANTS, required=True)
    i.add_argument("--model")
    i.add_argument("--truth")
    i.add_argument("--out", required=True)
    i.add_argument("--extension", choices=[m.value for m in GapExtensionMode],
                   default="centered")
    i.add_argument("--float", action="store_true", help="write 32-bit float samples")
    i.set_defaults(func=cmd_inpaint)

    e = sub.add_parser("evaluate", parents=[common], help="score methods on a store")
    e.add_argument("--store", required=True)
    e.add_argument("--methods", default="lpc")
    e.add_argument("--model", action="append", help="checkpoint; repeat for both variants")
    e.add_argument("--gap-ms", type=int, default=64)
    e.add_argument("--extension", choices=[m.value for m in GapExtensionMode] + ["all"],
                   default="all")
    e.add_argument("--split", default="test")
    e.add_argument("--limit", type=int)
    e.add_argument("--out", default="eval")
    e.set_defaults(func=cmd_evaluate)

    pt = sub.add_parser("probe-tones", parents=[common], help="pure-tone SNR curve")
    pt.add_argument("--model", required=True)
    pt.add_argument("--n-freq", type=int, default=600)
    pt.add_argument("--n-phase", type=int, default=4)
    pt.add_argument("--n-amp", type=int, default=3)
    pt.add_argument("--fmin", type=float, default=20.0)
    pt.add_argument("--fmax", type=float, default=8000.0)
    pt.add_argument("--out", default="probe_tones.csv")
    pt.set_defaults(func=cmd_probe_tones)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = RunConfig.load(args.config)
        return args.func(args, cfg)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except Exception as exc:  # noqa: BLE001
        log.debug("failure", exc_info=True)
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
