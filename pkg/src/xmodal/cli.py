"""Command-line driver: ``xmodal {synth,split,train,eval,inspect}``.

Exit codes: 0 success, 2 config error, 3 data error, 4 numeric failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import bundle as bundle_io
from .dataio import SynthConfig, generate_synthetic, save_feature_file, split
from .errors import IoFailure, XmodalError
from .pipeline import (
    STAGES,
    evaluate_bundle,
    load_config,
    load_pair,
    trace_json,
    train_stage,
    training_data,
)
from .retrieval import METRICS, RELEVANCE

log = logging.getLogger("xmodal")


def _write_pair(ds, out: Path, prefix: str = ""):
    save_feature_file(ds.a, out / f"{prefix}viewA.xmf")
    save_feature_file(ds.b, out / f"{prefix}viewB.xmf")


def _mkdir(path) -> Path:
    out = Path(path)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise IoFailure(f"cannot create {out}: {exc}") from exc
    return out


def cmd_synth(args) -> int:
    cfg = SynthConfig(
        classes=args.classes, per_class=args.per_class, dimA=args.dimA, dimB=args.dimB,
        latent_dim=args.latent_dim, noise_sigma=args.noise, frames=args.frames,
        center_spread=args.center_spread, instance_sigma=args.instance_sigma,
    )
    ds = generate_synthetic(cfg, args.seed)
    out = _mkdir(args.out)
    _write_pair(ds, out)
    print(f"wrote {ds.M} pairs to {out}/viewA.xmf, {out}/viewB.xmf")
    return 0


def cmd_split(args) -> int:
    ds = load_pair(args.a, args.b, args.format)
    train, test = split(ds, args.fraction, args.seed)
    out = _mkdir(args.out)
    _write_pair(train, out, "train_")
    _write_pair(test, out, "test_")
    print(f"train {train.M} / test {test.M} written to {out}")
    return 0


def cmd_train(args) -> int:
    overrides = list(args.set or [])
    if args.stage:
        overrides.append(f'stage="{args.stage}"')
    if args.out:
        overrides.append(f"output_dir={json.dumps(str(Path(args.out).resolve()))}")
    cfg = load_config(args.config, overrides)
    train, held_out = training_data(cfg)
    model_bundle, trace = train_stage(train, cfg)
    out = _mkdir(cfg.output_dir)
    bundle_io.save_bundle(model_bundle, out / "model.xmb")
    (out / "trace.json").write_text(trace_json(trace))
    if held_out is not None:
        _write_pair(held_out, out, "test_")
    print(f"stage {cfg.stage}: sections {model_bundle.tags} -> {out / 'model.xmb'}")
    return 0


def cmd_eval(args) -> int:
    model_bundle = bundle_io.load_bundle(args.bundle)
    test = load_pair(args.a, args.b, args.format)
    ev = model_bundle.config.get("eval", {})
    metric = args.metric or ev.get("metric", "cosine")
    relevance = args.relevance or ev.get("relevance", "class")
    report = evaluate_bundle(model_bundle, test, metric, relevance, args.workers)
    names = tuple(args.names.split(",", 1)) if args.names else ("audio", "visual")
    print(report.table(names))
    if args.report:
        Path(args.report).write_text(report.to_json())
    if args.report_csv:
        report.write_csv(args.report_csv)
    return 0


def cmd_inspect(args) -> int:
    try:
        buf = Path(args.bundle).read_bytes()
    except OSError as exc:
        raise IoFailure(f"cannot read {args.bundle}: {exc}") from exc
    manifest, _ = bundle_io.read_manifest(buf)
    bundle_io.bundle_from_bytes(buf)  # full integrity check
    print(json.dumps(manifest, indent=2, sort_keys=True))
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="xmodal", description="Cross-modal joint embedding toolkit")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", help="generate a synthetic paired dataset")
    s.add_argument("--out", required=True)
    s.add_argument("--classes", type=int, default=4)
    s.add_argument("--per-class", type=int, default=50)
    s.add_argument("--dimA", type=int, default=128)
    s.add_argument("--dimB", type=int, default=1024)
    s.add_argument("--latent-dim", type=int, default=10)
    s.add_argument("--noise", type=float, default=0.5)
    s.add_argument("--frames", type=int, default=1)
    s.add_argument("--center-spread", type=float, default=1.0)
    s.add_argument("--instance-sigma", type=float, default=1.0)
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("split", help="stratified train/test split")
    s.add_argument("--a", required=True)
    s.add_argument("--b", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--fraction", type=float, default=0.8)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--format", choices=("xmf", "csv"), default="xmf")
    s.set_defaults(func=cmd_split)

    s = sub.add_parser("train", help="train a stage chain from a config file")
    s.add_argument("config")
    s.add_argument("--stage", choices=STAGES)
    s.add_argument("--out", help="output directory (overrides output_dir)")
    s.add_argument("--set", action="append", metavar="KEY=VALUE",
                   help="override a config key, e.g. train.epochs=50")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("eval", help="evaluate a bundle on paired test data")
    s.add_argument("bundle")
    s.add_argument("--a", required=True)
    s.add_argument("--b", required=True)
    s.add_argument("--format", choices=("xmf", "csv"), default="xmf")
    s.add_argument("--metric", choices=METRICS)
    s.add_argument("--relevance", choices=RELEVANCE)
    s.add_argument("--workers", type=int, default=1)
    s.add_argument("--report", help="write the JSON report here")
    s.add_argument("--report-csv", help="write per-query APs as CSV")
    s.add_argument("--names", help="view names for the table, e.g. audio,visual")
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("inspect", help="print a bundle manifest")
    s.add_argument("bundle")
    s.set_defaults(func=cmd_inspect)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except XmodalError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
