"""Command-line front end: dataset generation, phase-by-phase training,
evaluation, the ablation grid, gradient checking, and attention export.

Exit codes: 0 success; 2 invalid flags/spec or unreadable input file;
3 missing prerequisite checkpoint; 4 non-finite loss or gradient;
5 checkpoint/data dimension mismatch; 6 unknown sample id. Every failure
prints one ``error[<code-name>]: ...`` line to stderr.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import fields
from pathlib import Path

import numpy as np

from . import gradcheck
from .checkpoint import (CheckpointFormatError, load_checkpoint, params_from_blocks,
                         save_checkpoint)
from .data import (DatasetFormatError, SynthSpec, SynthSpecError,
                   generate_synthetic, load_dataset, save_dataset)
from .model import stage1_forward, stage2_forward
from .training import (NonFiniteLossError, RunConfig, TrainReport, ablation_suite,
                       evaluate, stream, train_all, train_fusion, train_stage1,
                       train_stage2, materialize_traces)
from .model import CamParams


class CliError(Exception):
    def __init__(self, exit_code, code, message):
        super().__init__(message)
        self.exit_code = exit_code
        self.code = code


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise CliError(2, "usage", message)


_CONFIG_FLAGS = ("hidden_dim", "att_dim", "lr_stage1", "lr_stage2", "lr_fusion",
                 "batch_size", "epochs_stage1", "epochs_stage2", "epochs_fusion",
                 "seed")


def _add_config_flags(parser):
    parser.add_argument("--config", type=Path, default=None,
                        help="JSON file with RunConfig fields (flags win)")
    parser.add_argument("--hidden-dim", type=int, default=None)
    parser.add_argument("--att-dim", type=int, default=None)
    parser.add_argument("--lr-stage1", type=float, default=None)
    parser.add_argument("--lr-stage2", type=float, default=None)
    parser.add_argument("--lr-fusion", type=float, default=None)
    parser.add_argument("--batch-size", type=int, default=None)
    parser.add_argument("--epochs-stage1", type=int, default=None)
    parser.add_argument("--epochs-stage2", type=int, default=None)
    parser.add_argument("--epochs-fusion", type=int, default=None)
    parser.add_argument("--seed", type=int, default=None)
    parser.add_argument("--no-collab-rgb", action="store_true",
                        help="disable the aid flowing into the RGB view")
    parser.add_argument("--no-collab-depth", action="store_true",
                        help="disable the aid flowing into the depth view")


def _build_config(args):
    """Precedence: explicit flags > config file > built-in defaults."""
    merged = {}
    if args.config is not None:
        try:
            merged.update(json.loads(Path(args.config).read_text()))
        except (OSError, json.JSONDecodeError) as exc:
            raise CliError(2, "invalid-config", f"cannot read config file: {exc}")
    for name in _CONFIG_FLAGS:
        value = getattr(args, name)
        if value is not None:
            merged[name] = value
    if args.no_collab_rgb:
        merged["collaborate_rgb"] = False
    if args.no_collab_depth:
        merged["collaborate_depth"] = False
    try:
        return RunConfig.from_dict(merged)
    except (TypeError, ValueError) as exc:
        raise CliError(2, "invalid-config", str(exc))


def _load_data(path):
    try:
        return load_dataset(path)
    except OSError as exc:
        raise CliError(2, "unreadable-input", str(exc))


def _check_dims(dataset, blocks_d_r, blocks_d_d, blocks_classes, what):
    pairs = (("rgb feature dim", dataset.d_r, blocks_d_r),
             ("depth feature dim", dataset.d_d, blocks_d_d),
             ("class count", dataset.n_classes, blocks_classes))
    for name, data_dim, ckpt_dim in pairs:
        if data_dim != ckpt_dim:
            raise CliError(5, "dim-mismatch",
                           f"{what}: {name} is {ckpt_dim} in checkpoint but "
                           f"{data_dim} in dataset")


def _params_dims(params):
    return (params.stage1_r.lstm.input_dim, params.stage1_d.lstm.input_dim,
            params.stage1_r.classifier.b.shape[0])


def cmd_gen_data(args):
    spec_kwargs = dict(n_classes=args.classes, seq_len=args.frames, d_r=args.dim_r,
                       d_d=args.dim_d, samples_per_class=args.per_class,
                       noise_std=args.noise_std, signal_frames=args.signal_frames,
                       overlap=args.overlap, seed=args.seed,
                       train_fraction=args.train_fraction)
    try:
        dataset = generate_synthetic(SynthSpec(**spec_kwargs))
    except SynthSpecError as exc:
        raise CliError(2, "invalid-spec", str(exc))
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_dataset(dataset, out)
    print(f"wrote {out}: C={dataset.n_classes} T={dataset.seq_len} "
          f"d_r={dataset.d_r} d_d={dataset.d_d} "
          f"train={len(dataset.train)} test={len(dataset.test)}")
    return 0


def _require_checkpoint(path, what):
    if not Path(path).exists():
        raise CliError(3, "missing-checkpoint", f"{what} checkpoint not found: {path}")
    return load_checkpoint(path)


def cmd_train(args):
    dataset = _load_data(args.data)
    config = _build_config(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    report = TrainReport(config=config.as_dict())

    if args.phase == "all":
        params, report, _ = train_all(dataset, config)
        save_checkpoint(out / "stage1.ckpt", params, "stage1", config.as_dict())
        save_checkpoint(out / "stage2.ckpt", params, "stage2", config.as_dict())
        save_checkpoint(out / "fusion.ckpt", params, "fusion", config.as_dict())
    elif args.phase == "stage1":
        view_r, view_d, _, curves = train_stage1(dataset, config)
        params = CamParams(view_r, view_d,
                           _fresh_stage2(dataset, config), _fresh_fusion(dataset, config))
        report.loss_curves.update(curves)
        save_checkpoint(out / "stage1.ckpt", params, "stage1", config.as_dict())
    elif args.phase == "stage2":
        phase, ckpt_config, blocks, _ = _require_checkpoint(out / "stage1.ckpt", "stage-1")
        params = params_from_blocks(phase, blocks, stream(config.seed, "resume"))
        _check_dims(dataset, *_params_dims(params), "train")
        traces = materialize_traces(dataset, params.stage1_r, params.stage1_d)
        model, curve = train_stage2(dataset, traces, config)
        params.stage2 = model
        report.loss_curves["stage2"] = curve
        save_checkpoint(out / "stage2.ckpt", params, "stage2", config.as_dict())
    else:  # fusion
        phase, ckpt_config, blocks, _ = _require_checkpoint(out / "stage2.ckpt", "stage-2")
        if phase == "stage1":
            raise CliError(3, "missing-checkpoint",
                           "stage2.ckpt does not contain trained stage-2 blocks")
        params = params_from_blocks(phase, blocks, stream(config.seed, "resume"))
        _check_dims(dataset, *_params_dims(params), "train")
        traces = materialize_traces(dataset, params.stage1_r, params.stage1_d)
        head, curve = train_fusion(dataset, params.stage2, traces, config)
        params.fusion = head
        report.loss_curves["fusion"] = curve
        if dataset.test:
            metrics = evaluate(dataset.test, params, config.options())
            report.accuracy = metrics["accuracy"]
            report.confusion = {k: v.tolist() for k, v in metrics["confusion"].items()}
        save_checkpoint(out / "fusion.ckpt", params, "fusion", config.as_dict())

    (out / "report.json").write_text(report.to_json())
    for phase_name, seconds in report.wall_clock.items():
        print(f"{phase_name}: {seconds:.1f}s")
    if report.accuracy:
        print("accuracy rgb={rgb:.4f} depth={depth:.4f} fused={fused:.4f}".format(
            **report.accuracy))
    print(f"wrote checkpoints and report to {out}")
    return 0


def _fresh_stage2(dataset, config):
    from .model import init_stage_two_model
    return init_stage_two_model(dataset.d_r, dataset.d_d, config.hidden_dim,
                                config.attention_dim, dataset.n_classes,
                                stream(config.seed, "init-stage2"))


def _fresh_fusion(dataset, config):
    from .model import init_fusion_head
    return init_fusion_head(dataset.n_classes, stream(config.seed, "init-fusion"))


def _write_confusion_csv(path, matrix):
    n = matrix.shape[1]
    lines = [",".join(f"pred_{j}" for j in range(n))]
    lines += [",".join(str(int(v)) for v in row) for row in matrix]
    Path(path).write_text("\n".join(lines) + "\n")


def cmd_eval(args):
    dataset = _load_data(args.data)
    phase, config_dict, blocks, _ = _require_checkpoint(args.checkpoint, "evaluation")
    if phase != "fusion":
        raise CliError(2, "invalid-checkpoint",
                       f"evaluation needs a full (fusion-phase) checkpoint, got {phase}")
    params = params_from_blocks(phase, blocks)
    _check_dims(dataset, *_params_dims(params), "eval")
    config = RunConfig.from_dict(config_dict)
    samples = dataset.split(args.split)
    if not samples:
        raise CliError(2, "invalid-spec", f"split {args.split!r} is empty")
    metrics = evaluate(samples, params, config.options())
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    acc = metrics["accuracy"]
    print(f"rgb={acc['rgb']:.6f} depth={acc['depth']:.6f} fused={acc['fused']:.6f}")
    payload = {"accuracy": acc,
               "confusion": {k: v.tolist() for k, v in metrics["confusion"].items()}}
    (out / "eval.json").write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
    for head, matrix in metrics["confusion"].items():
        _write_confusion_csv(out / f"confusion_{head}.csv", matrix)
    return 0


def cmd_ablation(args):
    dataset = _load_data(args.data)
    config = _build_config(args)
    rows = ablation_suite(dataset, config, one_sided=args.one_sided)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    lines = ["method,rgb,depth,fusion"]
    for row in rows:
        fusion = "-" if row["fusion"] is None else f"{row['fusion']:.6f}"
        lines.append(f"{row['name']},{row['rgb']:.6f},{row['depth']:.6f},{fusion}")
        print(lines[-1])
    (out / "ablation.csv").write_text("\n".join(lines) + "\n")
    return 0


def cmd_export_attention(args):
    dataset = _load_data(args.data)
    phase, config_dict, blocks, _ = _require_checkpoint(args.checkpoint, "attention export")
    if phase == "stage1":
        raise CliError(3, "missing-checkpoint",
                       "attention export needs stage-2 blocks; train stage2 first")
    params = params_from_blocks(phase, blocks, stream(0, "export"))
    _check_dims(dataset, *_params_dims(params), "export")
    config = RunConfig.from_dict(config_dict)
    by_id = {s.id: s for s in dataset.all_samples}
    wanted = [sid.strip() for sid in args.ids.split(",") if sid.strip()]
    if not wanted:
        raise CliError(2, "invalid-spec", "no sample ids given")
    missing = [sid for sid in wanted if sid not in by_id]
    if missing:
        raise CliError(6, "unknown-sample", f"unknown sample ids: {', '.join(missing)}")
    lines = ["sample_id,view,stage,t,z"]
    for sid in wanted:
        s = by_id[sid]
        _, z1_r = stage1_forward(s.x_r, params.stage1_r)
        _, z1_d = stage1_forward(s.x_d, params.stage1_d)
        _, _, z2_r, z2_d = stage2_forward(s.x_r, s.x_d, z1_r.values, z1_d.values,
                                          params.stage2, config.options())
        for view, stage, trace in (("r", 1, z1_r.values), ("d", 1, z1_d.values),
                                   ("r", 2, z2_r.values), ("d", 2, z2_d.values)):
            for t, z in enumerate(trace):
                lines.append(f"{sid},{view},{stage},{t},{z!r}")
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text("\n".join(lines) + "\n")
    print(f"wrote {len(wanted) * 4} traces to {out}")
    return 0


def cmd_gradcheck(args):
    if args.hidden_dim_gc > 16 or args.frames > 8:
        raise CliError(2, "invalid-spec",
                       f"gradcheck guard: hidden <= 16 and frames <= 8, got "
                       f"hidden={args.hidden_dim_gc} frames={args.frames}")
    results = gradcheck.check_all_losses(
        seed=args.seed, seq_len=args.frames, d_r=args.dim_r, d_d=args.dim_d,
        hidden_dim=args.hidden_dim_gc, n_classes=args.classes)
    worst = max(results.values())
    for family, err in results.items():
        print(f"{family}: max relative error {err:.3e}")
    print(f"worst: {worst:.3e}")
    return 0 if worst < 1e-4 else 1


def build_parser():
    parser = _Parser(prog="camseq", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate a synthetic two-view dataset")
    p.add_argument("--out", required=True, type=Path)
    p.add_argument("--classes", type=int, default=5)
    p.add_argument("--frames", type=int, default=20)
    p.add_argument("--dim-r", type=int, default=16)
    p.add_argument("--dim-d", type=int, default=16)
    p.add_argument("--per-class", type=int, default=100)
    p.add_argument("--noise-std", type=float, default=0.5)
    p.add_argument("--signal-frames", type=int, default=4)
    p.add_argument("--overlap", type=float, default=0.0)
    p.add_argument("--train-fraction", type=float, default=0.8)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="run one or all training phases")
    p.add_argument("--data", required=True, type=Path)
    p.add_argument("--out", required=True, type=Path)
    p.add_argument("--phase", choices=("all", "stage1", "stage2", "fusion"),
                   default="all")
    _add_config_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a trained checkpoint")
    p.add_argument("--data", required=True, type=Path)
    p.add_argument("--checkpoint", required=True, type=Path)
    p.add_argument("--out", required=True, type=Path)
    p.add_argument("--split", choices=("train", "test"), default="test")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablation", help="run the four-row ablation grid")
    p.add_argument("--data", required=True, type=Path)
    p.add_argument("--out", required=True, type=Path)
    p.add_argument("--one-sided", choices=("rgb", "depth"), default="depth",
                   help="which view's aid the one-sided row removes")
    _add_config_flags(p)
    p.set_defaults(func=cmd_ablation)

    p = sub.add_parser("export-attention", help="dump both stages' traces as CSV")
    p.add_argument("--data", required=True, type=Path)
    p.add_argument("--checkpoint", required=True, type=Path)
    p.add_argument("--ids", required=True, help="comma-separated sample ids")
    p.add_argument("--out", required=True, type=Path)
    p.set_defaults(func=cmd_export_attention)

    p = sub.add_parser("gradcheck", help="finite-difference check of all losses")
    p.add_argument("--hidden", dest="hidden_dim_gc", type=int, default=4)
    p.add_argument("--frames", type=int, default=4)
    p.add_argument("--classes", type=int, default=3)
    p.add_argument("--dim-r", type=int, default=3)
    p.add_argument("--dim-d", type=int, default=3)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_gradcheck)

    return parser


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except CliError as exc:
        print(f"error[{exc.code}]: {exc}", file=sys.stderr)
        return exc.exit_code
    except (SynthSpecError,) as exc:
        print(f"error[invalid-spec]: {exc}", file=sys.stderr)
        return 2
    except (DatasetFormatError, CheckpointFormatError) as exc:
        print(f"error[{exc.code}]: {exc}", file=sys.stderr)
        return 2
    except NonFiniteLossError as exc:
        print(f"error[non-finite]: {exc}", file=sys.stderr)
        return 4
    except ValueError as exc:
        print(f"error[invalid-spec]: {exc}", file=sys.stderr)
        return 2
    except SystemExit as exc:  # argparse --help
        return 0 if exc.code in (None, 0) else exc.code


if __name__ == "__main__":
    sys.exit(main())
