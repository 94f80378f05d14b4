"""``diffe`` command line: generate, preprocess, train, ablate, eval, diffuse-demo."""
from __future__ import annotations

import argparse
import csv
import json
import logging
import platform
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import __version__
from .config import RunConfig, from_dict, validate_config
from .data import CHANNEL_NAMES, N_CLASSES, generate_synthetic, split
from .diffusion import diffuse_trace, make_schedule
from .errors import ConfigurationError, DataError, DiffEError
from .io import load_checkpoint, load_dataset, load_recording, save_checkpoint, save_dataset, save_recording
from .metrics import RunMetrics, report
from .networks import build_bundle
from .sigproc import EpochSet, preprocess
from .training import TrainResult, infer, run_ablation, train

log = logging.getLogger("diffe")


def _versions() -> dict:
    import scipy
    import sklearn

    return {"diffe": __version__, "python": platform.python_version(), "numpy": np.__version__,
            "scipy": scipy.__version__, "scikit-learn": sklearn.__version__}


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True, allow_nan=True))


def _load_config(args) -> RunConfig:
    return validate_config(args.config) if args.config else from_dict({})


def _require(path) -> Path:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(path)
    return path


def _subject_path(out: Path, subject: int, n_subjects: int) -> Path:
    return out if n_subjects == 1 else out.with_name(f"{out.stem}_s{subject}{out.suffix}")


def _load_epochs(args, cfg: RunConfig) -> list[EpochSet]:
    """Epoched datasets from ``--data`` files, or synthesized from the config."""
    if args.data:
        return [load_dataset(_require(p)) for p in args.data]
    log.info("no --data given; generating and preprocessing the synthetic corpus")
    out = []
    for rec, events in generate_synthetic(cfg.data):
        ep = preprocess(rec, events, cfg.preprocess)
        ep.meta["channel_names"] = rec.channel_names
        out.append(ep)
    return out


def _checkpoint_meta(result: TrainResult, cfg: RunConfig, in_channels: int, which: str) -> dict:
    return {
        "which": which, "mode": result.config.ablation_mode, "in_channels": in_channels,
        "n_classes": N_CLASSES, "scale": result.scale, "seed": result.config.seed,
        "test_fraction": result.config.test_fraction, "model": cfg.to_dict()["model"],
        "param_counts": result.models.param_counts(), "best_epoch": result.best_epoch,
    }


def _effective_config(cfg: RunConfig, result: TrainResult) -> dict:
    """Config echo with command-line overrides (mode, epochs) applied."""
    echo = cfg.to_dict()
    echo["train"] = {k: v for k, v in asdict(result.config).items() if k != "model"}
    return echo


def _finite_state(state: dict) -> bool:
    return all(np.all(np.isfinite(a)) for params in state.values() for a in params.values())


def _save_run(result: TrainResult, cfg: RunConfig, data: EpochSet, out_dir: Path, argv) -> dict:
    """Write checkpoints, history, metrics and manifest for one run; return the manifest."""
    out_dir.mkdir(parents=True, exist_ok=True)
    final_state = result.models.state_dict()
    if not (_finite_state(final_state) and _finite_state(result.best_state)):
        raise DiffEError("trained parameters are not finite; no checkpoint written")
    in_channels = data.epochs.shape[1]
    save_checkpoint(final_state, out_dir / "checkpoint.dife", _checkpoint_meta(result, cfg, in_channels, "final"))
    save_checkpoint(result.best_state, out_dir / "checkpoint_best.dife",
                    _checkpoint_meta(result, cfg, in_channels, "best"))
    result.history.to_csv(out_dir / "history.csv")
    (out_dir / "metrics.csv").write_text(report([result.metrics]).csv())
    counts = result.models.param_counts()
    manifest = {
        "command": list(argv),
        "config": _effective_config(cfg, result),
        "seeds": {"train": result.config.seed, "data": cfg.data.seed,
                  "noise_stream": [result.config.seed, 1], "batch_stream": [result.config.seed, "epoch"]},
        "versions": _versions(),
        "param_counts": counts,
        "classifier_params": counts.get("rho", 0),
        "wall_time_s": result.wall_time,
        "steps": result.steps,
        "boundary_violations": result.boundary_violations,
        "scale": result.scale,
        "best_epoch": result.best_epoch,
        "test_accuracy_per_epoch": result.history.column("test_acc").tolist(),
        "final_metrics": result.metrics.to_dict(),
        "split": {"train": result.split.train.tolist(), "test": result.split.test.tolist()},
    }
    _write_json(out_dir / "manifest.json", manifest)
    return manifest


def cmd_generate(args) -> int:
    cfg = _load_config(args)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    subjects = generate_synthetic(cfg.data)
    for s, (rec, events) in enumerate(subjects, 1):
        path = _subject_path(out, s, len(subjects))
        save_recording(rec, events, path, {"subject": s, "generator": cfg.to_dict()["data"]})
        print(f"wrote {path} ({rec.data.shape[0]} channels, {rec.data.shape[1]} samples, {len(events)} events)")
    return 0


def cmd_preprocess(args) -> int:
    cfg = _load_config(args)
    rec, events = load_recording(_require(args.input))
    ep = preprocess(rec, events, cfg.preprocess)
    if not np.all(np.isfinite(ep.epochs)):
        raise DataError("preprocessing produced non-finite samples")
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_dataset(ep, out, {"channel_names": rec.channel_names, "preprocess": cfg.to_dict()["preprocess"],
                           "source": str(args.input)})
    print(f"wrote {out} ({ep.epochs.shape[0]} epochs of {ep.epochs.shape[1]}x{ep.epochs.shape[2]})")
    return 0


def cmd_train(args) -> int:
    cfg = _load_config(args)
    tcfg = cfg.train_config()
    if args.epochs:
        tcfg = tcfg.replace(epochs=args.epochs)
    if args.mode:
        tcfg = tcfg.replace(ablation_mode=args.mode)
    datasets = _load_epochs(args, cfg)
    if not 1 <= args.subject <= len(datasets):
        raise ConfigurationError(f"--subject {args.subject} is outside 1..{len(datasets)}")
    data = datasets[args.subject - 1]
    result = train(data, tcfg)
    _save_run(result, cfg, data, Path(args.out_dir), args.argv)
    m = result.metrics
    print(f"{tcfg.ablation_mode}: test accuracy {100 * m.accuracy:.2f}%, AUC {100 * m.auc:.2f}% "
          f"({result.wall_time:.0f} s); artifacts in {args.out_dir}")
    return 0


def cmd_ablate(args) -> int:
    cfg = _load_config(args)
    tcfg = cfg.train_config()
    if args.epochs:
        tcfg = tcfg.replace(epochs=args.epochs)
    out_dir = Path(args.out_dir)
    runs: list[RunMetrics] = []
    for s, data in enumerate(_load_epochs(args, cfg), 1):
        for mode in args.modes.split(","):
            result = run_ablation(data, tcfg, mode.strip())
            result.metrics.subject = s
            runs.append(result.metrics)
            _save_run(result, cfg, data, out_dir / f"s{s}_{mode.strip()}", args.argv)
    rep = report(runs)
    text = rep.text()
    (out_dir / "report.txt").write_text(text + "\n")
    (out_dir / "metrics.csv").write_text(rep.csv())
    print(text)
    return 0


def cmd_eval(args) -> int:
    cfg = _load_config(args)
    state, meta = load_checkpoint(_require(args.checkpoint))
    if not meta:
        raise DataError(f"{args.checkpoint}: missing JSON sidecar with model metadata")
    data = load_dataset(_require(args.data))
    model = meta["model"]
    bundle = build_bundle(meta["mode"], meta["in_channels"], meta["seed"], tuple(model["ddpm_widths"]),
                          tuple(model["encoder_widths"]), tuple(model["decoder_widths"]), model["time_dim"],
                          model["groups"], model["classifier_hidden"], meta["n_classes"])
    bundle.load_state_dict(state)
    which = args.split or cfg.eval.split
    idx = (split(data.labels, meta["test_fraction"], meta["seed"]).test if which == "test"
           else np.arange(len(data.labels)))
    x = (data.epochs[idx] / meta["scale"]).astype(np.float32)
    _, scores = infer(x, bundle.phi, bundle.rho)
    metrics = RunMetrics.from_scores(meta["mode"], scores, data.labels[idx], meta["n_classes"], lenient=True)
    rep = report([metrics])
    if args.out:
        Path(args.out).write_text(rep.csv())
    print(rep.text())
    return 0


def cmd_diffuse_demo(args) -> int:
    cfg = _load_config(args)
    try:
        ts = [int(v) for v in args.t.split(",")]
    except ValueError as exc:
        raise ConfigurationError(f"--t must be comma-separated integers, got {args.t!r}") from exc
    sched = make_schedule(cfg.train.T, cfg.train.beta_start, cfg.train.beta_end)
    data = _load_epochs(args, cfg)[0]
    names = data.meta.get("channel_names") or CHANNEL_NAMES[:data.epochs.shape[1]]
    if args.channel not in names:
        raise ConfigurationError(f"unknown channel {args.channel!r}")
    if not 0 <= args.epoch < len(data.epochs):
        raise ConfigurationError(f"--epoch {args.epoch} is outside 0..{len(data.epochs) - 1}")
    x0 = data.epochs[args.epoch, names.index(args.channel)].astype(np.float64)
    rng = np.random.default_rng(args.seed)
    eps = rng.standard_normal(x0.shape) * x0.std()
    trace = diffuse_trace(x0, ts, sched, eps)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([f"t={t}" for t in ts])
        for row in trace.T:
            w.writerow([repr(float(v)) for v in row])
    print(f"wrote {out} ({len(ts)} columns, {len(x0)} samples, channel {args.channel})")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="diffe", description="Diffusion-conditioned EEG classifier pipeline.")
    p.add_argument("--version", action="version", version=f"diffe {__version__}")
    p.add_argument("-q", "--quiet", action="store_true", help="only warnings and errors")
    sub = p.add_subparsers(dest="command", required=True)

    def add(name, fn, help_):
        sp = sub.add_parser(name, help=help_)
        sp.add_argument("--config", help="TOML run configuration")
        sp.set_defaults(func=fn)
        return sp

    sp = add("generate", cmd_generate, "synthesize continuous recordings")
    sp.add_argument("--out", required=True, help="recording container path")

    sp = add("preprocess", cmd_preprocess, "filter and epoch a recording")
    sp.add_argument("--input", required=True)
    sp.add_argument("--out", required=True, help="dataset container path")

    sp = add("train", cmd_train, "train one model")
    sp.add_argument("--data", nargs="+", help="dataset containers (default: synthesize from config)")
    sp.add_argument("--subject", type=int, default=1)
    sp.add_argument("--mode", choices=("full", "no_ddpm", "encoder_classifier"))
    sp.add_argument("--epochs", type=int, help="override train.epochs")
    sp.add_argument("--out-dir", default="runs/train")

    sp = add("ablate", cmd_ablate, "train all three modes and report them side by side")
    sp.add_argument("--data", nargs="+")
    sp.add_argument("--modes", default="full,no_ddpm,encoder_classifier")
    sp.add_argument("--epochs", type=int, help="override train.epochs")
    sp.add_argument("--out-dir", default="runs/ablate")

    sp = add("eval", cmd_eval, "score a checkpoint on a dataset")
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--data", required=True)
    sp.add_argument("--split", choices=("test", "all"))
    sp.add_argument("--out", help="metrics CSV path")

    sp = add("diffuse-demo", cmd_diffuse_demo, "forward-noise one epoch channel at several steps")
    sp.add_argument("--t", default="0,100,500,1000", help="comma-separated steps")
    sp.add_argument("--channel", default="FT7")
    sp.add_argument("--epoch", type=int, default=0, help="epoch index")
    sp.add_argument("--data", nargs=1)
    sp.add_argument("--seed", type=int, default=42)
    sp.add_argument("--out", default="diffuse_demo.csv")
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    args.argv = ["diffe"] + list(sys.argv[1:] if argv is None else argv)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO, format="%(message)s")
    try:
        return args.func(args)
    except FileNotFoundError as exc:
        print(f"diffe: error: file not found: {exc.filename or exc}", file=sys.stderr)
    except (DiffEError, ValueError) as exc:
        print(f"diffe: error: {exc}", file=sys.stderr)
    return 1


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
