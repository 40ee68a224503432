"""Single entry point: every pipeline stage as a subcommand.

Settings come from defaults, then an optional flat key=value config file, then
command-line flags (highest precedence). Every run prints its fully resolved
configuration, and all randomness flows from the one --seed through named
sub-streams, so a logged config reproduces its outputs exactly.

Exit codes: 0 success, 2 config error, 3 I/O error, 4 protocol error,
5 latency-budget violation (loop --enforce-budget).
"""

from __future__ import annotations

import argparse
import os
import sys

from . import crypt, dataset, e2, figures, harness, metrics, models, ric
from .optim import TrainConfig
from .signals import SynthConfig


class ConfigError(Exception):
    pass


EXIT_CONFIG = 2
EXIT_IO = 3
EXIT_PROTOCOL = 4
EXIT_BUDGET = 5


def _load_config_file(path: str) -> dict[str, str]:
    out: dict[str, str] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected key=value, got {line!r}")
            key, _, value = line.partition("=")
            out[key.strip()] = value.strip()
    return out


def _resolve(args: argparse.Namespace, parser: argparse.ArgumentParser) -> None:
    """Fold config-file values into unset flags; reject unknown keys in bulk."""
    if not getattr(args, "config", None):
        return
    file_values = _load_config_file(args.config)
    known = {a.dest for a in parser._actions}
    bad = sorted(k for k in file_values if k not in known)
    if bad:
        raise ConfigError(f"unknown config keys: {', '.join(bad)}")
    for key, raw in file_values.items():
        if getattr(args, key, None) is None:
            spec = next(a for a in parser._actions if a.dest == key)
            caster = spec.type or str
            try:
                getattr(args, key)  # ensure attribute exists
                setattr(args, key, caster(raw))
            except ValueError as exc:
                raise ConfigError(f"config key {key}: {exc}") from None


def _log_config(name: str, args: argparse.Namespace) -> None:
    skip = {"func", "parser", "config"}
    parts = " ".join(f"{k}={v}" for k, v in sorted(vars(args).items())
                     if k not in skip and v is not None)
    print(f"config {name}: {parts}")


def _default(value, fallback):
    return fallback if value is None else value


# -- subcommands ------------------------------------------------------------


def cmd_gen_dataset(args) -> int:
    per_class = _default(args.per_class, 300)
    seed = _default(args.seed, 0)
    synth = SynthConfig(capture_duration_s=_default(args.capture_ms, 20.0) / 1e3)
    manifest = dataset.make_dataset(per_class, seed, args.out, synth=synth)
    counts = {k.name: v for k, v in manifest.counts().items()}
    print(f"wrote {len(manifest.entries)} samples to {args.out} {counts}")
    return 0


def cmd_encrypt(args) -> int:
    patch = _default(args.patch_size, 16)
    seed = _default(args.seed, 0)
    manifest = dataset.encrypt_dataset(args.in_dir, args.out, patch, seed,
                                       keys_out=args.keys_out)
    print(f"encrypted {len(manifest.entries)} images at patch size {patch} into {args.out}")
    return 0


def cmd_decrypt(args) -> int:
    manifest = dataset.decrypt_dataset(args.in_dir, args.out, args.keys)
    print(f"decrypted {len(manifest.entries)} images into {args.out}")
    return 0


def _parse_fractions(text: str) -> tuple[float, float, float]:
    parts = [float(p) for p in text.split(",")]
    if len(parts) != 3:
        raise ConfigError(f"fractions must be three comma-separated numbers, got {text!r}")
    return tuple(parts)  # type: ignore[return-value]


def _load_split_data(data_dir: str, seed: int, fractions: tuple[float, float, float]):
    manifest = dataset.load_manifest(data_dir)
    images, labels = dataset.load_images(data_dir, manifest.entries)
    idx_train, idx_val, idx_test = metrics.stratified_split(labels, fractions, seed)
    return manifest, images, labels, idx_train, idx_val, idx_test


def cmd_train(args) -> int:
    seed = _default(args.seed, 0)
    fractions = _parse_fractions(_default(args.fractions, "0.70,0.15,0.15"))
    manifest, images, labels, tr, va, _ = _load_split_data(args.data, seed, fractions)
    cfg = TrainConfig(
        max_epochs=_default(args.max_epochs, 40),
        batch_size=_default(args.batch_size, 32),
        learning_rate=_default(args.learning_rate, 4e-3),
        early_stop_patience=_default(args.early_stop_patience, 6),
        plateau_patience=_default(args.plateau_patience, 3),
        plateau_factor=_default(args.plateau_factor, 0.5),
        rng_seed=seed,
    )
    if args.model == "vit":
        patch = _default(args.patch_size, manifest.patch_size or 16)
        model = models.build_vit(models.ViTConfig(patch_size=patch), seed)
    else:
        model = models.build_cnn(models.CnnConfig(), seed)
    if va.size == 0:
        va = tr  # overfit mode: validate on the training set itself
    history = models.train(model, (images[tr], labels[tr]), (images[va], labels[va]),
                           cfg, verbose=not args.quiet)
    models.save_model(model, args.checkpoint_out)
    base, _ = os.path.splitext(args.checkpoint_out)
    history.to_csv(base + "_history.csv")
    figures.render_history(history, base + "_history.png")
    print(f"saved {model.name} checkpoint to {args.checkpoint_out} "
          f"(best epoch {history.best_epoch}, {len(history.rows)} epochs run)")
    return 0


def cmd_eval(args) -> int:
    seed = _default(args.seed, 0)
    fractions = _parse_fractions(_default(args.fractions, "0.70,0.15,0.15"))
    model = models.load_model(args.checkpoint)
    manifest, images, labels, tr, va, te = _load_split_data(args.data, seed, fractions)
    part = {"train": tr, "val": va, "test": te,
            "all": __import__("numpy").arange(labels.size)}[args.split]
    splits = harness.Splits((images[tr], labels[tr]), (images[va], labels[va]),
                            (images[part], labels[part]))
    row = harness.report_row(model, splits)
    harness.write_report_csv([row], args.report)
    figures.render_report([row], os.path.splitext(args.report)[0] + ".png")
    print(f"{model.name}: accuracy {row.scores.accuracy:.3f} macro-F1 "
          f"{row.scores.macro_f1:.3f} on {args.split} ({part.size} samples) -> {args.report}")
    return 0


def cmd_sweep(args) -> int:
    seed = _default(args.seed, 0)
    if args.kind == "confidence":
        if not args.checkpoint:
            raise ConfigError("confidence sweep needs at least one --checkpoint")
        thresholds = [float(t) for t in _default(args.thresholds, "0,0.4,0.5,0.6,0.7,0.8,0.9").split(",")]
        fractions = _parse_fractions(_default(args.fractions, "0.70,0.15,0.15"))
        sweeps = {}
        import csv as _csv

        with open(args.out, "w", newline="") as fh:
            writer = _csv.writer(fh)
            writer.writerow(["model", "threshold", "coverage", "used", "accuracy"])
            for ckpt in args.checkpoint:
                model = models.load_model(ckpt)
                _, images, labels, _, _, te = _load_split_data(args.data, seed, fractions)
                sweep = metrics.confidence_sweep(model, images[te], labels[te], thresholds)
                sweeps[model.name] = sweep
                for p in sweep.points:
                    writer.writerow([model.name, f"{p.threshold:.6g}", f"{p.coverage:.6g}",
                                     p.used, "" if p.accuracy is None else f"{p.accuracy:.6g}"])
        figures.render_confidence_sweep(sweeps, os.path.splitext(args.out)[0] + ".png")
        print(f"confidence sweep over {len(sweeps)} model(s) -> {args.out}")
        return 0

    sizes = [int(s) for s in _default(args.sizes, "8,32").split(",")]
    cfg = harness.desk_train_config(seed)
    if args.max_epochs is not None:
        cfg.max_epochs = args.max_epochs
    work = _default(args.work_dir, os.path.join(os.path.dirname(args.out) or ".", "sweep_work"))
    result = harness.patch_size_sweep(args.data, sizes, cfg, seed, work,
                                      verbose=not args.quiet, checkpoint_dir=work)
    result.to_csv(args.out)
    figures.render_patch_sweep(result, os.path.splitext(args.out)[0] + ".png")
    print(f"patch sweep {sizes} -> {args.out}")
    return 0


def cmd_invariance(args) -> int:
    seed = _default(args.seed, 0)
    model = models.load_model(args.checkpoint)
    report = harness.shuffle_invariance_test(
        model, model.cfg.patch_size if model.name == "vit" else _default(args.patch_size, 16),
        seed, per_class=_default(args.per_class, 30), versions=_default(args.versions, 15))
    report.to_csv(args.out)
    figures.render_invariance(report, os.path.splitext(args.out)[0] + ".png")
    print(f"shuffle invariance: overall {report.overall_accuracy:.3f} "
          f"agreement {report.mean_agreement:.3f} over {report.predictions} predictions")
    return 0


def cmd_loop(args) -> int:
    seed = _default(args.seed, 0)
    interval = _default(args.interval, 1.0)
    patch = _default(args.patch_size, 16)
    if args.role in ("all", "ran", "xapp") and args.scenario is None and args.role != "xapp":
        raise ConfigError(f"role {args.role} requires --scenario")
    scenario = ric.parse_scenario(open(args.scenario).read()) if args.scenario else None

    if args.role == "all":
        model = models.load_model(args.checkpoint)
        report = ric.run_loop(model, scenario, interval_s=interval,
                              patch_size=model.cfg.patch_size if model.name == "vit" else patch,
                              seed=seed, budget_s=_default(args.budget_s, 1.0))
        if args.report:
            report.to_csv(args.report)
            figures.render_rtt(report, os.path.splitext(args.report)[0] + ".png")
        print(f"loop: {report.stored} blobs, p50 {report.p50_rtt * 1e3:.1f} ms, "
              f"p95 {report.p95_rtt * 1e3:.1f} ms, max {report.max_rtt * 1e3:.1f} ms, "
              f"incomplete {report.incomplete}")
        if args.enforce_budget and report.budget_violated:
            raise ric.BudgetError(
                f"p95 RTT {report.p95_rtt:.3f} s exceeds budget {report.budget_s:.3f} s")
        return 0
    if args.role == "proc":
        db = ric.DirRicDatabase(args.db_dir)
        stored = ric.serve_processing(_default(args.port, 9200), db, patch, seed)
        print(f"processing stage stored {stored} blobs in {args.db_dir}")
        return 0
    if args.role == "xapp":
        model = models.load_model(args.checkpoint)
        db = ric.DirRicDatabase(args.db_dir)
        answered = ric.run_xapp_standalone(db, model, _default(args.control_host, "127.0.0.1"),
                                           _default(args.control_port, 9201),
                                           expected=_default(args.expected, 1))
        print(f"xapp answered {answered} blobs")
        return 0
    # ran
    sent, controls = ric.run_ran_standalone(
        scenario, interval, _default(args.host, "127.0.0.1"), _default(args.port, 9200),
        _default(args.control_port, 9201), seed)
    print(f"ran emulator sent {sent} reports, received {controls} controls")
    return 0


# -- parser -----------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ricshield",
        description="Privacy-preserving interference classification pipeline: "
                    "synthesize spectrograms, encrypt them, train/evaluate models, "
                    "and exercise the closed RIC control loop.")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--seed", type=int, default=None, help="master seed (default 0)")
        p.add_argument("--config", help="flat key=value config file; flags override it")

    p = sub.add_parser("gen-dataset", help="synthesize a labeled spectrogram dataset")
    p.add_argument("--out", required=True, help="output dataset directory")
    p.add_argument("--per-class", type=int, default=None, help="samples per class (default 300)")
    p.add_argument("--capture-ms", type=float, default=None, help="capture length (default 20)")
    common(p)
    p.set_defaults(func=cmd_gen_dataset, parser=p)

    p = sub.add_parser("encrypt", help="encrypt a dataset with fresh per-image keys")
    p.add_argument("--in", dest="in_dir", required=True, help="plaintext dataset directory")
    p.add_argument("--out", required=True, help="encrypted dataset directory")
    p.add_argument("--patch-size", type=int, default=None, help="cipher grid size (default 16)")
    p.add_argument("--keys-out", default=None,
                   help="escrow directory for .skey files (test mode only)")
    common(p)
    p.set_defaults(func=cmd_encrypt, parser=p)

    p = sub.add_parser("decrypt", help="decrypt a dataset using escrowed keys (test mode)")
    p.add_argument("--in", dest="in_dir", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--keys", required=True, help="escrow directory written by encrypt")
    common(p)
    p.set_defaults(func=cmd_decrypt, parser=p)

    p = sub.add_parser("train", help="train a model on a dataset directory")
    p.add_argument("--model", choices=("vit", "cnn"), required=True)
    p.add_argument("--data", required=True, help="dataset directory (normally encrypted)")
    p.add_argument("--checkpoint-out", required=True)
    p.add_argument("--patch-size", type=int, default=None,
                   help="ViT patch size (default: the dataset's cipher patch size)")
    p.add_argument("--fractions", default=None, help="train,val,test (default 0.70,0.15,0.15)")
    p.add_argument("--max-epochs", type=int, default=None)
    p.add_argument("--batch-size", type=int, default=None)
    p.add_argument("--learning-rate", type=float, default=None)
    p.add_argument("--early-stop-patience", type=int, default=None)
    p.add_argument("--plateau-patience", type=int, default=None)
    p.add_argument("--plateau-factor", type=float, default=None)
    p.add_argument("--quiet", action="store_true")
    common(p)
    p.set_defaults(func=cmd_train, parser=p)

    p = sub.add_parser("eval", help="evaluate a checkpoint and write the report CSV")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--report", required=True, help="output CSV (PNG lands next to it)")
    p.add_argument("--split", choices=("train", "val", "test", "all"), default="test")
    p.add_argument("--fractions", default=None)
    common(p)
    p.set_defaults(func=cmd_eval, parser=p)

    p = sub.add_parser("sweep", help="confidence-threshold or patch-size sweep")
    p.add_argument("--kind", choices=("confidence", "patch"), required=True)
    p.add_argument("--data", required=True,
                   help="encrypted dataset (confidence) or plaintext dataset (patch)")
    p.add_argument("--out", required=True, help="output CSV (PNG lands next to it)")
    p.add_argument("--checkpoint", action="append", default=None,
                   help="model checkpoint (repeatable; confidence sweeps)")
    p.add_argument("--thresholds", default=None, help="comma list (confidence sweeps)")
    p.add_argument("--sizes", default=None, help="comma list of patch sizes (default 8,32)")
    p.add_argument("--work-dir", default=None, help="scratch dir for per-size encryption")
    p.add_argument("--max-epochs", type=int, default=None)
    p.add_argument("--fractions", default=None)
    p.add_argument("--quiet", action="store_true")
    common(p)
    p.set_defaults(func=cmd_sweep, parser=p)

    p = sub.add_parser("invariance", help="shuffle-invariance test on fresh samples")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--per-class", type=int, default=None)
    p.add_argument("--versions", type=int, default=None)
    p.add_argument("--patch-size", type=int, default=None)
    common(p)
    p.set_defaults(func=cmd_invariance, parser=p)

    p = sub.add_parser("loop", help="run the closed RIC loop (or one role of it)")
    p.add_argument("--role", choices=("all", "ran", "proc", "xapp"), required=True)
    p.add_argument("--checkpoint", default=None, help="model (roles all/xapp)")
    p.add_argument("--scenario", default=None, help="scenario file: '<CLASS> <seconds>' lines")
    p.add_argument("--interval", type=float, default=None, help="report interval s (default 1)")
    p.add_argument("--report", default=None, help="RTT report CSV (role all)")
    p.add_argument("--patch-size", type=int, default=None)
    p.add_argument("--budget-s", type=float, default=None, help="RTT budget (default 1.0)")
    p.add_argument("--enforce-budget", action="store_true",
                   help="exit 5 when the p95 RTT misses the budget")
    p.add_argument("--host", default=None, help="uplink host (role ran)")
    p.add_argument("--port", type=int, default=None, help="uplink port (roles ran/proc)")
    p.add_argument("--control-host", default=None, help="RAN control host (role xapp)")
    p.add_argument("--control-port", type=int, default=None, help="control port (roles ran/xapp)")
    p.add_argument("--db-dir", default=None, help="database directory (roles proc/xapp)")
    p.add_argument("--expected", type=int, default=None, help="blobs to answer (role xapp)")
    common(p)
    p.set_defaults(func=cmd_loop, parser=p)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        _resolve(args, args.parser)
        _log_config(args.command, args)
        return args.func(args)
    except ric.BudgetError as exc:
        print(f"error exit={EXIT_BUDGET} type=budget msg={exc}", file=sys.stderr)
        return EXIT_BUDGET
    except e2.ProtocolError as exc:
        print(f"error exit={EXIT_PROTOCOL} type=protocol msg={exc}", file=sys.stderr)
        return EXIT_PROTOCOL
    except (ConfigError, ValueError) as exc:
        print(f"error exit={EXIT_CONFIG} type=config msg={exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"error exit={EXIT_IO} type=io msg={exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
