"""Command-line entry point: ``ssba {gen,train,eval,sweep,patterns}``.

Exit codes: 0 success, 1 usage or configuration error, 2 I/O or file-format
error, 3 numeric failure (for example a non-finite training loss).
"""
from __future__ import annotations

import argparse
import logging
import os
import sys

from .beams import dft_codebook, uniform_sin_grid
from .config import parse_config
from .errors import ConfigError, FormatError, NumericError, SSBAError
from .evaluation import (EGTPredictor, GeniePredictor, ModelPredictor, SweepConfig, evaluate,
                         export_patterns, export_sweep_csv, latency_reduction,
                         make_site_agnostic_probing, sweep)
from .models import KINDS, build_model, fit, load_model, save_model
from .probing import MeasurementConfig
from .scene import generate_scene, load_dataset, save_dataset, split_indices

log = logging.getLogger("ssba")

EXIT_USAGE, EXIT_IO, EXIT_NUMERIC = 1, 2, 3


class UsageError(SSBAError):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse exits with 2 on bad flags; usage errors map to 1 here
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _int_list(text: str) -> list[int]:
    try:
        return [int(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _kinds(text: str) -> list[str]:
    kinds = [t.strip() for t in text.split(",") if t.strip()]
    bad = [k for k in kinds if k not in KINDS]
    if bad or not kinds:
        raise argparse.ArgumentTypeError(f"model kinds must be among {','.join(KINDS)}")
    return kinds


def resolve_threads(flag: int | None) -> int:
    """``--threads`` if given, else ``SSBA_THREADS``, else 1."""
    if flag is not None:
        value = flag
    else:
        env = os.environ.get("SSBA_THREADS", "").strip()
        if not env:
            return 1
        try:
            value = int(env)
        except ValueError:
            raise ConfigError(f"SSBA_THREADS must be an integer, got {env!r}") from None
    if value < 1:
        raise ConfigError("thread count must be >= 1")
    return value


def _common(p: argparse.ArgumentParser, config: bool = True):
    if config:
        p.add_argument("--config", help="flat key = value config file")
    p.add_argument("--threads", type=int, help="worker cap (default: $SSBA_THREADS or 1)")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="ssba", description="Site-specific beam alignment laboratory.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("gen", help="generate a street-canyon channel dataset")
    _common(p)
    p.add_argument("--out", required=True, help="output dataset (.ssba)")
    p.add_argument("--seed", type=int, default=0, help="scene seed")
    p.add_argument("--n-ue", type=int, help="override the number of UEs")

    p = sub.add_parser("train", help="train one model and write a checkpoint")
    _common(p)
    p.add_argument("--data", required=True, help="dataset file")
    p.add_argument("--model", required=True, choices=KINDS)
    p.add_argument("--probes", type=int, required=True, help="number of probing beams K")
    p.add_argument("--out", required=True, help="output checkpoint")
    p.add_argument("--epochs", type=int)
    p.add_argument("--seed", type=int, help="training seed (also fixes the split)")
    p.add_argument("--agnostic", action="store_true",
                   help="freeze evenly spaced narrow probing beams instead of learning them")

    p = sub.add_parser("eval", help="evaluate a checkpoint on the test split")
    _common(p)
    p.add_argument("--data", required=True)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--model", choices=KINDS, help="expected model kind")
    p.add_argument("--refine-k", type=int, help="top-k refinement for codebook models")
    p.add_argument("--seed", type=int, help="training seed used for the split")
    p.add_argument("--out", help="optional CSV with the metrics row and both bounds")

    p = sub.add_parser("sweep", help="train and evaluate every (model, K) cell")
    _common(p)
    p.add_argument("--data", required=True)
    p.add_argument("--models", type=_kinds, required=True, help="comma-separated kinds")
    p.add_argument("--probes", type=_int_list, required=True, help="comma-separated K values")
    p.add_argument("--out", required=True, help="output CSV")
    p.add_argument("--epochs", type=int)
    p.add_argument("--seed", type=int)

    p = sub.add_parser("patterns", help="export probing beam patterns of a checkpoint")
    _common(p, config=False)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--out", required=True, help="output CSV")
    p.add_argument("--points", type=int, default=1024, help="sin(theta) grid size")
    return parser


def _config(args, **overrides):
    return parse_config(getattr(args, "config", None), overrides)


def _split(n: int, cfg):
    return split_indices(n, cfg["train_fraction"], cfg["seed"])


def cmd_gen(args) -> str:
    cfg = _config(args, n_ue=args.n_ue)
    ds = generate_scene(cfg.scene(), args.seed, threads=resolve_threads(args.threads))
    save_dataset(ds, args.out)
    los = float(ds.los_flags.mean())
    return f"gen: {len(ds.records)} UEs, LOS fraction {los:.3f}, seed {args.seed} -> {args.out}"


def cmd_train(args) -> str:
    cfg = _config(args, epochs=args.epochs, seed=args.seed)
    resolve_threads(args.threads)
    ds = load_dataset(args.data)
    H = ds.channels
    tr, _ = _split(H.shape[0], cfg)
    fixed = make_site_agnostic_probing(args.probes, ds.n_ant).beams() if args.agnostic else None
    tcfg = cfg.training()
    model = build_model(args.model, ds.n_ant, args.probes, cfg["codebook_size"],
                        fixed_beams=fixed, seed=tcfg.seed)
    hist = fit(model, H[tr], tcfg, MeasurementConfig(cfg.budget(), noise=cfg["noise"]))
    save_model(model, args.out)
    return (f"train: {args.model} K={args.probes} {tcfg.epochs} epochs, "
            f"final loss {hist.train_loss[-1]:.6f} -> {args.out}")


def cmd_eval(args) -> str:
    cfg = _config(args, seed=args.seed, refine_k=args.refine_k)
    resolve_threads(args.threads)
    ds = load_dataset(args.data)
    model = load_model(args.ckpt, args.model)
    if model.n_ant != ds.n_ant:
        raise FormatError(f"checkpoint has {model.n_ant} antennas, dataset has {ds.n_ant}")
    H = ds.channels
    _, te = _split(H.shape[0], cfg)
    budget = cfg.budget()
    mcfg = MeasurementConfig(budget, noise=cfg["noise"])
    rec = evaluate(ModelPredictor(model, mcfg, cfg["refine_k"]), H[te], budget, cfg["eval_seed"])
    if args.out:
        cb = dft_codebook(ds.n_ant, cfg["codebook_size"])
        rows = [evaluate(EGTPredictor(), H[te], budget, cfg["eval_seed"]),
                evaluate(GeniePredictor(cb), H[te], budget, cfg["eval_seed"]), rec]
        export_sweep_csv(rows, args.out)
    ratio = latency_reduction(cfg["codebook_size"], rec.meas_per_ue)
    line = (f"eval: {rec.method} K={rec.probes} avg {rec.avg_snr_db:.3f} dB, p5 {rec.p5_snr_db:.3f} dB, "
            f"{rec.meas_per_ue} meas/UE ({ratio:g}x fewer than exhaustive)")
    return line + (f" -> {args.out}" if args.out else "")


def cmd_sweep(args) -> str:
    cfg = _config(args, epochs=args.epochs, seed=args.seed)
    resolve_threads(args.threads)
    ds = load_dataset(args.data)
    scfg = SweepConfig(train=cfg.training(), budget=cfg.budget(), noise=cfg["noise"],
                       refine_k=cfg["refine_k"], codebook_size=cfg["codebook_size"],
                       eval_seed=cfg["eval_seed"])
    result = sweep(ds, args.models, sorted(args.probes), scfg)
    export_sweep_csv(result.records, args.out)
    line = f"sweep: {len(result.records)} rows, {len(result.failures)} failed cells -> {args.out}"
    if result.failures:
        raise NumericError(line + "; failed: " + ", ".join(sorted(result.failures)))
    return line


def cmd_patterns(args) -> str:
    resolve_threads(args.threads)
    if args.points < 2:
        raise ConfigError("--points must be at least 2")
    model = load_model(args.ckpt)
    export_patterns(model, args.out, uniform_sin_grid(args.points))
    return f"patterns: {model.n_probe} beams x {args.points} points -> {args.out}"


COMMANDS = {"gen": cmd_gen, "train": cmd_train, "eval": cmd_eval, "sweep": cmd_sweep,
            "patterns": cmd_patterns}


def exit_code(exc: BaseException) -> int:
    if isinstance(exc, (FormatError, OSError)):
        return EXIT_IO
    if isinstance(exc, (NumericError, FloatingPointError)):
        return EXIT_NUMERIC
    return EXIT_USAGE


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        print(COMMANDS[args.command](args))
    except (SSBAError, OSError, ValueError, FloatingPointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exit_code(exc)
    return 0


if __name__ == "__main__":
    sys.exit(main())
