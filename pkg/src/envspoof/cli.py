"""Command-line entry point: ``envspoof <subcommand> ...``.

Exit codes: 0 success, 1 usage or configuration error, 2 data error.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .config import ConfigError, ExperimentConfig

log = logging.getLogger("envspoof")

EXIT_OK, EXIT_USAGE, EXIT_DATA = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _load_config(args) -> ExperimentConfig:
    cfg = ExperimentConfig.load(args.config) if getattr(args, "config", None) else ExperimentConfig()
    for item in getattr(args, "set", None) or []:
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        key, value = item.split("=", 1)
        cfg.set(key.strip(), value.strip())
    if getattr(args, "seed", None) is not None:
        cfg.seed = args.seed
    return cfg.validate()


def _split_list(text, kind=str):
    items = [s.strip() for s in text.split(",") if s.strip()]
    try:
        return [kind(s) for s in items]
    except ValueError:
        raise UsageError(f"cannot parse list {text!r}") from None


def cmd_gen_data(args):
    from .synth import generate_synthetic_dataset

    cfg = _load_config(args)
    rows = generate_synthetic_dataset(args.n, cfg, cfg.seed, args.out)
    print(f"wrote {len(rows)} rows to {Path(args.out) / 'manifest.tsv'}")


def cmd_augment(args):
    from .augmentation import GriffinLimConfig, GriffinLimResynthesizer, augment_manifest
    from .manifest import read_manifest, write_manifest

    cfg = _load_config(args)
    resynths = []
    for spec in _split_list(args.resynth):
        name, _, iters = spec.partition(":")
        if not name.startswith("gl"):
            raise UsageError(f"unknown resynthesizer {name!r}; only Griffin-Lim variants (gl, gl:N) ship")
        n_iter = int(iters) if iters else cfg.augmentation.gl_iterations
        resynths.append(GriffinLimResynthesizer(GriffinLimConfig(n_iter), name=name if not iters else f"{name}{n_iter}"))
    rows = read_manifest(args.manifest)
    base = Path(args.manifest).parent
    out_manifest = Path(args.out_manifest)
    if out_manifest.parent.resolve() != base.resolve():
        raise UsageError("--out-manifest must live next to the input manifest (paths are relative)")
    ratio = cfg.augmentation.ratio if args.ratio is None else args.ratio
    out = augment_manifest(
        rows, resynths, ratio, cfg.seed, args.out_dir, cfg.mel_config(), cfg.frontend.duration, base
    )
    write_manifest(out_manifest, out)
    print(f"added {len(out) - len(rows)} spoof rows; wrote {out_manifest}")


def cmd_train(args):
    from .manifest import read_manifest
    from .training import train

    cfg = _load_config(args)
    rows = read_manifest(args.manifest)
    dev_rows = read_manifest(args.dev_manifest) if args.dev_manifest else None
    dev_base = Path(args.dev_manifest).parent if args.dev_manifest else None
    result = train(cfg, rows, args.out, Path(args.manifest).parent, dev_rows=dev_rows, dev_base_dir=dev_base)
    last = result.history[-1] if result.history else None
    if last:
        print(f"trained {result.steps} steps; final epoch loss {last.loss:.6f} acc {last.accuracy:.4f}")
        if last.dev_eer is not None:
            print(f"dev loss {last.dev_loss:.6f} acc {last.dev_accuracy:.4f} EER {100 * last.dev_eer:.4f}%")
    print(f"checkpoint: {result.checkpoints[-1]}")


def cmd_score(args):
    from .checkpoint import CheckpointError, load_model
    from .evaluation import score_manifest, write_scores
    from .manifest import read_manifest

    given = _load_config(args) if (args.config or args.set) else None
    try:
        model, cfg, _ = load_model(args.checkpoint, given)
    except CheckpointError as exc:
        raise DataError(str(exc)) from exc
    rows = read_manifest(args.manifest)
    if not rows:
        log.warning("manifest %s is empty; writing an empty score file", args.manifest)
    trials = score_manifest(model, rows, cfg, Path(args.manifest).parent)
    write_scores(args.out, trials)
    print(f"wrote {len(trials)} scores to {args.out}")


def cmd_eer(args):
    from .evaluation import attach_labels, compute_eer, eer_by_group, format_eer, read_protocol, read_scores

    trials = attach_labels(read_scores(args.scores), read_protocol(args.protocol))
    eer, _ = compute_eer(trials)
    print(format_eer(eer))
    if args.group_by:
        from .manifest import read_manifest

        groups = {r.utt_id: r.attack_tag for r in read_manifest(args.group_by)}
        for tag, value in eer_by_group(trials, groups).items():
            print(f"EER[{tag}]\t{100.0 * value:.4f}")


def cmd_ensemble(args):
    from .evaluation import (
        attach_labels, compute_eer, ensemble_scores, format_eer, read_protocol, read_scores, write_scores,
    )

    paths = _split_list(args.scores)
    weights = _split_list(args.weights, float)
    if len(paths) != len(weights):
        raise UsageError(f"{len(paths)} score files but {len(weights)} weights")
    if abs(sum(weights) - 1.0) > 1e-9:
        log.warning("ensemble weights sum to %g, not 1 (EER is unaffected)", sum(weights))
    merged = ensemble_scores([read_scores(p) for p in paths], weights, normalize=args.normalize)
    if args.out:
        write_scores(args.out, merged)
    else:
        from .evaluation import format_score

        for t in merged:
            print(f"{t.utt_id}\t{format_score(t.score)}")
    if args.protocol:
        print(format_eer(compute_eer(attach_labels(merged, read_protocol(args.protocol)))[0]))


def cmd_inspect_config(args):
    cfg = _load_config(args)
    h, w = cfg.grid_size()
    sys.stdout.write(cfg.dumps())
    print(f"# derived: frames = {cfg.num_frames()}, patch grid H x W = {h} x {w}")


class DataError(Exception):
    pass


def build_parser():
    p = _Parser(prog="envspoof", description="Environmental sound deepfake detection toolkit")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    def with_config(sp):
        sp.add_argument("--config", help="flat key = value experiment config")
        sp.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config key")
        sp.add_argument("--seed", type=int)
        return sp

    sp = with_config(sub.add_parser("gen-data", help="write a synthetic bona fide / spoof dataset"))
    sp.add_argument("--out", required=True)
    sp.add_argument("--n", type=int, default=8, help="number of bona fide utterances")
    sp.set_defaults(func=cmd_gen_data)

    sp = with_config(sub.add_parser("augment", help="append copy-synthesis spoofs to a manifest"))
    sp.add_argument("--manifest", required=True)
    sp.add_argument("--out-manifest", required=True)
    sp.add_argument("--out-dir", required=True)
    sp.add_argument("--ratio", type=float)
    sp.add_argument("--resynth", default="gl", help="comma list of gl or gl:ITERATIONS")
    sp.set_defaults(func=cmd_augment)

    sp = with_config(sub.add_parser("train", help="train a detector"))
    sp.add_argument("--manifest", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--dev-manifest", help="optional dev set, scored after every epoch (monitoring only)")
    sp.set_defaults(func=cmd_train)

    sp = with_config(sub.add_parser("score", help="score a manifest with a checkpoint"))
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--manifest", required=True)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_score)

    sp = sub.add_parser("eer", help="equal error rate of a score file")
    sp.add_argument("--scores", required=True)
    sp.add_argument("--protocol", required=True)
    sp.add_argument("--group-by", metavar="MANIFEST", help="also report EER per attack tag")
    sp.set_defaults(func=cmd_eer)

    sp = sub.add_parser("ensemble", help="weighted sum of score files")
    sp.add_argument("--scores", required=True, help="comma-separated score files")
    sp.add_argument("--weights", required=True, help="comma-separated weights")
    sp.add_argument("--out")
    sp.add_argument("--protocol", help="also print the ensemble EER")
    sp.add_argument("--normalize", action="store_true", help="min-max normalize each system first")
    sp.set_defaults(func=cmd_ensemble)

    sp = with_config(sub.add_parser("inspect-config", help="validate and print a config"))
    sp.add_argument("path", nargs="?", help="config file (same as --config)")
    sp.set_defaults(func=cmd_inspect_config)
    return p


def main(argv=None) -> int:
    from .augmentation import ResynthesisError
    from .evaluation import ScoreError
    from .frontend import AudioError
    from .manifest import ManifestError
    from .training import TrainingError

    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            raise UsageError("missing subcommand")
        if getattr(args, "path", None):
            args.config = args.config or args.path
        logging.basicConfig(
            level=logging.DEBUG if args.verbose else logging.INFO,
            format="%(levelname)s %(name)s: %(message)s",
        )
        args.func(args)
    except (UsageError, ConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (
        DataError, ScoreError, ManifestError, AudioError, TrainingError, ResynthesisError, OSError,
    ) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
