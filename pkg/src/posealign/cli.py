"""Command-line entry point.

Subcommands: ``train``, ``curate``, ``analyze`` (activations | project |
perturb | ablate), and ``gradcheck``. Every command is reproducible from
(inputs, seed): repeated runs produce byte-identical CSV/JSON outputs.
Report paths also render a companion PNG next to each CSV unless
--no-figures is given.

Exit codes: 0 ok, 1 usage/config error, 2 numerical abort,
3 verification failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import analysis, curation, figures
from .aligner import POOLINGS, forward_batch, encode_poses, forward_reps
from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .config import ConfigError, RunConfig, load_run_config
from .geometry import EulerAngles
from .synth import SynthWorld, make_bucket_samples, make_pose_grid
from .train import (
    GRADCHECK_TOLERANCE,
    NumericalError,
    TrainConfig,
    grad_check,
    make_eval_batch,
    train,
)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_NUMERIC = 2
EXIT_VERIFY = 3


class _Parser(argparse.ArgumentParser):
    # argparse exits 2 on usage errors by default; the CLI contract wants 1.
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _fail(message: str, code: int) -> int:
    print(f"error: {message}", file=sys.stderr)
    return code


def _resolve_seed(flag_seed: int | None, config_seed: int | None) -> int:
    if flag_seed is not None:
        return flag_seed
    if config_seed is not None:
        return config_seed
    env = os.environ.get("FAITHFUL_SEED")
    if env is not None:
        try:
            return int(env)
        except ValueError:
            raise ConfigError(f"FAITHFUL_SEED must be an integer, got {env!r}")
    return 0


def _load_run_config(path: str | None) -> RunConfig:
    if path is None:
        return RunConfig()
    return load_run_config(path)


def _outdir(args) -> Path:
    out = Path(args.outdir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_run_meta(outdir: Path, command: str, args, seed: int, overrides: dict) -> None:
    meta = {
        "command": command,
        "config": args.config,
        "overrides": overrides,
        "seed": seed,
    }
    with open(outdir / "run_meta.json", "w", encoding="utf-8") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
        fh.write("\n")


# ---------------------------------------------------------------------------
# train

def _train_overrides(args) -> dict:
    overrides = {}
    for name in ("steps", "pooling", "batch_pairs", "dict_atoms", "learning_rate"):
        value = getattr(args, name)
        if value is not None:
            overrides[name] = value
    if args.euler is not None:
        overrides["euler_enabled"] = args.euler == "on"
    return overrides


def cmd_train(args) -> int:
    try:
        run = _load_run_config(args.config)
        seed = _resolve_seed(args.seed, run.seed)
        cfg = run.train_config(seed)
        overrides = _train_overrides(args)
        mapped = dict(overrides)
        if "batch_pairs" in mapped:
            mapped["n_pairs_per_batch"] = mapped.pop("batch_pairs")
        cfg = replace(cfg, **mapped)
    except (ConfigError, ValueError) as exc:
        return _fail(str(exc), EXIT_USAGE)

    outdir = _outdir(args)
    _write_run_meta(outdir, "train", args, seed, overrides)
    try:
        params, metrics = train(cfg, metrics_path=outdir / "metrics.csv")
    except NumericalError as exc:
        return _fail(str(exc), EXIT_NUMERIC)
    except ValueError as exc:
        return _fail(str(exc), EXIT_USAGE)
    save_checkpoint(outdir / "checkpoint.json", params, cfg.aligner_config())
    if metrics.rows and not args.no_figures:
        figures.save_training_figure(metrics.rows, outdir / "training.png")

    if metrics.rows:
        last = metrics.rows[-1]
        print(f"final pia_loss: {last.pia_loss:.6f}")
        print(f"final mi_lower_bound: {last.mi_lower_bound:.6f}")
    else:
        print("no training steps run; checkpoint equals initialization")
    if metrics.retrieval_accuracy is not None:
        print(f"retrieval_accuracy: {metrics.retrieval_accuracy:.4f}")
    print(f"outputs written to {outdir}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# curate

def cmd_curate(args) -> int:
    prompts = {}
    if args.prompts:
        try:
            with open(args.prompts, "r", encoding="utf-8") as fh:
                prompts = json.load(fh)
        except FileNotFoundError:
            return _fail(f"prompts file not found: {args.prompts}", EXIT_USAGE)
        except json.JSONDecodeError as exc:
            return _fail(f"prompts file is not valid JSON: {exc.msg}", EXIT_USAGE)
        if not isinstance(prompts, dict) or not all(
            isinstance(v, str) for v in prompts.values()
        ):
            return _fail("prompts file must map video_id to string", EXIT_USAGE)

    try:
        seed = _resolve_seed(args.seed, None)
        with open(args.input, "r", encoding="utf-8") as fh:
            tracks = curation.parse_tracks(fh)
        result = curation.build_manifest(
            tracks,
            prompts,
            threshold=args.threshold,
            max_faces=args.max_faces,
            median_window=args.median_window,
            extrema_bias=args.extrema_bias,
            seed=seed,
        )
    except FileNotFoundError:
        return _fail(f"input file not found: {args.input}", EXIT_USAGE)
    except (curation.SchemaError, ConfigError, ValueError) as exc:
        return _fail(str(exc), EXIT_USAGE)

    Path(args.output).parent.mkdir(parents=True, exist_ok=True)
    curation.write_manifest(args.output, result, args.threshold)
    for warning in result.warnings:
        print(f"warning: {warning}", file=sys.stderr)
    for reason in ("accepted", "no_face", "multi_face", "low_variation"):
        print(f"{reason}: {result.summary[reason]}")
    print(f"manifest written to {args.output}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# analyze

def _check_config_match(ckpt_config, run: RunConfig, config_given: bool) -> None:
    if not config_given:
        return
    t = run.train
    pairs = (
        ("L", ckpt_config.num_tokens, t.num_tokens),
        ("F", ckpt_config.feature_dim, t.feature_dim),
        ("D", ckpt_config.token_dim, t.token_dim),
        ("C", ckpt_config.dict_atoms, t.dict_atoms),
        ("pooling", ckpt_config.pooling, t.pooling),
        ("euler_enabled", ckpt_config.euler_enabled, t.euler_enabled),
    )
    for name, ckpt_value, cfg_value in pairs:
        if ckpt_value != cfg_value:
            raise CheckpointError(
                f"checkpoint/config mismatch on {name}: checkpoint has {ckpt_value}, "
                f"config has {cfg_value}"
            )


def _analysis_world(ckpt_config, run: RunConfig, seed: int) -> SynthWorld:
    world_params = replace(
        run.world,
        num_tokens=ckpt_config.num_tokens,
        feature_dim=ckpt_config.feature_dim,
        seed=seed,
    )
    return SynthWorld(world_params)


def cmd_analyze(args) -> int:
    try:
        run = _load_run_config(args.config)
        seed = _resolve_seed(args.seed, run.seed)
    except ConfigError as exc:
        return _fail(str(exc), EXIT_USAGE)

    if args.analysis_command == "ablate":
        return _analyze_ablate(args, run, seed)

    try:
        params, ckpt_config = load_checkpoint(args.checkpoint)
        _check_config_match(ckpt_config, run, args.config is not None)
    except FileNotFoundError:
        return _fail(f"checkpoint not found: {args.checkpoint}", EXIT_USAGE)
    except (CheckpointError, json.JSONDecodeError) as exc:
        return _fail(str(exc), EXIT_USAGE)

    world = _analysis_world(ckpt_config, run, seed)
    outdir = _outdir(args)
    a = run.analysis
    try:
        return _run_analysis(args, params, ckpt_config, world, outdir, a, seed)
    except ValueError as exc:
        return _fail(str(exc), EXIT_USAGE)


def _run_analysis(args, params, ckpt_config, world, outdir, a, seed) -> int:
    if args.analysis_command == "activations":
        n_ids = a.bucket_identities if args.bucket_identities is None else args.bucket_identities
        ids = world.held_out_ids(n_ids)
        samples = make_bucket_samples(world, ids)
        weights = forward_batch(
            samples.raws,
            encode_poses(samples.angles, ckpt_config),
            params,
            ckpt_config.pooling,
        ).weights
        buckets = [analysis.pose_bucket(EulerAngles(*ang)) for ang in samples.angles]
        top_k = a.top_k if args.top_k is None else args.top_k
        stats = analysis.activation_stats(list(weights), buckets, k=top_k)
        analysis.write_activation_csv(outdir / "activation_stats.csv", stats)
        if not args.no_figures:
            figures.save_activation_figure(stats, outdir / "activation_stats.png")
        print(f"mean within-bucket jaccard: {stats.mean_within_jaccard:.4f}")
        print(f"cross-bucket jaccard: {stats.cross_jaccard:.4f}")

    elif args.analysis_command == "project":
        n_ids = a.projection_identities if args.identities is None else args.identities
        poses = a.poses_per_identity if args.poses is None else args.poses
        grid = make_pose_grid(world, world.held_out_ids(n_ids), poses)
        reps = forward_reps(grid.raws, grid.angles, params, ckpt_config)
        reps = reps / np.linalg.norm(reps, axis=1, keepdims=True)
        coords = analysis.project_2d(reps)
        buckets = [analysis.pose_bucket(EulerAngles(*ang)) for ang in grid.angles]
        analysis.write_projection_csv(
            outdir / "projection.csv", coords, grid.identity_ids, buckets
        )
        if not args.no_figures:
            figures.save_projection_figure(coords, grid.identity_ids, outdir / "projection.png")
        ratio = analysis.separation_ratio(coords, grid.identity_ids)
        print(f"identity separation ratio: {ratio:.4f}")

    elif args.analysis_command == "perturb":
        ranges = a.perturb_ranges if args.ranges is None else args.ranges
        n_eval = a.eval_identities if args.eval_identities is None else args.eval_identities
        batch = make_eval_batch(world, n_eval)
        results = analysis.perturbation_sweep(params, ckpt_config, batch, list(ranges), seed)
        analysis.write_ablation_csv(outdir / "perturbation.csv", results)
        if not args.no_figures:
            figures.save_perturbation_figure(results, outdir / "perturbation.png")
        for row in results:
            print(
                f"range={row.perturb_range:g} drift={row.mean_drift:.6f} "
                f"accuracy={row.retrieval_accuracy:.4f}"
            )

    print(f"outputs written to {outdir}")
    return EXIT_OK


def _analyze_ablate(args, run: RunConfig, seed: int) -> int:
    try:
        base = run.train_config(seed)
        if args.steps is not None:
            base = replace(base, steps=args.steps)
        seeds = args.seeds if args.seeds is not None else [seed]
        results = analysis.ablation_grid(
            base,
            poolings=args.pooling,
            dict_sizes=args.atoms,
            euler_settings=args.euler,
            seeds=seeds,
        )
    except (ConfigError, ValueError) as exc:
        return _fail(str(exc), EXIT_USAGE)
    except NumericalError as exc:
        return _fail(str(exc), EXIT_NUMERIC)
    outdir = _outdir(args)
    analysis.write_ablation_csv(outdir / "ablation.csv", results)
    if not args.no_figures:
        figures.save_ablation_figure(results, outdir / "ablation.png")
    for row in sorted(results, key=lambda r: (r.pooling, r.dict_atoms, r.euler_enabled)):
        print(
            f"pooling={row.pooling} atoms={row.dict_atoms} "
            f"euler={'on' if row.euler_enabled else 'off'} "
            f"loss={row.final_loss:.4f} accuracy={row.retrieval_accuracy:.4f}"
        )
    print(f"outputs written to {outdir}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# gradcheck

def cmd_gradcheck(args) -> int:
    if args.samples < 1:
        return _fail(f"--samples must be >= 1, got {args.samples}", EXIT_USAGE)
    try:
        seed = _resolve_seed(args.seed, None)
    except ConfigError as exc:
        return _fail(str(exc), EXIT_USAGE)
    poolings = list(POOLINGS) if args.pooling == "all" else [args.pooling]
    eulers = [True, False] if args.euler == "both" else [args.euler == "on"]
    overall = 0.0
    worst = None
    for pooling in poolings:
        for euler_enabled in eulers:
            try:
                cfg = TrainConfig(
                    n_pairs_per_batch=args.pairs,
                    steps=0,
                    pooling=pooling,
                    euler_enabled=euler_enabled,
                    dict_atoms=args.atoms,
                    token_dim=args.token_dim,
                    num_tokens=args.num_tokens,
                    feature_dim=args.feature_dim,
                    seed=seed,
                    eval_identities=0,
                )
                result = grad_check(cfg, args.samples, h=args.h, corrupt=args.corrupt)
            except ValueError as exc:
                return _fail(str(exc), EXIT_USAGE)
            print(
                f"pooling={pooling} euler={'on' if euler_enabled else 'off'} "
                f"max_rel_error={result.max_rel_error:.3e}"
            )
            if result.max_rel_error > overall:
                overall = result.max_rel_error
                worst = result.worst
    print(f"overall max_rel_error: {overall:.3e} (tolerance {GRADCHECK_TOLERANCE:.0e})")
    if overall < GRADCHECK_TOLERANCE:
        return EXIT_OK
    if worst is not None:
        name, idx, analytic, numeric, err = worst
        print(
            f"worst coordinate: {name}[{idx}] analytic={analytic!r} "
            f"numeric={numeric!r} rel_error={err:.3e}",
            file=sys.stderr,
        )
    return EXIT_VERIFY


# ---------------------------------------------------------------------------
# parser

def _csv_list(cast):
    def parse(text):
        return [cast(part) for part in text.split(",") if part != ""]

    return parse


def _euler_axis(text):
    values = []
    for part in text.split(","):
        if part not in ("on", "off"):
            raise argparse.ArgumentTypeError("euler axis accepts 'on' and 'off'")
        values.append(part == "on")
    return values


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="posealign", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p):
        p.add_argument("--seed", type=int, default=None,
                       help="run seed (fallbacks: config seed, FAITHFUL_SEED, 0)")
        p.add_argument("--outdir", default="out", help="output directory")
        p.add_argument("--no-figures", action="store_true",
                       help="skip PNG rendering next to CSV outputs")

    p_train = sub.add_parser("train", parents=[], help="train an aligner on synthetic pairs")
    p_train.add_argument("--config", default=None, help="run config JSON (defaults: desk scale)")
    add_common(p_train)
    p_train.add_argument("--steps", type=int, default=None, help="override training steps")
    p_train.add_argument("--pooling", choices=POOLINGS, default=None, help="override pooling mode")
    p_train.add_argument("--euler", choices=("on", "off"), default=None,
                         help="override euler injection")
    p_train.add_argument("--batch-pairs", dest="batch_pairs", type=int, default=None,
                         help="override identity pairs per batch")
    p_train.add_argument("--dict-atoms", dest="dict_atoms", type=int, default=None,
                         help="override dictionary size")
    p_train.add_argument("--learning-rate", dest="learning_rate", type=float, default=None,
                         help="override learning rate")
    p_train.set_defaults(func=cmd_train)

    p_curate = sub.add_parser("curate", help="filter pose tracks and build a manifest")
    p_curate.add_argument("input", help="input JSONL pose tracks")
    p_curate.add_argument("output", help="output manifest JSON path")
    p_curate.add_argument("--threshold", type=float, default=120.0,
                          help="variation threshold; strict > comparison (default 120)")
    p_curate.add_argument("--max-faces", dest="max_faces", type=int, default=1,
                          help="max faces per frame before rejection (default 1)")
    p_curate.add_argument("--median-window", dest="median_window", type=int, default=0,
                          help="odd window for median smoothing of angle series (0 = off)")
    p_curate.add_argument("--extrema-bias", dest="extrema_bias", type=float, default=0.5,
                          help="probability of picking per-axis extrema frames as the pair")
    p_curate.add_argument("--prompts", default=None, help="JSON map of video_id to prompt")
    p_curate.add_argument("--seed", type=int, default=None,
                          help="pair-sampling seed (fallbacks: FAITHFUL_SEED, 0)")
    p_curate.set_defaults(func=cmd_curate)

    p_analyze = sub.add_parser("analyze", help="diagnostics over a trained checkpoint")
    asub = p_analyze.add_subparsers(dest="analysis_command", required=True)

    def add_analyze_common(p, needs_checkpoint=True):
        if needs_checkpoint:
            p.add_argument("--checkpoint", required=True, help="checkpoint JSON path")
        p.add_argument("--config", default=None, help="run config JSON")
        add_common(p)

    p_act = asub.add_parser("activations", help="dictionary activation statistics per pose bucket")
    add_analyze_common(p_act)
    p_act.add_argument("--top-k", dest="top_k", type=int, default=None,
                       help="atoms per sample (default 10)")
    p_act.add_argument("--bucket-identities", dest="bucket_identities", type=int, default=None,
                       help="held-out identities per pose bucket (default 12)")
    p_act.set_defaults(func=cmd_analyze)

    p_proj = asub.add_parser("project", help="2D projection of held-out identity representations")
    add_analyze_common(p_proj)
    p_proj.add_argument("--identities", type=int, default=None, help="held-out identities (default 7)")
    p_proj.add_argument("--poses", type=int, default=None, help="poses per identity (default 8)")
    p_proj.set_defaults(func=cmd_analyze)

    p_pert = asub.add_parser("perturb", help="representation drift under Euler-angle noise")
    add_analyze_common(p_pert)
    p_pert.add_argument("--ranges", type=_csv_list(float), default=None,
                        help="comma-separated degrees (default 0,5,10,15,20)")
    p_pert.add_argument("--eval-identities", dest="eval_identities", type=int, default=None,
                        help="held-out identities (default 64)")
    p_pert.set_defaults(func=cmd_analyze)

    p_abl = asub.add_parser("ablate", help="train and compare configurations")
    add_analyze_common(p_abl, needs_checkpoint=False)
    p_abl.add_argument("--pooling", type=_csv_list(str), default=None,
                       help="comma-separated pooling modes")
    p_abl.add_argument("--atoms", type=_csv_list(int), default=None,
                       help="comma-separated dictionary sizes")
    p_abl.add_argument("--euler", type=_euler_axis, default=None,
                       help="comma-separated on/off values")
    p_abl.add_argument("--seeds", type=_csv_list(int), default=None,
                       help="comma-separated shared seeds")
    p_abl.add_argument("--steps", type=int, default=None, help="override training steps")
    p_abl.set_defaults(func=cmd_analyze)

    p_grad = sub.add_parser("gradcheck", help="verify analytic gradients by finite differences")
    p_grad.add_argument("--samples", type=int, default=200,
                        help="random coordinates checked per tensor (default 200)")
    p_grad.add_argument("--pairs", type=int, default=3, help="identity pairs in the probe batch")
    p_grad.add_argument("--num-tokens", dest="num_tokens", type=int, default=4)
    p_grad.add_argument("--feature-dim", dest="feature_dim", type=int, default=6)
    p_grad.add_argument("--token-dim", dest="token_dim", type=int, default=12)
    p_grad.add_argument("--atoms", type=int, default=16, help="dictionary size (default 16)")
    p_grad.add_argument("--pooling", choices=POOLINGS + ("all",), default="all")
    p_grad.add_argument("--euler", choices=("on", "off", "both"), default="both")
    p_grad.add_argument("--h", type=float, default=1e-5, help="central-difference step")
    p_grad.add_argument("--seed", type=int, default=None)
    p_grad.add_argument("--corrupt", action="store_true",
                        help="test hook: corrupt the analytic tokenizer gradient")
    p_grad.set_defaults(func=cmd_gradcheck)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
