"""Command-line entry point.

Subcommands: ``train``, ``eval``, ``gen-tasks``, ``export-curves``,
``export-embeddings``. Every run is fully determined by the configuration
file plus ``--seed``; outputs land in ``--out`` (or the directory named by
the ``CONCEPTMETA_OUT`` environment variable, or the config's own setting)
and each file carries the config hash in a header line. Exit codes: 0 on
success, 2 invalid configuration, 3 training divergence, 4 checkpoint
problems.
"""

from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path
from types import SimpleNamespace

import numpy as np

from . import evaluation, mct, taskgen
from .checkpoint import load_checkpoint, save_checkpoint
from .config import ExperimentConfig, load_config, parse_config_text
from .episodes import Instance
from .exceptions import CheckpointError, ConfigError, DimensionError, TrainingDiverged
from .model import ModelParams
from .report import save_curves_figure, save_loss_figure
from .taskgen import (CONFUSING_CURVES, ConfusingSource, FamilySource,
                      GlyphSource, sample_confusing_batch, write_episode_records)
from .trainer import meta_train, validation_metric

EXIT_CONFIG = 2
EXIT_DIVERGED = 3
EXIT_CHECKPOINT = 4


def build_source(cfg: ExperimentConfig):
    if cfg.experiment == "confusing-regression":
        return ConfusingSource(batch_size=cfg.batch_size, seed=cfg.seed)
    if cfg.experiment == "family-regression":
        return FamilySource(k_shot=cfg.k_shot, query_size=cfg.query_size, seed=cfg.seed)
    kind = {"glyph-sct": "sct-attr", "glyph-mct": "mct-mixed", "glyph-ood": "ood"}
    return GlyphSource(kind[cfg.experiment], n_way=cfg.n_way, k_shot=cfg.k_shot,
                       query_per_class=cfg.query_per_class,
                       plan=cfg.draw_plan if cfg.experiment == "glyph-ood" else "none",
                       color_noise_std=cfg.color_noise_std,
                       pixel_noise=cfg.pixel_noise_std, jitter=cfg.jitter,
                       mask_dropout=cfg.mask_dropout, seed=cfg.seed)


def train_settings(cfg: ExperimentConfig) -> SimpleNamespace:
    return SimpleNamespace(
        experiment=cfg.experiment, mode=cfg.effective_mode, seed=cfg.seed,
        episodes=cfg.episodes, episodes_per_step=cfg.episodes_per_step,
        learning_rate=cfg.learning_rate,
        omega_form=cfg.omega_form, omega_lambda=cfg.omega_lambda,
        selector=cfg.selector, warmup_points=cfg.warmup_points,
        warmup_steps=cfg.warmup_steps, val_interval=cfg.val_interval,
        val_episodes=cfg.val_episodes, checkpoint_interval=cfg.checkpoint_interval,
        config_hash=cfg.config_hash())


def _out_dir(cfg, args):
    out = args.out or os.environ.get("CONCEPTMETA_OUT") or cfg.out_dir
    path = Path(out)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _load_cfg(args) -> ExperimentConfig:
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg.seed = args.seed
        cfg.validate()
    return cfg


def _write_metrics(path, config_hash, pairs):
    lines = [f"# config_hash={config_hash}"]
    lines += [f"{k} = {v}" for k, v in pairs]
    path.write_text("\n".join(lines) + "\n")


# -- subcommands --------------------------------------------------------------


def cmd_train(args):
    cfg = _load_cfg(args)
    out = _out_dir(cfg, args)
    m = ModelParams(cfg.model_config(), seed=cfg.seed)
    source = build_source(cfg)
    settings = train_settings(cfg)

    def periodic(step, model):
        save_checkpoint(out / f"checkpoint_{step}.ckpt", model.state_arrays(),
                        cfg.canonical_text())

    report = meta_train(settings, m, source, checkpoint_fn=periodic)
    save_checkpoint(out / "checkpoint.ckpt", m.state_arrays(), cfg.canonical_text())
    report.write(out / "train_report.txt")
    save_loss_figure(report.losses, out / "loss.png", report.val_points,
                     title=f"{cfg.experiment} [{cfg.mode}]")
    if cfg.experiment == "confusing-regression":
        grid = np.linspace(-5.0, 5.0, 101)
        csv = evaluation.export_curves(m, grid, out / "curves.csv", cfg.config_hash())
        preds = evaluation.head_predictions(m, grid)
        truth = np.stack([f(grid) for f in CONFUSING_CURVES], axis=1)
        save_curves_figure(grid, preds, truth, out / "curves.png")
        print(f"train done: final_val={report.final_val} curves={csv}")
    else:
        print(f"train done: final_val={report.final_val}")
    print(f"outputs in {out}")
    return 0


def _rebuild_model(args):
    """Model + config from a checkpoint, honoring a config override file."""
    config_text, arrays = load_checkpoint(args.checkpoint)
    if args.config:
        cfg = load_config(args.config)
    else:
        cfg = parse_config_text(config_text)
    if args.seed is not None:
        cfg.seed = args.seed
        cfg.validate()
    m = ModelParams(cfg.model_config(), seed=cfg.seed)
    m.load_state_arrays(arrays)
    return cfg, m


def cmd_eval(args):
    cfg, m = _rebuild_model(args)
    out = _out_dir(cfg, args)
    trials = args.trials if args.trials is not None else cfg.trials
    source = build_source(cfg)
    settings = train_settings(cfg)
    val_units = [source.sample_val(j) for j in range(cfg.val_episodes)]
    final_val = validation_metric(m, val_units, cfg.experiment, settings.mode,
                                  cfg.selector)

    pairs = [("experiment", cfg.experiment), ("mode", cfg.mode),
             ("seed", cfg.seed), ("trials", trials), ("final_val", repr(final_val))]
    if cfg.experiment == "family-regression":
        mean, half = evaluation.mse_over_trials(m, source, trials)
        pairs += [("mse", repr(mean)), ("ci95", repr(half))]
        summary = f"mse={mean:.4f}+-{half:.4f}"
    elif cfg.experiment == "confusing-regression":
        result = evaluation.regression_concept_mse(m)
        for t, v in enumerate(result["mses"]):
            pairs.append((f"concept_mse_{t}", repr(v)))
        summary = "concept_mse=" + "/".join(f"{v:.4f}" for v in result["mses"])
    elif cfg.experiment == "glyph-mct":
        feats, labels = taskgen.make_mct_testset(min(trials, 2000), cfg.seed,
                                                 cfg.pixel_noise_std)
        result = evaluation.per_concept_accuracy(m, feats, labels)
        for t, v in enumerate(result["accuracies"]):
            pairs.append((f"concept_acc_{t}", repr(v)))
        summary = "concept_acc=" + "/".join(f"{v:.4f}" for v in result["accuracies"])
    else:
        mode = settings.mode if settings.mode in ("sct",) else "baseline"
        mean, half = evaluation.accuracy_over_trials(m, source, trials, mode)
        pairs += [("accuracy", repr(mean)), ("ci95", repr(half))]
        if cfg.experiment == "glyph-sct":
            rate = evaluation.concept_id_rate(m, source, min(trials, 500))
            pairs.append(("concept_id_rate", repr(rate)))
            summary = f"acc={mean:.4f}+-{half:.4f} concept_id={rate:.4f}"
        else:
            summary = f"acc={mean:.4f}+-{half:.4f} ({cfg.draw_plan}, novel palette)"
    _write_metrics(out / "metrics.txt", cfg.config_hash(), pairs)
    print(f"eval {cfg.experiment} [{cfg.mode}] seed={cfg.seed}: {summary}")
    return 0


def cmd_gen_tasks(args):
    cfg = _load_cfg(args)
    out = _out_dir(cfg, args)
    source = build_source(cfg)
    pairs = []
    if cfg.experiment == "confusing-regression":
        for i in range(args.count):
            (xs, ys), meta = source.sample_train(i)
            query = [Instance(x=np.asarray([x]), label=float(y)) for x, y in zip(xs, ys)]
            ep = SimpleNamespace(support=[], query=query)
            pairs.append((ep, meta))
    else:
        pairs = [source.sample_train(i) for i in range(args.count)]
    path = write_episode_records(pairs, out / "episodes.txt", cfg.config_hash())
    print(f"wrote {args.count} episodes to {path}")
    return 0


def cmd_export_curves(args):
    cfg, m = _rebuild_model(args)
    out = _out_dir(cfg, args)
    grid = np.linspace(-5.0, 5.0, args.points)
    csv = evaluation.export_curves(m, grid, out / "curves.csv", cfg.config_hash())
    preds = evaluation.head_predictions(m, grid)
    truth = np.stack([f(grid) for f in CONFUSING_CURVES], axis=1)
    save_curves_figure(grid, preds, truth, out / "curves.png")
    print(f"wrote {csv} and {out / 'curves.png'}")
    return 0


def cmd_export_embeddings(args):
    cfg, m = _rebuild_model(args)
    out = _out_dir(cfg, args)
    if cfg.is_regression:
        xs, ys, cs = sample_confusing_batch(args.count, [cfg.seed, 0xE44])
        instances = [Instance(x=np.asarray([x]), label=float(y)) for x, y in zip(xs, ys)]
        concepts = list(cs)
    else:
        feats, chosen, shapes, colors = taskgen.sample_mixed_instances(
            args.count, [cfg.seed, 0xE44], cfg.pixel_noise_std)
        instances = [Instance(x=feats[i], label=int(chosen[i])) for i in range(len(chosen))]
        concepts = [0 if c < taskgen.N_SHAPES else 1 for c in chosen]
    path = evaluation.export_embeddings(m, instances, concepts,
                                        out / "embeddings.csv", cfg.config_hash())
    print(f"wrote {path}")
    return 0


# -- argument wiring ------------------------------------------------------------


def make_parser():
    p = argparse.ArgumentParser(prog="conceptmeta",
                                description="latent-concept meta-learning experiments")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, config_required=True, checkpoint=False):
        sp.add_argument("--config", required=config_required and not checkpoint,
                        help="experiment configuration file")
        if checkpoint:
            sp.add_argument("--checkpoint", required=True, help="checkpoint to load")
        sp.add_argument("--seed", type=int, default=None, help="override the config seed")
        sp.add_argument("--out", default=None, help="output directory")

    sp = sub.add_parser("train", help="run meta-training and write a checkpoint")
    common(sp)
    sp.set_defaults(fn=cmd_train)

    sp = sub.add_parser("eval", help="evaluate a checkpoint")
    common(sp, config_required=False, checkpoint=True)
    sp.add_argument("--trials", type=int, default=None, help="override eval trial count")
    sp.set_defaults(fn=cmd_eval)

    sp = sub.add_parser("gen-tasks", help="dump sampled episodes as delimited text")
    common(sp)
    sp.add_argument("--count", type=int, default=10)
    sp.set_defaults(fn=cmd_gen_tasks)

    sp = sub.add_parser("export-curves", help="write per-concept prediction curves")
    common(sp, config_required=False, checkpoint=True)
    sp.add_argument("--points", type=int, default=101)
    sp.set_defaults(fn=cmd_export_curves)

    sp = sub.add_parser("export-embeddings", help="write per-concept projections")
    common(sp, config_required=False, checkpoint=True)
    sp.add_argument("--count", type=int, default=200)
    sp.set_defaults(fn=cmd_export_embeddings)
    return p


def main(argv=None):
    args = make_parser().parse_args(argv)
    try:
        return args.fn(args)
    except ConfigError as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_CONFIG
    except TrainingDiverged as exc:
        print(f"training aborted: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except (CheckpointError, DimensionError) as exc:
        print(f"checkpoint error: {exc}", file=sys.stderr)
        return EXIT_CHECKPOINT


if __name__ == "__main__":
    sys.exit(main())
