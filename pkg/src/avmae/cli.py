"""Command-line entry points: pretrain, finetune, probe, eval, reconstruct, sweep."""

import argparse
import csv
import os
import sys

from . import configio, engine
from . import finetune as ft
from . import reconstruct as rec
from . import rng as rngmod
from .errors import (CheckpointError, ConfigError, CorruptCheckpoint,
                     DivergedError, InvalidInput, ManifestError)
from .model import PretrainModel

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_CHECKPOINT = 3
EXIT_DIVERGED = 4


def _resolve_config(args, phase: str) -> dict:
    values = configio.read_config_file(args.config) if args.config else {}
    if getattr(args, "seed", None) is not None:
        values["train.seed"] = str(args.seed)
    env = os.environ.get("AVMAE_SEED")
    if env is not None:
        values["train.seed"] = env
    return configio.resolve(values, phase)


def _print_config(cfg: dict):
    print("# effective config")
    print(configio.dump(cfg))


def _require(cfg: dict, key: str) -> str:
    if not cfg[key]:
        raise ConfigError(f"{key} is required")
    return cfg[key]


def _pretrain_once(cfg: dict, out_dir: str):
    """Build model + dataset from cfg and run self-supervised training."""
    configio.check_synthetic_grids(cfg)
    objective = cfg["train.objective"]
    if objective not in ("joint", "inpaint"):
        raise ConfigError(f"unknown train.objective {objective!r}")
    spec = configio.model_spec_from(cfg)
    train_ds, eval_ds = configio.datasets_from(cfg)
    model = PretrainModel(spec, seed=cfg["train.seed"])
    recipe = configio.recipe_from(cfg, "pretrain")
    history = engine.pretrain(model, train_ds, recipe, objective=objective,
                              directions=cfg["train.directions"], out_dir=out_dir)
    return model, history, train_ds, eval_ds


def cmd_pretrain(args) -> int:
    cfg = _resolve_config(args, "pretrain")
    _print_config(cfg)
    _, history, _, _ = _pretrain_once(cfg, args.out)
    print(f"final loss={history.last('loss')!r}")
    print(f"checkpoint {args.out}")
    return EXIT_OK


def cmd_finetune(args) -> int:
    cfg = _resolve_config(args, "finetune")
    _print_config(cfg)
    ckpt = _require(cfg, "finetune.checkpoint")
    cspec = configio.classifier_spec_from(cfg)
    if cspec.mode == "audiovisual":
        clf = ft.build_audiovisual_classifier(ckpt, cspec)
    else:
        clf = ft.build_unimodal_classifier(ckpt, cspec)
    train_ds, eval_ds = configio.datasets_from(cfg)
    recipe = configio.recipe_from(cfg, "finetune")
    history = engine.finetune(clf, train_ds, recipe, out_dir=args.out,
                              eval_dataset=eval_ds,
                              freeze_encoder=cfg["finetune.freeze_encoder"])
    print(f"final train loss={history.last('loss', 'train')!r}")
    final_eval = {met: v for _, sp, met, v in history.rows if sp == "eval"}
    for name in sorted(final_eval):
        print(f"{name}={final_eval[name]!r}")
    print(f"checkpoint {args.out}")
    return EXIT_OK


def cmd_probe(args) -> int:
    cfg = _resolve_config(args, "pretrain")
    _print_config(cfg)
    ckpt = _require(cfg, "probe.checkpoint")
    model, step = engine.load_pretrain_model(ckpt)
    train_ds, eval_ds = configio.datasets_from(cfg)
    if eval_ds is None:
        raise ConfigError("probing needs an eval split "
                          "(data.eval_samples or data.eval_manifest)")
    out = ft.linear_probe(model, train_ds, eval_ds,
                          num_classes=cfg["data.num_classes"],
                          head=cfg["probe.head"],
                          batch_size=cfg["probe.batch_size"],
                          lr=cfg["probe.lr"], steps=cfg["probe.steps"])
    os.makedirs(args.out, exist_ok=True)
    history = engine.History(os.path.join(args.out, "history.csv"))
    history.log(step, "probe", "train_top1", out["train_top1"])
    history.log(step, "probe", "eval_top1", out["eval_top1"])
    print(f"train_top1={out['train_top1']!r}")
    print(f"eval_top1={out['eval_top1']!r}")
    return EXIT_OK


def cmd_eval(args) -> int:
    cfg = _resolve_config(args, "finetune")
    if getattr(args, "views", None) is not None:
        cfg["eval.views"] = args.views
    _print_config(cfg)
    ckpt = _require(cfg, "eval.checkpoint")
    clf = ft.load_classifier(ckpt)
    _, eval_ds = configio.datasets_from(cfg)
    if eval_ds is None:
        raise ConfigError("evaluation needs an eval split "
                          "(data.eval_samples or data.eval_manifest)")
    metrics = engine.evaluate(clf, eval_ds, batch_size=cfg["eval.batch_size"],
                              views=cfg["eval.views"])
    step = engine.load_checkpoint(ckpt)["step"]
    os.makedirs(args.out, exist_ok=True)
    history = engine.History(os.path.join(args.out, "history.csv"))
    for name in sorted(metrics):
        history.log(step, "eval", name, metrics[name])
        print(f"{name}={metrics[name]!r}")
    return EXIT_OK


def cmd_reconstruct(args) -> int:
    cfg = _resolve_config(args, "pretrain")
    _print_config(cfg)
    ckpt = _require(cfg, "reconstruct.checkpoint")
    model, _ = engine.load_pretrain_model(ckpt)
    dataset, _ = configio.datasets_from(cfg)
    idx = cfg["reconstruct.sample"]
    if not 0 <= idx < len(dataset):
        raise ConfigError(f"reconstruct.sample {idx} out of range "
                          f"for a dataset of {len(dataset)}")
    override = {}
    if cfg["reconstruct.alpha_audio"] is not None:
        override["audio"] = cfg["reconstruct.alpha_audio"]
    if cfg["reconstruct.alpha_video"] is not None:
        override["video"] = cfg["reconstruct.alpha_video"]
    rng = rngmod.stream(cfg["train.seed"], "reconstruct", idx)
    paths = rec.export_reconstructions(model, dataset[idx], args.out, rng,
                                       override or None)
    for p in paths:
        print(p)
    return EXIT_OK


# grid cells mirror the published ablations: masking ratios per modality
# (separate encoder, shared decoder) and encoder/decoder fusion pairings
MASKING_GRID = [(aa, av)
                for av in (0.7, 0.9, 0.95)
                for aa in (0.3, 0.5, 0.7, 0.8)]
FUSION_GRID = [("early", "shared"), ("shared", "shared"), ("separate", "shared"),
               ("mid", "shared"), ("mid", "early"), ("mid", "separate")]


def _sweep_cells(grid: str):
    if grid == "masking":
        for aa, av in MASKING_GRID:
            name = f"aa{aa}_av{av}"
            yield name, {"alpha_audio": aa, "alpha_video": av}, {
                "model.encoder": "separate", "model.decoder": "shared",
                "model.alpha_audio": aa, "model.alpha_video": av,
                "train.objective": "joint"}
    elif grid == "fusion":
        for enc, dec in FUSION_GRID:
            name = f"{enc}_{dec}"
            yield name, {"encoder": enc, "decoder": dec}, {
                "model.encoder": enc, "model.decoder": dec,
                "train.objective": "joint"}
    else:
        raise ConfigError(f"unknown sweep.grid {grid!r}; choose masking or fusion")


def cmd_sweep(args) -> int:
    base = _resolve_config(args, "pretrain")
    _print_config(base)
    os.makedirs(args.out, exist_ok=True)
    rows = []
    for name, cell, overrides in _sweep_cells(base["sweep.grid"]):
        cfg = dict(base)
        cfg.update(overrides)
        model, history, train_ds, eval_ds = _pretrain_once(
            cfg, os.path.join(args.out, name))
        row = dict(cell)
        row["final_loss"] = history.last("loss")
        if eval_ds is not None:
            probe = ft.linear_probe(model, train_ds, eval_ds,
                                    num_classes=cfg["data.num_classes"],
                                    head=cfg["probe.head"],
                                    batch_size=cfg["probe.batch_size"],
                                    lr=cfg["probe.lr"], steps=cfg["probe.steps"])
            row["probe_train_top1"] = probe["train_top1"]
            row["probe_eval_top1"] = probe["eval_top1"]
        rows.append(row)
        print("  ".join(f"{k}={v!r}" for k, v in row.items()))
    results = os.path.join(args.out, "results.csv")
    with open(results, "w", newline="", encoding="utf-8") as f:
        writer = csv.DictWriter(f, fieldnames=list(rows[0]))
        writer.writeheader()
        writer.writerows(rows)
    print(f"results {results}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="avmae",
        description="Audiovisual masked-autoencoder training and evaluation.")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, fn, help_text, views=False):
        sp = sub.add_parser(name, help=help_text)
        sp.add_argument("--config", default=None,
                        help="key=value config file (defaults cover a tiny synthetic run)")
        sp.add_argument("--out", required=True, help="output directory")
        sp.add_argument("--seed", type=int, default=None,
                        help="override train.seed (AVMAE_SEED wins over both)")
        if views:
            sp.add_argument("--views", type=int, default=None,
                            help="override eval.views")
        sp.set_defaults(func=fn)

    add("pretrain", cmd_pretrain, "self-supervised pretraining")
    add("finetune", cmd_finetune, "supervised finetuning from a pretrain checkpoint")
    add("probe", cmd_probe, "linear probe of frozen pretrained features")
    add("eval", cmd_eval, "evaluate a classifier checkpoint", views=True)
    add("reconstruct", cmd_reconstruct, "export original/masked/reconstructed grids")
    add("sweep", cmd_sweep, "run the masking-ratio or fusion-variant grid")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except DivergedError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_DIVERGED
    except (CheckpointError, CorruptCheckpoint) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CHECKPOINT
    except (ConfigError, InvalidInput, ManifestError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
