"""Command-line entry points.

Every subcommand accepts --config (a JSON key-value file whose entries become
flag defaults; explicit flags win) and writes a resolved-config snapshot next
to its outputs, so any output directory is reproducible from its contents
alone.  On failure a FAILED marker is left in the output directory.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys

import numpy as np

from . import artifacts, attacks, datasets, evaluation, models, training, transformer
from .partition import RegionSplitSpec, build_partition


def _split_spec_from_args(args) -> RegionSplitSpec:
    kind = args.split
    if kind == "grid":
        k = (args.k_h or 1, args.k_w or args.k)
        return RegionSplitSpec("grid", k)
    band = getattr(args, "slash_band_width", None)
    if kind == "slash" and band:
        return RegionSplitSpec("slash", None, band)
    return RegionSplitSpec(kind, args.k)


def _add_split_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--split", default="vertical",
                   choices=["vertical", "horizontal", "grid", "slash"])
    p.add_argument("--k", type=int, default=8, help="region count K")
    p.add_argument("--k-h", type=int, default=None, help="grid rows (grid only)")
    p.add_argument("--k-w", type=int, default=None, help="grid cols (grid only)")
    p.add_argument("--slash-band-width", type=int, default=None)


def _write_snapshot(out_dir, args) -> None:
    os.makedirs(out_dir, exist_ok=True)
    resolved = {k: v for k, v in vars(args).items()
                if k not in ("func", "config") and not k.startswith("_")}
    with open(os.path.join(out_dir, "resolved_config.json"), "w", encoding="utf-8") as fh:
        json.dump(resolved, fh, sort_keys=True, indent=2)
        fh.write("\n")


def _write_reports(path, reports) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["model_id", "attack_id", "clean_error", "adv_error",
                         "error_increase", "sample_count", "seed"])
        for r in reports:
            writer.writerow([r.model_id, r.attack_id, f"{r.clean_error:.6f}",
                             f"{r.adv_error:.6f}", f"{r.error_increase:.6f}",
                             r.sample_count, r.seed])


def _load_model(path, defense: str = "none", seed: int = 0):
    model = models.load_classifier(path)
    if defense == "resize_pad":
        return models.resize_pad_defense(model, seed=seed)
    return model


# --- subcommand handlers -------------------------------------------------

def cmd_generate_data(args) -> int:
    dataset = datasets.generate_synthetic_dataset(
        class_count=args.classes, per_class=args.per_class,
        size=args.size, seed=args.seed, split_tag=args.tag)
    datasets.save_dataset(dataset, args.out)
    _write_snapshot(args.out, args)
    print(f"wrote {len(dataset)} images to {args.out}")
    return 0


def cmd_train_classifier(args) -> int:
    dataset = datasets.load_dataset(args.data)
    model = models.build_toy_cnn(dataset.class_count, dataset.input_shape,
                                 seed=args.seed, model_id=args.model_id)
    models.train_classifier(model, dataset, epochs=args.epochs, lr=args.lr,
                            batch_size=args.batch_size, seed=args.seed)
    os.makedirs(args.out, exist_ok=True)
    models.save_classifier(os.path.join(args.out, "classifier.ckpt"), model)
    _write_snapshot(args.out, args)
    print(f"clean error {model.clean_error:.4f}")
    return 0


def cmd_adv_train(args) -> int:
    dataset = datasets.load_dataset(args.data)
    model = models.build_toy_cnn(dataset.class_count, dataset.input_shape,
                                 seed=args.seed, model_id=args.model_id)
    models.adv_train_classifier(model, dataset, epsilon=args.epsilon,
                                pgd_steps=args.pgd_steps, epochs=args.epochs,
                                lr=args.lr, batch_size=args.batch_size,
                                seed=args.seed)
    os.makedirs(args.out, exist_ok=True)
    models.save_classifier(os.path.join(args.out, "classifier.ckpt"), model)
    _write_snapshot(args.out, args)
    print(f"clean error {model.clean_error:.4f}")
    return 0


def _cmd_train_module(args, variant: str) -> int:
    dataset = datasets.load_dataset(args.data)
    if dataset.split_tag != "train_module":
        raise evaluation.EvalError(
            f"transformer training requires a train_module split, got {dataset.split_tag!r}")
    model = models.load_classifier(args.model)
    spec = _split_spec_from_args(args)
    partition = build_partition(spec, *dataset.input_shape[1:])
    cfg = training.TrainConfig(
        epochs=args.epochs, batch_size=args.batch_size,
        learning_rate=args.lr, epsilon=args.epsilon,
        sign_mode=args.sign_mode, seed=args.seed,
        train_set_size=args.train_size)
    train_fn = (training.train_transformer if variant == "rhp"
                else training.train_tu_variant)
    params, log = train_fn(model, dataset, partition, cfg, split_spec=spec)
    os.makedirs(args.out, exist_ok=True)
    transformer.save_transformer(os.path.join(args.out, "transformer.ckpt"), params)
    log.save(os.path.join(args.out, "trainlog.jsonl"))
    _write_snapshot(args.out, args)
    print(f"final loss {log.losses[-1]:.4f}" if log.losses else "no steps run")
    return 0


def cmd_train_rhp(args) -> int:
    return _cmd_train_module(args, "rhp")


def cmd_train_tu(args) -> int:
    return _cmd_train_module(args, "tu")


def cmd_attack(args) -> int:
    dataset = datasets.load_dataset(args.data)
    model = models.load_classifier(args.model)
    cfg = attacks.AttackConfig(epsilon=args.epsilon, steps=args.steps, seed=args.seed)
    os.makedirs(args.out, exist_ok=True)

    if args.method in ("rp", "op"):
        spec = _split_spec_from_args(args)
        partition = build_partition(spec, *dataset.input_shape[1:])
        if args.method == "rp":
            artifact = attacks.rp_baseline(partition, dataset.input_shape[0],
                                           args.epsilon, args.seed, split_spec=spec,
                                           source_model_id=model.model_id)
        else:
            artifact = attacks.op_baseline(model, dataset, partition, args.epsilon,
                                           iterations=args.op_iterations,
                                           seed=args.seed, split_spec=spec)
        artifacts.save_artifact(os.path.join(args.out, f"{args.method}.artifact"), artifact)
        _write_snapshot(args.out, args)
        return 0

    if args.method == "rhp":
        if not args.transformer:
            raise attacks.AttackError("--transformer is required for method rhp")
        params = transformer.load_transformer(args.transformer)
        attack_fn = lambda m, x, y: attacks.rhp_attack(m, params, x, y, cfg)
    elif args.method == "fgsm":
        attack_fn = lambda m, x, y: attacks.fgsm(m, x, y, cfg)
    elif args.method == "mim":
        attack_fn = lambda m, x, y: attacks.mim(m, x, y, cfg)
    elif args.method == "dim":
        attack_fn = lambda m, x, y: attacks.dim(m, x, y, cfg)
    else:
        raise attacks.AttackError(f"unknown method {args.method!r}")

    adv = evaluation._generate_adversarial(attack_fn, model, dataset)
    attacks.check_linf(dataset.images, adv, args.epsilon)
    artifacts.save_arrays(
        os.path.join(args.out, "adversarial.bin"),
        {"kind": "adversarial_batch", "method": args.method,
         "epsilon": args.epsilon, "seed": args.seed},
        {"images": adv, "labels": dataset.labels.astype(np.float64)})
    _write_snapshot(args.out, args)
    return 0


def cmd_make_universal(args) -> int:
    params = transformer.load_transformer(args.transformer)
    c = args.channels
    shape = (c, params.partition.height, params.partition.width)
    artifact = transformer.universal_perturbation(
        params, args.epsilon, shape,
        source_model_id=args.source_model_id, seed=args.seed)
    os.makedirs(args.out, exist_ok=True)
    artifacts.save_artifact(os.path.join(args.out, "universal.artifact"), artifact)
    _write_snapshot(args.out, args)
    return 0


def cmd_eval(args) -> int:
    dataset = datasets.load_dataset(args.data)
    model = _load_model(args.model, args.defense, seed=args.seed)
    artifact = artifacts.load_artifact(args.artifact)
    report = evaluation.error_increase(model, dataset, artifact, seed=args.seed)
    os.makedirs(args.out, exist_ok=True)
    _write_reports(os.path.join(args.out, "report.csv"), [report])
    _write_snapshot(args.out, args)
    print(f"{report.model_id} {report.attack_id} "
          f"error increase {100 * report.error_increase:.2f} points")
    return 0


def cmd_transfer_matrix(args) -> int:
    dataset = datasets.load_dataset(args.data)
    model_list = []
    for entry in args.models.split(","):
        path, _, defense = entry.partition(":")
        model_list.append(_load_model(path, defense or "none", seed=args.seed))
    attack_map = {}
    for path in args.artifacts.split(","):
        art = artifacts.load_artifact(path)
        attack_map[f"{art.method}"] = art
    reports = evaluation.transfer_matrix(model_list, attack_map, dataset, seed=args.seed)
    os.makedirs(args.out, exist_ok=True)
    _write_reports(os.path.join(args.out, "transfer_matrix.csv"), reports)
    _write_snapshot(args.out, args)
    return 0


def cmd_probe_report(args) -> int:
    log = training.TrainLog.load(args.trainlog)
    os.makedirs(args.out, exist_ok=True)
    smooth_b = log.moving_average(log.frac_b_over_a)
    smooth_c = log.moving_average(log.frac_c_over_d)
    with open(os.path.join(args.out, "probe_report.csv"), "w", newline="",
              encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["step", "epoch", "loss", "frac_b_over_a", "frac_c_over_d",
                         "frac_b_over_a_smooth", "frac_c_over_d_smooth"])
        for i in range(len(log.steps)):
            writer.writerow([log.steps[i], log.epochs[i], f"{log.losses[i]:.6f}",
                             f"{log.frac_b_over_a[i]:.6f}", f"{log.frac_c_over_d[i]:.6f}",
                             f"{smooth_b[i]:.6f}", f"{smooth_c[i]:.6f}"])
    _write_snapshot(args.out, args)
    return 0


def cmd_sweep_k(args) -> int:
    train_data = datasets.load_dataset(args.data_train)
    eval_data = datasets.load_dataset(args.data_eval)
    model = models.load_classifier(args.model)
    defenses = {}
    for entry in args.defenses.split(","):
        path, _, kind = entry.partition(":")
        m = _load_model(path, kind or "none", seed=args.seed)
        defenses[m.model_id] = m
    cfg = training.TrainConfig(epochs=args.epochs, epsilon=args.epsilon, seed=args.seed)
    k_values = [int(v) for v in args.k_values.split(",")]
    rows, sweep_artifacts = evaluation.k_sweep(model, defenses, train_data, eval_data,
                                               k_values, cfg, split_kind=args.split)
    os.makedirs(args.out, exist_ok=True)
    for k, art in sweep_artifacts.items():
        artifacts.save_artifact(os.path.join(args.out, f"universal_k{k}.artifact"), art)
    fieldnames = list(rows[0].keys()) if rows else ["k"]
    with open(os.path.join(args.out, "k_sweep.csv"), "w", newline="",
              encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=fieldnames)
        writer.writeheader()
        for row in rows:
            writer.writerow({k: (f"{v:.6f}" if isinstance(v, float) else v)
                             for k, v in row.items()})
    _write_snapshot(args.out, args)
    return 0


def cmd_export_perturbation(args) -> int:
    artifact = artifacts.load_artifact(args.artifact)
    out_dir = os.path.dirname(os.path.abspath(args.out)) or "."
    os.makedirs(out_dir, exist_ok=True)
    artifacts.export_perturbation_image(artifact, args.out)
    return 0


# --- parser wiring -------------------------------------------------------

def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", default=None, help="JSON config file; flags override")
    p.add_argument("--seed", type=int, default=0)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="rhp",
                                     description="Regionally homogeneous perturbation toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate-data", help="render the synthetic shape dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--classes", type=int, default=10)
    p.add_argument("--per-class", type=int, default=50)
    p.add_argument("--size", type=int, default=32)
    p.add_argument("--tag", default="eval", choices=list(datasets.SPLIT_TAGS))
    _common(p)
    p.set_defaults(func=cmd_generate_data)

    p = sub.add_parser("train-classifier", help="train the toy CNN")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--epochs", type=int, default=10)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--model-id", default="toy_cnn_nat")
    _common(p)
    p.set_defaults(func=cmd_train_classifier)

    p = sub.add_parser("adv-train", help="PGD-adversarially train the toy CNN")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--epochs", type=int, default=10)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--epsilon", type=float, default=16.0)
    p.add_argument("--pgd-steps", type=int, default=5)
    p.add_argument("--model-id", default="toy_cnn_adv")
    _common(p)
    p.set_defaults(func=cmd_adv_train)

    for name, handler in (("train-rhp", cmd_train_rhp), ("train-tu", cmd_train_tu)):
        p = sub.add_parser(name, help=f"train the gradient transformer ({name[6:]})")
        p.add_argument("--data", required=True)
        p.add_argument("--model", required=True)
        p.add_argument("--out", required=True)
        _add_split_flags(p)
        p.add_argument("--epsilon", type=float, default=16.0)
        p.add_argument("--train-size", type=int, default=None)
        p.add_argument("--sign-mode", default="straight_through",
                       choices=["straight_through", "linear"])
        p.add_argument("--epochs", type=int, default=50)
        p.add_argument("--batch-size", type=int, default=32)
        p.add_argument("--lr", type=float, default=1e-3)
        _common(p)
        p.set_defaults(func=handler)

    p = sub.add_parser("attack", help="generate adversarial examples or baselines")
    p.add_argument("--method", required=True,
                   choices=["fgsm", "mim", "dim", "rhp", "rp", "op"])
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--transformer", default=None)
    _add_split_flags(p)
    p.add_argument("--epsilon", type=float, default=16.0)
    p.add_argument("--steps", type=int, default=10)
    p.add_argument("--op-iterations", type=int, default=200)
    _common(p)
    p.set_defaults(func=cmd_attack)

    p = sub.add_parser("make-universal", help="extract the universal perturbation")
    p.add_argument("--transformer", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--epsilon", type=float, default=16.0)
    p.add_argument("--channels", type=int, default=3)
    p.add_argument("--source-model-id", default="")
    _common(p)
    p.set_defaults(func=cmd_make_universal)

    p = sub.add_parser("eval", help="evaluate an artifact against a model")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--artifact", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--defense", default="none", choices=["none", "resize_pad"])
    _common(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("transfer-matrix", help="evaluate artifacts across models")
    p.add_argument("--models", required=True,
                   help="comma list of ckpt[:resize_pad] entries")
    p.add_argument("--artifacts", required=True, help="comma list of artifact files")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    _common(p)
    p.set_defaults(func=cmd_transfer_matrix)

    p = sub.add_parser("probe-report", help="emit probe-fraction curves as CSV")
    p.add_argument("--trainlog", required=True)
    p.add_argument("--out", required=True)
    _common(p)
    p.set_defaults(func=cmd_probe_report)

    p = sub.add_parser("sweep-k", help="train and evaluate across region counts")
    p.add_argument("--model", required=True)
    p.add_argument("--defenses", required=True,
                   help="comma list of ckpt[:resize_pad] entries")
    p.add_argument("--data-train", required=True)
    p.add_argument("--data-eval", required=True)
    p.add_argument("--k-values", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--split", default="vertical",
                   choices=["vertical", "horizontal", "grid", "slash"])
    p.add_argument("--epsilon", type=float, default=16.0)
    p.add_argument("--epochs", type=int, default=5)
    _common(p)
    p.set_defaults(func=cmd_sweep_k)

    p = sub.add_parser("export-perturbation", help="render an artifact as a PNG")
    p.add_argument("--artifact", required=True)
    p.add_argument("--out", required=True)
    _common(p)
    p.set_defaults(func=cmd_export_perturbation)

    return parser


def _apply_config(parser: argparse.ArgumentParser, argv: list[str]) -> argparse.Namespace:
    args = parser.parse_args(argv)
    if getattr(args, "config", None):
        with open(args.config, encoding="utf-8") as fh:
            overrides = json.load(fh)
        sub_parser = build_parser()
        for action in sub_parser._subparsers._group_actions:
            choice = action.choices.get(args.command)
            if choice is not None:
                valid = {a.dest for a in choice._actions}
                unknown = set(overrides) - valid
                if unknown:
                    raise SystemExit(f"unknown config keys: {sorted(unknown)}")
                choice.set_defaults(**overrides)
        args = sub_parser.parse_args(argv)
    return args


def main(argv: list[str] | None = None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    parser = build_parser()
    try:
        args = _apply_config(parser, argv)
    except SystemExit as exc:
        code = exc.code if isinstance(exc.code, int) else 1
        return code
    try:
        return args.func(args)
    except Exception as exc:  # mark partial outputs before propagating the message
        out = getattr(args, "out", None)
        if out and os.path.isdir(out):
            with open(os.path.join(out, "FAILED"), "w", encoding="utf-8") as fh:
                fh.write(f"{type(exc).__name__}: {exc}\n")
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    raise SystemExit(main())
