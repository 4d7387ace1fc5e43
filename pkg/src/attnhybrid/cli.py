"""Command-line surface.

Subcommands: ``count`` (parameter table), ``gen-data`` (synthetic images),
``train`` (fit one recipe), ``protocol`` (grid search + multi-split
evaluation + significance tests), ``explain`` (saliency/attention export),
and ``probe`` (feature-usage decisions from score tables).
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import replace as dc_replace
from pathlib import Path

import numpy as np

from .backbones import (
    ArchitectureRecipe,
    build,
    count_parameters,
    load_model,
    save_model,
    table_rows,
)
from .data import generate_toy_dataset, load_image_dataset, write_image_dataset
from .explain import attention_map, export, grad_cam, mean_heatmap
from .netpbm import read_netpbm
from .protocol import parse_config, parse_recipe_name, run_protocol
from .stats import ci_test_randomized, parse_feature_tables, probe_report
from .train import Hyperparameters, train_model

_COUNT_HEADER = "backbone,variant,parameters,millions,delta_pct"


def _format_count_row(row: dict) -> str:
    return (
        f"{row['backbone']},{row['variant']},{row['parameters']},"
        f"{row['millions']:.2f},{row['delta_pct']:+.2f}"
    )


def _cmd_count(args) -> int:
    if args.recipe is None:
        print(_COUNT_HEADER)
        for row in table_rows(class_count=args.classes):
            print(_format_count_row(row))
        return 0
    from_file = Path(args.recipe).is_file()
    if from_file:
        model = load_model(args.recipe)
        recipe = model.recipe
    else:
        recipe = dc_replace(parse_recipe_name(args.recipe), class_count=args.classes)
        model = build(recipe, seed=0)
    count = count_parameters(model)
    base = build(
        ArchitectureRecipe(backbone=recipe.backbone, class_count=recipe.class_count)
    )
    base_count = count_parameters(base)
    if from_file:
        variant = recipe.backbone
        if recipe.attach_ga_after:
            variant += "+ga"
        if recipe.replace_last_block_with != "none":
            variant += "+" + recipe.replace_last_block_with.lower()
    else:
        variant = args.recipe
    print(_COUNT_HEADER)
    print(
        _format_count_row(
            dict(
                backbone=recipe.backbone,
                variant=variant,
                parameters=count,
                millions=count / 1e6,
                delta_pct=100.0 * (count - base_count) / base_count,
            )
        )
    )
    return 0


def _cmd_gen_data(args) -> int:
    data = generate_toy_dataset(args.seed, args.n, ood=args.ood)
    write_image_dataset(data, args.out)
    print(f"wrote {len(data)} images to {args.out}", file=sys.stderr)
    return 0


def _cmd_train(args) -> int:
    data = load_image_dataset(args.data)
    recipe = parse_recipe_name(args.recipe)
    model = build(recipe, seed=args.seed)
    hp = Hyperparameters(
        learning_rate=args.lr,
        weight_decay=args.wd,
        batch_size=args.batch_size,
        epochs=args.epochs,
        seed=args.seed,
    )
    run = train_model(model, data, hp)
    if run.diverged:
        print("error: training diverged (non-finite loss); nothing saved", file=sys.stderr)
        return 1
    save_model(model, args.out)
    print(
        f"trained {args.recipe} for {args.epochs} epochs, "
        f"final loss {run.epoch_losses[-1]:.6f}, saved to {args.out}",
        file=sys.stderr,
    )
    return 0


def _cmd_protocol(args) -> int:
    config = parse_config(Path(args.config).read_text(encoding="utf-8"))
    report = run_protocol(
        config, progress=lambda msg: print(msg, file=sys.stderr, flush=True)
    )
    Path(args.out).write_text(report.to_csv(), encoding="utf-8")
    print(f"wrote report to {args.out}", file=sys.stderr)
    return 0


def _load_image(path) -> np.ndarray:
    """Read a PGM/PPM file as a (3, H, W) float image in [0, 1]."""
    arr = read_netpbm(path)
    if arr.ndim == 2:
        arr = np.stack([arr] * 3, axis=-1)
    return arr.transpose(2, 0, 1).astype(np.float64) / 255.0


def _explain_one(model, image, args):
    if args.method == "gradcam":
        target = "predicted" if args.class_index is None else args.class_index
        return grad_cam(model, image, target_class=target, layer=args.layer)
    return attention_map(model, image, ga_layer=args.layer)


def _cmd_explain(args) -> int:
    model = load_model(args.model)
    if (args.image is None) == (args.image_dir is None):
        print("error: give exactly one of --image or --image-dir", file=sys.stderr)
        return 2
    if args.image is not None:
        if args.out is None:
            print("error: --image requires --out", file=sys.stderr)
            return 2
        heatmap = _explain_one(model, _load_image(args.image), args)
        export(heatmap, args.out)
        print(f"wrote {args.method} map to {args.out}", file=sys.stderr)
        return 0
    if args.mean_out is None:
        print("error: --image-dir requires --mean-out", file=sys.stderr)
        return 2
    paths = sorted(
        p for p in Path(args.image_dir).iterdir() if p.suffix in (".pgm", ".ppm")
    )
    if not paths:
        print(f"error: no .pgm/.ppm images in {args.image_dir}", file=sys.stderr)
        return 1
    maps = [_explain_one(model, _load_image(p), args) for p in paths]
    export(mean_heatmap(maps), args.mean_out)
    print(
        f"wrote mean {args.method} map over {len(maps)} images to {args.mean_out}",
        file=sys.stderr,
    )
    return 0


def _probe_tests(n_random_features: int) -> dict:
    # Three independently seeded draws of the randomized test form the
    # majority-vote committee; fresh generators keep each table's p values
    # independent of table order.
    return {
        f"rff{i}": lambda table, s=i: ci_test_randomized(
            table,
            n_random_features=n_random_features,
            rng=np.random.default_rng(s),
        )
        for i in (1, 2, 3)
    }


def _cmd_probe(args) -> int:
    tables = parse_feature_tables(Path(args.table).read_text(encoding="utf-8"))
    report = probe_report(tables, _probe_tests(args.features), alpha=args.alpha)
    csv = report.to_csv()
    if args.out is None:
        print(csv, end="")
    else:
        Path(args.out).write_text(csv, encoding="utf-8")
        print(f"wrote usage grid to {args.out}", file=sys.stderr)
    return 0


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="attnhybrid",
        description="Hybrid CNN/self-attention models: build, train, evaluate, explain.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("count", help="print parameter counts as CSV")
    p.add_argument(
        "--recipe",
        help="recipe name (e.g. resnet18+ga+ela) or saved model file; "
        "omit for the full table",
    )
    p.add_argument("--classes", type=int, default=3, help="classifier width (default 3)")
    p.set_defaults(handler=_cmd_count)

    p = sub.add_parser("gen-data", help="write a synthetic image directory")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--n", type=int, required=True, help="images per class")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--ood", action="store_true", help="draw the shifted-domain variant")
    p.set_defaults(handler=_cmd_gen_data)

    p = sub.add_parser("train", help="train one recipe on an image directory")
    p.add_argument("--recipe", required=True)
    p.add_argument("--data", required=True, help="directory from gen-data")
    p.add_argument("--lr", type=float, required=True)
    p.add_argument("--wd", type=float, default=0.0)
    p.add_argument("--epochs", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--out", required=True, help="model file to write")
    p.set_defaults(handler=_cmd_train)

    p = sub.add_parser(
        "protocol", help="grid search, multi-split evaluation, significance tests"
    )
    p.add_argument("--config", required=True, help="key = value configuration file")
    p.add_argument("--out", required=True, help="report CSV to write")
    p.set_defaults(handler=_cmd_protocol)

    p = sub.add_parser("explain", help="export saliency or attention maps as PGM")
    p.add_argument("--model", required=True, help="saved model file")
    p.add_argument("--method", required=True, choices=("gradcam", "attention"))
    p.add_argument("--image", help="single PGM/PPM input")
    p.add_argument("--out", help="output PGM for --image")
    p.add_argument("--image-dir", help="directory of PGM/PPM inputs")
    p.add_argument("--mean-out", help="output PGM for the corpus mean")
    p.add_argument("--layer", help="published layer name (default per method)")
    p.add_argument(
        "--class",
        dest="class_index",
        type=int,
        help="gradcam target class (default: predicted)",
    )
    p.set_defaults(handler=_cmd_explain)

    p = sub.add_parser("probe", help="feature-usage decisions from a score table")
    p.add_argument("--table", required=True, help="feature/score CSV")
    p.add_argument("--alpha", type=float, default=0.01)
    p.add_argument("--features", type=int, default=25, help="random features per map")
    p.add_argument("--out", help="usage grid CSV (default: stdout)")
    p.set_defaults(handler=_cmd_probe)

    return parser


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        return args.handler(args)
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
