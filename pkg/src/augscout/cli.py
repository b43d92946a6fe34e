"""Command-line front end.  Every subcommand is a thin wrapper over library calls.

Exit status: 0 on success, 1 on execution errors, 2 on usage errors.
"""
from __future__ import annotations

import argparse
import importlib
import json
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import analysis, reporting, scout
from .augmentations import AugmentationPolicy, CropSpec, FlipSpec, format_alpha, parse_grid
from .datasets import INPUT_SIZE, DatasetRef, make_synthetic, oracle_spec
from .errors import AugScoutError, InvalidSpec
from .trainer import EarlyStopSpec, default_trainer_spec, tune

DATASETS = ("synthetic", "cifar10", "cifar100", "fashion_mnist")


class UsageError(Exception):
    pass


def _grid_arg(text: str) -> str:
    try:
        parse_grid(text, 32)
    except (InvalidSpec, ValueError) as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None
    return text


def _common() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    g = p.add_argument_group("experiment")
    g.add_argument("--dataset", choices=DATASETS, default="synthetic")
    g.add_argument("--arch", default="linear_probe", help="registered trainer id")
    g.add_argument("--flip", action=argparse.BooleanOptionalAction, default=True,
                   help="add random horizontal flip to every crop policy")
    g.add_argument("--runs", type=int, default=4, help="runs per alpha")
    g.add_argument("--grid", type=_grid_arg, default="default", help="'default', 'a,b,c' or 'start:stop:step'")
    g.add_argument("--seed", type=int, default=0, help="master seed")
    g.add_argument("--out", type=Path, default=None, help="store or output directory")
    g.add_argument("--train-fraction", type=float, default=1.0)
    g.add_argument("--val-fraction", type=float, default=0.1)
    g.add_argument("--cache-dir", default=None)
    g.add_argument("--samples-per-class", type=int, default=48, help="synthetic dataset size")
    g.add_argument("--lr", type=float, default=None)
    g.add_argument("--batch-size", type=int, default=None)
    g.add_argument("--epochs", type=int, default=None)
    g.add_argument("--patience", type=int, default=None, help="early-stopping patience (default: pinned)")
    g.add_argument("--plugin", action="append", default=[], help="module to import for trainer registration")
    return p


def _dataset_ref(args) -> DatasetRef:
    syn = oracle_spec(INPUT_SIZE.get(args.dataset, 32), args.samples_per_class) if args.dataset == "synthetic" else None
    return DatasetRef(args.dataset, args.train_fraction, args.val_fraction, args.seed, syn, args.cache_dir)


def _trainer(args):
    spec = default_trainer_spec(args.arch, args.seed)
    changes = {}
    if args.lr is not None:
        changes["learning_rate"] = args.lr
    if args.batch_size is not None:
        changes["batch_size"] = args.batch_size
    if args.epochs is not None:
        changes["max_epochs"] = args.epochs
    if args.patience is not None:
        changes["early_stopping"] = EarlyStopSpec(args.patience)
    return replace(spec, **changes)


def _config(args) -> scout.ExperimentConfig:
    if args.runs < 1:
        raise UsageError("--runs must be >= 1")
    return scout.ExperimentConfig(
        _dataset_ref(args), _trainer(args), parse_grid(args.grid, 32), args.runs, args.flip, args.seed
    )


def _out(args) -> Path:
    return args.out if args.out is not None else scout.store_root()


# -- subcommands ---------------------------------------------------------------------------


def cmd_plan(args) -> int:
    p = scout.plan(_config(args))
    b = scout.budget(p)
    print(f"{p.total_jobs} jobs")
    print(f"plan {p.id}: {len(p.grid)} alphas x {p.runs_per_alpha} runs, policy {p.policy_template.label}")
    print("alphas:", " ".join(format_alpha(a) for a in p.grid.alphas))
    print("crop dims:", " ".join(str(d) for d in p.grid.dims))
    print(f"budget: {b.jobs} vs {b.baseline_jobs} baseline jobs, reduction factor {b.reduction_factor:.2f}")
    return 0


def cmd_run(args) -> int:
    root = _out(args)
    if args.resume:
        store = scout.ExperimentStore(root)
        p = store.plan
    else:
        p = scout.plan(_config(args))
        store = scout.ExperimentStore(root, p)
    todo = len(store.pending())
    print(f"plan {p.id}: {p.total_jobs} jobs, {p.total_jobs - todo} already done, {todo} to run", flush=True)
    trained = []

    def progress(job, state):
        trained.append(job.key)
        print(f"  [{len(trained)}/{todo}] alpha {format_alpha(job.alpha)} run {job.run_index}: {state}", flush=True)

    scout.execute(p, store, args.workers, on_job=progress)
    print(f"trained {len(trained)} jobs; store {root}")
    return 0


def cmd_refine(args) -> int:
    parent = scout.ExperimentStore(args.source).plan
    child = scout.refine(parent, (args.alpha_min, args.alpha_max), args.step, args.refine_runs)
    root = _out(args)
    scout.ExperimentStore(root, child)
    print(f"{child.total_jobs} jobs")
    print("alphas:", " ".join(format_alpha(a) for a in child.grid.alphas))
    print(f"refined plan {child.id} (parent {parent.id}) written to {root}; run with: run --resume --out {root}")
    return 0


def _load_curves(args) -> list:
    if args.fixture:
        return [analysis.load_curve_fixture(name) for name in args.fixture]
    if args.store:
        return [scout.aggregate(scout.ExperimentStore(s)) for s in args.store]
    if args.results:
        return [cs for r in args.results for cs in reporting.import_results(r)]
    raise UsageError("give --store, --results or --fixture")


def cmd_analyze(args) -> int:
    if args.table:
        table = analysis.load_fixtures(args.table)
        print(f"{args.table}: {len(table.peaks)} classes")
        print(f"ideal accuracy (recomputed): {analysis.ideal_accuracy(table):.5f}")
        print(f"mean row: alpha {format_alpha(table.mean.best_alpha)}, accuracy {table.mean.best_accuracy}")
        return 0
    out = []
    for cs in _load_curves(args):
        s = reporting.summarize(cs, args.tau, args.window)
        out.append(s)
        if args.json:
            continue
        print(f"== {cs.dataset_id} / {cs.architecture_id} / {cs.policy}")
        for w in cs.warnings:
            print(f"  warning: {w}")
        for pk, d in zip(s["peaks"], s["dropoffs"] + [None]):
            drop = "" if d is None else f"  drop-off {d['threshold_alpha'] or 'none'}"
            print(f"  {pk['class_name']:<16} peak alpha {pk['best_alpha']:>4}  acc {pk['best_accuracy']:.3f}{drop}")
        print("  robustness ranking:", ", ".join(s["ranking"]))
        if s.get("phases"):
            ph = s["phases"]
            print(f"  phases: increase to {ph['boundaries'][0]}, fall to {ph['boundaries'][1]}, level {ph['level']:.3f}")
        if s["ideal_accuracy"] is not None:
            print(f"  ideal accuracy: {s['ideal_accuracy']:.5f}")
    if args.json:
        print(json.dumps(out, indent=1))
    return 0


def cmd_report(args) -> int:
    curves = _load_curves(args)
    formats = tuple(args.formats.split(",")) if args.formats else reporting.FORMATS
    subset = tuple(args.classes.split(",")) if args.classes else None
    cfg = reporting.ReportConfig(_out(args), subset, formats, not args.no_mean, not args.no_peaks, args.stem)
    for path in reporting.render_report(curves, cfg):
        print(path)
    return 0


def cmd_synth(args) -> int:
    spec = oracle_spec(32, args.samples_per_class)
    train, test = make_synthetic(spec, args.seed)
    out = _out(args)
    out.mkdir(parents=True, exist_ok=True)
    np.savez_compressed(out / "synthetic.npz", train_x=train.images, train_y=train.labels,
                        test_x=test.images, test_y=test.labels, class_names=np.array(train.class_names))
    (out / "synthetic.json").write_text(json.dumps(
        {"spec": spec.to_dict(), "expected_robustness_order": train.metadata["expected_robustness_order"]}, indent=1))
    print(f"wrote {len(train)} train / {len(test)} test images to {out / 'synthetic.npz'}")
    print("expected robustness order:", ", ".join(train.metadata["expected_robustness_order"]))
    if args.dump_alpha is not None:
        _dump_samples(train, args.dump_alpha, args.flip, args.seed, out / "augmented_samples.png")
    return 0


def _dump_samples(ds, alpha, flip, seed, path) -> None:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    policy = AugmentationPolicy(CropSpec(alpha), FlipSpec() if flip else None)
    rng = np.random.default_rng(seed)
    k = ds.num_classes
    fig, axes = plt.subplots(k, 6, figsize=(6, k), squeeze=False)
    for c in range(k):
        img = ds.images[np.flatnonzero(ds.labels == c)[0]]
        views = [img] + list(policy.apply_train_batch(np.repeat(img[None], 5, axis=0), rng))
        for j, v in enumerate(views):
            axes[c][j].imshow(np.clip(v, 0, 1))
            axes[c][j].axis("off")
        axes[c][0].set_title(ds.class_names[c], fontsize=6, loc="left")
    fig.savefig(path, dpi=100)
    plt.close(fig)
    print(f"wrote {path}")


def cmd_fixtures(args) -> int:
    table = analysis.load_fixtures(args.variant)
    text = reporting.render_fixture_table(table) if args.format == "table" else json.dumps(table.to_dict(), indent=1)
    if args.out:
        args.out.parent.mkdir(parents=True, exist_ok=True)
        args.out.write_text(text)
        print(f"wrote {args.out}")
    else:
        print(text, end="" if text.endswith("\n") else "\n")
    return 0


def cmd_tune(args) -> int:
    ref = _dataset_ref(args)
    train, val, _ = ref.materialize()
    grid = [(lr, ep, bs) for lr in args.lrs for ep in args.epoch_grid for bs in args.batch_sizes]
    base = _trainer(args)
    spec, trials = tune(args.arch, train, val, grid, args.seed, base.early_stopping, base.options)
    for t in trials:
        status = t.error or f"val {t.val_accuracy:.4f} train {t.train_accuracy:.4f}"
        print(f"  lr {t.learning_rate:g} epochs {t.max_epochs} batch {t.batch_size}: {status}")
    print(json.dumps(spec.to_dict(), indent=1))
    return 0


def build_parser() -> argparse.ArgumentParser:
    common = _common()
    ap = argparse.ArgumentParser(prog="augscout", description="Augmentation robustness scouting")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("plan", parents=[common], help="print the job plan and budget")
    p.set_defaults(func=cmd_plan)

    p = sub.add_parser("run", parents=[common], help="execute (or resume) a plan into a store")
    p.add_argument("--resume", action="store_true", help="continue the plan already in --out")
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("refine", parents=[common], help="finer plan over [alpha-min, alpha-max)")
    p.add_argument("--from", dest="source", type=Path, required=True, help="parent store")
    p.add_argument("--alpha-min", required=True)
    p.add_argument("--alpha-max", required=True)
    p.add_argument("--step", default="1")
    p.add_argument("--refine-runs", type=int, default=None, help="runs per alpha (default: parent's)")
    p.set_defaults(func=cmd_refine)

    for name, func, helptext in (("analyze", cmd_analyze, "peaks, drop-offs, phases, ideal accuracy"),
                                 ("report", cmd_report, "plots, tables and exports")):
        p = sub.add_parser(name, parents=[common], help=helptext)
        p.add_argument("--store", action="append", type=Path, default=[])
        p.add_argument("--results", action="append", type=Path, default=[], help="exported CSV/JSON")
        p.add_argument("--fixture", action="append", choices=analysis.CURVE_FIXTURES, default=[])
        p.set_defaults(func=func)
        if name == "analyze":
            p.add_argument("--table", choices=analysis.VARIANTS, help="analyze a bundled best-alpha table")
            p.add_argument("--tau", type=float, default=0.5)
            p.add_argument("--window", type=int, default=2)
            p.add_argument("--json", action="store_true")
        else:
            p.add_argument("--formats", default=None, help="comma list of plot,table,csv,json")
            p.add_argument("--classes", default=None, help="comma list of classes to plot")
            p.add_argument("--no-mean", action="store_true")
            p.add_argument("--no-peaks", action="store_true")
            p.add_argument("--stem", default="report")

    p = sub.add_parser("synth", parents=[common], help="write the synthetic oracle dataset")
    p.add_argument("--dump-alpha", type=float, default=None, help="also save augmented samples at this alpha")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("fixtures", parents=[common], help="emit a bundled best-alpha table")
    p.add_argument("--variant", choices=analysis.VARIANTS, default="without_flip")
    p.add_argument("--format", choices=("table", "json"), default="table")
    p.set_defaults(func=cmd_fixtures)

    p = sub.add_parser("tune", parents=[common], help="pick lr/epochs/batch size on the validation split")
    p.add_argument("--lrs", type=float, nargs="+", default=[0.01, 0.05])
    p.add_argument("--epoch-grid", type=int, nargs="+", default=[20, 60])
    p.add_argument("--batch-sizes", type=int, nargs="+", default=[32])
    p.set_defaults(func=cmd_tune)
    return ap


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        for mod in args.plugin:
            importlib.import_module(mod)
        return args.func(args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"augscout: error: {exc}", file=sys.stderr)
        return 2
    except (AugScoutError, OSError, ImportError, ZeroDivisionError) as exc:
        print(f"augscout: error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
