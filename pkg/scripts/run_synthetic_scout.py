"""Scout the four-class synthetic oracle and report which classes lose their label first.

    python3 scripts/run_synthetic_scout.py --out runs/oracle --seed 0
"""
import argparse
import time
from pathlib import Path

from augscout.analysis import dropoffs, robustness_ranking
from augscout.augmentations import default_grid
from augscout.datasets import DatasetRef, oracle_spec
from augscout.reporting import ReportConfig, render_report, summarize
from augscout.scout import ExperimentConfig, run_scout
from augscout.trainer import default_trainer_spec


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", type=Path, default=Path("runs/oracle"))
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--runs", type=int, default=2)
    ap.add_argument("--samples-per-class", type=int, default=48)
    ap.add_argument("--arch", default="linear_probe", choices=["linear_probe", "reference_cnn"])
    ap.add_argument("--flip", action="store_true")
    ap.add_argument("--workers", type=int, default=1)
    args = ap.parse_args()

    spec = oracle_spec(32, args.samples_per_class)
    ref = DatasetRef("synthetic", seed=args.seed, synthetic=spec)
    cfg = ExperimentConfig(ref, default_trainer_spec(args.arch), default_grid(32), args.runs, args.flip, args.seed)
    t0 = time.perf_counter()
    curves = run_scout(cfg, args.out / "store", args.workers)
    print(f"scout finished in {time.perf_counter() - t0:.0f}s")

    summary = summarize(curves)
    for pk in summary["peaks"]:
        print(f"  {pk['class_name']:<14} best alpha {pk['best_alpha']:>3}  acc {pk['best_accuracy']:.3f}")
    drops = dropoffs(curves)
    for d in drops:
        print(f"  {d.class_name:<14} drop-off at {d.threshold_alpha if d.threshold_alpha is not None else 'never'}")
    print("observed ranking:", ", ".join(robustness_ranking(drops)))
    from augscout.datasets import expected_robustness_order

    print("geometric ranking:", ", ".join(expected_robustness_order(spec)))
    for p in render_report(curves, ReportConfig(args.out / "report", stem="oracle")):
        print("wrote", p)


if __name__ == "__main__":
    main()
