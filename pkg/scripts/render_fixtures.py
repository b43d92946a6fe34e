"""Render the bundled reference tables and curve fixtures (tables, plots, exports) into one folder."""
import argparse
from pathlib import Path

from augscout.analysis import CURVE_FIXTURES, VARIANTS, compare_policies, ideal_accuracy, load_curve_fixture, load_fixtures
from augscout.reporting import ReportConfig, render_fixture_table, render_report


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", type=Path, default=Path("runs/fixtures"))
    args = ap.parse_args()
    args.out.mkdir(parents=True, exist_ok=True)

    for variant in VARIANTS:
        table = load_fixtures(variant)
        path = args.out / f"cifar100_{variant}.table.txt"
        path.write_text(render_fixture_table(table))
        print(f"{variant}: ideal {ideal_accuracy(table):.5f}, mean row alpha {table.mean.best_alpha} "
              f"acc {table.mean.best_accuracy} -> {path}")

    for name in CURVE_FIXTURES:
        cfg = ReportConfig(args.out, formats=("plot", "json"), stem=name)
        for p in render_report(load_curve_fixture(name), cfg):
            print("wrote", p)

    cmp = compare_policies(load_curve_fixture("fashion_mnist_with_flip"), load_curve_fixture("fashion_mnist_without_flip"))
    for s in cmp.shifts:
        print(f"  {s.class_name:<11} peak moves {s.alpha_shift:+} alpha without flip ({s.accuracy_shift:+.3f} acc)")


if __name__ == "__main__":
    main()
