"""Print the default alpha grid, its crop sizes and the job budget against the exhaustive sweep."""
import argparse

from augscout.augmentations import DEFAULT_ALPHAS, default_grid, effective_dim, format_alpha
from augscout.scout import BASELINE, budget


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--size", type=int, default=32)
    ap.add_argument("--runs", type=int, default=4)
    args = ap.parse_args()

    grid = default_grid(args.size)
    print(f"{len(DEFAULT_ALPHAS)} raw alphas, {len(grid)} distinct crop sizes at {args.size}px")
    for a in grid:
        print(f"  alpha {format_alpha(a):>3}%  ->  {effective_dim(args.size, a)}px")
    missing = sorted(set(range(min(grid.dims), args.size + 1)) - set(grid.dims))
    print("crop sizes never visited:", missing)
    b = budget(len(grid) * args.runs, BASELINE)
    print(f"jobs {b.jobs} vs baseline {BASELINE[0]} x {BASELINE[1]} = {b.baseline_jobs}; "
          f"reduction factor {b.reduction_factor:.4f}")


if __name__ == "__main__":
    main()
