"""Curve plots with structured sidecars, best-alpha tables, and CSV/JSON result exports."""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

from .analysis import (
    FixtureTable,
    PeakSummary,
    dropoffs,
    ideal_accuracy,
    peak,
    phases,
    robustness_ranking,
)
from .augmentations import format_alpha, to_alpha
from .errors import InvalidConfig, RenderFailure, TooFewPoints
from .scout import MEAN, AccuracyCurve, CurvePoint, CurveSet
from .trainer.core import SCHEMA

FORMATS = ("plot", "table", "csv", "json")
CSV_COLUMNS = ("dataset", "arch", "policy", "class", "alpha_percent", "mean_acc", "std_acc", "n_runs")
SUBSET_THRESHOLD = 20
SUBSET_SIZE = 6


@dataclass(frozen=True)
class ReportConfig:
    output_dir: Path
    class_subset: tuple[str, ...] | None = None
    formats: tuple[str, ...] = FORMATS
    include_mean: bool = True
    mark_peaks: bool = True
    stem: str = "report"

    def __post_init__(self):
        object.__setattr__(self, "output_dir", Path(self.output_dir))
        bad = set(self.formats) - set(FORMATS)
        if bad:
            raise InvalidConfig(f"unknown formats {sorted(bad)}; expected a subset of {FORMATS}")


def _as_list(curve_sets) -> list[CurveSet]:
    return [curve_sets] if isinstance(curve_sets, CurveSet) else list(curve_sets)


def spread(curve: AccuracyCurve) -> float:
    return max(curve.means) - min(curve.means)


def default_subset(curves: CurveSet, size: int = SUBSET_SIZE) -> list[str]:
    """All classes for K <= 20, else the ``size`` classes whose accuracy varies most with alpha."""
    classes = curves.class_curves
    if len(classes) <= SUBSET_THRESHOLD:
        return [c.class_name for c in classes]
    ranked = sorted(classes, key=lambda c: (-spread(c), c.class_name))
    keep = {c.class_name for c in ranked[:size]}
    return [c.class_name for c in classes if c.class_name in keep]


def _panel_title(cs: CurveSet) -> str:
    return f"{cs.dataset_id} / {cs.architecture_id} / {cs.policy}"


# -- plots -----------------------------------------------------------------------------


def render_curve_plot(curve_sets, config: ReportConfig) -> tuple[Path, Path]:
    """One panel per curve set; returns (png path, sidecar json path).

    The sidecar lists every drawn class line and dotted peak marker so the
    figure can be checked without comparing pixels.
    """
    sets = _as_list(curve_sets)
    if not sets or any(not cs.curves for cs in sets):
        raise RenderFailure("nothing to plot")
    try:
        config.output_dir.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise RenderFailure(f"cannot create {config.output_dir}: {exc}") from exc

    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, axes = plt.subplots(1, len(sets), figsize=(6.5 * len(sets), 4.5), squeeze=False)
    sidecar = {"schema": SCHEMA, "kind": "plot_sidecar", "panels": []}
    try:
        for ax, cs in zip(axes[0], sets):
            names = list(config.class_subset) if config.class_subset is not None else default_subset(cs)
            missing = [n for n in names if n not in cs or n == MEAN]
            if missing:
                raise InvalidConfig(f"class_subset names not in {_panel_title(cs)}: {missing}")
            panel = {"title": _panel_title(cs), "lines": [], "peak_lines": []}
            for name in names:
                curve = cs[name]
                xs = [float(a) for a in curve.alphas]
                (line,) = ax.plot(xs, curve.means, marker=".", linewidth=1.2, label=name)
                panel["lines"].append({"class_name": name, "n_points": len(curve), "mean": False})
                if config.mark_peaks:
                    p = peak(curve)
                    ax.axvline(float(p.best_alpha), linestyle=":", color=line.get_color(), linewidth=1)
                    panel["peak_lines"].append({"class_name": name, "alpha_percent": format_alpha(p.best_alpha),
                                                "accuracy": p.best_accuracy})
            if config.include_mean and MEAN in cs:
                curve = cs.mean
                ax.plot([float(a) for a in curve.alphas], curve.means, color="black", linewidth=2.5,
                        linestyle="--", label="mean")
                panel["lines"].append({"class_name": MEAN, "n_points": len(curve), "mean": True})
            ax.set_xlabel("random crop alpha (%)")
            ax.set_ylabel("test accuracy")
            ax.set_ylim(0.0, 1.0)
            ax.set_title(panel["title"], fontsize=9)
            ax.legend(fontsize=6, ncol=2, loc="lower left")
            sidecar["panels"].append(panel)
        png = config.output_dir / f"{config.stem}.png"
        fig.tight_layout()
        fig.savefig(png, dpi=110)
    except InvalidConfig:
        raise
    except Exception as exc:
        raise RenderFailure(f"plot rendering failed: {exc}") from exc
    finally:
        plt.close(fig)
    side = config.output_dir / f"{config.stem}.plot.json"
    side.write_text(json.dumps(sidecar, indent=1))
    return png, side


# -- tables ----------------------------------------------------------------------------

ROW_CLASS, ROW_ALPHA, ROW_ACC = "", "Random Crop alpha", "Test Accuracy"
GROUP = 6


def format_accuracy(x: float) -> str:
    """Three decimals, or the shortest exact form when three would lose information."""
    s = f"{x:.3f}"
    return s if float(s) == x else repr(float(x))


def render_table(
    peaks: Sequence[PeakSummary],
    mean_row: PeakSummary,
    ideal: float,
    variant: str = "live",
    dataset_id: str = "unknown",
    architecture_id: str = "unknown",
) -> str:
    """Best-alpha table: classes by accuracy (descending, stable), then ``mean`` and ``ideal``."""
    if not peaks:
        raise InvalidConfig("render_table needs at least one class")
    ordered = sorted(peaks, key=lambda p: -p.best_accuracy)
    cells = [(p.class_name, format_alpha(p.best_alpha), format_accuracy(p.best_accuracy)) for p in ordered]
    cells.append((MEAN, format_alpha(mean_row.best_alpha), format_accuracy(mean_row.best_accuracy)))
    cells.append(("ideal", "N/A", format_accuracy(ideal)))
    head = f"# {SCHEMA} best-alpha table | variant={variant} | dataset={dataset_id} | arch={architecture_id}"
    label_w = max(len(ROW_ALPHA), len(ROW_ACC))
    blocks = [head]
    for start in range(0, len(cells), GROUP):
        chunk = cells[start: start + GROUP]
        widths = [max(len(c) for c in col) for col in chunk]
        rows = []
        for k, label in enumerate((ROW_CLASS, ROW_ALPHA, ROW_ACC)):
            parts = [label.ljust(label_w)] + [col[k].ljust(w) for col, w in zip(chunk, widths)]
            rows.append(" | ".join(parts).rstrip())
        blocks.append("\n".join(rows))
    return "\n\n".join(blocks) + "\n"


def render_fixture_table(table: FixtureTable) -> str:
    return render_table(table.peaks, table.mean, table.ideal, table.variant, table.dataset_id,
                        table.architecture_id)


def parse_table(text: str) -> FixtureTable:
    """Inverse of :func:`render_table`."""
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines or not lines[0].startswith(f"# {SCHEMA}"):
        raise InvalidConfig("not an augscout table")
    meta = dict(part.strip().split("=", 1) for part in lines[0].split("|")[1:])
    body = lines[1:]
    if len(body) % 3:
        raise InvalidConfig("table body is not made of 3-line groups")
    cells = []
    for i in range(0, len(body), 3):
        names, alphas, accs = ([c.strip() for c in body[i + k].split(" | ")[1:]] for k in range(3))
        if not (body[i + 1].startswith(ROW_ALPHA) and body[i + 2].startswith(ROW_ACC)):
            raise InvalidConfig(f"malformed group at line {i + 2}")
        cells += zip(names, alphas, accs)
    *classes, (mname, malpha, macc), (iname, _, iacc) = cells
    if mname != MEAN or iname != "ideal":
        raise InvalidConfig("table must end with mean and ideal rows")
    peaks = tuple(PeakSummary(n, to_alpha(a), float(x)) for n, a, x in classes)
    return FixtureTable(meta["variant"], peaks, PeakSummary(MEAN, to_alpha(malpha), float(macc)), float(iacc),
                        meta["dataset"], meta["arch"])


def table_from_curves(curves: CurveSet, variant: str = "live") -> str:
    peaks = [peak(c) for c in curves.class_curves]
    return render_table(peaks, peak(curves.mean), ideal_accuracy(peaks), variant, curves.dataset_id,
                        curves.architecture_id)


# -- exports ---------------------------------------------------------------------------


def summarize(curves: CurveSet, tau: float = 0.5, window: int = 2) -> dict:
    """Peaks, drop-offs, ranking, phases of the mean curve and ideal accuracy as plain data."""
    drops = dropoffs(curves, tau, window)
    out = {
        "peaks": [peak(c).to_dict() for c in curves.curves],
        "dropoffs": [{"class_name": d.class_name,
                      "threshold_alpha": None if d.threshold_alpha is None else format_alpha(d.threshold_alpha),
                      "tau": d.tau, "window": d.window} for d in drops],
        "ranking": robustness_ranking(drops),
        "ideal_accuracy": ideal_accuracy(curves) if curves.class_curves else None,
    }
    if MEAN in curves:
        out["mean_peak"] = peak(curves.mean).to_dict()
        try:
            ph = phases(curves.mean)
            out["phases"] = {"boundaries": [format_alpha(b) for b in ph.boundaries], "labels": list(ph.labels),
                             "level": ph.level, "epsilon": ph.epsilon}
        except TooFewPoints:
            out["phases"] = None
    return out


def export_results(curve_sets, path, fmt: str, summaries: bool = True) -> Path:
    """Write curves as ``csv`` (one row per class x alpha) or ``json`` (full document)."""
    sets = _as_list(curve_sets)
    path = Path(path)
    if fmt == "csv":
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(CSV_COLUMNS)
            for cs in sets:
                for curve in cs.curves:
                    for pt in curve.points:
                        w.writerow([cs.dataset_id, cs.architecture_id, cs.policy, curve.class_name,
                                    format_alpha(pt.alpha), repr(pt.mean_acc), repr(pt.std), pt.n_runs])
    elif fmt == "json":
        doc = {"schema": SCHEMA, "kind": "results", "curve_sets": [cs.to_dict() for cs in sets]}
        if summaries:
            doc["summaries"] = [summarize(cs) for cs in sets]
        path.write_text(json.dumps(doc, indent=1))
    else:
        raise InvalidConfig(f"unknown export format {fmt!r}; expected csv or json")
    return path


def import_results(path) -> list[CurveSet]:
    path = Path(path)
    if path.suffix == ".json":
        doc = json.loads(path.read_text())
        if doc.get("schema") != SCHEMA:
            raise InvalidConfig(f"{path} is not an {SCHEMA} document")
        if doc.get("kind") == "curves":
            return [CurveSet.from_dict(doc)]
        return [CurveSet.from_dict(d) for d in doc["curve_sets"]]
    groups: dict[tuple, dict[str, list[CurvePoint]]] = {}
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != CSV_COLUMNS:
            raise InvalidConfig(f"unexpected CSV columns {reader.fieldnames}")
        for row in reader:
            key = (row["dataset"], row["arch"], row["policy"])
            pts = groups.setdefault(key, {}).setdefault(row["class"], [])
            pts.append(CurvePoint(to_alpha(row["alpha_percent"]), float(row["mean_acc"]),
                                  float(row["std_acc"]), int(row["n_runs"])))
    return [
        CurveSet(d, a, p, tuple(AccuracyCurve(name, tuple(pts)) for name, pts in classes.items()))
        for (d, a, p), classes in groups.items()
    ]


def render_report(curve_sets, config: ReportConfig) -> list[Path]:
    """Emit every requested format into ``config.output_dir``."""
    sets = _as_list(curve_sets)
    config.output_dir.mkdir(parents=True, exist_ok=True)
    out = []
    if "plot" in config.formats:
        out += list(render_curve_plot(sets, config))
    if "table" in config.formats:
        for i, cs in enumerate(sets):
            p = config.output_dir / f"{config.stem}_{i}.table.txt"
            p.write_text(table_from_curves(cs, cs.policy))
            out.append(p)
    if "csv" in config.formats:
        out.append(export_results(sets, config.output_dir / f"{config.stem}.csv", "csv"))
    if "json" in config.formats:
        out.append(export_results(sets, config.output_dir / f"{config.stem}.json", "json"))
    return out
