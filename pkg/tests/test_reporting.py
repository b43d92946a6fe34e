import csv
import json
from decimal import Decimal

import pytest
from hypothesis import given
from hypothesis import strategies as st

from augscout.analysis import FixtureTable, PeakSummary, load_curve_fixture, load_fixtures
from augscout.errors import InvalidConfig, RenderFailure
from augscout.reporting import (
    CSV_COLUMNS,
    ReportConfig,
    default_subset,
    export_results,
    format_accuracy,
    import_results,
    parse_table,
    render_curve_plot,
    render_fixture_table,
    render_report,
    render_table,
    summarize,
    table_from_curves,
)
from augscout.scout import MEAN, AccuracyCurve, CurveSet

names = st.text("abcdefghijklmnopqrstuvwxyz_-", min_size=1, max_size=12).filter(lambda s: s not in (MEAN, "ideal"))
alphas = st.decimals(0, "99.5", places=1)
accs = st.floats(0, 1, allow_nan=False)


def toy_curves(k=3, n_alpha=4, dataset="toy"):
    grid = [0, 10, 20, 30, 40, 50, 60][:n_alpha]
    curves = [AccuracyCurve.from_values(f"class{i}", grid, [((i + 1) * (j + 3)) % 10 / 10 for j in range(n_alpha)],
                                        [0.01 * i] * n_alpha, [4] * n_alpha) for i in range(k)]
    curves.append(AccuracyCurve.from_values(MEAN, grid, [0.5] * n_alpha))
    return CurveSet(dataset, "linear_probe", "crop+flip", tuple(curves))


# -- tables -------------------------------------------------------------------------------------


def test_format_accuracy():
    assert format_accuracy(0.81) == "0.810"
    assert format_accuracy(0.125) == "0.125"
    assert format_accuracy(0.4098) == "0.4098"


def test_fixture_table_order():
    text = render_fixture_table(load_fixtures("without_flip"))
    rows = [ln for ln in text.splitlines() if ln.startswith(" ")]
    first = rows[0].split(" | ")[1].strip()
    assert first == "chair"
    cells = [c.strip() for ln in rows for c in ln.split(" | ")[1:]]
    assert cells[-3:] == ["otter", "mean", "ideal"]


@pytest.mark.parametrize("variant", ["without_flip", "with_flip"])
def test_fixture_table_round_trip(variant):
    t = load_fixtures(variant)
    back = parse_table(render_fixture_table(t))
    assert back.peaks == tuple(sorted(t.peaks, key=lambda p: -p.best_accuracy))
    assert (back.mean, back.ideal, back.variant) == (t.mean, t.ideal, t.variant)


@given(st.lists(st.tuples(names, alphas, accs), min_size=1, max_size=20, unique_by=lambda r: r[0]),
       alphas, accs, accs)
def test_render_parse_round_trip(rows, malpha, macc, ideal):
    peaks = sorted((PeakSummary(n, a, x) for n, a, x in rows), key=lambda p: -p.best_accuracy)
    text = render_table(peaks, PeakSummary(MEAN, malpha, macc), ideal, "v", "d", "a")
    back = parse_table(text)
    assert back == FixtureTable("v", tuple(peaks), PeakSummary(MEAN, malpha, macc), ideal, "d", "a")


def test_parse_rejects_foreign_text():
    with pytest.raises(InvalidConfig):
        parse_table("hello\n")


def test_table_from_curves_has_ideal():
    text = table_from_curves(toy_curves())
    assert "ideal" in text and "N/A" in text


# -- exports ------------------------------------------------------------------------------------


@pytest.mark.parametrize("fmt", ["csv", "json"])
def test_export_import_lossless(tmp_path, fmt):
    sets = [toy_curves(), toy_curves(dataset="other")]
    path = export_results(sets, tmp_path / f"r.{fmt}", fmt)
    assert import_results(path) == sets


@given(st.integers(1, 6), st.integers(1, 7))
def test_csv_row_count(tmp_path_factory, k, n_alpha):
    path = tmp_path_factory.mktemp("csv") / "r.csv"
    export_results(toy_curves(k, n_alpha), path, "csv")
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    assert tuple(rows[0]) == CSV_COLUMNS and len(rows) - 1 == (k + 1) * n_alpha


def test_csv_float_exact(tmp_path):
    c = CurveSet("d", "a", "p", (AccuracyCurve.from_values("x", ["2.5"], [1 / 3], [0.1 + 0.2]),))
    assert import_results(export_results(c, tmp_path / "r.csv", "csv")) == [c]


def test_export_bad_format(tmp_path):
    with pytest.raises(InvalidConfig):
        export_results(toy_curves(), tmp_path / "r.xml", "xml")


def test_json_export_has_summaries(tmp_path):
    path = export_results(toy_curves(), tmp_path / "r.json", "json")
    doc = json.loads(path.read_text())
    assert doc["summaries"][0]["ranking"] and "ideal_accuracy" in doc["summaries"][0]


def test_summarize_mean_only_fixture():
    s = summarize(load_curve_fixture("cifar10_mean"))
    assert s["ideal_accuracy"] is None and s["phases"]["boundaries"] == ["10", "70"]


# -- plots --------------------------------------------------------------------------------------


def test_plot_sidecar(tmp_path):
    png, side = render_curve_plot(toy_curves(), ReportConfig(tmp_path))
    assert png.stat().st_size > 0
    panel = json.loads(side.read_text())["panels"][0]
    assert [l["class_name"] for l in panel["lines"]] == ["class0", "class1", "class2", MEAN]
    assert len(panel["peak_lines"]) == 3


def test_plot_options(tmp_path):
    cfg = ReportConfig(tmp_path, ("class1",), include_mean=False, mark_peaks=False, stem="x")
    _, side = render_curve_plot([toy_curves(), toy_curves(dataset="b")], cfg)
    panels = json.loads(side.read_text())["panels"]
    assert len(panels) == 2 and panels[0]["lines"] == [{"class_name": "class1", "n_points": 4, "mean": False}]
    assert panels[0]["peak_lines"] == []


def test_plot_unknown_class(tmp_path):
    with pytest.raises(InvalidConfig):
        render_curve_plot(toy_curves(), ReportConfig(tmp_path, ("nope",)))


def test_plot_nothing(tmp_path):
    with pytest.raises(RenderFailure):
        render_curve_plot([], ReportConfig(tmp_path))


def test_default_subset_large_k():
    grid = [0, 10]
    curves = [AccuracyCurve.from_values(f"c{i:02d}", grid, [0.9, 0.9 - i / 100]) for i in range(30)]
    chosen = default_subset(CurveSet("d", "a", "p", tuple(curves)))
    assert chosen == [f"c{i:02d}" for i in range(24, 30)]
    assert len(default_subset(toy_curves(5))) == 5


def test_report_config_formats():
    with pytest.raises(InvalidConfig):
        ReportConfig("x", formats=("gif",))


def test_render_report_all_formats(tmp_path):
    paths = render_report(toy_curves(), ReportConfig(tmp_path))
    suffixes = sorted(p.name for p in paths)
    assert suffixes == ["report.csv", "report.json", "report.plot.json", "report.png", "report_0.table.txt"]
    assert Decimal(parse_table((tmp_path / "report_0.table.txt").read_text()).mean.best_alpha) == 0
