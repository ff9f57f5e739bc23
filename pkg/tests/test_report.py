import json
import os
import re
import xml.etree.ElementTree as ET

import pytest
from support import GOLDEN, TABLE1_TOP3, build_store, make_record, ts

from vulntrend.analytics import ReportSettings, month_report
from vulntrend.report import (
    PALETTE,
    SVG_HEIGHT,
    SVG_WIDTH,
    render_html,
    render_json,
    render_report,
    render_svg,
    report_to_dict,
)
from vulntrend.store import RecordStore
from vulntrend.taxonomy import VulnClass
from vulntrend.timeutil import Month

V = VulnClass
SVG_NS = "{http://www.w3.org/2000/svg}"
REGEN = os.environ.get("VULNTREND_REGEN_GOLDEN") == "1"


@pytest.fixture(scope="module")
def table_store(tmp_path_factory, table1):
    return build_store(tmp_path_factory.mktemp("t") / "s.jsonl", table1)


def test_json_schema(table_store):
    doc = json.loads(render_json(month_report(table_store, Month(2018, 2))))
    assert set(doc) == {"month", "total", "by_class", "top", "daily", "peaks"}
    assert doc["month"] == "2018-02" and doc["total"] == 100
    assert list(doc["by_class"]) == [c.value for c in VulnClass]
    assert doc["by_class"]["injection"] == {"count": 36, "percent": 36}
    assert doc["top"] == [
        {"class": "injection", "percent": 36},
        {"class": "xss", "percent": 16},
        {"class": "remote-code-execution", "percent": 9},
    ]
    assert list(doc["daily"]) == [f"{d:02d}" for d in range(1, 29)]
    assert doc["daily"]["15"]["injection"] == 20
    assert sum(sum(day.values()) for day in doc["daily"].values()) == 100
    peak = next(p for p in doc["peaks"] if p["date"] == "2018-02-15")
    assert (peak["class"], peak["count"]) == ("injection", 20)
    assert isinstance(peak["ratio"], float)


def test_palette_distinct_and_complete():
    assert set(PALETTE) == set(VulnClass)
    assert len(set(PALETTE.values())) == len(VulnClass)


def _svg_tree(text):
    return ET.fromstring(text.encode("utf-8"))


def test_svg_structure(table_store):
    report = month_report(table_store, Month(2018, 2))
    root = _svg_tree(render_svg(report))
    assert root.get("width") == str(SVG_WIDTH) and root.get("height") == str(SVG_HEIGHT)
    groups = root.findall(f"{SVG_NS}g[@class='day']")
    assert len(groups) == 28
    segments = [r for g in groups for r in g.findall(f"{SVG_NS}rect")]
    counts = [int(r.find(f"{SVG_NS}title").text.rsplit(": ", 1)[1]) for r in segments]
    assert sum(counts) == 100
    # no segment is drawn for a zero count, and each colour is the class colour
    fifteenth = groups[14].findall(f"{SVG_NS}rect")
    inj = [r for r in fifteenth if "Injection" in r.find(f"{SVG_NS}title").text]
    assert inj[0].get("fill") == PALETTE[V.INJECTION]
    legend = root.find(f"{SVG_NS}g[@class='legend']")
    assert len(legend.findall(f"{SVG_NS}rect")) == len(VulnClass)


def test_empty_month_renders(tmp_path):
    store = RecordStore(tmp_path / "s.jsonl")
    report = month_report(store, Month(2018, 11))
    root = _svg_tree(render_svg(report))
    assert len(root.findall(f"{SVG_NS}g[@class='day']")) == 30
    assert report_to_dict(report)["top"] == [] and report_to_dict(report)["peaks"] == []
    assert "No peaks detected" in render_html(report, store)


def test_html_self_contained_and_escaped(tmp_path):
    store = RecordStore(tmp_path / "s.jsonl")
    store.append(make_record(V.CROSS_SITE_SCRIPTING, ts(2018, 4, 2), title="<script>alert(1)</script> & co"))
    page = render_html(month_report(store, Month(2018, 4)), store)
    assert "<script>alert" not in page
    assert "&lt;script&gt;alert(1)&lt;/script&gt; &amp; co" in page
    assert not re.search(r'(src|href)\s*=\s*"(https?:)?//', page)
    assert "<link" not in page and "@import" not in page
    assert page.count("<svg") == 1


def test_html_last_n_lists(tmp_path):
    store = RecordStore(tmp_path / "s.jsonl")
    for i in range(55):
        store.append(make_record(V.INJECTION, ts(2018, 4, 1 + i % 30, i % 24)))
    page = render_html(month_report(store, Month(2018, 4)), store, last_n=50)
    assert "<summary>Injection (50)</summary>" in page
    assert "<summary>Cross-Site Scripting (0)</summary>" in page


def test_eight_months_eight_charts(tmp_path, table_store):
    months = sorted(TABLE1_TOP3)
    written = render_report(table_store, months, tmp_path / "out", ["svg"])
    assert [p.name for p in written] == [f"{m}.svg" for m in months]
    for p in written:
        _svg_tree(p.read_text(encoding="utf-8"))


def test_manifest_order_and_formats(tmp_path, table_store):
    written = render_report(table_store, ["2018-03", "2018-01"], tmp_path, iter(["html", "json"]))
    assert [p.name for p in written] == ["2018-03.json", "2018-03.html", "2018-01.json", "2018-01.html"]


@pytest.mark.parametrize("months, formats", [([], ["json"]), (["2018-01"], ["pdf"]), (["2018-13"], ["json"])])
def test_bad_arguments(tmp_path, table_store, months, formats):
    with pytest.raises(ValueError):
        render_report(table_store, months, tmp_path, formats)


def test_byte_identical_across_runs(tmp_path, table1):
    a = render_report(build_store(tmp_path / "a.jsonl", table1), sorted(TABLE1_TOP3), tmp_path / "a")
    b = render_report(build_store(tmp_path / "b.jsonl", table1), sorted(TABLE1_TOP3), tmp_path / "b")
    assert [p.name for p in a] == [p.name for p in b]
    for x, y in zip(a, b):
        assert x.read_bytes() == y.read_bytes(), x.name


def test_settings_flow_through(table_store):
    report = month_report(table_store, Month(2018, 2), ReportSettings(k=5, peak_factor=100.0))
    doc = report_to_dict(report)
    assert len(doc["top"]) == 5
    assert doc["peaks"] == []


@pytest.mark.parametrize("fmt", ["json", "svg", "html"])
def test_golden_february(tmp_path, table_store, fmt):
    (path,) = render_report(table_store, ["2018-02"], tmp_path, [fmt])
    golden = GOLDEN / path.name
    if REGEN:
        golden.parent.mkdir(exist_ok=True)
        golden.write_bytes(path.read_bytes())
    assert path.read_bytes() == golden.read_bytes()
