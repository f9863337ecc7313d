import json

import numpy as np
import pytest

from cmakit.grid import GridSpec, build_domain
from cmakit.pluripotential import CapacityTrend, SublevelStats
from cmakit.reports import PLOT_COLUMNS, dumps, emit_plot_data, format_number, jsonable, plot_csv, write_json
from cmakit.singular import PoleSpec, verify_asymptotics

from conftest import r2


def sfamily_record(s):
    return {"s": s, "t": 1.0, "sup_phi": 0.1 * s, "inf_phi": -0.1 * s, "residual": 1e-10,
            "iterations": 3, "wall_ms": 0.0}


def test_header_only_for_empty_history():
    assert plot_csv([], "sfamily") == "s,t,sup_phi,inf_phi,residual,iters\n"


def test_sfamily_rows(tmp_path):
    path = emit_plot_data([sfamily_record(s) for s in (0.1, 0.01, 0.001)], "sfamily", tmp_path / "a.csv")
    lines = path.read_text().splitlines()
    assert lines[0].split(",") == list(PLOT_COLUMNS["sfamily"])
    assert len(lines) == 4
    assert lines[1].split(",")[-1] == "3"


def test_annulus_row_count():
    mask = build_domain(GridSpec(1, 65, 1.0))
    spec = PoleSpec(poles=[[0]], weights=[0.5], psi=r2, log_density=lambda z, d: 0 * r2(z))
    fam = {d: mask.evaluate(lambda z, d=d: spec.ansatz(z, d) + r2(z)) for d in spec.deltas}
    rep = verify_asymptotics(fam, spec, mask)
    text = plot_csv(rep, "annulus")
    assert len(text.splitlines()) == 1 + len(spec.deltas) * len(rep.annuli)


def test_sublevel_and_trend_kinds():
    st = SublevelStats(levels=np.array([0.5, 1.0]), sets=[[1, 2], []], a=np.array([1.0, 0.0]),
                       b=np.array([0.5, 0.0]), F=np.array([1.0, 0.0]), skipped=[], n=1, h=0.1,
                       cell_volume=0.01, inf_phi=-0.7)
    assert plot_csv(st, "sublevel").splitlines()[1] == "0.5,2,1,0.5,1"
    tr = CapacityTrend(s_values=[0.5, 0.1], capacities=[2.0, 1.5], limit=1.4, monotone=True, gap=0.07)
    assert plot_csv(tr, "capacity_trend").splitlines()[1:] == ["0.5,2", "0.10000000000000001,1.5"]


def test_unknown_kind():
    with pytest.raises(ValueError, match="unknown plot kind"):
        plot_csv([], "histogram")


def test_format_number():
    assert format_number(True) == "true"
    assert format_number(np.int64(7)) == "7"
    assert format_number(1 / 3) == "0.33333333333333331"
    assert float(format_number(np.pi)) == np.pi
    assert format_number(float("inf")) == "inf" and format_number(float("nan")) == "nan"


def test_byte_identical(tmp_path):
    recs = [sfamily_record(s) for s in (0.1, 0.01)]
    a = emit_plot_data(recs, "sfamily", tmp_path / "a.csv").read_bytes()
    b = emit_plot_data([dict(r) for r in recs], "sfamily", tmp_path / "b.csv").read_bytes()
    assert a == b
    write_json(tmp_path / "x.json", {"b": np.float64(1.5), "a": np.arange(3)})
    write_json(tmp_path / "y.json", {"a": [0, 1, 2], "b": 1.5})
    assert (tmp_path / "x.json").read_bytes() == (tmp_path / "y.json").read_bytes()


def test_jsonable():
    out = jsonable({"x": np.float32(0.5), "y": np.bool_(True), "z": float("inf"), "w": (1, 2)})
    assert out == {"x": 0.5, "y": True, "z": "inf", "w": [1, 2]}
    assert json.loads(dumps({"k": np.array([[1.0]])})) == {"k": [[1.0]]}
