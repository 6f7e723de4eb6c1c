import json
from pathlib import Path
import xml.etree.ElementTree as ET

import jsonschema
import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from demix.cones import sdim_l1_formula
from demix.errors import InvalidParameterError
from demix.experiments import (
    CONTOUR_COLORS,
    CSV_HEADER,
    CellResult,
    PhaseGrid,
    PhaseGridConfig,
    contour_agreement,
    distance_to_curve,
    extract_contours,
    predicted_curve,
    render_heatmap,
    run_and_report,
    run_cell,
    run_phase_grid,
)

CONFIGS = Path(__file__).resolve().parent.parent / "configs"
SYMMETRIC_K_D60 = 4.010753286116356  # 2 sdim(k*) = 30 by bisection on the quadrature oracle


def _tiny(**kw):
    base = dict(d=12, experiment="SPARSE_SPARSE_SIGN", k1_values=(1, 3), k2_values=(1, 3), m_values=(12,), trials_per_cell=1, seed=5)
    base.update(kw)
    return PhaseGridConfig(**base)


# ------------------------------------------------------------------ config


def test_config_from_dict_ranges():
    cfg = PhaseGridConfig.from_dict(
        {"d": 60, "experiment": "UNDERSAMPLED_SPARSE_SPARSE", "k1_range": {"start": 1, "stop": 12},
         "k2_range": [1, 2, 5], "m_values": [15, 30], "trials_per_cell": 3}
    )
    assert cfg.k1_values == tuple(range(1, 13)) and cfg.k2_values == (1, 2, 5)
    assert cfg.trials_per_cell == 3 and cfg.seed == 20130813


def test_schema_rejects_unknown_keys():
    with pytest.raises(jsonschema.ValidationError):
        PhaseGridConfig.from_dict({"d": 10, "experiment": "SPARSE_SPARSE_SIGN", "k1_range": [1], "k2_range": [1], "colour": "red"})
    with pytest.raises(jsonschema.ValidationError):
        PhaseGridConfig.from_dict({"d": 10, "experiment": "SPARSE_SPARSE_SIGN", "k1_range": [1], "k2_range": [1], "solver": {"speed": 3}})


def test_config_validation():
    with pytest.raises(InvalidParameterError):
        _tiny(experiment="OTHER")
    with pytest.raises(InvalidParameterError):
        _tiny(m_values=(6,))
    with pytest.raises(InvalidParameterError):
        _tiny(k1_values=(13,))
    with pytest.raises(InvalidParameterError):
        _tiny(trials_per_cell=0)


@pytest.mark.parametrize("name", ["left_panel_reduced", "right_panel_reduced", "left_panel_full", "right_panel_full"])
def test_shipped_configs_load(name):
    cfg = PhaseGridConfig.from_json_file(CONFIGS / f"{name}.json")
    assert cfg.name == name
    assert PhaseGridConfig.from_dict(json.loads((CONFIGS / f"{name}.json").read_text())) == cfg


# -------------------------------------------------------------------- grid


def test_tiny_grid_reproducible_csv(tmp_path):
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    grid = run_phase_grid(_tiny(), a)
    run_phase_grid(_tiny(), b)
    assert len(grid.cells) == 4
    assert a.read_bytes() == b.read_bytes()
    lines = a.read_text().splitlines()
    assert lines[0] == ",".join(CSV_HEADER) == "experiment,d,m,k1,k2,trials,successes,nonconverged,success_rate"
    assert len(lines) == 5


def test_sparsest_cell_always_succeeds():
    cfg = PhaseGridConfig(d=60, experiment="SPARSE_SPARSE_SIGN", k1_values=(1,), k2_values=(1,), m_values=(60,))
    cell = run_cell(cfg, (1, 1, 60))
    assert cell.trials == 25 and cell.successes == 25


def test_threads_do_not_change_csv(tmp_path):
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    run_phase_grid(_tiny(), a)
    run_phase_grid(_tiny(), b, threads=2)
    assert a.read_bytes() == b.read_bytes()


def test_cell_independence():
    cfg = _tiny(trials_per_cell=2)
    grid = run_phase_grid(cfg)
    for key, cell in grid.cells.items():
        assert run_cell(cfg, key) == cell


def test_resume_matches_fresh(tmp_path):
    fresh, partial = tmp_path / "fresh.csv", tmp_path / "partial.csv"
    run_phase_grid(_tiny(), fresh)
    lines = fresh.read_text().splitlines()
    partial.write_text("\n".join(lines[:3]) + "\n")
    seen = []
    run_phase_grid(_tiny(), partial, resume=True, progress=lambda k, c: seen.append(k))
    assert len(seen) == 2
    assert partial.read_bytes() == fresh.read_bytes()


def test_resume_rejects_foreign_csv(tmp_path):
    path = tmp_path / "x.csv"
    path.write_text("a,b\n1,2\n")
    with pytest.raises(InvalidParameterError):
        run_phase_grid(_tiny(), path, resume=True)


def test_field_layout():
    cfg = _tiny()
    cells = {(1, 1, 12): CellResult(4, 4), (3, 1, 12): CellResult(4, 3), (1, 3, 12): CellResult(4, 1), (3, 3, 12): CellResult(4, 0)}
    f = PhaseGrid(cfg, cells).field(12)
    assert np.array_equal(f, [[1.0, 0.75], [0.25, 0.0]])  # rows k2, columns k1


# ------------------------------------------------------------------- curve


def _left60():
    return PhaseGridConfig(d=60, experiment="SPARSE_SPARSE_SIGN", k1_values=range(1, 19), k2_values=range(1, 19), m_values=(60,))


def test_symmetric_point_of_left_curve():
    curve = predicted_curve(_left60(), 60, samples=401)
    pts = np.vstack(curve)
    i = np.argmin(np.abs(pts[:, 0] - pts[:, 1]))
    assert pts[i, 0] == pytest.approx(SYMMETRIC_K_D60, abs=0.01)
    assert 2 * sdim_l1_formula(SYMMETRIC_K_D60, 60).value == pytest.approx(30, abs=1e-6)


def test_curve_symmetric_under_swap():
    curve = predicted_curve(_left60(), 60, samples=400)
    pts = np.vstack(curve)
    for p in pts[::7]:
        if pts[:, 0].min() <= p[1] <= pts[:, 0].max():
            assert distance_to_curve(p[::-1], curve) <= 0.05


def test_curve_points_solve_level_equation():
    cfg = PhaseGridConfig(d=60, experiment="UNDERSAMPLED_SPARSE_SPARSE", k1_values=range(1, 13), k2_values=range(1, 13), m_values=(30,))
    for k1, k2 in np.vstack(predicted_curve(cfg, 30, samples=25)):
        total = sdim_l1_formula(k1, 60).value + sdim_l1_formula(k2, 60).value
        assert total == pytest.approx(30, abs=1e-6)


def test_undersampled_full_measurements_curve_exits():
    cfg = PhaseGridConfig(d=40, experiment="UNDERSAMPLED_SPARSE_SPARSE", k1_values=range(0, 11), k2_values=range(0, 11), m_values=(40,))
    curve = predicted_curve(cfg, 40, samples=11)
    pts = np.vstack(curve)
    # k1 = 0 leaves the whole budget to k2, which needs k2 = d: the curve leaves the plot there
    first = pts[pts[:, 0] == 0.0]
    assert len(first) == 0 or first[0, 1] >= 40 - 1e-6
    assert all(sdim_l1_formula(k, 40).value < 40 for k in range(0, 40))
    assert pts[:, 1].min() < max(cfg.k2_values)  # it re-enters further right


# ---------------------------------------------------------------- contours


def test_constant_field_has_no_contours():
    out = extract_contours(np.ones((4, 5)), range(5), range(4))
    assert all(v == [] for v in out.values()) and set(out) == {0.95, 0.5, 0.05}


def test_step_field_contour_is_midpoint_row():
    out = extract_contours(np.array([[1.0, 1.0], [0.0, 0.0]]), [1, 2], [10, 20], levels=(0.5,))
    (line,) = out[0.5]
    assert np.allclose(line[:, 1], 15.0)
    assert sorted(line[:, 0]) == [1.0, 2.0]


def test_contour_level_validation():
    with pytest.raises(InvalidParameterError):
        extract_contours(np.eye(2), [0, 1], [0, 1], levels=(1.0,))


@given(st.floats(0.05, 0.95))
def test_contour_tracks_linear_ramp(level):
    field = np.tile(np.linspace(1, 0, 11)[:, None], (1, 4))
    (line,) = extract_contours(field, range(4), range(11), levels=(level,))[level]
    assert np.allclose(line[:, 1], 10 * (1 - level), atol=1e-9)


def test_agreement_measure():
    curve = [np.array([[0.0, 0.0], [10.0, 0.0]])]
    assert contour_agreement([np.array([[1.0, 1.0], [5.0, 3.0]])], curve) == 0.5
    assert contour_agreement([], curve) == 0.0


# --------------------------------------------------------------------- SVG


def test_svg_single_white_cell():
    cfg = _tiny(k1_values=(1,), k2_values=(1,))
    grid = PhaseGrid(cfg, {(1, 1, 12): CellResult(1, 1)})
    root = ET.fromstring(render_heatmap(grid, 12, {}, []))
    rects = root.findall(".//{http://www.w3.org/2000/svg}rect")
    assert len(rects) == 1 and rects[0].get("fill") == "#ffffff"
    labels = [t.text for t in root.iter("{http://www.w3.org/2000/svg}text")]
    assert "k1" in labels and "k2" in labels


def test_svg_grayscale_monotone():
    cfg = _tiny(k1_values=tuple(range(1, 6)), k2_values=(1,))
    grid = PhaseGrid(cfg, {(k, 1, 12): CellResult(4, 5 - k if k > 1 else 4) for k in range(1, 6)})
    root = ET.fromstring(render_heatmap(grid, 12, {}, []))
    rects = sorted(root.findall(".//{http://www.w3.org/2000/svg}rect"), key=lambda r: float(r.get("x")))
    shades = [int(r.get("fill")[1:3], 16) for r in rects]
    assert shades == sorted(shades, reverse=True) and shades[0] == 255 and shades[-1] == 0


def test_svg_contour_colours():
    field = np.array([[1.0, 1.0], [0.0, 0.0]])
    cfg = _tiny()
    grid = PhaseGrid(cfg, {(k1, k2, 12): CellResult(1, int(k2 == 1)) for k1 in (1, 3) for k2 in (1, 3)})
    contours = extract_contours(field, cfg.k1_values, cfg.k2_values)
    root = ET.fromstring(render_heatmap(grid, 12, contours, [np.array([[1.0, 1.0], [3.0, 3.0]])]))
    strokes = {p.get("stroke") for p in root.iter("{http://www.w3.org/2000/svg}polyline")}
    assert set(CONTOUR_COLORS.values()) | {"#ffff00"} == strokes
    assert CONTOUR_COLORS == {0.95: "#8b4513", 0.5: "#ff0000", 0.05: "#ffc0cb"}


def test_run_and_report_writes_outputs(tmp_path):
    cfg = _tiny(name="tiny")
    summary = run_and_report(cfg, tmp_path)
    assert {p.name for p in tmp_path.iterdir()} == {"tiny.csv", "tiny_m12.svg", "tiny.json"}
    data = json.loads((tmp_path / "tiny.json").read_text())
    assert data["seed"] == 5 and data["wall_clock_seconds"] > 0 and "12" in data["per_m"]
    svg_a = (tmp_path / "tiny_m12.svg").read_bytes()
    run_and_report(cfg, tmp_path / "again")
    assert (tmp_path / "again" / "tiny_m12.svg").read_bytes() == svg_a
    assert summary["config"]["d"] == 12
