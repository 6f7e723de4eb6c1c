"""Phase-transition grids: run, contour, compare with the predicted curve, and draw.

Two experiment families are supported.  ``SPARSE_SPARSE_SIGN`` demixes two
sparse vectors and a sign vector from a complete, unmeasured superposition
(``A = I``, ``m = d``).  ``UNDERSAMPLED_SPARSE_SPARSE`` demixes two sparse
vectors from ``m`` Gaussian measurements.  Every trial draws its instance
from the seed stream ``root.child(m, k1, k2, trial)``, so any cell can be
rerun in isolation and reproduces its counts.
"""

from __future__ import annotations

import csv
import io
import json
import math
import os
import time
import xml.etree.ElementTree as ET
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from importlib import resources

import jsonschema
import numpy as np
import scipy.optimize
from skimage import measure

from .cones import L1, LINF, sdim_l1_formula
from .errors import DemixError, InvalidParameterError
from .rng import SeedStream
from .solver import SolverConfig, check_success, solve_constrained, synthesize_problem

EXPERIMENTS = ("SPARSE_SPARSE_SIGN", "UNDERSAMPLED_SPARSE_SPARSE")
CSV_HEADER = ["experiment", "d", "m", "k1", "k2", "trials", "successes", "nonconverged", "success_rate"]
CONTOUR_LEVELS = (0.95, 0.5, 0.05)
CONTOUR_COLORS = {0.95: "#8b4513", 0.5: "#ff0000", 0.05: "#ffc0cb"}
CURVE_COLOR = "#ffff00"
DEFAULT_SEED = 20130813


def load_schema(name: str = "phase_grid.schema.json") -> dict:
    return json.loads(resources.files("demix").joinpath("schemas").joinpath(name).read_text())


@dataclass(frozen=True)
class PhaseGridConfig:
    d: int
    experiment: str
    k1_values: tuple
    k2_values: tuple
    m_values: tuple
    trials_per_cell: int = 25
    eta: float = 0.01
    seed: int = DEFAULT_SEED
    solver: SolverConfig = field(default_factory=SolverConfig)
    name: str = ""

    def __post_init__(self):
        if self.experiment not in EXPERIMENTS:
            raise InvalidParameterError(f"unknown experiment {self.experiment!r}")
        for label in ("k1_values", "k2_values", "m_values"):
            vals = tuple(int(v) for v in getattr(self, label))
            if not vals:
                raise InvalidParameterError(f"{label} must be nonempty")
            object.__setattr__(self, label, vals)
        if self.d < 1:
            raise InvalidParameterError("d must be positive")
        if any(not 0 <= k <= self.d for k in self.k1_values + self.k2_values):
            raise InvalidParameterError("sparsity levels must lie in [0, d]")
        if any(not 1 <= m <= self.d for m in self.m_values):
            raise InvalidParameterError("measurement counts must lie in [1, d]")
        if self.experiment == "SPARSE_SPARSE_SIGN" and self.m_values != (self.d,):
            raise InvalidParameterError("SPARSE_SPARSE_SIGN uses complete observations: m_values must be [d]")
        if self.trials_per_cell < 1:
            raise InvalidParameterError("trials_per_cell must be >= 1")
        if not 0 < self.eta < 1:
            raise InvalidParameterError("eta must lie in (0, 1)")

    @classmethod
    def from_dict(cls, obj: dict) -> "PhaseGridConfig":
        """Validate against the published schema (unknown keys are rejected) and build."""
        jsonschema.validate(obj, load_schema())

        def expand(r):
            if isinstance(r, list):
                return tuple(r)
            return tuple(range(r["start"], r["stop"] + 1, r.get("step", 1)))

        solver = SolverConfig(**obj.get("solver", {}))
        return cls(
            d=obj["d"],
            experiment=obj["experiment"],
            k1_values=expand(obj["k1_range"]),
            k2_values=expand(obj["k2_range"]),
            m_values=tuple(obj.get("m_values", [obj["d"]])),
            trials_per_cell=obj.get("trials_per_cell", 25),
            eta=obj.get("eta", 0.01),
            seed=obj.get("seed", DEFAULT_SEED),
            solver=solver,
            name=obj.get("name", ""),
        )

    @classmethod
    def from_json_file(cls, path) -> "PhaseGridConfig":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def to_dict(self) -> dict:
        out = asdict(self)
        out["solver"] = asdict(self.solver)
        for key in ("k1_values", "k2_values", "m_values"):
            out[key] = list(out[key])
        return out


@dataclass
class CellResult:
    trials: int = 0
    successes: int = 0
    nonconverged: int = 0
    errors: int = 0

    @property
    def success_rate(self) -> float:
        return self.successes / self.trials if self.trials else 0.0


@dataclass
class PhaseGrid:
    config: PhaseGridConfig
    cells: dict  # (k1, k2, m) -> CellResult

    def field(self, m: int) -> np.ndarray:
        """Success rates with rows indexed by k2 and columns by k1."""
        cfg = self.config
        out = np.full((len(cfg.k2_values), len(cfg.k1_values)), np.nan)
        for r, k2 in enumerate(cfg.k2_values):
            for c, k1 in enumerate(cfg.k1_values):
                cell = self.cells.get((k1, k2, m))
                if cell is not None:
                    out[r, c] = cell.success_rate
        return out

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(CSV_HEADER)
        for key in cell_order(self.config):
            if key in self.cells:
                writer.writerow(_csv_row(self.config, key, self.cells[key]))
        return buf.getvalue()


def cell_order(config: PhaseGridConfig):
    return [(k1, k2, m) for m in config.m_values for k2 in config.k2_values for k1 in config.k1_values]


def _csv_row(config, key, cell):
    k1, k2, m = key
    return [config.experiment, config.d, m, k1, k2, cell.trials, cell.successes, cell.nonconverged, f"{cell.success_rate:.6f}"]


def trial_stream(config: PhaseGridConfig, k1: int, k2: int, m: int, trial: int) -> SeedStream:
    return SeedStream(config.seed).child(m, k1, k2, trial)


def run_trial(config: PhaseGridConfig, k1: int, k2: int, m: int, trial: int) -> tuple[bool, bool]:
    """One instance of the protocol; returns ``(success, converged)``."""
    stream = trial_stream(config, k1, k2, m, trial)
    if config.experiment == "SPARSE_SPARSE_SIGN":
        problem = synthesize_problem(config.d, m, 3, [L1, L1, LINF], [k1, k2, None], 0.0, stream, identity_measurement=True)
    else:
        problem = synthesize_problem(config.d, m, 2, [L1, L1], [k1, k2], 0.0, stream)
    sol = solve_constrained(problem, config.solver)
    return check_success(sol, problem, config.solver.success_tolerance), sol.converged


def run_cell(config: PhaseGridConfig, key) -> CellResult:
    k1, k2, m = key
    cell = CellResult()
    for t in range(config.trials_per_cell):
        cell.trials += 1
        try:
            ok, conv = run_trial(config, k1, k2, m, t)
        except DemixError:
            cell.errors += 1
            continue
        cell.successes += ok
        cell.nonconverged += not conv
    return cell


def _run_cell_packed(args):
    return run_cell(*args)


def _read_existing(path, config):
    done = {}
    if path is None or not os.path.exists(path):
        return done
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != CSV_HEADER:
            raise InvalidParameterError(f"{path} does not carry the phase-grid CSV header")
        for row in reader:
            if row["experiment"] != config.experiment or int(row["d"]) != config.d:
                raise InvalidParameterError(f"{path} belongs to a different experiment")
            key = (int(row["k1"]), int(row["k2"]), int(row["m"]))
            done[key] = CellResult(int(row["trials"]), int(row["successes"]), int(row["nonconverged"]))
    return done


def run_phase_grid(config: PhaseGridConfig, csv_path=None, threads: int = 1, resume: bool = False, progress=None) -> PhaseGrid:
    """Run every cell; optionally append each finished cell to ``csv_path``.

    With ``resume`` the cells already present in ``csv_path`` are kept and
    skipped.  Rows are written in a fixed cell order regardless of
    ``threads``, so the file is byte-identical for a given config and seed
    once the run completes.
    """
    cells = _read_existing(csv_path, config) if resume else {}
    todo = [key for key in cell_order(config) if key not in cells]
    fh = None
    if csv_path is not None:
        fresh = not (resume and os.path.exists(csv_path))
        fh = open(csv_path, "w" if fresh else "a", newline="")
        writer = csv.writer(fh, lineterminator="\n")
        if fresh:
            writer.writerow(CSV_HEADER)
            fh.flush()
    try:
        if threads > 1:
            pool = ProcessPoolExecutor(max_workers=threads)
            results = pool.map(_run_cell_packed, [(config, key) for key in todo])
        else:
            pool = None
            results = (run_cell(config, key) for key in todo)
        for key, cell in zip(todo, results):
            cells[key] = cell
            if fh is not None:
                writer.writerow(_csv_row(config, key, cell))
                fh.flush()
            if progress is not None:
                progress(key, cell)
        if pool is not None:
            pool.shutdown()
    finally:
        if fh is not None:
            fh.close()
    if resume and csv_path is not None:
        # rewrite in canonical order so resumed and fresh runs give the same file
        grid = PhaseGrid(config, cells)
        with open(csv_path, "w", newline="") as out:
            out.write(grid.to_csv())
    return PhaseGrid(config, cells)


# -------------------------------------------------------- predicted curve


def _sign_term(config: PhaseGridConfig) -> float:
    return config.d / 2 if config.experiment == "SPARSE_SPARSE_SIGN" else 0.0


def _l1_sdim(k: float, d: int) -> float:
    return sdim_l1_formula(k, d).value


def predicted_curve(config: PhaseGridConfig, m: int, samples: int = 200) -> list[np.ndarray]:
    """Level set ``d psi(k1/d) + d psi(k2/d) (+ d/2) = m`` over the plotted ``k1`` range.

    ``k1`` is sampled uniformly on the span of the grid's ``k1`` values and
    ``k2`` found by root bracketing within ``[0, d]``.  Where no solution exists the
    curve leaves the plot and the polyline is split; the result is a list of
    ``(N, 2)`` arrays of ``(k1, k2)`` points.
    """
    d = config.d
    target = m - _sign_term(config)
    k1s = np.linspace(min(config.k1_values), max(config.k1_values), samples)
    lines, current = [], []
    for k1 in k1s:
        rest = target - _l1_sdim(k1, d)
        if rest < 0 or rest > d:
            if current:
                lines.append(np.array(current))
                current = []
            continue
        if rest == 0.0 or rest == d:
            k2 = rest
        else:
            k2 = scipy.optimize.brentq(lambda k: _l1_sdim(k, d) - rest, 0.0, float(d), xtol=1e-10)
        current.append((float(k1), float(k2)))
    if current:
        lines.append(np.array(current))
    return lines


# --------------------------------------------------------------- contours


def _index_to_value(values, idx):
    return np.interp(idx, np.arange(len(values)), np.asarray(values, dtype=float))


def extract_contours(field: np.ndarray, k1_values, k2_values, levels=CONTOUR_LEVELS) -> dict:
    """Marching-squares level sets of a success-rate field (rows = k2, columns = k1).

    Returns ``{level: [array of (k1, k2) points, ...]}``; a constant field
    gives empty lists.
    """
    field = np.asarray(field, dtype=float)
    out = {}
    for level in levels:
        if not 0 < level < 1:
            raise InvalidParameterError(f"contour level {level} outside (0, 1)")
        out[level] = []
        if field.size < 2 or np.nanmin(field) == np.nanmax(field):
            continue
        for path in measure.find_contours(field, level):
            k2 = _index_to_value(k2_values, path[:, 0])
            k1 = _index_to_value(k1_values, path[:, 1])
            out[level].append(np.column_stack([k1, k2]))
    return out


def _point_segment_distance(p, a, b):
    ab = b - a
    denom = float(ab @ ab)
    t = 0.0 if denom == 0 else float(np.clip((p - a) @ ab / denom, 0.0, 1.0))
    return float(np.linalg.norm(p - (a + t * ab)))


def distance_to_curve(point, curve: list[np.ndarray]) -> float:
    best = math.inf
    for line in curve:
        if len(line) == 1:
            best = min(best, float(np.linalg.norm(point - line[0])))
        for a, b in zip(line[:-1], line[1:]):
            best = min(best, _point_segment_distance(point, a, b))
    return best


def contour_agreement(contours: list[np.ndarray], curve: list[np.ndarray], cells: float = 2.0, cell_size: float = 1.0) -> float:
    """Fraction of contour vertices within ``cells`` grid cells of the predicted curve."""
    pts = [p for line in contours for p in line]
    if not pts:
        return 0.0
    close = sum(distance_to_curve(p, curve) <= cells * cell_size for p in pts)
    return close / len(pts)


# ----------------------------------------------------------------- render


_CELL = 12
_MARGIN = 48


def render_heatmap(grid: PhaseGrid, m: int, contours: dict, curve: list[np.ndarray], path=None) -> str:
    """SVG heatmap: white (all succeed) to black (all fail), contours and the predicted curve."""
    cfg = grid.config
    k1v, k2v = list(cfg.k1_values), list(cfg.k2_values)
    nx, ny = len(k1v), len(k2v)
    width, height = 2 * _MARGIN + nx * _CELL, 2 * _MARGIN + ny * _CELL
    svg = ET.Element("svg", xmlns="http://www.w3.org/2000/svg", width=str(width), height=str(height), viewBox=f"0 0 {width} {height}")
    cells = ET.SubElement(svg, "g", id="cells")
    rates = grid.field(m)
    for r in range(ny):
        for c in range(nx):
            rate = rates[r, c]
            shade = 0 if np.isnan(rate) else int(round(255 * rate))
            ET.SubElement(
                cells,
                "rect",
                x=str(_MARGIN + c * _CELL),
                y=str(_MARGIN + (ny - 1 - r) * _CELL),
                width=str(_CELL),
                height=str(_CELL),
                fill=f"#{shade:02x}{shade:02x}{shade:02x}",
            )

    def to_px(points):
        # cell centres sit at integer indices
        ix = np.interp(points[:, 0], k1v, np.arange(nx)) if nx > 1 else np.zeros(len(points))
        iy = np.interp(points[:, 1], k2v, np.arange(ny)) if ny > 1 else np.zeros(len(points))
        xs = _MARGIN + (ix + 0.5) * _CELL
        ys = _MARGIN + (ny - 0.5 - iy) * _CELL
        return " ".join(f"{x:.2f},{y:.2f}" for x, y in zip(xs, ys))

    lines = ET.SubElement(svg, "g", id="contours", fill="none")
    for level in sorted(contours, reverse=True):
        color = CONTOUR_COLORS.get(level, "#0000ff")
        for line in contours[level]:
            ET.SubElement(lines, "polyline", points=to_px(line), stroke=color, **{"stroke-width": "2", "data-level": f"{level:g}"})
    pred = ET.SubElement(svg, "g", id="prediction", fill="none")
    for line in curve:
        inside = line[(line[:, 0] >= min(k1v)) & (line[:, 0] <= max(k1v)) & (line[:, 1] >= min(k2v)) & (line[:, 1] <= max(k2v))]
        if len(inside) > 1:
            ET.SubElement(pred, "polyline", points=to_px(inside), stroke=CURVE_COLOR, **{"stroke-width": "2"})
    axes = ET.SubElement(svg, "g", id="axes", fill="#000000", **{"font-family": "sans-serif", "font-size": "12"})
    ET.SubElement(axes, "text", x=str(width // 2), y=str(height - 12), **{"text-anchor": "middle"}).text = "k1"
    ET.SubElement(axes, "text", x="14", y=str(height // 2), **{"text-anchor": "middle"}).text = "k2"
    for c in (0, nx - 1):
        ET.SubElement(axes, "text", x=str(_MARGIN + c * _CELL + _CELL // 2), y=str(height - _MARGIN + 16), **{"text-anchor": "middle"}).text = str(k1v[c])
    for r in (0, ny - 1):
        ET.SubElement(axes, "text", x=str(_MARGIN - 6), y=str(_MARGIN + (ny - 1 - r) * _CELL + _CELL - 2), **{"text-anchor": "end"}).text = str(k2v[r])
    text = ET.tostring(svg, encoding="unicode")
    if path is not None:
        with open(path, "w") as fh:
            fh.write(text)
    return text


# ---------------------------------------------------------------- summary


def summarize(grid: PhaseGrid, wall_clock: float | None = None) -> dict:
    """JSON-ready summary: config echo, per-m contours, predicted curve and agreement."""
    cfg = grid.config
    per_m = {}
    for m in cfg.m_values:
        contours = extract_contours(grid.field(m), cfg.k1_values, cfg.k2_values)
        curve = predicted_curve(cfg, m)
        per_m[str(m)] = {
            "contours": {f"{lvl:g}": [line.tolist() for line in lines] for lvl, lines in contours.items()},
            "predicted_curve": [line.tolist() for line in curve],
            "agreement_50": contour_agreement(contours[0.5], curve),
        }
    return {"config": cfg.to_dict(), "seed": cfg.seed, "wall_clock_seconds": wall_clock, "per_m": per_m}


def run_and_report(config: PhaseGridConfig, out_dir, threads: int = 1, resume: bool = False) -> dict:
    """Run a grid and write ``<name>.csv``, one SVG per ``m`` and ``<name>.json`` into ``out_dir``."""
    os.makedirs(out_dir, exist_ok=True)
    stem = config.name or config.experiment.lower()
    start = time.perf_counter()
    grid = run_phase_grid(config, os.path.join(out_dir, f"{stem}.csv"), threads=threads, resume=resume)
    elapsed = time.perf_counter() - start
    summary = summarize(grid, elapsed)
    for m in config.m_values:
        contours = extract_contours(grid.field(m), config.k1_values, config.k2_values)
        render_heatmap(grid, m, contours, predicted_curve(config, m), os.path.join(out_dir, f"{stem}_m{m}.svg"))
    with open(os.path.join(out_dir, f"{stem}.json"), "w") as fh:
        json.dump(summary, fh, indent=2)
    return summary
