"""Synthetic surfaces, preferentially sampled point data and grid-cell areal data."""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np
import shapely

from . import io as pio
from .errors import ConfigurationError, InputError, NumericalError
from .matern import MaternParams, sample_spde
from .mesh import (
    AreaGrid,
    Mesh,
    build_structured_mesh,
    grid_centres,
    project_areas,
    project_points,
    read_area_geometry,
    write_area_geometry,
)

# scenario id -> (range rho, microergodic theta, gamma)
TABLE1 = {
    1: (0.1, 800.0, 0.0),
    2: (0.2, 200.0, 0.0),
    3: (0.4, 50.0, 0.0),
    4: (0.1, 800.0, 1.0),
    5: (0.2, 200.0, 1.0),
    6: (0.4, 50.0, 1.0),
}

# number of areas -> cells per side over the unit square
AREA_GRIDS = {0: 0, 4: 2, 25: 5, 100: 10}

UNIT_SQUARE = (0.0, 0.0, 1.0, 1.0)


@dataclass(frozen=True)
class ScenarioConfig:
    range_rho: float = 0.2
    theta_micro: float | None = 200.0
    gamma: float = 1.0
    n_points: int = 100
    n_areas: int = 25
    sigma: float = 1.0
    tau_s: float = 10.0
    tau_B: float = 10.0
    mu: float = 0.0
    alpha: float = 0.05
    prediction_grid: int = 50
    n_replicates: int = 1
    seed: int = 0
    mesh_edge: float = 0.07  # simulation mesh; fits use their own (finer) mesh
    extension_factor: float = 0.2
    area_subgrid: int = 20  # midpoints per cell side for the areal averages
    table1_id: int | None = None

    def __post_init__(self):
        if self.n_areas not in AREA_GRIDS:
            raise ConfigurationError(f"n_areas must be one of {sorted(AREA_GRIDS)}, got {self.n_areas}")
        if self.n_points <= 0:
            raise ConfigurationError("n_points must be positive")
        if self.tau_s <= 0 or self.tau_B <= 0:
            raise ConfigurationError("noise precisions must be positive")
        if self.area_subgrid < 1:
            raise ConfigurationError("area_subgrid must be >= 1")
        if self.n_replicates < 1:
            raise ConfigurationError("n_replicates must be >= 1")
        p = self.matern
        if self.theta_micro is not None and not math.isclose(p.theta_micro, self.theta_micro, rel_tol=1e-6):
            raise ConfigurationError(
                f"theta_micro={self.theta_micro} inconsistent with sigma={self.sigma}, rho={self.range_rho} "
                f"(implies {p.theta_micro:.6g})"
            )
        if self.table1_id is not None:
            if self.table1_id not in TABLE1:
                raise ConfigurationError(f"unknown scenario id {self.table1_id}")
            rho, theta, gamma = TABLE1[self.table1_id]
            if (rho, theta, gamma) != (self.range_rho, self.theta_micro, self.gamma):
                raise ConfigurationError(f"parameters do not match scenario {self.table1_id}")

    @classmethod
    def from_table1(cls, scenario: int, **kw) -> "ScenarioConfig":
        if scenario not in TABLE1:
            raise ConfigurationError(f"unknown scenario id {scenario}; choose 1-6")
        rho, theta, gamma = TABLE1[scenario]
        return cls(range_rho=rho, theta_micro=theta, gamma=gamma, table1_id=scenario, **kw)

    @property
    def matern(self) -> MaternParams:
        return MaternParams(sigma=self.sigma, range_rho=self.range_rho)

    @property
    def preferential(self) -> bool:
        return self.gamma != 0

    def area_grid(self) -> AreaGrid | None:
        k = AREA_GRIDS[self.n_areas]
        return AreaGrid(k, k, UNIT_SQUARE) if k else None

    def mesh(self) -> Mesh:
        return build_structured_mesh(UNIT_SQUARE, self.mesh_edge, self.extension_factor)


@dataclass(eq=False)
class Truth:
    mesh: Mesh
    field: np.ndarray
    grid_xy: np.ndarray
    grid_values: np.ndarray


@dataclass(eq=False)
class Dataset:
    """Point and areal observations over ``bbox``.

    ``areas`` is an :class:`AreaGrid` or ``(ids, polygons)``; ``truth`` is only
    set for simulated data.
    """

    bbox: tuple
    point_xy: np.ndarray
    point_values: np.ndarray
    areas: object = None
    area_values: np.ndarray = field(default_factory=lambda: np.empty(0))
    truth: Truth | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.point_xy = np.asarray(self.point_xy, dtype=float).reshape(-1, 2)
        self.point_values = np.asarray(self.point_values, dtype=float).ravel()
        self.area_values = np.asarray(self.area_values, dtype=float).ravel()
        if len(self.point_xy) != len(self.point_values):
            raise InputError("point locations and values differ in length")
        if len(self.area_values) != self.n_areas:
            raise InputError(f"{len(self.area_values)} area values for {self.n_areas} areas")

    @property
    def n_points(self) -> int:
        return len(self.point_values)

    @property
    def n_areas(self) -> int:
        if self.areas is None:
            return 0
        if isinstance(self.areas, AreaGrid):
            return len(self.areas)
        return len(self.areas[1])

    def area_ids(self) -> list:
        if self.areas is None:
            return []
        if isinstance(self.areas, AreaGrid):
            return list(range(len(self.areas)))
        return list(self.areas[0])

    def area_geometries(self):
        if isinstance(self.areas, AreaGrid) or self.areas is None:
            return self.areas
        return self.areas[1]

    def without_areas(self) -> "Dataset":
        return replace(self, areas=None, area_values=np.empty(0))


def _field_on_domain_max(field: np.ndarray, mesh: Mesh, bbox) -> float:
    x0, y0, x1, y1 = bbox
    p = mesh.nodes[mesh.triangles]
    lo, hi = p.min(axis=1), p.max(axis=1)
    touch = (hi[:, 0] >= x0) & (lo[:, 0] <= x1) & (hi[:, 1] >= y0) & (lo[:, 1] <= y1)
    return float(field[mesh.triangles[touch]].max())


def sample_preferential_points(field, mesh: Mesh, gamma: float, alpha: float, n: int, seed, bbox=None) -> np.ndarray:
    """Exactly ``n`` locations with density proportional to exp(alpha + gamma * phi(s)) on ``bbox``.

    Rejection sampling from uniform proposals with the envelope
    exp(alpha + gamma * max_k x_k); ``alpha`` cancels in the acceptance ratio.
    """
    field = np.asarray(field, dtype=float)
    if n <= 0:
        raise ConfigurationError("n must be positive")
    if not np.isfinite(field).all() or not math.isfinite(gamma):
        raise NumericalError("non-finite field or gamma; cannot build the rejection envelope")
    bbox = mesh.domain_bbox if bbox is None else bbox
    x0, y0, x1, y1 = bbox
    rng = np.random.default_rng(seed)
    if gamma > 0:
        top = _field_on_domain_max(field, mesh, bbox)
    elif gamma < 0:
        top = -_field_on_domain_max(-field, mesh, bbox)
    else:
        top = 0.0
    log_env = gamma * top
    out: list[np.ndarray] = []
    have = 0
    batch = max(4 * n, 1024)
    while have < n:
        xy = np.column_stack([rng.uniform(x0, x1, batch), rng.uniform(y0, y1, batch)])
        u = rng.uniform(size=batch)
        if gamma == 0:
            keep = xy
        else:
            phi = project_points(mesh, xy).A @ field
            keep = xy[np.log(u) < gamma * phi - log_env]
        out.append(keep)
        have += len(keep)
    return np.concatenate(out)[:n]


def observe_points(field, mesh: Mesh, locations, mu: float, tau_s: float, seed) -> np.ndarray:
    """Y(s_i) = mu + phi(s_i) + eps_i with eps_i ~ N(0, 1 / tau_s)."""
    A = project_points(mesh, locations).A
    rng = np.random.default_rng(seed)
    return mu + A @ np.asarray(field, dtype=float) + rng.standard_normal(A.shape[0]) / math.sqrt(tau_s)


def observe_areas(field, mesh: Mesh, grid_spec, mu: float, tau_B: float, seed, subgrid: int | None = None) -> np.ndarray:
    """Y(B_j) = mu + avg_j + eps_j.

    By default avg_j is the equal-weight node average (A_area x)_j.  With
    ``subgrid=k`` and an :class:`AreaGrid`, avg_j is instead the midpoint-rule
    average of the interpolated field over k x k points per cell.
    """
    field = np.asarray(field, dtype=float)
    if subgrid is None:
        avg = project_areas(mesh, grid_spec).A @ field
    else:
        if not isinstance(grid_spec, AreaGrid):
            raise ConfigurationError("subgrid averaging needs an AreaGrid")
        pts = grid_centres(grid_spec.bbox, grid_spec.nx * subgrid, grid_spec.ny * subgrid)
        cell = grid_spec.assign(pts)
        avg = np.bincount(cell, project_points(mesh, pts).A @ field, len(grid_spec)) / subgrid**2
    rng = np.random.default_rng(seed)
    return mu + avg + rng.standard_normal(len(avg)) / math.sqrt(tau_B)


def simulate_scenario(config: ScenarioConfig, replicate: int = 0, mesh: Mesh | None = None) -> Dataset:
    """One replicate: GRF draw, point sample, areal sample and truth on the prediction grid."""
    mesh = config.mesh() if mesh is None else mesh
    ss = np.random.SeedSequence([int(config.seed), int(replicate)])
    s_field, s_loc, s_pt, s_area = ss.spawn(4)
    field = sample_spde(mesh.fem(), config.matern, s_field)
    locs = sample_preferential_points(field, mesh, config.gamma, config.alpha, config.n_points, s_loc, UNIT_SQUARE)
    yp = observe_points(field, mesh, locs, config.mu, config.tau_s, s_pt)
    grid = config.area_grid()
    # areal data are averages of the true surface, not of its nodal values
    ya = (observe_areas(field, mesh, grid, config.mu, config.tau_B, s_area, subgrid=config.area_subgrid)
          if grid is not None else np.empty(0))
    gxy = grid_centres(UNIT_SQUARE, config.prediction_grid)
    truth = Truth(mesh, field, gxy, config.mu + project_points(mesh, gxy).A @ field)
    meta = {
        "config": asdict(config),
        "replicate": int(replicate),
        "seed_entropy": [int(config.seed), int(replicate)],
        "preferential": bool(config.preferential),
        "sampling": "preferential" if config.preferential else "non-preferential",
        "mesh": {"edge": config.mesh_edge, "extension_factor": config.extension_factor,
                 "n_nodes": mesh.n_nodes},
    }
    return Dataset(UNIT_SQUARE, locs, yp, grid, ya, truth, meta)


# ---------------------------------------------------------------------------
# file set


def write_dataset(directory, data: Dataset) -> None:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    pio.write_csv(d / "points.csv", ["x", "y", "value"],
                  [(x, y, v) for (x, y), v in zip(data.point_xy.tolist(), data.point_values.tolist())])
    if data.n_areas:
        pio.write_csv(d / "areas.csv", ["area_id", "value"], zip(data.area_ids(), data.area_values.tolist()))
        write_area_geometry(d / "areas_geom.txt", data.areas)
    if data.truth is not None:
        pio.write_csv(d / "truth.csv", ["x", "y", "value"],
                      [(x, y, v) for (x, y), v in zip(data.truth.grid_xy.tolist(), data.truth.grid_values.tolist())])
    meta = dict(data.meta)
    meta["bbox"] = list(data.bbox)
    pio.write_json(d / "meta.json", meta)


def load_dataset(points_file=None, areas_file=None, geometry_file=None, bbox=None) -> Dataset:
    """Assemble a :class:`Dataset` from the CSV / geometry file set."""
    if points_file is not None:
        xy, yv = pio.read_points_csv(points_file)
    else:
        xy, yv = np.empty((0, 2)), np.empty(0)
    areas, av = None, np.empty(0)
    if areas_file is not None:
        if geometry_file is None:
            raise InputError(f"{areas_file}: area values need a geometry file")
        ids, av = pio.read_areas_csv(areas_file)
        geom = read_area_geometry(geometry_file)
        if isinstance(geom, AreaGrid):
            try:
                order = [int(float(i)) for i in ids]
            except ValueError:
                raise InputError(f"{areas_file}: grid areas need integer area_id values")
            if sorted(order) != list(range(len(geom))):
                raise InputError(f"{areas_file}: area ids must be 0..{len(geom) - 1} for a {geom.nx}x{geom.ny} grid")
            vals = np.empty(len(geom))
            vals[order] = av
            areas, av = geom, vals
        else:
            gid, polys = geom
            lookup = {k: p for k, p in zip(gid, polys)}
            missing = [i for i in ids if i not in lookup]
            if missing:
                raise InputError(f"{areas_file}: no geometry for area id(s) {missing[:5]}")
            areas = (list(ids), [lookup[i] for i in ids])
    if bbox is None:
        bbox = _data_bbox(xy, areas)
    return Dataset(tuple(float(v) for v in bbox), xy, yv, areas, av)


def _data_bbox(xy, areas):
    lo = np.full(2, np.inf)
    hi = np.full(2, -np.inf)
    if len(xy):
        lo = np.minimum(lo, xy.min(axis=0))
        hi = np.maximum(hi, xy.max(axis=0))
    if isinstance(areas, AreaGrid):
        lo = np.minimum(lo, areas.bbox[:2])
        hi = np.maximum(hi, areas.bbox[2:])
    elif areas is not None:
        b = shapely.total_bounds(np.asarray(areas[1], dtype=object))
        lo = np.minimum(lo, b[:2])
        hi = np.maximum(hi, b[2:])
    if not np.isfinite(lo).all():
        raise InputError("no data to infer a domain from")
    span = np.maximum(hi - lo, 1e-9 * max(1.0, float(np.abs(hi).max())))
    hi = lo + span
    return float(lo[0]), float(lo[1]), float(hi[0]), float(hi[1])


def read_meta(directory) -> dict:
    p = Path(directory) / "meta.json"
    return json.loads(p.read_text()) if p.exists() else {}
