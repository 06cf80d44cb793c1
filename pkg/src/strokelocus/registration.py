"""Intensity-based 6-DOF rigid registration.

A coarse-to-fine pyramid with derivative-free Powell descent: each of the six
parameters is line-searched in turn (bounded Brent), cycling until the cost
stops improving, with Powell's direction replacement for coupled parameters.
The coarsest level is seeded by a small grid search over translations.
"""
from __future__ import annotations

import enum
import itertools
import json
import logging
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy.optimize import minimize_scalar

from .errors import DegenerateOverlap, InputError, NoProgressWarning
from .nifti_io import Volume3D
from .volume_core import (
    Interpolation,
    downsample2,
    grid_center,
    grid_indices,
    sample,
    _inverse,
)

log = logging.getLogger(__name__)

MIN_OVERLAP_FRACTION = 0.10
MIN_COARSE_EXTENT = 8


def rotation_matrix(rx: float, ry: float, rz: float) -> np.ndarray:
    """Rz @ Ry @ Rx."""
    cx, sx = math.cos(rx), math.sin(rx)
    cy, sy = math.cos(ry), math.sin(ry)
    cz, sz = math.cos(rz), math.sin(rz)
    rot_x = np.array([[1, 0, 0], [0, cx, -sx], [0, sx, cx]])
    rot_y = np.array([[cy, 0, sy], [0, 1, 0], [-sy, 0, cy]])
    rot_z = np.array([[cz, -sz, 0], [sz, cz, 0], [0, 0, 1]])
    return rot_z @ rot_y @ rot_x


def euler_from_matrix(rot: np.ndarray) -> Tuple[float, float, float]:
    """Inverse of :func:`rotation_matrix` (ry restricted to [-pi/2, pi/2])."""
    ry = -math.asin(max(-1.0, min(1.0, rot[2, 0])))
    if abs(math.cos(ry)) > 1e-12:
        rx = math.atan2(rot[2, 1], rot[2, 2])
        rz = math.atan2(rot[1, 0], rot[0, 0])
    else:  # gimbal lock: fold everything into rx
        rz = 0.0
        rx = math.atan2(-rot[1, 2], rot[1, 1])
    return rx, ry, rz


@dataclass(frozen=True)
class RigidTransform:
    """Rotation (radians, applied Rz·Ry·Rx about a centre) plus translation (mm).

    Maps a point ``p`` in moving world space to
    ``R @ (p - center) + center + t`` in fixed world space. The centre is a
    property of the moving grid and is supplied when a matrix is needed.
    """

    rotations: Tuple[float, float, float] = (0.0, 0.0, 0.0)
    translations: Tuple[float, float, float] = (0.0, 0.0, 0.0)

    def __post_init__(self):
        rot = tuple(float(r) for r in self.rotations)
        tr = tuple(float(t) for t in self.translations)
        if len(rot) != 3 or len(tr) != 3:
            raise ValueError("rotations and translations need 3 components each")
        if any(abs(r) > math.pi + 1e-12 for r in rot):
            raise ValueError(f"rotation angles must lie in [-pi, pi], got {rot}")
        object.__setattr__(self, "rotations", rot)
        object.__setattr__(self, "translations", tr)

    @classmethod
    def identity(cls) -> "RigidTransform":
        return cls()

    @classmethod
    def from_params(cls, params: Sequence[float]) -> "RigidTransform":
        """From ``(tx, ty, tz, rx, ry, rz)``."""
        p = [float(x) for x in params]
        rot = [math.remainder(r, 2 * math.pi) for r in p[3:6]]
        return cls(tuple(rot), tuple(p[0:3]))

    def params(self) -> np.ndarray:
        return np.array([*self.translations, *self.rotations])

    def rotation(self) -> np.ndarray:
        return rotation_matrix(*self.rotations)

    def matrix(self, center=(0.0, 0.0, 0.0)) -> np.ndarray:
        rot = self.rotation()
        c = np.asarray(center, dtype=np.float64)
        m = np.eye(4)
        m[:3, :3] = rot
        m[:3, 3] = c - rot @ c + np.asarray(self.translations)
        return m

    @classmethod
    def from_matrix(cls, m: np.ndarray, center=(0.0, 0.0, 0.0)) -> "RigidTransform":
        m = np.asarray(m, dtype=np.float64)
        rot = m[:3, :3]
        c = np.asarray(center, dtype=np.float64)
        t = m[:3, 3] - c + rot @ c
        return cls(euler_from_matrix(rot), tuple(t))

    def inverse(self) -> "RigidTransform":
        rot_t = self.rotation().T
        return RigidTransform(euler_from_matrix(rot_t), tuple(-rot_t @ np.asarray(self.translations)))

    def compose(self, first: "RigidTransform") -> "RigidTransform":
        """``self ∘ first`` (apply ``first``, then ``self``), same centre."""
        r2 = self.rotation()
        rot = r2 @ first.rotation()
        t = r2 @ np.asarray(first.translations) + np.asarray(self.translations)
        return RigidTransform(euler_from_matrix(rot), tuple(t))

    def to_json(self) -> dict:
        return {"rotations_rad": list(self.rotations), "translations_mm": list(self.translations)}

    @classmethod
    def from_json(cls, obj: dict) -> "RigidTransform":
        return cls(tuple(obj["rotations_rad"]), tuple(obj["translations_mm"]))


def save_transform(t: RigidTransform, json_path, mat_path=None, center=(0.0, 0.0, 0.0)) -> None:
    """Write the JSON form and, optionally, the 4x4 text matrix (centre baked in)."""
    Path(json_path).write_text(json.dumps(t.to_json(), indent=2) + "\n")
    if mat_path is not None:
        m = t.matrix(center)
        lines = ["  ".join(f"{x:.10f}" for x in row) for row in m]
        Path(mat_path).write_text("\n".join(lines) + "\n")


def load_transform(path, center=(0.0, 0.0, 0.0)) -> RigidTransform:
    """Read a JSON transform or a 4-line whitespace-separated 4x4 matrix."""
    text = Path(path).read_text()
    try:
        return RigidTransform.from_json(json.loads(text))
    except (json.JSONDecodeError, KeyError, TypeError):
        pass
    try:
        m = np.array([[float(x) for x in line.split()] for line in text.strip().splitlines()])
    except ValueError as exc:
        raise InputError(f"{path}: not a transform file") from exc
    if m.shape != (4, 4):
        raise InputError(f"{path}: expected a 4x4 matrix, got shape {m.shape}")
    return RigidTransform.from_matrix(m, center)


class Cost(enum.Enum):
    NORMALIZED_CORRELATION = "ncc"
    MEAN_SQUARES = "mse"


@dataclass
class RegistrationConfig:
    cost: Cost = Cost.NORMALIZED_CORRELATION
    pyramid_levels: int = 3
    max_iterations: int = 200
    convergence_tol: float = 1e-6
    initial: RigidTransform = field(default_factory=RigidTransform)
    grid_search: bool = True
    grid_search_radius: int = 8  # full-resolution voxels
    grid_search_step: int = 4
    # cycle move (fraction of the level's line-search step) below which a cycle may stop
    param_tol: float = 0.02
    restarts: int = 2  # Powell restarts at the finest level

    def __post_init__(self):
        if isinstance(self.cost, str):
            self.cost = Cost(self.cost)
        if self.pyramid_levels < 1:
            raise ValueError("pyramid_levels must be >= 1")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")


@dataclass
class RegistrationResult:
    transform: RigidTransform
    final_cost: float
    iterations_used: List[int]
    converged: bool
    # (cost at level start, cost at level end), coarse to fine
    level_costs: List[Tuple[float, float]] = field(default_factory=list)


class _CostFunction:
    """Cost of a transform at one pyramid level, with cached grid geometry."""

    def __init__(self, fixed: Volume3D, moving: Volume3D, cost: Cost, center):
        self.fixed_values = fixed.data.ravel(order="F")
        self.moving = moving.data
        self.cost = cost
        self.center = np.asarray(center, dtype=np.float64)
        idx = grid_indices(fixed.extents)
        self.fixed_world = idx @ fixed.affine[:3, :3].T + fixed.affine[:3, 3]
        self.moving_inv = _inverse(moving.affine)

    def __call__(self, t: RigidTransform) -> float:
        backward = self.moving_inv @ np.linalg.inv(t.matrix(self.center))
        coords = self.fixed_world @ backward[:3, :3].T + backward[:3, 3]
        values, inside = sample(self.moving, coords, Interpolation.TRILINEAR, 0.0)
        n_in = int(np.count_nonzero(inside))
        if n_in < MIN_OVERLAP_FRACTION * values.size:
            raise DegenerateOverlap(
                f"only {n_in}/{values.size} fixed voxels map inside the moving volume"
            )
        if self.cost is Cost.MEAN_SQUARES:
            diff = self.fixed_values - values
            return float(np.mean(diff * diff))
        a = self.fixed_values[inside]
        b = values[inside]
        a = a - a.mean()
        b = b - b.mean()
        saa, sbb = float(np.dot(a, a)), float(np.dot(b, b))
        if saa <= 1e-12 * a.size or sbb <= 1e-12 * b.size:
            raise DegenerateOverlap("zero intensity variance over the overlap")
        r = float(np.dot(a, b)) / math.sqrt(saa * sbb)
        return 1.0 - min(abs(r), 1.0)


def registration_cost(
    fixed: Volume3D, moving: Volume3D, t: RigidTransform, cost: Cost = Cost.NORMALIZED_CORRELATION
) -> float:
    """Dissimilarity of ``fixed`` and ``moving`` resampled through ``t`` (lower is better).

    MeanSquares averages over all fixed voxels (outside points sample as 0);
    NormalizedCorrelation is ``1 - |r|`` over the in-bounds voxel pairs.
    """
    if isinstance(cost, str):
        cost = Cost(cost)
    return _CostFunction(fixed, moving, cost, grid_center(moving))(t)


def _pyramid(v: Volume3D, levels: int) -> List[Volume3D]:
    out = [v]
    for _ in range(levels - 1):
        out.append(downsample2(out[-1]))
    return out[::-1]


def _usable_levels(fixed: Volume3D, moving: Volume3D, requested: int) -> int:
    smallest = min(min(fixed.extents), min(moving.extents))
    levels = requested
    while levels > 1 and smallest // 2 ** (levels - 1) < MIN_COARSE_EXTENT:
        levels -= 1
    if levels != requested:
        log.info("pyramid reduced from %d to %d levels for %s voxel grids", requested, levels, smallest)
    return levels


def _safe(fn, t: RigidTransform) -> float:
    try:
        return fn(t)
    except DegenerateOverlap:
        return math.inf


def register_rigid(
    fixed: Volume3D, moving: Volume3D, cfg: Optional[RegistrationConfig] = None
) -> RegistrationResult:
    """Estimate the rigid transform taking ``moving`` world space onto ``fixed``."""
    cfg = cfg or RegistrationConfig()
    levels = _usable_levels(fixed, moving, cfg.pyramid_levels)
    fixed_pyr = _pyramid(fixed, levels)
    moving_pyr = _pyramid(moving, levels)
    center = grid_center(moving)
    fine_spacing = np.array(fixed.spacing)
    space = _SearchSpace(moving, center)

    full_cost = _CostFunction(fixed, moving, cfg.cost, center)
    initial_cost = full_cost(cfg.initial)  # DegenerateOverlap propagates here

    current = cfg.initial
    iterations: List[int] = []
    level_costs: List[Tuple[float, float]] = []
    improved_anywhere = False
    converged = False

    for level, (fx, mv) in enumerate(zip(fixed_pyr, moving_pyr)):
        fn = full_cost if level == levels - 1 else _CostFunction(fx, mv, cfg.cost, center)
        cost = _safe(fn, current)
        if level == levels - 1 and initial_cost < cost:
            current, cost = cfg.initial, initial_cost
        start_cost = cost

        if level == 0 and cfg.grid_search:
            current, cost = _translation_grid_search(fn, current, cost, fine_spacing, cfg)

        step = 2.0 * float(np.mean(fx.spacing))
        x, cost, n_iter, converged = _powell(fn, space.to_search(current), cost, space, step, cfg)
        if level == levels - 1:
            # fresh coordinate axes escape a degenerate direction set
            for _ in range(cfg.restarts):
                before = cost
                x, cost, extra, converged = _powell(fn, x, cost, space, step, cfg)
                n_iter += extra
                if before - cost < cfg.convergence_tol:
                    break
        current = space.to_transform(x)
        iterations.append(n_iter)
        level_costs.append((start_cost, cost))
        if cost < start_cost:
            improved_anywhere = True
        log.debug("level %d: cost %.6g -> %.6g in %d cycles", level, start_cost, cost, n_iter)

    final_cost = level_costs[-1][1]
    if not improved_anywhere and initial_cost > cfg.convergence_tol:
        warnings.warn("registration made no progress from the initial transform", NoProgressWarning)
        converged = False
    return RegistrationResult(current, final_cost, iterations, converged, level_costs)


class _SearchSpace:
    """Optimizer coordinates: rotation about the moving image's intensity centroid.

    Rotating about where the image mass sits decouples rotation from
    translation far better than the grid centre does; angles are scaled by
    the radius of gyration so one unit moves the mass about 1 mm. Converts
    exactly to and from the grid-centre convention of RigidTransform.
    """

    def __init__(self, moving: Volume3D, center):
        w = moving.data - moving.data.min()
        idx = grid_indices(moving.extents)
        world = idx @ moving.affine[:3, :3].T + moving.affine[:3, 3]
        weights = w.ravel(order="F")
        total = float(weights.sum())
        if total > 0:
            centroid = weights @ world / total
            gyration = math.sqrt(float(weights @ np.sum((world - centroid) ** 2, axis=1)) / total)
        else:
            centroid, gyration = np.asarray(center, dtype=np.float64), 1.0
        self.offset = centroid - np.asarray(center, dtype=np.float64)
        self.radius = max(gyration, float(np.mean(moving.spacing)))

    def to_transform(self, y) -> RigidTransform:
        angles = np.asarray(y[3:6]) / self.radius
        rot = rotation_matrix(*angles)
        t = np.asarray(y[0:3]) + self.offset - rot @ self.offset
        return RigidTransform.from_params([*t, *angles])

    def to_search(self, t: RigidTransform) -> np.ndarray:
        rot = t.rotation()
        shifted = np.asarray(t.translations) - self.offset + rot @ self.offset
        return np.array([*shifted, *(np.asarray(t.rotations) * self.radius)])


def _powell(fn, x, cost, space, step, cfg):
    """Powell's direction-set minimisation starting from the coordinate axes.

    Each cycle line-searches every direction in turn; the cycle's net move
    replaces the direction of largest decrease when Powell's test accepts it.
    Returns ``(x, cost, cycles, converged)``.
    """
    xatol = 1e-3 * step
    directions = list(np.eye(6))
    n_iter = 0
    for n_iter in range(1, cfg.max_iterations + 1):
        cycle_start, x_start = cost, x.copy()
        biggest, biggest_at = 0.0, 0
        for i, d in enumerate(directions):
            before = cost
            x, cost = _line_search(fn, x, d, cost, space, (-step, step), xatol)
            if before - cost > biggest:
                biggest, biggest_at = before - cost, i
        net = x - x_start
        length = float(np.linalg.norm(net))
        if length > xatol:
            extrapolated = _safe(fn, space.to_transform(x + net))
            if extrapolated < cycle_start:
                f0, f1, fe = cycle_start, cost, extrapolated
                test = 2 * (f0 - 2 * f1 + fe) * (f0 - f1 - biggest) ** 2 - biggest * (f0 - fe) ** 2
                if test < 0:
                    unit = net / length
                    reach = max(step, 2 * length)
                    x, cost = _line_search(fn, x, unit, cost, space, (-reach, reach), xatol)
                    directions[biggest_at] = directions[-1]
                    directions[-1] = unit
        # small cost gains with a large parameter move mean a slow valley, not a minimum
        if cycle_start - cost < cfg.convergence_tol and length < cfg.param_tol * step:
            return x, cost, n_iter, True
    return x, cost, n_iter, False


def _line_search(fn, x, direction, cost, space, bounds, xatol):
    """Bounded Brent search along ``direction``; only improving moves are taken."""

    def line(a):
        return _safe(fn, space.to_transform(x + a * direction))

    res = minimize_scalar(line, bounds=bounds, method="bounded", options={"xatol": xatol})
    if res.fun < cost:
        return x + res.x * direction, float(res.fun)
    return x, cost


def _translation_grid_search(fn, start, start_cost, fine_spacing, cfg):
    best, best_cost = start, start_cost
    r, s = cfg.grid_search_radius, cfg.grid_search_step
    offsets = range(-r, r + 1, s)
    base = start.params()
    for d in itertools.product(offsets, repeat=3):
        if d == (0, 0, 0):
            continue
        p = base.copy()
        p[:3] += np.asarray(d) * fine_spacing
        trial = RigidTransform.from_params(p)
        c = _safe(fn, trial)
        if c < best_cost:
            best, best_cost = trial, c
    return best, best_cost
