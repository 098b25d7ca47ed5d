"""Differentiable goal log-likelihoods over decoded motion.

Every term maps a (T, D) motion ``Var`` to a scalar ``Var`` that is <= 0 and
reaches 0 exactly when the constraint is satisfied within its margins.
Terms compose by weighted sum.  Hinge kinks use subgradient 0 (the inactive
side), so gradients are exact away from the kinks.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Var
from .errors import ConfigError, ShapeError


class GoalTerm:
    """Callable goal: motion Var -> scalar Var (log-likelihood, <= 0)."""

    def __call__(self, motion: Var) -> Var:
        raise NotImplementedError

    def value_and_grad(self, motion: np.ndarray):
        m = ad.parameter(np.asarray(motion, dtype=np.float64))
        out = self(m)
        grads = ad.gradients(out, [m])
        return float(out.data), grads[m]


@dataclass
class ControlMask:
    """Binary (T, D) mask with target values where the mask is set."""

    mask: np.ndarray
    targets: np.ndarray

    def __post_init__(self):
        self.mask = np.asarray(self.mask, dtype=np.float64)
        self.targets = np.asarray(self.targets, dtype=np.float64)
        if self.mask.shape != self.targets.shape:
            raise ShapeError("mask and target shapes differ")
        if not np.isin(self.mask, (0.0, 1.0)).all():
            raise ConfigError("mask entries must be 0 or 1")
        if not np.all(np.isfinite(self.targets[self.mask == 1.0])):
            raise ConfigError("targets must be finite where masked")

    @classmethod
    def keyframes(cls, shape: tuple, frames, channels,
                  values: np.ndarray) -> "ControlMask":
        """Mask selecting `channels` at each keyframe in `frames`; `values`
        has shape (len(frames), len(channels))."""
        mask = np.zeros(shape)
        targets = np.zeros(shape)
        values = np.asarray(values, dtype=np.float64)
        for i, t in enumerate(frames):
            for j, c in enumerate(channels):
                mask[t, c] = 1.0
                targets[t, c] = values[i, j]
        return cls(mask, targets)


@dataclass
class JointGoal(GoalTerm):
    """Squared-error pull toward masked targets: -(1/2 sigma) * sum of
    masked squared deviations."""

    control: ControlMask
    sigma: float = 1.0

    def __post_init__(self):
        if self.sigma <= 0:
            raise ConfigError("sigma must be > 0")
        if self.control.mask.sum() == 0:
            warnings.warn("joint goal has an empty mask; value is always 0")

    def __call__(self, motion: Var) -> Var:
        if motion.shape != self.control.mask.shape:
            raise ShapeError("motion shape does not match control mask")
        diff = motion - Var(self.control.targets)
        masked = diff * Var(self.control.mask)
        return ad.sum_(masked * masked) * (-1.0 / (2.0 * self.sigma))


@dataclass
class ObstacleGoal(GoalTerm):
    """Quadratic repulsion from a sphere: penalizes points whose distance to
    the surface falls below the margin."""

    center: np.ndarray
    radius: float
    margin: float = 0.0
    point_channels: tuple = (0, 1)

    def __post_init__(self):
        self.center = np.asarray(self.center, dtype=np.float64)
        if self.radius <= 0 or self.margin < 0:
            raise ConfigError("radius must be > 0 and margin >= 0")
        if len(self.center) != len(self.point_channels):
            raise ShapeError("obstacle center dim != number of point channels")

    def __call__(self, motion: Var) -> Var:
        pts = motion[:, list(self.point_channels)]
        delta = pts - Var(self.center)
        dist = (ad.sum_(delta * delta, axis=1) + 1e-30) ** 0.5
        gap = ad.relu(Var(self.radius + self.margin) - dist)
        return -ad.mean(gap * gap)


@dataclass
class RegionGoal(GoalTerm):
    """Containment in an axis-aligned box over selected channels."""

    low: np.ndarray
    high: np.ndarray
    point_channels: tuple = (0, 1)

    def __post_init__(self):
        self.low = np.asarray(self.low, dtype=np.float64)
        self.high = np.asarray(self.high, dtype=np.float64)
        if np.any(self.high <= self.low):
            raise ConfigError("region box must have positive extent")

    def __call__(self, motion: Var) -> Var:
        pts = motion[:, list(self.point_channels)]
        over = ad.relu(pts - Var(self.high))
        under = ad.relu(Var(self.low) - pts)
        excess = over + under
        return -ad.mean(excess * excess)


@dataclass
class SdfGrid:
    """Regular 3-D signed-distance grid (positive outside), trilinear query."""

    values: np.ndarray           # (nx, ny, nz)
    low: np.ndarray              # (3,)
    high: np.ndarray             # (3,)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        self.low = np.asarray(self.low, dtype=np.float64)
        self.high = np.asarray(self.high, dtype=np.float64)
        if self.values.ndim != 3 or min(self.values.shape) < 2:
            raise ConfigError("SDF grid needs >= 2 samples per axis")
        if np.any(self.high <= self.low):
            raise ConfigError("SDF bounds must enclose a positive volume")
        if not np.all(np.isfinite(self.values)):
            raise ConfigError("SDF grid contains non-finite values")

    @property
    def spacing(self) -> np.ndarray:
        return (self.high - self.low) / (np.array(self.values.shape) - 1)

    def query(self, points: Var) -> Var:
        """Trilinear interpolation of the grid at (N, 3) query points;
        differentiable w.r.t. the points.  Out-of-bounds queries clamp to
        the boundary (with zero gradient on the clamped axes)."""
        p = np.asarray(points.data, dtype=np.float64)
        if p.ndim != 2 or p.shape[1] != 3:
            raise ShapeError("SDF query expects (N, 3) points")
        clamped = np.clip(p, self.low, self.high - 1e-12 * self.spacing)
        if np.any(clamped != p):
            warnings.warn("SDF query outside grid bounds; clamped")
        rel = (clamped - self.low) / self.spacing
        idx = np.minimum(rel.astype(int), np.array(self.values.shape) - 2)
        frac = rel - idx
        i, j, k = idx[:, 0], idx[:, 1], idx[:, 2]
        fx, fy, fz = frac[:, 0], frac[:, 1], frac[:, 2]
        V = self.values
        c = {}
        for dx in (0, 1):
            for dy in (0, 1):
                for dz in (0, 1):
                    c[dx, dy, dz] = V[i + dx, j + dy, k + dz]
        wx = np.stack([1 - fx, fx])
        wy = np.stack([1 - fy, fy])
        wz = np.stack([1 - fz, fz])
        val = np.zeros(len(p))
        grad = np.zeros_like(p)
        dwx = np.array([-1.0, 1.0])
        for dx in (0, 1):
            for dy in (0, 1):
                for dz in (0, 1):
                    w = wx[dx] * wy[dy] * wz[dz]
                    val += w * c[dx, dy, dz]
                    grad[:, 0] += dwx[dx] * wy[dy] * wz[dz] * c[dx, dy, dz]
                    grad[:, 1] += wx[dx] * dwx[dy] * wz[dz] * c[dx, dy, dz]
                    grad[:, 2] += wx[dx] * wy[dy] * dwx[dz] * c[dx, dy, dz]
        grad = grad / self.spacing
        grad[clamped != p] = 0.0
        out = Var(val, _parents=(points,))

        def backward(g):
            points._accum(g[:, None] * grad)

        out._backward = backward
        return out

    @classmethod
    def from_function(cls, fn, low, high, resolution) -> "SdfGrid":
        low = np.asarray(low, dtype=np.float64)
        high = np.asarray(high, dtype=np.float64)
        axes = [np.linspace(low[a], high[a], resolution[a]) for a in range(3)]
        X, Y, Z = np.meshgrid(*axes, indexing="ij")
        pts = np.stack([X, Y, Z], axis=-1).reshape(-1, 3)
        vals = fn(pts).reshape(resolution)
        return cls(vals, low, high)


@dataclass
class SdfGoal(GoalTerm):
    """Scene collision + floor contact on a signed-distance grid.

    ``point_channels`` lists one (cx, cy, cz) channel triple per proxy
    point; ``contact_points`` indexes into that list."""

    grid: SdfGrid
    point_channels: tuple = ((0, 1, 2),)
    radii: tuple = (0.0,)
    contact_points: tuple = ()
    contact_threshold: float = 0.1
    weight_collision: float = 1.0
    weight_contact: float = 1.0

    def _points(self, motion: Var, which) -> Var:
        rows = [motion[:, list(self.point_channels[m])] for m in which]
        return ad.concat(rows, axis=0)

    def __call__(self, motion: Var) -> Var:
        T = motion.shape[0]
        M = len(self.point_channels)
        all_pts = self._points(motion, range(M))
        phi = self.grid.query(all_pts)
        radii = np.repeat(np.asarray(self.radii, dtype=np.float64), T)
        penetration = ad.relu(Var(radii) - phi)
        collision = ad.mean(penetration)
        total = Var(0.0) - self.weight_collision * collision
        if self.contact_points:
            mins = None
            for m in self.contact_points:
                phi_m = self.grid.query(motion[:, list(self.point_channels[m])])
                mins = phi_m if mins is None else ad.minimum(mins, phi_m)
            hover = ad.relu(mins - Var(self.contact_threshold))
            total = total - self.weight_contact * ad.mean(hover)
        return total


@dataclass
class CompositeGoal(GoalTerm):
    """Weighted sum of goal terms."""

    terms: list = field(default_factory=list)
    weights: list = field(default_factory=list)

    def __post_init__(self):
        if not self.terms:
            raise ConfigError("composite goal needs at least one term")
        if len(self.weights) != len(self.terms):
            raise ShapeError("one weight per term required")
        if any(w < 0 or not np.isfinite(w) for w in self.weights):
            raise ConfigError("weights must be finite and >= 0")

    def __call__(self, motion: Var) -> Var:
        total = Var(0.0)
        for term, w in zip(self.terms, self.weights):
            total = total + float(w) * term(motion)
        return total


def goal_from_spec(spec: dict, motion_shape: tuple) -> CompositeGoal:
    """Build a composite goal from a JSON control-spec dict: a list of
    {"type", "weight", ...params} entries."""
    terms, weights = [], []
    for entry in spec["terms"]:
        kind = entry["type"]
        weight = float(entry.get("weight", 1.0))
        if kind == "joint":
            control = ControlMask.keyframes(
                motion_shape, entry["frames"], entry["channels"],
                np.asarray(entry["targets"], dtype=np.float64))
            terms.append(JointGoal(control, sigma=float(entry.get("sigma", 1.0))))
        elif kind == "obstacle":
            terms.append(ObstacleGoal(
                np.asarray(entry["center"], dtype=np.float64),
                float(entry["radius"]), float(entry.get("margin", 0.0)),
                tuple(entry.get("channels", (0, 1)))))
        elif kind == "region":
            terms.append(RegionGoal(
                np.asarray(entry["low"], dtype=np.float64),
                np.asarray(entry["high"], dtype=np.float64),
                tuple(entry.get("channels", (0, 1)))))
        elif kind == "sdf":
            grid = load_sdf_grid(entry["grid_path"])
            terms.append(SdfGoal(
                grid,
                tuple(tuple(t) for t in entry.get("point_channels",
                                                  ((0, 1, 2),))),
                tuple(entry.get("radii", (0.0,))),
                tuple(entry.get("contact_points", ())),
                float(entry.get("contact_threshold", 0.1)),
                float(entry.get("weight_collision", 1.0)),
                float(entry.get("weight_contact", 1.0))))
        else:
            raise ConfigError(f"unknown goal term type {kind!r}")
        weights.append(weight)
    return CompositeGoal(terms, weights)


SDF_MAGIC = b"SDF1"


def save_sdf_grid(path, grid: SdfGrid):
    """Binary layout: magic, JSON header (resolution + bounds) length and
    bytes, then little-endian float32 samples in C order."""
    header = json.dumps({"resolution": list(grid.values.shape),
                         "low": grid.low.tolist(),
                         "high": grid.high.tolist()},
                        sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(SDF_MAGIC)
        fh.write(np.uint32(len(header)).tobytes())
        fh.write(header)
        fh.write(grid.values.astype("<f4").tobytes())


def load_sdf_grid(path) -> SdfGrid:
    with open(path, "rb") as fh:
        if fh.read(4) != SDF_MAGIC:
            raise ConfigError(f"{path} is not an SDF grid file")
        n = int(np.frombuffer(fh.read(4), dtype=np.uint32)[0])
        header = json.loads(fh.read(n))
        data = np.frombuffer(fh.read(), dtype="<f4").astype(np.float64)
    res = header["resolution"]
    return SdfGrid(data.reshape(res), np.asarray(header["low"]),
                   np.asarray(header["high"]))
