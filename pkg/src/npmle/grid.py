"""Grid construction from the cloud of per-observation MLEs."""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .core import Grid
from .kernels import KernelId, BoundaryMLE, as_kernel, mle

BOX = "box"
HULL = "hull"


class UnsupportedDefault(ValueError):
    pass


@dataclass
class GridSpec:
    per_dim_counts: tuple
    bounds_mode: str = BOX
    explicit_bounds: Optional[Sequence] = None

    def __post_init__(self):
        self.per_dim_counts = tuple(int(c) for c in self.per_dim_counts)
        if any(c < 1 for c in self.per_dim_counts):
            raise ValueError("grid counts must be positive")
        if self.bounds_mode not in (BOX, HULL):
            raise ValueError(f"bounds_mode must be {BOX!r} or {HULL!r}")
        if self.explicit_bounds is not None:
            if len(self.explicit_bounds) != len(self.per_dim_counts):
                raise ValueError("one (lo, hi) pair or None per dimension")
            self.explicit_bounds = tuple(None if b is None else (float(b[0]), float(b[1]))
                                         for b in self.explicit_bounds)

    @classmethod
    def parse(cls, text: str, bounds_mode: str = BOX) -> "GridSpec":
        """'30x30' -> GridSpec((30, 30))."""
        return cls(tuple(int(t) for t in str(text).lower().split("x")), bounds_mode)

    def to_dict(self):
        return {"per_dim_counts": list(self.per_dim_counts), "bounds_mode": self.bounds_mode,
                "explicit_bounds": None if self.explicit_bounds is None else
                [None if b is None else list(b) for b in self.explicit_bounds]}

    @classmethod
    def from_dict(cls, d):
        return cls(tuple(d["per_dim_counts"]), d.get("bounds_mode", BOX), d.get("explicit_bounds"))


def mle_cloud(kernel, data: Sequence) -> np.ndarray:
    """Stack per-observation MLEs into a p x d array, preserving order."""
    kernel = as_kernel(kernel)
    if len(data) == 0:
        raise ValueError("empty data")
    out = []
    flagged = []
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", BoundaryMLE)
        for j, obs in enumerate(data):
            before = len(caught)
            try:
                out.append(mle(kernel, obs))
            except Exception as exc:
                raise type(exc)(f"observation {j}: {exc}") from exc
            if len(caught) > before:
                flagged.append(j)
    if flagged:
        warnings.warn(f"{len(flagged)} observation(s) have boundary MLEs (first: {flagged[:5]})",
                      BoundaryMLE, stacklevel=2)
    return np.vstack(out)


def default_counts(d: int, p: int) -> tuple:
    if d == 1:
        return (min(300, max(30, math.ceil(0.3 * p))),)
    if d in (2, 3):
        return (30,) * d
    raise UnsupportedDefault(f"no default grid size for d={d}; give explicit counts")


def regular_grid(cloud, spec: GridSpec, names=None) -> Grid:
    cloud = np.atleast_2d(np.asarray(cloud, dtype=float))
    if cloud.size == 0:
        raise ValueError("empty MLE cloud")
    d = cloud.shape[1]
    if len(spec.per_dim_counts) != d:
        raise ValueError(f"grid has {len(spec.per_dim_counts)} counts but atoms have dimension {d}")
    axes, counts, bounds = [], [], []
    for i in range(d):
        lo, hi = float(cloud[:, i].min()), float(cloud[:, i].max())
        if spec.explicit_bounds is not None and spec.explicit_bounds[i] is not None:
            lo, hi = (float(b) for b in spec.explicit_bounds[i])
        if not (np.isfinite(lo) and np.isfinite(hi)) or lo > hi:
            raise ValueError(f"invalid bounds [{lo}, {hi}] in dimension {i}")
        q = spec.per_dim_counts[i]
        if lo == hi and q > 1:
            warnings.warn(f"dimension {i} is degenerate; collapsing to one grid point", stacklevel=2)
            q = 1
        axes.append(np.array([lo]) if q == 1 else np.linspace(lo, hi, q))
        counts.append(q)
        bounds.append((lo, hi))
    mesh = np.meshgrid(*axes, indexing="ij")
    atoms = np.column_stack([m.ravel() for m in mesh])
    if spec.bounds_mode == HULL:
        if d == 2:
            hull = convex_hull(cloud)
            atoms = atoms[in_convex_polygon(atoms, hull)]
        elif d == 1:
            pass  # the box already is the hull
        else:
            warnings.warn("hull filtering only implemented for d <= 2; using the box", stacklevel=2)
    return Grid(atoms, per_dim_counts=tuple(counts), bounds=tuple(bounds), names=names)


def grid_spacing(grid: Grid) -> np.ndarray:
    return np.array([0.0 if q == 1 else (hi - lo) / (q - 1)
                     for q, (lo, hi) in zip(grid.per_dim_counts, grid.bounds)])


# ---------------------------------------------------------------------------
# planar hull geometry


def _cross(o, a, b):
    return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])


def convex_hull(points) -> np.ndarray:
    """Counter-clockwise hull vertices (monotone chain); collinear points dropped."""
    pts = sorted(set(map(tuple, np.asarray(points, dtype=float))))
    if len(pts) <= 2:
        return np.array(pts)
    lower, upper = [], []
    for p in pts:
        while len(lower) >= 2 and _cross(lower[-2], lower[-1], p) <= 0:
            lower.pop()
        lower.append(p)
    for p in reversed(pts):
        while len(upper) >= 2 and _cross(upper[-2], upper[-1], p) <= 0:
            upper.pop()
        upper.append(p)
    return np.array(lower[:-1] + upper[:-1])


def in_convex_polygon(points, hull, tol: float = 1e-12) -> np.ndarray:
    """Membership in the closed hull; boundary points count as inside.

    ``tol`` is relative to the squared extent of the hull so that points on
    an edge survive rounding in the grid coordinates.
    """
    P = np.atleast_2d(np.asarray(points, dtype=float))
    H = np.asarray(hull, dtype=float)
    scale = max(float(np.ptp(H, axis=0).max()) if len(H) else 0.0, 1e-300)
    eps = tol * scale * scale
    if len(H) == 1:
        return np.all(np.abs(P - H[0]) <= tol * max(scale, 1.0), axis=1)
    if len(H) == 2:
        a, b = H
        ab = b - a
        cr = ab[0] * (P[:, 1] - a[1]) - ab[1] * (P[:, 0] - a[0])
        t = ((P - a) @ ab) / (ab @ ab)
        return (np.abs(cr) <= eps) & (t >= -tol) & (t <= 1 + tol)
    inside = np.ones(len(P), dtype=bool)
    for i in range(len(H)):
        a, b = H[i], H[(i + 1) % len(H)]
        cr = (b[0] - a[0]) * (P[:, 1] - a[1]) - (b[1] - a[1]) * (P[:, 0] - a[0])
        inside &= cr >= -eps
    return inside


def within_cells_of_hull(points, cloud, spacing, cells: float = 1.0) -> np.ndarray:
    """True where a point is within ``cells`` grid cells (L-inf) of conv(cloud).

    Uses the Minkowski sum of the hull with the box [-h, h], which is the
    hull of every vertex shifted to every box corner.
    """
    h = np.asarray(spacing, dtype=float) * cells
    corners = np.array([[sx * h[0], sy * h[1]] for sx in (-1, 1) for sy in (-1, 1)])
    V = convex_hull(cloud)
    grown = convex_hull((V[:, None, :] + corners[None, :, :]).reshape(-1, 2))
    return in_convex_polygon(points, grown, tol=1e-9)
