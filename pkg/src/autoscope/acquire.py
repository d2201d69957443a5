"""Acquisition surfaces, border masking, candidate extraction and visit ordering."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import ndtr

from .fields import ScalarField2D
from .gp import Posterior

KINDS = ("max_variance", "ucb", "ei", "pi")
PATH_MODES = ("nearest", "non_crossing", "directional")
VISITED = -np.inf


@dataclass(frozen=True)
class AcquisitionSpec:
    kind: str = "max_variance"
    beta: float = 2.0
    xi: float = 0.0
    best_so_far: float = 0.0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown acquisition {self.kind!r}")
        if self.beta < 0 or self.xi < 0:
            raise ValueError("beta and xi must be non-negative")


@dataclass(frozen=True)
class PathfinderPolicy:
    """Ordering rule for a batch of candidates.

    ``preferred_dir`` is (dx, dy) in image axes (x = column, y = row).
    ``nm_per_pixel`` converts pixel distances before ``dir_penalty`` (nm) is added.
    """

    mode: str = "nearest"
    k: int = 1
    min_sep: float = 0.0
    preferred_dir: tuple[float, float] = (1.0, 0.0)
    dir_penalty: float = 0.0
    nm_per_pixel: float = 1.0

    def __post_init__(self):
        if self.mode not in PATH_MODES:
            raise ValueError(f"unknown pathfinder mode {self.mode!r}")
        if self.k < 1 or self.min_sep < 0:
            raise ValueError("k must be >= 1 and min_sep >= 0")
        norm = math.hypot(*self.preferred_dir)
        if not norm > 0:
            raise ValueError("preferred_dir must be non-zero")
        object.__setattr__(self, "preferred_dir", (self.preferred_dir[0] / norm, self.preferred_dir[1] / norm))


def edge_mask(width: int, height: int, taper: int) -> np.ndarray:
    """Raised-cosine border taper: 0 on the outer ring, 1 from ``taper`` pixels inwards."""
    if taper < 0 or 2 * taper > min(width, height):
        raise ValueError(f"taper {taper} does not fit a {width}x{height} grid")
    if taper == 0:
        return np.ones((height, width))
    rows = np.arange(height)[:, None]
    cols = np.arange(width)[None, :]
    d = np.minimum(np.minimum(rows, height - 1 - rows), np.minimum(cols, width - 1 - cols)).astype(float)
    return np.where(d >= taper, 1.0, 0.5 * (1 - np.cos(np.pi * np.minimum(d, taper) / taper)))


def _improvement(mu, sigma, best, xi):
    """Return (gain, z, sigma > 0) with z = 0 where sigma == 0."""
    gain = mu - best - xi
    pos = sigma > 0
    z = np.zeros_like(mu)
    z[pos] = gain[pos] / sigma[pos]
    return gain, z, pos


def acquisition_values(spec: AcquisitionSpec, mu: np.ndarray, sigma: np.ndarray) -> np.ndarray:
    """Unmasked acquisition for arrays of predictive mean and standard deviation."""
    mu = np.asarray(mu, dtype=float)
    sigma = np.asarray(sigma, dtype=float)
    if spec.kind == "max_variance":
        return sigma.copy()
    if spec.kind == "ucb":
        return mu + spec.beta * sigma
    gain, z, pos = _improvement(mu, sigma, spec.best_so_far, spec.xi)
    if spec.kind == "ei":
        pdf = np.exp(-0.5 * z * z) / math.sqrt(2 * math.pi)
        return np.where(pos, gain * ndtr(z) + sigma * pdf, 0.0)
    # pi: a certain prediction either improves or it does not
    return np.where(pos, ndtr(z), (gain > 0).astype(float))


def evaluate(spec: AcquisitionSpec, post: Posterior, mask=None, visited=()) -> ScalarField2D:
    """Masked acquisition field; visited pixels are set to ``-inf``."""
    mu, sigma = post.mean.values, post.std.values
    if mu.shape != sigma.shape:
        raise ValueError("posterior mean and std grids differ")
    if mask is None:
        mask = np.ones_like(mu)
    mask = mask.values if isinstance(mask, ScalarField2D) else np.asarray(mask, dtype=float)
    if mask.shape != mu.shape:
        raise ValueError(f"mask shape {mask.shape} does not match posterior {mu.shape}")
    acq = acquisition_values(spec, mu, sigma) * mask
    for r, c in visited:
        acq[r, c] = VISITED
    return ScalarField2D.on(post.mean.grid, acq)


def top_maxima(acq, k: int, min_sep: float = 0.0) -> list[tuple[tuple[int, int], float]]:
    """Greedy non-maximum suppression: up to ``k`` ((row, col), score) pairs, best first.

    Ties go to the lexicographically smallest (row, col).  Pixels closer than
    ``min_sep`` to an accepted candidate are excluded.
    """
    if k < 1:
        raise ValueError("k must be at least 1")
    values = acq.values if isinstance(acq, ScalarField2D) else np.asarray(acq, dtype=float)
    work = np.where(np.isnan(values), VISITED, values).astype(float)
    h, w = work.shape
    rows, cols = np.mgrid[0:h, 0:w]
    out = []
    while len(out) < k:
        flat = int(np.argmax(work))  # first occurrence == row-major tie-break
        score = work.flat[flat]
        if score == VISITED:
            break
        r, c = divmod(flat, w)
        out.append(((r, c), float(values[r, c])))
        if min_sep > 0:
            work[np.hypot(rows - r, cols - c) < min_sep] = VISITED
        work[r, c] = VISITED
    return out


# --- pathfinder ------------------------------------------------------------


def _orient(p, q, r) -> float:
    return (q[0] - p[0]) * (r[1] - p[1]) - (q[1] - p[1]) * (r[0] - p[0])


def segments_cross(p1, p2, q1, q2) -> bool:
    """True when the segments intersect at a single interior point of both."""
    d1, d2 = _orient(q1, q2, p1), _orient(q1, q2, p2)
    d3, d4 = _orient(p1, p2, q1), _orient(p1, p2, q2)
    return d1 * d2 < 0 and d3 * d4 < 0


def path_length(points) -> float:
    pts = np.asarray(points, dtype=float)
    return float(np.hypot(*np.diff(pts, axis=0).T).sum()) if len(pts) > 1 else 0.0


def count_crossings(points) -> int:
    pts = [tuple(p) for p in np.asarray(points, dtype=float)]
    n = 0
    for i in range(len(pts) - 1):
        for j in range(i + 2, len(pts) - 1):
            n += segments_cross(pts[i], pts[i + 1], pts[j], pts[j + 1])
    return n


def _nearest_order(pts, start):
    left = list(range(len(pts)))
    order = []
    here = start
    while left:
        d = [math.dist(here, pts[i]) for i in left]
        j = left[int(np.argmin(d))]
        order.append(j)
        left.remove(j)
        here = pts[j]
    return order


def _directional_order(pts, start, policy: PathfinderPolicy):
    ux, uy = policy.preferred_dir
    left = list(range(len(pts)))
    order = []
    here = start
    while left:
        costs = []
        for i in left:
            dx, dy = pts[i][0] - here[0], pts[i][1] - here[1]
            dist = math.hypot(dx, dy)
            cos = (dx * ux + dy * uy) / dist if dist > 0 else 1.0
            costs.append(dist * policy.nm_per_pixel + policy.dir_penalty * (1 - cos))
        j = left[int(np.argmin(costs))]
        order.append(j)
        left.remove(j)
        here = pts[j]
    return order


def two_opt(points, order: list[int], start) -> list[int]:
    """Uncross and shorten an open tour that begins at ``start`` (fixed).

    A proper crossing is always removed by reversing the span between the two
    segments, which strictly shortens the tour, so the loop terminates with
    no crossings and a length no greater than the input's.
    """
    order = list(order)
    pts = [tuple(start)] + [tuple(points[i]) for i in order]
    idx = [None] + order
    improved = True
    while improved:
        improved = False
        m = len(pts)
        for i in range(m - 2):
            for j in range(i + 2, m - 1):
                a, b, c, d = pts[i], pts[i + 1], pts[j], pts[j + 1]
                gain = math.dist(a, b) + math.dist(c, d) - math.dist(a, c) - math.dist(b, d)
                if gain > 1e-12 or (gain > 0 and segments_cross(a, b, c, d)):
                    pts[i + 1:j + 1] = pts[i + 1:j + 1][::-1]
                    idx[i + 1:j + 1] = idx[i + 1:j + 1][::-1]
                    improved = True
    return idx[1:]


def pathfind(candidates, current_pos, policy: PathfinderPolicy | None = None) -> list[int]:
    """Visit order (indices into ``candidates``) starting from ``current_pos``.

    Candidates and ``current_pos`` are pixel coordinates (row, col).  Every
    candidate appears exactly once.
    """
    policy = policy or PathfinderPolicy()
    cands = [tuple(map(float, c[0] if isinstance(c[0], (tuple, list)) else c)) for c in candidates]
    if not cands:
        raise ValueError("pathfind needs at least one candidate")
    # geometry in (x, y) = (col, row)
    pts = [(c[1], c[0]) for c in cands]
    start = (float(current_pos[1]), float(current_pos[0]))
    if policy.mode == "directional":
        return _directional_order(pts, start, policy)
    order = _nearest_order(pts, start)
    if policy.mode == "non_crossing":
        order = two_opt(pts, order, start)
    return order
