"""Point-set geometry: coverage regions, boundary layers, and net checks.

The coverage region D is the open union of epsilon balls (in a p-norm) around
the expert states. The layer N is the shell of width sigma around D, computed
through the distance to the expert states: a point x lies in N iff
epsilon <= dist_p(x, X_safe) <= epsilon + sigma. Net verification is
witness-based: a candidate net covers a region when every witness sampled
from the region lies within the net radius of some net point.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Optional, Union

import numpy as np

__all__ = [
    "PointSet",
    "NetParams",
    "DemonstrationSet",
    "NetReport",
    "GeometryError",
    "min_distance",
    "min_distances",
    "membership_D",
    "sample_layer_N",
    "verify_net",
    "filter_inner_safe",
    "sample_annulus_F",
    "grid_samples",
    "dedupe_points",
    "save_pointset",
    "load_pointset",
]

PNorm = Union[int, float]


class GeometryError(RuntimeError):
    pass


@dataclass
class PointSet:
    dim: int
    points: np.ndarray  # (N, dim)
    tag: str = "witness"

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=float).reshape(-1, self.dim)
        if not np.all(np.isfinite(self.points)):
            raise GeometryError("point set contains non-finite entries")

    def __len__(self) -> int:
        return len(self.points)


@dataclass(frozen=True)
class NetParams:
    """Net radii and layer width: epsilon for D, epsilon_bar for N, sigma layer."""

    epsilon: float
    epsilon_bar: float
    sigma: float
    p: PNorm = 2

    def __post_init__(self):
        if min(self.epsilon, self.epsilon_bar, self.sigma) <= 0:
            raise GeometryError("net parameters must be positive")
        if self.p not in (1, 2, np.inf, float("inf")):
            raise GeometryError("supported norms: p in {1, 2, inf}")


@dataclass
class DemonstrationSet:
    """Expert state-action pairs; states are the safe samples X_safe."""

    states: np.ndarray  # (N, n)
    inputs: np.ndarray  # (N, m)
    source: str = ""

    def __post_init__(self):
        self.states = np.asarray(self.states, dtype=float)
        self.inputs = np.asarray(self.inputs, dtype=float)
        if len(self.states) != len(self.inputs):
            raise GeometryError("states and inputs must pair up")
        if not (np.all(np.isfinite(self.states)) and np.all(np.isfinite(self.inputs))):
            raise GeometryError("non-finite demonstration data")

    def __len__(self) -> int:
        return len(self.states)

    def safe_points(self) -> PointSet:
        return PointSet(dim=self.states.shape[1], points=self.states, tag="safe")


@dataclass
class NetReport:
    covered: bool
    worst_gap: float
    worst_witness: np.ndarray
    radius: float
    num_witnesses: int


def _pdist(diff: np.ndarray, p: PNorm) -> np.ndarray:
    # diff: (..., n) -> (...)
    if p == 2:
        return np.sqrt(np.sum(diff * diff, axis=-1))
    if p == 1:
        return np.sum(np.abs(diff), axis=-1)
    return np.max(np.abs(diff), axis=-1)


def min_distances(X: np.ndarray, S: np.ndarray, p: PNorm = 2, chunk: int = 2_000_000):
    """Distance from each row of X to the nearest row of S; returns (dists, argmins)."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    S = np.atleast_2d(np.asarray(S, dtype=float))
    if len(S) == 0:
        raise GeometryError("reference set is empty")
    nq = len(X)
    rows_per_chunk = max(1, chunk // max(1, len(S)))
    dists = np.empty(nq)
    args = np.empty(nq, dtype=int)
    for start in range(0, nq, rows_per_chunk):
        stop = min(nq, start + rows_per_chunk)
        d = _pdist(X[start:stop, None, :] - S[None, :, :], p)
        args[start:stop] = np.argmin(d, axis=1)
        dists[start:stop] = d[np.arange(stop - start), args[start:stop]]
    return dists, args


def min_distance(x: np.ndarray, S: PointSet, p: PNorm = 2) -> float:
    """Smallest p-norm distance from x to the point set (brute force)."""
    d, _ = min_distances(np.asarray(x, dtype=float)[None, :], S.points, p)
    return float(d[0])


def membership_D(x: np.ndarray, x_safe: PointSet, epsilon: float, p: PNorm = 2) -> bool:
    """True iff x lies in the open union of epsilon balls around x_safe."""
    return min_distance(x, x_safe, p) < epsilon


def _default_bounds(points: np.ndarray, margin: float) -> tuple[np.ndarray, np.ndarray]:
    lo = points.min(axis=0) - margin
    hi = points.max(axis=0) + margin
    return lo, hi


def sample_layer_N(
    x_safe: PointSet,
    epsilon: float,
    sigma: float,
    p: PNorm = 2,
    budget: int = 1000,
    rng_seed: int = 0,
    bounds: Optional[tuple[np.ndarray, np.ndarray]] = None,
) -> PointSet:
    """Rejection-sample the layer {x : epsilon <= dist_p(x, X_safe) <= epsilon + sigma}.

    Samples uniformly from an axis-aligned bounding box (the data box inflated
    by epsilon + sigma unless given) and keeps points inside the shell.
    Raises when the acceptance rate drops below 1e-4.
    """
    if budget < 1:
        raise GeometryError("budget must be >= 1")
    rng = np.random.default_rng(rng_seed)
    lo, hi = bounds if bounds is not None else _default_bounds(x_safe.points, epsilon + sigma)
    accepted: list[np.ndarray] = []
    n_drawn = 0
    n_kept = 0
    batch = max(1024, 4 * budget)
    while n_kept < budget:
        cand = rng.uniform(lo, hi, size=(batch, x_safe.dim))
        d, _ = min_distances(cand, x_safe.points, p)
        keep = (d >= epsilon) & (d <= epsilon + sigma)
        n_drawn += batch
        kept = cand[keep]
        if len(kept):
            accepted.append(kept)
            n_kept += len(kept)
        if n_drawn >= 100_000 and n_kept / n_drawn < 1e-4:
            raise GeometryError(
                "layer sampling acceptance rate below 1e-4; "
                "shrink the bounding box or increase the budget"
            )
    pts = np.concatenate(accepted, axis=0)[:budget]
    return PointSet(dim=x_safe.dim, points=pts, tag="unsafe")


def verify_net(
    candidate_net: PointSet,
    region_witnesses: PointSet,
    radius: float,
    p: PNorm = 2,
) -> NetReport:
    """Check that every witness lies within `radius` of some net point."""
    if len(region_witnesses) == 0:
        raise GeometryError("empty witness set")
    d, _ = min_distances(region_witnesses.points, candidate_net.points, p)
    worst = int(np.argmax(d))
    return NetReport(
        covered=bool(d[worst] <= radius),
        worst_gap=float(d[worst]),
        worst_witness=region_witnesses.points[worst].copy(),
        radius=float(radius),
        num_witnesses=len(region_witnesses),
    )


def filter_inner_safe(
    x_safe: PointSet,
    x_layer: PointSet,
    gamma_safe: float,
    gamma_unsafe: float,
    l_h: float,
    p: PNorm = 2,
) -> PointSet:
    """Inner subset of safe samples at distance >= (gamma_unsafe + gamma_safe) / l_h from the layer."""
    if l_h <= 0:
        raise GeometryError("l_h must be positive")
    threshold = (gamma_unsafe + gamma_safe) / l_h
    d, _ = min_distances(x_safe.points, x_layer.points, p)
    keep = d >= threshold
    if not np.any(keep):
        raise GeometryError(
            f"buffered safe set is empty at threshold {threshold:.6g}; "
            "shrink the margins or assume a larger Lipschitz constant"
        )
    return PointSet(dim=x_safe.dim, points=x_safe.points[keep], tag="safe")


def sample_annulus_F(
    d_s: float,
    inner_mult: float,
    outer_mult: float,
    budget: int,
    rng_seed: int = 0,
    tag: str = "filter",
    center_box: float = 1.0,
) -> PointSet:
    """Uniform samples of the relative-position annulus, lifted to 6-D aircraft states.

    Relative radius is drawn area-uniformly in [inner_mult * d_s, outer_mult * d_s];
    absolute position of agent b and both headings are randomized.
    """
    if not (0 <= inner_mult < outer_mult):
        raise GeometryError("need 0 <= inner_mult < outer_mult")
    if budget == 0:
        return PointSet(dim=6, points=np.zeros((0, 6)), tag=tag)
    rng = np.random.default_rng(rng_seed)
    ri, ro = inner_mult * d_s, outer_mult * d_s
    r = np.sqrt(rng.uniform(ri * ri, ro * ro, size=budget))
    phi = rng.uniform(0.0, 2.0 * np.pi, size=budget)
    rel = np.stack([r * np.cos(phi), r * np.sin(phi)], axis=1)
    p_b = rng.uniform(-center_box, center_box, size=(budget, 2))
    th = rng.uniform(-np.pi, np.pi, size=(budget, 2))
    pts = np.column_stack([p_b + rel, th[:, 0], p_b, th[:, 1]])
    return PointSet(dim=6, points=pts, tag=tag)


def grid_samples(low: np.ndarray, high: np.ndarray, spacing: float) -> PointSet:
    """Axis-aligned lattice over the box [low, high], always including the corners."""
    if spacing <= 0:
        raise GeometryError("spacing must be positive")
    low = np.atleast_1d(np.asarray(low, dtype=float))
    high = np.atleast_1d(np.asarray(high, dtype=float))
    axes = []
    for lo, hi in zip(low, high):
        ax = lo + spacing * np.arange(int(np.floor((hi - lo) / spacing + 1e-12)) + 1)
        if ax[-1] < hi - 1e-12 * max(1.0, abs(hi)):
            ax = np.append(ax, hi)
        else:
            ax[-1] = hi
        axes.append(ax)
    mesh = np.meshgrid(*axes, indexing="ij")
    pts = np.stack([m.ravel() for m in mesh], axis=1)
    return PointSet(dim=len(low), points=pts, tag="witness")


def dedupe_points(points: np.ndarray, tol: float = 1e-12, p: PNorm = 2) -> np.ndarray:
    """Drop points within tol of an earlier point (order-preserving greedy scan)."""
    points = np.asarray(points, dtype=float)
    if len(points) <= 1:
        return points.copy()
    kept = [points[0]]
    for x in points[1:]:
        d = _pdist(x[None, :] - np.asarray(kept), p)
        if np.min(d) > tol:
            kept.append(x)
    return np.asarray(kept)


# ---------------------------------------------------------------------------
# PointSet serialization: JSONL records {"tag": str, "x": [floats]}
# ---------------------------------------------------------------------------


def _fmt(v: float) -> str:
    return format(float(v), ".17g")


def save_pointset(path, ps: PointSet) -> None:
    tag = json.dumps(ps.tag)
    with open(path, "w") as fh:
        for x in ps.points:
            fh.write(f'{{"tag": {tag}, "x": [' + ", ".join(_fmt(c) for c in x) + "]}\n")


def load_pointset(path) -> PointSet:
    pts = []
    tag = "witness"
    with open(path) as fh:
        for lineno, raw in enumerate(fh, start=1):
            raw = raw.strip()
            if not raw:
                continue
            try:
                rec = json.loads(raw)
            except json.JSONDecodeError as exc:
                raise GeometryError(f"{path}: line {lineno}: invalid JSON: {exc}") from exc
            if "x" not in rec:
                raise GeometryError(f"{path}: line {lineno}: missing field 'x'")
            tag = rec.get("tag", tag)
            pts.append(rec["x"])
    if not pts:
        raise GeometryError(f"{path}: no points")
    arr = np.asarray(pts, dtype=float)
    return PointSet(dim=arr.shape[1], points=arr, tag=tag)
