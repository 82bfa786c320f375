"""Expected Improvement and its maximization over boxes and trust regions.

The maximizer runs a multi-start projected quasi-Newton ascent with analytic
gradients chained through the GP posterior.  Regions are axis-aligned boxes,
optionally carrying an inner exclusion ball and an outer norm ball around a
center (the trust-region geometry).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize
from scipy.special import ndtr

from .errors import ConfigError, EmptyRegionError
from .gp import GPModel

INV_SQRT_2PI = 1.0 / np.sqrt(2.0 * np.pi)

#: Below this variance the EI collapses to its deterministic limit.
_VAR_FLOOR = 1e-300

ACQUISITION_KINDS = ("ei", "mean", "lcb")
NORMS = ("linf", "l1", "l2")


def _norm_dist(x: np.ndarray, center: np.ndarray, norm: str) -> float:
    d = np.abs(np.asarray(x, dtype=float) - center)
    if norm == "linf":
        return float(d.max())
    if norm == "l1":
        return float(d.sum())
    if norm == "l2":
        return float(np.sqrt((d * d).sum()))
    raise ConfigError(f"unknown norm {norm!r}")


@dataclass(frozen=True)
class Region:
    """Axis-aligned search box, optionally an annulus around ``center``.

    ``lower``/``upper`` bound the box; membership is always taken inside the
    unit cube.  When ``center`` is set, points closer than
    ``exclusion_radius`` (in ``norm``) are excluded, and when ``outer_radius``
    is set points farther than it are excluded as well.
    """

    lower: np.ndarray
    upper: np.ndarray
    center: np.ndarray | None = None
    exclusion_radius: float = 0.0
    outer_radius: float | None = None
    norm: str = "linf"

    def __post_init__(self):
        lower = np.atleast_1d(np.asarray(self.lower, dtype=float))
        upper = np.atleast_1d(np.asarray(self.upper, dtype=float))
        if lower.shape != upper.shape:
            raise ConfigError("lower and upper must have the same shape")
        if np.any(lower > upper):
            raise EmptyRegionError(f"lower > upper componentwise: {lower} vs {upper}")
        if self.norm not in NORMS:
            raise ConfigError(f"unknown norm {self.norm!r}")
        if self.exclusion_radius < 0.0:
            raise ConfigError("exclusion_radius must be nonnegative")
        object.__setattr__(self, "lower", lower)
        object.__setattr__(self, "upper", upper)
        if self.center is not None:
            center = np.atleast_1d(np.asarray(self.center, dtype=float))
            if center.shape != lower.shape:
                raise ConfigError("center dimension mismatch")
            object.__setattr__(self, "center", center)
        lo, hi = self.box_lower, self.box_upper
        if np.any(lo > hi):
            raise EmptyRegionError(
                "region does not intersect the unit cube"
            )
        if self.center is not None and self.exclusion_radius > 0.0:
            far = np.maximum(np.abs(lo - self.center), np.abs(hi - self.center))
            max_dist = _norm_dist(self.center + far, self.center, self.norm)
            if self.exclusion_radius >= max_dist:
                raise EmptyRegionError(
                    f"exclusion radius {self.exclusion_radius} covers the whole box"
                )

    @property
    def dim(self) -> int:
        return len(self.lower)

    @property
    def box_lower(self) -> np.ndarray:
        return np.maximum(self.lower, 0.0)

    @property
    def box_upper(self) -> np.ndarray:
        return np.minimum(self.upper, 1.0)

    def contains(self, x, tol: float = 1e-9) -> bool:
        x = np.asarray(x, dtype=float)
        lo, hi = self.box_lower, self.box_upper
        if np.any(x < lo - tol) or np.any(x > hi + tol):
            return False
        if self.center is not None:
            dist = _norm_dist(x, self.center, self.norm)
            if self.exclusion_radius > 0.0 and dist < self.exclusion_radius - tol:
                return False
            if self.outer_radius is not None and dist > self.outer_radius + tol:
                return False
        return True

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        lo, hi = self.box_lower, self.box_upper
        return lo + (hi - lo) * rng.random((size, self.dim))


def full_region(dim: int, norm: str = "linf") -> Region:
    """The whole unit cube as a region."""
    return Region(np.zeros(dim), np.ones(dim), norm=norm)


# ---------------------------------------------------------------------------
# expected improvement
# ---------------------------------------------------------------------------


def expected_improvement(mean, variance, f_min):
    """EI of a Gaussian belief against the incumbent ``f_min``.

    ``(f_min - mean) * Phi(z) + s * phi(z)`` with ``z = (f_min - mean) / s``;
    at zero variance this is the deterministic improvement
    ``max(f_min - mean, 0)``.  Vectorizes over numpy inputs.
    """
    mean = np.asarray(mean, dtype=float)
    variance = np.asarray(variance, dtype=float)
    if np.any(variance < 0.0):
        raise ValueError("variance must be nonnegative")
    scalar = mean.ndim == 0 and variance.ndim == 0
    mean, variance = np.atleast_1d(mean), np.atleast_1d(variance)
    mean, variance = np.broadcast_arrays(mean, variance)
    imp = f_min - mean
    out = np.maximum(imp, 0.0)
    active = variance > _VAR_FLOOR
    if np.any(active):
        s = np.sqrt(variance[active])
        z = imp[active] / s
        phi = np.exp(-0.5 * z * z) * INV_SQRT_2PI
        out = out.astype(float)
        out[active] = imp[active] * ndtr(z) + s * phi
    result = np.maximum(out, 0.0)
    return float(result[0]) if scalar else result


def _score_and_grad(model: GPModel, x: np.ndarray, f_min: float, kind: str, kappa: float):
    """Acquisition value to maximize, and its gradient in x."""
    mean, var, dmean, dvar = model.predict_with_gradients(x)
    if kind == "mean":
        return -mean, -dmean
    if kind == "lcb":
        if var > _VAR_FLOOR:
            s = np.sqrt(var)
            return -(mean - kappa * s), -dmean + kappa * dvar / (2.0 * s)
        return -mean, -dmean
    if kind != "ei":
        raise ConfigError(f"unknown acquisition kind {kind!r}")
    imp = f_min - mean
    if var <= _VAR_FLOOR:
        if imp > 0.0:
            return imp, -dmean
        return 0.0, np.zeros_like(dmean)
    s = np.sqrt(var)
    z = imp / s
    Phi = float(ndtr(z))
    phi = float(np.exp(-0.5 * z * z) * INV_SQRT_2PI)
    value = imp * Phi + s * phi
    grad = -Phi * dmean + phi * dvar / (2.0 * s)
    return value, grad


def acquisition_with_gradient(
    model: GPModel, x, f_min: float, kind: str = "ei", kappa: float = 2.0
) -> tuple[float, np.ndarray]:
    """Value and x-gradient of the acquisition, chained through the posterior."""
    return _score_and_grad(model, np.asarray(x, dtype=float), f_min, kind, kappa)


# ---------------------------------------------------------------------------
# maximization
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class AcqConfig:
    """Multi-start settings for acquisition maximization."""

    kind: str = "ei"
    starts_per_dim: int = 10
    max_iter: int = 100
    grad_tol: float = 1e-8
    lcb_kappa: float = 2.0
    dedup_tol: float = 1e-10

    def __post_init__(self):
        if self.kind not in ACQUISITION_KINDS:
            raise ConfigError(f"unknown acquisition kind {self.kind!r}")
        if self.starts_per_dim < 1:
            raise ConfigError("starts_per_dim must be >= 1")


def _repair(x: np.ndarray, region: Region) -> np.ndarray:
    """Project a refined point back onto the annulus constraints, then the box."""
    lo, hi = region.box_lower, region.box_upper
    x = np.clip(x, lo, hi)
    if region.center is None:
        return x
    c = region.center
    dist = _norm_dist(x, c, region.norm)
    if region.outer_radius is not None and dist > region.outer_radius:
        x = c + (x - c) * (region.outer_radius / dist)
        x = np.clip(x, lo, hi)
        dist = _norm_dist(x, c, region.norm)
    if region.exclusion_radius > 0.0 and dist < region.exclusion_radius:
        if dist == 0.0:
            direction = np.zeros_like(x)
            direction[0] = 1.0
        else:
            direction = (x - c) / dist
        x = np.clip(c + direction * region.exclusion_radius, lo, hi)
    return x


def maximize(
    model: GPModel,
    f_min: float,
    region: Region,
    config: AcqConfig = AcqConfig(),
    seed: int = 0,
) -> np.ndarray:
    """Maximize the acquisition over the region by multi-start ascent.

    Starts are ``starts_per_dim * dim`` uniform draws in the box plus the
    region center when one is defined.  Each start is refined by bounded
    L-BFGS with analytic gradients; the best refined point wins, ties broken
    by start order.  A maximizer that lands within ``dedup_tol`` of a training
    point is replaced by a random point of the region so that refits stay
    nonsingular.  Deterministic for a given (model, region, seed).
    """
    rng = np.random.default_rng(seed)
    dim = region.dim
    lo, hi = region.box_lower, region.box_upper
    starts = region.sample(rng, config.starts_per_dim * dim)
    if region.center is not None:
        starts = np.vstack([starts, np.clip(region.center, lo, hi)])

    degenerate = bool(np.all(hi - lo <= 0.0))
    bounds = list(zip(lo, hi))

    def neg_score(x):
        value, grad = _score_and_grad(model, x, f_min, config.kind, config.lcb_kappa)
        return -value, -grad

    best_x = None
    best_val = -np.inf
    for x0 in starts:
        if degenerate:
            xr = x0
        else:
            res = minimize(
                neg_score,
                x0,
                jac=True,
                method="L-BFGS-B",
                bounds=bounds,
                options={"maxiter": config.max_iter, "gtol": config.grad_tol},
            )
            xr = res.x
        xr = _repair(xr, region)
        val, _ = _score_and_grad(model, xr, f_min, config.kind, config.lcb_kappa)
        if val > best_val:
            best_val, best_x = val, xr

    best_x = _ensure_usable(best_x, model, region, config, rng)
    return np.asarray(best_x, dtype=float)


def _ensure_usable(
    x: np.ndarray,
    model: GPModel,
    region: Region,
    config: AcqConfig,
    rng: np.random.Generator,
) -> np.ndarray:
    """Replace the candidate if it violates membership or duplicates a point."""

    def ok(p):
        if not region.contains(p):
            return False
        train = model.training_data.points
        return float(np.min(np.linalg.norm(train - p, axis=1))) >= config.dedup_tol

    if ok(x):
        return x
    for _ in range(1000):
        cand = _repair(region.sample(rng, 1)[0], region)
        if ok(cand):
            return cand
    raise EmptyRegionError(
        "could not draw a feasible non-duplicate point in the region"
    )
