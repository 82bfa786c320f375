"""Gaussian-process regression with a constant trend and anisotropic Matern 5/2 kernel.

The model is noise-free: observations are interpolated exactly up to the small
diagonal jitter used for numerical stability.  All inputs live on the unit
cube ``[0, 1]^n``.  Hyperparameters (per-dimension lengthscales and a signal
variance) are chosen by maximum likelihood with a multi-start quasi-Newton
scheme; the constant trend and the signal variance are profiled out of the
likelihood in closed form (generalized least squares), so the numerical search
only runs over log-lengthscales.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from hashlib import sha256

import numpy as np
from scipy.linalg import LinAlgError, cho_solve, cholesky
from scipy.optimize import minimize

from . import design
from ._util import as_float_array, stable_seed
from .errors import (
    FactorizationError,
    FitError,
    InvalidHyperparameterError,
    NotFittedError,
)

SQRT5 = np.sqrt(5.0)
LOG_2PI = np.log(2.0 * np.pi)

#: Two dataset points closer than this (Euclidean) are considered duplicates.
DUPLICATE_TOL = 1e-10


# ---------------------------------------------------------------------------
# data container
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Dataset:
    """Evaluated points and objective values on the unit cube.

    Invariants enforced at construction: matching lengths, all coordinates in
    ``[0, 1]``, finite values, and no two points closer than ``DUPLICATE_TOL``.
    """

    points: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        pts = np.atleast_2d(as_float_array(self.points, "points"))
        vals = np.atleast_1d(as_float_array(self.values, "values"))
        if pts.ndim != 2:
            raise ValueError("points must be a 2-d array")
        if len(pts) != len(vals):
            raise ValueError(
                f"points ({len(pts)}) and values ({len(vals)}) lengths differ"
            )
        if pts.size and (pts.min() < 0.0 or pts.max() > 1.0):
            raise ValueError("points must lie in the unit cube [0, 1]^n")
        if len(pts) >= 2:
            from scipy.spatial.distance import pdist

            if pdist(pts).min() < DUPLICATE_TOL:
                raise ValueError(
                    f"dataset contains near-duplicate points (closer than {DUPLICATE_TOL})"
                )
        object.__setattr__(self, "points", np.ascontiguousarray(pts))
        object.__setattr__(self, "values", np.ascontiguousarray(vals))

    def __len__(self) -> int:
        return len(self.values)

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    def add(self, point, value: float) -> "Dataset":
        """Return a new dataset with one extra observation."""
        point = np.asarray(point, dtype=float).reshape(1, -1)
        return Dataset(
            np.vstack([self.points, point]),
            np.append(self.values, float(value)),
        )

    def best_index(self) -> int:
        """Index of the smallest value; earliest index wins ties."""
        return int(np.argmin(self.values))

    @property
    def f_min(self) -> float:
        return float(self.values.min())


# ---------------------------------------------------------------------------
# kernel
# ---------------------------------------------------------------------------


def _check_lengthscales(lengthscales: np.ndarray) -> np.ndarray:
    ls = np.atleast_1d(np.asarray(lengthscales, dtype=float))
    if np.any(ls <= 0.0) or not np.all(np.isfinite(ls)):
        raise InvalidHyperparameterError(
            f"lengthscales must be strictly positive and finite, got {ls}"
        )
    return ls


def matern52(x, x2, lengthscales, signal_variance: float) -> float:
    """Anisotropic Matern 5/2 covariance between two points.

    ``k(r) = s2 * (1 + sqrt(5) r + 5 r^2 / 3) * exp(-sqrt(5) r)`` where ``r``
    is the Euclidean distance after dividing each coordinate by its
    lengthscale.  Symmetric, equal to ``signal_variance`` at ``r = 0`` and
    strictly decreasing in ``r``.
    """
    ls = _check_lengthscales(lengthscales)
    if signal_variance <= 0.0 or not np.isfinite(signal_variance):
        raise InvalidHyperparameterError(
            f"signal_variance must be strictly positive, got {signal_variance}"
        )
    x = np.asarray(x, dtype=float)
    x2 = np.asarray(x2, dtype=float)
    if x.shape != x2.shape:
        raise ValueError("point shapes differ")
    d = (x - x2) / ls
    r2 = float(np.dot(d, d))
    r = np.sqrt(r2)
    return float(signal_variance * (1.0 + SQRT5 * r + (5.0 / 3.0) * r2) * np.exp(-SQRT5 * r))


def _corr_matrix(X: np.ndarray, lengthscales: np.ndarray) -> np.ndarray:
    """Matern 5/2 correlation matrix (unit signal variance)."""
    Z = X / lengthscales
    diff = Z[:, None, :] - Z[None, :, :]
    r2 = np.einsum("ijk,ijk->ij", diff, diff)
    r = np.sqrt(r2)
    return (1.0 + SQRT5 * r + (5.0 / 3.0) * r2) * np.exp(-SQRT5 * r)


def _cross_corr(X: np.ndarray, Z: np.ndarray, lengthscales: np.ndarray) -> np.ndarray:
    A = X / lengthscales
    B = Z / lengthscales
    diff = A[:, None, :] - B[None, :, :]
    r2 = np.einsum("ijk,ijk->ij", diff, diff)
    r = np.sqrt(r2)
    return (1.0 + SQRT5 * r + (5.0 / 3.0) * r2) * np.exp(-SQRT5 * r)


# ---------------------------------------------------------------------------
# hyperparameters and likelihood
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Hyperparams:
    """Kernel hyperparameters plus the constant trend.

    ``trend=None`` means "profile it": the generalized-least-squares estimate
    given the kernel is substituted wherever a trend is needed.
    """

    lengthscales: np.ndarray
    signal_variance: float
    trend: float | None = None

    def __post_init__(self):
        object.__setattr__(
            self, "lengthscales", _check_lengthscales(self.lengthscales)
        )
        if self.signal_variance <= 0.0 or not np.isfinite(self.signal_variance):
            raise InvalidHyperparameterError(
                f"signal_variance must be strictly positive, got {self.signal_variance}"
            )


def _chol_or_raise(C: np.ndarray) -> np.ndarray:
    try:
        return cholesky(C, lower=True, check_finite=False)
    except LinAlgError as exc:
        raise FactorizationError(
            f"covariance matrix of size {C.shape[0]} is not positive definite: {exc}"
        ) from exc


def _gls_trend(L: np.ndarray, y: np.ndarray) -> float:
    ones = np.ones_like(y)
    Ci_y = cho_solve((L, True), y, check_finite=False)
    Ci_1 = cho_solve((L, True), ones, check_finite=False)
    return float((ones @ Ci_y) / (ones @ Ci_1))


def log_marginal_likelihood(
    hp: Hyperparams, dataset: Dataset, jitter: float = 0.0
) -> float:
    """Gaussian log marginal likelihood of the data under the kernel.

    ``jitter`` is an absolute value added to the covariance diagonal.  Raises
    :class:`FactorizationError` when the covariance cannot be factorized (for
    example, duplicated observations with zero jitter).
    """
    value, _ = _lml_and_grad(hp, dataset, jitter, want_grad=False)
    return value


def log_marginal_likelihood_gradient(
    hp: Hyperparams, dataset: Dataset, jitter: float = 0.0
) -> np.ndarray:
    """Gradient of the log marginal likelihood.

    Components are with respect to ``log lengthscales`` (one per dimension)
    followed by ``log signal_variance``, holding the absolute jitter fixed.
    With ``trend=None`` the trend is profiled; the gradient of the profiled
    likelihood coincides with the partial gradient at the optimal trend.
    """
    _, grad = _lml_and_grad(hp, dataset, jitter, want_grad=True)
    return grad


def _lml_and_grad(
    hp: Hyperparams, dataset: Dataset, jitter: float, want_grad: bool
) -> tuple[float, np.ndarray | None]:
    if len(dataset) == 0:
        raise ValueError("dataset must be nonempty")
    if jitter < 0.0:
        raise InvalidHyperparameterError("jitter must be nonnegative")
    X, y = dataset.points, dataset.values
    t = len(dataset)
    s2 = hp.signal_variance
    K = s2 * _corr_matrix(X, hp.lengthscales)
    C = K + jitter * np.eye(t)
    L = _chol_or_raise(C)
    trend = _gls_trend(L, y) if hp.trend is None else float(hp.trend)
    resid = y - trend
    alpha = cho_solve((L, True), resid, check_finite=False)
    logdet = 2.0 * float(np.log(np.diag(L)).sum())
    value = -0.5 * float(resid @ alpha) - 0.5 * logdet - 0.5 * t * LOG_2PI
    if not want_grad:
        return value, None

    Cinv = cho_solve((L, True), np.eye(t), check_finite=False)
    Z = X / hp.lengthscales
    diff = Z[:, None, :] - Z[None, :, :]
    r2 = np.einsum("ijk,ijk->ij", diff, diff)
    r = np.sqrt(r2)
    E = np.exp(-SQRT5 * r)
    # d k / d log(ell_j) = (5/3) s2 (1 + sqrt5 r) E * (scaled diff_j)^2
    W = (5.0 / 3.0) * s2 * (1.0 + SQRT5 * r) * E
    grad = np.empty(len(hp.lengthscales) + 1)
    for j in range(len(hp.lengthscales)):
        dC = W * (diff[:, :, j] ** 2)
        grad[j] = 0.5 * (alpha @ dC @ alpha - float(np.vdot(Cinv, dC)))
    # d C / d log(s2) = K = C - jitter I
    dC = C - jitter * np.eye(t)
    grad[-1] = 0.5 * (alpha @ dC @ alpha - float(np.vdot(Cinv, dC)))
    return value, grad


# ---------------------------------------------------------------------------
# fitted model
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class FitInfo:
    """Per-fit diagnostics kept for reproducibility checks."""

    start_lengthscales: np.ndarray
    start_lmls: np.ndarray
    chosen_start: int
    jitter_rel: float


@dataclass(frozen=True)
class GPModel:
    """Trained surrogate: hyperparameters plus a cached factorization.

    Models are immutable once built; refitting produces a new instance.  A
    model constructed without a factorization (directly via the dataclass) is
    considered unfitted and cannot produce posteriors.
    """

    trend: float
    lengthscales: np.ndarray
    signal_variance: float
    jitter: float
    training_data: Dataset
    log_likelihood: float = np.nan
    chol: np.ndarray | None = None
    alpha: np.ndarray | None = None
    fit_info: FitInfo | None = None

    @classmethod
    def build(
        cls,
        dataset: Dataset,
        hp: Hyperparams,
        jitter: float = 0.0,
        fit_info: FitInfo | None = None,
    ) -> "GPModel":
        """Factorize the covariance for the given hyperparameters."""
        t = len(dataset)
        C = hp.signal_variance * _corr_matrix(dataset.points, hp.lengthscales)
        C[np.diag_indices(t)] += jitter
        L = _chol_or_raise(C)
        trend = _gls_trend(L, dataset.values) if hp.trend is None else float(hp.trend)
        alpha = cho_solve((L, True), dataset.values - trend, check_finite=False)
        lml = log_marginal_likelihood(
            Hyperparams(hp.lengthscales, hp.signal_variance, trend), dataset, jitter
        )
        return cls(
            trend=trend,
            lengthscales=np.asarray(hp.lengthscales, dtype=float),
            signal_variance=float(hp.signal_variance),
            jitter=float(jitter),
            training_data=dataset,
            log_likelihood=lml,
            chol=L,
            alpha=alpha,
            fit_info=fit_info,
        )

    @property
    def is_fitted(self) -> bool:
        return self.chol is not None and self.alpha is not None

    def _require_fitted(self):
        if not self.is_fitted:
            raise NotFittedError("model has no cached factorization; call fit()")

    @property
    def hyperparams(self) -> Hyperparams:
        return Hyperparams(self.lengthscales, self.signal_variance, self.trend)

    def predict(self, X) -> tuple[np.ndarray, np.ndarray]:
        """Posterior mean and variance at a batch of points (m, n)."""
        self._require_fitted()
        X = np.atleast_2d(np.asarray(X, dtype=float))
        k = self.signal_variance * _cross_corr(
            X, self.training_data.points, self.lengthscales
        )
        mean = self.trend + k @ self.alpha
        V = cho_solve((self.chol, True), k.T, check_finite=False)
        var = self.signal_variance - np.einsum("ij,ji->i", k, V)
        return mean, np.maximum(var, 0.0)

    def predict_with_gradients(
        self, x
    ) -> tuple[float, float, np.ndarray, np.ndarray]:
        """Posterior mean, variance, and their gradients at a single point."""
        self._require_fitted()
        x = np.asarray(x, dtype=float)
        Xtr = self.training_data.points
        ls = self.lengthscales
        dx = (x[None, :] - Xtr) / ls
        r2 = np.einsum("ij,ij->i", dx, dx)
        r = np.sqrt(r2)
        E = np.exp(-SQRT5 * r)
        k = self.signal_variance * (1.0 + SQRT5 * r + (5.0 / 3.0) * r2) * E
        # d k_i / d x = -(5/3) s2 (1 + sqrt5 r_i) E_i * dx_i / ls
        W = -(5.0 / 3.0) * self.signal_variance * (1.0 + SQRT5 * r) * E
        dk = (W[:, None] * dx) / ls
        mean = self.trend + float(k @ self.alpha)
        v = cho_solve((self.chol, True), k, check_finite=False)
        var = max(float(self.signal_variance - k @ v), 0.0)
        dmean = dk.T @ self.alpha
        dvar = -2.0 * (dk.T @ v)
        return mean, var, dmean, dvar

    def digest(self) -> str:
        """Short stable digest of the hyperparameters, for run logs."""
        payload = ",".join(
            repr(float(v))
            for v in (self.trend, *self.lengthscales, self.signal_variance, self.jitter)
        )
        return sha256(payload.encode()).hexdigest()[:12]

    def to_dict(self) -> dict:
        return {
            "trend": float(self.trend),
            "lengthscales": [float(v) for v in self.lengthscales],
            "signal_variance": float(self.signal_variance),
            "jitter": float(self.jitter),
            "log_likelihood": float(self.log_likelihood),
        }


def posterior(model: GPModel, x) -> tuple[float, float]:
    """Posterior mean and variance of the surrogate at a single point."""
    if not isinstance(model, GPModel):
        raise TypeError("model must be a GPModel")
    model._require_fitted()
    mean, var = model.predict(np.asarray(x, dtype=float).reshape(1, -1))
    return float(mean[0]), float(var[0])


# ---------------------------------------------------------------------------
# maximum-likelihood fitting
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class FitConfig:
    """Settings for maximum-likelihood hyperparameter estimation."""

    n_starts: int = 5
    lengthscale_bounds: tuple[float, float] = (1e-2, 10.0)
    signal_variance_rel_bounds: tuple[float, float] = (1e-6, 1e3)
    jitter_rel: float = 1e-10
    jitter_rel_max: float = 1e-4
    max_iter: int = 100
    seed: int = 0
    warm_start: Hyperparams | None = None


def _corr_chol_escalate(
    R: np.ndarray, jitter_rel: float, jitter_rel_max: float
) -> tuple[np.ndarray, float]:
    """Cholesky of R + g*I, escalating g by 10x until it factorizes."""
    g = jitter_rel
    t = R.shape[0]
    eye = np.eye(t)
    while True:
        try:
            return cholesky(R + g * eye, lower=True, check_finite=False), g
        except LinAlgError:
            if g >= jitter_rel_max:
                raise FactorizationError(
                    f"covariance not factorizable at maximum relative jitter {jitter_rel_max}"
                ) from None
            g = 1e-10 if g == 0.0 else min(g * 10.0, jitter_rel_max)


def _concentrated_nll(
    log_ell: np.ndarray,
    sqdiffs: np.ndarray,
    y: np.ndarray,
    cfg: FitConfig,
    s2_bounds: tuple[float, float],
):
    """Negative concentrated log-likelihood over log-lengthscales.

    Trend and signal variance are maximized in closed form (the latter clipped
    to its bounds).  Returns value, gradient, and the profiled parameters.
    """
    n, t, _ = sqdiffs.shape
    inv_ell2 = np.exp(-2.0 * log_ell)
    r2 = np.einsum("j,jab->ab", inv_ell2, sqdiffs)
    r = np.sqrt(r2)
    E = np.exp(-SQRT5 * r)
    R = (1.0 + SQRT5 * r + (5.0 / 3.0) * r2) * E
    L, g = _corr_chol_escalate(R, cfg.jitter_rel, cfg.jitter_rel_max)
    ones = np.ones(t)
    Mi_y = cho_solve((L, True), y, check_finite=False)
    Mi_1 = cho_solve((L, True), ones, check_finite=False)
    trend = float((ones @ Mi_y) / (ones @ Mi_1))
    resid = y - trend
    alpha = Mi_y - trend * Mi_1  # = M^{-1} resid
    quad = float(resid @ alpha)
    s2 = float(np.clip(quad / t, *s2_bounds))
    logdet = 2.0 * float(np.log(np.diag(L)).sum())
    nll = 0.5 * (quad / s2 + t * np.log(s2) + logdet + t * LOG_2PI)

    Minv = cho_solve((L, True), np.eye(t), check_finite=False)
    W = (5.0 / 3.0) * (1.0 + SQRT5 * r) * E
    grad = np.empty(n)
    for j in range(n):
        dM = W * (sqdiffs[j] * inv_ell2[j])
        grad[j] = 0.5 * (float(np.vdot(Minv, dM)) - (alpha @ dM @ alpha) / s2)
    return nll, grad, trend, s2, g


def fit(dataset: Dataset, config: FitConfig = FitConfig()) -> GPModel:
    """Fit kernel hyperparameters by multi-start maximum likelihood.

    Starts are the previous optimum (or the geometric mid-range of the
    lengthscale bounds on a cold start) plus space-filling draws in
    log-lengthscale space.  The best start by likelihood wins; ties go to the
    lowest start index.  Raises :class:`FitError` if every start fails.
    """
    if len(dataset) < 2:
        raise ValueError(f"need at least 2 observations to fit, got {len(dataset)}")
    X, y = dataset.points, dataset.values
    n, t = dataset.dim, len(dataset)

    vscale = float(np.var(y))
    if vscale <= 0.0:
        vscale = 1.0
    lo_rel, hi_rel = config.signal_variance_rel_bounds
    s2_bounds = (lo_rel * vscale, hi_rel * vscale)

    lb, ub = np.log(config.lengthscale_bounds[0]), np.log(config.lengthscale_bounds[1])
    if config.warm_start is not None:
        incumbent = np.clip(np.log(config.warm_start.lengthscales), lb, ub)
    else:
        incumbent = np.full(n, 0.5 * (lb + ub))
    n_extra = max(config.n_starts - 1, 0)
    starts = [incumbent]
    if n_extra:
        unit = design.lhs(
            design.DoEConfig(dim=n, n_points=max(n_extra, 2), seed=config.seed)
        )[:n_extra]
        starts.extend(lb + (ub - lb) * row for row in unit)
    starts = np.asarray(starts)

    sqdiffs = (X.T[:, :, None] - X.T[:, None, :]) ** 2

    def objective(log_ell):
        nll, grad, *_ = _concentrated_nll(log_ell, sqdiffs, y, config, s2_bounds)
        return nll, grad

    results = []
    failures = []
    start_lmls = np.full(len(starts), -np.inf)
    for idx, x0 in enumerate(starts):
        try:
            start_lmls[idx] = -_concentrated_nll(x0, sqdiffs, y, config, s2_bounds)[0]
            res = minimize(
                objective,
                x0,
                jac=True,
                method="L-BFGS-B",
                bounds=[(lb, ub)] * n,
                options={"maxiter": config.max_iter},
            )
            nll, _, trend, s2, g = _concentrated_nll(
                res.x, sqdiffs, y, config, s2_bounds
            )
            results.append((nll, idx, res.x, trend, s2, g))
        except FactorizationError as exc:
            failures.append(f"start {idx}: {exc}")

    if not results:
        raise FitError(
            "all hyperparameter starts failed numerically", diagnostics=failures
        )

    best = min(results, key=lambda item: (item[0], item[1]))
    _, idx, log_ell, trend, s2, g = best
    ell = np.exp(log_ell)
    info = FitInfo(
        start_lengthscales=np.exp(starts),
        start_lmls=start_lmls,
        chosen_start=idx,
        jitter_rel=g,
    )
    hp = Hyperparams(ell, s2, trend)
    return GPModel.build(dataset, hp, jitter=g * s2, fit_info=info)
