"""Exact Gaussian-process regression on 2-D positions.

Targets are standardized internally; kernel signal variance and noise variance
are reported in output units.  Hyperparameters are chosen by maximizing the log
marginal likelihood: a log-spaced grid screen followed by bounded Nelder-Mead.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_solve, solve_triangular
from scipy.optimize import minimize
from scipy.spatial.distance import cdist, pdist

from .fields import Grid, ScalarField2D

FAMILIES = ("rbf", "matern32", "matern52")
_LOG_2PI = math.log(2 * math.pi)


class GPError(ValueError):
    """Invalid training data or a Gram matrix that stays singular after jitter."""


@dataclass(frozen=True)
class KernelSpec:
    family: str = "rbf"
    lengthscale: float = 1.0
    signal_variance: float = 1.0

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown kernel family {self.family!r}")
        if not (self.lengthscale > 0 and self.signal_variance > 0):
            raise ValueError("lengthscale and signal_variance must be positive")


def _correlation(family: str, r: np.ndarray, lengthscale: float) -> np.ndarray:
    if family == "rbf":
        return np.exp(-0.5 * (r / lengthscale) ** 2)
    if family == "matern32":
        s = math.sqrt(3) * r / lengthscale
        return (1 + s) * np.exp(-s)
    if family == "matern52":
        s = math.sqrt(5) * r / lengthscale
        return (1 + s + s * s / 3) * np.exp(-s)
    raise ValueError(f"unknown kernel family {family!r}")


def kernel_eval(spec: KernelSpec, a, b) -> float:
    r = math.dist(tuple(map(float, a)), tuple(map(float, b)))
    return float(spec.signal_variance * _correlation(spec.family, np.asarray(r), spec.lengthscale))


def kernel_matrix(spec: KernelSpec, A, B) -> np.ndarray:
    r = cdist(np.asarray(A, dtype=float).reshape(-1, 2), np.asarray(B, dtype=float).reshape(-1, 2))
    return spec.signal_variance * _correlation(spec.family, r, spec.lengthscale)


def _factorize(K: np.ndarray):
    """Cholesky with escalating diagonal jitter; returns (L, jitter)."""
    n = len(K)
    scale = np.trace(K) / n
    jitter = 1e-10 * scale
    while jitter <= 1e-4 * scale * (1 + 1e-12):
        try:
            L = np.linalg.cholesky(K + jitter * np.eye(n))
            return L, jitter
        except np.linalg.LinAlgError:
            jitter *= 10
    raise GPError("Gram matrix not positive definite even with maximum jitter")


@dataclass(frozen=True)
class GpModel:
    kernel: KernelSpec
    noise_variance: float
    train_x: np.ndarray
    train_y: np.ndarray  # standardized
    y_mean: float
    y_std: float
    factor: np.ndarray
    jitter: float  # standardized units
    alpha: np.ndarray = field(repr=False)

    @property
    def std_kernel(self) -> KernelSpec:
        """Kernel in standardized target units."""
        return KernelSpec(self.kernel.family, self.kernel.lengthscale,
                          self.kernel.signal_variance / self.y_std**2)

    @property
    def std_noise(self) -> float:
        return self.noise_variance / self.y_std**2

    def gram(self) -> np.ndarray:
        """Regularized Gram matrix K + noise*I + jitter*I (standardized units)."""
        K = kernel_matrix(self.std_kernel, self.train_x, self.train_x)
        return K + (self.std_noise + self.jitter) * np.eye(len(K))

    def to_dict(self) -> dict:
        return {
            "kernel": {"family": self.kernel.family, "lengthscale": self.kernel.lengthscale,
                       "signal_variance": self.kernel.signal_variance},
            "noise_variance": self.noise_variance,
            "y_mean": self.y_mean,
            "y_std": self.y_std,
            "train_x": self.train_x.tolist(),
            "train_y": (self.train_y * self.y_std + self.y_mean).tolist(),
        }

    @classmethod
    def from_dict(cls, d) -> "GpModel":
        return condition(d["train_x"], d["train_y"], KernelSpec(**d["kernel"]), d["noise_variance"])

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


def _check_data(X, y):
    X = np.asarray(X, dtype=float).reshape(-1, 2)
    y = np.asarray(y, dtype=float).ravel()
    if len(X) != len(y):
        raise GPError(f"{len(X)} positions but {len(y)} targets")
    if len(y) < 2:
        raise GPError("need at least 2 observations")
    if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y))):
        raise GPError("non-finite positions or targets")
    if len(np.unique(X, axis=0)) < 2:
        raise GPError("need at least 2 distinct positions")
    return X, y


def _standardize(y):
    mean = float(y.mean())
    std = float(y.std())
    if not std > 0:
        std = 1.0
    return (y - mean) / std, mean, std


def condition(X, y, kernel: KernelSpec, noise_variance: float, *, y_mean: float | None = None,
              y_std: float | None = None) -> GpModel:
    """Condition a GP with fixed hyperparameters (output units) on data."""
    X, y = _check_data(X, y)
    if noise_variance < 0:
        raise GPError("noise_variance must be non-negative")
    if y_mean is None:
        ys, y_mean, y_std = _standardize(y)
    else:
        ys = (y - y_mean) / y_std
    kstd = KernelSpec(kernel.family, kernel.lengthscale, kernel.signal_variance / y_std**2)
    K = kernel_matrix(kstd, X, X) + noise_variance / y_std**2 * np.eye(len(X))
    L, jitter = _factorize(K)
    alpha = cho_solve((L, True), ys)
    for a in (X, ys, L, alpha):
        a.setflags(write=False)
    return GpModel(kernel, float(noise_variance), X, ys, y_mean, y_std, L, jitter, alpha)


@dataclass(frozen=True)
class FitConfig:
    """Search box for hyperparameters.

    Signal and noise bounds are multiples of the target variance.  When
    ``lengthscale_bounds`` is None it defaults to the smallest and largest
    pairwise distance in the training positions.
    """

    lengthscale_bounds: tuple[float, float] | None = None
    signal_bounds: tuple[float, float] = (1e-3, 1e3)
    noise_bounds: tuple[float, float] = (1e-6, 1.0)
    n_grid: int = 8
    max_evals: int = 200


def _lml_chol(ys, L):
    alpha = cho_solve((L, True), ys)
    return float(-0.5 * ys @ alpha - np.log(np.diag(L)).sum() - 0.5 * len(ys) * _LOG_2PI)


def fit(X, y, family: str = "rbf", config: FitConfig | None = None) -> GpModel:
    """Maximum-likelihood GP fit.  Deterministic: no random restarts."""
    config = config or FitConfig()
    X, y = _check_data(X, y)
    ys, y_mean, y_std = _standardize(y)
    n = len(ys)
    dists = pdist(X)
    if config.lengthscale_bounds is None:
        lo_l, hi_l = float(dists[dists > 0].min()), float(dists.max())
    else:
        lo_l, hi_l = map(float, config.lengthscale_bounds)
    hi_l = max(hi_l, lo_l)
    bounds = np.log([(lo_l, hi_l), config.signal_bounds, config.noise_bounds])
    R_dist = cdist(X, X)

    # coarse screen: one eigendecomposition per lengthscale covers every (s2, sn2) pair
    grids = [np.linspace(lo, hi, config.n_grid) for lo, hi in bounds]
    best = (-np.inf, None)
    for log_l in grids[0]:
        lam, Q = np.linalg.eigh(_correlation(family, R_dist, math.exp(log_l)))
        lam = np.clip(lam, 0.0, None)
        proj2 = (Q.T @ ys) ** 2
        for log_s in grids[1]:
            s2 = math.exp(log_s)
            for log_n in grids[2]:
                sn2 = math.exp(log_n)
                d = s2 * lam + sn2 + 1e-10 * (s2 + sn2)
                val = -0.5 * float((proj2 / d).sum()) - 0.5 * float(np.log(d).sum()) - 0.5 * n * _LOG_2PI
                if val > best[0]:
                    best = (val, np.array([log_l, log_s, log_n]))

    def neg_lml(theta):
        l, s2, sn2 = np.exp(theta)
        K = s2 * _correlation(family, R_dist, l) + sn2 * np.eye(n)
        try:
            L, _ = _factorize(K)
        except GPError:
            return np.inf
        return -_lml_chol(ys, L)

    res = minimize(neg_lml, best[1], method="Nelder-Mead", bounds=bounds,
                   options={"maxfev": config.max_evals, "xatol": 1e-4, "fatol": 1e-8})
    theta = res.x if res.fun <= neg_lml(best[1]) else best[1]
    l, s2, sn2 = np.exp(theta)
    kernel = KernelSpec(family, float(l), float(s2) * y_std**2)
    return condition(X, y, kernel, float(sn2) * y_std**2)


def predict(model: GpModel, Xq) -> tuple[np.ndarray, np.ndarray]:
    """Latent posterior mean and variance (output units) at positions ``Xq``."""
    if not isinstance(model, GpModel):
        raise GPError("posterior requires a fitted GpModel")
    Xq = np.asarray(Xq, dtype=float).reshape(-1, 2)
    kstd = model.std_kernel
    mean = np.empty(len(Xq))
    var = np.empty(len(Xq))
    for start in range(0, len(Xq), 4096):
        sl = slice(start, start + 4096)
        Ks = kernel_matrix(kstd, model.train_x, Xq[sl])
        mean[sl] = Ks.T @ model.alpha
        v = solve_triangular(model.factor, Ks, lower=True)
        var[sl] = kstd.signal_variance - np.einsum("ij,ij->j", v, v)
    var = np.clip(var, 0.0, None)
    return mean * model.y_std + model.y_mean, var * model.y_std**2


@dataclass
class Posterior:
    mean: ScalarField2D
    std: ScalarField2D


def posterior(model: GpModel, grid: Grid) -> Posterior:
    """Posterior mean and standard deviation at every pixel centre of ``grid``."""
    mean, var = predict(model, grid.centers())
    return Posterior(ScalarField2D.on(grid, mean), ScalarField2D.on(grid, np.sqrt(var)))


def log_marginal_likelihood(model: GpModel, X=None, y=None) -> float:
    """Log evidence of the model's hyperparameters on standardized targets.

    With ``X``/``y`` given, the model's hyperparameters and standardization
    constants are applied to that data instead of the training set.
    """
    if X is None:
        return _lml_chol(np.asarray(model.train_y), model.factor)
    other = condition(X, y, model.kernel, model.noise_variance, y_mean=model.y_mean, y_std=model.y_std)
    return _lml_chol(np.asarray(other.train_y), other.factor)
