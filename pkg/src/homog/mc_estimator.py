"""Monte Carlo estimators on rescaled ensembles.

Diffusivity from mean squared displacement, exact one-dimensional
Wasserstein distances to the Gaussian limit, convergence-rate fits in
``eps``, the corrector/martingale decomposition check and decay to
equilibrium.  All resampling uses the package's counter-based streams with
the ``BOOTSTRAP`` purpose, so every confidence interval is reproducible.
"""
from __future__ import annotations

import csv
import enum
import json
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.special import ndtri
from scipy.stats import t as student

from . import rng as rngmod
from .errors import StatisticalPowerError, ValidationError
from .langevin_core import DriftSpec, ModelParams
from .sde_integrator import EnsembleResult, InitialLaw, IntegratorConfig, run_ensemble

MIN_PATHS = 100
RESAMPLES = 1000
PASS_ALPHA = 0.3


def _bootstrap_rng(seed: int, index: int = 0) -> np.random.Generator:
    return rngmod.stream(seed, index, rngmod.BOOTSTRAP)


# -- diffusivity from MSD ----------------------------------------------------

@dataclass(frozen=True, eq=False)
class MSDEstimate:
    K2: np.ndarray
    stderr: np.ndarray
    times: np.ndarray
    paths: int

    def within(self, reference, z: float = 3.0) -> bool:
        return bool(np.all(np.abs(self.K2 - reference) <= z * self.stderr))


def _select_rows(ens: EnsembleResult, times) -> np.ndarray:
    if times is None:
        rows = np.arange(1, ens.times.shape[0])
    else:
        rows = np.array([int(np.argmin(np.abs(ens.times - t))) for t in np.atleast_1d(times)])
    if rows.size == 0 or np.any(ens.times[rows] <= 0):
        raise ValidationError("regression times must be positive recorded times")
    return rows


def msd_slopes(increments: np.ndarray, times: np.ndarray) -> np.ndarray:
    """Per-path contribution ``sum_i t_i d d^T / sum_i t_i^2``, shape (N, n, n).

    Averaging over paths gives the least-squares slope through the origin of
    the empirical second-moment curve.
    """
    t = np.asarray(times, dtype=float)
    outer = np.einsum("pri,prj->prij", increments, increments)
    return np.einsum("r,prij->pij", t, outer) / np.sum(t * t)


def msd_diffusivity(ensemble: EnsembleResult, times=None, resamples: int = RESAMPLES,
                    seed: Optional[int] = None, stream_index: int = 0) -> MSDEstimate:
    """Slope of ``E[(x_eps(t) - x_eps(0))^{(x)2}]`` against ``t`` through the origin.

    Parameters
    ----------
    times : sequence of float, optional
        Recorded rescaled times entering the regression (nearest recorded
        time is used); default all positive recorded times.
    resamples : int
        Bootstrap resamples over paths for the standard errors.

    Raises
    ------
    StatisticalPowerError
        With fewer than 100 paths.
    """
    N = ensemble.path_count
    if N < MIN_PATHS:
        raise StatisticalPowerError(f"msd_diffusivity needs >= {MIN_PATHS} paths, got {N}")
    rows = _select_rows(ensemble, times)
    t = ensemble.times[rows]
    per_path = msd_slopes(ensemble.increments[:, rows, :], t)
    n = per_path.shape[1]
    slope = per_path.mean(axis=0)
    gen = _bootstrap_rng(ensemble.config.seed if seed is None else seed, stream_index)
    flat = per_path.reshape(N, -1)
    boots = np.empty((resamples, n * n))
    for b in range(resamples):
        boots[b] = flat[gen.integers(0, N, N)].mean(axis=0)
    boots = boots.reshape(resamples, n, n)
    boots = 0.5 * (boots + np.swapaxes(boots, 1, 2))
    K2 = 0.5 * (slope + slope.T)
    return MSDEstimate(K2, boots.std(axis=0, ddof=1), t, N)


# -- one-dimensional Wasserstein distances -----------------------------------

def wasserstein_1d(samples, mean: float = 0.0, variance: float = 1.0, p: float = 2.0) -> float:
    """``W_p`` between the empirical law of ``samples`` and ``N(mean, variance)``.

    Quantile coupling on the midpoint grid ``u_i = (i - 1/2) / N``::

        W_p^p = (1/N) sum_i |x_(i) - mean - sd * Phi^{-1}(u_i)|^p
    """
    x = np.sort(np.asarray(samples, dtype=float).ravel())
    if x.size == 0:
        raise ValidationError("wasserstein_1d needs at least one sample")
    if not variance >= 0:
        raise ValidationError(f"variance must be nonnegative, got {variance}")
    if not p >= 1:
        raise ValidationError(f"p must be >= 1, got {p}")
    N = x.size
    u = (np.arange(1, N + 1) - 0.5) / N
    q = mean + np.sqrt(variance) * ndtri(u)
    return float(np.mean(np.abs(x - q) ** p) ** (1.0 / p))


def wasserstein_empirical(a, b, p: float = 2.0) -> float:
    """``W_p`` between two empirical laws with the same number of atoms."""
    a = np.sort(np.asarray(a, dtype=float).ravel())
    b = np.sort(np.asarray(b, dtype=float).ravel())
    if a.size != b.size or a.size == 0:
        raise ValidationError("empirical W_p needs two non-empty samples of equal size")
    if not p >= 1:
        raise ValidationError(f"p must be >= 1, got {p}")
    return float(np.mean(np.abs(a - b) ** p) ** (1.0 / p))


# -- projections ---------------------------------------------------------------

class FunctionalKind(enum.Enum):
    ENDPOINT = "endpoint"
    TIME_AVERAGE = "time-average"


@dataclass(frozen=True, eq=False)
class ProjectionFunctional:
    """A finite ``R^n``-valued measure on ``[0, T]`` acting on paths.

    ``ENDPOINT``: ``<l, x> = k . x(T)``.  ``TIME_AVERAGE``:
    ``<l, x> = sum_i w_i k . x(t_i)`` over the recorded times ``t_i`` (a
    discretized density ``w(t) dt``).  Total variation ``|k| sum |w_i|`` must
    not exceed 1.
    """

    k: np.ndarray
    kind: FunctionalKind = FunctionalKind.ENDPOINT
    weights: Optional[np.ndarray] = None

    def __post_init__(self):
        k = np.atleast_1d(np.asarray(self.k, dtype=float))
        object.__setattr__(self, "k", k)
        object.__setattr__(self, "kind", FunctionalKind(self.kind))
        if self.kind is FunctionalKind.TIME_AVERAGE:
            if self.weights is None:
                raise ValidationError("a time-average functional needs weights")
            object.__setattr__(self, "weights", np.asarray(self.weights, dtype=float).ravel())
        if self.total_variation > 1.0 + 1e-12:
            raise ValidationError(f"functional norm {self.total_variation:.6g} exceeds 1")

    @classmethod
    def endpoint(cls, k):
        return cls(k)

    @classmethod
    def time_average(cls, k, times, T=None):
        """Uniform density ``1/T`` on ``[0, T]`` discretized by the trapezoid rule."""
        t = np.asarray(times, dtype=float)
        T = t[-1] if T is None else T
        w = np.zeros_like(t)
        dt = np.diff(t)
        w[:-1] += 0.5 * dt
        w[1:] += 0.5 * dt
        return cls(k, FunctionalKind.TIME_AVERAGE, w / T)

    @property
    def total_variation(self) -> float:
        scale = float(np.linalg.norm(self.k))
        if self.kind is FunctionalKind.ENDPOINT:
            return scale
        return scale * float(np.sum(np.abs(self.weights)))

    def project(self, ensemble: EnsembleResult) -> np.ndarray:
        if self.k.shape[0] != ensemble.params.n:
            raise ValidationError("functional dimension does not match the ensemble")
        proj = ensemble.x_eps @ self.k  # (N, R)
        if self.kind is FunctionalKind.ENDPOINT:
            return proj[:, -1]
        if self.weights.shape[0] != proj.shape[1]:
            raise ValidationError("weights must match the recorded times")
        return proj @ self.weights

    def limit_variance(self, K2, times) -> float:
        """Variance of ``<l, B>`` for a Brownian motion with covariance ``K2``."""
        s = float(self.k @ np.asarray(K2, dtype=float) @ self.k)
        t = np.asarray(times, dtype=float)
        if self.kind is FunctionalKind.ENDPOINT:
            return s * t[-1]
        w = self.weights
        return s * float(w @ np.minimum.outer(t, t) @ w)


def projection_distance(ensemble: EnsembleResult, functional: ProjectionFunctional, K2,
                        p: float = 2.0) -> float:
    """``W_p`` between the projected ensemble and its Gaussian limit ``N(0, <l, K2 l>)``."""
    samples = functional.project(ensemble)
    return wasserstein_1d(samples, 0.0, functional.limit_variance(K2, ensemble.times), p)


def projection_distance_ci(ensemble: EnsembleResult, functional: ProjectionFunctional, K2,
                           p: float = 2.0, resamples: int = RESAMPLES, level: float = 0.95,
                           seed: Optional[int] = None, stream_index: int = 0):
    """Distance and percentile-bootstrap interval ``(d, lo, hi)`` over paths."""
    samples = functional.project(ensemble)
    var = functional.limit_variance(K2, ensemble.times)
    d = wasserstein_1d(samples, 0.0, var, p)
    gen = _bootstrap_rng(ensemble.config.seed if seed is None else seed, stream_index)
    N = samples.shape[0]
    boots = np.array([wasserstein_1d(samples[gen.integers(0, N, N)], 0.0, var, p)
                      for _ in range(resamples)])
    a = 0.5 * (1.0 - level)
    lo, hi = np.quantile(boots, [a, 1.0 - a])
    return d, float(lo), float(hi)


# -- rate fits -----------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class RateStudyResult:
    eps_grid: np.ndarray
    distances: np.ndarray
    ci_lo: np.ndarray
    ci_hi: np.ndarray
    sample_sizes: np.ndarray
    alpha_hat: float
    alpha_ci: tuple
    constant: float
    monotone: bool
    passed: bool
    extra: dict = field(default_factory=dict)

    def verdict(self) -> dict:
        return {"alpha_hat": self.alpha_hat, "ci": list(self.alpha_ci), "pass": bool(self.passed),
                "monotone": bool(self.monotone), "constant": self.constant, **self.extra}

    def to_csv(self, path, header_lines=()) -> None:
        with open(path, "w", newline="") as fh:
            for line in header_lines:
                fh.write(f"# {line}\n")
            w = csv.writer(fh)
            w.writerow(["eps", "distance", "ci_lo", "ci_hi", "paths"])
            for row in zip(self.eps_grid, self.distances, self.ci_lo, self.ci_hi, self.sample_sizes):
                w.writerow([f"{v:.17g}" for v in row[:4]] + [int(row[4])])

    def to_json(self, **kwargs) -> str:
        return json.dumps(self.verdict(), **kwargs)


def rate_fit(eps_grid, distances, cis=None, sample_sizes=None,
             threshold: float = PASS_ALPHA) -> RateStudyResult:
    """Fit ``distance ~ C eps^alpha`` by least squares in log-log coordinates.

    ``cis`` is a sequence of ``(lo, hi)``; when every interval has positive
    width the fit is weighted by the implied log-scale variances.  The
    verdict passes when ``alpha_hat >= threshold`` and the distances do not
    increase as ``eps`` decreases beyond what the intervals allow
    (consecutive intervals overlap).

    Raises
    ------
    StatisticalPowerError
        With fewer than three grid points.
    """
    eps = np.asarray(eps_grid, dtype=float)
    d = np.asarray(distances, dtype=float)
    if eps.size < 3:
        raise StatisticalPowerError(f"a rate fit needs >= 3 eps values, got {eps.size}")
    if eps.shape != d.shape:
        raise ValidationError("eps grid and distances differ in length")
    if np.any(np.diff(eps) >= 0):
        raise ValidationError("eps grid must be strictly decreasing")
    if np.any(d <= 0) or np.any(eps <= 0):
        raise ValidationError("distances and eps must be positive for a log-log fit")
    if cis is None:
        lo = hi = d.copy()
    else:
        cis = np.asarray(cis, dtype=float).reshape(-1, 2)
        lo, hi = cis[:, 0], cis[:, 1]
    X, Y = np.log(eps), np.log(d)
    width = np.log(np.maximum(hi, 1e-300)) - np.log(np.maximum(lo, 1e-300))
    if cis is not None and np.all(width > 0) and np.all(lo > 0):
        w = (3.92 / width) ** 2
    else:
        w = np.ones_like(X)
    xm = np.sum(w * X) / np.sum(w)
    ym = np.sum(w * Y) / np.sum(w)
    sxx = np.sum(w * (X - xm) ** 2)
    alpha = float(np.sum(w * (X - xm) * (Y - ym)) / sxx)
    logc = ym - alpha * xm
    resid = Y - (logc + alpha * X)
    dof = X.size - 2
    if cis is not None and np.all(width > 0):
        # variances known from the intervals, inflated if residuals are larger
        chi2 = float(np.sum(w * resid**2)) / dof
        se = np.sqrt(max(chi2, 1.0) / sxx)
    else:
        se = np.sqrt(float(np.sum(w * resid**2)) / dof / sxx)
    q = float(student.ppf(0.975, dof))
    monotone = bool(np.all((d[1:] <= d[:-1]) | (lo[1:] <= hi[:-1])))
    passed = bool(monotone and alpha >= threshold)
    sizes = np.zeros(eps.size, dtype=int) if sample_sizes is None else np.asarray(sample_sizes)
    return RateStudyResult(eps, d, np.asarray(lo, float), np.asarray(hi, float), sizes, alpha,
                           (float(alpha - q * se), float(alpha + q * se)), float(np.exp(logc)), monotone, passed)


# -- martingale decomposition --------------------------------------------------

@dataclass(frozen=True, eq=False)
class MartingaleReport:
    identity_error: float
    qv: float
    qv_stderr: float
    qv_target: float
    qv_relative_error: float
    corrector_sup_mean: float
    corrector_sup_quantiles: tuple
    corrector_fraction: float
    extrapolations: int
    martingale: np.ndarray = field(repr=False, default=None)
    corrector: np.ndarray = field(repr=False, default=None)

    def to_dict(self) -> dict:
        return {
            "identity_error": self.identity_error,
            "qv": self.qv,
            "qv_stderr": self.qv_stderr,
            "qv_target": self.qv_target,
            "qv_relative_error": self.qv_relative_error,
            "corrector_sup_mean": self.corrector_sup_mean,
            "corrector_sup_quantiles": list(self.corrector_sup_quantiles),
            "corrector_fraction": self.corrector_fraction,
            "extrapolations": self.extrapolations,
        }


def martingale_decomposition_check(ensemble: EnsembleResult, phi: Callable, params: ModelParams,
                                   eps: float, K2, k) -> MartingaleReport:
    """Split ``x_eps = eps x + eps I_1 + M`` along every recorded path.

    ``phi(x, y)`` maps canonical positions and velocities of shape (P, n)
    to corrector values (P, n); a :class:`CellSolution` ``evaluate`` method
    fits.  With ``eps I_1(t) = -eps (Phi(t) - Phi(0))`` the martingale part is
    ``M(t) = x_eps(t) - eps x + eps (Phi(t) - Phi(0))``.

    Reported: the pathwise identity residual; the mean over paths of the
    discrete quadratic variation of ``<k, M>`` on the recording grid against
    ``T <k, K2 k>``; statistics of ``sup_t |eps I_1|``; the number of
    corrector evaluations beyond ``|y| = 6 sigma``.  Martingale increments
    are uncorrelated, so the discrete quadratic variation is unbiased for
    any recording grid.
    """
    from .spectral.solver import VALIDATED_Y

    k = np.atleast_1d(np.asarray(k, dtype=float))
    N, R, n = ensemble.x_eps.shape
    if ensemble.eps != eps:
        raise ValidationError("eps does not match the ensemble")
    if R < 2:
        raise ValidationError("the decomposition needs recorded interior times")
    flat_x = ensemble.canon.reshape(-1, n)
    flat_y = ensemble.y.reshape(-1, n)
    extrap = int(np.sum(np.any(np.abs(flat_y) > VALIDATED_Y * params.sigma, axis=1)))
    try:
        vals = phi(flat_x, flat_y, warn=False)
    except TypeError:
        vals = phi(flat_x, flat_y)
    Phi = np.asarray(vals, dtype=float).reshape(N, R, n)
    start = ensemble.x_eps[:, :1, :]
    corrector = -eps * (Phi - Phi[:, :1, :])          # eps I_1
    M = ensemble.x_eps - start + eps * (Phi - Phi[:, :1, :])
    residual = ensemble.x_eps - start - corrector - M
    scale = max(1.0, float(np.max(np.abs(ensemble.x_eps))))
    identity_error = float(np.max(np.abs(residual))) / scale
    inc = np.diff(M @ k, axis=1)
    qv_paths = np.sum(inc**2, axis=1)
    qv = float(qv_paths.mean())
    qv_se = float(qv_paths.std(ddof=1) / np.sqrt(N)) if N > 1 else float("nan")
    T = float(ensemble.times[-1])
    target = T * float(k @ np.asarray(K2, dtype=float) @ k)
    sup_corr = np.max(np.linalg.norm(corrector, axis=2), axis=1)
    sup_disp = np.max(np.linalg.norm(ensemble.x_eps - start, axis=2), axis=1)
    frac = float(sup_corr.mean() / sup_disp.mean()) if sup_disp.mean() > 0 else float("nan")
    quant = tuple(float(q) for q in np.quantile(sup_corr, [0.5, 0.9, 0.99]))
    rel = abs(qv - target) / target if target > 0 else float("nan")
    return MartingaleReport(identity_error, qv, qv_se, target, rel, float(sup_corr.mean()),
                            quant, frac, extrap, M, corrector)


# -- decay to equilibrium ------------------------------------------------------

@dataclass(frozen=True, eq=False)
class DecayResult:
    times: np.ndarray
    y0_grid: np.ndarray
    curves: np.ndarray
    stderr: np.ndarray
    rates: np.ndarray
    rate_cis: np.ndarray

    @property
    def decaying(self) -> bool:
        """Every fitted rate is positive with its interval above zero."""
        ok = np.isnan(self.rates) | (self.rate_cis[:, 0] > 0)
        return bool(np.all(ok))


def _fit_decay(t, c, se):
    sig = np.abs(c) > 3.0 * se
    sig &= np.abs(c) > 0
    if np.sum(sig) < 2:
        return None
    tt, cc, ss = t[sig], np.abs(c[sig]), se[sig]
    positive = ss > 0
    floor = np.min(ss[positive] / cc[positive]) if np.any(positive) else 1.0
    rel = np.maximum(ss / cc, floor)
    w = 1.0 / rel**2
    if tt.size == 2:
        rate = -(np.log(cc[1]) - np.log(cc[0])) / (tt[1] - tt[0])
        se_rate = float(np.sqrt(rel[0] ** 2 + rel[1] ** 2) / (tt[1] - tt[0]))
        return rate, (rate - 2 * se_rate, rate + 2 * se_rate)
    tm = np.sum(w * tt) / np.sum(w)
    sxx = np.sum(w * (tt - tm) ** 2)
    ym = np.sum(w * np.log(cc)) / np.sum(w)
    slope = np.sum(w * (tt - tm) * (np.log(cc) - ym)) / sxx
    resid = np.log(cc) - (ym + slope * (tt - tm))
    chi2 = float(np.sum(w * resid**2)) / max(tt.size - 2, 1)
    se_slope = float(np.sqrt(max(chi2, 1.0) / sxx))
    return -slope, (-slope - 2 * se_slope, -slope + 2 * se_slope)


def ergodicity_decay(psi: Callable, params: ModelParams, drift: DriftSpec,
                     config: IntegratorConfig, y0_grid, mu_mean: float, x0=None,
                     records: int = 20) -> DecayResult:
    """``E psi(x_t, y_t) - int psi dmu`` from fixed starts ``(x0, y0)``.

    ``psi(x, y)`` takes canonical positions and velocities of shape (P, n).
    For each ``y0`` a log-linear fit over the significant part of the curve
    (``|curve| > 3`` standard errors) gives an exponential rate with an
    approximate two-sigma interval; it is ``nan`` when the curve is zero to
    within noise from the start.

    Raises
    ------
    StatisticalPowerError
        If the curve is nonzero but never resolved above 3 standard errors.
    """
    n = params.n
    y0_grid = np.atleast_2d(np.asarray(y0_grid, dtype=float)).reshape(-1, n)
    curves, errs, rates, cis = [], [], [], []
    for i, y0 in enumerate(y0_grid):
        cfg = IntegratorConfig(config.dt, config.T_final, config.scheme,
                               config.seed + i, config.path_count, config.chunk_size, config.workers)
        ens = run_ensemble(params, drift, cfg, 1.0, initial_law=InitialLaw.FIXED_POINT,
                           x0=x0, y0=y0, records=records)
        N, R, _ = ens.canon.shape
        vals = np.asarray(psi(ens.canon.reshape(-1, n), ens.y.reshape(-1, n)), dtype=float).reshape(N, R)
        curve = vals.mean(axis=0) - mu_mean
        se = vals.std(axis=0, ddof=1) / np.sqrt(N) if N > 1 else np.zeros(R)
        fit = _fit_decay(ens.times, curve, se)
        if fit is None:
            if np.max(np.abs(curve)) > 1e-12:
                raise StatisticalPowerError(
                    "observable variance too large: fewer than two time points resolved "
                    "above 3 standard errors")
            rates.append(np.nan)
            cis.append((np.nan, np.nan))
        else:
            rates.append(fit[0])
            cis.append(fit[1])
        curves.append(curve)
        errs.append(se)
    return DecayResult(ens.times, y0_grid, np.array(curves), np.array(errs), np.array(rates),
                       np.array(cis, dtype=float))
