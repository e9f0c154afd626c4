"""Invariant density, cell problem and effective diffusivity.

Everything is computed in the Gaussian-weighted representation: the
invariant density is stored as ``g = rho / gamma`` expanded on the same basis
as the generator, with ``gamma = N(0, s^2 I)`` and ``s^2 = sigma^2 / 2``.
For zero drift ``g = 1``.  Integrals against ``mu`` then become coefficient
pairings, ``int f dmu = sum_{k,a} F[k, a] conj(G[k, a])``.

Both the null vector ``A^H G = 0`` and the cell problems ``-A Phi = b`` are
solved through one bordered matrix ``[[A, e0], [e0^T, 0]]`` (see
:meth:`SpectralOperator.bordered`), which is non-singular exactly when the
kernel is one-dimensional.  The border removes the kernel directly, so no
shifted inverse iteration is needed.
"""
from __future__ import annotations

import csv
import itertools
import json
import warnings
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy import integrate

from ..errors import (DegeneracyError, HomogError, SolverError,
                      TruncationError, UnsupportedError)
from ..langevin_core import DriftSpec, ModelParams, PhaseState, eval_potential
from .basis import Basis, CoefficientField, TensorQuadrature
from .operator import SpectralOperator, assemble_generator

DEFAULT_CUTOFFS = {1: (16, 128), 2: (4, 40)}
DENSITY_RESIDUAL_TOL = 1e-10
CELL_RESIDUAL_TOL = 1e-9
CENTERING_TOL = 1e-10
ASYMMETRY_TOL = 1e-9
NEGATIVE_TOL = 1e-10
GAP_TOL = 1e-8
QUAD_CUTOFF = 8.0
VALIDATED_Y = 6.0  # in units of sigma


def default_cutoffs(n: int):
    try:
        return DEFAULT_CUTOFFS[n]
    except KeyError:
        raise UnsupportedError(f"spectral solves are limited to n <= 2 (got n={n})") from None


def pairing(f: CoefficientField, g: CoefficientField) -> complex:
    """``int f g dx dgamma`` for real ``g`` (coefficient contraction)."""
    return complex(np.vdot(g.coeffs, f.coeffs))


def _grid_axes(basis: Basis, x_points: int, y_points: int, half=None):
    xs = np.arange(x_points) / x_points
    half = VALIDATED_Y * basis.sigma if half is None else half
    ys = np.linspace(-half, half, y_points)
    n = basis.n
    xgrid = np.array(list(itertools.product(xs, repeat=n)))
    ygrid = np.array(list(itertools.product(ys, repeat=n)))
    return xgrid, ygrid


def _grid_values(field: CoefficientField, xgrid, ygrid) -> np.ndarray:
    b = field.basis
    return (b.eval_fourier(xgrid) @ field.coeffs @ b.eval_hermite(ygrid).T).real


@dataclass(frozen=True, eq=False)
class InvariantDensity:
    """Normalized invariant law in weighted form, ``rho = gamma * g``.

    Attributes
    ----------
    g : CoefficientField
        Coefficients of ``rho / gamma``; ``g.coeffs[k=0, a=0] == 1``.
    residual : float
        ``||A^H G|| / ||G||``.
    min_density : float
        Smallest value of ``rho`` on the positivity grid (before clipping).
    gap : float or None
        Smallest singular value of the bordered operator, if computed.
    """

    operator: SpectralOperator
    g: CoefficientField
    residual: float
    min_density: float
    gap: Optional[float] = None

    @property
    def basis(self) -> Basis:
        return self.g.basis

    @property
    def params(self) -> ModelParams:
        return self.operator.params

    def weight(self, x, y) -> np.ndarray:
        """``g(x, y)`` at points of shape ``(P, n)``."""
        return self.g.evaluate(x, y)

    def density(self, x, y) -> np.ndarray:
        """Lebesgue density of ``mu`` at the given points, clipped at zero."""
        vals = self.g.evaluate(x, y) * self.basis.gaussian_weight(y)
        return np.clip(vals, 0.0, None)

    def expectation(self, f: CoefficientField) -> float:
        """``int f dmu`` for a real field on the same basis."""
        return pairing(f, self.g).real


def invariant_density(op: SpectralOperator, check_gap: Optional[bool] = None,
                      gap_iterations: int = 30) -> InvariantDensity:
    """Kernel of the adjoint generator, normalized to a probability density.

    Parameters
    ----------
    op : SpectralOperator
    check_gap : bool, optional
        Estimate the smallest singular value of the bordered matrix and raise
        :class:`DegeneracyError` below ``1e-8``.  Defaults to on for direct
        solves and off for iterative ones (each estimate costs two solves per
        power iteration).

    Raises
    ------
    SolverError
        Null-vector residual above ``1e-10`` or negative density on the grid.
    DegeneracyError
        A second near-null vector appears.
    """
    b = op.basis
    size = b.size
    if check_gap is None:
        check_gap = op.solver_kind == "direct"
    rhs = np.zeros(size + 1, dtype=np.complex128)
    rhs[size] = 1.0
    sol = op.bordered_solve(rhs, trans="H")
    vec = sol[:size]
    i0 = b.zero_index
    if not np.isfinite(vec).all() or abs(vec[i0]) == 0:
        raise SolverError("invariant density solve produced a degenerate vector")
    vec = vec / vec[i0]
    g = CoefficientField.from_flat(b, vec)
    # project onto real fields: g(-k) = conj g(k)
    mirror = b.fourier_index(-b.modes)
    g = CoefficientField(b, 0.5 * (g.coeffs + np.conj(g.coeffs[mirror])))
    g.coeffs[b.fourier_index(np.zeros(b.n, dtype=np.int64)), 0] = 1.0
    residual = float(np.linalg.norm(op.adjoint @ g.flat) / np.linalg.norm(g.flat))
    if residual > DENSITY_RESIDUAL_TOL:
        raise SolverError(f"invariant density residual {residual:.3e} above {DENSITY_RESIDUAL_TOL:g}")

    gap = None
    if check_gap:
        gap = op.kernel_gap(gap_iterations)
        if gap < GAP_TOL:
            raise DegeneracyError(
                f"second near-null vector (gap {gap:.3e}); increase the cutoffs")

    if b.n == 1:
        xgrid, ygrid = _grid_axes(b, max(64, 4 * b.fourier_cutoff + 1), 49)
    else:
        xgrid, ygrid = _grid_axes(b, max(24, 2 * b.fourier_cutoff + 1), 25)
    rho = _grid_values(g, xgrid, ygrid) * b.gaussian_weight(ygrid)[None, :]
    min_density = float(rho.min())
    if min_density < -NEGATIVE_TOL:
        raise SolverError(f"invariant density is negative on the grid (min {min_density:.3e})")
    return InvariantDensity(op, g, residual, min_density, gap)


def mean_drift(rho: InvariantDensity, drift: DriftSpec) -> np.ndarray:
    """``v_bar = int v dmu`` and the check ``int y dmu = sqrt(tau) v_bar``.

    Raises
    ------
    SolverError
        If the velocity centering identity fails beyond ``1e-10``; this can
        only happen through an assembly or solve defect.
    """
    b = rho.basis
    n = b.n
    v_bar = np.zeros(n, dtype=np.complex128)
    # int e_k(x) g dx dgamma = G[-k, 0]
    idx = b.fourier_index(-drift.modes)
    for q, i in enumerate(idx):
        if i >= 0:
            v_bar += drift.coeffs[q] * rho.g.coeffs[i, 0]
    v_bar = v_bar.real
    y_mean = velocity_mean(rho)
    err = float(np.linalg.norm(y_mean - np.sqrt(rho.params.tau) * v_bar))
    if err > CENTERING_TOL:
        raise SolverError(f"velocity centering violated: |int y dmu - sqrt(tau) v_bar| = {err:.3e}")
    return v_bar


def velocity_mean(rho: InvariantDensity) -> np.ndarray:
    """``int y dmu`` from the first Hermite level of ``g``."""
    b = rho.basis
    k0 = int(b.fourier_index(np.zeros(b.n, dtype=np.int64)))
    out = np.zeros(b.n)
    for j in range(b.n):
        a = np.zeros(b.n, dtype=np.int64)
        a[j] = 1
        out[j] = b.scale * rho.g.coeffs[k0, int(b.hermite_index(a))].real
    return out


def cell_rhs(basis: Basis, params: ModelParams, v_bar) -> list[CoefficientField]:
    """Coefficient fields of ``(y_j - sqrt(tau) v_bar_j) / sqrt(tau)``."""
    rt = np.sqrt(params.tau)
    k0 = int(basis.fourier_index(np.zeros(basis.n, dtype=np.int64)))
    out = []
    for j in range(basis.n):
        f = CoefficientField.zeros(basis)
        a = np.zeros(basis.n, dtype=np.int64)
        a[j] = 1
        f.coeffs[k0, int(basis.hermite_index(a))] = basis.scale / rt
        f.coeffs[k0, 0] = -float(v_bar[j])
        out.append(f)
    return out


@dataclass(frozen=True, eq=False)
class CellSolution:
    """Correctors ``Phi_j`` with ``-L Phi_j = b_j`` and ``int Phi_j dmu = 0``.

    ``residuals`` are the in-basis Galerkin residuals; ``spill`` measures the
    part of ``L Phi_j`` leaving the truncation (a truncation-error proxy).
    """

    phi: list
    rhs: list
    residuals: np.ndarray
    spill: np.ndarray
    centering: np.ndarray

    @property
    def basis(self) -> Basis:
        return self.phi[0].basis

    def evaluate(self, x, y, warn: bool = True) -> np.ndarray:
        """``Phi(x, y)`` as an ``(P, n)`` array.

        Points with some ``|y_j| > 6 sigma`` lie outside the range where the
        Hermite expansion was validated; a warning is issued when ``warn``.
        """
        x = np.asarray(x, dtype=float).reshape(-1, self.basis.n)
        y = np.asarray(y, dtype=float).reshape(-1, self.basis.n)
        if warn:
            count = int(np.sum(outside_validated_range(self.basis, y)))
            if count:
                warnings.warn(f"{count} corrector evaluations beyond |y| = 6 sigma",
                              ExtrapolationWarning, stacklevel=2)
        ex = self.basis.eval_fourier(x)
        hy = self.basis.eval_hermite(y)
        return np.stack([np.sum((ex @ f.coeffs) * hy, axis=1).real for f in self.phi], axis=1)


class ExtrapolationWarning(UserWarning):
    pass


def outside_validated_range(basis: Basis, y) -> np.ndarray:
    y = np.asarray(y, dtype=float).reshape(-1, basis.n)
    return np.any(np.abs(y) > VALIDATED_Y * basis.sigma, axis=1)


def solve_cell_problem(op: SpectralOperator, rho: InvariantDensity, v_bar,
                       params: Optional[ModelParams] = None,
                       spill_tolerance: Optional[float] = None) -> CellSolution:
    """Solve ``-L Phi_j = (y_j - sqrt(tau) v_bar_j) / sqrt(tau)``.

    Raises
    ------
    TruncationError
        If a Galerkin residual exceeds ``1e-9``, or the spill residual
        exceeds ``spill_tolerance`` when one is given.  ``suggested`` holds
        doubled cutoffs.
    """
    params = params or op.params
    b = op.basis
    size = b.size
    rhs_fields = cell_rhs(b, params, v_bar)
    phis, residuals, spills, centering = [], [], [], []
    suggested = (2 * b.fourier_cutoff, 2 * b.hermite_cutoff)
    for rhs in rhs_fields:
        ext = np.zeros(size + 1, dtype=np.complex128)
        ext[:size] = -rhs.flat
        sol = op.bordered_solve(ext)
        phi = CoefficientField.from_flat(b, sol[:size])
        phi.flat[b.zero_index] -= pairing(phi, rho.g)
        mirror = b.fourier_index(-b.modes)
        phi = CoefficientField(b, 0.5 * (phi.coeffs + np.conj(phi.coeffs[mirror])))
        res = float(np.linalg.norm(op.matrix @ phi.flat + rhs.flat) / np.linalg.norm(rhs.flat))
        if not np.isfinite(res) or res > CELL_RESIDUAL_TOL:
            raise TruncationError(
                f"cell residual {res:.3e} above {CELL_RESIDUAL_TOL:g}; try N_F, N_H = {suggested}",
                suggested)
        spill = op.spill_residual(phi, rhs)
        if spill_tolerance is not None and spill > spill_tolerance:
            raise TruncationError(
                f"truncation spill {spill:.3e} above {spill_tolerance:g}; try N_F, N_H = {suggested}",
                suggested)
        phis.append(phi)
        residuals.append(res)
        spills.append(spill)
        centering.append(abs(pairing(phi, rho.g)))
    return CellSolution(phis, rhs_fields, np.array(residuals), np.array(spills), np.array(centering))


@dataclass(frozen=True, eq=False)
class DiffusivityResult:
    K2: np.ndarray
    v_bar: np.ndarray
    fourier_cutoff: int
    hermite_cutoff: int
    residual: float
    spill: float
    asymmetry: float
    min_eigenvalue: float
    K2_identity: np.ndarray = field(repr=False, default=None)

    def to_dict(self) -> dict:
        return {
            "K2": self.K2.tolist(),
            "v_bar": self.v_bar.tolist(),
            "N_F": int(self.fourier_cutoff),
            "N_H": int(self.hermite_cutoff),
            "residual": float(self.residual),
            "spill": float(self.spill),
            "min_eigenvalue": float(self.min_eigenvalue),
        }

    def to_json(self, **kwargs) -> str:
        return json.dumps(self.to_dict(), **kwargs)


def contraction_rule(basis: Basis) -> TensorQuadrature:
    """Rule exact for triple products of fields on ``basis`` (after the tail cut)."""
    return basis.quadrature(3 * basis.fourier_cutoff, 3 * basis.hermite_cutoff + 1,
                            cutoff=QUAD_CUTOFF)


def effective_diffusivity(cell: CellSolution, rho: InvariantDensity,
                          params: ModelParams, v_bar=None) -> DiffusivityResult:
    """``K^2 = (sigma^2 / tau) int grad_y Phi (x) grad_y Phi dmu``.

    The velocity gradients come from the Hermite lowering ladder (exact on
    coefficients).  The triple product with ``g`` is integrated by a tensor
    rule that is exact for the truncated polynomial degree: uniform nodes in
    ``x`` and Gauss-Hermite nodes in ``y`` restricted to ``|y_j| <= 8 s``.
    A direct coefficient contraction of the same integral loses all digits
    once ``N_H`` exceeds about 100, because the Hermite triple-product
    weights overflow.  The restricted rule drops a Gaussian tail of relative
    mass ``~exp(-32)``; further out, coefficient roundoff in each of the
    three factors is amplified like ``exp(y^2 / 4 s^2)`` and dominates.

    The carre-du-champ form ``int (b_i Phi_j + b_j Phi_i) dmu`` is computed
    alongside as an independent cross-check (``K2_identity``).

    Raises
    ------
    SolverError
        Asymmetry above ``1e-9`` or an eigenvalue below ``-1e-10``.
    """
    b = cell.basis
    n = b.n
    rule = contraction_rule(b)
    gv = rule.values(rho.g)
    grads = [[rule.values(d) for d in phi.grad_y()] for phi in cell.phi]
    M = np.zeros((n, n))
    for i in range(n):
        for j in range(n):
            acc = 0.0
            for a in range(n):
                acc += rule.integrate(grads[i][a] * grads[j][a] * gv)
            M[i, j] = acc
    M *= params.sigma**2 / params.tau
    phiv = [rule.values(p) for p in cell.phi]
    rhsv = [rule.values(r) for r in cell.rhs]
    ident = np.array([[rule.integrate((rhsv[i] * phiv[j] + rhsv[j] * phiv[i]) * gv)
                       for j in range(n)] for i in range(n)])
    asym = float(np.max(np.abs(M - M.T)))
    if asym > ASYMMETRY_TOL:
        raise SolverError(f"K2 asymmetry {asym:.3e} above {ASYMMETRY_TOL:g}")
    K2 = 0.5 * (M + M.T)
    eig = float(np.linalg.eigvalsh(K2).min())
    if eig < -NEGATIVE_TOL:
        raise SolverError(f"K2 has a negative eigenvalue {eig:.3e}")
    if v_bar is None:
        v_bar = np.zeros(n)
    return DiffusivityResult(K2, np.asarray(v_bar, dtype=float), b.fourier_cutoff,
                             b.hermite_cutoff, float(cell.residuals.max()),
                             float(cell.spill.max()), asym, eig, ident)


@dataclass(frozen=True, eq=False)
class SpectralSolution:
    operator: SpectralOperator
    rho: InvariantDensity
    v_bar: np.ndarray
    cell: CellSolution
    result: DiffusivityResult

    @property
    def K2(self) -> np.ndarray:
        return self.result.K2


def solve_diffusivity(drift: DriftSpec, params: ModelParams,
                      fourier_cutoff: Optional[int] = None,
                      hermite_cutoff: Optional[int] = None,
                      method: str = "auto", check_gap: Optional[bool] = None,
                      spill_tolerance: Optional[float] = None) -> SpectralSolution:
    """Full pipeline: assemble, invariant density, mean drift, cell problem, K^2."""
    nf, nh = default_cutoffs(params.n)
    nf = nf if fourier_cutoff is None else fourier_cutoff
    nh = nh if hermite_cutoff is None else hermite_cutoff
    basis = Basis(params.n, nf, nh, params.sigma)
    op = assemble_generator(drift, params, basis, method=method)
    rho = invariant_density(op, check_gap=check_gap)
    v_bar = mean_drift(rho, drift)
    cell = solve_cell_problem(op, rho, v_bar, params, spill_tolerance=spill_tolerance)
    result = effective_diffusivity(cell, rho, params, v_bar)
    return SpectralSolution(op, rho, v_bar, cell, result)


def smoluchowski_diffusivity_1d(drift: DriftSpec, sigma: float) -> float:
    """Overdamped-limit diffusivity ``sigma^2 / (Z+ Z-)``, ``Z+- = int exp(+-2V/sigma^2)``.

    Raises
    ------
    UnsupportedError
        For non-gradient drifts or ``n > 1``.
    """
    if drift.n != 1 or not drift.is_gradient:
        raise UnsupportedError("the overdamped reference needs a 1-D gradient drift")
    c = 2.0 / sigma**2

    def pot(x):
        return float(eval_potential(drift, np.array([[x]]))[0])

    zp, _ = integrate.quad(lambda x: np.exp(c * pot(x)), 0.0, 1.0, epsabs=0, epsrel=1e-13, limit=200)
    zm, _ = integrate.quad(lambda x: np.exp(-c * pot(x)), 0.0, 1.0, epsabs=0, epsrel=1e-13, limit=200)
    return sigma**2 / (zp * zm)


@dataclass
class TruncationRow:
    fourier_cutoff: int
    hermite_cutoff: int
    K2: Optional[np.ndarray] = None
    residual: float = float("nan")
    spill: float = float("nan")
    cauchy: float = float("nan")
    stagnant: bool = False
    error: str = ""


def truncation_study(drift: DriftSpec, params: ModelParams,
                     ladder: Sequence[tuple], method: str = "auto") -> list[TruncationRow]:
    """Rerun the pipeline over a ladder of cutoffs.

    ``cauchy`` is the max-abs change in ``K^2`` from the previous successful
    row.  A row is flagged ``stagnant`` when that change fails to shrink
    (while still above roundoff).  Failures, aliasing included, are recorded
    in the row's ``error`` field instead of being raised.
    """
    rows = []
    prev_k2 = None
    prev_diff = None
    for nf, nh in ladder:
        row = TruncationRow(int(nf), int(nh))
        try:
            sol = solve_diffusivity(drift, params, nf, nh, method=method, check_gap=False)
        except HomogError as exc:
            row.error = f"{type(exc).__name__}: {exc}"
            rows.append(row)
            continue
        row.K2 = sol.K2
        row.residual = sol.result.residual
        row.spill = sol.result.spill
        if prev_k2 is not None:
            row.cauchy = float(np.max(np.abs(sol.K2 - prev_k2)))
            if prev_diff is not None and row.cauchy > 1e-13 and row.cauchy >= prev_diff:
                row.stagnant = True
            prev_diff = row.cauchy
        prev_k2 = sol.K2
        rows.append(row)
    return rows


def truncation_to_csv(rows: Sequence[TruncationRow], path, header_lines=()) -> None:
    with open(path, "w", newline="") as fh:
        for line in header_lines:
            fh.write(f"# {line}\n")
        w = csv.writer(fh)
        n = next((r.K2.shape[0] for r in rows if r.K2 is not None), 1)
        k2_cols = [f"K2_{i}{j}" for i in range(n) for j in range(n)]
        w.writerow(["N_F", "N_H"] + k2_cols + ["residual", "spill", "cauchy", "stagnant", "error"])
        for r in rows:
            k2 = [f"{v:.17g}" for v in r.K2.ravel()] if r.K2 is not None else [""] * len(k2_cols)
            w.writerow([r.fourier_cutoff, r.hermite_cutoff] + k2 +
                       [f"{r.residual:.17g}", f"{r.spill:.17g}", f"{r.cauchy:.17g}",
                        int(r.stagnant), r.error])


class InvariantSampler:
    """Accept-reject sampler for ``mu``.

    Proposal ``uniform(x) x gamma(y)``, acceptance probability
    ``g(x, y) / M`` with ``M`` the maximum of ``g`` over a sampling grid.
    The grid spans ``|y_j| <= 5 s`` (``s`` the proposal standard deviation):
    further out the truncated ``g`` grows without bound while the proposal
    puts mass below ``1e-6`` there.  Exact whenever ``g <= M`` on the
    proposal's effective support; proposals where ``g`` exceeds the envelope
    are counted in ``envelope_violations``.  Proposals are drawn in
    batches whose size depends only on ``count``, so a draw is a function of
    the generator state alone.  Holds only coefficients, so it pickles.
    """

    MIN_ACCEPTANCE = 1e-3
    ENVELOPE_HALF_WIDTH = 5.0

    def __init__(self, rho: InvariantDensity):
        self.g = rho.g
        b = rho.basis
        half = self.ENVELOPE_HALF_WIDTH * b.scale
        if b.n == 1:
            xgrid, ygrid = _grid_axes(b, max(128, 8 * b.fourier_cutoff + 1), 61, half)
        else:
            xgrid, ygrid = _grid_axes(b, max(32, 4 * b.fourier_cutoff + 1), 25, half)
        self.envelope = float(_grid_values(rho.g, xgrid, ygrid).max())
        if not self.envelope > 0:
            raise SolverError("invariant weight has no positive values on the grid")
        self.proposed = 0
        self.accepted = 0
        self.envelope_violations = 0

    @property
    def acceptance_rate(self) -> float:
        return self.accepted / self.proposed if self.proposed else float("nan")

    def sample(self, rng: np.random.Generator, count: int):
        """``count`` draws as ``(x, y)`` arrays of shape ``(count, n)``."""
        b = self.g.basis
        n = b.n
        batch = max(2 * count, 16)
        xs, ys = [], []
        have = proposed = accepted = 0
        while have < count:
            x = rng.random((batch, n))
            y = b.scale * rng.standard_normal((batch, n))
            u = rng.random(batch)
            gv = self.g.evaluate(x, y)
            self.envelope_violations += int(np.sum(gv > self.envelope))
            keep = u * self.envelope < gv
            proposed += batch
            accepted += int(keep.sum())
            if proposed >= 1000 and accepted < self.MIN_ACCEPTANCE * proposed:
                raise SolverError(
                    f"accept-reject acceptance {accepted / proposed:.2e} below {self.MIN_ACCEPTANCE:g}")
            take = min(count - have, int(keep.sum()))
            xs.append(x[keep][:take])
            ys.append(y[keep][:take])
            have += take
        self.proposed += proposed
        self.accepted += accepted
        return np.concatenate(xs), np.concatenate(ys)


def sample_invariant_measure(rho: InvariantDensity, count: int, seed: int) -> list[PhaseState]:
    """``count`` independent draws from ``mu`` as phase states (deterministic in ``seed``)."""
    from ..rng import SAMPLER, stream

    sampler = InvariantSampler(rho)
    x, y = sampler.sample(stream(seed, 0, SAMPLER), count)
    return [PhaseState(xi, yi) for xi, yi in zip(x, y)]
