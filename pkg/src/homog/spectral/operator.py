"""Sparse Galerkin matrix of the generator on a Fourier x Hermite basis.

With ``s = sigma / sqrt(2)`` the generator splits as

    L = (1/sqrt(tau)) (y . grad_x + v(x) . grad_y) - N / tau

where ``N`` is the Hermite number operator (``N h_a = |a| h_a``).  The
matrix ``A`` acts on coefficient vectors: ``coeffs(L f) = A @ coeffs(f)``,
with terms leaving the truncated index set dropped (Galerkin projection).
Because the basis is orthonormal in ``L^2(dx x gamma)``, ``A^H`` is the
matrix of the weighted adjoint, so ``-A^H`` is the conjugated forward
operator acting on ``g = rho / gamma``.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from ..errors import AliasingError, SolverError, ValidationError
from ..langevin_core import DriftSpec, ModelParams
from .basis import Basis, CoefficientField

TWO_PI = 2.0 * np.pi


@dataclass(frozen=True, eq=False)
class SpectralOperator:
    basis: Basis
    params: ModelParams
    drift: DriftSpec
    matrix: sp.csc_matrix

    def apply(self, field: CoefficientField) -> CoefficientField:
        return CoefficientField.from_flat(self.basis, self.matrix @ field.flat)

    @property
    def adjoint(self) -> sp.csc_matrix:
        return self.matrix.conj().T.tocsc()

    def conjugated(self) -> sp.csc_matrix:
        """Matrix of the conjugated forward operator ``K = -L^dagger`` acting on g."""
        return -self.adjoint

    method: str = "auto"

    @property
    def solver_kind(self) -> str:
        if self.method == "auto":
            return "direct" if self.basis.n == 1 else "iterative"
        if self.method not in ("direct", "iterative"):
            raise ValidationError(f"unknown solve method {self.method!r}")
        return self.method

    @cached_property
    def bordered(self) -> sp.csc_matrix:
        """``[[A, e0], [e0^T, 0]]`` with ``e0`` the constant function.

        Non-singular exactly when the kernel of ``A`` is one-dimensional.
        One factorization serves the adjoint null-vector solve (``trans='H'``)
        and every cell-problem right-hand side.
        """
        size = self.basis.size
        i0 = self.basis.zero_index
        col = sp.csc_matrix(([1.0], ([i0], [0])), shape=(size, 1))
        row = sp.csc_matrix(([1.0], ([0], [i0])), shape=(1, size))
        return sp.bmat([[self.matrix, col], [row, None]], format="csc").astype(np.complex128)

    @cached_property
    def bordered_lu(self):
        try:
            return spla.splu(self.bordered, permc_spec="COLAMD")
        except RuntimeError as exc:
            raise SolverError(f"bordered generator is singular: {exc}") from exc

    @cached_property
    def _preconditioner_lu(self):
        # OU + transport only: block diagonal in the Fourier index, so its LU
        # is cheap; the drift coupling is what GMRES has to resolve.
        free = assemble_generator(DriftSpec.zero(self.basis.n), self.params, self.basis)
        m = free.matrix.tolil()
        i0 = self.basis.zero_index
        m[i0, i0] = -1.0 / self.params.tau
        return spla.splu(m.tocsc())

    def bordered_solve(self, rhs: np.ndarray, trans: str = "N", rtol: float = 1e-13,
                       maxiter: int = 50) -> np.ndarray:
        """Solve the bordered system (``trans='H'`` for its adjoint).

        ``rhs`` has length ``size + 1``.  Direct sparse LU, or restarted
        GMRES preconditioned by the exact inverse of the drift-free part.
        """
        rhs = np.asarray(rhs, dtype=np.complex128)
        if self.solver_kind == "direct":
            return self.bordered_lu.solve(rhs, trans=trans)
        size = self.basis.size
        lu = self._preconditioner_lu
        mat = self.bordered if trans == "N" else self.bordered.conj().T.tocsc()

        def precondition(v):
            out = np.empty(size + 1, dtype=np.complex128)
            out[:size] = lu.solve(np.ascontiguousarray(v[:size]), trans=trans)
            out[size] = v[size]
            return out

        prec = spla.LinearOperator(mat.shape, matvec=precondition, dtype=np.complex128)
        sol, info = spla.gmres(mat, rhs, M=prec, rtol=rtol, atol=0.0, restart=200,
                               maxiter=maxiter)
        if info != 0:
            res = np.linalg.norm(mat @ sol - rhs) / max(np.linalg.norm(rhs), 1e-300)
            raise SolverError(f"GMRES did not converge (info={info}, residual={res:.3e})")
        return sol

    def kernel_gap(self, iterations: int = 40) -> float:
        """Smallest singular value of the bordered matrix (power iteration on
        its inverse).  Collapses to zero when a second null vector appears."""
        rng = np.random.default_rng(0)
        v = rng.standard_normal(self.basis.size + 1) + 0j
        v /= np.linalg.norm(v)
        est = 0.0
        for _ in range(iterations):
            w = self.bordered_solve(self.bordered_solve(v), trans="H")
            est = np.linalg.norm(w)
            if not np.isfinite(est) or est == 0:
                return 0.0
            v = w / est
        return float(1.0 / np.sqrt(est))

    def spill_residual(self, field: CoefficientField, rhs: CoefficientField) -> float:
        """``||L f + rhs|| / ||rhs||`` with ``L`` applied on an enlarged basis.

        The in-basis part of the Galerkin residual is zero to solver roundoff;
        what remains is the image of ``f`` leaving the truncation, a direct
        measure of truncation error.
        """
        b = self.basis
        big = Basis(b.n, b.fourier_cutoff + max(self.drift.k_max, 1), b.hermite_cutoff + 1, b.sigma)
        big_op = assemble_generator(self.drift, self.params, big)
        lifted = embed(field, big)
        image = big_op.matrix @ lifted.flat + embed(rhs, big).flat
        return float(np.linalg.norm(image) / max(np.linalg.norm(rhs.flat), 1e-300))


def embed(field: CoefficientField, target: Basis) -> CoefficientField:
    """Zero-pad (or truncate) a field onto another basis of the same dimension."""
    src = field.basis
    out = np.zeros(target.shape, dtype=np.complex128)
    ki = target.fourier_index(src.modes)
    ai = target.hermite_index(src.hermite)
    kk, aa = np.nonzero((ki[:, None] >= 0) & (ai[None, :] >= 0))
    out[ki[kk], ai[aa]] = field.coeffs[kk, aa]
    return CoefficientField(target, out)


def assemble_generator(drift: DriftSpec, params: ModelParams, basis: Basis,
                       method: str = "auto") -> SpectralOperator:
    """Galerkin matrix of the generator.

    ``method`` selects how bordered systems are solved later: ``"direct"``
    (sparse LU), ``"iterative"`` (preconditioned GMRES) or ``"auto"``
    (direct for n = 1, iterative otherwise).

    Raises
    ------
    AliasingError
        If the drift carries Fourier modes beyond ``basis.fourier_cutoff``;
        the shifts by the drift would then not even reproduce ``v`` itself.
    """
    n = basis.n
    if drift.n != n or params.n != n:
        raise ValidationError("drift, parameters and basis dimensions disagree")
    if basis.sigma != params.sigma:
        raise ValidationError("basis scale must be built from params.sigma")
    if drift.k_max > basis.fourier_cutoff:
        raise AliasingError(
            f"drift support |k|={drift.k_max} exceeds Fourier cutoff N_F={basis.fourier_cutoff}")

    nk, na = basis.shape
    s = basis.scale
    rt = np.sqrt(params.tau)
    ik = np.arange(nk)[:, None] * np.ones((1, na), dtype=np.int64)
    ia = np.ones((nk, 1), dtype=np.int64) * np.arange(na)[None, :]
    flat_in = (ik * na + ia).ravel()
    rows, cols, vals = [], [], []

    degree = basis.hermite.sum(axis=1)
    rows.append(flat_in)
    cols.append(flat_in)
    vals.append(np.broadcast_to(-degree[None, :] / params.tau, (nk, na)).ravel().astype(complex))

    for j in range(n):
        # transport: y_j d/dx_j
        dx = (1j * TWO_PI * basis.modes[:, j] / rt)[:, None] * np.ones((1, na))
        for step in (+1, -1):
            moved = basis.hermite.copy()
            moved[:, j] += step
            target = basis.hermite_index(moved)
            if step > 0:
                ladder = s * np.sqrt(basis.hermite[:, j] + 1.0)
            else:
                ladder = s * np.sqrt(basis.hermite[:, j].astype(float))
            ok = (target >= 0) & (ladder > 0)
            w = dx[:, ok] * ladder[ok][None, :]
            out = ik[:, ok] * na + target[ok][None, :]
            rows.append(out.ravel())
            cols.append((ik[:, ok] * na + ia[:, ok]).ravel())
            vals.append(w.ravel())

        # forcing: v_j(x) d/dy_j
        lowered = basis.hermite.copy()
        lowered[:, j] -= 1
        a_target = basis.hermite_index(lowered)
        a_ok = a_target >= 0
        lower_w = np.sqrt(basis.hermite[a_ok, j].astype(float)) / (s * rt)
        for q, vq in zip(drift.modes, drift.coeffs[:, j]):
            if vq == 0:
                continue
            k_target = basis.fourier_index(basis.modes + q)
            k_ok = k_target >= 0
            out = k_target[k_ok][:, None] * na + a_target[a_ok][None, :]
            src = np.arange(nk)[k_ok][:, None] * na + np.arange(na)[a_ok][None, :]
            rows.append(out.ravel())
            cols.append(src.ravel())
            vals.append(np.broadcast_to(vq * lower_w[None, :], out.shape).ravel())

    rows = np.concatenate(rows)
    cols = np.concatenate(cols)
    vals = np.concatenate(vals)
    size = basis.size
    matrix = sp.coo_matrix((vals, (rows, cols)), shape=(size, size)).tocsc()
    matrix.sum_duplicates()
    matrix.eliminate_zeros()
    return SpectralOperator(basis, params, drift, matrix, method)
