"""Fourier (x) times Hermite (y) tensor basis and coefficient fields.

Basis functions are ``e_k(x) h_a(y)`` with ``e_k(x) = exp(2 pi i k.x)`` and
``h_a(y) = prod_j He_{a_j}(y_j / s) / sqrt(a_j!)`` the normalized
probabilists' Hermite polynomials in the scaled variable ``y / s``,
``s^2 = sigma^2 / 2``.  They are orthonormal in ``L^2(dx x gamma)`` where
``gamma = N(0, s^2 I)`` is the velocity marginal of the invariant law at
zero drift.

Ladder relations (per velocity component, dropping the index j)::

    y h_m     = s (sqrt(m + 1) h_{m+1} + sqrt(m) h_{m-1})
    d/dy h_m  = sqrt(m) / s h_{m-1}
    (-y d/dy + s^2 d^2/dy^2) h_m = -m h_m
"""
from __future__ import annotations

import csv
import itertools
from dataclasses import dataclass
from functools import cached_property

import numpy as np
from scipy.special import roots_hermitenorm

from ..errors import ValidationError

TWO_PI = 2.0 * np.pi


def hermite_functions(xi: np.ndarray, degree: int) -> np.ndarray:
    """Normalized probabilists' Hermite polynomials ``h_0..h_degree`` at ``xi``.

    Returns an array of shape ``xi.shape + (degree + 1,)``.
    """
    xi = np.asarray(xi, dtype=np.float64)
    out = np.empty(xi.shape + (degree + 1,))
    out[..., 0] = 1.0
    if degree >= 1:
        out[..., 1] = xi
    for m in range(1, degree):
        out[..., m + 1] = (xi * out[..., m] - np.sqrt(m) * out[..., m - 1]) / np.sqrt(m + 1)
    return out


def gauss_hermite(count: int):
    """Nodes and weights integrating against N(0, 1), exact to degree 2*count - 1."""
    nodes, weights = roots_hermitenorm(count)
    return nodes, weights / np.sqrt(TWO_PI)


@dataclass(frozen=True, eq=False)
class Basis:
    """Truncated tensor basis: ``|k_i| <= fourier_cutoff``, ``|a| <= hermite_cutoff``."""

    n: int
    fourier_cutoff: int
    hermite_cutoff: int
    sigma: float

    def __post_init__(self):
        if self.n < 1 or self.fourier_cutoff < 0 or self.hermite_cutoff < 1:
            raise ValidationError(
                f"invalid basis cutoffs N_F={self.fourier_cutoff}, N_H={self.hermite_cutoff}")
        if not self.sigma > 0:
            raise ValidationError("sigma must be positive")

    @property
    def scale(self) -> float:
        """Standard deviation ``s = sigma / sqrt(2)`` of the Gaussian weight."""
        return self.sigma / np.sqrt(2.0)

    @cached_property
    def modes(self) -> np.ndarray:
        r = range(-self.fourier_cutoff, self.fourier_cutoff + 1)
        return np.array(list(itertools.product(r, repeat=self.n)), dtype=np.int64)

    @cached_property
    def hermite(self) -> np.ndarray:
        idx = [a for a in itertools.product(range(self.hermite_cutoff + 1), repeat=self.n)
               if sum(a) <= self.hermite_cutoff]
        idx.sort(key=lambda a: (sum(a), a))
        return np.array(idx, dtype=np.int64)

    @cached_property
    def _hermite_lookup(self) -> np.ndarray:
        table = -np.ones((self.hermite_cutoff + 2,) * self.n, dtype=np.int64)
        table[tuple(self.hermite.T)] = np.arange(self.hermite.shape[0])
        return table

    @property
    def n_fourier(self) -> int:
        return self.modes.shape[0]

    @property
    def n_hermite(self) -> int:
        return self.hermite.shape[0]

    @property
    def size(self) -> int:
        return self.n_fourier * self.n_hermite

    @property
    def shape(self):
        return (self.n_fourier, self.n_hermite)

    def fourier_index(self, k: np.ndarray) -> np.ndarray:
        """Row index of each wave vector in ``modes``; -1 when out of range."""
        k = np.asarray(k, dtype=np.int64)
        width = 2 * self.fourier_cutoff + 1
        shifted = k + self.fourier_cutoff
        ok = np.all((shifted >= 0) & (shifted < width), axis=-1)
        idx = np.zeros(k.shape[:-1], dtype=np.int64)
        for j in range(self.n):
            idx = idx * width + shifted[..., j]
        return np.where(ok, idx, -1)

    def hermite_index(self, a: np.ndarray) -> np.ndarray:
        """Column index of each multi-index in ``hermite``; -1 when out of range."""
        a = np.asarray(a, dtype=np.int64)
        ok = np.all(a >= 0, axis=-1) & (a.sum(axis=-1) <= self.hermite_cutoff)
        safe = np.where(ok[..., None], a, 0)
        idx = self._hermite_lookup[tuple(np.moveaxis(safe, -1, 0))]
        return np.where(ok, idx, -1)

    @property
    def zero_index(self) -> int:
        """Flat index of the constant function (k = 0, a = 0)."""
        return int(self.fourier_index(np.zeros(self.n, dtype=np.int64))) * self.n_hermite

    def eval_fourier(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64).reshape(-1, self.n)
        return np.exp(1j * TWO_PI * (x @ self.modes.T))

    def eval_hermite(self, y: np.ndarray) -> np.ndarray:
        y = np.asarray(y, dtype=np.float64).reshape(-1, self.n)
        table = hermite_functions(y / self.scale, self.hermite_cutoff)
        out = np.ones((y.shape[0], self.n_hermite))
        for j in range(self.n):
            out *= table[:, j, self.hermite[:, j]]
        return out

    def gaussian_weight(self, y: np.ndarray) -> np.ndarray:
        """Density of N(0, s^2 I) at ``y``."""
        y = np.asarray(y, dtype=np.float64).reshape(-1, self.n)
        s2 = self.scale**2
        return np.exp(-0.5 * np.sum(y**2, axis=1) / s2) / (TWO_PI * s2) ** (self.n / 2)

    def quadrature(self, fourier_degree: int, hermite_degree: int,
                   cutoff: float | None = None) -> "TensorQuadrature":
        """Tensor rule against ``dx x gamma``.

        Exact for trig degree ``fourier_degree`` and polynomial degree
        ``hermite_degree`` per coordinate.  With ``cutoff`` set, Gauss nodes
        beyond ``|y| > cutoff * s`` are dropped: products of high-degree
        Hermite expansions amplify coefficient roundoff like ``exp(y^2/4s^2)``
        per factor there, while the true integrand is negligible.
        """
        m_x = fourier_degree + 1
        m_y = max(hermite_degree // 2 + 1, 2)
        xs = np.arange(m_x) / m_x
        nodes, w = gauss_hermite(m_y)
        if cutoff is not None:
            keep = np.abs(nodes) <= cutoff
            nodes, w = nodes[keep], w[keep]
        xgrid = np.array(list(itertools.product(xs, repeat=self.n)))
        ygrid = np.array(list(itertools.product(nodes * self.scale, repeat=self.n)))
        wy = np.prod(np.array(list(itertools.product(w, repeat=self.n))), axis=1)
        wx = np.full(xgrid.shape[0], 1.0 / xgrid.shape[0])
        return TensorQuadrature(self, xgrid, ygrid, wx, wy)


@dataclass(frozen=True, eq=False)
class TensorQuadrature:
    """Product grid ``xgrid x ygrid`` with weights ``wx x wy``."""

    basis: Basis
    xgrid: np.ndarray
    ygrid: np.ndarray
    wx: np.ndarray
    wy: np.ndarray

    @cached_property
    def fourier_matrix(self) -> np.ndarray:
        return self.basis.eval_fourier(self.xgrid)

    @cached_property
    def hermite_matrix(self) -> np.ndarray:
        return self.basis.eval_hermite(self.ygrid)

    def values(self, field: "CoefficientField") -> np.ndarray:
        """Field values on the grid, shape ``(len(xgrid), len(ygrid))``."""
        vals = self.fourier_matrix @ field.coeffs @ self.hermite_matrix.T
        return vals.real

    def integrate(self, values: np.ndarray) -> float:
        return float(self.wx @ values @ self.wy)


@dataclass(frozen=True, eq=False)
class CoefficientField:
    """``f(x, y) = sum c[k, a] e_k(x) h_a(y)`` on a given basis."""

    basis: Basis
    coeffs: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.coeffs, dtype=np.complex128).reshape(self.basis.shape)
        object.__setattr__(self, "coeffs", c)

    @classmethod
    def zeros(cls, basis: Basis):
        return cls(basis, np.zeros(basis.shape, dtype=np.complex128))

    @classmethod
    def from_flat(cls, basis: Basis, vec: np.ndarray):
        return cls(basis, np.asarray(vec).reshape(basis.shape))

    @property
    def flat(self) -> np.ndarray:
        return self.coeffs.reshape(-1)

    def __call__(self, x, y) -> np.ndarray:
        return self.evaluate(x, y)

    def evaluate(self, x, y) -> np.ndarray:
        """Real part of the field at points ``x, y`` of shape ``(P, n)``."""
        ex = self.basis.eval_fourier(x)
        hy = self.basis.eval_hermite(y)
        return np.sum((ex @ self.coeffs) * hy, axis=1).real

    def grad_y(self) -> list["CoefficientField"]:
        """Exact velocity gradient via the lowering ladder."""
        b = self.basis
        out = []
        for j in range(b.n):
            c = np.zeros_like(self.coeffs)
            src = np.nonzero(b.hermite[:, j] > 0)[0]
            lowered = b.hermite[src].copy()
            lowered[:, j] -= 1
            dst = b.hermite_index(lowered)
            c[:, dst] = self.coeffs[:, src] * (np.sqrt(b.hermite[src, j]) / b.scale)
            out.append(CoefficientField(b, c))
        return out

    def conjugate_symmetry_error(self) -> float:
        """``max |c[-k, a] - conj(c[k, a])|``; zero for real-valued fields."""
        mirror = self.basis.fourier_index(-self.basis.modes)
        return float(np.max(np.abs(self.coeffs[mirror] - np.conj(self.coeffs))))

    def norm(self) -> float:
        return float(np.linalg.norm(self.coeffs))

    def to_csv(self, path) -> None:
        """One row per basis element: k multi-index, a multi-index, re, im."""
        b = self.basis
        header = [f"k{j}" for j in range(b.n)] + [f"a{j}" for j in range(b.n)] + ["re", "im"]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(header)
            for i, k in enumerate(b.modes.tolist()):
                for a_idx, a in enumerate(b.hermite.tolist()):
                    c = self.coeffs[i, a_idx]
                    w.writerow(k + a + [f"{c.real:.17g}", f"{c.imag:.17g}"])


def field_from_csv(basis: Basis, path) -> CoefficientField:
    field = np.zeros(basis.shape, dtype=np.complex128)
    n = basis.n
    with open(path, newline="") as fh:
        r = csv.reader(fh)
        next(r)
        for row in r:
            k = np.array([int(v) for v in row[:n]])
            a = np.array([int(v) for v in row[n:2 * n]])
            i, j = int(basis.fourier_index(k)), int(basis.hermite_index(a))
            if i < 0 or j < 0:
                raise ValidationError(f"coefficient row outside basis: k={k}, a={a}")
            field[i, j] = complex(float(row[2 * n]), float(row[2 * n + 1]))
    return CoefficientField(basis, field)
