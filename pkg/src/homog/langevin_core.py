"""Model definition: periodic drifts, parameters, phase-space states.

The kinetic system simulated and discretized throughout the package is

    dx = y / sqrt(tau) dt
    dy = v(x) / sqrt(tau) dt - y / tau dt + sigma / sqrt(tau) dbeta

with ``v`` a smooth 1-periodic vector field on the torus given as a finite
Fourier series.  This module also hosts a slow finite-difference evaluation
of the generator, used only as a test oracle for the spectral machinery.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Mapping, Optional, Sequence

import numpy as np

from .errors import ValidationError

__all__ = [
    "DriftSpec",
    "ModelParams",
    "PhaseState",
    "eval_drift",
    "eval_potential",
    "drift_from_potential",
    "generator_apply_fd",
    "drift_to_json",
    "drift_from_json",
    "load_drift",
    "save_drift",
]

TWO_PI = 2.0 * np.pi
IMAG_TOL = 1e-12
SYMMETRY_TOL = 1e-12


def _as_modes(modes, n):
    modes = np.asarray(modes, dtype=np.int64).reshape(-1, n)
    return modes


def _check_symmetry(modes, values, what):
    """Raise if ``values(-k) != conj(values(k))`` for some k."""
    index = {tuple(k): i for i, k in enumerate(modes.tolist())}
    scale = max(1.0, float(np.max(np.abs(values)))) if values.size else 1.0
    for k, i in index.items():
        mk = tuple(-c for c in k)
        j = index.get(mk)
        partner = values[j] if j is not None else np.zeros_like(values[i])
        if np.max(np.abs(partner - np.conj(values[i]))) > SYMMETRY_TOL * scale:
            raise ValidationError(
                f"{what} coefficients break conjugate symmetry at k={list(k)}"
            )


@dataclass(frozen=True, eq=False)
class DriftSpec:
    """Periodic drift ``v(x) = sum_k coeffs[k] exp(2 pi i k.x)`` on T^n.

    Parameters
    ----------
    n : int
        Spatial dimension.
    modes : array_like, shape (M, n)
        Integer wave vectors, no duplicates.
    coeffs : array_like, shape (M, n)
        Complex vector coefficient for each wave vector.
    potential : array_like, shape (M,), optional
        Scalar Fourier coefficients of ``V`` when ``v = -grad V``.
    """

    n: int
    modes: np.ndarray
    coeffs: np.ndarray
    potential: Optional[np.ndarray] = None
    label: str = field(default="", compare=False)

    def __post_init__(self):
        if int(self.n) < 1:
            raise ValidationError("dimension must be >= 1")
        n = int(self.n)
        modes = _as_modes(self.modes, n)
        coeffs = np.asarray(self.coeffs, dtype=np.complex128).reshape(-1, n)
        if coeffs.shape[0] != modes.shape[0]:
            raise ValidationError("modes and coeffs length mismatch")
        if len({tuple(k) for k in modes.tolist()}) != modes.shape[0]:
            raise ValidationError("duplicate wave vectors in drift spec")
        if not np.all(np.isfinite(coeffs)):
            raise ValidationError("non-finite drift coefficient")
        _check_symmetry(modes, coeffs, "drift")
        pot = None
        if self.potential is not None:
            pot = np.asarray(self.potential, dtype=np.complex128).reshape(-1)
            if pot.shape[0] != modes.shape[0]:
                raise ValidationError("potential must share the drift's modes")
            _check_symmetry(modes, pot, "potential")
            expected = -1j * TWO_PI * modes * pot[:, None]
            scale = max(1.0, float(np.max(np.abs(expected)))) if pot.size else 1.0
            bad = np.max(np.abs(expected - coeffs), axis=1) > SYMMETRY_TOL * scale
            if np.any(bad):
                k = modes[np.argmax(bad)].tolist()
                raise ValidationError(f"drift is not -grad V at k={k}")
            pot.setflags(write=False)
        modes.setflags(write=False)
        coeffs.setflags(write=False)
        object.__setattr__(self, "n", n)
        object.__setattr__(self, "modes", modes)
        object.__setattr__(self, "coeffs", coeffs)
        object.__setattr__(self, "potential", pot)

    @classmethod
    def from_mapping(cls, n: int, coeffs: Mapping[Sequence[int], Sequence[complex]], label=""):
        keys = list(coeffs)
        modes = np.array([list(k) if np.ndim(k) else [k] for k in keys], dtype=np.int64)
        vals = np.array([np.atleast_1d(coeffs[k]) for k in keys], dtype=np.complex128)
        return cls(n, modes.reshape(-1, n), vals.reshape(-1, n), label=label)

    @classmethod
    def zero(cls, n: int = 1):
        return cls(n, np.zeros((0, n), dtype=np.int64), np.zeros((0, n)),
                   potential=np.zeros(0), label="flat")

    @property
    def k_max(self) -> int:
        """Largest |k_i| carrying a nonzero coefficient."""
        nz = np.any(self.coeffs != 0, axis=1)
        if not np.any(nz):
            return 0
        return int(np.max(np.abs(self.modes[nz])))

    @property
    def is_gradient(self) -> bool:
        return self.potential is not None

    def mean(self) -> np.ndarray:
        """Flat (Lebesgue) average of v over the cell, i.e. the k=0 coefficient."""
        zero = np.all(self.modes == 0, axis=1)
        if not np.any(zero):
            return np.zeros(self.n)
        return self.coeffs[zero][0].real.copy()

    def real_form(self):
        """Cosine/sine representation over half the modes.

        Returns ``(modes, const, a, b)`` with
        ``v(x) = const + sum_h a[h] cos(2 pi k_h.x) + b[h] sin(2 pi k_h.x)``.
        """
        const = np.zeros(self.n)
        half_modes, a, b = [], [], []
        for k, c in zip(self.modes.tolist(), self.coeffs):
            if not np.any(c):
                continue
            if all(ki == 0 for ki in k):
                const = const + c.real
                continue
            first = next(ki for ki in k if ki != 0)
            if first < 0:
                continue
            half_modes.append(k)
            a.append(2.0 * c.real)
            b.append(-2.0 * c.imag)
        return (np.array(half_modes, dtype=np.float64).reshape(-1, self.n), const,
                np.array(a).reshape(-1, self.n), np.array(b).reshape(-1, self.n))


@dataclass(frozen=True)
class ModelParams:
    """Relaxation time ``tau``, noise amplitude ``sigma`` and dimension ``n``."""

    tau: float
    sigma: float
    n: int = 1

    def __post_init__(self):
        if not (np.isfinite(self.tau) and self.tau > 0):
            raise ValidationError(f"tau must be positive, got {self.tau}")
        if not (np.isfinite(self.sigma) and self.sigma > 0):
            raise ValidationError(f"sigma must be positive, got {self.sigma}")
        if int(self.n) < 1:
            raise ValidationError(f"n must be >= 1, got {self.n}")


@dataclass(frozen=True, eq=False)
class PhaseState:
    """Point of T^n x R^n with the unwrapped position kept exactly.

    ``x`` is the canonical representative in [0, 1)^n and ``winding`` the
    integer lattice vector such that the physical position is ``x + winding``.
    ``y`` is the scaled velocity ``sqrt(tau) dx/dt``.
    """

    x: np.ndarray
    y: np.ndarray
    winding: np.ndarray = None

    def __post_init__(self):
        x = np.atleast_1d(np.asarray(self.x, dtype=np.float64)).copy()
        y = np.atleast_1d(np.asarray(self.y, dtype=np.float64)).copy()
        if x.shape != y.shape:
            raise ValidationError("x and y must have the same dimension")
        w = np.zeros(x.shape, dtype=np.int64) if self.winding is None else \
            np.asarray(self.winding, dtype=np.int64).copy()
        shift = np.floor(x).astype(np.int64)
        x = x - shift
        wrap = x >= 1.0  # x slightly below an integer rounds up to 1.0
        x[wrap] = 0.0
        shift[wrap] += 1
        w = w + shift
        for arr in (x, y, w):
            arr.setflags(write=False)
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "winding", w)

    @classmethod
    def from_position(cls, position, y):
        return cls(position, y)

    @property
    def displacement(self) -> np.ndarray:
        return self.winding + self.x

    @property
    def n(self) -> int:
        return self.x.shape[0]


def eval_drift(spec: DriftSpec, x) -> np.ndarray:
    """Evaluate the drift at one point ``(n,)`` or a batch ``(P, n)``."""
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    pts = x.reshape(-1, spec.n)
    if spec.modes.shape[0] == 0:
        out = np.zeros_like(pts)
    else:
        phase = np.exp(1j * TWO_PI * (pts @ spec.modes.T))
        val = phase @ spec.coeffs
        scale = max(1.0, float(np.sum(np.abs(spec.coeffs))))
        if np.max(np.abs(val.imag)) > IMAG_TOL * scale:
            raise ValidationError("drift evaluates to a complex value; spec is malformed")
        out = val.real
    return out[0] if single else out


def eval_potential(spec: DriftSpec, x) -> np.ndarray:
    if spec.potential is None:
        raise ValidationError("drift was not built from a potential")
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    pts = x.reshape(-1, spec.n)
    if spec.modes.shape[0] == 0:
        out = np.zeros(pts.shape[0])
    else:
        out = (np.exp(1j * TWO_PI * (pts @ spec.modes.T)) @ spec.potential).real
    return out[0] if single else out


def drift_from_potential(potential_coeffs, n: int = 1, label: str = "") -> DriftSpec:
    """Build ``v = -grad V`` from Fourier coefficients of ``V``.

    ``potential_coeffs`` maps wave vectors (int for n=1, tuples otherwise) to
    complex scalars.
    """
    keys = list(potential_coeffs)
    modes = np.array([list(np.atleast_1d(k)) for k in keys], dtype=np.int64).reshape(-1, n)
    pot = np.array([complex(potential_coeffs[k]) for k in keys], dtype=np.complex128)
    _check_symmetry(modes, pot, "potential")
    coeffs = -1j * TWO_PI * modes * pot[:, None]
    return DriftSpec(n, modes, coeffs, potential=pot, label=label)


def generator_apply_fd(f: Callable, state: PhaseState, params: ModelParams,
                       drift: DriftSpec, h: float = 1e-4,
                       richardson: bool = False) -> float:
    """Central-difference approximation of ``(L f)(x, y)``.

    ``f(x, y)`` takes two length-n arrays.  Error is O(h^2), or O(h^4) with
    ``richardson=True`` (combines steps h and h/2).
    """
    if richardson:
        coarse = generator_apply_fd(f, state, params, drift, h)
        fine = generator_apply_fd(f, state, params, drift, h / 2)
        return (4.0 * fine - coarse) / 3.0
    x = state.x.astype(np.float64)
    y = state.y.astype(np.float64)
    n = x.shape[0]
    v = eval_drift(drift, x)
    f0 = f(x, y)
    grad_x = np.empty(n)
    grad_y = np.empty(n)
    lap_y = 0.0
    for j in range(n):
        e = np.zeros(n)
        e[j] = h
        grad_x[j] = (f(x + e, y) - f(x - e, y)) / (2 * h)
        fp, fm = f(x, y + e), f(x, y - e)
        grad_y[j] = (fp - fm) / (2 * h)
        lap_y += (fp - 2 * f0 + fm) / h**2
    rt = np.sqrt(params.tau)
    transport = (y @ grad_x + v @ grad_y) / rt
    dissipation = (-(y @ grad_y) + 0.5 * params.sigma**2 * lap_y) / params.tau
    return float(transport + dissipation)


def drift_to_json(spec: DriftSpec) -> dict:
    """JSON document for a drift spec; floats round-trip exactly."""
    doc = {
        "n": spec.n,
        "coeffs": [
            {"k": k, "re": [float(c.real) for c in vec], "im": [float(c.imag) for c in vec]}
            for k, vec in zip(spec.modes.tolist(), spec.coeffs)
        ],
    }
    if spec.potential is not None:
        doc["potential"] = [
            {"k": k, "re": float(c.real), "im": float(c.imag)}
            for k, c in zip(spec.modes.tolist(), spec.potential)
        ]
    if spec.label:
        doc["label"] = spec.label
    return doc


def drift_from_json(doc: Mapping) -> DriftSpec:
    try:
        n = int(doc["n"])
        entries = doc["coeffs"]
        modes = np.array([e["k"] for e in entries], dtype=np.int64).reshape(-1, n)
        coeffs = np.empty((len(entries), n), dtype=np.complex128)
        for row, e in zip(coeffs, entries):
            row.real = np.asarray(e["re"], dtype=float)
            row.imag = np.asarray(e["im"], dtype=float)
        pot = None
        if doc.get("potential") is not None:
            by_k = {tuple(e["k"]): complex(e["re"], e["im"]) for e in doc["potential"]}
            pot = np.array([by_k.get(tuple(k), 0j) for k in modes.tolist()])
    except (KeyError, TypeError, ValueError) as exc:
        raise ValidationError(f"malformed drift document: {exc}") from exc
    return DriftSpec(n, modes, coeffs, potential=pot, label=doc.get("label", ""))


def save_drift(spec: DriftSpec, path) -> None:
    Path(path).write_text(json.dumps(drift_to_json(spec), indent=2))


def load_drift(path) -> DriftSpec:
    return drift_from_json(json.loads(Path(path).read_text()))
