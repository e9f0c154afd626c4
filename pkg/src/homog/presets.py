"""Drift presets shipped with the package.

These are fixtures chosen for this project (the underlying theory does not
single out any particular drift):

``flat``
    v = 0, any dimension.  Everything is known in closed form.
``cosine-gradient``
    n = 1, v = -V' with V(x) = 0.5 cos(2 pi x).  Gibbs invariant measure.
``two-mode-nongradient``
    n = 2, v(x) = 0.5 (sin(2 pi x_2), sin(2 pi x_1)).  Nonzero curl, so the
    invariant measure is not explicit; odd symmetry keeps it centered.
"""
from __future__ import annotations

from .errors import ValidationError
from .langevin_core import DriftSpec, drift_from_potential

PRESETS = ("flat", "cosine-gradient", "two-mode-nongradient")


def flat(n: int = 1) -> DriftSpec:
    return DriftSpec.zero(n)


def cosine_gradient(amplitude: float = 0.5) -> DriftSpec:
    half = 0.5 * amplitude
    return drift_from_potential({1: half, -1: half}, n=1, label="cosine-gradient")


def two_mode_nongradient(amplitude: float = 0.5) -> DriftSpec:
    # sin(2 pi t) = (e^{2 pi i t} - e^{-2 pi i t}) / 2i
    c = amplitude / 2j
    coeffs = {
        (0, 1): [c, 0.0],
        (0, -1): [-c, 0.0],
        (1, 0): [0.0, c],
        (-1, 0): [0.0, -c],
    }
    return DriftSpec.from_mapping(2, coeffs, label="two-mode-nongradient")


def get_preset(name: str, n: int | None = None) -> DriftSpec:
    if name == "flat":
        return flat(n or 1)
    if name == "cosine-gradient":
        spec = cosine_gradient()
    elif name == "two-mode-nongradient":
        spec = two_mode_nongradient()
    else:
        raise ValidationError(f"unknown preset {name!r}; choose from {', '.join(PRESETS)}")
    if n is not None and n != spec.n:
        raise ValidationError(f"preset {name!r} is {spec.n}-dimensional, not {n}")
    return spec
