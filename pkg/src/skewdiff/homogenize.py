"""Taylor-Aris effective dispersion for layered planar media.

The effective longitudinal diffusivity combines a length-weighted arithmetic
mean of the layer diffusivities with a harmonically-weighted shear term built
from the flux potential of the centered velocity profile.  Profiles given as
polynomials are integrated exactly; sampled profiles use composite Simpson
rules with a Richardson error estimate.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from numpy.polynomial import Polynomial
from scipy.integrate import simpson

from .media import MIN_DIFFUSIVITY, MultiMedium, mapped_interfaces, scale_map, scale_map_inverse
from .paths import SimConfig, _exact_step_mixed_alpha
from . import rng as rngmod


@dataclass(frozen=True)
class PolynomialProfile:
    """Longitudinal velocity given as a polynomial in the transverse coordinate."""

    coeffs: tuple

    def __post_init__(self) -> None:
        object.__setattr__(self, "coeffs", tuple(float(c) for c in self.coeffs))

    @property
    def poly(self) -> Polynomial:
        return Polynomial(self.coeffs)

    def __call__(self, x):
        return self.poly(np.asarray(x, float))

    @classmethod
    def parabolic(cls, v0: float, radius: float) -> "PolynomialProfile":
        """v(x) = v0 (1 - (x/R)^2)."""
        return cls((v0, 0.0, -v0 / (radius * radius)))


@dataclass(frozen=True)
class SampledProfile:
    """Longitudinal velocity sampled on a transverse grid (linear interpolation)."""

    x: np.ndarray
    v: np.ndarray

    def __post_init__(self) -> None:
        x = np.asarray(self.x, float)
        v = np.asarray(self.v, float)
        if x.ndim != 1 or x.shape != v.shape or x.size < 3:
            raise ValueError("SampledProfile needs matching 1-d arrays with >= 3 samples")
        if np.any(np.diff(x) <= 0):
            raise ValueError("sample grid must be strictly increasing")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "v", v)

    def __call__(self, xq):
        return np.interp(np.asarray(xq, float), self.x, self.v)


@dataclass(frozen=True)
class LayeredCrossSection:
    """Transverse layer structure with per-layer diffusivities and a flow profile.

    ``layer_bounds`` are the interior interfaces; layer k spans
    (bounds[k], bounds[k+1]) within [a, b].  ``d1`` is longitudinal and
    ``d2`` transverse diffusivity per layer.
    """

    a: float
    b: float
    layer_bounds: tuple
    d1: tuple
    d2: tuple
    velocity: object

    def __post_init__(self) -> None:
        lb = tuple(float(v) for v in self.layer_bounds)
        d1 = tuple(float(v) for v in self.d1)
        d2 = tuple(float(v) for v in self.d2)
        object.__setattr__(self, "layer_bounds", lb)
        object.__setattr__(self, "d1", d1)
        object.__setattr__(self, "d2", d2)
        bounds = self.all_bounds()
        if np.any(np.diff(bounds) <= 0):
            raise ValueError("layer bounds must be strictly increasing inside (a, b)")
        n_layers = len(bounds) - 1
        if len(d1) != n_layers or len(d2) != n_layers:
            raise ValueError(f"need {n_layers} d1/d2 values, got {len(d1)}/{len(d2)}")
        if any(d < MIN_DIFFUSIVITY for d in d1 + d2):
            raise ValueError("diffusivities must be positive")

    def all_bounds(self) -> np.ndarray:
        return np.asarray([self.a, *self.layer_bounds, self.b], float)

    @property
    def width(self) -> float:
        return self.b - self.a


def mean_velocity(cs: LayeredCrossSection) -> float:
    """Uniform-measure average of the longitudinal velocity over [a, b]."""
    if isinstance(cs.velocity, PolynomialProfile):
        V = cs.velocity.poly.integ()
        return float(V(cs.b) - V(cs.a)) / cs.width
    prof = cs.velocity
    return float(simpson(prof(_dense_grid(cs)), x=_dense_grid(cs))) / cs.width


def _dense_grid(cs: LayeredCrossSection, per_layer: int = 513) -> np.ndarray:
    pieces = []
    bounds = cs.all_bounds()
    for lo, hi in zip(bounds[:-1], bounds[1:]):
        pieces.append(np.linspace(lo, hi, per_layer))
    return np.unique(np.concatenate(pieces))


def g_function(cs: LayeredCrossSection, y) -> np.ndarray | float:
    """Flux potential g(y) = int_a^y (v - vbar) dpi; vanishes at both walls."""
    y_arr = np.atleast_1d(np.asarray(y, float))
    if np.any((y_arr < cs.a - 1e-12) | (y_arr > cs.b + 1e-12)):
        raise ValueError(f"y outside [{cs.a}, {cs.b}]")
    vbar = mean_velocity(cs)
    if isinstance(cs.velocity, PolynomialProfile):
        centered = cs.velocity.poly - Polynomial([vbar])
        G = centered.integ()
        out = (G(y_arr) - G(cs.a)) / cs.width
    else:
        grid = _dense_grid(cs)
        vals = (cs.velocity(grid) - vbar) / cs.width
        cum = np.concatenate([[0.0], np.cumsum(0.5 * (vals[1:] + vals[:-1]) * np.diff(grid))])
        out = np.interp(y_arr, grid, cum)
    return out if np.ndim(y) else float(out[0])


@dataclass(frozen=True)
class DispersionResult:
    d_bar: float
    v_bar: float
    arithmetic_term: float
    shear_terms: tuple  # per layer


def effective_dispersion(cs: LayeredCrossSection) -> DispersionResult:
    """Effective longitudinal diffusivity of the layered cross-section.

    d_bar = sum_k D1_k w_k/(b-a) + sum_k (b-a)/D2_k * int_layer g(y)^2 dy,
    i.e. the arithmetic-mean longitudinal term plus shear terms carrying the
    squared flux potential against the transverse resistance of each layer.
    For the single-interface parabolic profile this reduces to
    D_a + 4 v0^2 R^2 / (945 D_h).
    """
    vbar = mean_velocity(cs)
    bounds = cs.all_bounds()
    widths = np.diff(bounds)
    arithmetic = float(np.dot(cs.d1, widths) / cs.width)
    shear = []
    if isinstance(cs.velocity, PolynomialProfile):
        centered = cs.velocity.poly - Polynomial([vbar])
        G = centered.integ()
        g = (G - Polynomial([G(cs.a)])) / cs.width
        g2_int = (g * g).integ()
        for k, (lo, hi) in enumerate(zip(bounds[:-1], bounds[1:])):
            shear.append(cs.width / cs.d2[k] * float(g2_int(hi) - g2_int(lo)))
    else:
        for k, (lo, hi) in enumerate(zip(bounds[:-1], bounds[1:])):
            grid = np.linspace(lo, hi, 1025)
            g2 = np.asarray(g_function(cs, grid)) ** 2
            shear.append(cs.width / cs.d2[k] * float(simpson(g2, x=grid)))
    return DispersionResult(
        d_bar=arithmetic + float(sum(shear)),
        v_bar=vbar,
        arithmetic_term=arithmetic,
        shear_terms=tuple(shear),
    )


def single_interface_parabolic(d_plus: float, d_minus: float, v0: float, radius: float):
    """Closed-form benchmark: D_a + 4 v0^2 R^2/(945 D_h) and the cross-section."""
    cs = LayeredCrossSection(
        a=-radius,
        b=radius,
        layer_bounds=(0.0,),
        d1=(d_minus, d_plus),
        d2=(d_minus, d_plus),
        velocity=PolynomialProfile.parabolic(v0, radius),
    )
    d_a = 0.5 * (d_plus + d_minus)
    d_h = 1.0 / (1.0 / d_plus + 1.0 / d_minus)
    return cs, d_a + 4.0 * v0 * v0 * radius * radius / (945.0 * d_h)


@dataclass(frozen=True)
class VarianceEstimate:
    d_bar: float
    ci: float
    v_bar: float
    n_paths: int
    t_long: float


def mc_longtime_variance(
    cs: LayeredCrossSection, t_long: float, config: SimConfig
) -> VarianceEstimate:
    """Long-time variance estimate of the longitudinal coordinate.

    The transverse coordinate follows a reflected multi-interface diffusion
    on [a, b] with flux-continuous interfaces; longitudinal increments
    accumulate v(x2) dt plus sqrt(D1(x2) dt) noise.  Returns
    Var(X1 - vbar t)/t with a 3-sigma half-width.
    """
    vbar = mean_velocity(cs)
    bounds = cs.all_bounds()
    interior = np.asarray(cs.layer_bounds, float)
    homogeneous = interior.size == 0 or all(abs(d - cs.d2[0]) < 1e-15 for d in cs.d2)
    if not homogeneous:
        multi = MultiMedium(tuple(interior), tuple(cs.d2))
        y_lo = float(scale_map_inverse(multi, cs.a))
        y_hi = float(scale_map_inverse(multi, cs.b))
        y_ifs = mapped_interfaces(multi)
        alphas = multi.alphas()
        mids = 0.5 * (y_ifs[1:] + y_ifs[:-1])
    else:
        rootd = math.sqrt(cs.d2[0])
        y_lo, y_hi = cs.a / rootd, cs.b / rootd
    dt = config.dt
    n_steps = int(round(t_long / dt))
    period = 2.0 * (y_hi - y_lo)

    def d1_of(x2):
        idx = np.clip(np.searchsorted(bounds, x2, side="left") - 1, 0, len(cs.d1) - 1)
        return np.asarray(cs.d1)[idx]

    def run(j: int, n: int, gen: np.random.Generator):
        # start transverse positions uniformly over [a, b]
        x2 = cs.a + (cs.b - cs.a) * gen.random(n)
        if not homogeneous:
            y = np.asarray(scale_map_inverse(multi, x2))
        else:
            y = x2 / rootd
        x1 = np.zeros(n)
        sdt = math.sqrt(dt)
        for _ in range(n_steps):
            x1 += cs.velocity(x2) * dt + np.sqrt(d1_of(x2) * dt) * gen.standard_normal(n)
            if not homogeneous:
                near = np.searchsorted(mids, y)
                y_loc = y_ifs[near]
                y = y_loc + _exact_step_mixed_alpha(alphas[near], y - y_loc, dt, gen)
            else:
                y = y + sdt * gen.standard_normal(n)
            # exact fold onto [y_lo, y_hi]
            z = np.mod(y - y_lo, period)
            y = y_lo + np.minimum(z, period - z)
            if not homogeneous:
                x2 = np.asarray(scale_map(multi, y))
            else:
                x2 = y * rootd
        return x1

    parts = rngmod.map_blocks(run, config.n_paths, config.seed, config.block_size, config.threads)
    x1 = np.concatenate(parts)
    centered = x1 - vbar * t_long
    var = float(centered.var(ddof=1)) / t_long
    ci = 3.0 * var * math.sqrt(2.0 / (x1.size - 1))
    return VarianceEstimate(var, ci, vbar, x1.size, t_long)


def cross_section_from_mapping(layers: dict, velocity: dict) -> LayeredCrossSection:
    """Build a cross-section from flat config mappings.

    ``layers`` needs ``bounds`` (all boundaries including walls), ``d1`` and
    ``d2`` (space-separated per-layer values); ``velocity`` needs either
    ``kind=parabolic`` with v0 and radius, ``kind=poly`` with coeffs, or
    ``kind=samples`` with x and v arrays.
    """
    bounds = [float(v) for v in str(layers["bounds"]).split()]
    d1 = [float(v) for v in str(layers["d1"]).split()]
    d2 = [float(v) for v in str(layers["d2"]).split()]
    if len(bounds) < 2:
        raise ValueError("need at least two layer bounds (the walls)")
    kind = str(velocity.get("kind", "parabolic")).strip()
    if kind == "parabolic":
        prof = PolynomialProfile.parabolic(float(velocity["v0"]), float(velocity["radius"]))
    elif kind == "poly":
        prof = PolynomialProfile(tuple(float(c) for c in str(velocity["coeffs"]).split()))
    elif kind == "samples":
        xs = np.array([float(v) for v in str(velocity["x"]).split()])
        vs = np.array([float(v) for v in str(velocity["v"]).split()])
        prof = SampledProfile(xs, vs)
    else:
        raise ValueError(f"unknown velocity kind {kind!r}")
    return LayeredCrossSection(
        a=bounds[0],
        b=bounds[-1],
        layer_bounds=tuple(bounds[1:-1]),
        d1=tuple(d1),
        d2=tuple(d2),
        velocity=prof,
    )
