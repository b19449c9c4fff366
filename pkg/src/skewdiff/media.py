"""Interface media and the parameter maps between their equivalent descriptions.

A point interface at the origin separates two homogeneous half-lines with
diffusivities ``d_plus`` (x > 0) and ``d_minus`` (x <= 0; the origin belongs
to the minus side everywhere in this package).  The interface itself is
described interchangeably by

* ``lam``    -- the flux-weighting parameter of the PDE matching condition
                lam * u_x(0+) = (1 - lam) * u_x(0-),
* ``alpha``  -- the transmission probability of the underlying skew Brownian
                motion (probability that an excursion from 0 is positive),
* ``gamma``  -- the local-time drift coefficient of the SDE form.

``lam`` is the stored parameter; the others are derived views.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

# Guards divisions and square roots downstream.
MIN_DIFFUSIVITY = 1e-12


@dataclass(frozen=True)
class InterfaceMedium:
    """Two half-line diffusivities plus the interface parameter ``lam`` in (0,1)."""

    d_plus: float
    d_minus: float
    lam: float = 0.5

    def __post_init__(self) -> None:
        if not (self.d_plus >= MIN_DIFFUSIVITY and np.isfinite(self.d_plus)):
            raise ValueError(f"d_plus must be >= {MIN_DIFFUSIVITY}, got {self.d_plus}")
        if not (self.d_minus >= MIN_DIFFUSIVITY and np.isfinite(self.d_minus)):
            raise ValueError(f"d_minus must be >= {MIN_DIFFUSIVITY}, got {self.d_minus}")
        if not (0.0 < self.lam < 1.0):
            raise ValueError(f"lam must lie in the open interval (0,1), got {self.lam}")

    @classmethod
    def conservative(cls, d_plus: float, d_minus: float) -> "InterfaceMedium":
        """Medium with the flux-continuous interface lam* = D+/(D+ + D-)."""
        return cls(d_plus, d_minus, d_plus / (d_plus + d_minus))

    def diffusivity(self, x):
        """D(x) with the origin on the minus side."""
        return np.where(np.asarray(x, dtype=float) > 0.0, self.d_plus, self.d_minus)

    @property
    def is_conservative(self) -> bool:
        return abs(self.lam - conservative_lambda(self)) <= 1e-12


@dataclass(frozen=True)
class MultiMedium:
    """Piecewise-constant diffusivity with several interfaces.

    ``interfaces`` are the strictly increasing discontinuity locations;
    ``diffusivities`` has one entry per interval, including the two unbounded
    end intervals, so ``len(diffusivities) == len(interfaces) + 1``.  Every
    interface carries the flux-continuous (conservative) matching condition.
    """

    interfaces: tuple = field(default_factory=tuple)
    diffusivities: tuple = field(default_factory=tuple)

    def __post_init__(self) -> None:
        ifs = tuple(float(v) for v in self.interfaces)
        ds = tuple(float(v) for v in self.diffusivities)
        object.__setattr__(self, "interfaces", ifs)
        object.__setattr__(self, "diffusivities", ds)
        if len(ds) != len(ifs) + 1:
            raise ValueError(
                f"need len(interfaces)+1 diffusivities, got {len(ds)} for {len(ifs)} interfaces"
            )
        if len(ifs) == 0:
            raise ValueError("at least one interface is required")
        if np.any(np.diff(ifs) <= 0):
            raise ValueError("interfaces must be strictly increasing")
        if any(not (d >= MIN_DIFFUSIVITY and np.isfinite(d)) for d in ds):
            raise ValueError(f"all diffusivities must be >= {MIN_DIFFUSIVITY}")

    def diffusivity(self, x):
        """D(x); each interface point belongs to the interval on its left."""
        x = np.asarray(x, dtype=float)
        idx = np.searchsorted(np.asarray(self.interfaces), x, side="left")
        return np.asarray(self.diffusivities)[idx]

    def alphas(self) -> np.ndarray:
        """Transmission probabilities alpha_k = sqrt(D_k)/(sqrt(D_k)+sqrt(D_{k-1}))."""
        rd = np.sqrt(np.asarray(self.diffusivities))
        return rd[1:] / (rd[1:] + rd[:-1])


@dataclass(frozen=True)
class ScaleSpeed:
    """One-sided scale and speed density values of an interface medium."""

    s_plus: float
    s_minus: float
    m_plus: float
    m_minus: float

    def __post_init__(self) -> None:
        for name in ("s_plus", "s_minus", "m_plus", "m_minus"):
            v = getattr(self, name)
            if not (v > 0 and np.isfinite(v)):
                raise ValueError(f"{name} must be positive and finite, got {v}")


def alpha_of_lambda(medium: InterfaceMedium) -> float:
    """Transmission probability alpha = lam*sqrt(D-) / (lam*sqrt(D-) + (1-lam)*sqrt(D+))."""
    num = medium.lam * np.sqrt(medium.d_minus)
    return num / (num + (1.0 - medium.lam) * np.sqrt(medium.d_plus))


def conservative_lambda(medium: InterfaceMedium) -> float:
    """The flux-continuous interface parameter lam* = D+/(D+ + D-)."""
    return medium.d_plus / (medium.d_plus + medium.d_minus)


def lambda_of_gamma(gamma: float) -> float:
    """Interface parameter corresponding to local-time coefficient gamma < 1."""
    if not gamma < 1.0:
        raise ValueError(f"gamma must be < 1, got {gamma}")
    return 1.0 / (2.0 - gamma)


def alpha_of_gamma(medium: InterfaceMedium, gamma: float) -> float:
    """Transmission probability of the SDE with local-time drift (gamma/2) L(t,0).

    alpha = sqrt(D-) / (sqrt(D-) + sqrt(D+) * (1 - gamma)), gamma < 1.
    """
    if not gamma < 1.0:
        raise ValueError(f"gamma must be < 1, got {gamma}")
    rm = np.sqrt(medium.d_minus)
    return rm / (rm + np.sqrt(medium.d_plus) * (1.0 - gamma))


def local_time_gamma(medium: InterfaceMedium) -> float:
    """Local-time coefficient gamma of the medium's SDE representation.

    Inverse of :func:`alpha_of_gamma` at the medium's own alpha; equals
    (D+ - D-)/D+ for the conservative interface.
    """
    a = alpha_of_lambda(medium)
    return 1.0 - (1.0 - a) * np.sqrt(medium.d_minus) / (a * np.sqrt(medium.d_plus))


def _scale_knots(medium) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Knot tables of the rescaling map: (x_knots, y_knots, sqrt-D slopes).

    The map sends the unit-diffusivity coordinate y to the physical
    coordinate x; it fixes 0, has slope sqrt(D_k) on the piece whose image is
    the k-th physical interval, and maps y_knots onto the interface
    positions x_knots.
    """
    if isinstance(medium, InterfaceMedium):
        x_knots = np.array([0.0])
        slopes = np.sqrt(np.array([medium.d_minus, medium.d_plus]))
    else:
        x_knots = np.asarray(medium.interfaces, dtype=float)
        slopes = np.sqrt(np.asarray(medium.diffusivities, dtype=float))
        if not np.any(x_knots == 0.0):
            # the map is anchored at the origin in both coordinates
            k = int(np.searchsorted(x_knots, 0.0))
            x_knots = np.insert(x_knots, k, 0.0)
            slopes = np.insert(slopes, k, slopes[k])
    k0 = int(np.flatnonzero(x_knots == 0.0)[0])
    y_knots = np.empty_like(x_knots)
    y_knots[k0] = 0.0
    for i in range(k0 + 1, len(x_knots)):
        y_knots[i] = y_knots[i - 1] + (x_knots[i] - x_knots[i - 1]) / slopes[i]
    for i in range(k0 - 1, -1, -1):
        y_knots[i] = y_knots[i + 1] - (x_knots[i + 1] - x_knots[i]) / slopes[i + 1]
    return x_knots, y_knots, slopes


def scale_map(medium, y):
    """Continuous piecewise-linear rescaling with slope sqrt(D) on each piece; fixes 0."""
    x_knots, y_knots, slopes = _scale_knots(medium)
    y = np.asarray(y, dtype=float)
    idx = np.searchsorted(y_knots, y, side="left")
    j = np.maximum(idx - 1, 0)
    base = np.where(idx == 0, y_knots[0], y_knots[j])
    ref = np.where(idx == 0, x_knots[0], x_knots[j])
    out = ref + slopes[idx] * (y - base)
    return out if out.ndim else float(out)


def scale_map_inverse(medium, x):
    """Inverse of :func:`scale_map` (slopes 1/sqrt(D) piece by piece)."""
    x_knots, y_knots, slopes = _scale_knots(medium)
    x = np.asarray(x, dtype=float)
    idx = np.searchsorted(x_knots, x, side="left")
    j = np.maximum(idx - 1, 0)
    base = np.where(idx == 0, x_knots[0], x_knots[j])
    ref = np.where(idx == 0, y_knots[0], y_knots[j])
    out = ref + (x - base) / slopes[idx]
    return out if out.ndim else float(out)


def mapped_interfaces(multi: MultiMedium) -> np.ndarray:
    """Interface locations in the rescaled (unit-diffusivity) coordinate."""
    return np.asarray(scale_map_inverse(multi, np.asarray(multi.interfaces)))


def speed_scale(medium: InterfaceMedium) -> ScaleSpeed:
    """Scale and speed densities of the medium.

    Normalized so the conservative interface gives s' = 1/D on each side and
    m' = 2; for general lam the scale densities are proportional to (1-lam)
    on the plus side and lam on the minus side, with m' * s' = 2/D preserved
    so that d/dm d/ds reproduces (1/2) D d^2/dx^2 away from the interface.
    """
    c = (medium.d_plus + medium.d_minus) / (medium.d_plus * medium.d_minus)
    s_plus = (1.0 - medium.lam) * c
    s_minus = medium.lam * c
    return ScaleSpeed(
        s_plus=s_plus,
        s_minus=s_minus,
        m_plus=2.0 / (medium.d_plus * s_plus),
        m_minus=2.0 / (medium.d_minus * s_minus),
    )
