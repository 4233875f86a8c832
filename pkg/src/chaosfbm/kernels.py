"""Interaction kernels b_t(x, y), Gaussian mollification and regularity bookkeeping.

All kernels evaluate vectorised: ``kernel(t, x, y)`` broadcasts arrays whose
last axis is the space dimension and returns the same trailing shape.
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy import integrate, special
from scipy.interpolate import CubicSpline
from scipy.ndimage import gaussian_filter

from .errors import DomainError, InputError, ResolutionError

# ---------------------------------------------------------------------------
# regularity budget
# ---------------------------------------------------------------------------


def _inv_conj(q: float) -> float:
    """1/q' = 1 - 1/q."""
    return 1.0 - 1.0 / q


def admissible(alpha: float, q: float, H: float) -> tuple[bool, float]:
    """Subcritical check ``alpha < 1, 1 < q <= 2, alpha > 1 - 1/(H q')``.

    Returns ``(ok, margin)`` with ``margin = alpha - (1 - 1/(H q'))``.
    """
    if not (H > 0 and q > 0):
        return False, -math.inf
    margin = alpha - (1.0 - _inv_conj(q) / H)
    ok = alpha < 1 and 1 < q <= 2 and margin > 0
    return ok, margin


def hurst_threshold(alpha: float, q: float = 2.0) -> float:
    """Supremal admissible H at time integrability q (inf for alpha >= 1)."""
    if alpha >= 1:
        return math.inf
    return _inv_conj(q) / (1.0 - alpha)


def autonomous_hurst_bound(alpha: float) -> float:
    """``1 / (2 (1 - alpha))``, the bound on H for time-independent kernels."""
    if alpha >= 1:
        raise DomainError(f"alpha must be < 1, got {alpha}")
    return 1.0 / (2.0 * (1.0 - alpha))


@dataclass(frozen=True)
class RegularityBudget:
    alpha: float
    q: float
    H: float

    @property
    def inv_q_conj(self) -> float:
        return _inv_conj(self.q)

    @property
    def kappa(self) -> float:
        return 1.0 / ((self.alpha - 1.0) * self.H + 1.0)

    @property
    def epsilon(self) -> float:
        return (self.alpha - 1.0) * self.H + self.inv_q_conj

    @property
    def admissible(self) -> bool:
        return admissible(self.alpha, self.q, self.H)[0]

    @property
    def margin(self) -> float:
        return admissible(self.alpha, self.q, self.H)[1]

    @property
    def remainder_exponent(self) -> float:
        """Hölder-type exponent ``alpha H + 1/q'`` of the remainder increments."""
        return self.alpha * self.H + self.inv_q_conj


# ---------------------------------------------------------------------------
# elementary functions used by the smooth and additive families
# ---------------------------------------------------------------------------


def _bump(z):
    return z * np.exp(-0.5 * np.sum(z * z, axis=-1, keepdims=True))


FUNCTIONS = {
    "zero": (lambda z: np.zeros_like(z), 0.0),
    "tanh": (np.tanh, 1.0),
    "sin": (np.sin, 1.0),
    "cos": (np.cos, 1.0),
    "identity": (lambda z: z + 0.0, 1.0),
    "neg": (np.negative, 1.0),
    "bump": (_bump, 1.0),
}
ODD_FUNCTIONS = {"zero", "tanh", "sin", "identity", "neg", "bump"}

SMOOTH_NAMES = {"zero", "constant", "tanh", "sin", "linear"}

MATRICES = {"identity", "neg_identity", "symplectic"}


def _matrix(spec, dim: int) -> np.ndarray:
    if isinstance(spec, str):
        if spec == "identity":
            A = np.eye(dim)
        elif spec == "neg_identity":
            A = -np.eye(dim)
        elif spec == "symplectic":
            if dim != 2:
                raise InputError("the symplectic matrix needs d = 2")
            A = np.array([[0.0, -1.0], [1.0, 0.0]])
        else:
            raise InputError(f"unknown matrix {spec!r}; expected one of {sorted(MATRICES)} or a list")
    else:
        A = np.asarray(spec, dtype=float)
    if A.shape != (dim, dim) or not np.allclose(A @ A.T, np.eye(dim), atol=1e-12):
        raise InputError("interaction matrix must be a d x d orthogonal matrix")
    return A


def _vec(v, dim: int, what: str) -> tuple[float, ...]:
    arr = np.broadcast_to(np.asarray(v, dtype=float), (dim,))
    if not np.all(np.isfinite(arr)):
        raise InputError(f"{what} must be finite")
    return tuple(float(a) for a in arr)


# ---------------------------------------------------------------------------
# heat-smoothed radial profiles
# ---------------------------------------------------------------------------


def _bessel_pair(d: int, x):
    """``x^{1-d/2} ive(d/2-1, x)`` and ``x^{1-d/2} ive(d/2, x)`` with the x -> 0 limit."""
    x = np.asarray(x, dtype=float)
    nu = 0.5 * d
    small = x < 1e-10
    xs = np.where(small, 1.0, x)
    a = xs ** (1 - nu) * special.ive(nu - 1, xs)
    b = xs ** (1 - nu) * special.ive(nu, xs)
    a = np.where(small, 2.0 ** (1 - nu) / special.gamma(nu), a)
    b = np.where(small, x * 2.0 ** (-nu) / special.gamma(nu + 1), b)
    return a, b


def smoothed_radial_derivative(kind: str, s: float, d: int, sigma: float, r: float) -> float:
    """``d/dr`` of ``(g_{sigma^2} * phi)(r)`` for ``phi = |x|^{-s}`` or ``log|x|``, by radial quadrature.

    The angular integral is done in closed form with modified Bessel functions,
    leaving a one-dimensional integral in the radial variable. Requires an
    integrable singularity (``s < d`` for the power family).
    """
    inv2 = 1.0 / (2.0 * sigma * sigma)

    def core(rho):
        a, b = _bessel_pair(d, r * rho / sigma**2)
        return np.exp(-((r - rho) ** 2) * inv2) * (r * a - rho * b)

    lo, hi = max(0.0, r - 14.0 * sigma), r + 14.0 * sigma
    opts = dict(epsabs=0.0, epsrel=1e-10, limit=200)
    with warnings.catch_warnings():
        # quad reports roundoff once the tolerance is at machine level; the table is checked against the closed form
        warnings.simplefilter("ignore", integrate.IntegrationWarning)
        val = _radial_quad(kind, s, d, r, core, lo, hi, opts)
    return -val / sigma ** (d + 2)


def _radial_quad(kind, s, d, r, core, lo, hi, opts):
    if lo == 0.0:
        if kind == "riesz":
            val, _ = integrate.quad(core, 0.0, hi, weight="alg", wvar=(d - 1 - s, 0.0), **opts)
        else:
            val, _ = integrate.quad(core, 0.0, hi, weight="alg-loga", wvar=(d - 1, 0.0), **opts)
    else:
        if kind == "riesz":
            def f(rho):
                return rho ** (d - 1 - s) * core(rho)
        else:
            def f(rho):
                return math.log(rho) * rho ** (d - 1) * core(rho)
        val, _ = integrate.quad(f, lo, hi, points=[r], **opts)
    return val


def riesz_derivative_closed_form(s: float, d: int, sigma: float, r):
    """Same quantity for ``phi = |x|^{-s}`` via Kummer's function.

    Analytic in ``s`` away from ``s - d in 2N``, so it also gives the
    homogeneous extension for non-integrable exponents ``s > d``.
    """
    r = np.asarray(r, dtype=float)
    c = sigma ** (-s) * 2.0 ** (-s / 2) * special.gamma((d - s) / 2) / special.gamma(d / 2)
    z = -(r * r) / (2 * sigma * sigma)
    return c * (s / d) * special.hyp1f1(s / 2 + 1, d / 2 + 1, z) * (-r / sigma**2)


class RadialProfile:
    """Tabulated ``G(r) = P'(r)/r`` of a heat-smoothed radial potential P.

    The field of the kernel is ``G(|z|) A z``. Internally the table stores
    ``g(u) = G(e^u) e^{(s+2)u}`` (``s = 0`` for the log potential) on a
    uniform grid in ``u = log r``; ``g -> far`` as ``r -> inf``.
    """

    PER_DECADE = 40

    def __init__(self, kind: str, s: float, d: int, sigma: float, r_max: float):
        self.kind, self.s, self.d, self.sigma = kind, float(s), int(d), float(sigma)
        self.power = (self.s if kind == "riesz" else 0.0) + 2.0
        self.far = -self.s if kind == "riesz" else 1.0
        r_min = sigma / 100.0
        r_max = max(r_max, 100.0 * sigma)
        self.u0 = math.log(r_min)
        n = int(math.ceil((math.log(r_max) - self.u0) / math.log(10) * self.PER_DECADE))
        self.du = (math.log(r_max) - self.u0) / n
        u = self.u0 + self.du * np.arange(n + 1)
        self.u_max = float(u[-1])
        r = np.exp(u)
        if kind == "riesz" and s > d:
            deriv = riesz_derivative_closed_form(s, d, sigma, r)
        else:
            deriv = np.array([smoothed_radial_derivative(kind, s, d, sigma, float(x)) for x in r])
        g = deriv * r ** (self.power - 1.0)
        if not np.all(np.isfinite(g)):
            raise DomainError("radial profile quadrature produced non-finite values")
        spline = CubicSpline(u, g)
        self._coef = np.ascontiguousarray(spline.c[::-1].T)  # [segment][power]
        self.u_grid, self.g_grid = u, g
        self._g_min = float(g[0]) * math.exp(-self.power * self.u0)

    def __call__(self, r2: np.ndarray) -> np.ndarray:
        """G as a function of the squared radius."""
        with np.errstate(divide="ignore"):
            u = 0.5 * np.log(r2)
        x = (np.clip(u, self.u0, self.u_max) - self.u0) / self.du
        idx = np.minimum(x.astype(np.intp), len(self._coef) - 1)
        h = (x - idx) * self.du
        c = self._coef[idx]
        g = ((c[..., 3] * h + c[..., 2]) * h + c[..., 1]) * h + c[..., 0]
        g = np.where(u > self.u_max, self.far, g)
        out = g * np.exp(-self.power * np.maximum(u, self.u0))
        return np.where(u < self.u0, self._g_min, out)

    def lipschitz(self) -> float:
        """sup of the Jacobian eigenvalues ``|G|`` and ``|G + r G'|`` over the table."""
        r = np.exp(self.u_grid)
        G = self(r * r)
        rG = G * r
        drG = np.gradient(rG, r)
        return float(max(np.max(np.abs(G)), np.max(np.abs(drG))))


@lru_cache(maxsize=64)
def radial_profile(kind: str, s: float, d: int, sigma: float, r_max: float) -> RadialProfile:
    return RadialProfile(kind, s, d, sigma, r_max)


# ---------------------------------------------------------------------------
# kernel families
# ---------------------------------------------------------------------------


class Kernel:
    """Common interface; concrete families are frozen dataclasses below."""

    family: str = ""
    dim: int = 1
    delta: float = 0.0
    convolutional: bool = False

    @property
    def nominal_alpha(self) -> float:
        raise NotImplementedError

    @property
    def singular(self) -> bool:
        return self.nominal_alpha <= 0

    def __call__(self, t: float, x, y) -> np.ndarray:
        raise NotImplementedError

    def lipschitz(self) -> float:
        raise NotImplementedError

    def constant_value(self) -> np.ndarray | None:
        """The value if the kernel ignores its arguments, else None."""
        return None

    def with_delta(self, delta: float) -> "Kernel":
        raise DomainError(f"{self.family} kernels have no mollification width")

    def to_dict(self) -> dict:
        raise NotImplementedError

    def modulation(self, t: float) -> float:
        return 1.0

    def __post_init__(self):
        if int(self.dim) != self.dim or self.dim < 1:
            raise InputError(f"dimension must be a positive integer, got {self.dim}")
        if not (np.isfinite(self.delta) and self.delta >= 0):
            raise InputError(f"mollification width must be nonnegative, got {self.delta}")
        if self.singular and self.delta <= 0:
            raise DomainError(f"{self.family} kernel (alpha = {self.nominal_alpha}) needs delta > 0")


@dataclass(frozen=True)
class SmoothBuiltin(Kernel):
    """Lipschitz kernels: ``zero``, ``constant`` (value c), ``tanh``/``sin``/``linear`` of ``y - x``."""

    name: str = "tanh"
    dim: int = 1
    value: tuple = ()
    family = "smooth"

    def __post_init__(self):
        if self.name not in SMOOTH_NAMES:
            raise InputError(f"unknown smooth kernel {self.name!r}; expected one of {sorted(SMOOTH_NAMES)}")
        if self.name == "constant":
            object.__setattr__(self, "value", _vec(self.value or 0.0, self.dim, "constant value"))
        object.__setattr__(self, "convolutional", True)
        super().__post_init__()

    @property
    def nominal_alpha(self) -> float:
        return 1.0

    def __call__(self, t, x, y):
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        if self.name in ("zero", "constant"):
            shape = np.broadcast_shapes(x.shape, y.shape)
            c = 0.0 if self.name == "zero" else np.asarray(self.value)
            return np.broadcast_to(c, shape).copy()
        z = y - x
        if self.name == "tanh":
            return np.tanh(z)
        if self.name == "sin":
            return np.sin(z)
        return z

    def lipschitz(self) -> float:
        return 0.0 if self.name in ("zero", "constant") else 1.0

    def constant_value(self):
        if self.name == "zero":
            return np.zeros(self.dim)
        if self.name == "constant":
            return np.asarray(self.value)
        return None

    def to_dict(self):
        d = {"family": self.family, "dim": self.dim, "name": self.name}
        if self.name == "constant":
            d["value"] = list(self.value)
        return d


@dataclass(frozen=True)
class Additive(Kernel):
    """``b(x, y) = f(x) + g(y) + h(x - y)`` with f, g, h named elementary maps."""

    f: str = "zero"
    g: str = "zero"
    h: str = "zero"
    dim: int = 1
    family = "additive"

    def __post_init__(self):
        for part in (self.f, self.g, self.h):
            if part not in FUNCTIONS:
                raise InputError(f"unknown function {part!r}; expected one of {sorted(FUNCTIONS)}")
        object.__setattr__(self, "convolutional", self.f == "zero" and self.g == "zero")
        super().__post_init__()

    @property
    def nominal_alpha(self) -> float:
        return 1.0

    def __call__(self, t, x, y):
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        out = np.zeros(np.broadcast_shapes(x.shape, y.shape))
        if self.f != "zero":
            out = out + FUNCTIONS[self.f][0](x)
        if self.g != "zero":
            out = out + FUNCTIONS[self.g][0](y)
        if self.h != "zero":
            out = out + FUNCTIONS[self.h][0](x - y)
        return out

    def lipschitz(self) -> float:
        return sum(FUNCTIONS[p][1] for p in (self.f, self.g, self.h))

    def constant_value(self):
        if self.f == self.g == self.h == "zero":
            return np.zeros(self.dim)
        return None

    def to_dict(self):
        return {"family": self.family, "dim": self.dim, "f": self.f, "g": self.g, "h": self.h}


@dataclass(frozen=True)
class _Radial(Kernel):
    dim: int = 2
    delta: float = 0.1
    matrix: object = "identity"
    box_diameter: float = 10.0
    _A: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "_A", _matrix(self.matrix, self.dim))
        if isinstance(self.matrix, (list, np.ndarray)):
            object.__setattr__(self, "matrix", tuple(tuple(float(v) for v in row) for row in self._A))
        object.__setattr__(self, "convolutional", True)
        super().__post_init__()

    def _profile(self) -> RadialProfile:
        raise NotImplementedError

    def __call__(self, t, x, y):
        z = np.asarray(x, dtype=float) - np.asarray(y, dtype=float)
        r2 = np.einsum("...i,...i->...", z, z)
        G = self._profile()(r2)
        if self.matrix == "identity":
            return G[..., None] * z
        return G[..., None] * (z @ self._A.T)

    def lipschitz(self) -> float:
        return self._profile().lipschitz()

    def _matrix_dict(self):
        return self.matrix if isinstance(self.matrix, str) else [list(r) for r in self.matrix]


@dataclass(frozen=True)
class RieszGradient(_Radial):
    """``A grad |z|^{-s}`` at ``z = x - y``, heat-smoothed at variance ``delta^2``."""

    s: float = 1.0
    family = "riesz"

    def __post_init__(self):
        if not (self.s > 0 and np.isfinite(self.s)):
            raise InputError(f"Riesz exponent must be positive, got {self.s}")
        if self.s > self.dim and abs(self.s - round(self.s)) < 1e-9:
            raise DomainError("integer exponents s > d have no canonical homogeneous extension")
        super().__post_init__()

    @property
    def nominal_alpha(self) -> float:
        return -self.s - 1.0

    def _profile(self):
        return radial_profile("riesz", float(self.s), self.dim, float(self.delta), 100.0 * self.box_diameter)

    def far_field(self, z):
        """Unmollified field ``-s A z |z|^{-s-2}``."""
        z = np.asarray(z, dtype=float)
        r = np.linalg.norm(z, axis=-1, keepdims=True)
        return -self.s * (z @ self._A.T) * r ** (-self.s - 2)

    def with_delta(self, delta):
        return RieszGradient(dim=self.dim, delta=delta, matrix=self.matrix, box_diameter=self.box_diameter, s=self.s)

    def to_dict(self):
        return {"family": self.family, "dim": self.dim, "s": self.s, "matrix": self._matrix_dict(),
                "delta": self.delta, "box_diameter": self.box_diameter}


@dataclass(frozen=True)
class LogGradient(_Radial):
    """``A grad log|z|``; Coulomb in d = 2 for ``A = +-I``, Biot-Savart for ``A = J``."""

    family = "log"

    @property
    def nominal_alpha(self) -> float:
        return -1.0

    def _profile(self):
        return radial_profile("log", 0.0, self.dim, float(self.delta), 100.0 * self.box_diameter)

    def far_field(self, z):
        z = np.asarray(z, dtype=float)
        r2 = np.sum(z * z, axis=-1, keepdims=True)
        return (z @ self._A.T) / r2

    def with_delta(self, delta):
        return LogGradient(dim=self.dim, delta=delta, matrix=self.matrix, box_diameter=self.box_diameter)

    def to_dict(self):
        return {"family": self.family, "dim": self.dim, "matrix": self._matrix_dict(),
                "delta": self.delta, "box_diameter": self.box_diameter}


@dataclass(frozen=True)
class DiracApprox(Kernel):
    """``v g_{delta^2}(x - y)``: the Dirac interaction smoothed by a Gaussian of variance delta^2."""

    direction: tuple = (1.0,)
    dim: int = 1
    delta: float = 0.1
    family = "dirac"

    def __post_init__(self):
        object.__setattr__(self, "direction", _vec(self.direction, self.dim, "direction"))
        object.__setattr__(self, "convolutional", True)
        super().__post_init__()

    @property
    def nominal_alpha(self) -> float:
        return -float(self.dim)

    @property
    def peak(self) -> float:
        return (2 * math.pi * self.delta**2) ** (-self.dim / 2)

    def __call__(self, t, x, y):
        z = np.asarray(x, dtype=float) - np.asarray(y, dtype=float)
        r2 = np.einsum("...i,...i->...", z, z)
        # clamp keeps exp out of the subnormal range (values below 1e-304 are irrelevant)
        g = self.peak * np.exp(np.maximum(r2 * (-0.5 / self.delta**2), -700.0))
        return g[..., None] * np.asarray(self.direction)

    def lipschitz(self) -> float:
        return float(np.linalg.norm(self.direction)) * self.peak * math.exp(-0.5) / self.delta

    def with_delta(self, delta):
        return DiracApprox(direction=self.direction, dim=self.dim, delta=delta)

    def to_dict(self):
        return {"family": self.family, "dim": self.dim, "direction": list(self.direction), "delta": self.delta}


@dataclass(frozen=True)
class Modulated(Kernel):
    """Time-modulated kernel ``m(t) b(x, y)`` with ``m(t) = (t + shift)^{-gamma}``.

    With ``shift = 0`` the profile lies in ``L^q`` exactly for ``q < 1/gamma``.
    """

    base: Kernel = None
    gamma: float = 0.0
    shift: float = 1.0
    family = "modulated"

    def __post_init__(self):
        if not isinstance(self.base, Kernel) or isinstance(self.base, Modulated):
            raise InputError("modulated kernel needs a plain base kernel")
        if not (0 <= self.gamma < 1) or self.shift < 0:
            raise InputError("modulation needs 0 <= gamma < 1 and shift >= 0")
        object.__setattr__(self, "dim", self.base.dim)
        object.__setattr__(self, "delta", self.base.delta)
        object.__setattr__(self, "convolutional", self.base.convolutional)
        super().__post_init__()

    @property
    def nominal_alpha(self) -> float:
        return self.base.nominal_alpha

    @property
    def q_sup(self) -> float:
        """Time integrability: m is in L^q for every q below this value."""
        return math.inf if (self.gamma == 0 or self.shift > 0) else 1.0 / self.gamma

    def modulation(self, t):
        return (t + self.shift) ** (-self.gamma)

    def __call__(self, t, x, y):
        return self.modulation(t) * self.base(t, x, y)

    def lipschitz(self) -> float:
        return self.modulation(0.0) * self.base.lipschitz()

    def constant_value(self):
        return None if self.gamma else self.base.constant_value()

    def with_delta(self, delta):
        return Modulated(base=self.base.with_delta(delta), gamma=self.gamma, shift=self.shift)

    def to_dict(self):
        return {"family": self.family, "base": self.base.to_dict(), "gamma": self.gamma, "shift": self.shift}


KernelSpec = Kernel

_FAMILIES = {
    "smooth": (SmoothBuiltin, {"name", "dim", "value"}),
    "additive": (Additive, {"f", "g", "h", "dim"}),
    "riesz": (RieszGradient, {"s", "dim", "delta", "matrix", "box_diameter"}),
    "log": (LogGradient, {"dim", "delta", "matrix", "box_diameter"}),
    "dirac": (DiracApprox, {"direction", "dim", "delta"}),
}


def kernel_from_dict(spec: dict) -> Kernel:
    """Inverse of ``Kernel.to_dict``; rejects unknown keys."""
    spec = dict(spec)
    family = spec.pop("family", None)
    if family == "modulated":
        base = kernel_from_dict(spec.pop("base"))
        unknown = set(spec) - {"gamma", "shift"}
        if unknown:
            raise InputError(f"unknown keys for modulated kernel: {sorted(unknown)}")
        return Modulated(base=base, **spec)
    if family not in _FAMILIES:
        raise InputError(f"unknown kernel family {family!r}; expected one of {sorted(_FAMILIES) + ['modulated']}")
    cls, allowed = _FAMILIES[family]
    unknown = set(spec) - allowed
    if unknown:
        raise InputError(f"unknown keys for {family} kernel: {sorted(unknown)}")
    for key in ("value", "direction"):
        if key in spec and not isinstance(spec[key], (list, tuple)):
            spec[key] = (spec[key],)
    return cls(**spec)


def eval_mollified(spec: Kernel, t: float, x, y) -> np.ndarray:
    """``b^delta_t(x, y)`` with input validation."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y)) and np.isfinite(t)):
        raise InputError("kernel arguments must be finite")
    if x.shape[-1:] != (spec.dim,) or y.shape[-1:] != (spec.dim,):
        raise InputError(f"points must have trailing dimension {spec.dim}")
    return spec(t, x, y)


# ---------------------------------------------------------------------------
# thermic Besov estimator
# ---------------------------------------------------------------------------


@dataclass
class SampledField:
    """Scalar field sampled on the box ``[-L, L]^d`` with spacing h."""

    values: np.ndarray
    half_width: float
    spacing: float

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        n = int(round(2 * self.half_width / self.spacing)) + 1
        if any(k != n for k in self.values.shape):
            raise InputError(f"field shape {self.values.shape} inconsistent with box and spacing ({n} per axis)")
        if not np.all(np.isfinite(self.values)):
            raise InputError("field values must be finite")

    @property
    def dim(self) -> int:
        return self.values.ndim

    @classmethod
    def from_function(cls, fn, half_width: float, spacing: float, dim: int) -> "SampledField":
        n = int(round(2 * half_width / spacing)) + 1
        axis = np.linspace(-half_width, half_width, n)
        mesh = np.stack(np.meshgrid(*([axis] * dim), indexing="ij"), axis=-1)
        return cls(fn(mesh), half_width, spacing)


def dyadic_times(t_min: float, t_max: float) -> list[float]:
    out, t = [], t_max
    while t >= t_min * (1 - 1e-12):
        out.append(t)
        t /= 2
    return out


def besov_thermic_norm(field: SampledField, alpha: float, t_min: float, t_max: float) -> float:
    """``max_t t^{-alpha/2} sup|G_t f|`` over dyadic ``t`` in ``[t_min, t_max]``."""
    if alpha > 0:
        raise DomainError("the thermic estimator is used for alpha <= 0")
    if not (0 < t_min < t_max <= 1):
        raise DomainError("need 0 < t_min < t_max <= 1")
    if field.spacing**2 > t_min / 4:
        raise ResolutionError(f"spacing {field.spacing} too coarse for t_min = {t_min} (need h^2 <= t_min/4)")
    best = 0.0
    for t in dyadic_times(t_min, t_max):
        smoothed = gaussian_filter(field.values, sigma=math.sqrt(t) / field.spacing, mode="reflect", truncate=6.0)
        best = max(best, t ** (-alpha / 2) * float(np.max(np.abs(smoothed))))
    return best


# ---------------------------------------------------------------------------
# report
# ---------------------------------------------------------------------------


@dataclass
class KernelReport:
    family: str
    dim: int
    delta: float
    nominal_alpha: float
    q: float
    H: float
    threshold: float
    admissible: bool
    margin: float
    regime: str

    @property
    def threshold_text(self) -> str:
        if math.isinf(self.threshold):
            return "all H"
        return f"H < {self.threshold:.6g}"

    def to_dict(self) -> dict:
        d = dict(self.__dict__)
        d["threshold"] = None if math.isinf(self.threshold) else self.threshold
        d["margin"] = None if math.isinf(self.margin) else self.margin
        d["threshold_text"] = self.threshold_text
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def to_text(self) -> str:
        rows = [
            ("family", self.family),
            ("dimension", str(self.dim)),
            ("delta", f"{self.delta:g}"),
            ("nominal alpha", f"{self.nominal_alpha:g}"),
            ("q", f"{self.q:g}"),
            ("H", f"{self.H:g}"),
            ("threshold", self.threshold_text),
            ("regime", self.regime),
            ("verdict", "admissible" if self.admissible else "NOT admissible"),
        ]
        width = max(len(k) for k, _ in rows)
        return "\n".join(f"{k.ljust(width)} : {v}" for k, v in rows)


def kernel_report(spec: Kernel, q: float, H: float) -> KernelReport:
    alpha = spec.nominal_alpha
    if alpha >= 1:
        # smooth kernels lie in every B^a with a < 1, so the H bound is vacuous
        ok = 1 < q <= 2 and H > 0
        return KernelReport(spec.family, spec.dim, spec.delta, alpha, q, H, math.inf, ok,
                            math.inf if ok else -math.inf, "Lipschitz")
    ok, margin = admissible(alpha, q, H)
    regime = "distributional" if alpha < 0 else "Hölder/bounded"
    return KernelReport(spec.family, spec.dim, spec.delta, alpha, q, H, hurst_threshold(alpha, q), ok, margin, regime)
