"""Problem definition: dynamics, running cost, discounting and control class.

Costs and drifts come from a small closed-form library so that every
structural condition (convexity, sign of mixed derivatives, growth) can be
decided without user callbacks.  All evaluators are vectorised over numpy
arrays and return exact derivatives.
"""
from __future__ import annotations

import configparser
import hashlib
import json
import re
from dataclasses import asdict, dataclass, field
from typing import Union

import numpy as np
from scipy.special import expit


class SpecError(ValueError):
    """Malformed problem specification or configuration file."""


class AssumptionError(ValueError):
    """The specification violates a structural condition that cannot be relaxed."""


class DomainError(ValueError):
    """Evaluation point outside the state domain."""


# --------------------------------------------------------------------------
# 1D curves
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class Quadratic:
    c0: float = 0.0
    c1: float = 0.0
    c2: float = 1.0

    def value(self, y):
        return self.c0 + self.c1 * y + self.c2 * y * y

    def d1(self, y):
        return self.c1 + 2.0 * self.c2 * np.asarray(y, dtype=float)

    def d2(self, y):
        return np.full_like(np.asarray(y, dtype=float), 2.0 * self.c2)

    @property
    def convexity(self) -> int:
        return int(np.sign(self.c2))

    def bounded_below(self) -> bool:
        return self.c2 > 0 or (self.c2 == 0 and self.c1 == 0)

    def second_derivative_bounded(self) -> bool:
        return True

    def globally_lipschitz(self) -> bool:
        return self.c2 == 0


@dataclass(frozen=True)
class SoftplusAffine:
    """``scale * log(1 + exp(y - shift)) + slope * y``."""

    scale: float = 1.0
    shift: float = 0.0
    slope: float = 0.0

    def value(self, y):
        return self.scale * np.logaddexp(0.0, np.asarray(y, dtype=float) - self.shift) + self.slope * y

    def d1(self, y):
        return self.scale * expit(np.asarray(y, dtype=float) - self.shift) + self.slope

    def d2(self, y):
        s = expit(np.asarray(y, dtype=float) - self.shift)
        return self.scale * s * (1.0 - s)

    @property
    def convexity(self) -> int:
        return int(np.sign(self.scale))

    def bounded_below(self) -> bool:
        # y -> -inf behaves like slope*y, y -> +inf like (scale+slope)*y
        return self.slope <= 0 and self.scale + self.slope >= 0

    def second_derivative_bounded(self) -> bool:
        return True

    def globally_lipschitz(self) -> bool:
        return True


Curve1D = Union[Quadratic, SoftplusAffine]

_CURVE_NAMES = {"quadratic": Quadratic, "softplus_affine": SoftplusAffine}


def parse_curve(text: str) -> Curve1D:
    """Parse ``quadratic(c0, c1, c2)`` or ``softplus_affine(scale, shift, slope)``."""
    m = re.fullmatch(r"\s*([a-z_]+)\s*\(([^)]*)\)\s*", text)
    if not m or m.group(1) not in _CURVE_NAMES:
        raise SpecError(f"cannot parse curve {text!r}")
    args = [float(a) for a in m.group(2).split(",") if a.strip()]
    if len(args) != 3:
        raise SpecError(f"curve {text!r} needs exactly three parameters")
    return _CURVE_NAMES[m.group(1)](*args)


def curve_to_text(c: Curve1D) -> str:
    name = "quadratic" if isinstance(c, Quadratic) else "softplus_affine"
    return f"{name}({', '.join(repr(float(v)) for v in asdict(c).values())})"


# --------------------------------------------------------------------------
# running costs
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class CostEval:
    h: np.ndarray
    h1: np.ndarray
    h2: np.ndarray
    h11: np.ndarray
    h12: np.ndarray
    h22: np.ndarray


def _full(x, v):
    return np.full(np.shape(x), float(v))


@dataclass(frozen=True)
class SumSquares:
    """``x1^2 + x2^2``."""

    def evaluate(self, x1, x2) -> CostEval:
        x1, x2 = np.broadcast_arrays(np.asarray(x1, float), np.asarray(x2, float))
        return CostEval(x1**2 + x2**2, 2 * x1, 2 * x2, _full(x1, 2), _full(x1, 0), _full(x1, 2))


@dataclass(frozen=True)
class DiffSquare:
    """``(x1 - x2)^2``."""

    def evaluate(self, x1, x2) -> CostEval:
        x1, x2 = np.broadcast_arrays(np.asarray(x1, float), np.asarray(x2, float))
        d = x1 - x2
        return CostEval(d * d, 2 * d, -2 * d, _full(x1, 2), _full(x1, -2), _full(x1, 2))


@dataclass(frozen=True)
class SumSquare:
    """``(x1 + x2)^2``."""

    def evaluate(self, x1, x2) -> CostEval:
        x1, x2 = np.broadcast_arrays(np.asarray(x1, float), np.asarray(x2, float))
        s = x1 + x2
        return CostEval(s * s, 2 * s, 2 * s, _full(x1, 2), _full(x1, 2), _full(x1, 2))


@dataclass(frozen=True)
class TargetPlusConvex:
    """``(x1 - target)^2 + f(x2)``."""

    target: float = 0.0
    f: Curve1D = field(default_factory=Quadratic)

    def evaluate(self, x1, x2) -> CostEval:
        x1, x2 = np.broadcast_arrays(np.asarray(x1, float), np.asarray(x2, float))
        d = x1 - self.target
        return CostEval(
            d * d + self.f.value(x2), 2 * d, self.f.d1(x2), _full(x1, 2), _full(x1, 0), self.f.d2(x2)
        )


@dataclass(frozen=True)
class Separable:
    """``h1(x1) + h2(x2)``."""

    h1: Curve1D = field(default_factory=Quadratic)
    h2: Curve1D = field(default_factory=Quadratic)

    def evaluate(self, x1, x2) -> CostEval:
        x1, x2 = np.broadcast_arrays(np.asarray(x1, float), np.asarray(x2, float))
        return CostEval(
            self.h1.value(x1) + self.h2.value(x2),
            self.h1.d1(x1),
            self.h2.d1(x2),
            self.h1.d2(x1),
            _full(x1, 0),
            self.h2.d2(x2),
        )


Cost = Union[SumSquares, DiffSquare, SumSquare, TargetPlusConvex, Separable]

# --------------------------------------------------------------------------
# drift of the second component, volatility
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class Affine:
    """``b2(x) = a2 + b12*x1 + b22*x2``."""

    a2: float = 0.0
    b12: float = 0.0
    b22: float = 0.0

    def evaluate(self, x1, x2):
        x1, x2 = np.broadcast_arrays(np.asarray(x1, float), np.asarray(x2, float))
        b = self.a2 + self.b12 * x1 + self.b22 * x2
        z = _full(x1, 0)
        return b, _full(x1, self.b12), _full(x1, self.b22), z, z


@dataclass(frozen=True)
class ConvexForm:
    """``b2(x) = phi(x1) + b22*x2``."""

    phi: Curve1D = field(default_factory=Quadratic)
    b22: float = 0.0

    def evaluate(self, x1, x2):
        x1, x2 = np.broadcast_arrays(np.asarray(x1, float), np.asarray(x2, float))
        b = self.phi.value(x1) + self.b22 * x2
        return b, self.phi.d1(x1), _full(x1, self.b22), self.phi.d2(x1), _full(x1, 0)


Drift2 = Union[Affine, ConvexForm]


@dataclass(frozen=True)
class Constant:
    sigma: float


@dataclass(frozen=True)
class Linear:
    """``sigma_bar(y) = sigma * y`` on each component; domain is the open quadrant."""

    sigma: float


@dataclass(frozen=True)
class Degenerate:
    """No noise on the controlled component; ``sigma`` on the second one."""

    sigma: float


SigmaKind = Union[Constant, Linear, Degenerate]

BOUNDED_VARIATION = "bounded_variation"
MONOTONE_INCREASING = "monotone_increasing"


@dataclass(frozen=True)
class ProblemSpec:
    a1: float
    b11: float
    drift2: Drift2
    sigma_kind: SigmaKind
    rho: float
    cost: Cost
    kappa_plus: float = 1.0
    kappa_minus: float = 1.0
    control_mode: str = BOUNDED_VARIATION
    p: int = 2

    def __post_init__(self):
        if not self.rho > 0:
            raise SpecError(f"discount rho must be positive, got {self.rho}")
        if not self.sigma_kind.sigma > 0:
            raise SpecError(f"sigma must be positive, got {self.sigma_kind.sigma}")
        if not (self.kappa_plus > 0 and self.kappa_minus > 0):
            raise SpecError("control costs kappa_plus, kappa_minus must be positive")
        if self.control_mode not in (BOUNDED_VARIATION, MONOTONE_INCREASING):
            raise SpecError(f"unknown control mode {self.control_mode!r}")
        if self.p != 2:
            raise SpecError("every library cost has quadratic growth: p must be 2")

    # -- evaluation -------------------------------------------------------

    @property
    def linear_sigma(self) -> bool:
        return isinstance(self.sigma_kind, Linear)

    @property
    def degenerate(self) -> bool:
        return isinstance(self.sigma_kind, Degenerate)

    @property
    def rho_hat(self) -> float:
        return self.rho - self.b11

    @property
    def has_upper_constraint(self) -> bool:
        return self.control_mode == BOUNDED_VARIATION

    def drift(self, x1, x2):
        x1 = np.asarray(x1, float)
        b2 = self.drift2.evaluate(x1, x2)[0]
        b1 = self.a1 + self.b11 * np.broadcast_to(x1, np.shape(b2))
        return b1, b2

    def sigma(self, x1, x2):
        """Diagonal volatility entries ``(sigma_bar(x1), sigma_bar(x2))``."""
        x1, x2 = np.broadcast_arrays(np.asarray(x1, float), np.asarray(x2, float))
        s = self.sigma_kind.sigma
        if isinstance(self.sigma_kind, Linear):
            return s * x1, s * x2
        if isinstance(self.sigma_kind, Degenerate):
            return np.zeros_like(x1), np.full_like(x2, s)
        return np.full_like(x1, s), np.full_like(x2, s)

    def cost_eval(self, x1, x2) -> CostEval:
        return self.cost.evaluate(x1, x2)

    def h(self, x1, x2):
        return self.cost.evaluate(x1, x2).h

    def in_domain(self, x1, x2) -> np.ndarray:
        x1, x2 = np.broadcast_arrays(np.asarray(x1, float), np.asarray(x2, float))
        if self.linear_sigma:
            return (x1 > 0) & (x2 > 0)
        return np.isfinite(x1) & np.isfinite(x2)

    def to_dict(self) -> dict:
        def enc(obj):
            if isinstance(obj, (Quadratic, SoftplusAffine)):
                return curve_to_text(obj)
            d = {"kind": type(obj).__name__}
            for k, v in asdict(obj).items():
                sub = getattr(obj, k)
                d[k] = enc(sub) if not isinstance(sub, (int, float)) else float(v)
            return d

        return {
            "a1": float(self.a1),
            "b11": float(self.b11),
            "drift2": enc(self.drift2),
            "sigma_kind": enc(self.sigma_kind),
            "rho": float(self.rho),
            "cost": enc(self.cost),
            "kappa_plus": float(self.kappa_plus),
            "kappa_minus": float(self.kappa_minus),
            "control_mode": self.control_mode,
            "p": int(self.p),
        }

    def spec_hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()


@dataclass(frozen=True)
class PointEval:
    h: float
    Dh: np.ndarray
    D2h: np.ndarray
    drift_vector: np.ndarray
    drift_jacobian: np.ndarray
    sigma_row: np.ndarray


def eval_problem(spec: ProblemSpec, x) -> PointEval:
    """Closed-form cost, drift and volatility at a single point."""
    x1, x2 = float(x[0]), float(x[1])
    if not spec.in_domain(x1, x2):
        raise DomainError(f"point {(x1, x2)} outside the state domain")
    c = spec.cost_eval(x1, x2)
    b2, b2_1, b2_2, _, _ = spec.drift2.evaluate(x1, x2)
    s1, s2 = spec.sigma(x1, x2)
    return PointEval(
        h=float(c.h),
        Dh=np.array([c.h1, c.h2], dtype=float),
        D2h=np.array([[c.h11, c.h12], [c.h12, c.h22]], dtype=float),
        drift_vector=np.array([spec.a1 + spec.b11 * x1, float(b2)]),
        drift_jacobian=np.array([[spec.b11, 0.0], [float(b2_1), float(b2_2)]]),
        sigma_row=np.array([float(s1), float(s2)]),
    )


# --------------------------------------------------------------------------
# structural assumptions
# --------------------------------------------------------------------------

PASS, FAIL, RELAXED = "PASS", "FAIL", "RELAXED"


@dataclass
class Check:
    name: str
    status: str
    detail: str = ""
    hard: bool = False


@dataclass
class ValidationReport:
    checks: list
    L_bar: float
    rho_star: float
    discount_threshold: float
    box: tuple
    x1_star: float | None = None

    def status(self, name: str) -> str:
        for c in self.checks:
            if c.name == name:
                return c.status
        raise KeyError(name)

    @property
    def hard_fail(self) -> bool:
        return any(c.hard and c.status == FAIL for c in self.checks)

    @property
    def sign_conditions_ok(self) -> bool:
        return self.status("sign_conditions") in (PASS, RELAXED)

    def to_dict(self) -> dict:
        return {
            "checks": [asdict(c) for c in self.checks],
            "L_bar": self.L_bar,
            "rho_star": self.rho_star,
            "discount_threshold": self.discount_threshold,
            "box": list(self.box),
            "x1_star": self.x1_star,
        }


DEFAULT_BOX = (-4.0, 4.0, -4.0, 4.0)
_TOL = 1e-12


def default_box(spec: ProblemSpec) -> tuple:
    if spec.linear_sigma:
        return (0.04, 4.0, 0.04, 4.0)
    return DEFAULT_BOX


def rho_star(p: int) -> int:
    return p * (2 * p - 1)


def _lattice(box, n=41):
    x1 = np.linspace(box[0], box[1], n)
    x2 = np.linspace(box[2], box[3], n)
    return np.meshgrid(x1, x2)


def _all(mask_values, sign):
    """True if ``sign * values >= -tol`` everywhere."""
    return bool(np.all(sign * np.asarray(mask_values) >= -_TOL))


def validate_assumptions(spec: ProblemSpec, box=None) -> ValidationReport:
    """Check the structural conditions on a computational box.

    Conditions satisfied only through one of the known refinements (affine
    drift with the eigenvector property, sign-flipped or concave variants,
    relaxed lower growth) are reported as RELAXED.
    """
    box = tuple(float(v) for v in (box or default_box(spec)))
    if spec.linear_sigma and (box[0] <= 0 or box[2] <= 0):
        raise AssumptionError("linear volatility needs a box inside the open positive quadrant")
    X1, X2 = _lattice(box)
    c = spec.cost_eval(X1, X2)
    b2, b2_1, b2_2, b2_11, b2_12 = spec.drift2.evaluate(X1, X2)
    affine = isinstance(spec.drift2, Affine)
    const_sigma = isinstance(spec.sigma_kind, (Constant, Degenerate))
    checks: list[Check] = []

    # -- running cost ------------------------------------------------------
    convex = bool(np.all(c.h11 >= -_TOL) and np.all(c.h22 >= -_TOL) and np.all(c.h11 * c.h22 - c.h12**2 >= -1e-9))
    checks.append(Check("h_convex", PASS if convex else FAIL, "Hessian PSD on the box lattice", hard=True))
    strict = bool(np.all(c.h11 > 0))
    checks.append(Check("h_x1x1_positive", PASS if strict else FAIL, f"min h_x1x1 = {c.h11.min():.6g}", hard=True))

    cost = spec.cost
    if isinstance(cost, SumSquares):
        lower, note = PASS, "kappa1 = 1"
    elif isinstance(cost, TargetPlusConvex):
        lower, note = (PASS, "kappa1 = 1/2") if cost.f.bounded_below() else (FAIL, "f unbounded below")
    elif isinstance(cost, Separable):
        ok1 = isinstance(cost.h1, Quadratic) and cost.h1.c2 > 0
        lower = PASS if ok1 and cost.h2.bounded_below() else FAIL
        note = "h1 quadratic with positive curvature, h2 bounded below"
    else:
        lower, note = FAIL, "no kappa1 |x1|^2 lower bound"
    if lower == FAIL and affine and const_sigma and float(np.min(c.h)) >= -1e12:
        bounded = not isinstance(cost, (TargetPlusConvex, Separable)) or (
            getattr(cost, "f", None) is None or cost.f.bounded_below()
        )
        if bounded:
            lower, note = RELAXED, "affine drift, constant volatility: h >= -kappa2 suffices"
    checks.append(Check("h_lower_growth", lower, note))
    checks.append(Check("h_upper_growth", PASS, "library costs grow at most quadratically"))
    checks.append(Check("h_local_lipschitz", PASS, "library costs have locally Lipschitz gradients"))
    checks.append(Check("h_semiconcavity", PASS, "library costs have bounded Hessians"))

    # -- drift ---------------------------------------------------------------
    jac = np.stack(
        [np.stack([np.full_like(b2_1, spec.b11), np.zeros_like(b2_1)], -1), np.stack([b2_1, b2_2], -1)], -2
    )
    L_bar = float(np.max(np.linalg.norm(jac, ord=2, axis=(-2, -1))))
    b_convex = affine or spec.drift2.phi.convexity >= 0
    b_concave = affine or spec.drift2.phi.convexity <= 0
    checks.append(Check("b2_convex", PASS if b_convex else FAIL, "phi'' sign" if not affine else "affine"))
    if affine:
        lip = PASS
    else:
        lip = PASS if spec.drift2.phi.globally_lipschitz() else RELAXED
    checks.append(Check("drift_lipschitz", lip, f"L_bar = {L_bar:.6g} on the box"))

    # -- sign conditions -----------------------------------------------------
    couples = not (np.all(np.abs(b2_1) <= _TOL) and np.all(np.abs(b2_11) <= _TOL))
    hx2_nonneg = _all(c.h2, +1) or not couples
    hx2_nonpos = _all(c.h2, -1) or not couples
    triple_le = _all(b2_1, -1) and _all(b2_12, -1) and _all(c.h12, -1)
    triple_ge = _all(b2_1, +1) and _all(b2_12, +1) and _all(c.h12, +1)
    # concave variant uses -b_x1x2
    ctriple_le = _all(b2_1, -1) and _all(-b2_12, -1) and _all(c.h12, -1)
    ctriple_ge = _all(b2_1, +1) and _all(-b2_12, +1) and _all(c.h12, +1)
    checks.append(Check("h_x2_nonneg", PASS if hx2_nonneg else FAIL, "vacuous" if not couples else ""))
    checks.append(Check("sign_triple_nonpositive", PASS if triple_le else FAIL, "b2_x1, b2_x1x2, h_x1x2 <= 0"))
    checks.append(Check("sign_triple_nonnegative", PASS if triple_ge else FAIL, "b2_x1, b2_x1x2, h_x1x2 >= 0"))
    route = None
    if b_convex and hx2_nonneg and triple_le:
        sign_status, route = PASS, "strict"
    elif const_sigma and b_convex and hx2_nonneg and triple_ge:
        sign_status, route = RELAXED, "sign_flip"
    elif b_concave and hx2_nonpos and (ctriple_le or (const_sigma and ctriple_ge)):
        sign_status, route = RELAXED, "concave"
    elif affine and const_sigma and _all(b2_1 * c.h12, +1):
        # beta = (0, b12) is an eigenvector of the drift matrix by construction
        sign_status, route = RELAXED, "affine_eigenvector"
    else:
        sign_status = FAIL
    checks.append(Check("sign_conditions", sign_status, route or "no admissible sign pattern"))

    # -- discount -----------------------------------------------------------
    rs = rho_star(spec.p)
    if isinstance(spec.sigma_kind, Linear):
        threshold = 2 * rs * (L_bar + spec.sigma_kind.sigma**2 * (rs - 1))
    else:
        threshold = 3 * rs * L_bar
    if spec.rho > threshold:
        disc = PASS
        note = f"rho = {spec.rho} > {threshold:.6g}"
    else:
        disc, note = FAIL, f"rho = {spec.rho} <= {threshold:.6g}"
        if affine and const_sigma:
            lam = float(np.max(np.linalg.eigvals(np.array([[spec.b11, 0.0], [spec.drift2.b12, spec.drift2.b22]])).real))
            if spec.rho > 2 * lam:
                disc, note = RELAXED, f"affine drift: rho = {spec.rho} > 2 Lambda(b) = {2 * lam:.6g}"
    checks.append(Check("discount", disc, note))

    # -- linear volatility extras ---------------------------------------------
    x1_star = None
    if spec.linear_sigma:
        checks.append(Check("a1_nonneg", PASS if spec.a1 >= 0 else FAIL, "", hard=True))
        checks.append(Check("b2_nonneg_quadrant", PASS if _all(b2, +1) else FAIL, "on the box lattice", hard=True))
        x1_star = _locate_x1_star(spec, box)
        if x1_star is None:
            raise AssumptionError("linear volatility needs h_x1 <= min(0, -b11) near the x2 axis")
        level = min(0.0, -spec.b11)
        m = X1 < 2 * x1_star
        ok = bool(np.all(c.h1[m] <= level + 1e-9))
        checks.append(Check("h_x1_near_axis", PASS if ok else FAIL, f"x1* = {x1_star:.6g}", hard=True))

    return ValidationReport(checks, L_bar, float(rs), float(threshold), box, x1_star)


def _locate_x1_star(spec: ProblemSpec, box) -> float | None:
    level = min(0.0, -spec.b11)
    x2m = 0.5 * (box[2] + box[3])

    def g(y):
        return float(spec.cost_eval(y, x2m).h1) - level

    lo, hi = 1e-12, box[1]
    if g(lo) > 0:
        return None
    if g(hi) <= 0:
        return hi / 2
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if g(mid) <= 0:
            lo = mid
        else:
            hi = mid
    return lo / 2


# --------------------------------------------------------------------------
# configuration files
# --------------------------------------------------------------------------

_SECTIONS = {
    "dynamics": {"a1", "b11", "drift2", "a2", "b12", "b22", "phi", "sigma_kind", "sigma"},
    "cost": {"kind", "target", "f", "h1", "h2", "p"},
    "discount": {"rho"},
    "control": {"control_mode", "kappa_plus", "kappa_minus"},
    "grid": {"n1", "n2", "box"},
    "solver": {"eps_schedule", "eta_schedule"},
    "simulation": {"paths", "horizon", "dt", "seed", "eps", "stride", "x0"},
}


def _get(sec, key, default=None, conv=float):
    if key in sec:
        try:
            return conv(sec[key])
        except ValueError as exc:
            raise SpecError(f"bad value for {key}: {sec[key]!r}") from exc
    if default is None:
        raise SpecError(f"missing key {key!r}")
    return default


def spec_from_sections(cfg: configparser.ConfigParser) -> ProblemSpec:
    for name in cfg.sections():
        if name not in _SECTIONS:
            raise SpecError(f"unknown section [{name}]")
        unknown = set(cfg[name]) - _SECTIONS[name]
        if unknown:
            raise SpecError(f"unknown keys in [{name}]: {sorted(unknown)}")
    for name in ("dynamics", "cost", "discount"):
        if name not in cfg:
            raise SpecError(f"missing section [{name}]")
    dyn, cst = cfg["dynamics"], cfg["cost"]
    kind2 = dyn.get("drift2", "affine").strip().lower()
    if kind2 == "affine":
        drift2 = Affine(_get(dyn, "a2", 0.0), _get(dyn, "b12", 0.0), _get(dyn, "b22", 0.0))
    elif kind2 in ("convex", "convex_form"):
        drift2 = ConvexForm(_get(dyn, "phi", conv=parse_curve), _get(dyn, "b22", 0.0))
    else:
        raise SpecError(f"unknown drift2 {kind2!r}")
    sk = dyn.get("sigma_kind", "constant").strip().lower()
    sigma_cls = {"constant": Constant, "linear": Linear, "degenerate": Degenerate}.get(sk)
    if sigma_cls is None:
        raise SpecError(f"unknown sigma_kind {sk!r}")
    ck = cst.get("kind", "sum_squares").strip().lower()
    if ck == "sum_squares":
        cost = SumSquares()
    elif ck == "diff_square":
        cost = DiffSquare()
    elif ck == "sum_square":
        cost = SumSquare()
    elif ck == "target_plus_convex":
        cost = TargetPlusConvex(_get(cst, "target", 0.0), _get(cst, "f", conv=parse_curve))
    elif ck == "separable":
        cost = Separable(_get(cst, "h1", conv=parse_curve), _get(cst, "h2", conv=parse_curve))
    else:
        raise SpecError(f"unknown cost kind {ck!r}")
    ctl = cfg["control"] if "control" in cfg else {}
    return ProblemSpec(
        a1=_get(dyn, "a1", 0.0),
        b11=_get(dyn, "b11", 0.0),
        drift2=drift2,
        sigma_kind=sigma_cls(_get(dyn, "sigma")),
        rho=_get(cfg["discount"], "rho"),
        cost=cost,
        kappa_plus=_get(ctl, "kappa_plus", 1.0),
        kappa_minus=_get(ctl, "kappa_minus", 1.0),
        control_mode=ctl.get("control_mode", BOUNDED_VARIATION).strip().lower(),
        p=_get(cst, "p", 2, conv=int),
    )


def read_config(path) -> configparser.ConfigParser:
    cfg = configparser.ConfigParser(interpolation=None)
    with open(path) as fh:
        cfg.read_file(fh)
    return cfg


def load_spec(path) -> ProblemSpec:
    return spec_from_sections(read_config(path))


def spec_to_config(spec: ProblemSpec) -> configparser.ConfigParser:
    cfg = configparser.ConfigParser(interpolation=None)
    d2 = spec.drift2
    dyn = {"a1": repr(spec.a1), "b11": repr(spec.b11)}
    if isinstance(d2, Affine):
        dyn.update(drift2="affine", a2=repr(d2.a2), b12=repr(d2.b12), b22=repr(d2.b22))
    else:
        dyn.update(drift2="convex_form", phi=curve_to_text(d2.phi), b22=repr(d2.b22))
    dyn["sigma_kind"] = type(spec.sigma_kind).__name__.lower()
    dyn["sigma"] = repr(spec.sigma_kind.sigma)
    cfg["dynamics"] = dyn
    c = spec.cost
    kind = {
        SumSquares: "sum_squares",
        DiffSquare: "diff_square",
        SumSquare: "sum_square",
        TargetPlusConvex: "target_plus_convex",
        Separable: "separable",
    }[type(c)]
    cost = {"kind": kind, "p": str(spec.p)}
    if isinstance(c, TargetPlusConvex):
        cost.update(target=repr(c.target), f=curve_to_text(c.f))
    if isinstance(c, Separable):
        cost.update(h1=curve_to_text(c.h1), h2=curve_to_text(c.h2))
    cfg["cost"] = cost
    cfg["discount"] = {"rho": repr(spec.rho)}
    cfg["control"] = {
        "control_mode": spec.control_mode,
        "kappa_plus": repr(spec.kappa_plus),
        "kappa_minus": repr(spec.kappa_minus),
    }
    return cfg


def sup_abs(x) -> float:
    return float(np.max(np.abs(x))) if np.size(x) else 0.0

