"""Density dependent population processes and their deterministic skeleton.

A model is a finite list of jumps ``j`` with rate functions ``lambda_j``.
The process ``Z_n`` on the integers jumps ``i -> i + j`` at rate
``n * lambda_j(i / n)``.  Rates are clamped at zero so that the lattice chain
is defined everywhere.

Rate functions must accept numpy arrays and broadcast elementwise.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np
from scipy import optimize

from .errors import ConfigError, DegenerateVariance, NoRoot, NonAttracting

try:  # Python >= 3.11
    import tomllib
except ModuleNotFoundError:  # pragma: no cover
    import tomli as tomllib

__all__ = [
    "Jump", "ModelSpec", "Skeleton", "AssumptionReport",
    "drift", "variance_rate", "total_rate", "drift_derivative",
    "build_skeleton", "check_assumptions", "superpose",
    "immigration_death", "sis", "three_jump", "random_walk", "declining",
    "MODELS", "make_model", "load_model_config",
]

RateFn = Callable[[np.ndarray], np.ndarray]

ROOT_XTOL = 1e-12
FD_STEP = 1e-6


@dataclass(frozen=True)
class Jump:
    """One jump size with its rate function and envelope constant ``c_j``."""

    j: int
    rate: RateFn
    envelope: float
    deriv: RateFn | None = None

    def __call__(self, z):
        return np.maximum(0.0, np.asarray(self.rate(np.asarray(z, dtype=float)), dtype=float))


@dataclass(frozen=True)
class ModelSpec:
    jumps: tuple[Jump, ...]
    alpha: float = 1.0
    name: str = "custom"
    bracket: tuple[float, float] = (0.0, 10.0)
    delta: float = 0.25
    params: Mapping[str, float] = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "jumps", tuple(self.jumps))
        sizes = [jp.j for jp in self.jumps]
        if any(int(j) != j or j == 0 for j in sizes):
            raise ConfigError(f"jump sizes must be nonzero integers, got {sizes}")
        if len(set(sizes)) != len(sizes):
            raise ConfigError(f"jump sizes must be distinct, got {sizes}")
        if not 0.0 < self.alpha <= 1.0:
            raise ConfigError(f"alpha must lie in (0, 1], got {self.alpha}")
        if self.delta <= 0.0:
            raise ConfigError(f"delta must be positive, got {self.delta}")
        if any(jp.envelope < 0 for jp in self.jumps):
            raise ConfigError("envelope constants must be nonnegative")

    @property
    def sizes(self) -> np.ndarray:
        return np.array([jp.j for jp in self.jumps], dtype=np.int64)

    @property
    def max_jump(self) -> int:
        return int(np.max(np.abs(self.sizes))) if self.jumps else 0

    @property
    def s_alpha(self) -> float:
        return float(sum(abs(jp.j) ** (2 + self.alpha) * jp.envelope for jp in self.jumps))

    def rates(self, z) -> np.ndarray:
        """Clamped rates, shape ``(len(jumps),) + np.shape(z)``."""
        z = np.asarray(z, dtype=float)
        if not self.jumps:
            return np.zeros((0,) + z.shape)
        return np.stack([np.broadcast_to(jp(z), z.shape) for jp in self.jumps])

    def rate_of(self, j: int, z) -> np.ndarray:
        """Clamped rate of jump ``j`` (zero if ``j`` is not a jump of the model)."""
        for jp in self.jumps:
            if jp.j == j:
                return np.broadcast_to(jp(z), np.shape(z)).astype(float)
        return np.zeros(np.shape(z))


def _moment(model: ModelSpec, z, power: int):
    z = np.asarray(z, dtype=float)
    if not model.jumps:
        out = np.zeros(z.shape)
    else:
        w = model.sizes.astype(float) ** power
        out = np.tensordot(w, model.rates(z), axes=1)
    return float(out) if out.ndim == 0 else out


def drift(model: ModelSpec, z):
    """Average growth rate ``F(z) = sum_j j * lambda_j(z)``."""
    return _moment(model, z, 1)


def variance_rate(model: ModelSpec, z):
    """Quadratic variation ``sigma^2(z) = sum_j j^2 * lambda_j(z)``."""
    return _moment(model, z, 2)


def total_rate(model: ModelSpec, z):
    """Overall jump rate ``Lambda(z) = sum_j lambda_j(z)``."""
    return _moment(model, z, 0)


def drift_derivative(model: ModelSpec, z, step: float = FD_STEP):
    """``F'(z)``: analytic if every jump carries ``deriv``, else a central difference."""
    z = np.asarray(z, dtype=float)
    if model.jumps and all(jp.deriv is not None for jp in model.jumps):
        out = sum(jp.j * np.asarray(jp.deriv(z), dtype=float) for jp in model.jumps)
        out = np.broadcast_to(out, z.shape)
    else:
        out = (np.asarray(drift(model, z + step)) - np.asarray(drift(model, z - step))) / (2 * step)
    return float(out) if np.ndim(out) == 0 else np.asarray(out)


def superpose(a: ModelSpec, b: ModelSpec, name: str | None = None) -> ModelSpec:
    """Model whose rate for each jump is the sum of the rates in ``a`` and ``b``."""
    by_j: dict[int, list[Jump]] = {}
    for jp in a.jumps + b.jumps:
        by_j.setdefault(jp.j, []).append(jp)
    jumps = []
    for j, parts in by_j.items():
        if len(parts) == 1:
            jumps.append(parts[0])
        else:
            p, q = parts
            jumps.append(Jump(j, lambda z, p=p, q=q: p(z) + q(z), p.envelope + q.envelope))
    return ModelSpec(tuple(jumps), alpha=min(a.alpha, b.alpha), name=name or f"{a.name}+{b.name}",
                     bracket=a.bracket, delta=min(a.delta, b.delta))


# ---------------------------------------------------------------------------
# skeleton
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Skeleton:
    """Equilibrium point of the drift and the constants derived from it.

    ``F_prime_sup`` is ``sup |F'|`` over ``|z - c| <= delta``; it enters
    ``delta1_prime`` and the start-point condition of the exit lemma.
    """

    c: float
    F_prime_c: float
    sigma2_c: float
    v_c: float
    Lambda_star: float
    U: float
    delta1_prime: float
    F_prime_sup: float = 0.0

    def to_dict(self) -> dict:
        return {k: float(v) for k, v in self.__dict__.items()}


def _band(center: float, radius: float, size: int) -> np.ndarray:
    return np.linspace(center - radius, center + radius, size)


def build_skeleton(model: ModelSpec, grid_size: int = 2001) -> Skeleton:
    lo, hi = map(float, model.bracket)
    f_lo, f_hi = drift(model, lo), drift(model, hi)
    if f_lo == 0.0:
        c = lo
    elif f_hi == 0.0:
        c = hi
    elif np.sign(f_lo) == np.sign(f_hi):
        raise NoRoot(f"drift of {model.name!r} has no sign change on [{lo}, {hi}] "
                     f"(F={f_lo:.3g}, {f_hi:.3g})")
    else:
        c = optimize.bisect(lambda z: drift(model, z), lo, hi, xtol=ROOT_XTOL)
    fp = drift_derivative(model, c)
    if fp != 0.0:
        polished = c - drift(model, c) / fp
        if lo <= polished <= hi and abs(drift(model, polished)) <= abs(drift(model, c)):
            c = polished
            fp = drift_derivative(model, c)
    if not fp < 0.0:
        raise NonAttracting(f"F'(c) = {fp:.6g} >= 0 at c = {c:.12g}")
    s2 = variance_rate(model, c)
    if not s2 > 0.0:
        raise DegenerateVariance(f"sigma^2(c) = {s2:.6g} at c = {c:.12g}")

    lam_star = float(np.max(total_rate(model, _band(c, model.delta / 2, grid_size))))
    fp_sup = float(np.max(np.abs(drift_derivative(model, _band(c, model.delta, grid_size)))))
    U = max(1.0, 1.0 / (2.0 * lam_star)) if lam_star > 0 else math.inf
    delta1 = model.delta * math.exp(-U * fp_sup) / 4.0
    return Skeleton(c=float(c), F_prime_c=float(fp), sigma2_c=float(s2), v_c=float(s2 / (-2.0 * fp)),
                    Lambda_star=lam_star, U=U, delta1_prime=delta1, F_prime_sup=fp_sup)


@dataclass
class AssumptionReport:
    """Grid diagnostics for the standing assumptions; violations are listed, not raised."""

    eta: float
    mu_eta: float
    envelope_ratio: dict[int, float]
    epsilon: float
    L1: float
    L2: float
    s_alpha: float
    support: list[int]
    violations: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations

    @property
    def envelope_ok(self) -> bool:
        return all(r <= 1.0 + 1e-12 for r in self.envelope_ratio.values())


def check_assumptions(model: ModelSpec, skeleton: Skeleton, grid_size: int = 2001,
                      eta: float | None = None, window: tuple[float, float] | None = None,
                      envelope_radius: float | None = None) -> AssumptionReport:
    """Estimate the quantities in A1-A4 on grids.

    ``mu_eta`` is the infimum of ``|F|`` over the part of ``window`` (default:
    the model bracket) at distance at least ``eta`` (default ``delta``) from
    ``c``.  The envelope ratio ``lambda_j(z) / (c_j (1 + |z - c|))`` is scanned
    over ``|z - c| <= envelope_radius``.  ``epsilon``, ``L1`` and ``L2`` are
    taken over ``|z - c| <= delta`` with finite differences.
    """
    c, delta = skeleton.c, model.delta
    eta = delta if eta is None else eta
    violations: list[str] = []

    lo, hi = window if window is not None else model.bracket
    zs = np.linspace(lo, hi, grid_size)
    far = zs[np.abs(zs - c) >= eta]
    mu_eta = float(np.min(np.abs(drift(model, far)))) if far.size else math.inf
    if not mu_eta > 0:
        violations.append(f"A1: inf |F| over |z-c|>={eta} on [{lo}, {hi}] is {mu_eta:.3g}")

    radius = envelope_radius if envelope_radius is not None else 10.0 * max(1.0, abs(c))
    ze = _band(c, radius, 4 * grid_size + 1)
    env: dict[int, float] = {}
    for jp in model.jumps:
        cap = jp.envelope * (1.0 + np.abs(ze - c))
        lam = jp(ze)
        with np.errstate(divide="ignore", invalid="ignore"):
            ratio = np.where(cap > 0, lam / cap, np.where(lam > 0, np.inf, 0.0))
        env[jp.j] = float(np.max(ratio))
        if env[jp.j] > 1.0 + 1e-12:
            violations.append(f"A2: lambda_{jp.j} exceeds c_j(1+|z-c|) (ratio {env[jp.j]:.3g})")

    band = _band(c, delta, grid_size)
    eps, L1, L2 = math.inf, 0.0, 0.0
    support = []
    h1, h2 = 1e-5, 1e-4
    for jp in model.jumps:
        at_c = float(jp(c))
        vals = jp(band)
        if at_c <= 0.0:
            if np.any(vals > 0):
                violations.append(f"A3: lambda_{jp.j} vanishes at c but not on the delta band")
            continue
        support.append(jp.j)
        eps = min(eps, float(np.min(vals)) / at_c)
        if jp.deriv is not None:
            d1 = np.abs(np.asarray(jp.deriv(band), dtype=float))
        else:
            d1 = np.abs((jp(band + h1) - jp(band - h1)) / (2 * h1))
        d2 = np.abs((jp(band + h2) - 2 * vals + jp(band - h2)) / h2 ** 2)
        L1 = max(L1, float(np.max(d1)) / at_c)
        L2 = max(L2, float(np.max(d2)) / (abs(jp.j) * at_c))
    if 1 not in support:
        violations.append("A3: jump +1 is not active at c")
    if not eps > 0:
        violations.append(f"A3: epsilon estimate {eps:.3g} is not positive")
    if not (math.isfinite(L1) and math.isfinite(L2)):
        violations.append("A4: derivative bounds are not finite")
    return AssumptionReport(eta=eta, mu_eta=mu_eta, envelope_ratio=env, epsilon=eps, L1=L1, L2=L2,
                            s_alpha=model.s_alpha, support=sorted(support), violations=violations)


# ---------------------------------------------------------------------------
# built-in models
# ---------------------------------------------------------------------------

def _const(value: float) -> RateFn:
    return lambda z: np.full(np.shape(z), float(value))


def immigration_death(a: float = 1.0, b: float = 1.0, **overrides) -> ModelSpec:
    """Immigration at rate ``a``, per-capita death at rate ``b``; ``c = v_c = a / b``."""
    c = a / b
    jumps = (
        Jump(1, _const(a), envelope=a, deriv=_const(0.0)),
        Jump(-1, lambda z: b * z, envelope=b * max(c, 1.0), deriv=_const(b)),
    )
    kw = dict(name="immigration_death", bracket=(0.0, 2.0 * c + 1.0), delta=min(1.0, c / 2),
              params={"a": a, "b": b})
    kw.update(overrides)
    return ModelSpec(jumps, **kw)


def sis(beta: float = 2.0, gamma: float = 1.0, **overrides) -> ModelSpec:
    """Logistic SIS epidemic: infection ``beta z (1 - z)``, recovery ``gamma z``.

    ``c = 1 - gamma / beta`` and ``v_c = gamma / beta``.  The states ``i <= 0``
    are absorbing, so the chain is only irreducible on ``1 <= i <= n``.
    """
    if not beta > gamma > 0:
        raise ConfigError("sis requires beta > gamma > 0")
    c = 1.0 - gamma / beta
    jumps = (
        Jump(1, lambda z: beta * z * (1.0 - z), envelope=beta / 4.0, deriv=lambda z: beta * (1.0 - 2.0 * z)),
        Jump(-1, lambda z: gamma * z, envelope=gamma * max(c, 1.0), deriv=_const(gamma)),
    )
    kw = dict(name="sis", bracket=(c / 2.0, 2.0), delta=min(c, 1.0 - c) / 2.0,
              params={"beta": beta, "gamma": gamma})
    kw.update(overrides)
    return ModelSpec(jumps, **kw)


def three_jump(a: float = 1.0, b: float = 1.0, kappa: float = 0.5, **overrides) -> ModelSpec:
    """Immigration-death with extra double immigrations at constant rate ``kappa``.

    ``c = (a + 2 kappa) / b`` and ``v_c = (a + 3 kappa) / b``.
    """
    c = (a + 2.0 * kappa) / b
    jumps = (
        Jump(1, _const(a), envelope=a, deriv=_const(0.0)),
        Jump(2, _const(kappa), envelope=kappa, deriv=_const(0.0)),
        Jump(-1, lambda z: b * z, envelope=b * max(c, 1.0), deriv=_const(b)),
    )
    kw = dict(name="three_jump", bracket=(0.0, 2.0 * c + 1.0), delta=min(1.0, c / 2),
              params={"a": a, "b": b, "kappa": kappa})
    kw.update(overrides)
    return ModelSpec(jumps, **kw)


def random_walk(up: float = 1.0, down: float = 1.0, up2: float = 0.0, down2: float = 0.0,
                **overrides) -> ModelSpec:
    """Rates constant in ``z``.  The drift has no attracting root, so no skeleton exists."""
    jumps = [Jump(1, _const(up), up, _const(0.0)), Jump(-1, _const(down), down, _const(0.0))]
    if up2 > 0:
        jumps.append(Jump(2, _const(up2), up2, _const(0.0)))
    if down2 > 0:
        jumps.append(Jump(-2, _const(down2), down2, _const(0.0)))
    kw = dict(name="random_walk", bracket=(-1.0, 1.0), delta=0.5,
              params={"up": up, "down": down, "up2": up2, "down2": down2})
    kw.update(overrides)
    return ModelSpec(tuple(jumps), **kw)


def declining(a: float = 2.0, b: float = 1.0, p: float = 2.0, q: float = 3.0, **overrides) -> ModelSpec:
    """Birth ``a (p - z)`` and death ``b (q - z)``, both decreasing in ``z``.

    The overall rate decreases, which is the case where the stopped likelihood
    ratio needs its modification factor.  ``c = (a p - b q) / (a - b)``.
    """
    if not a > b > 0:
        raise ConfigError("declining requires a > b > 0")
    c = (a * p - b * q) / (a - b)
    if not (c < p and c < q):
        raise ConfigError("declining requires c below both p and q")
    jumps = (
        Jump(1, lambda z: a * (p - z), envelope=a * max(p - c, 1.0), deriv=_const(-a)),
        Jump(-1, lambda z: b * (q - z), envelope=b * max(q - c, 1.0), deriv=_const(-b)),
    )
    kw = dict(name="declining", bracket=(c - 1.0, p), delta=min(1.0, (p - c) / 2),
              params={"a": a, "b": b, "p": p, "q": q})
    kw.update(overrides)
    return ModelSpec(jumps, **kw)


MODELS: dict[str, Callable[..., ModelSpec]] = {
    "immigration_death": immigration_death,
    "sis": sis,
    "three_jump": three_jump,
    "random_walk": random_walk,
    "declining": declining,
}

_OVERRIDES = ("bracket", "delta", "alpha")


def make_model(name: str, params: Mapping[str, float] | None = None, **overrides) -> ModelSpec:
    try:
        factory = MODELS[name]
    except KeyError:
        raise ConfigError(f"unknown model {name!r}; choose from {sorted(MODELS)}") from None
    overrides = {k: v for k, v in overrides.items() if v is not None}
    if "bracket" in overrides:
        overrides["bracket"] = tuple(float(x) for x in overrides["bracket"])
    try:
        return factory(**dict(params or {}), **overrides)
    except TypeError as exc:
        raise ConfigError(f"bad parameters for {name!r}: {exc}") from None


def load_model_config(source) -> ModelSpec:
    """Build a model from a TOML file path, TOML text, or an already-parsed mapping.

    Expected layout::

        [model]
        name = "sis"
        delta = 0.25
        [model.params]
        beta = 2.0
        gamma = 1.0
    """
    if isinstance(source, Mapping):
        doc = source
    else:
        text = str(source)
        if "\n" not in text and "=" not in text:
            with open(text, "rb") as fh:
                doc = tomllib.load(fh)
        else:
            doc = tomllib.loads(text)
    table = doc.get("model", doc)
    if "name" not in table:
        raise ConfigError("model table needs a 'name'")
    return make_model(table["name"], table.get("params", {}),
                      **{k: table.get(k) for k in _OVERRIDES})


def built_in_names() -> Sequence[str]:
    return tuple(MODELS)
