"""Problem instances: diffusion coefficients, running payoff and harvest price.

A `ModelSpec` bundles the drift ``b``, volatility ``sigma``, running payoff
``h`` and unit price ``K`` of the controlled diffusion

    dX = b(X) dt - dzeta + sigma(X) dW,

together with what the solver needs about the level function ``K b + h``:
its unique interior maximiser ``xi`` and the two branches of its inverse.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Optional

import numpy as np
from scipy.optimize import brentq

from . import scale_speed as _ss

_EPS = np.finfo(float).eps
_PROBE_J = np.arange(1, 41)

CATALOG_KINDS = ("logistic", "log_ou", "mean_revert")


class ModelError(ValueError):
    """The model is malformed or violates a standing structural condition."""


class DomainError(ModelError):
    """A level ``lambda`` outside the domain of a root function."""


class ConfigError(ValueError):
    """Malformed model configuration (bad field, type or value)."""


@dataclass(frozen=True)
class Limits:
    """Analytic boundary values; ``None`` means 'probe numerically'."""

    drift_at_zero: Optional[float] = None
    vol_at_zero: Optional[float] = None
    payoff_at_zero: Optional[float] = None
    level_at_infinity: Optional[float] = None


@dataclass(frozen=True)
class ModelSpec:
    """Coefficients of a controlled diffusion with harvesting payoff.

    All callables must accept numpy arrays (and floats) and act elementwise.
    ``closed_log_scale(beta, x)`` returns ``log p'_beta(x)`` when a closed
    form is known.
    """

    name: str
    drift: Callable
    drift_deriv: Callable
    vol: Callable
    payoff: Callable
    payoff_deriv: Callable
    price: float = 1.0
    growth_exponent: float = 2.0
    limits: Limits = Limits()
    closed_log_scale: Optional[Callable] = None
    holder_half: bool = False
    config: Optional[dict] = field(default=None, compare=False)

    def __post_init__(self):
        if not self.price > 0:
            raise ModelError(f"price K must be positive, got {self.price}")
        if not self.growth_exponent > 0:
            raise ModelError(f"growth exponent k must be positive, got {self.growth_exponent}")

    def level(self, x):
        """``K b(x) + h(x)``."""
        return self.price * self.drift(x) + self.payoff(x)

    def level_deriv(self, x):
        return self.price * self.drift_deriv(x) + self.payoff_deriv(x)

    def closed_scale(self, beta, x):
        if self.closed_log_scale is None:
            return None
        return np.exp(self.closed_log_scale(beta, x))

    def scale_speed(self, anchor, **kw):
        return _ss.ScaleSpeed(self, anchor, **kw)

    def with_payoff(self, payoff, payoff_deriv=None, payoff_at_zero=None, name=None):
        """Copy of the model with a different running payoff (used for moment checks)."""
        if payoff_deriv is None:
            payoff_deriv = _fd_derivative(payoff)
        return dataclasses.replace(
            self,
            name=name or f"{self.name}+payoff",
            payoff=payoff,
            payoff_deriv=payoff_deriv,
            limits=dataclasses.replace(self.limits, payoff_at_zero=payoff_at_zero, level_at_infinity=None),
            config=None,
        )

    @cached_property
    def jitted(self):
        """numba-compiled ``(drift, vol, payoff)`` or ``None`` if not compilable."""
        try:
            import numba

            fns = tuple(numba.njit(cache=False)(f) for f in (self.drift, self.vol, self.payoff))
            for f in fns:
                float(f(0.5))
            return fns
        except Exception:
            return None


@dataclass(frozen=True)
class CriticalPoints:
    xi: float
    lambda_bar: float
    lambda_under: float
    level_at_zero: float

    def to_dict(self):
        return {k: _json_float(v) for k, v in dataclasses.asdict(self).items()}


# ---------------------------------------------------------------------------
# catalog


def _fd_derivative(f):
    h0 = _EPS ** (1.0 / 3.0)

    def deriv(x):
        x = np.asarray(x, dtype=float)
        h = h0 * np.maximum(1.0, np.abs(x))
        # stay inside (0, inf): one-sided step for x <= h
        fwd = x <= h
        c = (f(x + h) - f(np.where(fwd, x, x - h))) / np.where(fwd, h, 2.0 * h)
        return c if c.ndim else float(c)

    return deriv


def _payoff(spec):
    kind = spec.get("kind", "zero") if spec else "zero"
    if kind == "zero":
        def h(x):
            return 0.0 * x

        return h, h, 0.0, "zero"
    if kind in ("power", "power_inada"):
        a = float(spec.get("a", 0.5))
        c = float(spec.get("c", 1.0))
        if not 0.0 < a < 1.0:
            raise ModelError(f"power payoff needs 0 < a < 1, got a={a}")
        if not c > 0.0:
            raise ModelError(f"power payoff needs c > 0, got c={c}")

        def h(x):
            return c * x ** a

        def dh(x):
            return a * c * x ** (a - 1.0)

        return h, dh, 0.0, f"power(a={a:g},c={c:g})"
    raise ModelError(f"unknown payoff kind {kind!r} (expected 'zero' or 'power')")


def _positive(**kw):
    for k, v in kw.items():
        if not v > 0:
            raise ModelError(f"parameter {k} must be strictly positive, got {v}")


def _pow_diff(x, beta, e):
    """``x**e - beta**e`` without cancellation when ``x`` is close to ``beta``."""
    return beta ** e * np.expm1(e * np.log(x / beta))


def _logistic(kappa, gamma, sigma, ell, check):
    _positive(kappa=kappa, gamma=gamma, sigma=sigma)
    if not 1.0 <= ell <= 1.5:
        raise ModelError(f"logistic model needs ell in [1, 3/2], got ell={ell}")
    if check and ell == 1.0 and not kappa * gamma - 0.5 * sigma ** 2 > 0:
        raise ModelError(
            f"logistic model with ell=1 needs kappa*gamma - sigma^2/2 > 0, "
            f"got {kappa * gamma - 0.5 * sigma ** 2:g}"
        )
    s2 = sigma ** 2

    def b(x):
        return kappa * (gamma - x) * x

    def db(x):
        return kappa * gamma - 2.0 * kappa * x

    def vol(x):
        return sigma * x ** ell

    if ell == 1.0:
        def log_scale(beta, x):
            return 2.0 * kappa * gamma / s2 * np.log(beta / x) + 2.0 * kappa / s2 * (x - beta)
    elif ell == 1.5:
        def log_scale(beta, x):
            return 2.0 * kappa / s2 * np.log(x / beta) + 2.0 * kappa * gamma / s2 * _pow_diff(x, beta, -1.0)
    else:
        e1, e2 = -2.0 * (ell - 1.0), 3.0 - 2.0 * ell

        def log_scale(beta, x):
            return (kappa * gamma / ((ell - 1.0) * s2) * _pow_diff(x, beta, e1)
                    + 2.0 * kappa / (e2 * s2) * _pow_diff(x, beta, e2))

    return b, db, vol, log_scale, Limits(0.0, 0.0, None, -math.inf), 2.0 * ell


def _log_ou(kappa, gamma, sigma, check):
    _positive(kappa=kappa, sigma=sigma)
    s2 = sigma ** 2
    c0 = kappa * gamma + 0.5 * s2

    def b(x):
        return (c0 - kappa * np.log(x)) * x

    def db(x):
        return c0 - kappa - kappa * np.log(x)

    def vol(x):
        return sigma * x

    def log_scale(beta, x):
        lx, lb = np.log(x), np.log(beta)
        return kappa / s2 * (lx * lx - lb * lb) - (2.0 * kappa * gamma / s2 + 1.0) * (lx - lb)

    return b, db, vol, log_scale, Limits(0.0, 0.0, None, -math.inf), 2.0


def _mean_revert(kappa, gamma, sigma, ell, check):
    _positive(kappa=kappa, gamma=gamma, sigma=sigma)
    if not 0.5 <= ell <= 1.0:
        raise ModelError(f"mean-reverting model needs ell in [1/2, 1], got ell={ell}")
    if check and ell == 0.5 and not kappa * gamma - 0.5 * sigma ** 2 > 0:
        raise ModelError(
            f"mean-reverting model with ell=1/2 needs kappa*gamma - sigma^2/2 > 0, "
            f"got {kappa * gamma - 0.5 * sigma ** 2:g}"
        )
    s2 = sigma ** 2

    def b(x):
        return kappa * (gamma - x)

    def db(x):
        return -kappa + 0.0 * x

    def vol(x):
        return sigma * x ** ell

    if ell == 0.5:
        def log_scale(beta, x):
            return 2.0 * kappa * gamma / s2 * np.log(beta / x) + 2.0 * kappa / s2 * (x - beta)
    elif ell == 1.0:
        def log_scale(beta, x):
            return 2.0 * kappa / s2 * np.log(x / beta) + 2.0 * kappa * gamma / s2 * _pow_diff(x, beta, -1.0)
    else:
        e1, e2 = -(2.0 * ell - 1.0), 2.0 * (1.0 - ell)

        def log_scale(beta, x):
            return (2.0 * kappa * gamma / ((2.0 * ell - 1.0) * s2) * _pow_diff(x, beta, e1)
                    + kappa / ((1.0 - ell) * s2) * _pow_diff(x, beta, e2))

    return b, db, vol, log_scale, Limits(kappa * gamma, 0.0, None, -math.inf), 2.0 * ell


def _norm_kind(kind):
    return str(kind).strip().lower().replace("-", "_")


def build_catalog_model(kind, params, payoff=None, price=1.0, limits=None, check_conditions=True):
    """Build one of the catalog diffusions.

    Parameters
    ----------
    kind : {'logistic', 'log_ou', 'mean_revert'}
        ``'log-ou'`` / ``'mean-revert'`` spellings are accepted too.
    params : dict
        ``kappa``, ``gamma``, ``sigma`` and, except for ``log_ou``, ``ell``.
    payoff : dict, optional
        ``{'kind': 'zero'}`` (default) or ``{'kind': 'power', 'a': .., 'c': ..}``
        for ``h(x) = c x**a``.
    price : float
        Unit harvest price ``K``.
    limits : dict, optional
        Overrides for the analytic boundary values.
    check_conditions : bool
        Reject parameter combinations for which the standing conditions are
        known to fail (e.g. logistic with ``ell = 1`` needs
        ``kappa*gamma - sigma**2/2 > 0``). Turn off to study such models with
        `validate_assumptions`.
    """
    k = _norm_kind(kind)
    if k not in CATALOG_KINDS:
        raise ModelError(f"unknown model kind {kind!r}; expected one of logistic, log-ou, mean-revert")
    p = dict(params)
    try:
        kappa, gamma, sigma = float(p.pop("kappa")), float(p.pop("gamma")), float(p.pop("sigma"))
        ell = float(p.pop("ell", 1.0 if k == "logistic" else 0.5)) if k != "log_ou" else None
    except KeyError as exc:
        raise ModelError(f"missing model parameter {exc.args[0]!r}") from None
    if p:
        raise ModelError(f"unexpected model parameters: {sorted(p)}")

    h, dh, h0, pname = _payoff(payoff)
    if k == "logistic":
        b, db, vol, log_scale, lim, kexp = _logistic(kappa, gamma, sigma, ell, check_conditions)
    elif k == "log_ou":
        b, db, vol, log_scale, lim, kexp = _log_ou(kappa, gamma, sigma, check_conditions)
    else:
        b, db, vol, log_scale, lim, kexp = _mean_revert(kappa, gamma, sigma, ell, check_conditions)
        if check_conditions and pname == "zero":
            raise ModelError("mean-reverting drift with zero payoff: K b' + h' < 0 everywhere, "
                             "no interior maximiser of K b + h (use a concave power payoff)")
    lim = dataclasses.replace(lim, payoff_at_zero=h0)
    if limits:
        lim = dataclasses.replace(lim, **{kk: (None if v is None else float(v)) for kk, v in limits.items()})
    config = {
        "kind": k.replace("_", "-"),
        "params": {"kappa": kappa, "gamma": gamma, "sigma": sigma, **({"ell": ell} if ell is not None else {})},
        "payoff": dict(payoff) if payoff else {"kind": "zero"},
        "price": float(price),
    }
    if limits:
        config["limits"] = dict(limits)
    if not check_conditions:
        config["check_conditions"] = False
    name = f"{k}({', '.join(f'{n}={v:g}' for n, v in config['params'].items())}; h={pname}; K={price:g})"
    return ModelSpec(
        name=name, drift=b, drift_deriv=db, vol=vol, payoff=h, payoff_deriv=dh, price=float(price),
        growth_exponent=kexp, limits=lim, closed_log_scale=log_scale, holder_half=True, config=config,
    )


def custom_model(drift, vol, payoff=None, price=1.0, drift_deriv=None, payoff_deriv=None,
                 growth_exponent=2.0, limits=None, closed_log_scale=None, name="custom"):
    """Model from user callables; missing derivatives use central differences."""
    if payoff is None:
        def payoff(x):
            return 0.0 * x

        payoff_deriv = payoff_deriv or payoff
    fns = [_vectorised(f) for f in (drift, vol, payoff)]
    return ModelSpec(
        name=name, drift=fns[0], vol=fns[1], payoff=fns[2],
        drift_deriv=_vectorised(drift_deriv) if drift_deriv else _fd_derivative(fns[0]),
        payoff_deriv=_vectorised(payoff_deriv) if payoff_deriv else _fd_derivative(fns[2]),
        price=float(price), growth_exponent=float(growth_exponent),
        limits=limits if isinstance(limits, Limits) else Limits(**(limits or {})),
        closed_log_scale=closed_log_scale,
    )


def _vectorised(f):
    try:
        out = np.asarray(f(np.array([0.5, 1.5])))
        if out.shape == (2,):
            return f
    except Exception:
        pass
    vf = np.vectorize(f, otypes=[float])

    def g(x):
        r = vf(x)
        return r if np.ndim(r) else float(r)

    return g


_MODEL_KEYS = {"kind", "params", "payoff", "price", "limits", "check_conditions"}


def model_from_config(cfg, check_conditions=None):
    """Build a catalog model from a parsed JSON object; raises `ConfigError`."""
    if not isinstance(cfg, dict):
        raise ConfigError("model: expected an object")
    extra = set(cfg) - _MODEL_KEYS
    if extra:
        raise ConfigError(f"model: unknown field(s) {sorted(extra)}")
    if "kind" not in cfg:
        raise ConfigError("model.kind: required field missing")
    if "params" not in cfg or not isinstance(cfg["params"], dict):
        raise ConfigError("model.params: required object missing")
    for key, v in cfg["params"].items():
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            raise ConfigError(f"model.params.{key}: expected a number, got {v!r}")
    price = cfg.get("price", 1.0)
    if isinstance(price, bool) or not isinstance(price, (int, float)):
        raise ConfigError(f"model.price: expected a number, got {price!r}")
    payoff = cfg.get("payoff", {"kind": "zero"})
    if not isinstance(payoff, dict):
        raise ConfigError("model.payoff: expected an object")
    limits = cfg.get("limits")
    if limits is not None:
        if not isinstance(limits, dict):
            raise ConfigError("model.limits: expected an object")
        bad = set(limits) - {f.name for f in dataclasses.fields(Limits)}
        if bad:
            raise ConfigError(f"model.limits: unknown field(s) {sorted(bad)}")
    check = cfg.get("check_conditions", True) if check_conditions is None else check_conditions
    try:
        return build_catalog_model(cfg["kind"], cfg["params"], payoff, price, limits, check_conditions=check)
    except ModelError as exc:
        raise ConfigError(f"model: {exc}") from None


# ---------------------------------------------------------------------------
# boundary probes and critical points


def probe_limit(fn, x0=1.0, toward="zero", n=40, rtol=1e-6):
    """Numerical ``lim fn(x)`` along ``x0 * 2**(-j)`` (or ``2**j``), ``j = 1..n``.

    Returns ``(value, status)`` with status ``'converged'``, ``'diverged'``
    (value is +-inf) or ``'inconsistent'`` (value is the last probe).
    """
    sgn = -1.0 if toward == "zero" else 1.0
    xs = x0 * 2.0 ** (sgn * np.arange(1, n + 1))
    with np.errstate(all="ignore"):
        v = np.asarray(fn(xs), dtype=float)
    finite = np.isfinite(v)
    if not finite.all():
        last = v[~finite][-1] if (~finite).any() else v[-1]
        if np.isinf(last) and not np.isnan(v[-1]):
            return float(np.sign(v[-1]) * math.inf), "diverged"
        v = v[finite]
        if v.size < 6:
            return float("nan"), "inconsistent"
    d = np.diff(v)
    scale = max(1.0, abs(v[-1]))
    if np.all(np.abs(d[-4:]) <= rtol * 1e-3 * scale):
        return float(v[-1]), "converged"
    # Aitken on two overlapping triples must agree
    est = []
    for k in (0, 1):
        a, b, c = v[-3 - k], v[-2 - k], v[-1 - k]
        den = (c - b) - (b - a)
        est.append(c if den == 0 else c - (c - b) ** 2 / den)
    shrinking = np.all(np.abs(d[-5:][1:]) < np.abs(d[-5:][:-1]) * 0.95)
    if shrinking and abs(est[0] - est[1]) <= rtol * max(1.0, abs(est[0])):
        return float(est[0]), "converged"
    monotone = np.all(d[-10:] < 0) or np.all(d[-10:] > 0)
    growing = np.all(np.abs(d[-5:][1:]) >= np.abs(d[-5:][:-1]) * 0.95)
    if monotone and growing:
        return float(np.sign(d[-1]) * math.inf), "diverged"
    return float(v[-1]), "inconsistent"


def _limit(model, attr, fn, toward="zero", x0=1.0):
    val = getattr(model.limits, attr)
    if val is not None:
        return val, "analytic"
    return probe_limit(fn, x0=x0, toward=toward)


def critical_points(model, grid=None):
    """Maximiser ``xi`` of ``K b + h`` and the levels around it.

    ``grid`` is the probe grid for the sign scan of ``K b' + h'`` (default
    ``2**j`` for ``j = -40..40``). Exactly one sign change, from + to -, is
    required.
    """
    xs = np.asarray(2.0 ** np.arange(-40, 41) if grid is None else grid, dtype=float)
    with np.errstate(all="ignore"):
        d = np.asarray(model.level_deriv(xs), dtype=float)
    ok = np.isfinite(d) & (d != 0.0)
    xs_, s = xs[ok], np.sign(d[ok])
    flips = np.nonzero(np.diff(s) != 0)[0]
    if flips.size == 0:
        raise ModelError(
            "K b' + h' has no sign change on the probe grid "
            f"[{xs[0]:g}, {xs[-1]:g}]: K b + h has no interior maximiser"
        )
    if flips.size > 1:
        brackets = [(float(xs_[i]), float(xs_[i + 1])) for i in flips]
        raise ModelError(f"K b' + h' changes sign {flips.size} times, brackets {brackets}; "
                         "the maximiser of K b + h is ambiguous")
    i = flips[0]
    if not (s[i] > 0 > s[i + 1]):
        raise ModelError("K b' + h' changes sign from - to +: K b + h has an interior minimum, not a maximum")
    xi = brentq(lambda x: float(model.level_deriv(x)), xs_[i], xs_[i + 1], xtol=1e-15, rtol=4 * _EPS)
    lam_bar = float(model.level(xi))

    b0, st_b = _limit(model, "drift_at_zero", model.drift)
    h0, st_h = _limit(model, "payoff_at_zero", model.payoff)
    if st_b not in ("analytic", "converged") or st_h not in ("analytic", "converged"):
        raise ModelError(f"limits of b and h at 0 could not be established (b: {st_b}, h: {st_h})")
    level0 = model.price * b0 + h0

    lam_under = model.limits.level_at_infinity
    if lam_under is None:
        lam_under, status = probe_limit(model.level, x0=max(xi, 1.0), toward="infinity")
        if status == "inconsistent" or lam_under == math.inf:
            raise ModelError(f"lim K b + h at infinity could not be established (probe status {status})")
    if not lam_under < level0 < lam_bar:
        raise ModelError(
            f"level ordering violated: need lim_inf (K b + h) < K b(0) + h(0) < K b(xi) + h(xi), "
            f"got {lam_under:g}, {level0:g}, {lam_bar:g}"
        )
    return CriticalPoints(xi=float(xi), lambda_bar=lam_bar, lambda_under=float(lam_under), level_at_zero=float(level0))


def rho_upper(model, cp, lam):
    """Root of ``K b + h = lam`` above ``xi``."""
    lam = float(lam)
    if not cp.lambda_under < lam < cp.lambda_bar:
        raise DomainError(f"lambda={lam:g} outside ({cp.lambda_under:g}, {cp.lambda_bar:g})")

    def f(x):
        return float(model.level(x)) - lam

    a = cp.xi
    if f(a) <= 0.0:
        return a
    b = 2.0 * a
    for _ in range(2000):
        if f(b) < 0.0:
            break
        a, b = b, 2.0 * b
    else:
        raise DomainError(f"no root of K b + h = {lam:g} found above xi")
    return brentq(f, a, b, xtol=1e-15, rtol=4 * _EPS, maxiter=500)


def rho_lower(model, cp, lam):
    """Root of ``K b + h = lam`` in ``(0, xi)``."""
    lam = float(lam)
    if not cp.level_at_zero < lam < cp.lambda_bar:
        raise DomainError(f"lambda={lam:g} outside ({cp.level_at_zero:g}, {cp.lambda_bar:g}): no lower root")

    def f(x):
        return float(model.level(x)) - lam

    b = cp.xi
    if f(b) <= 0.0:
        return b
    a = 0.5 * b
    for _ in range(1000):
        if f(a) < 0.0:
            break
        a, b = 0.5 * a, a
    else:
        raise DomainError(f"no root of K b + h = {lam:g} found below xi")
    return brentq(f, a, b, xtol=1e-300, rtol=4 * _EPS, maxiter=500)


# ---------------------------------------------------------------------------
# assumption checks


@dataclass
class Check:
    name: str
    passed: bool
    evidence: dict = field(default_factory=dict)
    witness: Optional[str] = None

    def to_dict(self):
        return {"name": self.name, "passed": self.passed, "evidence": _jsonable(self.evidence),
                "witness": self.witness}


@dataclass
class AssumptionReport:
    model: str
    checks: list
    warnings: list = field(default_factory=list)

    @property
    def passed(self):
        return all(c.passed for c in self.checks)

    def failed(self):
        return [c for c in self.checks if not c.passed]

    def __getitem__(self, name):
        for c in self.checks:
            if c.name == name:
                return c
        raise KeyError(name)

    def to_dict(self):
        return {"model": self.model, "passed": self.passed, "checks": [c.to_dict() for c in self.checks],
                "warnings": list(self.warnings)}


@dataclass(frozen=True)
class ValidationConfig:
    anchor: Optional[float] = None  # default: xi if available, else 1
    grid_exponents: tuple = (-20, 20)
    grid_points: int = 161
    tol: float = _ss.VALIDATOR_TOL
    growth_slope_slack: float = 0.05


def validate_assumptions(model, cfg=None):
    """Numerical surrogate for the standing conditions on ``b``, ``sigma``, ``h``, ``K``.

    Failures are reported, never raised. Every failed check names the grid
    point or integral that witnessed it.
    """
    cfg = cfg or ValidationConfig()
    lo, hi = cfg.grid_exponents
    xs = np.logspace(lo * math.log10(2), hi * math.log10(2), cfg.grid_points)
    checks, warnings = [], []

    with np.errstate(all="ignore"):
        sig = np.asarray(model.vol(xs), dtype=float)
    bad = ~(np.isfinite(sig) & (sig ** 2 > 0))
    checks.append(Check("vol_positive", not bad.any(), {"grid": [float(xs[0]), float(xs[-1])]},
                        None if not bad.any() else f"sigma^2 <= 0 or undefined at x={xs[bad][0]:.6g}"))

    k = model.growth_exponent
    with np.errstate(all="ignore"):
        ratio = sig ** 2 / (1.0 + xs ** k)
        upper = xs >= 1.0
        slope = float(np.polyfit(np.log1p(xs[upper] ** k), np.log(sig[upper] ** 2), 1)[0])
    c_fit = float(np.nanmax(ratio))
    grow_ok = bool(np.isfinite(c_fit) and slope <= 1.0 + cfg.growth_slope_slack)
    checks.append(Check(
        "growth_bound", grow_ok,
        {"k": k, "fitted_C": c_fit, "loglog_slope": slope, "note": "numeric evidence only"},
        None if grow_ok else f"sigma^2/(1+x^k) grows with slope {slope:.3g} on [1, {xs[-1]:.3g}]",
    ))

    lim_ev, lim_ok, lim_wit = {}, True, []
    for attr, fn in (("drift_at_zero", model.drift), ("vol_at_zero", model.vol), ("payoff_at_zero", model.payoff)):
        val, status = _limit(model, attr, fn)
        lim_ev[attr] = {"value": val, "status": status}
        if status not in ("analytic", "converged") or not math.isfinite(val):
            lim_ok = False
            lim_wit.append(f"{attr}: {status} (last probe {val:.6g} at x=2^-40)")
    checks.append(Check("limits_at_zero", lim_ok, lim_ev, "; ".join(lim_wit) or None))

    try:
        cp = critical_points(model)
        checks.append(Check("level_unimodal", True, cp.to_dict()))
    except ModelError as exc:
        cp = None
        checks.append(Check("level_unimodal", False, {}, str(exc)))

    anchor = cfg.anchor or (cp.xi if cp else 1.0)
    ss = _ss.ScaleSpeed(model, anchor, rtol=cfg.tol, atol=cfg.tol)
    for end in ("zero", "infinity"):
        try:
            diag = _ss.scale_tail(ss, end)
            ok = diag["diverges"]
            wit = None if ok else (f"int p' over dyadic panels toward {end} decays "
                                   f"(mean log ratio {diag['mean_log_ratio']:.4g}): p_beta({end}) is finite")
        except (ValueError, FloatingPointError, _ss.QuadratureError) as exc:
            diag, ok, wit = {}, False, f"scale evaluation failed: {exc}"
        checks.append(Check(f"scale_divergence_at_{end}", ok, diag, wit))

    def speed_check(name, fn, lower, upper):
        try:
            res = ss.speed_integral(fn, lower, upper, rtol=cfg.tol, atol=cfg.tol)
        except Exception as exc:  # evaluation blew up: report, do not raise
            checks.append(Check(name, False, {}, f"integral evaluation failed: {exc}"))
            return
        ev = {"value": res.value, "abs_error": res.abs_error, **res.diagnostics}
        ok = res.converged and math.isfinite(res.value)
        checks.append(Check(name, ok, ev, None if ok else f"integral estimate {res.value:.6g} did not converge "
                                                          f"({res.diagnostics})"))

    one = lambda s: np.ones_like(s)  # noqa: E731
    speed_check("speed_mass_near_zero", one, 0.0, 1.0)
    speed_check("speed_mass_total", one, 0.0, math.inf)
    speed_check("moment_k", lambda s: s ** k, 0.0, math.inf)
    speed_check("payoff_integrable", lambda s: np.abs(model.payoff(s)), 0.0, math.inf)

    with np.errstate(all="ignore"):
        hv = np.asarray(model.payoff(xs), dtype=float)
    h_ok = bool(np.all(np.isfinite(hv)))
    checks.append(Check("payoff_bounded_below", h_ok, {"min_on_grid": float(np.nanmin(hv))},
                        None if h_ok else f"h undefined at x={xs[~np.isfinite(hv)][0]:.6g}"))
    checks.append(Check("price_positive", model.price > 0, {"K": model.price},
                        None if model.price > 0 else f"K={model.price}"))
    if not model.holder_half:
        warnings.append("Hoelder-1/2 continuity of sigma is not checkable numerically; assumed")
    return AssumptionReport(model.name, checks, warnings)


def _json_float(v):
    if isinstance(v, float) and not math.isfinite(v):
        return "inf" if v > 0 else ("-inf" if v < 0 else "nan")
    return v


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        return _json_float(float(obj))
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj
