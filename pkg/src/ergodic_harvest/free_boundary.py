"""Free-boundary system for the optimal threshold and the HJB value gradient.

The optimal pair ``(beta_star, lambda_star)`` solves

    K b(beta) + h(beta) = lambda
    Theta(beta, lambda) = int_0^beta [K b + h - lambda] dm_beta = 0.

For fixed ``beta`` the second equation is linear in ``lambda`` with root
``Lambda(beta)``, the speed-measure average of ``K b + h`` over ``(0, beta)``.
The solver finds the fixed point ``beta = rho_up(Lambda(beta))`` above the
maximiser ``xi``.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np
from scipy.optimize import brentq

from .model import CriticalPoints, DomainError, ModelError, critical_points, probe_limit, rho_lower, rho_upper
from .model import _json_float, _jsonable
from .scale_speed import QuadratureError

SOLVER_RTOL = 1e-12


class SolverError(RuntimeError):
    """The free-boundary solver failed; ``trace`` holds the ``(beta, Lambda, g)`` evaluations."""

    def __init__(self, message, trace=None):
        super().__init__(message)
        self.trace = list(trace or [])


def _ss(model, anchor, ss=None):
    if ss is None:
        return model.scale_speed(anchor)
    return ss if ss.anchor == anchor else ss.rebased(anchor)


def speed_mass(model, beta, rtol=SOLVER_RTOL, ss=None):
    """``m_beta(]0, beta[)``."""
    res = _ss(model, beta, ss).speed_integral(np.ones_like, 0.0, beta, rtol=rtol, atol=1e-300)
    if not res.converged:
        raise QuadratureError(
            f"speed mass m_beta(]0,{beta:g}[) is not finite (integral diverges at 0)", res.diagnostics)
    return res.value


def theta(model, beta, lam, rtol=SOLVER_RTOL, ss=None):
    """``Theta(beta, lam) = int_0^beta [K b + h - lam] dm_beta``."""
    lam = float(lam)
    res = _ss(model, beta, ss).speed_integral(lambda s: model.level(s) - lam, 0.0, beta, rtol=rtol, atol=1e-300)
    return res.require("Theta")


def big_lambda(model, beta, rtol=SOLVER_RTOL, anchor=None, ss=None):
    """Speed-measure average of ``K b + h`` over ``(0, beta)``; the root of ``Theta(beta, .)``.

    ``anchor`` changes the speed-measure normalisation; the ratio does not
    depend on it.
    """
    s = _ss(model, beta if anchor is None else anchor, ss)
    mass = s.speed_integral(np.ones_like, 0.0, beta, rtol=rtol, atol=1e-300)
    if not mass.converged:
        raise QuadratureError(
            f"m_beta(]0,{beta:g}[) is infinite: the speed measure must be finite near 0", mass.diagnostics)
    num = s.speed_integral(model.level, 0.0, beta, rtol=rtol, atol=1e-300).require("int (K b + h) dm")
    return num / mass.value


def theta_ode_terms(model, beta, lam, step=None, rtol=1e-13):
    """Pieces of ``sigma^2/2 dTheta/dbeta + b Theta - (K b + h - lam)``.

    The derivative in the anchor/upper limit is a central difference with
    step ``1e-5 * beta`` by default.
    """
    step = 1e-5 * beta if step is None else step
    d = (theta(model, beta + step, lam, rtol) - theta(model, beta - step, lam, rtol)) / (2.0 * step)
    return {
        "dtheta": d,
        "theta": theta(model, beta, lam, rtol),
        "half_sigma2": 0.5 * float(model.vol(beta)) ** 2,
        "drift": float(model.drift(beta)),
        "source": float(model.level(beta)) - lam,
    }


def theta_ode_residual(model, beta, lam, step=None, rtol=1e-13):
    t = theta_ode_terms(model, beta, lam, step, rtol)
    return t["half_sigma2"] * t["dtheta"] + t["drift"] * t["theta"] - t["source"]


@dataclass(frozen=True)
class SolverConfig:
    xtol: float = 1e-12
    quad_rtol: float = SOLVER_RTOL
    residual_tol: float = 1e-8
    max_doublings: int = 10


@dataclass(frozen=True)
class ThresholdSolution:
    beta_star: float
    lambda_star: float
    critical: CriticalPoints
    theta_residual: float
    level_residual: float
    fixed_point_residual: float
    speed_mass: float
    root_slope: float = math.nan
    trace: tuple = field(default=(), compare=False)
    model_name: str = ""

    def to_dict(self):
        d = asdict(self)
        d["critical"] = self.critical.to_dict()
        d["trace"] = [list(t) for t in self.trace]
        return _jsonable(d)

    @classmethod
    def from_dict(cls, d):
        crit = {k: float(v) for k, v in d["critical"].items()}
        return cls(
            beta_star=float(d["beta_star"]), lambda_star=float(d["lambda_star"]), critical=CriticalPoints(**crit),
            theta_residual=float(d.get("theta_residual", math.nan)),
            level_residual=float(d.get("level_residual", math.nan)),
            fixed_point_residual=float(d.get("fixed_point_residual", math.nan)),
            speed_mass=float(d.get("speed_mass", math.nan)), root_slope=float(d.get("root_slope", math.nan)),
            trace=tuple(tuple(t) for t in d.get("trace", ())), model_name=d.get("model_name", ""),
        )


def solve_threshold(model, cp=None, cfg=None):
    """Optimal threshold and long-run rate.

    Brackets the root of ``g(beta) = beta - rho_up(Lambda(beta))`` starting
    from ``g(xi) < 0``; the right end starts where ``K b + h`` falls below
    ``Lambda(xi)`` and is doubled until ``g > 0`` (at most ``2**10 * xi``).
    """
    cfg = cfg or SolverConfig()
    cp = cp or critical_points(model)
    trace = []
    ss = model.scale_speed(cp.xi)

    def g(beta):
        try:
            lam = big_lambda(model, beta, cfg.quad_rtol, ss=ss)
        except QuadratureError as exc:
            raise SolverError(f"Lambda({beta:g}) failed: {exc}", trace) from exc
        if not cp.lambda_under < lam < cp.lambda_bar:
            raise SolverError(f"Lambda({beta:g})={lam:g} left ({cp.lambda_under:g}, {cp.lambda_bar:g})", trace)
        val = beta - rho_upper(model, cp, lam)
        trace.append((float(beta), float(lam), float(val)))
        return val

    lo = cp.xi
    g_lo = g(lo)
    if not g_lo < 0:
        raise SolverError(f"g(xi) = {g_lo:g} is not negative", trace)
    hi = rho_upper(model, cp, trace[0][1])
    cap = 2.0 ** cfg.max_doublings * cp.xi
    while True:
        g_hi = g(hi)
        if g_hi > 0:
            break
        lo, g_lo = hi, g_hi
        hi *= 2.0
        if hi > max(cap, trace[0][0]):
            raise SolverError(f"no fixed point found below {cap:g} (bracket growth exhausted)", trace)
    beta = brentq(g, lo, hi, xtol=cfg.xtol * max(1.0, cp.xi), rtol=4 * np.finfo(float).eps, maxiter=200)

    pts = sorted(trace)
    signs = np.sign([t[2] for t in pts])
    signs = signs[signs != 0]
    crossings = np.nonzero(np.diff(signs))[0]
    if crossings.size > 1:
        cands = [(pts[i][0], pts[i + 1][0]) for i in crossings]
        raise SolverError(f"g changes sign {crossings.size} times, candidate brackets {cands}", trace)
    left = max((t for t in pts if t[2] < 0), key=lambda t: t[0])
    right = min((t for t in pts if t[2] > 0), key=lambda t: t[0])
    slope = (right[2] - left[2]) / (right[0] - left[0]) if right[0] > left[0] else math.nan

    lam = big_lambda(model, beta, cfg.quad_rtol, ss=ss)
    th = theta(model, beta, lam, cfg.quad_rtol)
    lev = float(model.level(beta)) - lam
    fp = beta - rho_upper(model, cp, lam)
    mass = speed_mass(model, beta, cfg.quad_rtol)
    sol = ThresholdSolution(
        beta_star=float(beta), lambda_star=float(lam), critical=cp, theta_residual=abs(th),
        level_residual=abs(lev), fixed_point_residual=abs(fp), speed_mass=mass, root_slope=slope,
        trace=tuple(trace), model_name=model.name,
    )
    if not beta > cp.xi:
        raise SolverError(f"beta*={beta:g} is not above xi={cp.xi:g}", trace)
    if not cp.level_at_zero < lam < cp.lambda_bar:
        raise SolverError(f"lambda*={lam:g} outside (K b(0) + h(0), lambda_bar) = "
                          f"({cp.level_at_zero:g}, {cp.lambda_bar:g})", trace)
    if max(abs(th), abs(lev)) > cfg.residual_tol:
        raise SolverError(f"residuals |Theta|={abs(th):.3g}, |K b + h - lambda|={abs(lev):.3g} "
                          f"exceed {cfg.residual_tol:g}", trace)
    if not slope > 0:
        raise SolverError(f"g is not increasing through its root (slope {slope:g})", trace)
    return sol


def newton_cross_check(model, beta0, lam0, tol=1e-12, max_iter=50, rtol=SOLVER_RTOL):
    """2-D Newton on ``(Theta, K b + h - lambda)`` from ``(beta0, lam0)``.

    The ``beta`` column of the Jacobian uses the first-order ODE satisfied by
    ``Theta(., lambda)``.
    """
    beta, lam = float(beta0), float(lam0)
    for _ in range(max_iter):
        mass = speed_mass(model, beta, rtol)
        th = theta(model, beta, lam, rtol)
        s2 = float(model.vol(beta)) ** 2
        f = float(model.level(beta)) - lam
        dth_db = 2.0 / s2 * (f - float(model.drift(beta)) * th)
        jac = np.array([[dth_db, -mass], [float(model.level_deriv(beta)), -1.0]])
        step = np.linalg.solve(jac, -np.array([th, f]))
        beta, lam = beta + step[0], lam + step[1]
        if beta <= 0:
            raise SolverError("Newton iterate left (0, inf)")
        if abs(step[0]) <= tol * max(1.0, beta) and abs(step[1]) <= tol * max(1.0, abs(lam)):
            return beta, lam
    raise SolverError("Newton cross-check did not converge")


class ValueGradient:
    """``w'`` and ``w''`` of the HJB solution built from a threshold solution.

    On ``[rho_low(lambda*), beta*]`` the gradient is
    ``K + int_x^beta* [K b + h - lambda*] dm_x``; below ``rho_low`` it uses the
    equivalent ``K - int_0^x [K b + h - lambda*] dm_x`` (equal when
    ``Theta(beta*, lambda*) = 0``), which avoids multiplying a vanishing
    integral by a diverging scale derivative. Above ``beta*``, ``w' = K``.
    Values are computed lazily.
    """

    def __init__(self, model, sol, rtol=1e-11):
        self.model = model
        self.sol = sol
        self.rtol = rtol
        self.beta = sol.beta_star
        self.lam = sol.lambda_star
        self._ss = model.scale_speed(self.beta)
        try:
            self.switch = rho_lower(model, sol.critical, self.lam)
        except DomainError:
            self.switch = 0.0
        self._f = lambda s: model.level(s) - self.lam

    def _upper_form(self, x):
        s = self._ss.rebased(x)
        return self.model.price + s.speed_integral(self._f, x, self.beta, rtol=self.rtol, atol=1e-300).require("w'")

    def _lower_form(self, x, rtol=None):
        s = self._ss.rebased(x)
        rtol = self.rtol if rtol is None else rtol
        return self.model.price - s.speed_integral(self._f, 0.0, x, rtol=rtol, atol=1e-300).require("w'")

    def _grad1(self, x, branch=None):
        if x <= 0:
            raise ValueError(f"w' is defined on (0, inf), got x={x}")
        if x >= self.beta:
            return self.model.price
        branch = branch or ("upper" if x >= self.switch else "lower")
        return self._upper_form(x) if branch == "upper" else self._lower_form(x)

    def grad(self, x, branch=None):
        """``w'(x)``; ``branch`` forces 'upper' or 'lower' representation on ``(0, beta*)``."""
        if np.ndim(x) == 0:
            return self._grad1(float(x), branch)
        return np.array([self._grad1(float(v), branch) for v in np.ravel(x)]).reshape(np.shape(x))

    def second(self, x):
        """``w''(x)`` from the ODE on ``(0, beta*]`` (left limit at ``beta*``), 0 above."""
        x = float(x)
        if x > self.beta:
            return 0.0
        m = self.model
        wp = self.model.price if x == self.beta else self.grad(x)
        return 2.0 * (self.lam - float(m.payoff(x)) - float(m.drift(x)) * wp) / float(m.vol(x)) ** 2

    def lower_form_at_threshold(self):
        """``K - int_0^beta* [K b + h - lambda*] dm``: equals ``K`` iff ``Theta(beta*, lambda*) = 0``."""
        return self._lower_form(self.beta)

    def grad_at_zero(self, n=40, rtol=1e-8):
        """``(lim_{x -> 0} w'(x), status)`` extrapolated along ``beta* 2**-j``, ``j = 1..n``.

        Near 0 the speed density can vary on a scale ``1/r`` with ``r = 2 b s / sigma^2``
        very large; evaluating it at a float ``s`` then carries relative noise
        ``~ r * eps``, so the probe uses a looser ``rtol`` than `grad`.
        """
        def grad(xs):
            return np.array([self.model.price if x >= self.beta else
                             (self._upper_form(x) if x >= self.switch else self._lower_form(x, rtol))
                             for x in np.ravel(xs)])

        return probe_limit(grad, x0=self.beta, toward="zero", n=n)


def value_gradient(model, sol, rtol=1e-11):
    return ValueGradient(model, sol, rtol)


@dataclass(frozen=True)
class HjbGrid:
    n_interior: int = 120
    min_exponent: int = 16
    n_drift: int = 200
    horizon: float = 10.0
    fd_rel_step: float = 1e-3


DEFAULT_HJB_TOLS = {
    "ode_residual": 1e-6,
    "zero_condition": 1e-8,
    "gradient_constraint": 1e-10,
    "drift_branch": 1e-10,
    "pasting_gradient": 1e-10,
    "pasting_second": 1e-6,
    "limit_at_zero": 1e-6,
}


@dataclass
class HjbReport:
    checks: dict
    grid: dict
    bound_c1: float

    @property
    def passed(self):
        return all(c["passed"] for c in self.checks.values() if c["passed"] is not None)

    def to_dict(self):
        return _jsonable({"passed": self.passed, "checks": self.checks, "grid": self.grid, "bound_c1": self.bound_c1})

    def table(self):
        rows = [f"{'check':<22}{'value':>14}{'tol':>12}  status"]
        for name, c in self.checks.items():
            status = "n/a" if c["passed"] is None else ("PASS" if c["passed"] else "FAIL")
            val = c["value"]
            vs = f"{val:14.3e}" if isinstance(val, float) else f"{str(val):>14}"
            rows.append(f"{name:<22}{vs}{c['tol']:12.1e}  {status}")
        return "\n".join(rows)


def _fd_second(vg, x, h):
    branch = "upper" if x >= vg.switch else "lower"
    pts = x + h * np.array([-2.0, -1.0, 1.0, 2.0])
    f = vg.grad(pts, branch=branch)
    return (f[0] - 8.0 * f[1] + 8.0 * f[2] - f[3]) / (12.0 * h)


def verify_hjb(model, sol, vg=None, grid=None, tols=None):
    """Check every branch of the HJB inequality on log-spaced grids.

    The ODE residual uses a finite-difference ``w''`` (not the ODE
    rearrangement used by `ValueGradient.second`), and the ODE branch also
    requires the boundary condition ``lim w'/p'_beta* = Theta(beta*, lambda*) = 0``
    that selects the bounded solution.
    """
    grid = grid or HjbGrid()
    tols = {**DEFAULT_HJB_TOLS, **(tols or {})}
    vg = vg or ValueGradient(model, sol)
    beta, lam, K = sol.beta_star, sol.lambda_star, model.price

    xs = beta * np.logspace(-grid.min_exponent * math.log10(2), math.log10(1 - 1e-3), grid.n_interior)
    wp = vg.grad(xs)
    res = []
    for x, w1 in zip(xs, wp):
        h = min(grid.fd_rel_step * x, (beta - x) / 3.0)
        if vg.switch > 0:
            gap = abs(x - vg.switch)
            if gap < 2.5 * h:
                h = max(gap / 2.5, 1e-6 * x)
        w2 = _fd_second(vg, x, h)
        res.append(0.5 * float(model.vol(x)) ** 2 * w2 + float(model.drift(x)) * w1 + float(model.payoff(x)) - lam)
    res = np.abs(np.asarray(res))
    zero_cond = abs(K - vg.lower_form_at_threshold())

    checks = {}

    def add(name, value, passed, extra=None):
        checks[name] = {"value": value, "tol": tols[name], "passed": passed, **(extra or {})}

    i = int(np.argmax(res))
    add("ode_residual", float(res[i]), bool(res[i] <= tols["ode_residual"] and zero_cond <= tols["zero_condition"]),
        {"argmax_x": float(xs[i])})
    add("zero_condition", float(zero_cond), bool(zero_cond <= tols["zero_condition"]))
    gmin = float(np.min(wp - K))
    add("gradient_constraint", gmin, bool(gmin >= -tols["gradient_constraint"]),
        {"argmin_x": float(xs[int(np.argmin(wp - K))])})
    xd = beta * np.logspace(1e-9, math.log10(grid.horizon), grid.n_drift)
    dmax = float(np.max(model.level(xd) - lam))
    add("drift_branch", dmax, bool(dmax <= tols["drift_branch"]))
    pg = max(abs(float(vg.grad(beta)) - K), zero_cond)
    add("pasting_gradient", pg, bool(pg <= tols["pasting_gradient"]))
    ps = abs(vg.second(beta))
    add("pasting_second", ps, bool(ps <= tols["pasting_second"]))

    b0 = model.limits.drift_at_zero
    if b0 is None:
        b0, _ = probe_limit(model.drift)
    h0 = model.limits.payoff_at_zero
    if h0 is None:
        h0, _ = probe_limit(model.payoff)
    w0, status = vg.grad_at_zero()
    if b0 != 0 and math.isfinite(b0):
        target = (lam - h0) / b0
        err = abs(w0 - target)
        add("limit_at_zero", err, bool(err <= tols["limit_at_zero"] and status == "converged"),
            {"w_prime_0": w0, "expected": target})
    else:
        add("limit_at_zero", "n/a", None, {"w_prime_0": w0, "reason": "b(0) = 0"})

    c1 = float(max(np.max(np.abs(wp)), abs(w0) if math.isfinite(w0) else math.inf, K))
    gridinfo = {"interior": [float(xs[0]), float(xs[-1]), len(xs)], "drift": [float(xd[0]), float(xd[-1]), len(xd)],
                "switch": vg.switch}
    return HjbReport(checks, gridinfo, c1)
