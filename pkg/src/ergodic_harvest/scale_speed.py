"""Scale function, speed measure and integrals against the speed measure.

For an anchor ``beta > 0`` the scale derivative and speed density are

    p'_beta(x) = exp(-int_beta^x 2 b(s) / sigma(s)^2 ds)
    m_beta(dx) = 2 / (sigma(x)^2 p'_beta(x)) dx

Everything is evaluated in log space and integrated in the variable
``u = ln s``: near 0 and infinity the speed density behaves like a power (or
worse) of ``s``, which becomes an exponential in ``u`` and is handled by
panels of unit width in ``u``.
"""

from __future__ import annotations

import math
import threading
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

LOG2 = math.log(2.0)
# exp() overflows beyond this
_LOG_MAX = 709.0
# u = ln s is never pushed past these (s would under/overflow)
_U_MIN = -700.0
_U_MAX = 700.0

_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(20)

DEFAULT_RTOL = 1e-10
DEFAULT_ATOL = 1e-10
VALIDATOR_TOL = 1e-6


class QuadratureError(RuntimeError):
    """A speed or scale integral did not converge."""

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


@dataclass(frozen=True)
class ImproperIntegral:
    value: float
    abs_error: float
    converged: bool
    diagnostics: dict = field(default_factory=dict)

    def __float__(self):
        return self.value

    def require(self, what="speed integral"):
        """Return the value, raising `QuadratureError` if not converged."""
        if not self.converged:
            raise QuadratureError(f"{what} did not converge", self.diagnostics)
        return self.value


def _gauss_pair(f, a, b):
    """20-point Gauss-Legendre on each panel and on its two halves, plus the halves' ``int |f|``."""
    mid = 0.5 * (a + b)
    rad = 0.5 * (b - a)
    t = _GL_NODES
    w = _GL_WEIGHTS
    pts = np.concatenate(
        [
            mid[:, None] + rad[:, None] * t,
            (a + 0.5 * rad)[:, None] + 0.5 * rad[:, None] * t,
            (mid + 0.5 * rad)[:, None] + 0.5 * rad[:, None] * t,
        ],
        axis=1,
    )
    vals = f(pts.ravel()).reshape(pts.shape)
    n = t.size
    whole = rad * (vals[:, :n] @ w)
    halves = 0.5 * rad * (vals[:, n : 2 * n] @ w + vals[:, 2 * n :] @ w)
    mass = 0.5 * np.abs(rad) * (np.abs(vals[:, n:]) @ np.concatenate([w, w]))
    return whole, halves, mass


def adaptive_gauss(f, edges, rtol=DEFAULT_RTOL, atol=DEFAULT_ATOL, max_iter=60, max_panels=1 << 15):
    """Globally adaptive Gauss-Legendre quadrature of a vectorised ``f``.

    Returns ``(value, abs_err, l1, converged, panel_values)`` where
    ``panel_values`` are the integrals over the initial ``edges`` panels.
    Tolerance is relative to the L1 mass so that integrals of sign-changing
    functions with near-zero total still terminate. Panels whose error is at
    roundoff level of their own absolute mass are accepted as resolved; more
    than ``max_panels`` live panels stops refinement with ``converged=False``.
    """
    edges = np.asarray(edges, dtype=float)
    n0 = edges.size - 1
    span = float(edges[-1] - edges[0])
    a, b = edges[:-1].copy(), edges[1:].copy()
    owner = np.arange(n0)
    acc_val = np.zeros(n0)
    acc_err = np.zeros(n0)
    acc_l1 = np.zeros(n0)
    converged = False
    for _ in range(max_iter):
        whole, halves, mass = _gauss_pair(f, a, b)
        err = np.abs(whole - halves)
        if not (np.all(np.isfinite(halves)) and np.all(np.isfinite(err))):
            break
        l1 = acc_l1.sum() + mass.sum()
        target = max(atol, rtol * l1)
        tot_err = acc_err.sum() + err.sum()
        if tot_err <= target:
            np.add.at(acc_val, owner, halves)
            np.add.at(acc_err, owner, err)
            np.add.at(acc_l1, owner, mass)
            converged = True
            a = a[:0]
            break
        floor = 64.0 * np.finfo(float).eps * mass
        # width-proportional budget: accepted errors sum to at most target / 2
        bad = (err > 0.5 * target * (b - a) / span) & (err > floor)
        good = ~bad
        np.add.at(acc_val, owner[good], halves[good])
        np.add.at(acc_err, owner[good], err[good])
        np.add.at(acc_l1, owner[good], mass[good])
        if not bad.any():
            converged = True
            a = a[:0]
            break
        if 2 * int(bad.sum()) > max_panels:
            a, b, owner = a[bad], b[bad], owner[bad]
            break
        ab, bb, ob = a[bad], b[bad], owner[bad]
        mid = 0.5 * (ab + bb)
        a = np.concatenate([ab, mid])
        b = np.concatenate([mid, bb])
        owner = np.concatenate([ob, ob])
    if a.size:
        # unresolved panels: include their last estimate but flag
        whole, halves, mass = _gauss_pair(f, a, b)
        np.add.at(acc_val, owner, halves)
        np.add.at(acc_err, owner, np.abs(whole - halves))
        np.add.at(acc_l1, owner, mass)
        converged = False
    total = float(acc_val.sum())
    err = float(acc_err.sum())
    if not np.isfinite(total):
        converged = False
    return total, err, float(acc_l1.sum()), converged, acc_val


class ScaleSpeed:
    """Scale derivative and speed measure of a model, anchored at ``anchor``.

    Parameters
    ----------
    model : ModelSpec
    anchor : float
        The point ``beta`` with ``p'_beta(beta) = 1``.
    rtol, atol : float
        Default tolerances for speed integrals.
    use_closed_form : bool
        Use the model's closed-form log scale derivative when it has one.
    """

    _NODE_STEP = 0.25

    def __init__(self, model, anchor, rtol=DEFAULT_RTOL, atol=DEFAULT_ATOL, use_closed_form=True):
        anchor = float(anchor)
        if not anchor > 0.0:
            raise ValueError(f"anchor must be positive, got {anchor}")
        self.model = model
        self.anchor = anchor
        self.rtol = rtol
        self.atol = atol
        self.use_closed_form = use_closed_form and model.closed_log_scale is not None
        # generic route: cumulative exponent at u0 + j*step, shared across rebased copies
        self._u0 = math.log(anchor)
        self._offset = 0.0
        self._cache = {"pos": np.zeros(1), "neg": np.zeros(1)}
        self._lock = threading.Lock()

    def rebased(self, anchor):
        """Same diffusion, new anchor. Shares the quadrature cache."""
        new = ScaleSpeed.__new__(ScaleSpeed)
        new.__dict__.update(self.__dict__)
        new.anchor = float(anchor)
        if not self.use_closed_form:
            # log p'_new(x) = log p'_old(x) - log p'_old(new)
            new._offset = -float(self._log_scale_quad(np.asarray(anchor, float)))
        return new

    # log scale derivative ---------------------------------------------------

    def _drift_ratio_u(self, u):
        s = np.exp(u)
        return 2.0 * self.model.drift(s) * s / self.model.vol(s) ** 2

    def _extend(self, side, n):
        with self._lock:
            arr = self._cache[side]
            have = arr.size - 1
            if have >= n:
                return
            step = self._NODE_STEP if side == "pos" else -self._NODE_STEP
            j = np.arange(have, n)
            a = self._u0 + j * step
            b = a + step
            lo, hi = np.minimum(a, b), np.maximum(a, b)
            mid, rad = 0.5 * (lo + hi), 0.5 * (hi - lo)
            pts = mid[:, None] + rad[:, None] * _GL_NODES
            vals = self._drift_ratio_u(pts.ravel()).reshape(pts.shape)
            panel = rad * (vals @ _GL_WEIGHTS)
            # exponent is -int_{u0}^{u}, sign flips on the negative side
            incr = -panel if side == "pos" else panel
            self._cache[side] = np.concatenate([arr, arr[-1] + np.cumsum(incr)])

    def _log_scale_quad(self, x):
        u = np.log(x)
        k = (u - self._u0) / self._NODE_STEP
        j = np.trunc(k).astype(int)
        jmax = int(np.max(np.abs(j), initial=0))
        if (j > 0).any():
            self._extend("pos", jmax + 1)
        if (j < 0).any():
            self._extend("neg", jmax + 1)
        base = np.where(j >= 0, self._cache["pos"][np.clip(j, 0, None)], self._cache["neg"][np.clip(-j, 0, None)])
        start = self._u0 + j * self._NODE_STEP
        mid, rad = 0.5 * (start + u), 0.5 * (u - start)
        pts = mid[..., None] + rad[..., None] * _GL_NODES
        vals = self._drift_ratio_u(pts.reshape(-1)).reshape(pts.shape)
        return base - rad * (vals @ _GL_WEIGHTS)

    def log_scale_quadrature(self, x):
        """``log p'_anchor(x)`` by quadrature of the drift ratio, ignoring closed forms."""
        x = np.asarray(x, dtype=float)
        if np.any(x <= 0):
            raise ValueError("scale derivative needs x > 0")
        if self.use_closed_form:
            generic = ScaleSpeed(self.model, self.anchor, use_closed_form=False)
            return generic.log_scale_quadrature(x)
        out = self._log_scale_quad(x) + self._offset
        if not np.all(np.isfinite(out)):
            raise QuadratureError("log scale quadrature produced non-finite values", {"x": x.tolist()})
        return out if out.ndim else float(out)

    def log_scale(self, x):
        """``log p'_anchor(x) = -int_anchor^x 2b/sigma^2``."""
        x = np.asarray(x, dtype=float)
        if np.any(x <= 0):
            raise ValueError("scale derivative needs x > 0")
        if self.use_closed_form:
            out = np.asarray(self.model.closed_log_scale(self.anchor, x), dtype=float)
            return out if out.ndim else float(out)
        return self.log_scale_quadrature(x)

    def scale_derivative(self, x):
        """``p'_anchor(x)``; +inf when the exponent is beyond double range."""
        with np.errstate(over="ignore"):
            out = np.exp(self.log_scale(x))
        return out if np.ndim(out) else float(out)

    def scale_overflows(self, x):
        return np.asarray(self.log_scale(x)) > _LOG_MAX

    def log_speed_density(self, x):
        x = np.asarray(x, dtype=float)
        with np.errstate(divide="ignore"):
            out = LOG2 - 2.0 * np.log(np.abs(self.model.vol(x))) - self.log_scale(x)
        return out

    def speed_density(self, x):
        with np.errstate(over="ignore"):
            return np.exp(self.log_speed_density(x))

    # speed integrals --------------------------------------------------------

    def _u_integrand(self, integrand, center=1.0):
        """Integrand in ``t = ln(s / center)``; a float ``center`` at a stiff end keeps ``s`` exact there."""
        def g(t):
            s = center * np.exp(t)
            logd = self.log_speed_density(s) + np.log(s)
            with np.errstate(over="ignore", under="ignore", invalid="ignore"):
                dens = np.exp(logd)
                val = np.asarray(integrand(s), dtype=float) * dens
            return np.where(dens == 0.0, 0.0, val)

        return g

    def speed_integral(self, integrand, lower=0.0, upper=None, rtol=None, atol=None,
                       min_tail_panels=10, quiet_panels=5):
        """Integrate ``integrand`` against the speed measure over ``(lower, upper)``.

        ``lower`` may be 0 and ``upper`` may be ``math.inf`` (``None`` means the
        anchor). Improper ends are handled by unit panels in ``u = ln s``; a tail
        is declared converged once ``quiet_panels`` consecutive panels each add
        less than ``rtol`` times the running L1 mass (and the geometric tail
        estimate agrees).
        """
        rtol = self.rtol if rtol is None else rtol
        atol = self.atol if atol is None else atol
        upper = self.anchor if upper is None else float(upper)
        lower = float(lower)
        if not (0.0 <= lower < upper):
            raise ValueError(f"need 0 <= lower < upper, got ({lower}, {upper})")
        diag = {}
        if lower == 0.0 and math.isinf(upper):
            split = self.anchor
            left = self.speed_integral(integrand, 0.0, split, rtol, atol, min_tail_panels, quiet_panels)
            right = self.speed_integral(integrand, split, upper, rtol, atol, min_tail_panels, quiet_panels)
            diag = {"lower_tail": left.diagnostics, "upper_tail": right.diagnostics}
            ok = left.converged and right.converged
            return ImproperIntegral(left.value + right.value,
                                    left.abs_error + right.abs_error if ok else math.inf, ok, diag)
        if lower > 0.0 and math.isfinite(upper):
            ra, rb = self._end_rate(math.log(lower)), self._end_rate(math.log(upper))
            center = lower if ra >= rb else upper
            g = self._u_integrand(integrand, center)
            ul, uh = math.log(lower / center), math.log(upper / center)
            n = max(1, int(math.ceil(uh - ul)))
            edges = np.linspace(ul, uh, n + 1)
            edges[0], edges[-1] = ul, uh
            inner = np.concatenate([_grading(ul, ra, +1.0), _grading(uh, rb, -1.0)])
            inner = inner[(inner > ul) & (inner < uh)]
            edges = np.unique(np.concatenate([edges, inner]))
            val, err, _, ok, _ = adaptive_gauss(g, edges, rtol, atol)
            return ImproperIntegral(val, err if ok else math.inf, ok, {"panels": edges.size - 1})
        if lower == 0.0:
            u0 = math.log(upper)
            val, err, ok, tail = self._tail(self._u_integrand(integrand, upper), u0, -1.0, rtol, atol,
                                            min_tail_panels, quiet_panels,
                                            lead=_grading(0.0, self._end_rate(u0), -1.0))
            diag["lower_tail"] = tail
        else:
            u0 = math.log(lower)
            val, err, ok, tail = self._tail(self._u_integrand(integrand, lower), u0, +1.0, rtol, atol,
                                            min_tail_panels, quiet_panels,
                                            lead=_grading(0.0, self._end_rate(u0), +1.0))
            diag["upper_tail"] = tail
        return ImproperIntegral(val, err if ok else math.inf, ok, diag)

    def _end_rate(self, u):
        """``|d/du log p'|`` at ``u``: the inverse width of the speed density's boundary layer there."""
        with np.errstate(all="ignore"):
            r = abs(float(self._drift_ratio_u(np.array([u]))[0]))
        return r if math.isfinite(r) else 0.0

    @staticmethod
    def _tail(g, u_start, direction, rtol, atol, min_panels, quiet_panels, block=10, lead=None):
        """Tail from ``u_start = ln(end)`` outward; ``g`` and ``lead`` are in ``t = u - u_start``."""
        total = 0.0
        err = 0.0
        l1 = 0.0
        panels = []
        u = 0.0
        quiet = 0
        t_min, t_max = _U_MIN - u_start, _U_MAX - u_start
        if lead is not None and lead.size:
            # boundary layer first, in geometrically growing panels
            edges = np.concatenate([[0.0], lead])
            val, e, l, ok, _ = adaptive_gauss(g, edges if direction > 0 else edges[::-1], rtol, atol)
            if not ok:
                return val, math.inf, False, {"panels": 0, "reason": "boundary layer quadrature failed"}
            total, err, l1 = val, e, l
            u = float(lead[-1])
        while True:
            stop = u + direction * block
            if direction < 0:
                stop = max(stop, t_min)
            else:
                stop = min(stop, t_max)
            if stop == u:
                break
            nblk = max(1, int(round(abs(stop - u))))
            edges = np.linspace(u, stop, nblk + 1)
            if direction < 0:
                edges = edges[::-1]
            val, e, l, ok, pv = adaptive_gauss(g, edges, rtol, atol)
            if not ok:
                return total + val, math.inf, False, {"panels": len(panels), "reason": "panel quadrature failed",
                                                     "u_reached": float(u_start + stop)}
            if direction < 0:
                pv = pv[::-1]
            total += val
            err += e
            l1 += l
            for p in pv:
                panels.append(float(p))
                if abs(p) <= max(rtol * l1, atol * 1e-3):
                    quiet += 1
                else:
                    quiet = 0
            u = stop
            if len(panels) >= min_panels and quiet >= quiet_panels:
                ratio = _tail_ratio(panels)
                tail_est = abs(panels[-1]) * ratio / (1.0 - ratio) if ratio < 1.0 else math.inf
                if tail_est <= max(rtol * l1, atol):
                    return total, err + tail_est, True, {
                        "panels": len(panels), "decay_ratio": ratio, "u_reached": float(u_start + u),
                        "last_panel": panels[-1],
                    }
        return total, math.inf, False, {
            "panels": len(panels), "reason": "tail did not decay before the representable range",
            "decay_ratio": _tail_ratio(panels), "u_reached": float(u_start + u),
        }


def _grading(u, rate, direction, levels=60):
    """Points ``u + direction * h0 * 2**k`` up to unit distance, ``h0 ~ 1/(4(1 + rate))``."""
    h0 = 0.25 / (1.0 + rate)
    if h0 >= 0.25:
        return np.empty(0)
    k = np.arange(levels)
    d = h0 * 2.0 ** k
    d = np.append(d[d < 1.0], 1.0)
    return u + direction * d


def _tail_ratio(panels, k=4):
    tail = np.abs(np.asarray(panels[-(k + 1):]))
    if tail.size < 2:
        return 1.0
    if tail[-1] == 0.0:
        return 0.0
    with np.errstate(divide="ignore", invalid="ignore"):
        r = tail[1:] / tail[:-1]
    r = r[np.isfinite(r)]
    return float(r.max()) if r.size else 0.0


def drift_identity_residual(ss, x, rtol=None):
    """``int_x^anchor b dm_anchor - (1 - 1/p'_anchor(x))``; zero for an exact model."""
    x = float(x)
    if not 0.0 < x <= ss.anchor:
        raise ValueError("drift identity needs 0 < x <= anchor")
    if x == ss.anchor:
        return 0.0
    lhs = ss.speed_integral(ss.model.drift, x, ss.anchor, rtol=rtol).require("drift integral")
    rhs = -math.expm1(-ss.log_scale(x))
    return lhs - rhs


def scale_tail(ss, end, n_panels=40):
    """Growth of ``int p'`` over dyadic panels toward ``end`` ('zero' or 'infinity').

    The scale function diverges at that end iff these panel integrals do not
    decay. Returns the log panel integrals and a verdict.
    """
    if end not in ("zero", "infinity"):
        raise ValueError("end must be 'zero' or 'infinity'")
    step = -LOG2 if end == "zero" else LOG2
    u0 = math.log(ss.anchor)
    logs = []
    for j in range(n_panels):
        a, b = u0 + j * step, u0 + (j + 1) * step
        lo, hi = min(a, b), max(a, b)
        if lo < _U_MIN or hi > _U_MAX:
            break
        mid, rad = 0.5 * (lo + hi), 0.5 * (hi - lo)
        u = mid + rad * _GL_NODES
        with np.errstate(over="ignore", divide="ignore"):
            lv = np.asarray(ss.log_scale(np.exp(u)), dtype=float) + u
        if not np.all(np.isfinite(lv)):
            if np.any(lv == np.inf):
                logs.append(math.inf)
                break
            lv = np.where(np.isfinite(lv), lv, -np.inf)
        top = lv.max()
        if not np.isfinite(top):
            logs.append(-math.inf)
            continue
        logs.append(float(top + math.log(rad * np.sum(_GL_WEIGHTS * np.exp(lv - top)))))
        if top > _LOG_MAX * 100:
            break
    arr = np.asarray(logs)
    if arr.size and arr[-1] == math.inf:
        ratio = math.inf
    elif arr.size >= 6 and np.all(np.isfinite(arr[-6:])):
        ratio = float(np.mean(np.diff(arr[-6:])))
    elif arr.size >= 2 and arr[-1] == -math.inf:
        ratio = -math.inf
    else:
        ratio = float(np.mean(np.diff(arr))) if arr.size >= 2 else math.nan
    diverges = bool(ratio >= -1e-3) if not math.isnan(ratio) else False
    return {"end": end, "log_panel_integrals": [float(v) for v in arr], "mean_log_ratio": ratio,
            "diverges": diverges}
