"""Monte Carlo for threshold harvesting strategies.

The strategy harvests ``(x0 - beta)^+`` at time 0 and then reflects the
state at ``beta``. Paths use an explicit Euler step with coefficients taken
at ``max(X, floor)`` (full truncation); proposals above ``beta`` are
projected back and the overshoot is booked as harvest.
"""

from __future__ import annotations

import dataclasses
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .model import _jsonable

_CHUNK = 1 << 20


class SimulationError(RuntimeError):
    """The scheme broke down (e.g. too many non-positive states)."""


class SimConfigError(ValueError):
    pass


@dataclass(frozen=True)
class SimConfig:
    threshold: float
    x0: Optional[float] = None
    dt: float = 1e-3
    horizon: float = 200.0
    n_paths: int = 256
    burn_in: float = 0.1
    seed: int = 0
    floor: float = 1e-12
    scheme: str = "euler_full_truncation"
    max_negative_fraction: float = 1e-3
    n_windows: int = 20
    n_bins: int = 200
    hist_upper: Optional[float] = None
    common_seed: bool = False

    def __post_init__(self):
        if not (self.threshold > 0):
            raise SimConfigError(f"threshold must be positive, got {self.threshold}")
        if self.x0 is not None and not self.x0 > 0:
            raise SimConfigError(f"x0 must be positive, got {self.x0}")
        if not (self.dt > 0 and math.isfinite(self.dt)):
            raise SimConfigError(f"dt must be positive, got {self.dt}")
        if not self.horizon >= 100 * self.dt:
            raise SimConfigError(f"horizon must be at least 100*dt, got T={self.horizon}, dt={self.dt}")
        if int(self.n_paths) != self.n_paths or self.n_paths < 1:
            raise SimConfigError(f"n_paths must be a positive integer, got {self.n_paths}")
        if not 0.0 <= self.burn_in < 1.0:
            raise SimConfigError(f"burn_in must lie in [0, 1), got {self.burn_in}")
        if self.floor < 0:
            raise SimConfigError(f"floor must be nonnegative, got {self.floor}")
        if self.scheme != "euler_full_truncation":
            raise SimConfigError(f"unknown scheme {self.scheme!r}")
        if self.n_windows < 2 or self.n_bins < 1:
            raise SimConfigError("need n_windows >= 2 and n_bins >= 1")
        if math.isinf(self.threshold) and self.hist_upper is None:
            object.__setattr__(self, "hist_upper", 10.0)

    @property
    def n_steps(self):
        return int(round(self.horizon / self.dt))

    @property
    def start(self):
        return self.threshold if self.x0 is None else self.x0

    def to_dict(self):
        return _jsonable(dataclasses.asdict(self))


def _advance(drift, vol, payoff, x, zeta, pay, neg, xmax, z, dt, beta, floor, hist, bin_scale):
    sq = math.sqrt(dt)
    nb = hist.size
    for i in range(z.size):
        xt = x if x > floor else floor
        pay += payoff(xt) * dt
        k = int(xt * bin_scale)
        if k >= nb:
            k = nb - 1
        hist[k] += dt
        x = x + drift(xt) * dt + vol(xt) * sq * z[i]
        if x > beta:
            zeta += x - beta
            x = beta
        if x <= 0.0:
            neg += 1
        if x > xmax:
            xmax = x
    return x, zeta, pay, neg, xmax


_advance_jit = None


def _kernel(model):
    global _advance_jit
    fns = model.jitted
    if fns is None:
        return _advance, (model.drift, model.vol, model.payoff)
    if _advance_jit is None:
        import numba

        _advance_jit = numba.njit(nogil=True)(_advance)
    return _advance_jit, fns


def path_rng(cfg, index):
    """Generator for path ``index``: spawned from ``cfg.seed`` so it does not depend on scheduling."""
    if cfg.common_seed:
        ss = np.random.SeedSequence(cfg.seed)
    else:
        ss = np.random.SeedSequence(cfg.seed, spawn_key=(index,))
    return np.random.Generator(np.random.PCG64(ss))


@dataclass
class PathAccumulators:
    payoff_integral: float
    harvest: float
    impulse: float
    terminal_state: float
    max_state: float
    negative_events: int
    times: np.ndarray
    rewards: np.ndarray  # cumulative int h dt + K zeta at `times`
    harvests: np.ndarray  # cumulative zeta at `times`
    burn_in_index: int
    histogram: np.ndarray  # time spent per bin after burn-in
    bin_edges: np.ndarray

    def average(self):
        """Time-average reward over ``[burn-in, T]``."""
        i = self.burn_in_index
        return (self.rewards[-1] - self.rewards[i]) / (self.times[-1] - self.times[i])

    def harvest_rate(self):
        i = self.burn_in_index
        return (self.harvests[-1] - self.harvests[i]) / (self.times[-1] - self.times[i])


def simulate_path(model, cfg, path_index=0, paired=False):
    """One controlled path. ``paired`` draws two normals per step and merges them
    (``(z1 + z2)/sqrt 2``): the coarse partner of a run at ``dt/2`` on the same noise.
    """
    step, fns = _kernel(model)
    rng = path_rng(cfg, path_index)
    n = cfg.n_steps
    beta = float(cfg.threshold)
    K = model.price
    x = float(cfg.start)
    impulse = max(x - beta, 0.0)
    x = min(x, beta)
    zeta, pay, neg, xmax = impulse, 0.0, 0, x

    burn = int(round(cfg.burn_in * n))
    bounds = sorted({burn, n, *[int(round(n * k / cfg.n_windows)) for k in range(1, cfg.n_windows)]} - {0})
    bounds = [0] + bounds
    upper = beta if math.isfinite(beta) else cfg.hist_upper
    edges = np.linspace(0.0, upper, cfg.n_bins + 1)
    bin_scale = cfg.n_bins / upper
    hist = np.zeros(cfg.n_bins)
    scratch = np.zeros(cfg.n_bins)
    times, rewards, harvests = [0.0], [K * zeta], [zeta]
    done = 0
    for b in bounds[1:]:
        h_arr = hist if done >= burn else scratch
        while done < b:
            m = min(_CHUNK, b - done)
            if paired:
                zz = rng.standard_normal(2 * m)
                z = (zz[0::2] + zz[1::2]) * math.sqrt(0.5)
            else:
                z = rng.standard_normal(m)
            x, zeta, pay, neg, xmax = step(*fns, x, zeta, pay, neg, xmax, z, cfg.dt, beta, cfg.floor,
                                           h_arr, bin_scale)
            done += m
        times.append(done * cfg.dt)
        rewards.append(pay + K * zeta)
        harvests.append(zeta)
    if neg > cfg.max_negative_fraction * n:
        raise SimulationError(
            f"{neg} of {n} steps ended at a non-positive state (limit {cfg.max_negative_fraction:g}); "
            f"reduce dt (now {cfg.dt:g})")
    return PathAccumulators(
        payoff_integral=pay, harvest=zeta, impulse=impulse, terminal_state=x, max_state=xmax,
        negative_events=int(neg), times=np.asarray(times), rewards=np.asarray(rewards),
        harvests=np.asarray(harvests), burn_in_index=bounds.index(burn), histogram=hist, bin_edges=edges,
    )


def _run_paths(model, cfg, threads=1, paired=False):
    _kernel(model)  # compile once before fanning out
    idx = range(int(cfg.n_paths))
    if threads and threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            return list(ex.map(lambda i: simulate_path(model, cfg, i, paired), idx))
    return [simulate_path(model, cfg, i, paired) for i in idx]


@dataclass
class SimResult:
    estimate: float
    stderr: float
    values: np.ndarray
    harvest_rate: float
    occupation: np.ndarray
    bin_edges: np.ndarray
    trace_times: np.ndarray
    trace: np.ndarray
    fluctuation_band: float
    negative_events: int
    config: SimConfig
    model_name: str = ""
    c_dt: Optional[float] = None
    extra: dict = field(default_factory=dict)

    @property
    def n_paths(self):
        return int(self.values.size)

    def tolerance(self, n_se=3.0):
        """``n_se`` standard errors plus the calibrated discretisation term ``C_dt sqrt(dt)``."""
        se = self.stderr if math.isfinite(self.stderr) else self.fluctuation_band
        disc = 0.0 if self.c_dt is None else self.c_dt * math.sqrt(self.config.dt)
        return n_se * se + disc

    def summary(self):
        return _jsonable({
            "model": self.model_name,
            "estimate": self.estimate,
            "stderr": self.stderr,
            "harvest_rate": self.harvest_rate,
            "n_paths": self.n_paths,
            "fluctuation_band": self.fluctuation_band,
            "negative_events": self.negative_events,
            "c_dt": self.c_dt,
            "discretisation_term": None if self.c_dt is None else self.c_dt * math.sqrt(self.config.dt),
            "config": self.config.to_dict(),
            **self.extra,
        })


def _aggregate(model, cfg, paths, c_dt=None):
    vals = np.array([p.average() for p in paths])
    n = vals.size
    stderr = float(vals.std(ddof=1) / math.sqrt(n)) if n >= 2 else math.nan
    hist = np.sum([p.histogram for p in paths], axis=0)
    tot = hist.sum()
    occ = hist / tot if tot > 0 else hist
    p0 = paths[0]
    i = p0.burn_in_index
    t = p0.times[i + 1:]
    mean_rewards = np.mean([p.rewards for p in paths], axis=0)
    trace = (mean_rewards[i + 1:] - mean_rewards[i]) / (t - p0.times[i])
    # batch means over the post-burn-in windows
    wins = np.diff(mean_rewards[i:]) / np.diff(p0.times[i:])
    band = float(wins.std(ddof=1) / math.sqrt(wins.size)) if wins.size >= 2 else math.inf
    return SimResult(
        estimate=float(vals.mean()), stderr=stderr, values=vals,
        harvest_rate=float(np.mean([p.harvest_rate() for p in paths])), occupation=occ, bin_edges=p0.bin_edges,
        trace_times=t, trace=trace, fluctuation_band=band,
        negative_events=int(sum(p.negative_events for p in paths)), config=cfg, model_name=model.name, c_dt=c_dt,
    )


def estimate_expected(model, cfg, threads=1, c_dt=None):
    """Mean over ``cfg.n_paths`` independent paths of the post-burn-in time-average reward."""
    return _aggregate(model, cfg, _run_paths(model, cfg, threads), c_dt)


def estimate_pathwise(model, cfg, c_dt=None):
    """Single long path; ``trace`` holds running averages at window ends."""
    cfg = dataclasses.replace(cfg, n_paths=1)
    res = _aggregate(model, cfg, [simulate_path(model, cfg, 0)], c_dt)
    cauchy = abs(res.trace[-1] - res.trace[-2]) if res.trace.size >= 2 else math.inf
    res.extra["last_step_change"] = float(cauchy)
    res.extra["trace_is_cauchy"] = bool(cauchy < res.fluctuation_band)
    return res


def calibrate_dt_constant(model, cfg, n_paths=None, threads=1):
    """Fit ``C_dt`` so that ``C_dt sqrt(dt)`` bounds the step-size bias at ``cfg.dt``.

    Runs the scheme at ``dt`` and ``dt/2`` on the same Brownian increments and
    assumes a bias ``C sqrt(dt)``; the mean paired difference (plus two of
    its standard errors) is attributed to it.
    """
    n = int(n_paths or cfg.n_paths)
    fine = dataclasses.replace(cfg, dt=cfg.dt / 2.0, n_paths=n)
    coarse = dataclasses.replace(cfg, n_paths=n)
    pf = _run_paths(model, fine, threads)
    pc = _run_paths(model, coarse, threads, paired=True)
    d = np.array([c.average() - f.average() for c, f in zip(pc, pf)])
    se = float(d.std(ddof=1) / math.sqrt(n)) if n >= 2 else 0.0
    c = (abs(float(d.mean())) + 2.0 * se) / ((1.0 - math.sqrt(0.5)) * math.sqrt(cfg.dt))
    return {"c_dt": c, "mean_diff": float(d.mean()), "diff_stderr": se, "dt": cfg.dt, "n_paths": n}


def stationary_cdf(model, beta, x, rtol=1e-9):
    """Normalised speed-measure CDF on ``(0, beta]`` at points ``x``."""
    ss = model.scale_speed(beta)
    x = np.asarray(x, dtype=float)
    total = ss.speed_integral(np.ones_like, 0.0, beta, rtol=rtol).require("speed mass")
    out = np.empty_like(x)
    for i, v in enumerate(x):
        if v <= 0:
            out[i] = 0.0
        elif v >= beta:
            out[i] = 1.0
        else:
            out[i] = ss.speed_integral(np.ones_like, 0.0, v, rtol=rtol).require("speed mass") / total
    return out


def occupation_check(model, cfg, result, tol=0.05):
    """Sup distance between the empirical occupation CDF and the stationary law on ``(0, beta]``."""
    beta = cfg.threshold
    edges = result.bin_edges
    emp = np.concatenate([[0.0], np.cumsum(result.occupation)])
    ana = stationary_cdf(model, beta, edges)
    dist = np.abs(emp - ana)
    i = int(np.argmax(dist))
    return {"sup_distance": float(dist[i]), "at": float(edges[i]), "tol": tol, "passed": bool(dist[i] <= tol),
            "n_bins": int(edges.size - 1)}


def uncontrolled_moment_check(model, k=None, cfg=None, rtol=1e-8, tol=0.05):
    """Time-average of ``X**k`` without harvesting vs ``int s^k dm / m(]0, inf[)``."""
    k = model.growth_exponent if k is None else k
    cfg = cfg or SimConfig(threshold=math.inf, x0=1.0, horizon=1e4, n_paths=1)
    probe = model.with_payoff(lambda x: x ** k, name=f"{model.name}|x^{k:g}")
    res = estimate_pathwise(probe, cfg)
    ss = model.scale_speed(cfg.start)
    num = ss.speed_integral(lambda s: s ** k, 0.0, math.inf, rtol=rtol).require("moment")
    den = ss.speed_integral(np.ones_like, 0.0, math.inf, rtol=rtol).require("speed mass")
    target = num / den
    rel = abs(res.estimate - target) / abs(target)
    return {"k": k, "simulated": res.estimate, "stationary": target, "rel_error": rel, "tol": tol,
            "passed": bool(rel <= tol)}


@dataclass
class SweepResult:
    rows: list
    lambda_star: Optional[float]

    @property
    def all_below_optimum(self):
        return all(r["below_optimum"] for r in self.rows if r["below_optimum"] is not None)

    @property
    def argmax_beta(self):
        return max(self.rows, key=lambda r: r["estimate"])["beta"]

    def to_dict(self):
        return _jsonable({"lambda_star": self.lambda_star, "rows": self.rows,
                          "all_below_optimum": self.all_below_optimum, "argmax_beta": self.argmax_beta})


def threshold_sweep(model, base_cfg, betas, lambda_star=None, calibrate=True, threads=1, oracle=True):
    """Estimate the reward of each threshold against the speed-measure average ``Lambda(beta)``.

    All thresholds reuse ``base_cfg.seed`` (common random numbers), and each
    path starts at its threshold unless ``base_cfg.x0`` is set.
    """
    from .free_boundary import big_lambda

    betas = [float(b) for b in betas]
    if not betas:
        raise SimConfigError("empty threshold grid")
    rows = []
    for beta in betas:
        cfg = dataclasses.replace(base_cfg, threshold=beta)
        c_dt = calibrate_dt_constant(model, cfg, threads=threads)["c_dt"] if calibrate else None
        res = estimate_expected(model, cfg, threads, c_dt)
        tol = res.tolerance()
        lam_b = big_lambda(model, beta) if oracle else None
        rows.append({
            "beta": beta, "estimate": res.estimate, "stderr": res.stderr, "c_dt": c_dt, "tolerance": tol,
            "oracle": lam_b,
            "oracle_ok": None if lam_b is None else bool(abs(res.estimate - lam_b) <= tol),
            "below_optimum": None if lambda_star is None else bool(res.estimate <= lambda_star + tol),
        })
    return SweepResult(rows, lambda_star)
