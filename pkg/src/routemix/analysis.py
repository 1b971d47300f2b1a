"""Statistics for emission and travel-time distributions.

Covers the inequality and tail-shape metrics (Gini, CCDF, maximum-likelihood
fits of five tail models with pairwise likelihood-ratio selection) and the
histogram divergences used for traffic calibration (base-2 KL and JS, so JS
lies exactly in [0, 1]; lower JS means more similar distributions).
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import mpmath
import numpy as np
from scipy import optimize, stats

log = logging.getLogger(__name__)

MODELS = ("power_law", "truncated_power_law", "lognormal", "exponential", "stretched_exponential")


class FitError(ValueError):
    """Degenerate data or non-converged optimization."""


# ---------------------------------------------------------------------------
# Inequality and empirical distribution summaries
# ---------------------------------------------------------------------------

def gini(values) -> float:
    """Gini index of nonnegative values via the sorted O(n log n) identity,
    equal to the mean absolute pairwise difference over 2 * n^2 * mean."""
    x = np.asarray(values, dtype=float)
    if x.ndim != 1 or len(x) == 0:
        raise ValueError("gini needs a nonempty 1-D array")
    if (x < 0).any():
        raise ValueError("gini is defined for nonnegative values")
    total = x.sum()
    if total == 0:
        raise ValueError("gini undefined for all-zero input")
    n = len(x)
    xs = np.sort(x)
    ranks = np.arange(1, n + 1)
    return float(2.0 * (ranks * xs).sum() / (n * total) - (n + 1) / n)


def ccdf(values) -> tuple[np.ndarray, np.ndarray]:
    """Empirical survival function P(X >= x) on the sorted unique values."""
    x = np.sort(np.asarray(values, dtype=float))
    if len(x) == 0:
        raise ValueError("ccdf needs a nonempty input")
    xs = np.unique(x)
    n = len(x)
    p = (n - np.searchsorted(x, xs, side="left")) / n
    return xs, p


def positive_values(values) -> np.ndarray:
    """Strictly positive entries (zero-emission roads are excluded from
    distribution fits and Gini unless explicitly requested)."""
    x = np.asarray(values, dtype=float)
    return x[x > 0]


# ---------------------------------------------------------------------------
# Histograms and divergences
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Histogram:
    """Normalized histogram: strictly increasing edges, masses sum to 1."""

    edges: tuple[float, ...]
    masses: tuple[float, ...]

    def __post_init__(self):
        e = np.asarray(self.edges)
        m = np.asarray(self.masses)
        if len(e) < 2 or np.any(np.diff(e) <= 0):
            raise ValueError("bin edges must be strictly increasing")
        if len(m) != len(e) - 1:
            raise ValueError(f"{len(m)} masses for {len(e)} edges")
        if (m < 0).any():
            raise ValueError("masses must be nonnegative")
        if abs(m.sum() - 1.0) > 1e-12:
            raise ValueError(f"masses sum to {m.sum()!r}, expected 1")

    @classmethod
    def from_samples(cls, values, edges) -> "Histogram":
        counts, _ = np.histogram(np.asarray(values, dtype=float), bins=np.asarray(edges))
        total = counts.sum()
        if total == 0:
            raise ValueError("no samples fall inside the bin range")
        return cls(tuple(float(x) for x in edges), tuple(counts / total))

    def masses_array(self) -> np.ndarray:
        return np.asarray(self.masses)


def _check_same_edges(p: Histogram, q: Histogram) -> None:
    if p.edges != q.edges:
        raise ValueError("histograms must share identical bin edges")


def kl_divergence(p: Histogram, q: Histogram) -> float:
    """Kullback-Leibler divergence in bits; +inf when q misses p's support."""
    _check_same_edges(p, q)
    pa, qa = p.masses_array(), q.masses_array()
    out = 0.0
    for pi, qi in zip(pa, qa):
        if pi == 0.0:
            continue
        if qi == 0.0:
            return math.inf
        out += pi * math.log2(pi / qi)
    return max(0.0, out)


def js_divergence(p: Histogram, q: Histogram) -> float:
    """Jensen-Shannon divergence in bits: symmetric, finite, in [0, 1]."""
    _check_same_edges(p, q)
    pa, qa = p.masses_array(), q.masses_array()
    m = 0.5 * (pa + qa)
    out = 0.0
    for pi, qi, mi in zip(pa, qa, m):
        if pi > 0.0:
            out += 0.5 * pi * math.log2(pi / mi)
        if qi > 0.0:
            out += 0.5 * qi * math.log2(qi / mi)
    return min(1.0, max(0.0, out))


def kde(
    values,
    bandwidth: float | None = None,
    grid: np.ndarray | None = None,
    n_points: int = 512,
) -> tuple[np.ndarray, np.ndarray]:
    """Gaussian kernel density estimate, bandwidth by Scott's rule.

    Returns (xs, density); plot-level output only, divergences always use
    histograms.
    """
    x = np.asarray(values, dtype=float)
    if len(x) == 0:
        raise ValueError("kde needs a nonempty input")
    if bandwidth is None:
        sd = float(x.std(ddof=1)) if len(x) > 1 else 0.0
        bandwidth = sd * len(x) ** (-0.2) if sd > 0 else 1.0
    if bandwidth <= 0:
        raise ValueError("bandwidth must be positive")
    if grid is None:
        lo, hi = x.min() - 4 * bandwidth, x.max() + 4 * bandwidth
        grid = np.linspace(lo, hi, n_points)
    z = (grid[:, None] - x[None, :]) / bandwidth
    dens = np.exp(-0.5 * z * z).sum(axis=1) / (len(x) * bandwidth * math.sqrt(2 * math.pi))
    return grid, dens


def travel_time_comparison(sim_times, real_times, bins: int = 60) -> dict[str, float]:
    """JS divergence on shared equal-width bins over the pooled range, plus
    the absolute difference of means, seconds."""
    sim = np.asarray(sim_times, dtype=float)
    real = np.asarray(real_times, dtype=float)
    if len(sim) == 0 or len(real) == 0:
        raise ValueError("both samples must be nonempty")
    lo = min(sim.min(), real.min())
    hi = max(sim.max(), real.max())
    if hi <= lo:
        lo, hi = lo - 0.5, hi + 0.5
    edges = np.linspace(lo, hi, bins + 1)
    p = Histogram.from_samples(sim, edges)
    q = Histogram.from_samples(real, edges)
    return {
        "js": js_divergence(p, q),
        "abs_mean_diff": abs(float(sim.mean()) - float(real.mean())),
    }


# ---------------------------------------------------------------------------
# Tail-model maximum likelihood fits
# ---------------------------------------------------------------------------

_GRAD_TOL = 1e-8  # projected-gradient convergence tolerance for all fitters


@dataclass(frozen=True)
class FitResult:
    model: str
    params: dict[str, float] = field(compare=False)
    x_min: float
    loglik: float
    n: int

    def loglik_per_point(self, values) -> np.ndarray:
        x = _tail(values, self.x_min)
        return _LL_POINTS[self.model](x, self.params, self.x_min)


def _tail(values, x_min: float) -> np.ndarray:
    x = np.asarray(values, dtype=float)
    x = x[x >= x_min]
    if len(x) == 0:
        raise FitError(f"no values at or above x_min={x_min}")
    return x


def smallest_positive(values) -> float:
    """Default tail threshold: the smallest strictly positive value."""
    pos = positive_values(values)
    if len(pos) == 0:
        raise ValueError("no positive values")
    return float(pos.min())


def _ll_power_law(x, params, x_min):
    a = params["alpha"]
    return np.log(a - 1.0) - math.log(x_min) - a * np.log(x / x_min)


def _log_trunc_norm(alpha: float, lam: float, x_min: float) -> float:
    """log of the truncated-power-law normalizer: integral over [x_min, inf)
    of x^-alpha * exp(-lam x), via the upper incomplete gamma function."""
    z = mpmath.mpf(lam) * x_min
    val = (alpha - 1.0) * mpmath.log(lam) + mpmath.log(mpmath.gammainc(1.0 - alpha, a=z))
    return float(val)


def _ll_truncated(x, params, x_min):
    a, lam = params["alpha"], params["lambda"]
    return -a * np.log(x) - lam * x - _log_trunc_norm(a, lam, x_min)


def _ll_lognormal(x, params, x_min):
    mu, sigma = params["mu"], params["sigma"]
    logx = np.log(x)
    base = -logx - math.log(sigma) - 0.5 * math.log(2 * math.pi) - (logx - mu) ** 2 / (2 * sigma**2)
    tail_mass = stats.norm.logsf((math.log(x_min) - mu) / sigma)
    return base - tail_mass


def _ll_exponential(x, params, x_min):
    lam = params["lambda"]
    return math.log(lam) - lam * (x - x_min)


def _ll_stretched(x, params, x_min):
    lam, beta = params["lambda"], params["beta"]
    return (
        math.log(beta) + math.log(lam) + (beta - 1.0) * np.log(x)
        - lam * (np.power(x, beta) - x_min**beta)
    )


_LL_POINTS = {
    "power_law": _ll_power_law,
    "truncated_power_law": _ll_truncated,
    "lognormal": _ll_lognormal,
    "exponential": _ll_exponential,
    "stretched_exponential": _ll_stretched,
}


def fit_power_law(values, x_min: float) -> FitResult:
    """Closed-form continuous MLE: alpha = 1 + n / sum(log(x / x_min))."""
    x = _tail(values, x_min)
    s = float(np.log(x / x_min).sum())
    if s <= 0:
        raise FitError("degenerate data: all values equal x_min")
    alpha = 1.0 + len(x) / s
    params = {"alpha": alpha}
    ll = float(_ll_power_law(x, params, x_min).sum())
    return FitResult("power_law", params, x_min, ll, len(x))


def fit_exponential(values, x_min: float) -> FitResult:
    """Shifted exponential on [x_min, inf): lambda = 1 / (mean - x_min)."""
    x = _tail(values, x_min)
    spread = float(x.mean()) - x_min
    if spread <= 0:
        raise FitError("degenerate data: zero spread above x_min")
    params = {"lambda": 1.0 / spread}
    ll = float(_ll_exponential(x, params, x_min).sum())
    return FitResult("exponential", params, x_min, ll, len(x))


def _minimize_multistart(nll, starts, bounds) -> tuple[np.ndarray, float]:
    best = None
    failures = []
    for s0 in starts:
        res = optimize.minimize(
            nll, np.asarray(s0, dtype=float), method="L-BFGS-B", bounds=bounds,
            options={"gtol": _GRAD_TOL, "ftol": 1e-14, "maxiter": 500},
        )
        if not res.success and not np.isfinite(res.fun):
            failures.append(res.message)
            continue
        if not res.success:
            failures.append(res.message)
        if best is None or res.fun < best.fun:
            best = res
    if best is None or not np.isfinite(best.fun):
        raise FitError(f"optimization failed to converge: {failures}")
    return best.x, float(best.fun)


def fit_truncated_powerlaw(values, x_min: float, min_n: int = 100) -> FitResult:
    """MLE of the power law with exponential cutoff, density proportional to
    x^-alpha * exp(-lambda x) on [x_min, inf).

    Numerical optimization (L-BFGS-B, projected-gradient tolerance 1e-8)
    over (alpha, lambda); raises FitError on degenerate data or
    non-convergence.
    """
    if x_min <= 0:
        raise FitError(f"x_min must be positive, got {x_min}")
    x = _tail(values, x_min)
    if len(x) < min_n:
        raise FitError(f"need at least {min_n} tail values, got {len(x)}")
    if np.ptp(x) == 0:
        raise FitError("degenerate data: constant-valued input")
    s_logx = float(np.log(x).sum())
    s_x = float(x.sum())
    n = len(x)

    def nll(theta):
        a, lam = theta
        try:
            return a * s_logx + lam * s_x + n * _log_trunc_norm(a, lam, x_min)
        except (ValueError, OverflowError):
            return math.inf

    hill = 1.0 + n / max(float(np.log(x / x_min).sum()), 1e-12)
    alpha0 = min(max(hill, 1.05), 10.0)
    lam0 = 1.0 / float(x.mean())
    starts = [(alpha0, lam0), (alpha0, lam0 * 0.01), (max(1.1, alpha0 - 0.5), lam0 * 0.1)]
    bounds = [(1.0 + 1e-6, 20.0), (1e-12, 1e6)]
    theta, fun = _minimize_multistart(nll, starts, bounds)
    params = {"alpha": float(theta[0]), "lambda": float(theta[1])}
    return FitResult("truncated_power_law", params, x_min, -fun, n)


def fit_lognormal(values, x_min: float) -> FitResult:
    """MLE of the lognormal truncated at x_min (3-start L-BFGS-B)."""
    x = _tail(values, x_min)
    if np.ptp(x) == 0:
        raise FitError("degenerate data: constant-valued input")
    logx = np.log(x)
    s_log = float(logx.sum())
    n = len(x)
    log_xmin = math.log(x_min)

    def nll(theta):
        mu, sigma = theta
        z2 = float(((logx - mu) ** 2).sum())
        tail_mass = stats.norm.logsf((log_xmin - mu) / sigma)
        val = s_log + n * (math.log(sigma) + 0.5 * math.log(2 * math.pi) + tail_mass) \
            + z2 / (2 * sigma**2)
        return val if np.isfinite(val) else math.inf

    mu0 = float(logx.mean())
    sd0 = max(float(logx.std()), 1e-3)
    starts = [(mu0, sd0), (mu0 - 2 * sd0, 2 * sd0), (mu0 + sd0, 0.5 * sd0)]
    bounds = [(mu0 - 50 * sd0 - 10, mu0 + 50 * sd0 + 10), (1e-9, 1e3)]
    theta, fun = _minimize_multistart(nll, starts, bounds)
    params = {"mu": float(theta[0]), "sigma": float(theta[1])}
    return FitResult("lognormal", params, x_min, -fun, n)


def fit_stretched_exponential(values, x_min: float) -> FitResult:
    """MLE of the stretched exponential (Weibull tail) truncated at x_min
    (3-start L-BFGS-B)."""
    x = _tail(values, x_min)
    if np.ptp(x) == 0:
        raise FitError("degenerate data: constant-valued input")
    logx = np.log(x)
    s_log = float(logx.sum())
    n = len(x)

    def nll(theta):
        lam, beta = theta
        with np.errstate(over="raise"):
            try:
                s_pow = float(np.power(x, beta).sum())
            except FloatingPointError:
                return math.inf
        val = -n * (math.log(beta) + math.log(lam)) - (beta - 1.0) * s_log \
            + lam * (s_pow - n * x_min**beta)
        return val if np.isfinite(val) else math.inf

    starts = []
    for beta0 in (0.5, 1.0, 1.5):
        scale = float(np.power(x, beta0).mean()) - x_min**beta0
        starts.append((1.0 / max(scale, 1e-12), beta0))
    bounds = [(1e-12, 1e6), (1e-3, 5.0)]
    theta, fun = _minimize_multistart(nll, starts, bounds)
    params = {"lambda": float(theta[0]), "beta": float(theta[1])}
    return FitResult("stretched_exponential", params, x_min, -fun, n)


_FITTERS = {
    "power_law": fit_power_law,
    "truncated_power_law": fit_truncated_powerlaw,
    "lognormal": fit_lognormal,
    "exponential": fit_exponential,
    "stretched_exponential": fit_stretched_exponential,
}


def fit_all_models(values, x_min: float) -> dict[str, FitResult]:
    """MLE of all five tail families on values >= x_min."""
    out = {}
    for name in MODELS:
        out[name] = _FITTERS[name](values, x_min)
    return out


def scan_x_min(values, candidates=None) -> float:
    """Kolmogorov-Smirnov scan for the power-law tail threshold: the
    candidate minimizing the KS distance between the tail's empirical CDF
    and the fitted pure power law. Costly and not the default."""
    pos = np.sort(positive_values(values))
    if len(pos) < 10:
        raise ValueError("need at least 10 positive values to scan")
    if candidates is None:
        candidates = np.unique(pos)[:-5]  # leave a few points in every tail
    best_x, best_d = None, math.inf
    for xm in candidates:
        tail = pos[pos >= xm]
        if len(tail) < 5:
            continue
        try:
            fit = fit_power_law(tail, float(xm))
        except FitError:
            continue
        a = fit.params["alpha"]
        emp = np.arange(1, len(tail) + 1) / len(tail)
        model_cdf = 1.0 - np.power(tail / xm, 1.0 - a)
        d = float(np.max(np.abs(emp - model_cdf)))
        if d < best_d:
            best_x, best_d = float(xm), d
    if best_x is None:
        raise ValueError("no viable x_min candidate")
    return best_x


# ---------------------------------------------------------------------------
# Pairwise likelihood-ratio model selection
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Comparison:
    model_a: str
    model_b: str
    ratio: float       # sum of per-point log-likelihood differences (a - b)
    p_value: float
    winner: str | None  # significant favorite, if any


@dataclass(frozen=True)
class SelectionResult:
    winner: str
    wins: dict[str, int] = field(compare=False)
    comparisons: tuple[Comparison, ...] = ()
    fits: dict[str, FitResult] = field(default_factory=dict, compare=False)


def loglikelihood_ratio(ll_a: np.ndarray, ll_b: np.ndarray) -> tuple[float, float]:
    """Normalized log-likelihood ratio and two-sided p-value.

    R is the summed per-point difference; under the null of equal fits the
    normalized ratio is asymptotically standard normal, so
    p = erfc(|R| / (sqrt(2 n) * sd)).
    """
    d = np.asarray(ll_a) - np.asarray(ll_b)
    n = len(d)
    r = float(d.sum())
    sd = float(d.std())
    if sd == 0.0 or n == 0:
        return 0.0, 1.0
    p = math.erfc(abs(r) / (math.sqrt(2.0 * n) * sd))
    return r, p


def select_best(fits: dict[str, FitResult], values, significance: float = 0.05) -> SelectionResult:
    """Pick the model winning the most pairwise likelihood-ratio comparisons;
    ties break toward higher total log-likelihood."""
    names = [m for m in MODELS if m in fits]
    if len(names) < 2:
        raise ValueError("need at least two fitted models to compare")
    x_mins = {fits[m].x_min for m in names}
    if len(x_mins) != 1:
        raise ValueError(f"fits disagree on x_min: {sorted(x_mins)}")
    per_point = {m: fits[m].loglik_per_point(values) for m in names}
    wins = {m: 0 for m in names}
    comparisons = []
    for i, a in enumerate(names):
        for b in names[i + 1:]:
            r, p = loglikelihood_ratio(per_point[a], per_point[b])
            winner = None
            if p < significance and r != 0.0:
                winner = a if r > 0 else b
                wins[winner] += 1
            comparisons.append(Comparison(a, b, r, p, winner))
    best = max(names, key=lambda m: (wins[m], fits[m].loglik))
    return SelectionResult(best, wins, tuple(comparisons), dict(fits))


def selection_report(sel: SelectionResult) -> dict:
    """JSON-ready report: per-model params and loglik, the pairwise ratio
    matrix, and the winner."""
    return {
        "winner": sel.winner,
        "wins": sel.wins,
        "models": {
            m: {"params": f.params, "loglik": f.loglik, "x_min": f.x_min, "n_tail": f.n}
            for m, f in sel.fits.items()
        },
        "comparisons": [
            {"a": c.model_a, "b": c.model_b, "R": c.ratio, "p": c.p_value, "winner": c.winner}
            for c in sel.comparisons
        ],
    }
