"""Scalar/vector Gaussian machinery shared by every message-passing module.

Everything here is pure and vectorised over numpy arrays.  A flat
(uninformative) message is encoded as ``var == inf`` with ``mean == 0``.
Tail quantities go through ``scipy.special.log_ndtr``/``erfcx`` so that
nothing underflows for arguments of a few tens of standard deviations.
"""
from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy import special

log = logging.getLogger(__name__)

LOG_2PI = math.log(2.0 * math.pi)
EULER_GAMMA = 0.5772156649015329
SQRT2 = math.sqrt(2.0)


@dataclass(frozen=True)
class GaussianMsg:
    """Mean/variance pair; arrays broadcast elementwise."""

    mean: np.ndarray | float
    var: np.ndarray | float

    @classmethod
    def flat(cls, shape=()) -> "GaussianMsg":
        return cls(np.zeros(shape), np.full(shape, np.inf))

    @property
    def is_flat(self):
        return np.isinf(self.var)


def gauss_product(a: GaussianMsg, b: GaussianMsg) -> GaussianMsg:
    """Normalised product of two Gaussian messages (precision-weighted).

    A flat factor acts as the identity.  Two flat inputs give a flat output.
    """
    pa = _precision(a.var)
    pb = _precision(b.var)
    prec = pa + pb
    with np.errstate(divide="ignore", invalid="ignore"):
        var = np.where(prec > 0, 1.0 / prec, np.inf)
        lin = np.where(pa > 0, a.mean * pa, 0.0) + np.where(pb > 0, b.mean * pb, 0.0)
        mean = np.where(prec > 0, lin * var, 0.0)
    if np.ndim(mean) == 0:
        return GaussianMsg(float(mean), float(var))
    return GaussianMsg(mean, var)


def gauss_divide(num: GaussianMsg, den: GaussianMsg, min_prec: float = 1e-12) -> GaussianMsg:
    """Gaussian quotient ``num / den``; precision floored at ``min_prec``."""
    prec = _precision(num.var) - _precision(den.var)
    lin = num.mean * _precision(num.var) - np.where(np.isinf(den.var), 0.0, den.mean * _precision(den.var))
    prec = np.maximum(prec, min_prec)
    return GaussianMsg(lin / prec, 1.0 / prec)


def _precision(var):
    with np.errstate(divide="ignore"):
        return np.where(np.isinf(var), 0.0, 1.0 / np.asarray(var, dtype=float))


def log_normal_pdf(x, mean, var):
    """log N(x; mean, var)."""
    return -0.5 * (LOG_2PI + np.log(var) + (x - mean) ** 2 / var)


def q_func(x):
    """Upper-tail probability of the standard normal, Q(x) = 1 - Phi(x)."""
    return special.ndtr(-np.asarray(x, dtype=float))


def log_q(x):
    """log Q(x), finite far into both tails."""
    return special.log_ndtr(-np.asarray(x, dtype=float))


def inv_mills(a):
    """phi(a)/Phi(a), stable for very negative a."""
    a = np.asarray(a, dtype=float)
    # phi(a)/Phi(a) = sqrt(2/pi) / erfcx(-a/sqrt(2))
    return math.sqrt(2.0 / math.pi) / special.erfcx(-a / SQRT2)


def _var_factor(a):
    """1 - lam*(lam + a) with lam = phi(a)/Phi(a); the variance shrink factor
    of N(0,1) restricted to (-a, inf).  Continued fraction for a << 0."""
    a = np.asarray(a, dtype=float)
    lam = inv_mills(a)
    out = 1.0 - lam * (lam + a)
    deep = a < -5.0
    if np.any(deep):
        x = -a[deep] if np.ndim(a) else -a
        # lam - x = 1/(x + 2/(x + 3/(x + ...))) ; evaluate tail first
        tail = np.zeros_like(x)
        for k in range(60, 1, -1):
            tail = k / (x + tail)
        d = tail  # 2/(x + 3/(...))
        c = 1.0 / (x + d)
        val = d / (x + d) - c * c
        if np.ndim(a):
            out = np.array(out, copy=True)
            out[deep] = val
        else:
            out = val
    return np.clip(out, 0.0, 1.0)


def trunc_moments(mean, var, side: str = "positive"):
    """Mass, mean and variance of N(mean, var) restricted to a half line.

    ``side='positive'`` keeps (0, inf), ``'negative'`` keeps (-inf, 0).
    Returns ``(log_mass, tmean, tvar)``; mass itself is ``exp(log_mass)`` and
    the moments stay finite even when the mass underflows.
    """
    mean = np.asarray(mean, dtype=float)
    var = np.asarray(var, dtype=float)
    sd = np.sqrt(var)
    sign = 1.0 if side == "positive" else -1.0
    a = sign * mean / sd
    log_mass = special.log_ndtr(a)
    tmean = mean + sign * sd * inv_mills(a)
    tvar = var * _var_factor(a)
    return log_mass, tmean, tvar


def skew_normal_match(prior: GaussianMsg, shift, scale, sign: float = 1.0) -> GaussianMsg:
    """Gaussian with the first two moments of N(z; prior) * Phi(sign*(z - shift)/scale).

    ``sign=+1`` is the tilt ``Q((shift - z)/scale)``; ``sign=-1`` is
    ``Q((z - shift)/scale)``.  Returns the prior untouched where the tilt
    is numerically constant.
    """
    m = np.asarray(prior.mean, dtype=float)
    v = np.asarray(prior.var, dtype=float)
    s2 = np.asarray(scale, dtype=float) ** 2 + v
    sd = np.sqrt(s2)
    kappa = sign * (m - shift) / sd
    lam = inv_mills(kappa)
    mean = m + sign * v * lam / sd
    var = v - v * v / s2 * (1.0 - _var_factor(kappa))
    bad = ~np.isfinite(mean) | ~np.isfinite(var) | (var <= 0)
    if np.any(bad):
        log.warning("skew_normal_match: %d degenerate tilts, prior kept", int(np.sum(bad)))
        mean = np.where(bad, m, mean)
        var = np.where(bad, v, var)
    return GaussianMsg(mean, var)


@dataclass(frozen=True)
class GumbelParams:
    """Minimum-type Gumbel, mean = loc - gamma*scale, var = (pi*scale)^2/6."""

    loc: float
    scale: float

    @property
    def mean(self) -> float:
        return self.loc - EULER_GAMMA * self.scale

    @property
    def second_moment(self) -> float:
        return self.mean**2 + (math.pi * self.scale) ** 2 / 6.0

    def logpdf(self, x):
        t = (np.asarray(x, dtype=float) - self.loc) / self.scale
        return t - np.exp(t) - math.log(self.scale)


def gumbel_fit(mu: float, second_moment: float) -> GumbelParams:
    """Moment-matched Gumbel: scale = sqrt(6)/pi * sd, loc = mu + gamma*scale."""
    var = second_moment - mu * mu
    if not var > 0:
        raise ValueError(f"second moment {second_moment!r} must exceed mu^2 = {mu * mu!r}")
    scale = math.sqrt(6.0) / math.pi * math.sqrt(var)
    return GumbelParams(mu + EULER_GAMMA * scale, scale)


# -- noise-variance table ---------------------------------------------------

FTABLE_VERSION = 2
T_RANGE = (-45.0, 7.0)  # exp(t - e^t) underflows beyond t = 7


def gumbel_logq_objective(loc: float, v: float, epsabs: float = 0.0) -> float:
    """E[log Q(xi/sqrt(v))] for xi ~ Gumbel(loc, 1) (minimum type).

    For very negative ``loc`` the value is tiny (down to ~1e-280) but still
    well resolved relative to itself, so the default tolerance is purely
    relative.  The integrand peaks within a few sqrt(v) of xi = 0, where
    the quadrature gets extra breakpoints.
    """
    from scipy import integrate

    sv = math.sqrt(v)

    def f(t):
        return math.exp(t - math.exp(t)) * float(special.log_ndtr(-(loc + t) / sv))

    lo, hi = T_RANGE
    pts = sorted(x for x in {-loc + k * sv for k in (-30, -10, -3, -1, 0, 1, 3, 10, 30)} if lo < x < hi)
    with warnings.catch_warnings():
        # far outside the interior the integrand spans many decades
        warnings.simplefilter("ignore", integrate.IntegrationWarning)
        val, _ = integrate.quad(f, lo, hi, points=pts or None, epsabs=epsabs, epsrel=1e-10, limit=400)
    return val


@dataclass(frozen=True)
class FTable:
    """Tabulated maximiser F(mu) of the Gumbel/probit objective.

    ``values[k]`` is the variance maximising ``gumbel_logq_objective(grid[k], .)``
    inside ``bracket``; ``pinned[k]`` marks maxima found on the bracket edge.
    """

    grid: np.ndarray
    values: np.ndarray
    pinned: np.ndarray
    bracket: tuple[float, float]
    n_coarse: int = 60

    def lookup(self, mu_std):
        return np.interp(mu_std, self.grid, self.values)

    def to_dict(self) -> dict:
        return {
            "format": "emtdamp-ftable",
            "version": FTABLE_VERSION,
            "bracket": list(self.bracket),
            "n_coarse": self.n_coarse,
            "quadrature": {"kind": "scipy.quad", "t_range": list(T_RANGE), "epsrel": 1e-10},
            "grid": self.grid.tolist(),
            "values": self.values.tolist(),
            "pinned": self.pinned.astype(int).tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "FTable":
        if d.get("format") != "emtdamp-ftable" or d.get("version") != FTABLE_VERSION:
            raise ValueError("not an F-table sidecar of a supported version")
        return cls(
            grid=np.asarray(d["grid"], dtype=float),
            values=np.asarray(d["values"], dtype=float),
            pinned=np.asarray(d["pinned"], dtype=bool),
            bracket=tuple(d["bracket"]),
            n_coarse=int(d["n_coarse"]),
        )

    def save(self, path) -> None:
        import json

        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh)

    @classmethod
    def load(cls, path) -> "FTable":
        import json

        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def argmax_variance(loc: float, bracket=(1e-6, 1e3), n_coarse: int = 60):
    """Maximise the objective over v on a log grid, then golden-section refine.

    Returns ``(v_best, pinned)``.
    """
    from scipy import optimize

    lo, hi = math.log(bracket[0]), math.log(bracket[1])
    xs = np.linspace(lo, hi, n_coarse)
    vals = np.array([gumbel_logq_objective(loc, math.exp(x)) for x in xs])
    k = int(np.argmax(vals))
    if k == 0 or k == n_coarse - 1:
        return math.exp(xs[k]), True
    res = optimize.minimize_scalar(
        lambda x: -gumbel_logq_objective(loc, math.exp(x)),
        bracket=(xs[k - 1], xs[k], xs[k + 1]),
        method="golden",
        options={"xtol": 1e-8},
    )
    x = float(np.clip(res.x, xs[k - 1], xs[k + 1]))
    return math.exp(x), False


def default_grid() -> np.ndarray:
    # F has a pole just below alpha/beta = Euler's gamma (zero mean margin); resolve it finely
    return np.unique(np.round(np.concatenate([
        np.linspace(-12.0, 0.0, 121), np.linspace(0.0, 0.7, 71), np.linspace(0.7, 4.0, 34)
    ]), 10))


def f_table_build(bracket=(1e-6, 1e3), grid=None, n_coarse: int = 60) -> FTable:
    if grid is None:
        grid = default_grid()
    grid = np.asarray(grid, dtype=float)
    if not (0 < bracket[0] < bracket[1]):
        raise ValueError("bracket must satisfy 0 < lo < hi")
    if np.any(np.diff(grid) <= 0):
        raise ValueError("grid must be strictly increasing")
    vals = np.empty_like(grid)
    pinned = np.zeros(grid.shape, dtype=bool)
    for k, g in enumerate(grid):
        vals[k], pinned[k] = argmax_variance(float(g), bracket, n_coarse)
        if pinned[k]:
            log.info("F-table point mu=%.3f pinned at bracket edge", g)
    return FTable(grid, vals, pinned, tuple(bracket), n_coarse)


def f_table_lookup(table: FTable, mu_std):
    return table.lookup(mu_std)


_DEFAULT_TABLE: FTable | None = None


def default_ftable() -> FTable:
    """Table shipped with the package (built on first use if absent)."""
    global _DEFAULT_TABLE
    if _DEFAULT_TABLE is None:
        from importlib import resources

        try:
            ref = resources.files("emtdamp").joinpath("ftable_default.json")
            with resources.as_file(ref) as p:
                _DEFAULT_TABLE = FTable.load(p)
        except FileNotFoundError:
            log.warning("bundled F-table missing; building it now")
            _DEFAULT_TABLE = f_table_build()
    return _DEFAULT_TABLE
