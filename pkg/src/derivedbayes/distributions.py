"""Sampling and log densities for the distribution families used by the models.

Every family is described by a small immutable :class:`DistSpec`. Normal-type
families take a standard deviation as their scale argument, never a precision.
The skew-normal is parameterized by its mean, so ``skew_normal(39, s, w)`` has
expectation 39 whatever the scale and slant.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import special, stats

LOG_2PI = math.log(2.0 * math.pi)
SQRT_2_OVER_PI = math.sqrt(2.0 / math.pi)

FAMILIES = (
    "normal",
    "truncated-normal",
    "skew-normal",
    "multivariate-normal",
    "bernoulli",
    "beta",
    "uniform",
    "exponential",
    "inverse-gamma",
)


@dataclass(frozen=True)
class RngStream:
    """Deterministic random stream identified by ``(seed, stream_id)``.

    Two streams with the same seed and id always produce the same sequence,
    independent of how work is split across processes.
    """

    seed: int
    stream_id: tuple[int, ...] = ()

    def child(self, *keys: int) -> "RngStream":
        return RngStream(self.seed, self.stream_id + tuple(int(k) for k in keys))

    def generator(self) -> np.random.Generator:
        ss = np.random.SeedSequence(int(self.seed), spawn_key=self.stream_id)
        return np.random.default_rng(ss)

    def seed_int(self) -> int:
        """A 63-bit integer seed derived from this stream, for nested seeding."""
        ss = np.random.SeedSequence(int(self.seed), spawn_key=self.stream_id)
        return int(ss.generate_state(1, np.uint64)[0] >> np.uint64(1))


def make_rng(seed: int, *keys: int) -> np.random.Generator:
    return RngStream(seed, tuple(int(k) for k in keys)).generator()


@dataclass(frozen=True)
class DistSpec:
    family: str
    params: tuple

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown family {self.family!r}")
        _validate(self)

    @property
    def support(self) -> tuple[float, float]:
        f, p = self.family, self.params
        if f == "truncated-normal":
            return p[2], p[3]
        if f in ("beta", "bernoulli"):
            return 0.0, 1.0
        if f == "uniform":
            return p[0], p[1]
        if f in ("exponential", "inverse-gamma"):
            return 0.0, math.inf
        return -math.inf, math.inf

    def frozen(self):
        """scipy frozen distribution for univariate families (quantiles, cdf)."""
        f, p = self.family, self.params
        if f == "normal":
            return stats.norm(p[0], p[1])
        if f == "truncated-normal":
            a, b = (p[2] - p[0]) / p[1], (p[3] - p[0]) / p[1]
            return stats.truncnorm(a, b, loc=p[0], scale=p[1])
        if f == "skew-normal":
            return stats.skewnorm(p[2], loc=skew_normal_location(*p), scale=p[1])
        if f == "bernoulli":
            return stats.bernoulli(p[0])
        if f == "beta":
            return stats.beta(p[0], p[1])
        if f == "uniform":
            return stats.uniform(p[0], p[1] - p[0])
        if f == "exponential":
            return stats.expon(scale=1.0 / p[0])
        if f == "inverse-gamma":
            return stats.invgamma(p[0], scale=p[1])
        raise ValueError("multivariate-normal has no scipy univariate form")

    def median(self) -> float:
        if self.family == "multivariate-normal":
            raise ValueError("median undefined for multivariate-normal")
        return float(self.frozen().median())

    def mean(self):
        f, p = self.family, self.params
        if f == "multivariate-normal":
            return np.asarray(p[0], dtype=float)
        if f == "skew-normal":
            return p[0]
        return float(self.frozen().mean())

    def var(self):
        f, p = self.family, self.params
        if f == "multivariate-normal":
            return np.asarray(p[1], dtype=float)
        if f == "skew-normal":
            d = p[2] / math.sqrt(1.0 + p[2] ** 2)
            return p[1] ** 2 * (1.0 - 2.0 * d * d / math.pi)
        return float(self.frozen().var())


def _validate(spec: DistSpec) -> None:
    f, p = spec.family, spec.params
    if f in ("normal", "skew-normal"):
        if not p[1] > 0:
            raise ValueError(f"{f} scale must be > 0, got {p[1]}")
    elif f == "truncated-normal":
        if not p[1] > 0:
            raise ValueError(f"truncated-normal scale must be > 0, got {p[1]}")
        if not p[2] < p[3]:
            raise ValueError("truncated-normal needs lower < upper")
    elif f == "multivariate-normal":
        mean = np.asarray(p[0], dtype=float)
        cov = np.asarray(p[1], dtype=float)
        if cov.shape != (mean.size, mean.size):
            raise ValueError("covariance shape does not match mean")
        if not np.allclose(cov, cov.T):
            raise ValueError("covariance must be symmetric")
        try:
            np.linalg.cholesky(cov)
        except np.linalg.LinAlgError:
            raise ValueError("covariance must be positive-definite") from None
    elif f == "bernoulli":
        if not 0.0 <= p[0] <= 1.0:
            raise ValueError(f"probability must lie in [0, 1], got {p[0]}")
    elif f in ("beta", "inverse-gamma"):
        if not (p[0] > 0 and p[1] > 0):
            raise ValueError(f"{f} parameters must be > 0")
    elif f == "uniform":
        if not p[0] < p[1]:
            raise ValueError("uniform needs lower < upper")
    elif f == "exponential":
        if not p[0] > 0:
            raise ValueError("exponential rate must be > 0")


def normal(mean: float, sd: float) -> DistSpec:
    return DistSpec("normal", (float(mean), float(sd)))


def truncated_normal(mean, sd, lower=-math.inf, upper=math.inf) -> DistSpec:
    return DistSpec("truncated-normal", (float(mean), float(sd), float(lower), float(upper)))


def skew_normal(mean: float, scale: float, slant: float) -> DistSpec:
    return DistSpec("skew-normal", (float(mean), float(scale), float(slant)))


def mvn(mean, cov) -> DistSpec:
    mean = tuple(float(m) for m in np.asarray(mean, dtype=float).ravel())
    cov = tuple(tuple(float(c) for c in row) for row in np.asarray(cov, dtype=float))
    return DistSpec("multivariate-normal", (mean, cov))


def bernoulli(p: float) -> DistSpec:
    return DistSpec("bernoulli", (float(p),))


def beta(a: float, b: float) -> DistSpec:
    return DistSpec("beta", (float(a), float(b)))


def uniform(lower: float, upper: float) -> DistSpec:
    return DistSpec("uniform", (float(lower), float(upper)))


def exponential(rate: float) -> DistSpec:
    return DistSpec("exponential", (float(rate),))


def inverse_gamma(shape: float, scale: float) -> DistSpec:
    return DistSpec("inverse-gamma", (float(shape), float(scale)))


def skew_normal_location(mean, scale, slant):
    """Internal location that makes ``mean`` the expectation of the skew-normal."""
    delta = slant / np.sqrt(1.0 + slant * slant)
    return mean - SQRT_2_OVER_PI * scale * delta


def draw(spec: DistSpec, rng: np.random.Generator, size=None):
    """Draw from ``spec``. ``size`` follows numpy conventions."""
    f, p = spec.family, spec.params
    if f == "normal":
        return rng.normal(p[0], p[1], size)
    if f == "truncated-normal":
        return _draw_truncnorm(p[0], p[1], p[2], p[3], rng, size)
    if f == "skew-normal":
        return draw_skew_normal(p[0], p[1], p[2], rng, size)
    if f == "multivariate-normal":
        mean = np.asarray(p[0])
        chol = np.linalg.cholesky(np.asarray(p[1]))
        shape = (() if size is None else np.atleast_1d(size).tolist())
        z = rng.standard_normal(tuple(shape) + (mean.size,))
        return mean + z @ chol.T
    if f == "bernoulli":
        out = (rng.random(size) < p[0]).astype(float)
        return float(out) if size is None else out
    if f == "beta":
        return rng.beta(p[0], p[1], size)
    if f == "uniform":
        return rng.uniform(p[0], p[1], size)
    if f == "exponential":
        return rng.exponential(1.0 / p[0], size)
    if f == "inverse-gamma":
        return p[1] / rng.gamma(p[0], 1.0, size)
    raise AssertionError(f)


def draw_skew_normal(mean, scale, slant, rng, size=None):
    # two-normal representation: delta*|N1| + sqrt(1-delta^2)*N2
    delta = slant / np.sqrt(1.0 + slant * slant)
    u0 = np.abs(rng.standard_normal(size))
    u1 = rng.standard_normal(size)
    z = delta * u0 + np.sqrt(1.0 - delta * delta) * u1
    return skew_normal_location(mean, scale, slant) + scale * z


def _draw_truncnorm(mean, sd, lower, upper, rng, size):
    a = special.ndtr((lower - mean) / sd)
    b = special.ndtr((upper - mean) / sd)
    u = rng.uniform(a, b, size)
    return mean + sd * special.ndtri(u)


def log_density(spec: DistSpec, x):
    """Natural-log density (or mass). Outside the support the result is -inf."""
    f, p = spec.family, spec.params
    if f == "normal":
        return normal_logpdf(x, p[0], p[1])
    if f == "truncated-normal":
        x = np.asarray(x, dtype=float)
        lognorm = np.log(special.ndtr((p[3] - p[0]) / p[1]) - special.ndtr((p[2] - p[0]) / p[1]))
        out = normal_logpdf(x, p[0], p[1]) - lognorm
        return np.where((x >= p[2]) & (x <= p[3]), out, -np.inf)[()]
    if f == "skew-normal":
        return skew_normal_logpdf(x, p[0], p[1], p[2])
    if f == "multivariate-normal":
        return mvn_logpdf(x, np.asarray(p[0]), np.asarray(p[1]))
    if f == "bernoulli":
        x = np.asarray(x, dtype=float)
        with np.errstate(divide="ignore"):
            out = np.where(x == 1, np.log(p[0]), np.log1p(-p[0]))
        return np.where((x == 0) | (x == 1), out, -np.inf)[()]
    if f == "beta":
        x = np.asarray(x, dtype=float)
        a, b = p
        with np.errstate(divide="ignore", invalid="ignore"):
            out = (a - 1) * np.log(x) + (b - 1) * np.log1p(-x) - special.betaln(a, b)
        return np.where((x >= 0) & (x <= 1), out, -np.inf)[()]
    if f == "uniform":
        x = np.asarray(x, dtype=float)
        inside = (x >= p[0]) & (x <= p[1])
        return np.where(inside, -math.log(p[1] - p[0]), -np.inf)[()]
    if f == "exponential":
        x = np.asarray(x, dtype=float)
        return np.where(x >= 0, math.log(p[0]) - p[0] * x, -np.inf)[()]
    if f == "inverse-gamma":
        x = np.asarray(x, dtype=float)
        a, b = p
        with np.errstate(divide="ignore", invalid="ignore"):
            out = a * math.log(b) - special.gammaln(a) - (a + 1) * np.log(x) - b / x
        return np.where(x > 0, out, -np.inf)[()]
    raise AssertionError(f)


def normal_logpdf(x, mean, sd):
    z = (np.asarray(x, dtype=float) - mean) / sd
    return -0.5 * LOG_2PI - np.log(sd) - 0.5 * z * z


def skew_normal_logpdf(x, mean, scale, slant):
    z = (np.asarray(x, dtype=float) - skew_normal_location(mean, scale, slant)) / scale
    return math.log(2.0) - 0.5 * LOG_2PI - np.log(scale) - 0.5 * z * z + special.log_ndtr(slant * z)


def mvn_logpdf(x, mean, cov):
    """Multivariate normal log density; rows of ``x`` are points."""
    x = np.asarray(x, dtype=float)
    d = mean.size
    if d == 2:
        s1, s2 = math.sqrt(cov[0, 0]), math.sqrt(cov[1, 1])
        rho = cov[0, 1] / (s1 * s2)
        u = (x[..., 0] - mean[0]) / s1
        v = (x[..., 1] - mean[1]) / s2
        omr = 1.0 - rho * rho
        q = (u * u - 2.0 * rho * u * v + v * v) / omr
        return -LOG_2PI - math.log(s1 * s2) - 0.5 * math.log(omr) - 0.5 * q
    chol = np.linalg.cholesky(cov)
    diff = x - mean
    sol = np.linalg.solve(chol, diff.reshape(-1, d).T).T.reshape(diff.shape)
    logdet = 2.0 * np.sum(np.log(np.diag(chol)))
    return -0.5 * (d * LOG_2PI + logdet + np.sum(sol * sol, axis=-1))


def mvn_conditional(mean, cov, observed_index: int, observed_value):
    """Normal law of the unobserved coordinate of a bivariate normal.

    Returns a ``normal`` DistSpec (scalar ``observed_value``) or, for array
    input, a ``(mean, sd)`` pair of arrays.
    """
    mean = np.asarray(mean, dtype=float)
    cov = np.asarray(cov, dtype=float)
    if cov.shape != (2, 2):
        raise ValueError("mvn_conditional expects a 2x2 covariance")
    o, u = (0, 1) if observed_index == 0 else (1, 0)
    so, su = math.sqrt(cov[o, o]), math.sqrt(cov[u, u])
    rho = cov[0, 1] / (so * su)
    if abs(rho) >= 1.0:
        raise ValueError("degenerate conditional: |rho| = 1")
    DistSpec("multivariate-normal", (tuple(mean), tuple(map(tuple, cov))))
    cmean = mean[u] + (su / so) * rho * (np.asarray(observed_value, dtype=float) - mean[o])
    csd = su * math.sqrt(1.0 - rho * rho)
    if np.ndim(cmean) == 0:
        return normal(float(cmean), csd)
    return cmean, csd


def log_mix(w, log_a, log_b):
    """``log(w*exp(log_a) + (1-w)*exp(log_b))`` without under/overflow."""
    w = np.asarray(w, dtype=float)
    if np.any((w < 0) | (w > 1)):
        raise ValueError("mixing weight must lie in [0, 1]")
    with np.errstate(divide="ignore"):
        la = np.log(w) + log_a
        lb = np.log1p(-w) + log_b
    return np.logaddexp(la, lb)[()]
