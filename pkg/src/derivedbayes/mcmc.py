"""Adaptive Metropolis-within-Gibbs sampler over a :class:`ModelGraph`.

Scalar parameters are updated one at a time by random-walk Metropolis on an
unconstrained scale (log for half-lines, logit for intervals), unless the model
registers a conjugate Gibbs block for them. Missing data cells are parameters
too: continuous cells get vectorized per-cell random-walk moves (rows are
conditionally independent given the parameters), binary cells a discrete Gibbs
draw, and models may supply exact conditional draws instead.

Proposal scales adapt by Robbins-Monro towards 44% acceptance during burn-in
and are frozen afterwards, so retained draws come from a fixed Markov kernel.
"""

from __future__ import annotations

import csv
import math
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import pandas as pd
from scipy import special

from .distributions import DistSpec, RngStream, log_density


@dataclass(frozen=True)
class Param:
    name: str
    prior: DistSpec

    @property
    def bounds(self) -> tuple[float, float]:
        return self.prior.support


@dataclass
class MissingBlock:
    column: str
    rows: np.ndarray
    kind: str = "continuous"
    exact: bool = False


@dataclass
class ModelData:
    """Completed working copy of the data a model is fitted to."""

    cols: dict[str, np.ndarray]
    observed: dict[str, np.ndarray]
    missing: list[MissingBlock]
    n: int
    extra: dict = field(default_factory=dict)


class ModelGraph:
    """Base class for the models the engine can sample.

    Subclasses declare ``params`` and implement ``prepare`` and ``term``;
    ``terms()`` maps each log-likelihood term to the parameters it involves,
    which lets the engine re-evaluate only what a single update touches.
    """

    name = "model"
    params: tuple[Param, ...] = ()
    source_names: tuple[str, ...] = ()
    covariate_names: tuple[str, ...] = ()
    # groups of parameters with a conjugate Gibbs update (see ``gibbs``)
    gibbs_blocks: tuple[tuple[str, ...], ...] = ()
    # groups of strongly correlated random-walk parameters that additionally
    # get a joint move with a covariance learned during burn-in
    joint_blocks: tuple[tuple[str, ...], ...] = ()

    @property
    def param_names(self) -> list[str]:
        return [p.name for p in self.params]

    def prepare(self, ds) -> ModelData:
        raise NotImplementedError

    def terms(self) -> dict[str, tuple[str, ...]]:
        raise NotImplementedError

    def term(self, name: str, theta: dict, data: ModelData) -> float:
        raise NotImplementedError

    def log_lik(self, theta: dict, data: ModelData) -> float:
        return float(sum(self.term(t, theta, data) for t in self.terms()))

    def row_loglik(self, column: str, theta: dict, data: ModelData, rows: np.ndarray) -> np.ndarray:
        """Per-row log-likelihood contributions that involve ``column`` at ``rows``."""
        raise NotImplementedError(f"{self.name} cannot update missing {column!r} by Metropolis")

    def impute_exact(self, column, theta, data, rows, rng) -> np.ndarray:
        raise NotImplementedError

    def gibbs(self, block: int, theta: dict, data: ModelData, rng) -> dict:
        raise NotImplementedError

    def refresh(self, data: ModelData, column: str | None = None) -> None:
        """Hook called after missing cells of ``column`` (or all, if None) change."""

    def forward_sample(self, theta: dict, covariates: dict, S: int, rng, data: ModelData | None = None) -> dict:
        """Draw ``S`` source tuples given covariate arrays (or scalars) of length ``S``."""
        raise NotImplementedError(f"{self.name} has no forward sampler")


@dataclass(frozen=True)
class ChainConfig:
    n_chains: int = 2
    burn_in: int = 1000
    draws: int = 1000  # retained draws per chain
    seed: int = 0
    adapt_window: int | None = None  # defaults to the whole burn-in
    thin: int = 1
    use_gibbs: bool = True
    keep_missing: bool = False
    target_accept: float = 0.44
    init: tuple[tuple[str, float], ...] = ()

    def __post_init__(self):
        if self.n_chains < 1:
            raise ValueError("n_chains must be >= 1")
        if self.burn_in < 0:
            raise ValueError("burn_in must be >= 0")
        if self.draws < 1:
            raise ValueError("draws must be >= 1")
        if self.thin < 1:
            raise ValueError("thin must be >= 1")


@dataclass
class Draws:
    names: list[str]
    values: np.ndarray
    chain: np.ndarray
    iteration: np.ndarray
    model: str = ""
    seed: int | None = None
    info: dict = field(default_factory=dict)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.ndim != 2 or self.values.shape[1] != len(self.names):
            raise ValueError("values must be an (N, P) matrix matching names")

    def __len__(self) -> int:
        return self.values.shape[0]

    def __getitem__(self, name: str) -> np.ndarray:
        return self.values[:, self.names.index(name)]

    def __contains__(self, name) -> bool:
        return name in self.names

    @property
    def n_chains(self) -> int:
        return len(np.unique(self.chain))

    def by_chain(self, name: str) -> np.ndarray:
        col = self[name]
        ids = np.unique(self.chain)
        parts = [col[self.chain == c] for c in ids]
        m = min(len(p) for p in parts)
        return np.stack([p[:m] for p in parts])

    def row(self, i: int) -> dict:
        return dict(zip(self.names, self.values[i].tolist()))

    def params_only(self, names: Sequence[str]) -> "Draws":
        idx = [self.names.index(n) for n in names]
        return Draws(list(names), self.values[:, idx], self.chain, self.iteration, self.model, self.seed, dict(self.info))

    def to_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["chain", "iter", *self.names])
            for c, it, row in zip(self.chain, self.iteration, self.values):
                w.writerow([int(c), int(it), *(repr(float(v)) for v in row)])

    @classmethod
    def from_csv(cls, path, model: str = "") -> "Draws":
        with open(path, newline="", encoding="utf-8") as fh:
            r = csv.reader(fh)
            header = next(r)
            rows = [list(map(float, line)) for line in r]
        arr = np.array(rows, dtype=float).reshape(-1, len(header))
        return cls(header[2:], arr[:, 2:], arr[:, 0].astype(int), arr[:, 1].astype(int), model)

    @classmethod
    def concat(cls, parts: Sequence["Draws"], relabel_chains: bool = True) -> "Draws":
        names = parts[0].names
        chains, offset = [], 0
        for p in parts:
            if p.names != names:
                raise ValueError("cannot concatenate draws with different parameters")
            ids = p.chain - p.chain.min() + offset if relabel_chains else p.chain
            chains.append(ids)
            offset = ids.max() + 1
        return cls(
            list(names),
            np.vstack([p.values for p in parts]),
            np.concatenate(chains),
            np.concatenate([p.iteration for p in parts]),
            parts[0].model,
            parts[0].seed,
        )


# ---------------------------------------------------------------------------
# transforms between constrained and unconstrained scales


def _to_u(x, lo, hi):
    if math.isfinite(lo) and math.isfinite(hi):
        return math.log((x - lo) / (hi - x))
    if math.isfinite(lo):
        return math.log(x - lo)
    if math.isfinite(hi):
        return math.log(hi - x)
    return x


def _from_u(u, lo, hi):
    if math.isfinite(lo) and math.isfinite(hi):
        return lo + (hi - lo) * special.expit(u)
    if math.isfinite(lo):
        return lo + math.exp(u)
    if math.isfinite(hi):
        return hi - math.exp(u)
    return u


def _log_jac(u, lo, hi):
    if math.isfinite(lo) and math.isfinite(hi):
        return math.log(hi - lo) - math.log1p(math.exp(-u)) - math.log1p(math.exp(u)) if abs(u) < 700 else -abs(u)
    if math.isfinite(lo) or math.isfinite(hi):
        return u
    return 0.0


def _scalar_logprior(prior: DistSpec):
    """Fast scalar log prior (scipy/numpy call overhead dominates otherwise)."""
    f, p = prior.family, prior.params
    if f == "normal":
        m, s = p
        c = -0.5 * math.log(2 * math.pi) - math.log(s)
        return lambda x: c - 0.5 * ((x - m) / s) ** 2
    if f == "truncated-normal":
        m, s, lo, hi = p
        c = -0.5 * math.log(2 * math.pi) - math.log(s) - math.log(special.ndtr((hi - m) / s) - special.ndtr((lo - m) / s))
        return lambda x: c - 0.5 * ((x - m) / s) ** 2 if lo <= x <= hi else -math.inf
    if f == "exponential":
        r = p[0]
        return lambda x: math.log(r) - r * x if x >= 0 else -math.inf
    if f == "inverse-gamma":
        a, b = p
        c = a * math.log(b) - math.lgamma(a)
        return lambda x: c - (a + 1) * math.log(x) - b / x if x > 0 else -math.inf
    if f == "uniform":
        lo, hi = p
        c = -math.log(hi - lo)
        return lambda x: c if lo <= x <= hi else -math.inf
    if f == "beta":
        a, b = p
        c = -special.betaln(a, b)

        def lp(x):
            if not 0 < x < 1:
                return -math.inf
            return c + (a - 1) * math.log(x) + (b - 1) * math.log1p(-x)

        return lp
    return lambda x: float(log_density(prior, x))


# ---------------------------------------------------------------------------


class _JointMove:
    """Adaptive-covariance random-walk move on a group of parameters."""

    def __init__(self, names):
        self.names = tuple(names)
        d = len(self.names)
        self.count = 0
        self.mean = np.zeros(d)
        self.m2 = np.zeros((d, d))
        self.chol = None
        self.log_scale = math.log(2.38 / math.sqrt(d))
        self.accepts = 0
        self.terms: list[str] = []

    @property
    def ready(self) -> bool:
        return self.chol is not None

    def observe(self, u):
        self.count += 1
        delta = u - self.mean
        self.mean += delta / self.count
        self.m2 += np.outer(delta, u - self.mean)

    def refit(self):
        cov = self.m2 / (self.count - 1)
        cov = cov + 1e-8 * np.eye(len(cov)) * max(1.0, float(np.trace(cov)))
        try:
            self.chol = np.linalg.cholesky(cov)
        except np.linalg.LinAlgError:
            pass


def _joint_step(jm, u, theta, tv, model, data, bounds, priors, rng, adapting, it):
    old = {n: theta[n] for n in jm.names}
    cur = sum(priors[n](old[n]) + _log_jac(ui, *bounds[n]) for n, ui in zip(jm.names, u))
    cur += sum(tv[t] for t in jm.terms)
    u_new = u + math.exp(jm.log_scale) * (jm.chol @ rng.standard_normal(len(u)))
    prop = 0.0
    for n, ui in zip(jm.names, u_new):
        theta[n] = _from_u(ui, *bounds[n])
        prop += priors[n](theta[n]) + _log_jac(ui, *bounds[n])
    new_vals = {}
    if math.isfinite(prop):
        for t in jm.terms:
            new_vals[t] = model.term(t, theta, data)
            prop += new_vals[t]
    log_r = prop - cur
    ok = math.isfinite(prop) and (log_r >= 0 or rng.random() < math.exp(log_r))
    if ok:
        tv.update(new_vals)
        if not adapting:
            jm.accepts += 1
    else:
        theta.update(old)
    if adapting:
        jm.log_scale += it ** -0.6 * ((1.0 if ok else 0.0) - 0.234)


def log_posterior(model: ModelGraph, theta: dict, data: ModelData) -> float:
    lp = sum(float(log_density(p.prior, theta[p.name])) for p in model.params)
    if not math.isfinite(lp):
        return lp
    return lp + model.log_lik(theta, data)


def initial_theta(model: ModelGraph, overrides: dict | None = None) -> dict:
    theta = {p.name: p.prior.median() for p in model.params}
    theta.update(overrides or {})
    return theta


def initialize_missing(data: ModelData) -> None:
    """Continuous cells at the observed column mean, binary at the observed mode."""
    for blk in data.missing:
        col = data.cols[blk.column]
        obs = data.observed[blk.column]
        if blk.kind == "binary":
            fill = float(col[obs].mean() >= 0.5) if obs.any() else 0.0
        else:
            fill = float(col[obs].mean()) if obs.any() else 0.0
        col[blk.rows] = fill


def _run_chain(model: ModelGraph, ds, cfg: ChainConfig, chain_id: int):
    rng = RngStream(cfg.seed, (chain_id,)).generator()
    data = model.prepare(ds)
    initialize_missing(data)
    model.refresh(data, None)
    theta = initial_theta(model, dict(cfg.init))

    lp0 = log_posterior(model, theta, data)
    if not math.isfinite(lp0):
        raise ValueError(f"{model.name}: non-finite log posterior at the initial point ({lp0})")

    terms = model.terms()
    tv = {t: model.term(t, theta, data) for t in terms}
    param_terms = {p.name: [t for t, deps in terms.items() if p.name in deps] for p in model.params}

    blocks = model.gibbs_blocks if cfg.use_gibbs else ()
    gibbs_params = {n for b in blocks for n in b}
    rw = [p for p in model.params if p.name not in gibbs_params]
    bounds = {p.name: p.bounds for p in rw}
    priors = {p.name: _scalar_logprior(p.prior) for p in rw}
    log_scale = {p.name: math.log(0.25) for p in rw}
    accepts = {p.name: 0 for p in rw}

    rw_names = {p.name for p in rw}
    joint = [_JointMove(b) for b in model.joint_blocks if set(b) <= rw_names]
    for jm in joint:
        jm.terms = sorted({t for n in jm.names for t in param_terms[n]})

    miss_scale = {b.column: np.full(len(b.rows), math.log(0.5)) for b in data.missing if b.kind == "continuous" and not b.exact}
    miss_acc = {c: 0.0 for c in miss_scale}

    adapt_until = cfg.burn_in if cfg.adapt_window is None else min(cfg.adapt_window, cfg.burn_in)
    total = cfg.burn_in + cfg.draws * cfg.thin
    names = model.param_names
    miss_names: list[str] = []
    if cfg.keep_missing:
        for b in data.missing:
            miss_names += [f"{b.column}[{int(r)}]" for r in b.rows]
    out = np.empty((cfg.draws, len(names) + len(miss_names)))
    k = 0

    for it in range(1, total + 1):
        adapting = it <= adapt_until
        gamma = it ** -0.6

        for bi, block in enumerate(blocks):
            theta.update(model.gibbs(bi, theta, data, rng))
            touched = {t for n in block for t in param_terms[n]}
            for t in touched:
                tv[t] = model.term(t, theta, data)

        for p in rw:
            name = p.name
            lo, hi = bounds[name]
            x = theta[name]
            u = _to_u(x, lo, hi)
            u_new = u + math.exp(log_scale[name]) * rng.standard_normal()
            x_new = _from_u(u_new, lo, hi)
            ts = param_terms[name]
            cur = priors[name](x) + _log_jac(u, lo, hi)
            for t in ts:
                cur += tv[t]
            theta[name] = x_new
            prop = priors[name](x_new) + _log_jac(u_new, lo, hi)
            new_vals = {}
            if math.isfinite(prop):
                for t in ts:
                    v = model.term(t, theta, data)
                    new_vals[t] = v
                    prop += v
            log_r = prop - cur
            ok = math.isfinite(prop) and (log_r >= 0 or rng.random() < math.exp(log_r))
            if ok:
                tv.update(new_vals)
                if not adapting:
                    accepts[name] += 1
            else:
                theta[name] = x
            if adapting:
                log_scale[name] += gamma * ((1.0 if ok else 0.0) - cfg.target_accept)

        for jm in joint:
            u = np.array([_to_u(theta[n], *bounds[n]) for n in jm.names])
            if jm.ready:
                _joint_step(jm, u, theta, tv, model, data, bounds, priors, rng, adapting, it)
                u = np.array([_to_u(theta[n], *bounds[n]) for n in jm.names])
            if adapting and it > adapt_until // 2:
                jm.observe(u)
                if jm.count >= 200 and jm.count % 100 == 0:
                    jm.refit()

        if data.missing:
            for blk in data.missing:
                col = data.cols[blk.column]
                if blk.exact:
                    col[blk.rows] = model.impute_exact(blk.column, theta, data, blk.rows, rng)
                elif blk.kind == "binary":
                    col[blk.rows] = 0.0
                    model.refresh(data, blk.column)
                    l0 = model.row_loglik(blk.column, theta, data, blk.rows)
                    col[blk.rows] = 1.0
                    model.refresh(data, blk.column)
                    l1 = model.row_loglik(blk.column, theta, data, blk.rows)
                    p1 = special.expit(l1 - l0)
                    col[blk.rows] = (rng.random(len(blk.rows)) < p1).astype(float)
                else:
                    cur = col[blk.rows].copy()
                    l_cur = model.row_loglik(blk.column, theta, data, blk.rows)
                    prop = cur + np.exp(miss_scale[blk.column]) * rng.standard_normal(len(cur))
                    col[blk.rows] = prop
                    model.refresh(data, blk.column)
                    l_new = model.row_loglik(blk.column, theta, data, blk.rows)
                    with np.errstate(invalid="ignore"):
                        log_r = l_new - l_cur
                    acc = np.log(rng.random(len(cur))) < np.where(np.isnan(log_r), -np.inf, log_r)
                    col[blk.rows] = np.where(acc, prop, cur)
                    if adapting:
                        miss_scale[blk.column] += gamma * (acc - cfg.target_accept)
                    else:
                        miss_acc[blk.column] += acc.mean()
                model.refresh(data, blk.column)
            for t in terms:
                tv[t] = model.term(t, theta, data)

        if it > cfg.burn_in and (it - cfg.burn_in) % cfg.thin == 0:
            row = [theta[n] for n in names]
            if miss_names:
                for b in data.missing:
                    row.extend(data.cols[b.column][b.rows])
            out[k] = row
            k += 1

    n_kept = cfg.draws * cfg.thin
    info = {
        "acceptance": {n: accepts[n] / n_kept for n in accepts},
        "missing_acceptance": {c: miss_acc[c] / n_kept for c in miss_acc},
        "proposal_scale": {n: math.exp(v) for n, v in log_scale.items()},
        "joint_acceptance": {"+".join(jm.names): jm.accepts / n_kept for jm in joint},
    }
    return names + miss_names, out, info


def run_mcmc(model: ModelGraph, data, cfg: ChainConfig = ChainConfig(), workers: int = 1) -> Draws:
    """Sample ``model`` given ``data``; burn-in is discarded.

    Chains are independent (chain ``c`` uses stream ``(cfg.seed, c)``) and may
    run in a process pool; the result does not depend on ``workers``.
    """
    ids = list(range(cfg.n_chains))
    if workers > 1 and cfg.n_chains > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_run_chain, [model] * len(ids), [data] * len(ids), [cfg] * len(ids), ids))
    else:
        results = [_run_chain(model, data, cfg, c) for c in ids]
    names = results[0][0]
    values = np.vstack([r[1] for r in results])
    chain = np.repeat(ids, cfg.draws)
    iteration = np.tile(np.arange(cfg.draws), cfg.n_chains)
    info = {"chains": [r[2] for r in results]}
    keep = np.all(np.isfinite(values), axis=1)
    if not keep.all():
        warnings.warn(f"{model.name}: dropped {int((~keep).sum())} non-finite draws", RuntimeWarning)
    draws = Draws(names, values[keep], chain[keep], iteration[keep], model.name, cfg.seed, info)
    zero = [n for n in model.param_names if np.ptp(draws[n]) == 0]
    if zero:
        warnings.warn(f"{model.name}: zero posterior variance for {zero}", RuntimeWarning)
        info["zero_variance"] = zero
    return draws


# ---------------------------------------------------------------------------
# diagnostics and summaries


def split_rhat(chains: np.ndarray) -> float:
    """Split-chain potential scale reduction for an (n_chains, n_draws) array."""
    chains = np.asarray(chains, dtype=float)
    if chains.ndim == 1:
        chains = chains[None, :]
    half = chains.shape[1] // 2
    split = np.concatenate([chains[:, :half], chains[:, chains.shape[1] - half:]], axis=0)
    n = split.shape[1]
    means = split.mean(axis=1)
    w = split.var(axis=1, ddof=1).mean()
    b = n * means.var(ddof=1)
    if b == 0:
        # chains agree exactly; the (n-1)/n shrinkage would report below 1
        return 1.0
    if w == 0:
        return math.inf
    var_plus = (n - 1) / n * w + b / n
    return float(math.sqrt(var_plus / w))


def rhat(draws: Draws, names: Sequence[str] | None = None) -> dict[str, float]:
    names = list(draws.names if names is None else names)
    if draws.n_chains < 2:
        warnings.warn("rhat: single chain, computed on its two halves", RuntimeWarning)
    out = {}
    for n in names:
        ch = draws.by_chain(n)
        if ch.shape[1] < 10:
            raise ValueError("rhat needs at least 10 draws per chain")
        out[n] = split_rhat(ch)
    return out


def summarize(draws, probs: Sequence[float] = (0.025, 0.975), names: Sequence[str] | None = None) -> pd.DataFrame:
    """Median, mean and equal-tailed quantiles per parameter.

    ``draws`` may be a :class:`Draws` or a mapping of name to 1-d array.
    """
    for p in probs:
        if not 0 < p < 1:
            raise ValueError(f"quantile level {p} outside (0, 1)")
    if isinstance(draws, Draws):
        cols = {n: draws[n] for n in (names or draws.names)}
    else:
        cols = {n: np.asarray(v, dtype=float) for n, v in draws.items()}
    recs = []
    for n, v in cols.items():
        if v.size == 0:
            raise ValueError("cannot summarize empty draws")
        rec = {"name": n, "mean": float(np.mean(v)), "median": float(np.median(v))}
        for p, q in zip(probs, np.quantile(v, probs)):
            rec[f"q{100 * p:g}"] = float(q)
        recs.append(rec)
    return pd.DataFrame(recs)


def format_interval(median: float, lo: float, hi: float, percent: bool = False, digits: int = 2) -> str:
    """``"9.18% [7.60%, 10.92%]"`` style rendering of a point estimate and CrI."""
    if percent:
        return f"{100 * median:.{digits}f}% [{100 * lo:.{digits}f}%, {100 * hi:.{digits}f}%]"
    return f"{median:.{digits + 1}f} [{lo:.{digits + 1}f}, {hi:.{digits + 1}f}]"
