"""Chained-equations multiple imputation and the derived-variable strategies.

Four ways to handle a derived outcome Y = f(sources):

* ``DVL``: impute Y directly from the explanatory variables,
* ``SVL``: impute the sources, then compute Y once at the end,
* ``JAV``: impute Y and its sources as ordinary variables,
* ``on-the-fly``: impute the sources and recompute Y (passively) after every
  source update, so it can serve as a predictor for other variables.

``three_step`` imputes K datasets, fits a Bayesian model to each and pools
all posterior draws without combining rules.
"""

from __future__ import annotations

import json
import math
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Mapping, Sequence

import numpy as np
from scipy import special

from .dataset import Dataset, DerivedDefinition, write_csv
from .distributions import RngStream
from .mcmc import ChainConfig, Draws, ModelGraph, rhat, run_mcmc

METHODS = ("norm", "logreg", "pmm", "passive", "none")
STRATEGIES = ("DVL", "SVL", "JAV", "on-the-fly")


class SingularDesignWarning(RuntimeWarning):
    pass


# ---------------------------------------------------------------------------
# univariate imputation models


def _design(X, n):
    X = np.zeros((n, 0)) if X is None else np.asarray(X, dtype=float).reshape(n, -1)
    return np.column_stack([np.ones(n), X])


def _ls_fit(X, y):
    xtx = X.T @ X
    if np.linalg.cond(xtx) > 1e12:
        warnings.warn("near-singular imputation design; ridge-stabilized", SingularDesignWarning)
        xtx = xtx + 1e-5 * np.diag(np.diag(xtx)) + 1e-10 * np.eye(len(xtx))
    v = np.linalg.inv(xtx)
    v = 0.5 * (v + v.T)
    return v @ (X.T @ y), v


def _norm_draw(X, y, rng):
    """Bayesian linear regression draw (beta*, sigma*) and the point fit."""
    n, p = X.shape
    if n < p + 2:
        raise ValueError(f"norm imputation needs at least {p + 2} observed rows, got {n}")
    beta_hat, v = _ls_fit(X, y)
    resid = y - X @ beta_hat
    rss = float(resid @ resid)
    sigma = math.sqrt(rss / rng.chisquare(n - p)) if rss > 0 else 0.0
    try:
        chol = np.linalg.cholesky(v)
    except np.linalg.LinAlgError:
        chol = np.diag(np.sqrt(np.clip(np.diag(v), 0, None)))
    beta = beta_hat + sigma * (chol @ rng.standard_normal(p))
    return beta, sigma, beta_hat


def _logistic_fit(X, y, ridge=1e-4, iters=100):
    """Penalized logistic regression by Newton steps; the small ridge keeps
    separated data finite."""
    b = np.zeros(X.shape[1])
    pen = ridge * np.eye(X.shape[1])
    for _ in range(iters):
        p = special.expit(X @ b)
        grad = X.T @ (y - p) - ridge * b
        hess = (X * (p * (1 - p))[:, None]).T @ X + pen
        step = np.linalg.solve(hess, grad)
        b += step
        if np.max(np.abs(step)) < 1e-10:
            break
    p = special.expit(X @ b)
    hess = (X * (p * (1 - p))[:, None]).T @ X + pen
    return b, np.linalg.inv(hess)


def univariate_impute(method: str, y_obs, X_obs, X_mis, rng, donors: int = 5) -> np.ndarray:
    """Impute the missing rows of one variable from predictor rows.

    ``X_obs``/``X_mis`` hold predictors without an intercept column (``None``
    means intercept only).
    """
    y_obs = np.asarray(y_obs, dtype=float)
    n_obs = len(y_obs)
    n_mis = 0 if X_mis is None else np.asarray(X_mis).shape[0]
    if X_mis is not None and np.asarray(X_mis).ndim == 1:
        n_mis = len(X_mis)
    Xo = _design(X_obs, n_obs)
    Xm = _design(X_mis, n_mis) if X_mis is not None else np.ones((0, 1))
    if method == "norm":
        beta, sigma, _ = _norm_draw(Xo, y_obs, rng)
        return Xm @ beta + sigma * rng.standard_normal(len(Xm))
    if method == "pmm":
        if n_obs == 0:
            raise ValueError("pmm needs a nonempty donor pool")
        beta, _, beta_hat = _norm_draw(Xo, y_obs, rng)
        pred_obs = Xo @ beta_hat
        pred_mis = Xm @ beta
        k = min(donors, n_obs)
        out = np.empty(len(Xm))
        for i, target in enumerate(pred_mis):
            near = np.argpartition(np.abs(pred_obs - target), k - 1)[:k]
            out[i] = y_obs[near[rng.integers(0, k)]]
        return out
    if method == "logreg":
        if not np.all((y_obs == 0) | (y_obs == 1)):
            raise ValueError("logreg needs a binary target")
        b, v = _logistic_fit(Xo, y_obs)
        if np.max(np.abs(y_obs - special.expit(Xo @ b))) < 1e-3:
            # perfect separation: the normal approximation has near-infinite
            # variance in the separating direction, so keep the penalized fit
            beta = b
        else:
            try:
                chol = np.linalg.cholesky(v)
            except np.linalg.LinAlgError:
                chol = np.diag(np.sqrt(np.clip(np.diag(v), 0, None)))
            beta = b + chol @ rng.standard_normal(len(b))
        p = special.expit(Xm @ beta)
        return (rng.random(len(Xm)) < p).astype(float)
    raise ValueError(f"unknown univariate method {method!r}")


# ---------------------------------------------------------------------------
# plans


@dataclass(frozen=True)
class ImputationMethod:
    """Per-variable methods for the variables that take part in imputation.

    Variables absent from ``methods`` are carried through untouched.
    ``passive`` maps derived names to their definitions (recomputed after any
    source update); ``post`` lists derived names computed once at the end.
    """

    methods: tuple[tuple[str, str], ...]
    passive: tuple[tuple[str, DerivedDefinition], ...] = ()
    post: tuple[tuple[str, DerivedDefinition], ...] = ()
    donors: int = 5

    def __post_init__(self):
        for v, m in self.methods:
            if m not in METHODS:
                raise ValueError(f"{v}: unknown method {m!r}")
            if m == "passive" and v not in dict(self.passive):
                raise ValueError(f"{v}: passive method needs a derived definition")

    @property
    def as_dict(self) -> dict:
        return dict(self.methods)


@dataclass(frozen=True)
class PredictorMatrix:
    """Row = target, column = predictor; zero diagonal."""

    names: tuple[str, ...]
    matrix: tuple[tuple[int, ...], ...]

    def __post_init__(self):
        m = np.array(self.matrix, dtype=int).reshape(len(self.names), len(self.names))
        if np.any(np.diag(m) != 0):
            raise ValueError("predictor matrix must have a zero diagonal")
        if not np.isin(m, (0, 1)).all():
            raise ValueError("predictor matrix entries must be 0/1")

    @classmethod
    def from_dict(cls, names: Sequence[str], rows: Mapping[str, Sequence[str]]) -> "PredictorMatrix":
        names = tuple(names)
        m = [[int(c in rows.get(r, ())) for c in names] for r in names]
        return cls(names, tuple(tuple(r) for r in m))

    @classmethod
    def full(cls, names: Sequence[str]) -> "PredictorMatrix":
        return cls.from_dict(names, {r: [c for c in names if c != r] for r in names})

    def predictors(self, target: str) -> list[str]:
        i = self.names.index(target)
        return [c for c, on in zip(self.names, self.matrix[i]) if on]


def _default_method(ds: Dataset, name: str, continuous: str) -> str:
    return "logreg" if ds.spec(name).kind == "binary" else continuous


def strategy_plan(strategy: str, ds: Dataset, derived: str | DerivedDefinition | None = None, continuous_method: str = "norm"):
    """Methods and predictor matrix for one of the four strategies.

    ``derived`` names the derived column (default: the dataset's only one).
    """
    if strategy not in STRATEGIES:
        raise ValueError(f"unknown strategy {strategy!r}; choose from {STRATEGIES}")
    if isinstance(derived, DerivedDefinition):
        ydef = derived
        yname = next((n for n in ds.names if ds.spec(n).definition == derived), None)
    else:
        cands = [derived] if derived else ds.names_with_role("derived")
        if len(cands) != 1 or cands[0] not in ds:
            raise ValueError("dataset must contain exactly one derived column (or name one)")
        yname = cands[0]
        ydef = ds.spec(yname).definition
    if yname is None or yname not in ds:
        raise ValueError("derived variable not present in the dataset")
    sources = list(ydef.source_names)
    expl = ds.names_with_role("explanatory")
    others = [n for n in ds.names_with_role("source") if n not in sources]
    # any other derived columns (e.g. interaction terms) are kept passive
    extras = {n: ds.spec(n).definition for n in ds.names_with_role("derived") if n != yname}

    def plan(vars_, passive_y=False, post=()):
        vars_ = list(vars_) + [n for n in extras if n not in vars_]
        methods = {n: (_default_method(ds, n, continuous_method) if ds.n_missing(n) else "none") for n in vars_}
        passive = {n: d for n, d in extras.items() if ds.n_missing(n)}
        if passive_y:
            passive[yname] = ydef
        for n in passive:
            methods[n] = "passive"
        defs = dict(extras, **({yname: ydef} if passive_y else {}))
        rows = {}
        for n in vars_:
            # a passively derived column never predicts its own sources
            rows[n] = [c for c in vars_ if c != n and not (c in defs and c in passive and n in defs[c].source_names)]
        return ImputationMethod(tuple(methods.items()), tuple(passive.items()), tuple(post)), PredictorMatrix.from_dict(vars_, rows)

    if strategy == "DVL":
        return plan([yname] + expl + others)
    if strategy == "SVL":
        return plan(sources + expl + others, post=((yname, ydef),))
    if strategy == "JAV":
        return plan([yname] + sources + expl + others)
    return plan([yname] + sources + expl + others, passive_y=True)


# ---------------------------------------------------------------------------


@dataclass
class ImputedSet:
    datasets: list[Dataset]
    strategy: str = ""
    cycles: int = 0
    seed: int | None = None
    info: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.datasets)

    def __iter__(self):
        return iter(self.datasets)

    def export(self, directory, stem: str = "imputed") -> list[Path]:
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        paths = []
        width = max(2, len(str(len(self.datasets))))
        for k, ds in enumerate(self.datasets, 1):
            p = d / f"{stem}_{k:0{width}d}.csv"
            write_csv(ds, p)
            paths.append(p)
        manifest = {"strategy": self.strategy, "seed": self.seed, "cycles": self.cycles, "K": len(self.datasets), "files": [p.name for p in paths]}
        (d / f"{stem}_manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
        return paths


def _derive(name, d: DerivedDefinition, cols, rows) -> np.ndarray:
    with np.errstate(invalid="ignore", divide="ignore"):
        v = d.apply({s: cols[s][rows] for s in d.source_names})
    if not np.all(np.isfinite(v)):
        raise ValueError(
            f"derived variable {name!r} is undefined at some imputed source values; "
            "impute the sources on a scale where the map is defined (e.g. logs) or use pmm"
        )
    return v


def _impute_one(ds: Dataset, methods: ImputationMethod, pred: PredictorMatrix, cycles: int, seed: int, k: int, init: str) -> Dataset:
    rng = RngStream(seed, (k,)).generator()
    mdict = methods.as_dict
    passive = dict(methods.passive)
    cols = {n: np.array(ds[n], dtype=float) for n in ds.names}
    miss = {n: ~np.asarray(ds.observed(n)) for n in ds.names}

    active = [n for n, m in mdict.items() if m not in ("none", "passive") and miss[n].any()]
    for n, m in mdict.items():
        if m == "none" and miss[n].any():
            raise ValueError(f"variable {n!r} has missing values but method 'none'")
    order = sorted(active, key=lambda n: int(miss[n].sum()))  # stable: least to most missing

    def recompute_passive(changed=None):
        for name, d in passive.items():
            if changed is not None and changed not in d.source_names:
                continue
            rows = miss[name]
            if rows.any():
                cols[name][rows] = _derive(name, d, cols, rows)

    def fit_and_fill(n, preds):
        obs = ~miss[n]
        X = np.column_stack([cols[p] for p in preds]) if preds else None
        cols[n][miss[n]] = univariate_impute(
            mdict[n], cols[n][obs], None if X is None else X[obs], np.zeros((int(miss[n].sum()), 0)) if X is None else X[miss[n]], rng, methods.donors
        )

    if init == "monotone":
        # zeroth cycle: visit least to most missing, conditioning only on
        # variables that are complete or already imputed
        ready = {n for n in mdict if not miss[n].any()}
        for n in order:
            fit_and_fill(n, [p for p in pred.predictors(n) if p in ready])
            ready.add(n)
            recompute_passive(n)
            ready.update(p for p in passive if all(s in ready for s in passive[p].source_names))
    elif init == "sources-first":
        # warm start: chained cycles over the non-derived variables with each
        # derived one recomputed from its sources, then ordinary cycles
        derived = {n: ds.spec(n).definition for n in active if ds.spec(n).role == "derived"}
        for n in active:
            if n not in derived:
                pool = cols[n][~miss[n]]
                cols[n][miss[n]] = pool[rng.integers(0, pool.size, int(miss[n].sum()))]
        recompute_passive()
        for _ in range(max(cycles, 1)):
            for n in order:
                if n in derived:
                    continue
                fit_and_fill(n, [p for p in pred.predictors(n) if p not in derived])
                recompute_passive(n)
        for n, d in derived.items():
            cols[n][miss[n]] = _derive(n, d, cols, miss[n])
        recompute_passive()
    elif init == "random":
        for n in active:
            pool = cols[n][~miss[n]]
            if pool.size == 0:
                raise ValueError(f"variable {n!r} has no observed values to initialize from")
            cols[n][miss[n]] = pool[rng.integers(0, pool.size, int(miss[n].sum()))]
        recompute_passive()
    else:
        raise ValueError(f"unknown init {init!r}")
    # other incomplete columns used as predictors must be filled too
    for p in {p for n in active for p in pred.predictors(n)}:
        if p not in mdict and miss[p].any():
            raise ValueError(f"predictor {p!r} has missing values and is not imputed")

    for _ in range(cycles):
        for n in order:
            fit_and_fill(n, pred.predictors(n))
            recompute_passive(n)

    for name, d in methods.post:
        rows = miss[name]
        if rows.any():
            cols[name][rows] = _derive(name, d, cols, rows)

    out = ds
    filled = set(active) | set(passive) | {n for n, _ in methods.post}
    for n in filled:
        out = out.with_values(n, cols[n], np.ones(ds.n, bool))
    return out


def run_chained(
    ds: Dataset,
    methods: ImputationMethod,
    pred: PredictorMatrix,
    K: int = 5,
    cycles: int = 10,
    seed: int = 0,
    init: str = "random",
    workers: int = 1,
    strategy: str = "",
) -> ImputedSet:
    """K independent chained-equations imputations; copy ``k`` uses stream ``(seed, k)``."""
    if K < 1 or cycles < 0:
        raise ValueError("K must be >= 1 and cycles >= 0")
    args = [(ds, methods, pred, cycles, seed, k, init) for k in range(K)]
    if workers > 1 and K > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            sets = list(pool.map(_impute_one, *zip(*args)))
    else:
        sets = [_impute_one(*a) for a in args]
    return ImputedSet(sets, strategy, cycles, seed, {"init": init})


def impute(ds: Dataset, strategy: str, K: int = 5, cycles: int = 10, seed: int = 0, derived=None, continuous_method: str = "norm", init: str | None = None, workers: int = 1) -> ImputedSet:
    methods, pred = strategy_plan(strategy, ds, derived, continuous_method)
    return run_chained(ds, methods, pred, K, cycles, seed, init or default_init(strategy), workers, strategy)


def default_init(strategy: str) -> str:
    # JAV's Y model predicts perfectly from its sources, so imputations freeze
    # at whatever the first pass produces; a random fill or a monotone pass
    # that skips not-yet-imputed predictors freezes biased values in place
    return "sources-first" if strategy == "JAV" else "random"


# ---------------------------------------------------------------------------


def three_step(
    ds: Dataset,
    strategy: str,
    model: ModelGraph,
    estimand: Callable[[Draws, Dataset], np.ndarray],
    K: int = 20,
    M: int = 1000,
    cycles: int = 10,
    seed: int = 0,
    chain: ChainConfig | None = None,
    derived=None,
    continuous_method: str = "norm",
    init: str | None = None,
    workers: int = 1,
    imputed: ImputedSet | None = None,
    worst_rhat: dict | None = None,
):
    """Impute, fit each completed dataset with ``M`` retained draws, pool.

    Returns ``(theta_values, imputed_set)``; ``theta_values`` has ``K*M`` entries.
    If ``worst_rhat`` is given it is filled with the largest split-Rhat of each
    scalar parameter over the per-dataset fits.
    """
    if imputed is None:
        imputed = impute(ds, strategy, K, cycles, RngStream(seed, (0,)).seed_int(), derived, continuous_method, init, workers)
    base = chain or ChainConfig(n_chains=1, burn_in=500, draws=M)
    if M < 1:
        raise ValueError("M must be >= 1")
    per_chain = -(-M // base.n_chains)
    thetas = []
    for k, completed in enumerate(imputed):
        cfg = ChainConfig(
            n_chains=base.n_chains, burn_in=base.burn_in, draws=per_chain, seed=RngStream(seed, (1, k)).seed_int(),
            adapt_window=base.adapt_window, thin=base.thin, use_gibbs=base.use_gibbs,
        )
        try:
            draws = run_mcmc(model, completed, cfg)
        except Exception as exc:  # noqa: BLE001 - reported with the dataset index
            raise RuntimeError(f"fit failed on imputed dataset {k + 1}: {exc}") from exc
        if worst_rhat is not None and per_chain >= 10:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", RuntimeWarning)
                for name, value in rhat(draws, [n for n in draws.names if "[" not in n]).items():
                    worst_rhat[name] = max(worst_rhat.get(name, 0.0), value)
        thetas.append(np.asarray(estimand(draws, completed), dtype=float)[:M])
    return np.concatenate(thetas), imputed
