"""End-to-end analyses for the three data layouts shipped with the package.

A *kind* fixes the column layout, the derived outcome and the models:

``appendix``  group / z1 / z2, outcome y = z1 + z2, contrast B minus A
``boys``      age / city / hgt / wgt, outcome log BMI, city contrast averaged over age
``zika``      sex / ga / hc, outcome microcephaly, population risk
``binary``    a single binary column y, its prevalence
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace

import numpy as np

from .dataset import Dataset, DerivedDefinition, VariableSpec, derive_outcome, derived_definition, load_csv
from .distributions import RngStream
from .gcomp import EstimandCombiner, TargetPopulation, gcompute
from .imputation import impute, three_step
from .mcmc import ChainConfig, Draws, rhat, run_mcmc
from .models import BernoulliModel, BivariateGroupModel, BsNmNModel, DutchBoysModel, UnivariateNormalModel, h1, h2, h_simple
from .synthetic import BOYS_SPECS, SIM_SPECS, ZIKA_SPECS

KINDS = ("appendix", "boys", "zika", "binary")
STRATEGIES = (
    "complete-case",
    "three-step-dvl",
    "three-step-svl",
    "three-step-jav",
    "three-step-onthefly",
    "bivariate-math",
    "bivariate-gcomp",
    "bsnmn-gcomp",
    "bernoulli",
)
THREE_STEP = {"three-step-dvl": "DVL", "three-step-svl": "SVL", "three-step-jav": "JAV", "three-step-onthefly": "on-the-fly"}

ALLOWED = {
    "appendix": {"complete-case", "three-step-dvl", "three-step-svl", "three-step-jav", "three-step-onthefly", "bivariate-math", "bivariate-gcomp"},
    "boys": {"complete-case", "three-step-dvl", "three-step-svl", "three-step-jav", "three-step-onthefly", "bivariate-math", "bivariate-gcomp"},
    "zika": {"complete-case", "three-step-dvl", "three-step-svl", "three-step-jav", "three-step-onthefly", "bsnmn-gcomp", "bernoulli"},
    "binary": {"complete-case", "bernoulli"},
}

OUTCOME = {"appendix": "y", "boys": "logbmi", "zika": "y", "binary": "y"}


@dataclass(frozen=True)
class Settings:
    seed: int
    K: int = 20
    M: int | None = None  # retained draws per imputed-dataset fit; default chains * draws
    S: int = 2000
    cycles: int = 10
    chains: int = 2
    burn_in: int | None = None
    draws: int | None = None  # retained draws per chain
    workers: int = 1
    prior_a: float = 1.26
    prior_b: float = 2.32
    continuous_method: str = "norm"
    complete_case: bool = False  # fit BsNmN to complete cases only

    def __post_init__(self):
        for name in ("K", "S", "cycles", "chains", "workers"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        for name in ("M", "burn_in", "draws"):
            v = getattr(self, name)
            if v is not None and v < (0 if name == "burn_in" else 1):
                raise ValueError(f"{name} must be positive")

    def chain(self, strategy: str, stream: int = 0) -> ChainConfig:
        # the mixture model needs longer chains for split-Rhat < 1.05
        slow = strategy == "bsnmn-gcomp"
        burn = self.burn_in if self.burn_in is not None else (2000 if slow else 1000)
        draws = self.draws if self.draws is not None else (3000 if slow else 1000)
        return ChainConfig(n_chains=self.chains, burn_in=burn, draws=draws, seed=RngStream(self.seed, (stream,)).seed_int())


@dataclass
class AnalysisResult:
    kind: str
    strategy: str
    theta: np.ndarray
    draws: Draws | None = None
    rhat: dict = field(default_factory=dict)
    minutes: float = 0.0
    info: dict = field(default_factory=dict)

    def summary(self) -> dict:
        lo, hi = np.quantile(self.theta, [0.025, 0.975])
        return {"median": float(np.median(self.theta)), "mean": float(np.mean(self.theta)), "lo": float(lo), "hi": float(hi)}


# ---------------------------------------------------------------------------
# dataset layouts


def boys_extras(ds: Dataset) -> Dataset:
    """Add age squared and the city-by-age interaction for imputation models."""
    age = np.asarray(ds["age"])
    ds = ds.with_column(VariableSpec("age2", "explanatory"), age * age)
    inter = DerivedDefinition("city_age", ("city", "age"), np.multiply)
    return derive_outcome(ds, inter, "city_age")


def prepare(kind: str, ds: Dataset) -> Dataset:
    """Attach the kind's derived outcome (and helper columns) to raw sources."""
    if kind == "appendix":
        return derive_outcome(ds, derived_definition("sum2", ("z1", "z2")), "y")
    if kind == "boys":
        return boys_extras(derive_outcome(ds, derived_definition("logbmi", ("hgt", "wgt")), "logbmi"))
    if kind == "zika":
        return derive_outcome(ds, derived_definition("microcephaly", ("sex", "ga", "hc")), "y", kind="binary")
    if kind == "binary":
        return ds
    raise ValueError(f"unknown kind {kind!r}; choose from {KINDS}")


def imputation_view(kind: str, ds: Dataset) -> Dataset:
    """The columns chained imputation works on.

    For ``boys`` height and weight are imputed on the log scale (where a
    normal model cannot produce impossible values) and log BMI is derived
    from the logs; other kinds impute the prepared dataset as is.
    """
    if kind != "boys":
        return ds
    logs = {}
    for raw, name in (("hgt", "loghgt"), ("wgt", "logwgt")):
        obs = ds.observed(raw)
        logs[name] = (np.log(np.where(obs, ds[raw], 1.0)), obs)
    keep = [n for n in ("age", "city") if n in ds]
    out = Dataset.from_arrays(
        [ds.spec(n) for n in keep] + [VariableSpec("loghgt"), VariableSpec("logwgt")],
        {**{n: ds[n] for n in keep}, **{k: v for k, (v, _) in logs.items()}},
        {**{n: ds.observed(n) for n in keep}, **{k: m for k, (_, m) in logs.items()}},
    )
    out = derive_outcome(out, derived_definition("logbmi-logscale", ("loghgt", "logwgt")), "logbmi")
    return boys_extras(out)


def source_specs(kind: str):
    return {
        "appendix": SIM_SPECS,
        "boys": BOYS_SPECS,
        "zika": ZIKA_SPECS,
        "binary": (VariableSpec("y", "source", "binary"),),
    }[kind]


def load_dataset(kind: str, path, na_token: str = "NA") -> Dataset:
    if kind not in KINDS:
        raise ValueError(f"unknown kind {kind!r}; choose from {KINDS}")
    return prepare(kind, load_csv(path, source_specs(kind), na_token))


def sources_only(kind: str, ds: Dataset) -> Dataset:
    """Drop derived and helper columns (for writing raw data files)."""
    names = [s.name for s in source_specs(kind)]
    out = Dataset.from_arrays([ds.spec(n) for n in names], {n: ds[n] for n in names}, {n: ds.observed(n) for n in names})
    return out


# ---------------------------------------------------------------------------


def _univariate(kind):
    if kind == "appendix":
        return UnivariateNormalModel("simple", y="y", x="group")
    return UnivariateNormalModel("quadratic-interaction", y="logbmi", x="city", age="age")


def _univariate_estimand(kind, ds):
    if kind == "appendix":
        return lambda d, _ds: d["beta1"]
    mean_age = float(np.mean(ds["age"]))
    return lambda d, _ds: h1(d, mean_age)


def _populations(kind):
    if kind == "appendix":
        return [TargetPopulation.make("A", group=("fixed", 0)), TargetPopulation.make("B", group=("fixed", 1))], EstimandCombiner.difference("A", "B")
    if kind == "boys":
        return (
            [TargetPopulation.make("rural", city=("fixed", 0), age=("empirical", "age")), TargetPopulation.make("city", city=("fixed", 1), age=("empirical", "age"))],
            EstimandCombiner.difference("rural", "city"),
        )
    return [TargetPopulation.make("all")], EstimandCombiner.single("all")


def _definition(kind) -> DerivedDefinition:
    return {
        "appendix": derived_definition("sum2", ("z1", "z2")),
        "boys": derived_definition("logbmi", ("hgt", "wgt")),
        "zika": derived_definition("microcephaly", ("sex", "ga", "hc")),
    }[kind]


def analyze(kind: str, ds: Dataset, strategy: str, settings: Settings) -> AnalysisResult:
    """Run one analysis strategy; ``ds`` must already be :func:`prepare`-d."""
    if strategy not in STRATEGIES:
        raise ValueError(f"unknown strategy {strategy!r}; choose from {', '.join(STRATEGIES)}")
    if kind not in KINDS:
        raise ValueError(f"unknown kind {kind!r}; choose from {KINDS}")
    if strategy not in ALLOWED[kind]:
        raise ValueError(f"strategy {strategy!r} does not apply to {kind!r} data; use one of {sorted(ALLOWED[kind])}")
    t0 = time.perf_counter()
    y = OUTCOME[kind]
    cfg = settings.chain(strategy, 1)
    w = settings.workers
    draws = None
    info: dict = {}
    fit_rhat: dict = {}

    if kind in ("zika", "binary") and strategy in ("complete-case", "bernoulli") or (kind == "zika" and strategy in THREE_STEP):
        model = BernoulliModel(settings.prior_a, settings.prior_b, y=y)
        if strategy in THREE_STEP:
            M = settings.M or cfg.n_chains * cfg.draws
            chain = ChainConfig(n_chains=1, burn_in=min(cfg.burn_in, 500), draws=M)
            theta, _ = three_step(
                ds, THREE_STEP[strategy], model, lambda d, _ds: d["theta"], settings.K, M, settings.cycles, settings.seed, chain,
                derived=y, continuous_method=settings.continuous_method, workers=w, worst_rhat=fit_rhat,
            )
        else:
            draws = run_mcmc(model, ds.complete_cases([y]), cfg, w)
            theta = draws["theta"]
    elif strategy == "complete-case":
        model = _univariate(kind)
        cols = [y] + list(model.covariate_names)
        cc = ds.complete_cases(cols)
        draws = run_mcmc(model, cc, cfg, w)
        theta = np.asarray(_univariate_estimand(kind, cc)(draws, cc))
    elif strategy in THREE_STEP:
        model = _univariate(kind)
        M = settings.M or cfg.n_chains * cfg.draws
        chain = ChainConfig(n_chains=1, burn_in=min(cfg.burn_in, 500), draws=M)
        theta, _ = three_step(
            imputation_view(kind, ds), THREE_STEP[strategy], model, _univariate_estimand(kind, ds), settings.K, M, settings.cycles, settings.seed, chain,
            derived=y, continuous_method=settings.continuous_method, workers=w, worst_rhat=fit_rhat,
        )
    elif strategy in ("bivariate-math", "bivariate-gcomp"):
        model = BivariateGroupModel() if kind == "appendix" else DutchBoysModel()
        draws = run_mcmc(model, ds, cfg, w)
        if strategy == "bivariate-math":
            theta = h_simple(draws, "B-A") if kind == "appendix" else h2(draws, float(np.mean(ds["age"])))
        else:
            pops, comb = _populations(kind)
            theta = gcompute(draws, model, pops, comb, _definition(kind), settings.S, RngStream(settings.seed, (2,)).seed_int(), ds, w).values
    else:  # bsnmn-gcomp
        model = BsNmNModel()
        data = ds.complete_cases(["sex", "ga", "hc"]) if settings.complete_case else ds
        draws = run_mcmc(model, data, cfg, w)
        pops, comb = _populations(kind)
        theta = gcompute(draws, model, pops, comb, _definition(kind), settings.S, RngStream(settings.seed, (2,)).seed_int(), data, w).values
        info["complete_case"] = settings.complete_case

    # three-step fits report the worst value over the per-dataset chains
    r = fit_rhat
    if draws is not None and draws.n_chains >= 2:
        r = rhat(draws, [n for n in draws.names if "[" not in n])
    return AnalysisResult(kind, strategy, np.asarray(theta, dtype=float), draws, r, (time.perf_counter() - t0) / 60.0, info)


def with_settings(settings: Settings, **changes) -> Settings:
    return replace(settings, **{k: v for k, v in changes.items() if v is not None})


def impute_dataset(kind: str, ds: Dataset, strategy: str, settings: Settings):
    return impute(imputation_view(kind, ds), strategy, settings.K, settings.cycles, settings.seed, derived=OUTCOME[kind], continuous_method=settings.continuous_method, workers=settings.workers)
