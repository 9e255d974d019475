"""Data generators and the simulation-study harness.

* ``gen_sim_data``: two groups of bivariate normal sources, MAR missingness in
  group A, derived outcome ``y = z1 + z2``; the true group contrast
  ``E(y | B) - E(y | A)`` is -0.5.
* ``gen_zika_dataset``: a newborn cohort (sex, gestational age, head
  circumference) from the BsNmN generative law with missingness that depends
  on observed values, plus a brute-force truth for the microcephaly risk.
* ``gen_boys_dataset``: a stand-in for a height/weight/age/city growth survey.
* ``run_sim_study``: arms A1..A7 over replicated datasets.
"""

from __future__ import annotations

import math
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace

import numpy as np
import pandas as pd
from scipy import special

from .dataset import Dataset, VariableSpec, derive_outcome, derived_definition
from .distributions import RngStream, draw_skew_normal
from .gcomp import EstimandCombiner, TargetPopulation, gcompute
from .growth import DEFAULT_STANDARD, GA_CENTER, GrowthStandard, is_microcephalic
from .imputation import three_step
from .mcmc import ChainConfig, rhat, run_mcmc
from .models import HC_INTERCEPT, BivariateGroupModel, UnivariateNormalModel, h_simple

ARMS = ("A1", "A2", "A3", "A4", "A5", "A6", "A7")


# ---------------------------------------------------------------------------
# appendix simulation design


@dataclass(frozen=True)
class SimScenario:
    n_a: int = 500
    n_b: int = 500
    mean_a: tuple[float, float] = (1.0, 2.0)
    mean_b: tuple[float, float] = (1.5, 1.0)
    cov: tuple[tuple[float, float], tuple[float, float]] = ((1.0, 0.25), (0.25, 1.0))
    # logit P(z1 missing) = a + b * z2 ; logit P(z2 missing) = a + b * z1
    mar_z1: tuple[float, float] = (10.0, 10.0)
    mar_z2: tuple[float, float] = (4.0, -5.0)
    # size of the group-A subset eligible for z1-missingness (the rest: z2)
    split: int | None = None

    def __post_init__(self):
        c = np.array(self.cov)
        if c[0, 0] <= 0 or np.linalg.det(c) <= 0 or c[0, 1] != c[1, 0]:
            raise ValueError("scenario covariance must be symmetric positive-definite")

    @property
    def truth(self) -> float:
        return sum(self.mean_b) - sum(self.mean_a)

    @property
    def n(self) -> int:
        return self.n_a + self.n_b


SIM_SPECS = (
    VariableSpec("group", "explanatory", "binary", levels=("A", "B")),
    VariableSpec("z1"),
    VariableSpec("z2"),
)


def gen_sim_data(scenario: SimScenario = SimScenario(), seed: int = 0):
    """``(observed, complete)`` datasets; both carry the derived ``y``."""
    rng = RngStream(seed, (0,)).generator()
    za = rng.multivariate_normal(scenario.mean_a, scenario.cov, scenario.n_a)
    zb = rng.multivariate_normal(scenario.mean_b, scenario.cov, scenario.n_b)
    z = np.vstack([za, zb])
    group = np.r_[np.zeros(scenario.n_a), np.ones(scenario.n_b)]
    split = scenario.n_a // 2 if scenario.split is None else scenario.split
    perm = rng.permutation(scenario.n_a)
    elig1 = np.zeros(scenario.n, bool)
    elig2 = np.zeros(scenario.n, bool)
    elig1[perm[:split]] = True
    elig2[perm[split:]] = True
    u = rng.random(scenario.n)
    a1, b1 = scenario.mar_z1
    a2, b2 = scenario.mar_z2
    miss1 = elig1 & (u < special.expit(a1 + b1 * z[:, 1]))
    miss2 = elig2 & (u < special.expit(a2 + b2 * z[:, 0]))
    sum2 = derived_definition("sum2", ("z1", "z2"))
    complete = Dataset.from_arrays(SIM_SPECS, {"group": group, "z1": z[:, 0], "z2": z[:, 1]})
    z1 = np.where(miss1, np.nan, z[:, 0])
    z2 = np.where(miss2, np.nan, z[:, 1])
    observed = Dataset.from_arrays(SIM_SPECS, {"group": group, "z1": z1, "z2": z2})
    return derive_outcome(observed, sum2, "y"), derive_outcome(complete, sum2, "y")


def gen_sim_dataset(scenario: SimScenario = SimScenario(), seed: int = 0) -> Dataset:
    return gen_sim_data(scenario, seed)[0]


# ---------------------------------------------------------------------------
# microcephaly cohort


@dataclass(frozen=True)
class ZikaGenParams:
    """Generating values for the synthetic newborn cohort.

    The defaults were calibrated so the population microcephaly risk is close
    to 11.7% and about 43% of 1,800 rows have at least one missing value.
    """

    n: int = 1800
    p_female: float = 0.5
    ga_mean: float = 0.0  # weeks from 39
    ga_scale: float = 2.0
    ga_slant: float = -3.0
    hc_scale: float = DEFAULT_STANDARD.sd
    affected_fraction: float = 0.1245
    affected_shift: float = -3.5
    affected_scale: float = 1.5
    # missingness: sex completely at random; gestational age (only within a
    # random half of rows) more likely for small head circumference; head
    # circumference (other half) more likely for large gestational age
    sex_missing: float = 0.10
    ga_missing: tuple[float, float] = (-0.9, 0.5)  # logit = a + b * (33.912 - hc)
    hc_missing: tuple[float, float] = (-0.7, 0.8)  # logit = a + b * (ga - 39)
    standard: GrowthStandard = DEFAULT_STANDARD

    def __post_init__(self):
        for name in ("p_female", "affected_fraction", "sex_missing"):
            if not 0 <= getattr(self, name) <= 1:
                raise ValueError(f"{name} must be a probability")
        if self.ga_scale <= 0 or self.hc_scale <= 0 or self.affected_scale <= 0:
            raise ValueError("scales must be positive")


ZIKA_SPECS = (
    VariableSpec("sex", "source", "binary"),
    VariableSpec("ga"),
    VariableSpec("hc"),
)


def _zika_draw(p: ZikaGenParams, n: int, rng):
    sex = (rng.random(n) < p.p_female).astype(float)
    g = draw_skew_normal(p.ga_mean, p.ga_scale, p.ga_slant, rng, n)
    affected = rng.random(n) < p.affected_fraction
    trend = HC_INTERCEPT + p.standard.sex * sex + p.standard.linear * g + p.standard.quadratic * g * g
    eps = rng.standard_normal(n)
    hc = np.where(affected, trend + p.affected_shift + p.affected_scale * eps, trend + p.hc_scale * eps)
    return sex, g + GA_CENTER, hc


def zika_truth(p: ZikaGenParams, draws: int = 10**7, seed: int = 0, chunk: int = 10**6) -> float:
    """Population microcephaly risk by brute-force forward simulation."""
    rng = RngStream(seed, (99,)).generator()
    hits = 0.0
    done = 0
    while done < draws:
        m = min(chunk, draws - done)
        sex, ga, hc = _zika_draw(p, m, rng)
        hits += float(is_microcephalic(sex, ga, hc, p.standard, check_range=False).sum())
        done += m
    return hits / draws


def gen_zika_dataset(params: ZikaGenParams = ZikaGenParams(), seed: int = 0, truth_draws: int = 10**7):
    """``(dataset, theta_truth)``; the dataset includes the derived microcephaly column."""
    rng = RngStream(seed, (0,)).generator()
    n = params.n
    sex, ga, hc = _zika_draw(params, n, rng)
    half = rng.random(n) < 0.5
    u1, u2, u3 = rng.random(n), rng.random(n), rng.random(n)
    miss_sex = u1 < params.sex_missing
    a, b = params.ga_missing
    miss_ga = half & (u2 < special.expit(a + b * (HC_INTERCEPT - hc)))
    a, b = params.hc_missing
    miss_hc = ~half & (u3 < special.expit(a + b * (ga - GA_CENTER)))
    keep = ~(miss_sex & miss_ga & miss_hc)
    data = {
        "sex": np.where(miss_sex, np.nan, sex)[keep],
        "ga": np.where(miss_ga, np.nan, ga)[keep],
        "hc": np.where(miss_hc, np.nan, hc)[keep],
    }
    ds = Dataset.from_arrays(ZIKA_SPECS, data)
    micro = derived_definition("microcephaly", ("sex", "ga", "hc"), standard=params.standard)
    ds = derive_outcome(ds, micro, "y", kind="binary")
    truth = zika_truth(params, truth_draws, seed) if truth_draws else float("nan")
    return ds, truth


# ---------------------------------------------------------------------------
# growth-survey stand-in


@dataclass(frozen=True)
class BoysGenParams:
    n: int = 537
    city_fraction: float = 0.09
    age_range: tuple[float, float] = (0.1, 21.0)
    alpha: tuple[float, ...] = (3.98, 0.010, 0.110, 0.0, -0.0024)
    gamma: tuple[float, ...] = (1.35, 0.040, 0.250, 0.001, -0.0050)
    tau: tuple[float, float] = (0.04, 0.12)
    rho: float = 0.6
    n_missing: tuple[int, int, int] = (1, 18, 2)  # city, height, weight


BOYS_SPECS = (
    VariableSpec("age", "explanatory"),
    VariableSpec("city", "explanatory", "binary"),
    VariableSpec("hgt"),
    VariableSpec("wgt"),
)


def gen_boys_dataset(params: BoysGenParams = BoysGenParams(), seed: int = 0) -> Dataset:
    """Synthetic growth survey with the requested counts of missing cells."""
    rng = RngStream(seed, (0,)).generator()
    n = params.n
    age = np.round(rng.uniform(*params.age_range, n), 3)
    city = (rng.random(n) < params.city_fraction).astype(float)
    X = np.column_stack([np.ones(n), city, age, city * age, age * age])
    t1, t2 = params.tau
    cov = np.array([[t1 * t1, params.rho * t1 * t2], [params.rho * t1 * t2, t2 * t2]])
    e = rng.multivariate_normal([0, 0], cov, n)
    hgt = np.round(np.exp(X @ np.array(params.alpha) + e[:, 0]), 1)
    wgt = np.round(np.exp(X @ np.array(params.gamma) + e[:, 1]), 2)
    nc, nh, nw = params.n_missing
    rows = rng.permutation(n)
    city[rows[:nc]] = np.nan
    hgt[rows[nc:nc + nh]] = np.nan
    wgt[rows[nc + nh:nc + nh + nw]] = np.nan
    ds = Dataset.from_arrays(BOYS_SPECS, {"age": age, "city": city, "hgt": hgt, "wgt": wgt})
    return derive_outcome(ds, derived_definition("logbmi", ("hgt", "wgt")), "logbmi")


# ---------------------------------------------------------------------------
# simulation study


@dataclass(frozen=True)
class SimStudyConfig:
    K: int = 20
    M: int = 2000
    S: int = 10000
    cycles: int = 10
    burn_in: int = 1000
    n_chains: int = 2
    seed: int = 0
    scenario: SimScenario = field(default_factory=SimScenario)


def _posterior_row(values, truth):
    values = np.asarray(values, dtype=float)
    lo, hi = np.quantile(values, [0.025, 0.975])
    return float(values.mean()), float(lo), float(hi), bool(lo <= truth <= hi)


def _max_rhat(draws) -> float:
    return max(rhat(draws, [n for n in draws.names if "[" not in n]).values())


def _arm_estimates(arm: str, observed: Dataset, complete: Dataset, cfg: SimStudyConfig, seed: int, cache: dict):
    univ = UnivariateNormalModel("simple", y="y", x="group")
    per_chain = max(1, cfg.M // cfg.n_chains)
    chain = ChainConfig(n_chains=cfg.n_chains, burn_in=cfg.burn_in, draws=per_chain, seed=seed)
    if arm in ("A1", "A2"):
        draws = run_mcmc(univ, complete if arm == "A1" else observed.complete_cases(["y"]), chain)
        return draws["beta1"], _max_rhat(draws)
    if arm in ("A3", "A4", "A5"):
        strategy = {"A3": "SVL", "A4": "DVL", "A5": "JAV"}[arm]
        one = ChainConfig(n_chains=1, burn_in=min(cfg.burn_in, 500), draws=cfg.M)
        worst: dict = {}
        theta, _ = three_step(observed, strategy, univ, lambda d, _ds: d["beta1"], K=cfg.K, M=cfg.M, cycles=cfg.cycles, seed=seed, chain=one, worst_rhat=worst)
        return theta, max(worst.values(), default=math.nan)
    biv = BivariateGroupModel()
    if "bivariate" not in cache:
        # A6 and A7 share one bivariate fit per replication
        cache["bivariate"] = run_mcmc(biv, observed, replace(chain, seed=cache["bivariate_seed"]))
    draws = cache["bivariate"]
    if arm == "A6":
        return h_simple(draws, "B-A"), _max_rhat(draws)
    if arm == "A7":
        pops = [TargetPopulation.make("A", group=("fixed", 0)), TargetPopulation.make("B", group=("fixed", 1))]
        sum2 = derived_definition("sum2", ("z1", "z2"))
        theta = gcompute(draws, biv, pops, EstimandCombiner.difference("A", "B"), sum2, cfg.S, RngStream(seed, (7,)).seed_int()).values
        return theta, _max_rhat(draws)
    raise ValueError(f"unknown arm {arm!r}")


def _one_rep(rep: int, arms, cfg: SimStudyConfig):
    observed, complete = gen_sim_data(cfg.scenario, RngStream(cfg.seed, (rep, 0)).seed_int())
    truth = cfg.scenario.truth
    rows = []
    cache = {"bivariate_seed": RngStream(cfg.seed, (rep, 100)).seed_int()}
    for arm in arms:
        arm_seed = RngStream(cfg.seed, (rep, 1 + ARMS.index(arm))).seed_int()
        try:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", RuntimeWarning)
                est, worst = _arm_estimates(arm, observed, complete, cfg, arm_seed, cache)
            rows.append((rep, arm, *_posterior_row(est, truth), worst, ""))
        except Exception as exc:  # noqa: BLE001 - recorded per replication
            rows.append((rep, arm, math.nan, math.nan, math.nan, False, math.nan, f"{type(exc).__name__}: {exc}"))
    return rows


def run_sim_study(reps: int, n: int = 1000, arms=ARMS, cfg: SimStudyConfig = SimStudyConfig(), workers: int = 1) -> pd.DataFrame:
    """One row per (replication, arm): posterior mean, 95% CrI, coverage.

    ``rhat`` is the largest split-Rhat over the scalar parameters of the arm's fits.
    """
    arms = tuple(arms)
    if not arms:
        raise ValueError("need at least one arm")
    bad = [a for a in arms if a not in ARMS]
    if bad:
        raise ValueError(f"unknown arms {bad}")
    if n != cfg.scenario.n:
        cfg = replace(cfg, scenario=replace(cfg.scenario, n_a=n // 2, n_b=n - n // 2))
    if workers > 1 and reps > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(_one_rep, range(reps), [arms] * reps, [cfg] * reps))
    else:
        parts = [_one_rep(r, arms, cfg) for r in range(reps)]
    df = pd.DataFrame([r for p in parts for r in p], columns=["rep", "arm", "estimate", "lo", "hi", "covers", "rhat", "error"])
    failed = int((df["error"] != "").sum())
    if failed > 0.05 * len(df):
        raise RuntimeError(f"{failed} of {len(df)} replication-arms failed; first: {df.loc[df.error != '', 'error'].iloc[0]}")
    return df


def bias_table(results: pd.DataFrame, truth: float = -0.5) -> pd.DataFrame:
    ok = results[results["error"] == ""] if "error" in results else results
    g = ok.groupby("arm")
    out = pd.DataFrame(
        {
            "mean_estimate": g["estimate"].mean(),
            "bias": g["estimate"].mean() - truth,
            "mc_se": g["estimate"].std(ddof=1) / np.sqrt(g.size()),
            "coverage": g["covers"].mean(),
            "reps": g.size(),
        }
    )
    if "rhat" in ok:
        out["max_rhat"] = g["rhat"].max()
    return out.reset_index()


def scenario_dict(s: SimScenario) -> dict:
    return asdict(s)
