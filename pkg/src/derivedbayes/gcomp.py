"""Posterior g-computation of estimands defined on a derived outcome.

For every posterior draw the fitted model forward-samples ``S`` source tuples
per target population, the derived-variable map is applied, the tuples are
averaged, and the per-population averages are combined into one estimand
draw. Random streams are keyed by ``(seed, m)`` so results do not depend on
how the draw loop is split across workers.
"""

from __future__ import annotations

import csv
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .dataset import Dataset, DerivedDefinition
from .distributions import RngStream
from .mcmc import Draws, ModelGraph

PLAN_KINDS = ("fixed", "empirical", "param")


@dataclass(frozen=True)
class TargetPopulation:
    """Covariate plan for one population.

    ``plan`` maps each explanatory variable to ``("fixed", value)``,
    ``("empirical", column)`` (resampled with replacement from the observed
    cells of ``column``) or ``("param", name)`` (read from the posterior draw).
    """

    id: str
    plan: tuple[tuple[str, tuple[str, object]], ...] = ()

    def __post_init__(self):
        for var, (kind, _) in self.plan:
            if kind not in PLAN_KINDS:
                raise ValueError(f"covariate {var!r}: plan kind must be one of {PLAN_KINDS}")

    @classmethod
    def make(cls, id: str, **plan) -> "TargetPopulation":
        """``TargetPopulation.make("B", group=("fixed", 1), age=("empirical", "age"))``"""
        return cls(str(id), tuple(sorted((k, tuple(v)) for k, v in plan.items())))

    @property
    def plan_dict(self) -> dict:
        return dict(self.plan)

    @property
    def population_params(self) -> tuple[str, ...]:
        return tuple(str(v) for _, (k, v) in self.plan if k == "param")


@dataclass(frozen=True)
class EstimandCombiner:
    """How the per-population expectations combine into the estimand."""

    kind: str
    populations: tuple[str, ...]
    weights: tuple[float, ...] = ()

    def __post_init__(self):
        if self.kind == "single" and len(self.populations) != 1:
            raise ValueError("single combiner takes exactly one population")
        if self.kind == "difference" and len(self.populations) != 2:
            raise ValueError("difference combiner takes two populations (first, second) -> second - first")
        if self.kind == "linear" and len(self.weights) != len(self.populations):
            raise ValueError("linear combiner needs one weight per population")
        if self.kind not in ("single", "difference", "linear"):
            raise ValueError(f"unknown combiner kind {self.kind!r}")

    @classmethod
    def single(cls, pop: str):
        return cls("single", (pop,))

    @classmethod
    def difference(cls, first: str, second: str):
        """``E(Y | second) - E(Y | first)``."""
        return cls("difference", (first, second))

    @classmethod
    def linear(cls, weights: Mapping[str, float]):
        return cls("linear", tuple(weights), tuple(float(w) for w in weights.values()))

    def check(self, populations: Sequence[TargetPopulation]) -> None:
        ids = {p.id for p in populations}
        missing = [p for p in self.populations if p not in ids]
        if missing:
            raise KeyError(f"combiner references undeclared populations {missing}")

    def combine(self, expectations: Mapping[str, float]) -> float:
        e = [expectations[p] for p in self.populations]
        if self.kind == "single":
            return e[0]
        if self.kind == "difference":
            return e[1] - e[0]
        return float(np.dot(self.weights, e))


@dataclass
class ThetaDraws:
    values: np.ndarray
    model: str = ""
    S: int = 0
    seed: int | None = None
    info: dict = field(default_factory=dict)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if not np.all(np.isfinite(self.values)):
            raise ValueError("estimand draws must be finite")

    def __len__(self):
        return len(self.values)

    def summary(self, probs=(0.025, 0.975)) -> dict:
        lo, hi = np.quantile(self.values, probs)
        return {"median": float(np.median(self.values)), "mean": float(self.values.mean()), "lo": float(lo), "hi": float(hi)}

    def to_csv(self, path) -> None:
        """One ``theta`` column; a trailing ``#`` line holds median and 95% CrI."""
        s = self.summary()
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["theta"])
            for v in self.values:
                w.writerow([repr(float(v))])
            fh.write(f"# median={s['median']!r},q2.5={s['lo']!r},q97.5={s['hi']!r}\n")

    @classmethod
    def from_csv(cls, path) -> "ThetaDraws":
        with open(path, encoding="utf-8") as fh:
            lines = [ln.strip() for ln in fh if ln.strip() and not ln.startswith("#")]
        if not lines or lines[0] != "theta":
            raise ValueError(f"{path}: expected a 'theta' column")
        return cls(np.array([float(x) for x in lines[1:]]))


# ---------------------------------------------------------------------------


def _observed_column(ds: Dataset | None, col: str) -> np.ndarray:
    if ds is None:
        raise ValueError(f"empirical plan on {col!r} needs the dataset")
    v = np.asarray(ds[col])[np.asarray(ds.observed(col))]
    if v.size == 0:
        raise ValueError(f"empirical plan: column {col!r} has no observed values")
    return v


def resolve_covariates(model: ModelGraph, phi: Mapping, pop: TargetPopulation, S: int, ds=None, cov_rng=None, cache=None) -> dict:
    """Covariate arrays of length ``S`` for one population.

    ``cache`` shares empirical resamples of the same column between the
    populations of one draw, so contrasts compare like with like.
    """
    plan = pop.plan_dict
    out = {}
    for var in model.covariate_names:
        if var not in plan:
            raise KeyError(f"population {pop.id!r} has no plan for covariate {var!r}")
        kind, val = plan[var]
        if kind == "fixed":
            out[var] = np.full(S, float(val))
        elif kind == "param":
            if val not in phi:
                raise KeyError(f"population {pop.id!r} references unknown parameter {val!r}")
            out[var] = np.full(S, float(phi[val]))
        else:
            key = str(val)
            if cache is not None and key in cache:
                out[var] = cache[key]
                continue
            values = _observed_column(ds, key)
            rng = cov_rng if cov_rng is not None else np.random.default_rng()
            out[var] = values[rng.integers(0, values.size, S)]
            if cache is not None:
                cache[key] = out[var]
    return out


def forward_sample_sources(model: ModelGraph, phi: Mapping, pop: TargetPopulation, S: int, rng, ds=None, cov_rng=None, cache=None) -> dict:
    """``S`` iid source tuples (plus covariates) from the model given one draw."""
    if S < 1:
        raise ValueError("S must be >= 1")
    for name in pop.population_params:
        if name not in phi:
            raise KeyError(f"population {pop.id!r} references unknown parameter {name!r}")
    cov = resolve_covariates(model, phi, pop, S, ds, cov_rng if cov_rng is not None else rng, cache)
    out = model.forward_sample(phi, cov, S, rng)
    for k, v in cov.items():
        out.setdefault(k, v)
    return out


def population_expectation(model: ModelGraph, phi: Mapping, pop: TargetPopulation, definition: DerivedDefinition, S: int, rng, ds=None, cov_rng=None, cache=None) -> float:
    exact = getattr(model, "exact_mean", None)
    if exact is not None and not model.covariate_names:
        v = exact(phi, definition)
        if v is not None:
            return float(v)
    missing = [s for s in definition.source_names if s not in model.source_names and s not in model.covariate_names]
    if missing:
        raise KeyError(f"derived definition needs {missing}, which model {model.name!r} does not generate")
    sample = forward_sample_sources(model, phi, pop, S, rng, ds, cov_rng, cache)
    y = definition.apply(sample)
    if np.isnan(y).any():
        raise FloatingPointError("derived map returned NA on a forward-sampled tuple")
    if np.ptp(y) == 0:
        return float(y[0])  # avoid summation rounding for a constant map
    return float(y.mean())


def _gcomp_range(model, names, values, populations, combiner, definition, S, seed, ds, start):
    out = np.empty(len(values))
    for i, row in enumerate(values):
        m = start + i
        phi = dict(zip(names, row.tolist()))
        cov_rng = RngStream(seed, (m, 0)).generator()
        cache: dict = {}
        e = {}
        for d, pop in enumerate(populations):
            rng = RngStream(seed, (m, d + 1)).generator()
            e[pop.id] = population_expectation(model, phi, pop, definition, S, rng, ds, cov_rng, cache)
        out[i] = combiner.combine(e)
    return out


def gcompute(
    draws: Draws,
    model: ModelGraph,
    populations: Sequence[TargetPopulation],
    combiner: EstimandCombiner,
    definition: DerivedDefinition,
    S: int,
    seed: int,
    ds=None,
    workers: int = 1,
) -> ThetaDraws:
    """One estimand draw per posterior draw; ``workers`` does not change results."""
    if len(draws) < 1:
        raise ValueError("need at least one posterior draw")
    if not populations:
        raise ValueError("need at least one target population")
    if S < 1:
        raise ValueError("S must be >= 1")
    combiner.check(populations)
    names = list(draws.names)
    vals = draws.values
    args = (model, names)
    rest = (populations, combiner, definition, S, seed, ds)
    if workers > 1 and len(vals) > 1:
        bounds = np.linspace(0, len(vals), min(workers, len(vals)) + 1).astype(int)
        with ProcessPoolExecutor(max_workers=workers) as pool:
            futs = [pool.submit(_gcomp_range, *args, vals[a:b], *rest, int(a)) for a, b in zip(bounds[:-1], bounds[1:])]
            theta = np.concatenate([f.result() for f in futs])
    else:
        theta = _gcomp_range(*args, vals, *rest, 0)
    return ThetaDraws(theta, model.name, S, seed, {"populations": [p.id for p in populations]})


def forward_sampling_se(values: np.ndarray, S: int) -> float:
    """Standard error of a mean of ``S`` forward samples with spread like ``values``."""
    return float(np.std(values, ddof=1) / math.sqrt(S))
