"""Incomplete tabular data with variable roles and derived-variable definitions.

A :class:`Dataset` keeps a float array per variable together with a boolean
observation mask. Missing cells hold NaN so accidental arithmetic on them
propagates instead of producing plausible numbers, but the mask is the
authority on what is observed.
"""

from __future__ import annotations

import csv
import math
from collections import Counter
from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

from .growth import DEFAULT_STANDARD, GrowthStandard, is_microcephalic

ROLES = ("source", "explanatory", "derived")
KINDS = ("continuous", "binary")


@dataclass(frozen=True)
class DerivedDefinition:
    """A deterministic map from source values to one outcome value.

    ``f`` receives one array per source (in ``source_names`` order) and must
    be elementwise, so it works on scalars and on whole columns alike.
    """

    name: str
    source_names: tuple[str, ...]
    f: Callable = field(compare=False)

    def __post_init__(self):
        if len(self.source_names) < 1:
            raise ValueError("a derived definition needs at least one source variable")

    def __call__(self, *values):
        return self.f(*values)

    def apply(self, columns: Mapping[str, np.ndarray]) -> np.ndarray:
        return np.asarray(self.f(*(np.asarray(columns[s], dtype=float) for s in self.source_names)), dtype=float)


@dataclass(frozen=True)
class VariableSpec:
    name: str
    role: str = "source"
    kind: str = "continuous"
    definition: DerivedDefinition | None = None
    # text labels for the 0 and 1 codes of a binary column, e.g. ("A", "B")
    levels: tuple[str, str] | None = None

    def __post_init__(self):
        if self.role not in ROLES:
            raise ValueError(f"role must be one of {ROLES}, got {self.role!r}")
        if self.kind not in KINDS:
            raise ValueError(f"kind must be one of {KINDS}, got {self.kind!r}")
        if self.role == "derived" and self.definition is None:
            raise ValueError(f"derived variable {self.name!r} needs a DerivedDefinition")
        if self.levels is not None and self.kind != "binary":
            raise ValueError("levels only apply to binary variables")


# ---------------------------------------------------------------------------
# registry of named derived definitions

_REGISTRY: dict[str, Callable[..., DerivedDefinition]] = {}


def register_derived(name: str):
    def deco(factory):
        _REGISTRY[name] = factory
        return factory

    return deco


def derived_definition(name: str, sources: Sequence[str] | None = None, **kwargs) -> DerivedDefinition:
    """Look up a registered derived definition, optionally renaming its sources."""
    try:
        factory = _REGISTRY[name]
    except KeyError:
        raise KeyError(f"unknown derived definition {name!r}; known: {sorted(_REGISTRY)}") from None
    return factory(tuple(sources) if sources is not None else None, **kwargs)


def registered_names() -> list[str]:
    return sorted(_REGISTRY)


def _sum2(a, b):
    return a + b


def _logbmi(height_cm, weight_kg):
    return np.log(weight_kg / (height_cm / 100.0) ** 2)


def _logbmi_logscale(log_height_cm, log_weight_kg):
    return log_weight_kg - 2.0 * log_height_cm + 2.0 * math.log(100.0)


def _identity(y):
    return y


class _Microcephaly:
    def __init__(self, std: GrowthStandard):
        self.std = std

    def __call__(self, sex, ga, hc):
        # forward draws may fall outside the tabulated GA range; extrapolate
        return is_microcephalic(sex, ga, hc, self.std, check_range=False)


@register_derived("sum2")
def _make_sum2(sources=None):
    return DerivedDefinition("sum2", sources or ("z1", "z2"), _sum2)


@register_derived("logbmi")
def _make_logbmi(sources=None):
    return DerivedDefinition("logbmi", sources or ("hgt", "wgt"), _logbmi)


@register_derived("logbmi-logscale")
def _make_logbmi_logscale(sources=None):
    return DerivedDefinition("logbmi-logscale", sources or ("loghgt", "logwgt"), _logbmi_logscale)


@register_derived("identity")
def _make_identity(sources=None):
    return DerivedDefinition("identity", sources or ("y",), _identity)


@register_derived("microcephaly")
def _make_microcephaly(sources=None, standard: GrowthStandard = DEFAULT_STANDARD):
    return DerivedDefinition("microcephaly", sources or ("sex", "ga", "hc"), _Microcephaly(standard))


# ---------------------------------------------------------------------------


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=float, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Dataset:
    specs: tuple[VariableSpec, ...]
    values: Mapping[str, np.ndarray]
    mask: Mapping[str, np.ndarray]

    def __post_init__(self):
        names = [s.name for s in self.specs]
        if len(set(names)) != len(names):
            dup = [k for k, c in Counter(names).items() if c > 1]
            raise ValueError(f"duplicate variable names: {dup}")
        lengths = {len(self.values[n]) for n in names} | {len(self.mask[n]) for n in names}
        if len(lengths) > 1:
            raise ValueError("all columns must have the same length")
        for s in self.specs:
            obs = self.mask[s.name]
            if s.kind == "binary":
                v = self.values[s.name][obs]
                if not np.all((v == 0) | (v == 1)):
                    raise ValueError(f"binary column {s.name!r} has values outside {{0, 1}}")
            if np.any(~np.isfinite(self.values[s.name][obs])):
                raise ValueError(f"column {s.name!r} has non-finite observed values")

    @classmethod
    def from_arrays(cls, specs: Iterable[VariableSpec], data: Mapping[str, Sequence[float]], mask=None) -> "Dataset":
        """Build a dataset; NaN marks a missing cell unless ``mask`` is given."""
        specs = tuple(specs)
        values, masks = {}, {}
        for s in specs:
            if s.name not in data:
                raise KeyError(f"no data for variable {s.name!r}")
            v = np.asarray(data[s.name], dtype=float)
            m = np.asarray(mask[s.name], dtype=bool) if mask is not None else ~np.isnan(v)
            v = np.where(m, v, np.nan)
            values[s.name] = _readonly(v)
            m = m.copy()
            m.setflags(write=False)
            masks[s.name] = m
        return cls(specs, values, masks)

    @property
    def n(self) -> int:
        return len(self.values[self.specs[0].name]) if self.specs else 0

    @property
    def names(self) -> list[str]:
        return [s.name for s in self.specs]

    def spec(self, name: str) -> VariableSpec:
        for s in self.specs:
            if s.name == name:
                return s
        raise KeyError(f"unknown variable {name!r}")

    def __contains__(self, name) -> bool:
        return name in self.values

    def __getitem__(self, name: str) -> np.ndarray:
        if name not in self.values:
            raise KeyError(f"unknown variable {name!r}")
        return self.values[name]

    def observed(self, name: str) -> np.ndarray:
        return self.mask[name]

    def n_missing(self, name: str) -> int:
        return int((~self.mask[name]).sum())

    @property
    def missing_vars(self) -> list[str]:
        """Variables with at least one missing cell."""
        return [n for n in self.names if not self.mask[n].all()]

    @property
    def complete_vars(self) -> list[str]:
        return [n for n in self.names if self.mask[n].all()]

    def names_with_role(self, role: str) -> list[str]:
        return [s.name for s in self.specs if s.role == role]

    def complete_rows(self, names: Sequence[str] | None = None) -> np.ndarray:
        names = self.names if names is None else list(names)
        ok = np.ones(self.n, dtype=bool)
        for n in names:
            ok &= self.mask[n]
        return ok

    def complete_cases(self, names: Sequence[str] | None = None) -> "Dataset":
        return self.subset(np.flatnonzero(self.complete_rows(names)))

    def subset(self, rows) -> "Dataset":
        rows = np.asarray(rows)
        return Dataset.from_arrays(
            self.specs,
            {n: self.values[n][rows] for n in self.names},
            {n: self.mask[n][rows] for n in self.names},
        )

    def with_column(self, spec: VariableSpec, values, mask=None) -> "Dataset":
        """Return a copy with ``spec.name`` added or replaced."""
        values = np.asarray(values, dtype=float)
        mask = ~np.isnan(values) if mask is None else np.asarray(mask, dtype=bool)
        if spec.name in self.values:
            specs = [spec if s.name == spec.name else s for s in self.specs]
        else:
            specs = [*self.specs, spec]
        data = {n: self.values[n] for n in self.names}
        masks = {n: self.mask[n] for n in self.names}
        data[spec.name], masks[spec.name] = values, mask
        return Dataset.from_arrays(specs, data, masks)

    def with_values(self, name: str, values, mask=None) -> "Dataset":
        return self.with_column(self.spec(name), values, mask)

    def to_frame(self):
        import pandas as pd

        return pd.DataFrame({n: self.values[n] for n in self.names})

    def equals(self, other: "Dataset") -> bool:
        if self.names != other.names:
            return False
        for n in self.names:
            if not np.array_equal(self.mask[n], other.mask[n]):
                return False
            m = self.mask[n]
            if not np.array_equal(self.values[n][m], other.values[n][m]):
                return False
        return True


def derive_outcome(ds: Dataset, definition: DerivedDefinition, name: str | None = None, kind: str = "continuous") -> Dataset:
    """Add (or refresh) the derived column; NA wherever any source is NA."""
    name = name or definition.name
    for s in definition.source_names:
        if s not in ds:
            raise KeyError(f"source variable {s!r} not in dataset")
    if name in ds and ds.spec(name).role != "derived":
        raise ValueError(f"{name!r} already exists as a non-derived column")
    ok = ds.complete_rows(definition.source_names)
    out = np.full(ds.n, np.nan)
    if ok.any():
        cols = {s: ds[s][ok] for s in definition.source_names}
        out[ok] = definition.apply(cols)
    spec = VariableSpec(name, "derived", kind, definition)
    return ds.with_column(spec, out, ok)


# ---------------------------------------------------------------------------
# missingness patterns


@dataclass(frozen=True)
class PatternTable:
    variables: tuple[str, ...]
    rows: tuple[tuple[int, tuple[bool, ...], int], ...]

    @property
    def n(self) -> int:
        return sum(r[2] for r in self.rows)

    def count(self, flags: Sequence[bool]) -> int:
        for _, f, c in self.rows:
            if f == tuple(flags):
                return c
        return 0

    def as_dict(self) -> dict[tuple[bool, ...], int]:
        return {f: c for _, f, c in self.rows}

    def to_frame(self):
        import pandas as pd

        recs = []
        for pid, flags, c in self.rows:
            rec = {"pattern": pid}
            rec.update({v: ("obs" if f else "mis") for v, f in zip(self.variables, flags)})
            rec["count"] = c
            recs.append(rec)
        return pd.DataFrame(recs)


def pattern_table(ds: Dataset, variables: Sequence[str]) -> PatternTable:
    """Distinct observed/missing combinations over ``variables`` with counts."""
    variables = tuple(variables)
    if not variables:
        raise ValueError("pattern_table needs at least one variable")
    for v in variables:
        if v not in ds:
            raise KeyError(f"unknown variable {v!r}")
    flags = np.column_stack([ds.observed(v) for v in variables])
    counts = Counter(map(tuple, flags.tolist()))
    # all-observed first, then by number of missing cells
    ordered = sorted(counts.items(), key=lambda kv: (-sum(kv[0]), tuple(not f for f in kv[0])))
    rows = tuple((i + 1, tuple(bool(x) for x in f), c) for i, (f, c) in enumerate(ordered))
    return PatternTable(variables, rows)


# ---------------------------------------------------------------------------
# CSV


def load_csv(path, specs: Sequence[VariableSpec], na_token: str = "NA") -> Dataset:
    """Read a comma-separated file with a header row naming every spec."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise ValueError(f"{path}: empty file") from None
        rows = list(reader)
    index = {h: i for i, h in enumerate(header)}
    for s in specs:
        if s.name not in index:
            raise ValueError(f"{path}: column {s.name!r} not found in header {header}")
    data = {}
    for s in specs:
        j = index[s.name]
        col = np.empty(len(rows))
        for i, row in enumerate(rows):
            tok = row[j].strip()
            col[i] = _parse_token(tok, s, na_token, path, i + 2)
        data[s.name] = col
    return Dataset.from_arrays(specs, data)


def _parse_token(tok: str, spec: VariableSpec, na_token: str, path, line: int) -> float:
    if tok == na_token:
        return math.nan
    if spec.levels is not None and tok in spec.levels:
        return float(spec.levels.index(tok))
    try:
        v = float(tok)
    except ValueError:
        raise ValueError(f"{path}:{line}: non-numeric value {tok!r} in column {spec.name!r}") from None
    if spec.kind == "binary" and v not in (0.0, 1.0):
        raise ValueError(f"{path}:{line}: binary column {spec.name!r} has value {tok!r}")
    if not math.isfinite(v):
        raise ValueError(f"{path}:{line}: non-finite value {tok!r} in column {spec.name!r}")
    return v


def write_csv(ds: Dataset, path, na_token: str = "NA") -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(ds.names)
        cols = [(ds.spec(n), ds[n], ds.observed(n)) for n in ds.names]
        for i in range(ds.n):
            w.writerow([_format_cell(s, v[i], m[i], na_token) for s, v, m in cols])


def _format_cell(spec: VariableSpec, v: float, observed: bool, na_token: str) -> str:
    if not observed:
        return na_token
    if spec.kind == "binary":
        return spec.levels[int(v)] if spec.levels else str(int(v))
    return repr(float(v))
