"""Command-line interface.

Every option can also be given in an INI config file (``--config``) under a
section named after the command (``[analyze]``, ``[repro.zika]``, ...) or the
shared ``[common]`` section; command-line flags win. All randomness derives
from the mandatory ``seed``. Outputs go to ``--out``, else ``$DERIVEDBAYES_OUT``,
else ``./derivedbayes-out``.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import json
import os
import sys
import time
import warnings
from dataclasses import asdict, replace
from pathlib import Path

import numpy as np

from . import __version__
from .analysis import KINDS, STRATEGIES, Settings, analyze, impute_dataset, load_dataset, prepare, sources_only
from .dataset import write_csv
from .distributions import RngStream
from .gcomp import ThetaDraws, gcompute
from .imputation import STRATEGIES as IMPUTE_STRATEGIES
from .mcmc import Draws, format_interval, rhat, summarize
from .plots import forest_svg, trace_svg
from .synthetic import (
    ARMS,
    BoysGenParams,
    SimScenario,
    SimStudyConfig,
    ZikaGenParams,
    bias_table,
    gen_boys_dataset,
    gen_sim_data,
    gen_zika_dataset,
    run_sim_study,
)

OUT_ENV = "DERIVEDBAYES_OUT"
FOREST_HEADER = ["method", "estimate", "lo", "hi", "minutes"]


class UsageError(Exception):
    pass


# ---------------------------------------------------------------------------
# options: (flag, type, default, help); every flag maps to a config key


COMMON = [
    ("seed", int, None, "random seed (mandatory)"),
    ("out", str, None, "output directory"),
    ("workers", int, 1, "parallel worker processes"),
]
FIT = [
    ("K", int, 20, "number of imputed datasets"),
    ("M", int, None, "retained draws per imputed-dataset fit"),
    ("S", int, 2000, "forward samples per population and draw"),
    ("cycles", int, 10, "chained-equation cycles"),
    ("chains", int, 2, "MCMC chains"),
    ("burn_in", int, None, "burn-in iterations per chain"),
    ("draws", int, None, "retained draws per chain"),
    ("prior_a", float, 1.26, "Beta prior shape a (Bernoulli model)"),
    ("prior_b", float, 2.32, "Beta prior shape b (Bernoulli model)"),
    ("continuous_method", str, "norm", "imputation method for continuous variables (norm or pmm)"),
]
OPTIONS = {
    "simulate": COMMON + [("scenario", str, "appendix", "appendix, zika or boys"), ("n", int, None, "rows to generate"), ("truth_draws", int, 10**7, "draws for the brute-force truth")],
    "analyze": COMMON + FIT + [
        ("data", str, None, "input CSV"),
        ("kind", str, None, f"data layout: {', '.join(KINDS)}"),
        ("strategy", str, None, f"one of: {', '.join(STRATEGIES)}"),
        ("complete_case", bool, False, "fit the BsNmN model to complete cases only"),
        ("svg", bool, False, "also write SVG trace and forest plots"),
    ],
    "impute": COMMON + FIT + [
        ("data", str, None, "input CSV"),
        ("kind", str, None, f"data layout: {', '.join(KINDS)}"),
        ("strategy", str, None, f"one of: {', '.join(IMPUTE_STRATEGIES)}"),
    ],
    "gcomp": COMMON + FIT + [
        ("draws_csv", str, None, "posterior draws CSV from analyze"),
        ("data", str, None, "dataset CSV (needed for empirical covariates)"),
        ("kind", str, None, "appendix, boys or zika"),
    ],
    "summarize": COMMON + [("draws_csv", str, None, "draws CSV (chain,iter,...) or theta CSV")],
    "repro.sim-study": COMMON + FIT + [("reps", int, 100, "replications"), ("n", int, 1000, "rows per dataset"), ("arms", str, ",".join(ARMS), "comma-separated arms")],
    "repro.zika": COMMON + FIT + [("truth_draws", int, 10**7, "draws for the brute-force truth"), ("svg", bool, False, "also write an SVG forest plot")],
    "repro.boys": COMMON + FIT + [("data", str, None, "CSV of the original survey"), ("synthetic", bool, False, "use a synthetic stand-in"), ("svg", bool, False, "also write an SVG forest plot")],
}
# the seed is not optional, but it may come from the config file
DEFAULTS_OVERRIDE = {"repro.sim-study": {"K": 20, "M": 2000, "S": 10000}, "repro.zika": {"K": 20, "S": 5000}}


def _add_options(p: argparse.ArgumentParser, section: str):
    p.add_argument("--config", help="INI config file")
    for name, typ, _default, help_ in OPTIONS[section]:
        flag = "--" + name.replace("_", "-")
        if typ is bool:
            p.add_argument(flag, action="store_const", const=True, default=None, help=help_)
        else:
            p.add_argument(flag, type=typ, default=None, help=help_)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="derivedbayes", description="Bayesian analysis of derived outcomes with missing source data.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)
    for cmd in ("simulate", "analyze", "impute", "gcomp", "summarize"):
        _add_options(sub.add_parser(cmd), cmd)
    rp = sub.add_parser("repro", help="reproduce a study")
    rsub = rp.add_subparsers(dest="which", required=True)
    for which in ("sim-study", "zika", "boys"):
        _add_options(rsub.add_parser(which), f"repro.{which}")
    rep = sub.add_parser("replay", help="rerun a command from its manifest")
    rep.add_argument("manifest")
    rep.add_argument("--out", required=True)
    return p


def resolve(section: str, args: argparse.Namespace) -> dict:
    """Merge defaults, config file and flags (in increasing priority)."""
    opts = {name: default for name, _t, default, _h in OPTIONS[section]}
    opts.update(DEFAULTS_OVERRIDE.get(section, {}))
    types = {name: typ for name, typ, _d, _h in OPTIONS[section]}
    if getattr(args, "config", None):
        cp = configparser.ConfigParser()
        if not cp.read(args.config, encoding="utf-8"):
            raise UsageError(f"cannot read config file {args.config}")
        # config keys are case-insensitive (K, M and S are upper-case flags)
        by_lower = {name.lower(): name for name in types}
        for sec in ("common", section):
            if cp.has_section(sec):
                for raw_key, raw in cp.items(sec):
                    key = by_lower.get(raw_key.replace("-", "_").lower())
                    if key is None:
                        raise UsageError(f"[{sec}] unknown key {raw_key!r}")
                    opts[key] = cp.getboolean(sec, raw_key) if types[key] is bool else types[key](raw)
    for name in types:
        v = getattr(args, name, None)
        if v is not None:
            opts[name] = v
    if opts.get("seed") is None:
        raise UsageError("a seed is required (--seed or 'seed' in the config file)")
    if opts.get("out") is None:
        opts["out"] = os.environ.get(OUT_ENV, "derivedbayes-out")
    return opts


def _settings(o: dict) -> Settings:
    keys = ("K", "M", "S", "cycles", "chains", "burn_in", "draws", "workers", "prior_a", "prior_b", "continuous_method")
    return Settings(seed=o["seed"], complete_case=bool(o.get("complete_case")), **{k: o[k] for k in keys})


# ---------------------------------------------------------------------------
# manifest and output helpers


class Run:
    """Output directory plus manifest; the manifest is written first."""

    def __init__(self, section: str, opts: dict):
        self.section = section
        self.opts = opts
        self.out = Path(opts["out"])
        self.out.mkdir(parents=True, exist_ok=True)
        self.t0 = time.perf_counter()
        self.files: list[str] = []
        self.manifest = {
            "command": section,
            "config": {k: v for k, v in opts.items() if k != "out"},
            "version": __version__,
            "seeds": {"root": opts["seed"]},
            "outputs": [],
            "elapsed_seconds": None,
        }
        self._write_manifest()

    def _write_manifest(self):
        (self.out / "manifest.json").write_text(json.dumps(self.manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")

    def path(self, name: str) -> Path:
        self.files.append(name)
        return self.out / name

    def finish(self):
        self.manifest["outputs"] = sorted(self.files)
        self.manifest["elapsed_seconds"] = round(time.perf_counter() - self.t0, 3)
        self._write_manifest()


def _fmt(v: float) -> str:
    return repr(float(v))


def write_forest(path: Path, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(FOREST_HEADER)
        for method, est, lo, hi, minutes in rows:
            w.writerow([method, _fmt(est), _fmt(lo), _fmt(hi), f"{minutes:.3f}"])


def _report(label: str, res, percent=False) -> str:
    s = res.summary()
    return f"{label}: {format_interval(s['median'], s['lo'], s['hi'], percent=percent)}"


def _write_rhat(run: Run, name: str, res):
    if res.rhat:
        with open(run.path(name), "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["parameter", "rhat"])
            for k, v in res.rhat.items():
                w.writerow([k, f"{v:.4f}"])


# ---------------------------------------------------------------------------
# commands


def cmd_simulate(o: dict) -> int:
    run = Run("simulate", o)
    seed = o["seed"]
    scenario = o["scenario"]
    if scenario == "appendix":
        sc = SimScenario() if o["n"] is None else SimScenario(n_a=o["n"] // 2, n_b=o["n"] - o["n"] // 2)
        ds, _ = gen_sim_data(sc, seed)
        truth = sc.truth
        kind = "appendix"
    elif scenario == "zika":
        p = ZikaGenParams() if o["n"] is None else ZikaGenParams(n=o["n"])
        ds, truth = gen_zika_dataset(p, seed, o["truth_draws"])
        kind = "zika"
    elif scenario == "boys":
        p = BoysGenParams() if o["n"] is None else BoysGenParams(n=o["n"])
        ds = gen_boys_dataset(p, seed)
        truth = None
        kind = "boys"
    else:
        raise UsageError(f"unknown scenario {scenario!r}; choose appendix, zika or boys")
    write_csv(sources_only(kind, ds), run.path("data.csv"))
    run.path("truth.json").write_text(json.dumps({"scenario": scenario, "truth": truth, "n": ds.n}, indent=2) + "\n", encoding="utf-8")
    run.manifest["truth"] = truth
    run.finish()
    print(f"wrote {ds.n} rows to {run.out / 'data.csv'}; truth = {truth}")
    return 0


def _need(o, *keys):
    for k in keys:
        if o.get(k) is None:
            raise UsageError(f"--{k.replace('_', '-')} is required")


def cmd_analyze(o: dict) -> int:
    _need(o, "data", "kind", "strategy")
    if o["strategy"] not in STRATEGIES:
        raise UsageError(f"unknown strategy {o['strategy']!r}; candidates: {', '.join(STRATEGIES)}")
    run = Run("analyze", o)
    ds = load_dataset(o["kind"], o["data"])
    res = analyze(o["kind"], ds, o["strategy"], _settings(o))
    percent = o["kind"] in ("zika", "binary")
    line = _report(o["strategy"], res, percent)
    print(line)
    ThetaDraws(res.theta, o["strategy"], o["S"], o["seed"]).to_csv(run.path("theta.csv"))
    if res.draws is not None:
        res.draws.to_csv(run.path("draws.csv"))
        if o.get("svg"):
            run.path("trace.svg").write_text(trace_svg(res.draws), encoding="utf-8")
    _write_rhat(run, "rhat.csv", res)
    s = res.summary()
    write_forest(run.path("forest.csv"), [(o["strategy"], s["median"], s["lo"], s["hi"], res.minutes)])
    if o.get("svg"):
        run.path("forest.svg").write_text(forest_svg([(o["strategy"], s["median"], s["lo"], s["hi"])]), encoding="utf-8")
    run.finish()
    return 0


def cmd_impute(o: dict) -> int:
    _need(o, "data", "kind", "strategy")
    if o["strategy"] not in IMPUTE_STRATEGIES:
        raise UsageError(f"unknown strategy {o['strategy']!r}; candidates: {', '.join(IMPUTE_STRATEGIES)}")
    run = Run("impute", o)
    ds = load_dataset(o["kind"], o["data"])
    imp = impute_dataset(o["kind"], ds, o["strategy"], _settings(o))
    paths = imp.export(run.out)
    run.files += [p.name for p in paths] + ["imputed_manifest.json"]
    run.finish()
    print(f"wrote {len(paths)} imputed datasets to {run.out}")
    return 0


def cmd_gcomp(o: dict) -> int:
    from .analysis import _definition, _populations
    from .models import BivariateGroupModel, BsNmNModel, DutchBoysModel

    _need(o, "draws_csv", "kind")
    models = {"appendix": BivariateGroupModel, "boys": DutchBoysModel, "zika": BsNmNModel}
    if o["kind"] not in models:
        raise UsageError("gcomp supports kinds appendix, boys and zika")
    run = Run("gcomp", o)
    model = models[o["kind"]]()
    draws = Draws.from_csv(o["draws_csv"], model.name)
    missing = [n for n in model.param_names if n not in draws]
    if missing:
        raise UsageError(f"draws file lacks parameters {missing} of the {model.name} model")
    ds = load_dataset(o["kind"], o["data"]) if o.get("data") else None
    pops, comb = _populations(o["kind"])
    th = gcompute(draws.params_only(model.param_names), model, pops, comb, _definition(o["kind"]), o["S"], RngStream(o["seed"], (2,)).seed_int(), ds, o["workers"])
    th.to_csv(run.path("theta.csv"))
    s = th.summary()
    print(f"gcomp: {format_interval(s['median'], s['lo'], s['hi'])}")
    run.finish()
    return 0


def cmd_summarize(o: dict) -> int:
    _need(o, "draws_csv")
    run = Run("summarize", o)
    path = o["draws_csv"]
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().strip()
    if header == "theta":
        th = ThetaDraws.from_csv(path)
        table = summarize({"theta": th.values})
        r = {}
    else:
        draws = Draws.from_csv(path)
        table = summarize(draws)
        r = rhat(draws) if draws.n_chains >= 2 and len(draws) // draws.n_chains >= 10 else {}
    if r:
        table["rhat"] = [r.get(n, np.nan) for n in table["name"]]
    table.to_csv(run.path("summary.csv"), index=False, float_format="%.6g", lineterminator="\n")
    print(table.to_string(index=False))
    run.finish()
    return 0


def cmd_repro_sim(o: dict) -> int:
    run = Run("repro.sim-study", o)
    arms = tuple(a.strip() for a in o["arms"].split(",") if a.strip())
    cfg = SimStudyConfig(K=o["K"], M=o["M"] or 2000, S=o["S"], cycles=o["cycles"], burn_in=o["burn_in"] if o["burn_in"] is not None else 1000, n_chains=o["chains"], seed=o["seed"])
    res = run_sim_study(o["reps"], o["n"], arms, cfg, o["workers"])
    res.to_csv(run.path("sim_results.csv"), index=False, columns=["rep", "arm", "estimate", "lo", "hi", "covers"], float_format="%.10g", lineterminator="\n")
    table = bias_table(res, cfg.scenario.truth)
    table.to_csv(run.path("bias_table.csv"), index=False, float_format="%.6g", lineterminator="\n")
    print(table.to_string(index=False))
    run.finish()
    return 0


def _forest_rows(results):
    rows = []
    for label, res in results:
        s = res.summary()
        rows.append((label, s["median"], s["lo"], s["hi"], res.minutes))
    return rows


def _write_method_rhat(path: Path, results):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["method", "parameter", "rhat"])
        for label, res in results:
            for k, v in res.rhat.items():
                w.writerow([label, k, f"{v:.4f}"])


def cmd_repro_zika(o: dict) -> int:
    run = Run("repro.zika", o)
    raw, truth = gen_zika_dataset(ZikaGenParams(), o["seed"], o["truth_draws"])
    ds = prepare("zika", sources_only("zika", raw))
    write_csv(sources_only("zika", ds), run.path("data.csv"))
    st = _settings(o)
    results = [
        ("bernoulli-complete-case", analyze("zika", ds, "bernoulli", st)),
        ("bernoulli-svl", analyze("zika", ds, "three-step-svl", st)),
        ("bsnmn-complete-case", analyze("zika", ds, "bsnmn-gcomp", replace(st, complete_case=True))),
        ("bsnmn-gcomp", analyze("zika", ds, "bsnmn-gcomp", st)),
    ]
    rows = _forest_rows(results)
    write_forest(run.path("forest.csv"), rows)
    _write_method_rhat(run.path("rhat.csv"), results)
    run.path("truth.json").write_text(json.dumps({"truth": truth}, indent=2) + "\n", encoding="utf-8")
    run.manifest["truth"] = truth
    if o.get("svg"):
        run.path("forest.svg").write_text(forest_svg([r[:4] for r in rows], reference=truth, percent=True), encoding="utf-8")
    for label, res in results:
        print(_report(label, res, percent=True))
    print(f"generator truth: {100 * truth:.2f}%")
    run.finish()
    return 0


def cmd_repro_boys(o: dict) -> int:
    if o.get("data"):
        ds = load_dataset("boys", o["data"])
        source = o["data"]
    elif o.get("synthetic"):
        warnings.warn("running on a synthetic stand-in for the growth survey", UserWarning)
        ds = prepare("boys", sources_only("boys", gen_boys_dataset(BoysGenParams(), o["seed"])))
        source = "synthetic"
    else:
        raise UsageError("repro boys needs --data CSV (the original survey) or --synthetic")
    run = Run("repro.boys", o)
    run.manifest["data_source"] = source
    st = _settings(o)
    results = [
        ("complete-case-h1", analyze("boys", ds, "complete-case", st)),
        ("three-step-onthefly-h1", analyze("boys", ds, "three-step-onthefly", st)),
        ("bivariate-h2", analyze("boys", ds, "bivariate-math", st)),
        ("bivariate-gcomp", analyze("boys", ds, "bivariate-gcomp", st)),
    ]
    rows = _forest_rows(results)
    write_forest(run.path("forest.csv"), rows)
    _write_method_rhat(run.path("rhat.csv"), results)
    if o.get("svg"):
        run.path("forest.svg").write_text(forest_svg([r[:4] for r in rows]), encoding="utf-8")
    for label, res in results:
        print(_report(label, res) + f"  ({res.minutes:.2f} min)")
    run.finish()
    return 0


COMMANDS = {
    "simulate": cmd_simulate,
    "analyze": cmd_analyze,
    "impute": cmd_impute,
    "gcomp": cmd_gcomp,
    "summarize": cmd_summarize,
    "repro.sim-study": cmd_repro_sim,
    "repro.zika": cmd_repro_zika,
    "repro.boys": cmd_repro_boys,
}


def replay(manifest_path: str, out: str) -> int:
    m = json.loads(Path(manifest_path).read_text(encoding="utf-8"))
    opts = dict(m["config"])
    opts["out"] = out
    return COMMANDS[m["command"]](opts)


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "replay":
            return replay(args.manifest, args.out)
        section = f"repro.{args.which}" if args.command == "repro" else args.command
        return COMMANDS[section](resolve(section, args))
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (ValueError, KeyError, FileNotFoundError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
