import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy import stats

from derivedbayes.dataset import Dataset, VariableSpec, derived_definition
from derivedbayes.distributions import log_mix
from derivedbayes.growth import DEFAULT_STANDARD
from derivedbayes.mcmc import ChainConfig, run_mcmc
from derivedbayes.models import (
    BernoulliModel,
    BivariateGroupModel,
    BsNmNModel,
    DutchBoysModel,
    UnivariateNormalModel,
    build_model,
    h1,
    h2,
    h_simple,
)
from derivedbayes.synthetic import BOYS_SPECS, SIM_SPECS, BoysGenParams, SimScenario, gen_boys_dataset, gen_sim_data

CFG = ChainConfig(n_chains=2, burn_in=500, draws=2000, seed=11)


@pytest.fixture(scope="module")
def appendix_complete():
    _, complete = gen_sim_data(SimScenario(), 123)
    return complete


def test_parameter_counts():
    assert len(UnivariateNormalModel("quadratic-interaction").params) == 6
    assert len(UnivariateNormalModel("simple").params) == 3
    assert len(BivariateGroupModel().params) == 7
    assert len(DutchBoysModel().params) == 14  # 13 plus the city probability
    assert len(BsNmNModel().params) == 11
    assert len(BernoulliModel().params) == 1
    with pytest.raises(KeyError):
        build_model("poisson")
    with pytest.raises(ValueError):
        UnivariateNormalModel("cubic")


def test_univariate_uninformative_covariate_gives_prior():
    rng = np.random.default_rng(0)
    ds = Dataset.from_arrays([VariableSpec("y"), VariableSpec("x", "explanatory")], {"y": rng.normal(size=100), "x": np.zeros(100)})
    d = run_mcmc(UnivariateNormalModel("simple"), ds, ChainConfig(n_chains=2, burn_in=200, draws=10_000, seed=1))
    q = [0.1, 0.5, 0.9]
    np.testing.assert_allclose(np.quantile(d["beta1"], q), stats.norm.ppf(q), atol=0.05)


def test_univariate_complete_data_oracle():
    # one n=1000 dataset has sampling SE ~0.09 for the contrast, so the
    # +-0.1 tolerance is checked on an average over 8 datasets
    model = UnivariateNormalModel("simple", y="y", x="group")
    means = []
    for seed in range(8):
        _, complete = gen_sim_data(SimScenario(), seed)
        d = run_mcmc(model, complete, ChainConfig(n_chains=1, burn_in=200, draws=2000, seed=seed))
        y, g = np.asarray(complete["y"]), np.asarray(complete["group"])
        # conjugate posterior mean of the coefficients at the posterior-mean variance
        X = np.column_stack([np.ones_like(g), g])
        s2 = np.mean(d["sigma"] ** 2)
        exact = np.linalg.solve(X.T @ X / s2 + np.eye(2), X.T @ y / s2)[1]
        assert abs(d["beta1"].mean() - exact) < 0.01
        means.append(d["beta1"].mean())
    assert abs(np.mean(means) - (-0.5)) < 0.1


def test_univariate_rejects_missing_outcome():
    ds = Dataset.from_arrays([VariableSpec("y"), VariableSpec("x", "explanatory")], {"y": [1.0, np.nan], "x": [0.0, 1.0]})
    with pytest.raises(ValueError):
        run_mcmc(UnivariateNormalModel(), ds, CFG)
    with pytest.raises(KeyError):
        run_mcmc(UnivariateNormalModel(y="bmi"), ds, CFG)


def test_bivariate_recovers_truth():
    observed, _ = gen_sim_data(SimScenario(), 5)
    d = run_mcmc(BivariateGroupModel(), observed, CFG)
    for name, truth in [("rho", 0.25), ("mu_z1_a", 1.0), ("mu_z2_a", 2.0), ("mu_z1_b", 1.5), ("mu_z2_b", 1.0)]:
        lo, hi = np.quantile(d[name], [0.025, 0.975])
        assert lo < truth < hi, name


def test_bivariate_accepts_rows_missing_both():
    ds = Dataset.from_arrays(SIM_SPECS, {"group": [0, 0, 1, 1], "z1": [np.nan, 1.0, 2.0, 1.2], "z2": [np.nan, 2.0, 0.5, 1.1]})
    d = run_mcmc(BivariateGroupModel(), ds, ChainConfig(n_chains=1, burn_in=50, draws=50, seed=1, keep_missing=True))
    assert any(n.startswith("z1[") for n in d.names) and any(n.startswith("z2[") for n in d.names)


def test_bivariate_full_mask_equals_complete_case(appendix_complete):
    ds = appendix_complete
    a = run_mcmc(BivariateGroupModel(), ds, ChainConfig(n_chains=2, burn_in=300, draws=3000, seed=1))
    b = run_mcmc(BivariateGroupModel(), ds.complete_cases(), ChainConfig(n_chains=2, burn_in=300, draws=3000, seed=2))
    for name in ("mu_z1_a", "rho", "sigma_z2"):
        # thin to reduce autocorrelation before the two-sample test
        assert stats.ks_2samp(a[name][::5], b[name][::5]).pvalue > 0.01, name


def test_dutchboys_zero_coefficients_give_constant_log_bmi():
    model = DutchBoysModel()
    theta = {n: 0.0 for n in model.param_names}
    theta.update(tau_z1=1e-8, tau_z2=1e-8, rho=0.0, pi=0.5)
    rng = np.random.default_rng(0)
    out = model.forward_sample(theta, {"city": np.zeros(10), "age": np.linspace(0, 20, 10)}, 10, rng)
    y = derived_definition("logbmi").apply(out)
    np.testing.assert_allclose(y, 2 * math.log(100), atol=1e-6)


def test_dutchboys_city_fraction():
    ds = gen_boys_dataset(BoysGenParams(), 3)
    d = run_mcmc(DutchBoysModel(), ds, CFG)
    frac = np.nanmean(np.asarray(ds["city"])[ds.observed("city")])
    assert abs(d["pi"].mean() - frac) < 0.02
    assert abs(frac - 0.09) < 0.03


def test_dutchboys_rejects_missing_age():
    ds = Dataset.from_arrays(BOYS_SPECS, {"age": [1.0, np.nan], "city": [0, 1], "hgt": [80.0, 90.0], "wgt": [10.0, 12.0]})
    with pytest.raises(ValueError, match="age"):
        run_mcmc(DutchBoysModel(), ds, CFG)


def test_bernoulli_rejects_non_binary():
    ds = Dataset.from_arrays([VariableSpec("y")], {"y": [0.0, 2.0]})
    with pytest.raises(ValueError):
        run_mcmc(BernoulliModel(), ds, CFG)


def _bsnmn_data(sex, ga, hc):
    specs = [VariableSpec("sex", kind="binary"), VariableSpec("ga"), VariableSpec("hc")]
    return Dataset.from_arrays(specs, {"sex": sex, "ga": ga, "hc": hc})


def test_bsnmn_rejects_all_missing_row():
    ds = _bsnmn_data([np.nan, 1], [np.nan, 39.0], [np.nan, 33.0])
    with pytest.raises(ValueError, match="all missing"):
        BsNmNModel().prepare(ds)


THETA = dict(mu=0.1, sigma=2.0, omega=-3.0, beta0=0.05, beta1=-0.45, beta2=0.4, beta3=-0.016, zeta1=1.1, zeta2=1.6, kappa=-3.0, w=0.85)


@given(hc=st.floats(25, 40), ga=st.floats(30, 43))
def test_bsnmn_known_sex_equals_degenerate_mixture(hc, ga):
    m = BsNmNModel()
    g = np.array([ga - 39.0])
    known = np.array([True])

    def ll(s):
        return m._hc_ll(THETA, np.array([hc]), g, np.array([float(s)]), known)[0]

    for s in (0, 1):
        assert ll(s) == pytest.approx(log_mix(float(s), ll(1), ll(0)), abs=1e-12)
    unknown = m._hc_ll(THETA, np.array([hc]), g, np.array([0.0]), np.array([False]))[0]
    assert unknown == pytest.approx(log_mix(0.5, ll(1), ll(0)), abs=1e-12)


def test_bsnmn_healthy_rate():
    m = BsNmNModel()
    theta = dict(mu=0.0, sigma=1.5, omega=0.0, beta0=0.0, beta1=-0.45, beta2=0.399, beta3=-0.016, zeta1=DEFAULT_STANDARD.sd, zeta2=1.0, kappa=-2.0, w=1.0)
    out = m.forward_sample(theta, {}, 200_000, np.random.default_rng(1))
    rate = derived_definition("microcephaly").apply(out).mean()
    assert abs(rate - 0.0228) < 0.003


def test_bsnmn_forward_sample_shapes():
    out = BsNmNModel().forward_sample(THETA, {}, 7, np.random.default_rng(0))
    assert set(out) == {"sex", "ga", "hc"}
    assert all(v.shape == (7,) for v in out.values())
    assert set(np.unique(out["sex"])) <= {0.0, 1.0}


def test_h_maps():
    zero = {n: 0.0 for n in BivariateGroupModel.MEANS}
    assert h_simple(zero) == 0.0
    truth = {"mu_z1_a": 1.0, "mu_z2_a": 2.0, "mu_z1_b": 1.5, "mu_z2_b": 1.0}
    assert h_simple(truth, "A-B") == pytest.approx(0.5)
    assert h_simple(truth, "B-A") == pytest.approx(-0.5)
    with pytest.raises(ValueError):
        h_simple(truth, "up")
    assert h1({"beta1": 0.5, "beta3": 0.0}, 11.3) == 0.5
    assert h1({"beta1": 0.0, "beta3": 0.1}, 7) == pytest.approx(0.7)
    assert h2({"gamma1": 0.0, "alpha1": 0.0, "gamma3": 0.0, "alpha3": 0.0}, 9) == 0.0
    assert h2({"gamma1": 0.1, "alpha1": 0.02, "gamma3": 0.0, "alpha3": 0.0}, 9) == pytest.approx(0.06)


@given(st.floats(-5, 5), st.floats(-5, 5), st.floats(0.01, 5))
def test_h1_ignores_other_coefficients(b0, b2, s):
    base = {"beta1": 0.3, "beta3": -0.02}
    assert h1({**base, "beta0": b0, "beta2": b2, "beta4": b0, "sigma": s}, 8.0) == h1(base, 8.0)


def test_h_maps_vectorize_over_draws():
    ds = gen_boys_dataset(BoysGenParams(), 4)
    d = run_mcmc(DutchBoysModel(), ds, ChainConfig(n_chains=1, burn_in=100, draws=50, seed=3))
    v = h2(d, 9.0)
    assert v.shape == (50,)
    assert v[3] == pytest.approx(h2(d.row(3), 9.0))
