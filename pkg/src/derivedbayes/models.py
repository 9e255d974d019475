"""The five concrete models and the closed-form estimand maps.

* univariate normal regression of the derived outcome (simple or
  quadratic-with-interaction mean),
* bivariate normal model of two sources with group-specific means,
* bivariate normal model of log height / log weight with city and age
  covariates and a Bernoulli model for city,
* Bernoulli model of a binary derived outcome with a Beta prior,
* BsNmN model: Bernoulli sex, skew-normal gestational age, two-component
  normal mixture for head circumference.

Models are plain classes (not closures) so they pickle into worker processes.
"""

from __future__ import annotations

import math

import numpy as np

from . import distributions as dist
from .distributions import LOG_2PI, draw_skew_normal, skew_normal_location
from .growth import GA_CENTER
from .mcmc import MissingBlock, ModelData, ModelGraph, Param

HC_INTERCEPT = 33.912


def _column(ds, name, *, allow_missing=True, what="column"):
    if name not in ds:
        raise KeyError(f"{what} {name!r} not in dataset")
    v = np.array(ds[name], dtype=float)
    obs = np.array(ds.observed(name), dtype=bool)
    if not allow_missing and not obs.all():
        raise ValueError(f"{what} {name!r} has missing values; apply a missing-data strategy first")
    return v, obs


def _draw_mvn_precision(rng, prec, rhs):
    """Draw from N(prec^{-1} rhs, prec^{-1})."""
    chol = np.linalg.cholesky(prec)
    mean = np.linalg.solve(chol.T, np.linalg.solve(chol, rhs))
    z = rng.standard_normal(len(rhs))
    return mean + np.linalg.solve(chol.T, z)


# ---------------------------------------------------------------------------


class UnivariateNormalModel(ModelGraph):
    """``y ~ Normal(linear predictor, sigma)`` with N(0,1) and Exp(1) priors."""

    def __init__(self, formula_mode: str = "simple", y: str = "y", x: str = "x", age: str = "age"):
        if formula_mode not in ("simple", "quadratic-interaction"):
            raise ValueError(f"unknown formula mode {formula_mode!r}")
        self.formula_mode = formula_mode
        self.y, self.x, self.age = y, x, age
        k = 2 if formula_mode == "simple" else 5
        self.betas = tuple(f"beta{i}" for i in range(k))
        self.params = tuple(Param(b, dist.normal(0, 1)) for b in self.betas) + (Param("sigma", dist.exponential(1.0)),)
        self.gibbs_blocks = (self.betas,)
        self.source_names = (y,)
        self.covariate_names = (x,) if formula_mode == "simple" else (x, age)
        self.name = f"univariate-{formula_mode}"

    def design(self, x, age=None):
        x = np.asarray(x, dtype=float)
        if self.formula_mode == "simple":
            return np.column_stack([np.ones_like(x), x])
        a = np.asarray(age, dtype=float)
        return np.column_stack([np.ones_like(x), x, a, x * a, a * a])

    def prepare(self, ds) -> ModelData:
        y, _ = _column(ds, self.y, allow_missing=False, what="derived outcome")
        x, _ = _column(ds, self.x, allow_missing=False, what="covariate")
        age = _column(ds, self.age, allow_missing=False, what="covariate")[0] if self.formula_mode != "simple" else None
        X = self.design(x, age)
        extra = {"XtX": X.T @ X, "Xty": X.T @ y, "yty": float(y @ y)}
        return ModelData({self.y: y, "x": x}, {self.y: np.ones(len(y), bool)}, [], len(y), extra)

    def terms(self):
        return {"y": self.betas + ("sigma",)}

    def term(self, name, theta, data):
        b = np.array([theta[k] for k in self.betas])
        e = data.extra
        rss = e["yty"] - 2.0 * b @ e["Xty"] + b @ e["XtX"] @ b
        s = theta["sigma"]
        return -data.n * (math.log(s) + 0.5 * LOG_2PI) - 0.5 * rss / (s * s)

    def gibbs(self, block, theta, data, rng):
        s2 = theta["sigma"] ** 2
        e = data.extra
        prec = e["XtX"] / s2 + np.eye(len(self.betas))
        b = _draw_mvn_precision(rng, prec, e["Xty"] / s2)
        return dict(zip(self.betas, b.tolist()))

    def forward_sample(self, theta, covariates, S, rng, data=None):
        X = self.design(covariates[self.x], covariates.get(self.age))
        b = np.array([theta[k] for k in self.betas])
        return {self.y: X @ b + theta["sigma"] * rng.standard_normal(S)}


# ---------------------------------------------------------------------------


class BivariateGroupModel(ModelGraph):
    """Two sources jointly normal with group-specific means and shared covariance.

    Group code 0 is group A, 1 is group B. Missing source cells are sampled
    exactly from their conditional normal given the other source.
    """

    name = "bivariate-group"
    MEANS = ("mu_z1_a", "mu_z2_a", "mu_z1_b", "mu_z2_b")

    def __init__(self, z1: str = "z1", z2: str = "z2", group: str = "group"):
        self.z1, self.z2, self.group = z1, z2, group
        self.params = tuple(Param(m, dist.normal(0, 1)) for m in self.MEANS) + (
            Param("sigma_z1", dist.exponential(1.0)),
            Param("sigma_z2", dist.exponential(1.0)),
            Param("rho", dist.uniform(-1.0, 1.0)),
        )
        self.gibbs_blocks = (self.MEANS,)
        self.source_names = (z1, z2)
        self.covariate_names = (group,)

    def prepare(self, ds) -> ModelData:
        z1, o1 = _column(ds, self.z1)
        z2, o2 = _column(ds, self.z2)
        g, _ = _column(ds, self.group, allow_missing=False, what="group column")
        if not np.all((g == 0) | (g == 1)):
            raise ValueError("group column must be coded 0 (A) / 1 (B)")
        missing = []
        if (~o1).any():
            missing.append(MissingBlock(self.z1, np.flatnonzero(~o1), exact=True))
        if (~o2).any():
            missing.append(MissingBlock(self.z2, np.flatnonzero(~o2), exact=True))
        data = ModelData({self.z1: z1, self.z2: z2, "group": g}, {self.z1: o1, self.z2: o2}, missing, len(g))
        data.extra["groups"] = [g == 0, g == 1]
        self.refresh(data)
        return data

    def refresh(self, data, column=None):
        z = np.column_stack([data.cols[self.z1], data.cols[self.z2]])
        stats = []
        for sel in data.extra["groups"]:
            zg = z[sel]
            stats.append((int(sel.sum()), zg.sum(axis=0), zg.T @ zg))
        data.extra["stats"] = stats

    def _cov(self, theta):
        s1, s2, r = theta["sigma_z1"], theta["sigma_z2"], theta["rho"]
        return np.array([[s1 * s1, r * s1 * s2], [r * s1 * s2, s2 * s2]])

    def _means(self, theta):
        return [np.array([theta["mu_z1_a"], theta["mu_z2_a"]]), np.array([theta["mu_z1_b"], theta["mu_z2_b"]])]

    def terms(self):
        return {"z": tuple(p.name for p in self.params)}

    def term(self, name, theta, data):
        cov = self._cov(theta)
        det = cov[0, 0] * cov[1, 1] - cov[0, 1] ** 2
        if det <= 0:
            return -math.inf
        inv = np.array([[cov[1, 1], -cov[0, 1]], [-cov[0, 1], cov[0, 0]]]) / det
        quad = 0.0
        for (n, s, ss), mu in zip(data.extra["stats"], self._means(theta)):
            if n == 0:
                continue
            m = ss - np.outer(mu, s) - np.outer(s, mu) + n * np.outer(mu, mu)
            quad += float(np.sum(inv * m))
        return -data.n * (LOG_2PI + 0.5 * math.log(det)) - 0.5 * quad

    def gibbs(self, block, theta, data, rng):
        cov = self._cov(theta)
        inv = np.linalg.inv(cov)
        out = {}
        for (n, s, _), keys in zip(data.extra["stats"], (self.MEANS[:2], self.MEANS[2:])):
            prec = n * inv + np.eye(2)
            out.update(zip(keys, _draw_mvn_precision(rng, prec, inv @ s).tolist()))
        return out

    def impute_exact(self, column, theta, data, rows, rng):
        cov = self._cov(theta)
        g = data.cols["group"][rows].astype(int)
        mus = np.array(self._means(theta))[g]
        if column == self.z1:
            m, sd = dist.mvn_conditional((0.0, 0.0), cov, 1, data.cols[self.z2][rows] - mus[:, 1])
            m = m + mus[:, 0]
        else:
            m, sd = dist.mvn_conditional((0.0, 0.0), cov, 0, data.cols[self.z1][rows] - mus[:, 0])
            m = m + mus[:, 1]
        return m + sd * rng.standard_normal(len(rows))

    def forward_sample(self, theta, covariates, S, rng, data=None):
        g = np.broadcast_to(np.asarray(covariates[self.group], dtype=int), (S,))
        mus = np.array(self._means(theta))[g]
        chol = np.linalg.cholesky(self._cov(theta))
        z = mus + rng.standard_normal((S, 2)) @ chol.T
        return {self.z1: z[:, 0], self.z2: z[:, 1]}


# ---------------------------------------------------------------------------


class DutchBoysModel(ModelGraph):
    """Bivariate normal model for (log height, log weight) given city and age."""

    name = "dutchboys"
    ALPHAS = tuple(f"alpha{i}" for i in range(5))
    GAMMAS = tuple(f"gamma{i}" for i in range(5))

    def __init__(self, height: str = "hgt", weight: str = "wgt", city: str = "city", age: str = "age"):
        self.height, self.weight, self.city, self.age = height, weight, city, age
        self.params = (
            tuple(Param(a, dist.normal(0, 1)) for a in self.ALPHAS + self.GAMMAS)
            + (
                Param("tau_z1", dist.exponential(1.0)),
                Param("tau_z2", dist.exponential(1.0)),
                Param("rho", dist.uniform(-1.0, 1.0)),
                Param("pi", dist.uniform(0.0, 1.0)),
            )
        )
        self.gibbs_blocks = (self.ALPHAS + self.GAMMAS, ("pi",))
        self.source_names = (height, weight)
        self.covariate_names = (city, age)

    @staticmethod
    def design(x, a):
        x = np.asarray(x, dtype=float)
        a = np.asarray(a, dtype=float)
        return np.column_stack([np.ones_like(a), x, a, x * a, a * a])

    def prepare(self, ds) -> ModelData:
        h, oh = _column(ds, self.height)
        w, ow = _column(ds, self.weight)
        x, ox = _column(ds, self.city)
        a, oa = _column(ds, self.age)
        if not oa.all():
            raise ValueError("age must be fully observed for the dutchboys model")
        if np.any(h[oh] <= 0) or np.any(w[ow] <= 0):
            raise ValueError("height and weight must be positive")
        l1 = np.where(oh, np.log(np.where(oh, h, 1.0)), np.nan)
        l2 = np.where(ow, np.log(np.where(ow, w, 1.0)), np.nan)
        missing = []
        if (~ox).any():
            missing.append(MissingBlock("city", np.flatnonzero(~ox), kind="binary"))
        if (~oh).any():
            missing.append(MissingBlock("l1", np.flatnonzero(~oh), exact=True))
        if (~ow).any():
            missing.append(MissingBlock("l2", np.flatnonzero(~ow), exact=True))
        data = ModelData({"l1": l1, "l2": l2, "city": x, "age": a}, {"l1": oh, "l2": ow, "city": ox}, missing, len(a))
        return data

    def refresh(self, data, column=None):
        X = self.design(data.cols["city"], data.cols["age"])
        Y = np.column_stack([data.cols["l1"], data.cols["l2"]])
        data.extra.update(X=X, Y=Y, XtX=X.T @ X, XtY=X.T @ Y, YtY=Y.T @ Y, ncity=float(data.cols["city"].sum()))

    def _B(self, theta):
        return np.array([[theta[a] for a in self.ALPHAS], [theta[g] for g in self.GAMMAS]]).T

    def _cov(self, theta):
        s1, s2, r = theta["tau_z1"], theta["tau_z2"], theta["rho"]
        return np.array([[s1 * s1, r * s1 * s2], [r * s1 * s2, s2 * s2]])

    def terms(self):
        return {"z": self.ALPHAS + self.GAMMAS + ("tau_z1", "tau_z2", "rho"), "city": ("pi",)}

    def term(self, name, theta, data):
        e = data.extra
        if name == "city":
            p, k = theta["pi"], e["ncity"]
            return k * math.log(p) + (data.n - k) * math.log1p(-p)
        cov = self._cov(theta)
        det = cov[0, 0] * cov[1, 1] - cov[0, 1] ** 2
        if det <= 0:
            return -math.inf
        inv = np.array([[cov[1, 1], -cov[0, 1]], [-cov[0, 1], cov[0, 0]]]) / det
        B = self._B(theta)
        btxy = B.T @ e["XtY"]
        ete = e["YtY"] - btxy - btxy.T + B.T @ e["XtX"] @ B
        return -data.n * (LOG_2PI + 0.5 * math.log(det)) - 0.5 * float(np.sum(inv * ete))

    def gibbs(self, block, theta, data, rng):
        e = data.extra
        if block == 1:
            k = e["ncity"]
            return {"pi": float(rng.beta(1.0 + k, 1.0 + data.n - k))}
        inv = np.linalg.inv(self._cov(theta))
        prec = np.kron(inv, e["XtX"]) + np.eye(10)
        rhs = (e["XtY"] @ inv).T.ravel()
        b = _draw_mvn_precision(rng, prec, rhs)
        return dict(zip(self.ALPHAS + self.GAMMAS, b.tolist()))

    def row_loglik(self, column, theta, data, rows):
        # only the city indicator is updated by this route
        X = self.design(data.cols["city"][rows], data.cols["age"][rows])
        mu = X @ self._B(theta)
        z = np.column_stack([data.cols["l1"][rows], data.cols["l2"][rows]])
        ll = _bvn_rows(z - mu, self._cov(theta))
        p = theta["pi"]
        x = data.cols["city"][rows]
        return ll + np.where(x == 1, math.log(p), math.log1p(-p))

    def impute_exact(self, column, theta, data, rows, rng):
        X = self.design(data.cols["city"][rows], data.cols["age"][rows])
        mu = X @ self._B(theta)
        cov = self._cov(theta)
        if column == "l1":
            m, sd = dist.mvn_conditional((0.0, 0.0), cov, 1, data.cols["l2"][rows] - mu[:, 1])
            m = m + mu[:, 0]
        else:
            m, sd = dist.mvn_conditional((0.0, 0.0), cov, 0, data.cols["l1"][rows] - mu[:, 0])
            m = m + mu[:, 1]
        return m + sd * rng.standard_normal(len(rows))

    def forward_sample(self, theta, covariates, S, rng, data=None):
        x = np.broadcast_to(np.asarray(covariates[self.city], dtype=float), (S,))
        a = np.broadcast_to(np.asarray(covariates[self.age], dtype=float), (S,))
        mu = self.design(x, a) @ self._B(theta)
        chol = np.linalg.cholesky(self._cov(theta))
        z = mu + rng.standard_normal((S, 2)) @ chol.T
        return {self.height: np.exp(z[:, 0]), self.weight: np.exp(z[:, 1])}


def _bvn_rows(resid, cov):
    s1, s2 = math.sqrt(cov[0, 0]), math.sqrt(cov[1, 1])
    r = cov[0, 1] / (s1 * s2)
    u, v = resid[:, 0] / s1, resid[:, 1] / s2
    omr = 1.0 - r * r
    return -LOG_2PI - math.log(s1 * s2) - 0.5 * math.log(omr) - 0.5 * (u * u - 2 * r * u * v + v * v) / omr


# ---------------------------------------------------------------------------


class BernoulliModel(ModelGraph):
    """``y ~ Bernoulli(theta)``, ``theta ~ Beta(a, b)``; conjugate updates."""

    name = "bernoulli"

    def __init__(self, a: float = 1.26, b: float = 2.32, y: str = "y"):
        self.a, self.b, self.y = float(a), float(b), y
        self.params = (Param("theta", dist.beta(a, b)),)
        self.gibbs_blocks = (("theta",),)
        self.source_names = (y,)
        self.covariate_names = ()

    def prepare(self, ds) -> ModelData:
        if ds.n == 0 or self.y not in ds:
            y = np.zeros(0)
        else:
            y, _ = _column(ds, self.y, allow_missing=False, what="binary outcome")
        if not np.all((y == 0) | (y == 1)):
            raise ValueError(f"outcome {self.y!r} must be binary")
        return ModelData({self.y: y}, {self.y: np.ones(len(y), bool)}, [], len(y), {"k": float(y.sum())})

    def terms(self):
        return {"y": ("theta",)}

    def term(self, name, theta, data):
        t, k = theta["theta"], data.extra["k"]
        return k * math.log(t) + (data.n - k) * math.log1p(-t)

    def gibbs(self, block, theta, data, rng):
        k = data.extra["k"]
        return {"theta": float(rng.beta(self.a + k, self.b + data.n - k))}

    def forward_sample(self, theta, covariates, S, rng, data=None):
        return {self.y: (rng.random(S) < theta["theta"]).astype(float)}

    def exact_mean(self, theta, definition):
        """E(f(Y)) in closed form when f is the identity on the outcome."""
        if definition.name == "identity" and definition.source_names == (self.y,):
            return theta["theta"]
        return None


# ---------------------------------------------------------------------------


class BsNmNModel(ModelGraph):
    """Bernoulli sex / skew-normal gestational age / mixture-normal head size.

    Gestational age enters as weeks minus 39. Head circumference given sex and
    age is a two-component normal mixture sharing the slopes; the non-affected
    intercept is ``33.912 + beta0`` and the affected one ``33.912 + kappa``.
    A missing sex is summed out of the likelihood with probability 1/2 each;
    missing age cells take Metropolis steps and missing head circumferences
    are drawn exactly from their predictive mixture.
    """

    name = "bsnmn"
    ORDER = ("mu", "sigma", "omega", "beta0", "beta1", "beta2", "beta3", "zeta1", "zeta2", "kappa", "w")
    joint_blocks = (ORDER[:3], ORDER[3:])

    def __init__(self, sex: str = "sex", ga: str = "ga", hc: str = "hc"):
        self.sex, self.ga, self.hc = sex, ga, hc
        priors = {
            "mu": dist.normal(0, 0.1),
            "sigma": dist.inverse_gamma(2, 2),
            "omega": dist.normal(0, 2),
            "beta0": dist.normal(0, 0.1),
            "beta1": dist.normal(-0.450, 0.1),
            "beta2": dist.normal(0.399, 0.1),
            "beta3": dist.normal(-0.016, 0.1),
            "zeta1": dist.inverse_gamma(2, 2),
            "zeta2": dist.inverse_gamma(2, 2),
            "kappa": dist.truncated_normal(-2, 2, upper=-1),
            "w": dist.uniform(0, 1),
        }
        self.params = tuple(Param(n, priors[n]) for n in self.ORDER)
        self.source_names = (sex, ga, hc)
        self.covariate_names = ()

    def prepare(self, ds) -> ModelData:
        s, os_ = _column(ds, self.sex)
        ga, og = _column(ds, self.ga)
        hc, oh = _column(ds, self.hc)
        if np.any(~os_ & ~og & ~oh):
            raise ValueError("rows with sex, gestational age and head circumference all missing are not allowed")
        if not np.all((s[os_] == 0) | (s[os_] == 1)):
            raise ValueError("sex must be coded 0/1")
        g = ga - GA_CENTER
        missing = []
        if (~og).any():
            missing.append(MissingBlock("g", np.flatnonzero(~og)))
        if (~oh).any():
            missing.append(MissingBlock("hc", np.flatnonzero(~oh), exact=True))
        s = np.where(os_, s, 0.0)
        extra = {"sex_known": os_, "known": np.flatnonzero(os_), "unknown": np.flatnonzero(~os_)}
        return ModelData({"sex": s, "g": g, "hc": hc}, {"sex": os_, "g": og, "hc": oh}, missing, len(s), extra)

    def terms(self):
        return {"ga": ("mu", "sigma", "omega"), "hc": self.ORDER[3:]}

    def _ga_ll(self, theta, g):
        return dist.skew_normal_logpdf(g, theta["mu"], theta["sigma"], theta["omega"])

    def _hc_ll(self, theta, hc, g, sex, sex_known):
        b1, z1, z2, w = theta["beta1"], theta["zeta1"], theta["zeta2"], theta["w"]
        trend = HC_INTERCEPT + theta["beta2"] * g + theta["beta3"] * g * g
        m1 = trend + theta["beta0"]
        m2 = trend + theta["kappa"]
        c1 = -0.5 * LOG_2PI - math.log(z1) + math.log(w)
        c2 = -0.5 * LOG_2PI - math.log(z2) + math.log1p(-w)
        if sex_known.all():
            return _mix_rows(hc, m1 + b1 * sex, m2 + b1 * sex, c1, c2, z1, z2)
        out = np.empty(len(hc))
        k = sex_known
        out[k] = _mix_rows(hc[k], m1[k] + b1 * sex[k], m2[k] + b1 * sex[k], c1, c2, z1, z2)
        u = ~k
        a = _mix_rows(hc[u], m1[u] + b1, m2[u] + b1, c1, c2, z1, z2)
        b = _mix_rows(hc[u], m1[u], m2[u], c1, c2, z1, z2)
        out[u] = np.logaddexp(a, b) - math.log(2.0)
        return out

    def term(self, name, theta, data):
        c = data.cols
        if name == "ga":
            return float(np.sum(self._ga_ll(theta, c["g"])))
        return float(np.sum(self._hc_ll(theta, c["hc"], c["g"], c["sex"], data.extra["sex_known"])))

    def row_loglik(self, column, theta, data, rows):
        c = data.cols
        g = c["g"][rows]
        return self._ga_ll(theta, g) + self._hc_ll(theta, c["hc"][rows], g, c["sex"][rows], data.extra["sex_known"][rows])

    def impute_exact(self, column, theta, data, rows, rng):
        c = data.cols
        known = data.extra["sex_known"][rows]
        sex = np.where(known, c["sex"][rows], (rng.random(len(rows)) < 0.5).astype(float))
        return self._draw_hc(theta, sex, c["g"][rows], rng)

    def _draw_hc(self, theta, sex, g, rng):
        n = len(g)
        trend = HC_INTERCEPT + theta["beta1"] * sex + theta["beta2"] * g + theta["beta3"] * g * g
        healthy = rng.random(n) < theta["w"]
        eps = rng.standard_normal(n)
        return np.where(healthy, trend + theta["beta0"] + theta["zeta1"] * eps, trend + theta["kappa"] + theta["zeta2"] * eps)

    def forward_sample(self, theta, covariates, S, rng, data=None):
        sex = (rng.random(S) < 0.5).astype(float)
        g = draw_skew_normal(theta["mu"], theta["sigma"], theta["omega"], rng, S)
        hc = self._draw_hc(theta, sex, g, rng)
        return {self.sex: sex, self.ga: g + GA_CENTER, self.hc: hc}


def _mix_rows(hc, m1, m2, c1, c2, z1, z2):
    r1 = (hc - m1) / z1
    r2 = (hc - m2) / z2
    return np.logaddexp(c1 - 0.5 * r1 * r1, c2 - 0.5 * r2 * r2)


# ---------------------------------------------------------------------------
# builders


def build_univariate_model(formula_mode: str = "simple", **columns) -> UnivariateNormalModel:
    return UnivariateNormalModel(formula_mode, **columns)


def build_bivariate_group_model(**columns) -> BivariateGroupModel:
    return BivariateGroupModel(**columns)


def build_dutchboys_model(**columns) -> DutchBoysModel:
    return DutchBoysModel(**columns)


def build_bernoulli_model(a: float = 1.26, b: float = 2.32, **columns) -> BernoulliModel:
    return BernoulliModel(a, b, **columns)


def build_bsnmn_model(**columns) -> BsNmNModel:
    return BsNmNModel(**columns)


MODEL_BUILDERS = {
    "univariate": build_univariate_model,
    "bivariate-group": build_bivariate_group_model,
    "dutchboys": build_dutchboys_model,
    "bernoulli": build_bernoulli_model,
    "bsnmn": build_bsnmn_model,
}


def build_model(name: str, **kwargs) -> ModelGraph:
    try:
        return MODEL_BUILDERS[name](**kwargs)
    except KeyError:
        raise KeyError(f"unknown model {name!r}; known: {sorted(MODEL_BUILDERS)}") from None


def prior_draws(model: ModelGraph, n: int, rng) -> dict[str, np.ndarray]:
    """Independent draws from each parameter's prior."""
    return {p.name: np.asarray(dist.draw(p.prior, rng, n), dtype=float) for p in model.params}


# ---------------------------------------------------------------------------
# closed-form estimand maps; ``phi`` may be a dict of floats or of arrays
# (e.g. a Draws object), so each works per draw and vectorized alike


def h_simple(phi, orientation: str = "A-B"):
    """Difference in mean of ``z1 + z2`` between groups.

    ``"A-B"`` is the orientation written for the illustrative example;
    ``"B-A"`` matches the simulation study, where the truth is -0.5.
    """
    a = phi["mu_z1_a"] + phi["mu_z2_a"]
    b = phi["mu_z1_b"] + phi["mu_z2_b"]
    if orientation == "A-B":
        return a - b
    if orientation == "B-A":
        return b - a
    raise ValueError(f"orientation must be 'A-B' or 'B-A', got {orientation!r}")


def h1(phi, mean_age: float):
    """City effect on log BMI averaged over age, univariate model."""
    return phi["beta1"] + phi["beta3"] * mean_age


def h2(phi, mean_age: float):
    """City effect on log BMI averaged over age, from the bivariate model.

    log BMI = log w - 2 log h + 2 log 100, so the effect is
    gamma1 - 2 alpha1 + (gamma3 - 2 alpha3) * mean age.
    """
    return phi["gamma1"] - 2.0 * phi["alpha1"] + (phi["gamma3"] - 2.0 * phi["alpha3"]) * mean_age
