"""Experiment harness: gamma and NB toys, a small Bernoulli VAE, and the unbiasedness suite.

The toys fit q to a known posterior p by stochastic gradient ascent on the
ELBO.  Each iteration draws ``variance_probes`` independent one-sample
gradient estimates, records their unbiased variance and steps along the last
one only, so the variance trace and the optimization path come from the
same draws.
"""
from __future__ import annotations

import copy
import csv
import math
import time
import zlib
from dataclasses import asdict, dataclass, field

import numpy as np

from . import special
from .distributions import FAMILIES, Gamma, NegativeBinomial, _REGISTRY
from .estimators import (
    IntegrandSpec,
    bernoulli_flip_differences,
    elbo_gradient_sticking,
    go_gradient,
    naive_flip_differences,
    reinforce_gradient,
    rep_gradient,
)


class ConfigError(ValueError):
    pass


# -- configuration -----------------------------------------------------------

EXPERIMENTS = ("gamma_toy", "nb_toy", "bernoulli_vae", "unbiasedness_suite")

_DEFAULTS = {
    "gamma_toy": {
        "target_params": [1.0, 0.5],
        "init_params": [2.0, 2.0],
        "optimizer": {"learning_rate": 0.01},
        "iterations": 5000,
        "estimators": ["go", "reinforce"],
        "options": {},
    },
    "nb_toy": {
        "target_params": [10.0, 0.2],
        "init_params": [1.0, 0.5],
        "optimizer": {"learning_rate": 0.1},
        "iterations": 5000,
        "estimators": ["go", "reinforce", "reinforce2"],
        "options": {},
    },
    "bernoulli_vae": {
        "target_params": [],
        "init_params": [],
        "optimizer": {"learning_rate": 0.001},
        "iterations": 1000,
        "estimators": ["go"],
        "options": {
            "latent_dim": 8,
            "data_dim": 16,
            "n_data": 64,
            "prior_p": 0.5,
            "checkpoint_every": 100,
            "oracle_probes": 10000,
            "oracle_chunk": 500,
            "init_scale": 0.1,
        },
    },
    "unbiasedness_suite": {
        "target_params": [],
        "init_params": [],
        "optimizer": {},
        "iterations": 1,
        "estimators": ["go", "reinforce", "rep"],
        "options": {"n_samples": 200000, "families": list(FAMILIES), "shift": 0.5},
    },
}

_TOY_ESTIMATORS = {"gamma_toy": ("go", "reinforce"), "nb_toy": ("go", "reinforce", "reinforce2"),
                   "bernoulli_vae": ("go",), "unbiasedness_suite": ("go", "reinforce", "rep")}


@dataclass
class OptimizerConfig:
    kind: str = "adam"
    learning_rate: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


@dataclass
class ExperimentConfig:
    experiment: str
    target_params: list = field(default_factory=list)
    init_params: list = field(default_factory=list)
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    iterations: int = 1
    variance_probes: int = 20
    seed: int = 0
    estimators: list = field(default_factory=list)
    record_wall_clock: bool = False
    options: dict = field(default_factory=dict)

    def validate(self):
        if self.experiment not in EXPERIMENTS:
            raise ConfigError(f"experiment: unknown tag {self.experiment!r}")
        opt = self.optimizer
        if opt.kind not in ("adam", "sgd"):
            raise ConfigError(f"optimizer.kind: expected 'adam' or 'sgd', got {opt.kind!r}")
        if not (isinstance(opt.learning_rate, (int, float)) and opt.learning_rate > 0):
            raise ConfigError("optimizer.learning_rate must be > 0")
        if not (0 <= opt.beta1 < 1 and 0 <= opt.beta2 < 1 and opt.eps > 0):
            raise ConfigError("optimizer.beta1/beta2 must lie in [0, 1) and eps must be > 0")
        if not isinstance(self.iterations, int) or isinstance(self.iterations, bool) or self.iterations < 1:
            raise ConfigError("iterations must be an integer >= 1")
        if not isinstance(self.variance_probes, int) or self.variance_probes < 2:
            raise ConfigError("variance_probes must be an integer >= 2")
        if not isinstance(self.seed, int) or not 0 <= self.seed < 2**64:
            raise ConfigError("seed must be an integer in [0, 2^64)")
        allowed = _TOY_ESTIMATORS[self.experiment]
        if not self.estimators:
            raise ConfigError("estimators must be a non-empty list")
        for tag in self.estimators:
            if tag not in allowed:
                raise ConfigError(f"estimators: {tag!r} not available for {self.experiment} (choose from {allowed})")
        if self.experiment in ("gamma_toy", "nb_toy"):
            for name in ("target_params", "init_params"):
                vals = getattr(self, name)
                if len(vals) != 2 or not all(isinstance(v, (int, float)) for v in vals):
                    raise ConfigError(f"{name} must hold two numbers")
                if not all(v > 0 for v in vals):
                    raise ConfigError(f"{name} must be positive")
                if self.experiment == "nb_toy" and not vals[1] < 1:
                    raise ConfigError(f"{name}: NB probability must be < 1")
        if self.experiment == "bernoulli_vae":
            o = self.options
            for key in ("latent_dim", "data_dim", "n_data", "checkpoint_every", "oracle_probes", "oracle_chunk"):
                if not isinstance(o[key], int) or o[key] < 1:
                    raise ConfigError(f"options.{key} must be a positive integer")
            if o["latent_dim"] > 16:
                raise ConfigError("options.latent_dim must be <= 16 (enumeration oracle)")
            if o["oracle_probes"] < 2:
                raise ConfigError("options.oracle_probes must be >= 2")
            if not 0 < o["prior_p"] < 1:
                raise ConfigError("options.prior_p must lie in (0, 1)")
        if self.experiment == "unbiasedness_suite":
            o = self.options
            if not isinstance(o["n_samples"], int) or o["n_samples"] < 2:
                raise ConfigError("options.n_samples must be an integer >= 2")
            for fam in o["families"]:
                if fam not in _REGISTRY:
                    raise ConfigError(f"options.families: unknown family {fam!r}")
        return self

    def to_dict(self):
        return asdict(self)


def default_config_dict(experiment):
    if experiment not in _DEFAULTS:
        raise ConfigError(f"experiment: unknown tag {experiment!r}")
    base = {
        "experiment": experiment,
        "optimizer": asdict(OptimizerConfig()),
        "variance_probes": 20,
        "seed": 0,
        "record_wall_clock": False,
    }
    d = copy.deepcopy(_DEFAULTS[experiment])
    base["optimizer"].update(d.pop("optimizer"))
    base.update(d)
    return base


def _merge(base, update, path=""):
    for key, val in update.items():
        where = f"{path}{key}"
        if key not in base:
            raise ConfigError(f"unknown config key {where!r}")
        if isinstance(base[key], dict):
            if not isinstance(val, dict):
                raise ConfigError(f"{where} must be a table")
            _merge(base[key], val, where + ".")
        else:
            base[key] = val
    return base


def build_config(raw: dict, experiment=None) -> ExperimentConfig:
    """Merge ``raw`` over the defaults of its experiment, rejecting unknown keys."""
    raw = copy.deepcopy(raw)
    exp = raw.get("experiment", experiment)
    if experiment is not None and raw.get("experiment", experiment) != experiment:
        raise ConfigError(f"experiment: config says {raw['experiment']!r}, command runs {experiment!r}")
    if exp is None:
        raise ConfigError("experiment: missing")
    merged = _merge(default_config_dict(exp), raw)
    merged["optimizer"] = OptimizerConfig(**merged["optimizer"])
    try:
        return ExperimentConfig(**merged).validate()
    except TypeError as e:
        raise ConfigError(f"wrongly typed config value ({e})") from None


# -- records -----------------------------------------------------------------


@dataclass
class TraceRecord:
    iteration: int
    param_values: np.ndarray
    elbo_estimate: float
    grad_variance: np.ndarray
    wall_clock_ms: float = 0.0


@dataclass
class ExperimentResult:
    traces: dict
    summary: dict


def trace_header(k):
    return (["iteration"] + [f"param_{i}" for i in range(k)] + ["elbo"]
            + [f"gradvar_{i}" for i in range(k)] + ["wall_ms"])


def write_trace_csv(records, path):
    """One row per iteration; floats use repr so reruns are byte-identical."""
    k = len(records[0].param_values) if records else 0
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(trace_header(k))
        for r in records:
            w.writerow([r.iteration] + [repr(float(v)) for v in r.param_values] + [repr(float(r.elbo_estimate))]
                       + [repr(float(v)) for v in r.grad_variance] + [repr(float(r.wall_clock_ms))])


def first_nonfinite(records):
    """Iteration of the first record holding NaN/Inf, or None."""
    for r in records:
        vals = np.concatenate([np.ravel(r.param_values), [r.elbo_estimate], np.ravel(r.grad_variance)])
        if not np.all(np.isfinite(vals)):
            return r.iteration
    return None


# -- optimizers --------------------------------------------------------------


class Adam:
    """Adam for gradient ascent."""

    def __init__(self, x0, cfg: OptimizerConfig):
        self.x = np.array(x0, dtype=float)
        self.cfg = cfg
        self.m = np.zeros_like(self.x)
        self.v = np.zeros_like(self.x)
        self.t = 0

    def step(self, g):
        c = self.cfg
        self.t += 1
        if c.kind == "sgd":
            self.x = self.x + c.learning_rate * g
            return self.x
        self.m = c.beta1 * self.m + (1 - c.beta1) * g
        self.v = c.beta2 * self.v + (1 - c.beta2) * g * g
        mhat = self.m / (1 - c.beta1**self.t)
        vhat = self.v / (1 - c.beta2**self.t)
        self.x = self.x + c.learning_rate * mhat / (np.sqrt(vhat) + c.eps)
        return self.x


def softplus(u):
    return np.logaddexp(0.0, u)


def softplus_inv(x):
    x = np.asarray(x, dtype=float)
    return x + np.log(-np.expm1(-x))


def sigmoid(u):
    return 0.5 * (1.0 + np.tanh(0.5 * np.asarray(u, dtype=float)))


def logit(p):
    p = np.asarray(p, dtype=float)
    return np.log(p) - np.log1p(-p)


def _stream(seed, tag):
    return np.random.default_rng([seed, zlib.crc32(tag.encode())])


# -- KL evaluators -------------------------------------------------------------


def gamma_kl(a, b, a0, b0):
    """KL(Gam(a, b) || Gam(a0, b0)) with shape/rate parameters."""
    return float((a - a0) * special.digamma(a) - special.log_gamma(a) + special.log_gamma(a0)
                 + a0 * (math.log(b) - math.log(b0)) + a * (b0 - b) / b)


def nb_kl(r, p, r0, p0, tail=1e-12):
    """KL(NB(r, p) || NB(r0, p0)) by summation until q's remaining mass is below ``tail``."""
    q, p_ = NegativeBinomial(r, p), NegativeBinomial(r0, p0)
    upper = max(64, int(4 * r * p / (1 - p)) + 64)
    while True:
        y = np.arange(upper, dtype=float)
        lq = q.log_density(y)
        mass = np.exp(lq)
        if 1.0 - mass.sum() < tail and mass[-1] < tail:
            break
        upper *= 2
    terms = np.where(mass > 0, mass * (lq - p_.log_density(y)), 0.0)
    return float(terms.sum())


# -- toys ----------------------------------------------------------------------


class _Toy:
    """Shared loop for the one-dimensional toys."""

    family = None
    links = None

    def __init__(self, cfg: ExperimentConfig):
        self.cfg = cfg
        self.target = self.family(*cfg.target_params)
        self.log_p = IntegrandSpec(eval=lambda z: self.target.log_density(z[:, 0]),
                                   grad=self._log_p_grad())

    def _log_p_grad(self):
        return None

    def to_natural(self, u):
        raise NotImplementedError

    def link_grad(self, u):
        raise NotImplementedError

    def to_unconstrained(self, theta):
        raise NotImplementedError

    def kl(self, theta):
        raise NotImplementedError

    def probes(self, theta, tag, m, rng):
        """(m, P) independent probe gradients wrt the natural parameters."""
        q = [self.family(*theta)]
        if tag == "go":
            return elbo_gradient_sticking(q, self.log_p, m, rng, "go").samples
        if tag == "reinforce":
            return elbo_gradient_sticking(q, self.log_p, m, rng, "reinforce").samples
        if tag == "reinforce2":
            s = elbo_gradient_sticking(q, self.log_p, 2 * m, rng, "reinforce").samples
            return 0.5 * (s[0::2] + s[1::2])
        raise ConfigError(f"unknown estimator {tag!r}")

    def run_one(self, tag):
        cfg = self.cfg
        rng = _stream(cfg.seed, tag)
        opt = Adam(self.to_unconstrained(cfg.init_params), cfg.optimizer)
        records = []
        t0 = time.perf_counter()
        for it in range(cfg.iterations):
            theta = self.to_natural(opt.x)
            with np.errstate(all="ignore"):
                g = self.probes(theta, tag, cfg.variance_probes, rng)
                var = g.var(axis=0, ddof=1)
                opt.step(g[-1] * self.link_grad(opt.x))
                theta_new = self.to_natural(opt.x)
                try:
                    elbo = -self.kl(theta_new)
                except (ValueError, OverflowError):
                    elbo = float("nan")
            ms = (time.perf_counter() - t0) * 1e3 if cfg.record_wall_clock else 0.0
            records.append(TraceRecord(it, np.asarray(theta_new, dtype=float), elbo, var, ms))
            if not np.all(np.isfinite(opt.x)):
                break
        return records

    def run(self):
        traces = {tag: self.run_one(tag) for tag in self.cfg.estimators}
        summary = {}
        for tag, recs in traces.items():
            v = np.array([r.grad_variance for r in recs])
            summary[tag] = {
                "final_params": [float(x) for x in recs[-1].param_values],
                "final_kl": float(-recs[-1].elbo_estimate),
                "median_grad_variance": [float(x) for x in np.median(v, axis=0)],
                "iterations_run": len(recs),
            }
        return ExperimentResult(traces, summary)


class GammaToy(_Toy):
    family = Gamma

    def _log_p_grad(self):
        return lambda z: self.target.grad_log_density(z[:, :1])

    def to_natural(self, u):
        return softplus(u)

    def to_unconstrained(self, theta):
        return softplus_inv(theta)

    def link_grad(self, u):
        return sigmoid(u)

    def kl(self, theta):
        return gamma_kl(theta[0], theta[1], *self.cfg.target_params)


class NBToy(_Toy):
    family = NegativeBinomial

    def to_natural(self, u):
        return np.array([softplus(u[0]), sigmoid(u[1])])

    def to_unconstrained(self, theta):
        return np.array([softplus_inv(theta[0]), logit(theta[1])])

    def link_grad(self, u):
        s = sigmoid(u[1])
        return np.array([sigmoid(u[0]), s * (1 - s)])

    def kl(self, theta):
        return nb_kl(theta[0], theta[1], *self.cfg.target_params)


def _check_experiment(cfg, name):
    if cfg.experiment != name:
        raise ConfigError(f"experiment: expected {name!r}, got {cfg.experiment!r}")


def run_gamma_toy(cfg: ExperimentConfig) -> ExperimentResult:
    _check_experiment(cfg, "gamma_toy")
    return GammaToy(cfg).run()


def run_nb_toy(cfg: ExperimentConfig) -> ExperimentResult:
    _check_experiment(cfg, "nb_toy")
    return NBToy(cfg).run()


def toy_probe_gradients(cfg: ExperimentConfig, theta, tag, m, rng):
    """``m`` one-sample ELBO gradients at natural parameters ``theta``."""
    toy = {"gamma_toy": GammaToy, "nb_toy": NBToy}[cfg.experiment](cfg)
    return toy.probes(np.asarray(theta, dtype=float), tag, m, rng)


# -- Bernoulli VAE -------------------------------------------------------------


def _softplus(h):
    return np.maximum(h, 0.0) + np.log1p(np.exp(-np.abs(h)))


def _log_sigmoid(h):
    return -_softplus(-h)


class VAEIntegrand:
    """log p(x, z) - log q(z | x) at frozen encoder probabilities, one row per datum.

    Decoder: x ~ Bern(sigmoid(W^T z + b)); prior z ~ Bern(prior_p).  Flipping
    z_v shifts the decoder pre-activation by a_v W[v, :], so all single-bit
    flips are evaluated together.
    """

    def __init__(self, x, W, b, q_probs, prior_p):
        self.x, self.W, self.b = x, W, b
        self.log_q1 = np.log(q_probs)
        self.log_q0 = np.log1p(-q_probs)
        self.lp1, self.lp0 = math.log(prior_p), math.log1p(-prior_p)

    def _lik(self, h, x):
        # x log sigmoid(h) + (1 - x) log sigmoid(-h) = x h - softplus(h)
        return (x * h - _softplus(h)).sum(axis=-1)

    def _coord(self, z):
        return (z * (self.lp1 - self.log_q1) + (1 - z) * (self.lp0 - self.log_q0)).sum(axis=-1)

    def eval(self, z):
        return self._lik(z @ self.W + self.b, self.x) + self._coord(z)

    def flip_values(self, z):
        a = 1.0 - 2.0 * z
        h = z @ self.W + self.b
        lik = self._lik(h[:, None, :] + a[:, :, None] * self.W[None, :, :], self.x[:, None, :])
        per = z * (self.lp1 - self.log_q1) + (1 - z) * (self.lp0 - self.log_q0)
        per_flip = (1 - z) * (self.lp1 - self.log_q1) + z * (self.lp0 - self.log_q0)
        return lik + per.sum(axis=1, keepdims=True) - per + per_flip


class BernoulliVAE:
    def __init__(self, cfg: ExperimentConfig):
        o = cfg.options
        self.cfg = cfg
        self.K, self.D, self.N = o["latent_dim"], o["data_dim"], o["n_data"]
        self.prior_p = o["prior_p"]
        data_rng = _stream(cfg.seed, "data")
        W_true = 2.0 * data_rng.normal(size=(self.K, self.D))
        b_true = data_rng.normal(size=self.D)
        z_true = (data_rng.random((self.N, self.K)) < self.prior_p).astype(float)
        self.x = (data_rng.random((self.N, self.D)) < sigmoid(z_true @ W_true + b_true)).astype(float)
        init_rng = _stream(cfg.seed, "init")
        s = o["init_scale"]
        # phi = encoder (U: D x K, c: K); theta = decoder (W: K x D, b: D)
        self.phi = np.concatenate([s * init_rng.normal(size=self.D * self.K), np.zeros(self.K)])
        self.theta = np.concatenate([s * init_rng.normal(size=self.K * self.D), np.zeros(self.D)])
        self.codes = None

    def unpack_phi(self, phi):
        return phi[: self.D * self.K].reshape(self.D, self.K), phi[self.D * self.K:]

    def unpack_theta(self, theta):
        return theta[: self.K * self.D].reshape(self.K, self.D), theta[self.K * self.D:]

    def q_probs(self, phi):
        U, c = self.unpack_phi(phi)
        return np.clip(sigmoid(self.x @ U + c), 1e-12, 1 - 1e-12)

    def integrand(self, phi, theta, copies=1):
        """Integrand over ``copies`` stacked replicas of the dataset."""
        W, b = self.unpack_theta(theta)
        tile = lambda a: np.tile(a, (copies, 1))
        return VAEIntegrand(tile(self.x), W, b, tile(self.q_probs(phi)), self.prior_p)

    def _chain_phi(self, dP, P):
        """Map per-datum dELBO/dP (..., N, K) to encoder weights, summed over data."""
        da = dP * P * (1 - P)
        gU = np.einsum("nd,...nk->...dk", self.x, da)
        return np.concatenate([gU.reshape(gU.shape[:-2] + (-1,)), da.sum(axis=-2)], axis=-1)

    def phi_probe(self, phi, theta, m, rng, batched=True):
        """(m, n_phi) one-sample encoder gradients of the dataset ELBO."""
        P = self.q_probs(phi)
        f = self.integrand(phi, theta, copies=m)
        z = (rng.random((m, self.N, self.K)) < P).astype(float)
        zf = z.reshape(m * self.N, self.K)
        diffs = bernoulli_flip_differences(f, zf) if batched else naive_flip_differences(f, zf)
        return self._chain_phi(diffs.reshape(m, self.N, self.K), P), z

    def theta_grad(self, theta, z):
        """Pathwise decoder gradient of sum_n log p(x_n | z_n) at one code per datum."""
        W, b = self.unpack_theta(theta)
        r = self.x - sigmoid(z @ W + b)
        return np.concatenate([(z.T @ r).ravel(), r.sum(axis=0)])

    def _all_codes(self):
        if self.codes is None:
            k = np.arange(2**self.K)
            self.codes = ((k[:, None] >> np.arange(self.K)) & 1).astype(float)
        return self.codes

    def exact(self, phi, theta):
        """Exact dataset ELBO and its encoder gradient by enumerating all codes."""
        codes = self._all_codes()
        P = self.q_probs(phi)
        W, b = self.unpack_theta(theta)
        lq = codes @ np.log(P).T + (1 - codes) @ np.log1p(-P).T  # (C, N)
        q = np.exp(lq)
        lik = (self.x[None] * _log_sigmoid((codes @ W + b)[:, None, :])
               + (1 - self.x[None]) * _log_sigmoid(-(codes @ W + b)[:, None, :])).sum(-1)  # (C, N)
        prior = codes @ np.full(self.K, math.log(self.prior_p)) + (1 - codes) @ np.full(self.K, math.log1p(-self.prior_p))
        f = lik + prior[:, None] - lq
        elbo = float((q * f).sum())
        # d q(z)/dP_v = q(z) (z_v / P_v - (1 - z_v) / (1 - P_v)); the score term of log q integrates to 0
        score = codes[:, None, :] / P[None] - (1 - codes[:, None, :]) / (1 - P[None])
        dP = np.einsum("cn,cnk->nk", q * f, score)
        return elbo, self._chain_phi(dP, P)

    def checkpoint(self, phi, theta, rng):
        o = self.cfg.options
        m, chunk = o["oracle_probes"], o["oracle_chunk"]
        total = np.zeros_like(phi)
        total_sq = np.zeros_like(phi)
        done = 0
        while done < m:
            k = min(chunk, m - done)
            g, _ = self.phi_probe(phi, theta, k, rng)
            total += g.sum(axis=0)
            total_sq += (g * g).sum(axis=0)
            done += k
        mean = total / m
        var = np.maximum(total_sq / m - mean * mean, 0.0) * m / (m - 1)
        se = np.sqrt(var / m)
        _, exact = self.exact(phi, theta)
        floor = 1e-9 * (1.0 + np.abs(exact))
        z = np.abs(mean - exact) / np.maximum(se, 1e-300)
        ok = np.abs(mean - exact) <= 5 * se + floor
        return {"max_abs_err": float(np.max(np.abs(mean - exact))), "max_z": float(np.max(np.where(se > 0, z, 0))),
                "pass": bool(np.all(ok))}


def run_bernoulli_vae(cfg: ExperimentConfig) -> ExperimentResult:
    _check_experiment(cfg, "bernoulli_vae")
    model = BernoulliVAE(cfg)
    rng = _stream(cfg.seed, "go")
    oracle_rng = _stream(cfg.seed, "oracle")
    every = cfg.options["checkpoint_every"]
    opt_phi = Adam(model.phi, cfg.optimizer)
    opt_theta = Adam(model.theta, cfg.optimizer)
    records, checkpoints = [], []
    exact_trace = model.K <= 10
    t0 = time.perf_counter()
    for it in range(cfg.iterations):
        phi, theta = opt_phi.x, opt_theta.x
        if it % every == 0:
            cp = model.checkpoint(phi, theta, oracle_rng)
            cp["iteration"] = it
            checkpoints.append(cp)
        g, z = model.phi_probe(phi, theta, cfg.variance_probes, rng)
        var = g.var(axis=0, ddof=1)
        g_theta = model.theta_grad(theta, z[-1])
        opt_phi.step(g[-1])
        opt_theta.step(g_theta)
        if exact_trace:
            elbo, _ = model.exact(opt_phi.x, opt_theta.x)
        else:
            elbo = float(model.integrand(opt_phi.x, opt_theta.x).eval(z[-1]).sum())
        ms = (time.perf_counter() - t0) * 1e3 if cfg.record_wall_clock else 0.0
        records.append(TraceRecord(it, opt_phi.x.copy(), elbo, var, ms))
    summary = {"go": {"checkpoints": checkpoints, "all_checkpoints_pass": all(c["pass"] for c in checkpoints),
                      "final_elbo": records[-1].elbo_estimate, "elbo_is_exact": exact_trace}}
    return ExperimentResult({"go": records}, summary)


# -- unbiasedness suite ----------------------------------------------------------

_GRID = {
    "Delta": [(0.7,)],
    "Bernoulli": [(0.3,), (0.8,)],
    "Normal": [(0.5, 1.3), (-1.0, 0.6)],
    "LogNormal": [(0.1, 0.4), (-0.5, 0.8)],
    "Gamma": [(0.5, 1.0), (2.0, 3.0)],
    "Beta": [(2.0, 3.0), (0.8, 1.5)],
    "Exponential": [(1.5,)],
    "Weibull": [(1.2, 2.0), (0.8, 1.5)],
    "Laplace": [(0.3, 0.8)],
    "Poisson": [(0.8,), (4.0,)],
    "Geometric": [(0.3,), (0.7,)],
    "NegativeBinomial": [(3.0, 0.4), (0.7, 0.2)],
    "Categorical": [((0.2, 0.3, 0.5),)],
}


def suite_integrands(c):
    return {
        "y": IntegrandSpec(eval=lambda y: y[:, 0], grad=lambda y: np.ones_like(y)),
        "y^2": IntegrandSpec(eval=lambda y: y[:, 0] ** 2, grad=lambda y: 2.0 * y),
        "(y-c)^2": IntegrandSpec(eval=lambda y: (y[:, 0] - c) ** 2, grad=lambda y: 2.0 * (y - c)),
        "exp(-y^2/10)": IntegrandSpec(eval=lambda y: np.exp(-y[:, 0] ** 2 / 10.0),
                                      grad=lambda y: -0.2 * y * np.exp(-y**2 / 10.0)),
    }


def _scipy_frozen(family, params):
    from scipy import stats

    if family == "Normal":
        return stats.norm(params[0], params[1])
    if family == "LogNormal":
        return stats.lognorm(params[1], scale=math.exp(params[0]))
    if family == "Gamma":
        return stats.gamma(params[0], scale=1.0 / params[1])
    if family == "Beta":
        return stats.beta(params[0], params[1])
    if family == "Exponential":
        return stats.expon(scale=1.0 / params[0])
    if family == "Weibull":
        return stats.weibull_min(params[1], scale=params[0])
    if family == "Laplace":
        return stats.laplace(params[0], params[1])
    if family == "Poisson":
        return stats.poisson(params[0])
    if family == "Geometric":
        return stats.geom(params[0], loc=-1)
    if family == "NegativeBinomial":
        return stats.nbinom(params[0], 1.0 - params[1])
    raise KeyError(family)


_DISCRETE_SCIPY = ("Poisson", "Geometric", "NegativeBinomial")


def reference_expectation(family, params, fn):
    """E[fn(y)] computed with scipy densities: quadrature or tail-bounded sums."""
    from scipy import integrate

    if family == "Delta":
        return float(fn(np.array([params[0]]))[0])
    if family == "Bernoulli":
        p = params[0]
        return float(p * fn(np.array([1.0]))[0] + (1 - p) * fn(np.array([0.0]))[0])
    if family == "Categorical":
        probs = np.asarray(params[0], dtype=float)
        return float(probs @ fn(np.arange(probs.size, dtype=float)))
    dist = _scipy_frozen(family, params)
    if family in _DISCRETE_SCIPY:
        hi = max(64, int(4 * dist.mean()))
        while dist.sf(hi) > 1e-17:
            hi *= 2
        y = np.arange(hi + 1, dtype=float)
        return float(np.sum(dist.pmf(y) * fn(y)))
    lo, hi = dist.support()
    g = lambda t: float(dist.pdf(t) * fn(np.array([t]))[0])
    if family == "Laplace":
        left = integrate.quad(g, -np.inf, params[0], epsabs=1e-13, epsrel=1e-12, limit=400)[0]
        right = integrate.quad(g, params[0], np.inf, epsabs=1e-13, epsrel=1e-12, limit=400)[0]
        return left + right
    if np.isfinite(lo) and np.isfinite(hi):
        return integrate.quad(g, lo, hi, epsabs=1e-13, epsrel=1e-12, limit=400)[0]
    mid = float(dist.median())
    a = integrate.quad(g, lo, mid, epsabs=1e-13, epsrel=1e-12, limit=400)[0]
    b = integrate.quad(g, mid, hi, epsabs=1e-13, epsrel=1e-12, limit=400)[0]
    return a + b


def oracle_gradient(family, params, fn, h=1e-3):
    """Gradient of E[fn] wrt each parameter by Richardson-extrapolated central differences."""
    if family == "Categorical":
        probs = np.asarray(params[0], dtype=float)
        vals = fn(np.arange(probs.size, dtype=float))
        return vals - vals[-1]
    if family == "Bernoulli":
        return np.array([float(fn(np.array([1.0]))[0] - fn(np.array([0.0]))[0])])
    grads = []
    for k, p in enumerate(params):
        step = h * max(abs(p), 0.1)
        if family in ("Geometric", "NegativeBinomial") and k == len(params) - 1:
            step = min(step, 0.25 * min(p, 1 - p))

        def central(s, k=k, p=p):
            up = list(params)
            dn = list(params)
            up[k] = p + s
            dn[k] = p - s
            return (reference_expectation(family, up, fn) - reference_expectation(family, dn, fn)) / (2 * s)

        d1, d2, d4 = central(step), central(step / 2), central(step / 4)
        r1 = (4 * d2 - d1) / 3
        r2 = (4 * d4 - d2) / 3
        grads.append((16 * r2 - r1) / 15)
    return np.array(grads)


def _make(cls, family, params):
    if family == "Categorical":
        return cls(params[0])
    return cls(*params)


def run_unbiasedness_suite(cfg: ExperimentConfig, families=None):
    """One report row per (family, params, integrand, estimator).

    ``families`` optionally maps family tags to replacement classes, which is
    how tests plug in a deliberately broken nabla.
    """
    _check_experiment(cfg, "unbiasedness_suite")
    o = cfg.options
    n = o["n_samples"]
    classes = dict(_REGISTRY)
    classes.update(families or {})
    fns = suite_integrands(o["shift"])
    rows = []
    row_id = 0
    for family in o["families"]:
        cls = classes[family]
        for params in _GRID[family]:
            for fname, f in fns.items():
                oracle = oracle_gradient(family, params, lambda y, f=f: np.asarray(f.eval(y[:, None])))
                for tag in cfg.estimators:
                    row_id += 1
                    dist = _make(cls, family, params)
                    if tag == "rep" and not dist.reparameterizable:
                        continue
                    if tag == "reinforce" and family == "Delta":
                        continue
                    rng = np.random.default_rng([cfg.seed, row_id])
                    est = {"go": go_gradient, "reinforce": reinforce_gradient, "rep": rep_gradient}[tag](
                        [dist], f, n, rng)
                    se = est.se
                    floor = 1e-7 * (1.0 + np.abs(oracle))
                    ok = bool(np.all(np.abs(est.per_param - oracle) <= 5 * se + floor))
                    rows.append({
                        "family": family,
                        "params": [list(p) if isinstance(p, tuple) else p for p in params],
                        "integrand": fname,
                        "estimator": tag,
                        "oracle": [float(v) for v in oracle],
                        "estimate": [float(v) for v in est.per_param],
                        "se": [float(v) for v in se],
                        "pass": ok,
                    })
    return rows


RUNNERS = {
    "gamma_toy": run_gamma_toy,
    "nb_toy": run_nb_toy,
    "bernoulli_vae": run_bernoulli_vae,
    "unbiasedness_suite": run_unbiasedness_suite,
}
