"""One-dimensional distribution families with CDFs, samplers and variable-nablas.

The variable-nabla of parameter k at a point y is

    g_k(y) = -(dQ(y)/dk) / q(y)

with Q the CDF and q the density (continuous) or mass (discrete).  It acts
as "dy/dk" when gradients are pushed back through a random draw.

Parameters may be numpy arrays; everything broadcasts against ``y``.  All
per-parameter outputs (``variable_nabla``, ``score``, ``transform_grad``)
stack parameters on a trailing axis, in ``param_names`` order.

Conventions: Gamma(shape, rate); NegativeBinomial(r, p) counts draws with
mass p^y (1-p)^r, so its CDF is I_{1-p}(r, y+1); Geometric counts failures
before the first success starting at 0; Categorical treats the last
probability as the dependent one (it is 1 minus the rest), so its nabla
entry is identically 0.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import ClassVar

import numpy as np

from . import special
from .special import DomainError

PROB_CLAMP = 1e-12
MIN_MASS = 1e-300
TINY_SAMPLE = np.finfo(float).tiny


class MissingEvaluatorError(ValueError):
    """The integrand lacks the evaluator a D-operator or estimator needs."""


class NotReparameterizableError(ValueError):
    pass


@dataclass(frozen=True)
class Support:
    kind: str
    lower: float = -math.inf
    upper: float = math.inf
    alphabet_size: int | None = None

    def __post_init__(self):
        if self.kind == "continuous_interval":
            if not self.lower < self.upper:
                raise ValueError("continuous support needs lower < upper")
        elif self.kind == "nonneg_integers":
            pass
        elif self.kind == "finite_alphabet":
            if self.alphabet_size is None or self.alphabet_size < 2:
                raise ValueError("finite alphabet needs alphabet_size >= 2")
        elif self.kind != "point":
            raise ValueError(f"unknown support kind {self.kind!r}")

    @property
    def discrete(self):
        return self.kind in ("nonneg_integers", "finite_alphabet")

    def contains(self, y):
        y = np.asarray(y, dtype=float)
        if self.kind == "continuous_interval":
            return (y >= self.lower) & (y <= self.upper)
        if self.kind == "point":
            return y == self.lower
        ok = (y >= 0) & (y == np.floor(y))
        if self.kind == "finite_alphabet":
            ok &= y <= self.alphabet_size - 1
        return ok


REAL_LINE = Support("continuous_interval")
POSITIVE = Support("continuous_interval", 0.0, math.inf)
UNIT = Support("continuous_interval", 0.0, 1.0)
COUNTS = Support("nonneg_integers", 0.0, math.inf)


_REGISTRY: dict[str, type[Distribution]] = {}


def _arr(x):
    return np.asarray(x, dtype=float)


class Distribution:
    """Base class: one scalar random variable, possibly with batched parameters."""

    family: ClassVar[str]
    param_names: ClassVar[tuple[str, ...]]
    discrete: ClassVar[bool] = False
    reparameterizable: ClassVar[bool] = False

    def __init_subclass__(cls, **kw):
        super().__init_subclass__(**kw)
        if "family" in cls.__dict__:
            _REGISTRY[cls.family] = cls

    def __init__(self, *params):
        if len(params) != len(self.param_names):
            raise ValueError(f"{self.family} takes {len(self.param_names)} parameters")
        self._params = tuple(_arr(p) for p in params)
        self._validate()

    # -- plumbing -------------------------------------------------------
    def _validate(self):
        pass

    @property
    def params(self) -> tuple[np.ndarray, ...]:
        return self._params

    @property
    def n_params(self):
        return len(self.param_names)

    @property
    def batch_shape(self):
        return np.broadcast_shapes(*(p.shape for p in self._params))

    def with_params(self, *params):
        return type(self)(*params)

    def to_json(self):
        return {"family": self.family, "params": [float(p) for p in self._params]}

    @staticmethod
    def from_json(obj):
        try:
            cls = _REGISTRY[obj["family"]]
        except KeyError:
            raise ValueError(f"unknown distribution family {obj.get('family')!r}") from None
        params = obj["params"]
        if cls is Categorical:
            return Categorical(params)
        return cls(*params)

    def __repr__(self):
        inner = ", ".join(f"{n}={np.array2string(p, precision=6)}" for n, p in zip(self.param_names, self._params))
        return f"{self.family}({inner})"

    @property
    def support(self) -> Support:
        raise NotImplementedError

    def _check_support(self, y):
        y = _arr(y)
        if not np.all(self.support.contains(y)):
            raise DomainError(f"value outside the support of {self.family}")
        return y

    # -- interface ------------------------------------------------------
    def log_density(self, y):
        raise NotImplementedError

    def density(self, y):
        return np.exp(self.log_density(y))

    def cdf(self, y):
        raise NotImplementedError

    def sample(self, rng, size=None):
        raise NotImplementedError

    def _nabla(self, y):
        raise NotImplementedError

    def variable_nabla(self, y):
        """Per-parameter variable-nabla at y, shape broadcast(y, params) + (n_params,)."""
        y = self._check_support(y)
        if self.discrete:
            mass = self.density(y)
            if np.any(mass < MIN_MASS):
                raise DomainError(f"{self.family} nabla undefined where the mass is zero")
        return self._nabla(y)

    def score(self, y):
        """Gradient of log q(y) wrt the parameters (REINFORCE)."""
        raise NotImplementedError

    def grad_log_density(self, y):
        """d log q(y) / dy, for continuous families."""
        raise NotImplementedError(f"{self.family} has no density gradient in y")

    # reparameterization: y = transform(eps), eps = noise(rng, size)
    def noise(self, rng, size=None):
        raise NotReparameterizableError(f"{self.family} is not reparameterizable")

    def transform(self, eps):
        raise NotReparameterizableError(f"{self.family} is not reparameterizable")

    def transform_grad(self, eps):
        raise NotReparameterizableError(f"{self.family} is not reparameterizable")

    def _size(self, size):
        return self.batch_shape if size is None else size


def _stack(*cols):
    cols = np.broadcast_arrays(*cols)
    return np.stack(cols, axis=-1)


class Delta(Distribution):
    family = "Delta"
    param_names = ("mu",)
    reparameterizable = True

    @property
    def support(self):
        mu = float(self._params[0]) if self._params[0].ndim == 0 else 0.0
        return Support("point", mu, mu)

    def _check_support(self, y):
        y = _arr(y)
        if not np.all(y == self._params[0]):
            raise DomainError("Delta is supported only at mu")
        return y

    def log_density(self, y):
        y = _arr(y)
        return np.where(y == self._params[0], np.inf, -np.inf)

    def cdf(self, y):
        return np.where(_arr(y) >= self._params[0], 1.0, 0.0)

    def sample(self, rng, size=None):
        return np.broadcast_to(self._params[0], self._size(size)).astype(float).copy()

    def _nabla(self, y):
        return np.ones(np.broadcast_shapes(y.shape, self.batch_shape) + (1,))

    def score(self, y):
        raise NotImplementedError("Delta has no score function")

    def noise(self, rng, size=None):
        return np.zeros(self._size(size))

    def transform(self, eps):
        return self._params[0] + 0.0 * _arr(eps)

    def transform_grad(self, eps):
        return _stack(np.ones_like(_arr(eps)) + 0.0 * self._params[0])


class Bernoulli(Distribution):
    family = "Bernoulli"
    param_names = ("p",)
    discrete = True

    def __init__(self, p):
        p = _arr(p)
        if np.any((p < 0) | (p > 1)) or np.any(~np.isfinite(p)):
            raise DomainError("Bernoulli p must lie in [0, 1]")
        super().__init__(np.clip(p, PROB_CLAMP, 1.0 - PROB_CLAMP))

    @property
    def support(self):
        return Support("finite_alphabet", 0.0, 1.0, alphabet_size=2)

    def log_density(self, y):
        y = self._check_support(y)
        p = self._params[0]
        return np.where(y == 1, np.log(p), np.log1p(-p))

    def cdf(self, y):
        y = self._check_support(y)
        return np.where(y == 1, 1.0, 1.0 - self._params[0])

    def sample(self, rng, size=None):
        size = self._size(size)
        return (rng.random(size) < self._params[0]).astype(float)

    def _nabla(self, y):
        p = self._params[0]
        return _stack(np.where(y == 0, 1.0 / (1.0 - p), 0.0))

    def score(self, y):
        y = self._check_support(y)
        p = self._params[0]
        return _stack(y / p - (1.0 - y) / (1.0 - p))


class Normal(Distribution):
    family = "Normal"
    param_names = ("mu", "sigma")
    reparameterizable = True

    def _validate(self):
        if np.any(~(self._params[1] > 0)):
            raise DomainError("Normal sigma must be positive")

    @property
    def support(self):
        return REAL_LINE

    def log_density(self, y):
        mu, sigma = self._params
        z = (_arr(y) - mu) / sigma
        return -0.5 * z * z - np.log(sigma) - 0.5 * math.log(2 * math.pi)

    def cdf(self, y):
        from scipy.special import ndtr

        mu, sigma = self._params
        return ndtr((_arr(y) - mu) / sigma)

    def noise(self, rng, size=None):
        return rng.standard_normal(self._size(size))

    def transform(self, eps):
        mu, sigma = self._params
        return mu + sigma * eps

    def transform_grad(self, eps):
        return _stack(np.ones_like(eps) + 0.0 * self._params[0], eps + 0.0 * self._params[1])

    def sample(self, rng, size=None):
        return self.transform(self.noise(rng, size))

    def _nabla(self, y):
        mu, sigma = self._params
        return _stack(np.ones_like(y) + 0.0 * mu, (y - mu) / sigma)

    def score(self, y):
        mu, sigma = self._params
        z = (_arr(y) - mu) / sigma
        return _stack(z / sigma, (z * z - 1.0) / sigma)

    def grad_log_density(self, y):
        mu, sigma = self._params
        return -(_arr(y) - mu) / (sigma * sigma)


class LogNormal(Distribution):
    family = "LogNormal"
    param_names = ("mu", "sigma")
    reparameterizable = True

    def _validate(self):
        if np.any(~(self._params[1] > 0)):
            raise DomainError("LogNormal sigma must be positive")

    @property
    def support(self):
        return POSITIVE

    def log_density(self, y):
        y = self._check_support(y)
        mu, sigma = self._params
        with np.errstate(divide="ignore"):
            ly = np.log(y)
        z = (ly - mu) / sigma
        return -0.5 * z * z - ly - np.log(sigma) - 0.5 * math.log(2 * math.pi)

    def cdf(self, y):
        from scipy.special import ndtr

        y = self._check_support(y)
        mu, sigma = self._params
        with np.errstate(divide="ignore"):
            return ndtr((np.log(y) - mu) / sigma)

    def noise(self, rng, size=None):
        return rng.standard_normal(self._size(size))

    def transform(self, eps):
        mu, sigma = self._params
        return np.exp(mu + sigma * eps)

    def transform_grad(self, eps):
        y = self.transform(eps)
        return _stack(y, y * eps)

    def sample(self, rng, size=None):
        return self.transform(self.noise(rng, size))

    def _nabla(self, y):
        mu, sigma = self._params
        return _stack(y + 0.0 * mu, y * (np.log(y) - mu) / sigma)

    def score(self, y):
        mu, sigma = self._params
        z = (np.log(_arr(y)) - mu) / sigma
        return _stack(z / sigma, (z * z - 1.0) / sigma)

    def grad_log_density(self, y):
        mu, sigma = self._params
        y = _arr(y)
        return -(1.0 + (np.log(y) - mu) / (sigma * sigma)) / y


class Gamma(Distribution):
    """Gamma with shape ``alpha`` and rate ``beta``."""

    family = "Gamma"
    param_names = ("alpha", "beta")

    def _validate(self):
        a, b = self._params
        if np.any(~(a > 0)) or np.any(~(b > 0)):
            raise DomainError("Gamma alpha and beta must be positive")

    @property
    def support(self):
        return POSITIVE

    def log_density(self, y):
        y = self._check_support(y)
        a, b = self._params
        with np.errstate(divide="ignore"):
            ly = np.log(y)
        return a * np.log(b) + (a - 1.0) * ly - b * y - special.log_gamma(a + 0.0 * y)

    def cdf(self, y):
        y = self._check_support(y)
        a, b = self._params
        return special.reg_gamma_p(a, b * y)

    def sample(self, rng, size=None):
        size = self._size(size)
        a, b = np.broadcast_arrays(*self._params)
        a = np.broadcast_to(a, size)
        small = a < 1.0
        z = rng.standard_gamma(np.where(small, a + 1.0, a), size)
        if np.any(small):
            # boost: Gamma(a) = Gamma(a + 1) * U^(1/a), in logs to delay underflow
            u = rng.random(size)
            with np.errstate(divide="ignore"):
                z = np.where(small, np.exp(np.log(z) + np.log1p(-u) / a), z)
        return np.maximum(z / np.broadcast_to(b, size), TINY_SAMPLE)

    def _nabla(self, y):
        if np.any(y <= 0):
            raise DomainError("Gamma nabla needs y > 0")
        a, b = self._params
        x = b * y
        ratio = special.gamma_shape_nabla_ratio(a + 0.0 * x, x)
        return _stack(-ratio / b, -y / b)

    def score(self, y):
        a, b = self._params
        y = _arr(y)
        return _stack(np.log(b) + np.log(y) - special.digamma(a + 0.0 * y), a / b - y)

    def grad_log_density(self, y):
        a, b = self._params
        return (a - 1.0) / _arr(y) - b


class Beta(Distribution):
    family = "Beta"
    param_names = ("alpha", "beta")

    def _validate(self):
        a, b = self._params
        if np.any(~(a > 0)) or np.any(~(b > 0)):
            raise DomainError("Beta shapes must be positive")

    @property
    def support(self):
        return UNIT

    def log_density(self, y):
        y = self._check_support(y)
        a, b = self._params
        lbeta = special.log_gamma(a + 0.0 * y) + special.log_gamma(b + 0.0 * y) - special.log_gamma(a + b + 0.0 * y)
        with np.errstate(divide="ignore"):
            return (a - 1.0) * np.log(y) + (b - 1.0) * np.log1p(-y) - lbeta

    def cdf(self, y):
        y = self._check_support(y)
        a, b = self._params
        return special.reg_beta_i(y, a, b)

    def sample(self, rng, size=None):
        a, b = self._params
        return rng.beta(a, b, self._size(size))

    def _nabla(self, y):
        if np.any((y <= 0) | (y >= 1)):
            raise DomainError("Beta nabla needs 0 < y < 1")
        a, b = self._params
        q = self.density(y)
        da = special.grad_reg_beta_wrt_shape(y, a + 0.0 * y, b + 0.0 * y, "a")
        db = special.grad_reg_beta_wrt_shape(y, a + 0.0 * y, b + 0.0 * y, "b")
        return _stack(-da / q, -db / q)

    def score(self, y):
        a, b = self._params
        y = _arr(y)
        common = special.digamma(a + b + 0.0 * y)
        return _stack(np.log(y) - special.digamma(a + 0.0 * y) + common,
                      np.log1p(-y) - special.digamma(b + 0.0 * y) + common)

    def grad_log_density(self, y):
        a, b = self._params
        y = _arr(y)
        return (a - 1.0) / y - (b - 1.0) / (1.0 - y)


class Exponential(Distribution):
    family = "Exponential"
    param_names = ("lam",)
    reparameterizable = True

    def _validate(self):
        if np.any(~(self._params[0] > 0)):
            raise DomainError("Exponential rate must be positive")

    @property
    def support(self):
        return POSITIVE

    def log_density(self, y):
        y = self._check_support(y)
        lam = self._params[0]
        return np.log(lam) - lam * y

    def cdf(self, y):
        y = self._check_support(y)
        return -np.expm1(-self._params[0] * y)

    def noise(self, rng, size=None):
        return -np.log1p(-rng.random(self._size(size)))

    def transform(self, eps):
        return eps / self._params[0]

    def transform_grad(self, eps):
        lam = self._params[0]
        return _stack(-eps / (lam * lam))

    def sample(self, rng, size=None):
        return self.transform(self.noise(rng, size))

    def _nabla(self, y):
        return _stack(-y / self._params[0])

    def score(self, y):
        lam = self._params[0]
        return _stack(1.0 / lam - _arr(y))

    def grad_log_density(self, y):
        return -self._params[0] + 0.0 * _arr(y)


class Weibull(Distribution):
    """Weibull with scale ``lam`` and shape ``k``."""

    family = "Weibull"
    param_names = ("lam", "k")
    reparameterizable = True

    def _validate(self):
        lam, k = self._params
        if np.any(~(lam > 0)) or np.any(~(k > 0)):
            raise DomainError("Weibull scale and shape must be positive")

    @property
    def support(self):
        return POSITIVE

    def log_density(self, y):
        y = self._check_support(y)
        lam, k = self._params
        with np.errstate(divide="ignore"):
            t = y / lam
            return np.log(k / lam) + (k - 1.0) * np.log(t) - t**k

    def cdf(self, y):
        y = self._check_support(y)
        lam, k = self._params
        return -np.expm1(-((y / lam) ** k))

    def noise(self, rng, size=None):
        return -np.log1p(-rng.random(self._size(size)))

    def transform(self, eps):
        lam, k = self._params
        return lam * eps ** (1.0 / k)

    def transform_grad(self, eps):
        lam, k = self._params
        y = self.transform(eps)
        return _stack(y / lam, -y * np.log(eps) / (k * k))

    def sample(self, rng, size=None):
        return self.transform(self.noise(rng, size))

    def _nabla(self, y):
        lam, k = self._params
        return _stack(y / lam, (y / k) * np.log(lam / y))

    def score(self, y):
        lam, k = self._params
        t = _arr(y) / lam
        tk = t**k
        return _stack(k * (tk - 1.0) / lam, 1.0 / k + np.log(t) * (1.0 - tk))

    def grad_log_density(self, y):
        lam, k = self._params
        y = _arr(y)
        return (k - 1.0) / y - k * (y / lam) ** k / y


class Laplace(Distribution):
    family = "Laplace"
    param_names = ("mu", "b")
    reparameterizable = True

    def _validate(self):
        if np.any(~(self._params[1] > 0)):
            raise DomainError("Laplace scale must be positive")

    @property
    def support(self):
        return REAL_LINE

    def log_density(self, y):
        mu, b = self._params
        return -np.abs(_arr(y) - mu) / b - np.log(2.0 * b)

    def cdf(self, y):
        mu, b = self._params
        z = (_arr(y) - mu) / b
        return np.where(z < 0, 0.5 * np.exp(np.minimum(z, 0.0)), 1.0 - 0.5 * np.exp(-np.maximum(z, 0.0)))

    def noise(self, rng, size=None):
        # standard Laplace by inverse CDF from U(-1/2, 1/2)
        u = rng.random(self._size(size)) - 0.5
        return -np.sign(u) * np.log1p(-2.0 * np.abs(u))

    def transform(self, eps):
        mu, b = self._params
        return mu + b * eps

    def transform_grad(self, eps):
        return _stack(np.ones_like(eps) + 0.0 * self._params[0], eps + 0.0 * self._params[1])

    def sample(self, rng, size=None):
        return self.transform(self.noise(rng, size))

    def _nabla(self, y):
        mu, b = self._params
        return _stack(np.ones_like(y) + 0.0 * mu, (y - mu) / b)

    def score(self, y):
        mu, b = self._params
        d = _arr(y) - mu
        return _stack(np.sign(d) / b, (np.abs(d) / b - 1.0) / b)

    def grad_log_density(self, y):
        mu, b = self._params
        return -np.sign(_arr(y) - mu) / b


class Poisson(Distribution):
    family = "Poisson"
    param_names = ("lam",)
    discrete = True

    def _validate(self):
        if np.any(~(self._params[0] > 0)):
            raise DomainError("Poisson rate must be positive")

    @property
    def support(self):
        return COUNTS

    def log_density(self, y):
        y = self._check_support(y)
        lam = self._params[0]
        return y * np.log(lam) - lam - special.log_gamma(y + 1.0)

    def cdf(self, y):
        y = self._check_support(y)
        lam = self._params[0]
        return special.reg_gamma_q(y + 1.0, lam + 0.0 * y)

    def sample(self, rng, size=None):
        return rng.poisson(self._params[0], self._size(size)).astype(float)

    def _nabla(self, y):
        return _stack(np.ones_like(y) + 0.0 * self._params[0])

    def score(self, y):
        lam = self._params[0]
        return _stack(_arr(y) / lam - 1.0)


class Geometric(Distribution):
    """Failures before the first success; mass p (1-p)^y on y = 0, 1, ..."""

    family = "Geometric"
    param_names = ("p",)
    discrete = True

    def _validate(self):
        p = self._params[0]
        if np.any(~((p > 0) & (p < 1))):
            raise DomainError("Geometric p must lie in (0, 1)")

    @property
    def support(self):
        return COUNTS

    def log_density(self, y):
        y = self._check_support(y)
        p = self._params[0]
        return np.log(p) + y * np.log1p(-p)

    def cdf(self, y):
        y = self._check_support(y)
        p = self._params[0]
        return -np.expm1((y + 1.0) * np.log1p(-p))

    def sample(self, rng, size=None):
        return rng.geometric(self._params[0], self._size(size)).astype(float) - 1.0

    def _nabla(self, y):
        return _stack(-(y + 1.0) / self._params[0])

    def score(self, y):
        p = self._params[0]
        return _stack(1.0 / p - _arr(y) / (1.0 - p))


class NegativeBinomial(Distribution):
    """NB(r, p): mass Gamma(y+r)/(y! Gamma(r)) p^y (1-p)^r, mean r p / (1-p)."""

    family = "NegativeBinomial"
    param_names = ("r", "p")
    discrete = True

    def _validate(self):
        r, p = self._params
        if np.any(~(r > 0)) or np.any(~((p > 0) & (p < 1))):
            raise DomainError("NegativeBinomial needs r > 0 and p in (0, 1)")

    @property
    def support(self):
        return COUNTS

    def log_density(self, y):
        y = self._check_support(y)
        r, p = self._params
        return (special.log_gamma(y + r) - special.log_gamma(r + 0.0 * y) - special.log_gamma(y + 1.0)
                + y * np.log(p) + r * np.log1p(-p))

    def cdf(self, y):
        y = self._check_support(y)
        r, p = self._params
        return special.reg_beta_i(1.0 - p + 0.0 * y, r + 0.0 * y, y + 1.0)

    def sample(self, rng, size=None):
        r, p = self._params
        return rng.negative_binomial(r, 1.0 - p, self._size(size)).astype(float)

    def _nabla(self, y):
        r, p = self._params
        mass = self.density(y)
        dr = special.grad_reg_beta_wrt_shape(1.0 - p + 0.0 * y, r + 0.0 * y, y + 1.0, "a")
        return _stack(-dr / mass, (y + r) / (1.0 - p))

    def score(self, y):
        r, p = self._params
        y = _arr(y)
        return _stack(special.digamma(y + r) - special.digamma(r + 0.0 * y) + np.log1p(-p),
                      y / p - r / (1.0 - p))


class Categorical(Distribution):
    """Categorical over {0, ..., N} with probabilities p_0..p_N (unbatched)."""

    family = "Categorical"
    discrete = True

    def __init__(self, probs):
        probs = _arr(probs)
        if probs.ndim != 1 or probs.size < 2:
            raise DomainError("Categorical needs a 1-D probability vector of length >= 2")
        if np.any(~(probs > 0)) or abs(probs.sum() - 1.0) > 1e-12:
            raise DomainError("Categorical probabilities must be positive and sum to 1")
        probs = np.clip(probs, PROB_CLAMP, 1.0 - PROB_CLAMP)
        self._probs = probs / probs.sum()
        self._params = tuple(self._probs)

    @property
    def param_names(self):
        return tuple(f"p{i}" for i in range(self._probs.size))

    @property
    def probs(self):
        return self._probs

    @property
    def batch_shape(self):
        return ()

    def with_params(self, *params):
        return Categorical(np.asarray(params, dtype=float))

    def to_json(self):
        return {"family": self.family, "params": [float(p) for p in self._probs]}

    @property
    def support(self):
        return Support("finite_alphabet", 0.0, self._probs.size - 1.0, alphabet_size=self._probs.size)

    def log_density(self, y):
        y = self._check_support(y).astype(int)
        return np.log(self._probs)[y]

    def cdf(self, y):
        y = self._check_support(y).astype(int)
        return np.cumsum(self._probs)[y]

    def sample(self, rng, size=None):
        u = rng.random(() if size is None else size)
        cum = np.cumsum(self._probs)
        return np.minimum(np.searchsorted(cum, u, side="right"), self._probs.size - 1).astype(float)

    def _nabla(self, y):
        yi = y.astype(int)
        k = np.arange(self._probs.size)
        top = self._probs.size - 1
        ind = (k <= yi[..., None]) & (k < top) & (yi[..., None] < top)
        return -ind.astype(float) / self._probs[yi][..., None]

    def score(self, y):
        yi = self._check_support(y).astype(int)
        top = self._probs.size - 1
        k = np.arange(self._probs.size)
        out = (k == yi[..., None]) / self._probs
        out = out - (yi[..., None] == top) / self._probs[top]
        out[..., top] = 0.0
        return out


FAMILIES = tuple(_REGISTRY)


def d_y_operator(support: Support, integrand, y, index):
    """D_{y_v}[f] at the joint sample ``y`` (shape (..., V)) for coordinate ``index``.

    Continuous coordinates use ``integrand.grad``; discrete ones the forward
    difference f(y_v + 1) - f(y).  At the top of a finite alphabet the
    matching variable-nabla is 0, so the difference is defined as 0 there.
    """
    y = np.asarray(y, dtype=float)
    if not support.discrete:
        if getattr(integrand, "grad", None) is None:
            raise MissingEvaluatorError("continuous coordinate needs an integrand gradient")
        return np.asarray(integrand.grad(y))[..., index]
    if getattr(integrand, "eval", None) is None:
        raise MissingEvaluatorError("discrete coordinate needs an integrand evaluator")
    bumped = y.copy()
    if support.kind == "finite_alphabet":
        # never step off the alphabet; the top state contributes 0
        bumped[..., index] += np.where(y[..., index] < support.alphabet_size - 1, 1.0, 0.0)
    else:
        bumped[..., index] += 1.0
    return np.asarray(integrand.eval(bumped)) - np.asarray(integrand.eval(y))
