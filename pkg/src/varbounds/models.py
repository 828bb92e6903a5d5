"""Statistical models: canonical exponential families with exact samplers and
closed-form moments, a generic log-density wrapper, and prescribed mean
functions.

Conventions
-----------
Parameters are float arrays of shape (N,); batches stack along the leading
axis.  Observations are arrays of shape (count, M).  Model callables (phi,
log_h, log_lambda, log_density) must be vectorized over the leading axis;
every built-in family complies.  log_lambda returns +inf outside the natural
parameter space, and callers are expected to guard with
natural_space_contains before doing arithmetic on it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable

import numpy as np

from .calculus import FDConfig, MultiIndex, as_index, moment, moment_table, \
    multi_binomial, multi_indices_leq, partial_derivative, reciprocal_series
from .errors import NaturalSpaceError, ReferenceSupportError

_LOG_2PI = math.log(2.0 * math.pi)


@dataclass(frozen=True)
class ExponentialFamilyModel:
    """A canonical exponential family f(y;x) = exp(phi(y)'x - A(x)) h(y).

    log_lambda is the log moment-generating function, equal to the cumulant
    A(x) where finite and +inf outside the natural parameter space.
    closed_moments, when present, maps (x, multi-index p) to E_x{phi^p(y)}.
    """

    name: str
    param_dim: int
    obs_dim: int
    phi: Callable[[np.ndarray], np.ndarray]
    log_h: Callable[[np.ndarray], np.ndarray]
    log_lambda: Callable[[np.ndarray], float | np.ndarray]
    sampler: Callable[[np.ndarray, int, int], np.ndarray]
    closed_moments: Callable[[np.ndarray, MultiIndex], float] | None = None
    natural_space_desc: str = "all of R^N"
    hyperparams: dict = field(default_factory=dict)


@dataclass(frozen=True)
class GenericModel:
    """Any statistical model given by a log-density and a sampler.

    log_density(Y, x) must accept a (count, M) batch and return a (count,)
    array, with -inf marking observations outside the support at x.
    """

    name: str
    param_dim: int
    obs_dim: int
    log_density: Callable[[np.ndarray, np.ndarray], np.ndarray]
    sampler: Callable[[np.ndarray, int, int], np.ndarray]


Model = ExponentialFamilyModel | GenericModel


def _as_param(model, x) -> np.ndarray:
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if x.shape != (model.param_dim,):
        raise ValueError(f"parameter shape {x.shape} does not match param_dim={model.param_dim}")
    return x


def _as_obs_batch(model, y) -> np.ndarray:
    y = np.asarray(y, dtype=float)
    if y.ndim == 0:
        y = y.reshape(1, 1)
    elif y.ndim == 1:
        y = y.reshape(1, -1)
    if y.shape[-1] != model.obs_dim:
        raise ValueError(f"observation shape {y.shape} does not match obs_dim={model.obs_dim}")
    return y


def natural_space_contains(model: ExponentialFamilyModel, x) -> bool:
    """True iff the log moment-generating function is finite at x."""
    x = _as_param(model, x)
    return bool(np.isfinite(model.log_lambda(x)))


def log_density_batch(model: Model, Y: np.ndarray, x) -> np.ndarray:
    """Per-observation log density over a (count, M) batch."""
    x = _as_param(model, x)
    if isinstance(model, GenericModel):
        return np.asarray(model.log_density(Y, x), dtype=float)
    ll = float(model.log_lambda(x))
    if not math.isfinite(ll):
        raise NaturalSpaceError(x)
    return model.phi(Y) @ x - ll + model.log_h(Y)


def log_density(model: ExponentialFamilyModel, y, x) -> float:
    """log f(y;x) = phi(y)'x - A(x) + log h(y) for a single observation."""
    Y = _as_obs_batch(model, y)
    return float(log_density_batch(model, Y, x)[0])


def likelihood_ratio(model: Model, y, x, x0) -> float:
    """f(y;x) / f(y;x0); zero when f(y;x) vanishes.

    Raises ReferenceSupportError when the reference density f(y;x0) vanishes,
    which the construction of the ratio does not allow.
    """
    Y = _as_obs_batch(model, y)
    ld0 = float(log_density_batch(model, Y, x0)[0])
    if ld0 == -math.inf:
        raise ReferenceSupportError(
            f"reference density vanishes at y={np.asarray(y)!r} for x0={np.asarray(x0)!r}")
    ldx = float(log_density_batch(model, Y, x)[0])
    if ldx == -math.inf:
        return 0.0
    return math.exp(ldx - ld0)


def sample(model: Model, x, seed: int, count: int) -> np.ndarray:
    """Deterministic i.i.d. draws: identical (x, seed, count) give identical output."""
    x = _as_param(model, x)
    if isinstance(model, ExponentialFamilyModel) and not natural_space_contains(model, x):
        raise NaturalSpaceError(x)
    if count == 0:
        return np.empty((0, model.obs_dim))
    return model.sampler(x, int(seed), int(count))


def as_generic(model: ExponentialFamilyModel) -> GenericModel:
    """View an exponential family through the generic log-density interface."""
    return GenericModel(
        name=f"{model.name}-generic",
        param_dim=model.param_dim,
        obs_dim=model.obs_dim,
        log_density=lambda Y, x: log_density_batch(model, Y, x),
        sampler=model.sampler,
    )


# ---------------------------------------------------------------------------
# Built-in families
# ---------------------------------------------------------------------------

def _gauss_raw_moment(mu: float, var: float, order: int) -> float:
    # E{Z^p} for Z ~ N(mu, var) via the two-term recursion
    m_prev, m = 1.0, mu
    if order == 0:
        return 1.0
    for k in range(2, order + 1):
        m_prev, m = m, mu * m + (k - 1) * var * m_prev
    return m


@lru_cache(maxsize=None)
def _stirling2(n: int, k: int) -> int:
    if k == 0:
        return 1 if n == 0 else 0
    if k > n:
        return 0
    if k == n:
        return 1
    return k * _stirling2(n - 1, k) + _stirling2(n - 1, k - 1)


def _poisson_raw_moment(rate: float, order: int) -> float:
    return sum(_stirling2(order, k) * rate ** k for k in range(order + 1))


def _sigmoid(x: float) -> float:
    if x >= 0:
        return 1.0 / (1.0 + math.exp(-x))
    e = math.exp(x)
    return e / (1.0 + e)


def gaussian_mean() -> ExponentialFamilyModel:
    """Scalar Gaussian with known unit variance; natural parameter is the mean."""
    return ExponentialFamilyModel(
        name="gaussian-mean",
        param_dim=1,
        obs_dim=1,
        phi=lambda y: np.asarray(y, dtype=float),
        log_h=lambda y: -0.5 * np.asarray(y, dtype=float)[..., 0] ** 2 - 0.5 * _LOG_2PI,
        log_lambda=lambda x: 0.5 * np.asarray(x, dtype=float)[..., 0] ** 2,
        sampler=lambda x, seed, count: np.random.default_rng(seed).normal(
            loc=float(x[0]), scale=1.0, size=(count, 1)),
        closed_moments=lambda x, p: _gauss_raw_moment(float(x[0]), 1.0, p[0]),
        natural_space_desc="all of R",
    )


def gaussian_mean_nd(dim: int = 2) -> ExponentialFamilyModel:
    """N-dimensional Gaussian mean with identity covariance."""
    if dim < 1:
        raise ValueError("dim must be >= 1")

    def closed(x, p):
        out = 1.0
        for k in range(dim):
            out *= _gauss_raw_moment(float(x[k]), 1.0, p[k])
        return out

    return ExponentialFamilyModel(
        name="gaussian-mean-nd",
        param_dim=dim,
        obs_dim=dim,
        phi=lambda y: np.asarray(y, dtype=float),
        log_h=lambda y: -0.5 * np.sum(np.asarray(y, dtype=float) ** 2, axis=-1)
                        - 0.5 * dim * _LOG_2PI,
        log_lambda=lambda x: 0.5 * np.sum(np.asarray(x, dtype=float) ** 2, axis=-1),
        sampler=lambda x, seed, count: np.random.default_rng(seed).normal(
            loc=x, scale=1.0, size=(count, dim)),
        closed_moments=closed,
        natural_space_desc=f"all of R^{dim}",
        hyperparams={"dim": dim},
    )


def gaussian_iid(n_obs: int = 3) -> ExponentialFamilyModel:
    """n_obs i.i.d. unit-variance Gaussians sharing one mean; phi(y) = sum(y)."""
    if n_obs < 1:
        raise ValueError("n_obs must be >= 1")
    return ExponentialFamilyModel(
        name="gaussian-iid",
        param_dim=1,
        obs_dim=n_obs,
        phi=lambda y: np.sum(np.asarray(y, dtype=float), axis=-1, keepdims=True),
        log_h=lambda y: -0.5 * np.sum(np.asarray(y, dtype=float) ** 2, axis=-1)
                        - 0.5 * n_obs * _LOG_2PI,
        log_lambda=lambda x: 0.5 * n_obs * np.asarray(x, dtype=float)[..., 0] ** 2,
        sampler=lambda x, seed, count: np.random.default_rng(seed).normal(
            loc=float(x[0]), scale=1.0, size=(count, n_obs)),
        closed_moments=lambda x, p: _gauss_raw_moment(n_obs * float(x[0]), float(n_obs), p[0]),
        natural_space_desc="all of R",
        hyperparams={"n_obs": n_obs},
    )


def gaussian_sum(n_obs: int = 3) -> ExponentialFamilyModel:
    """Model of the sample sum z = y_1 + ... + y_n for the gaussian-iid family."""
    if n_obs < 1:
        raise ValueError("n_obs must be >= 1")
    return ExponentialFamilyModel(
        name="gaussian-sum",
        param_dim=1,
        obs_dim=1,
        phi=lambda y: np.asarray(y, dtype=float),
        log_h=lambda y: -np.asarray(y, dtype=float)[..., 0] ** 2 / (2.0 * n_obs)
                        - 0.5 * math.log(2.0 * math.pi * n_obs),
        log_lambda=lambda x: 0.5 * n_obs * np.asarray(x, dtype=float)[..., 0] ** 2,
        sampler=lambda x, seed, count: np.random.default_rng(seed).normal(
            loc=n_obs * float(x[0]), scale=math.sqrt(n_obs), size=(count, 1)),
        closed_moments=lambda x, p: _gauss_raw_moment(n_obs * float(x[0]), float(n_obs), p[0]),
        natural_space_desc="all of R",
        hyperparams={"n_obs": n_obs},
    )


_gammaln_vec = np.vectorize(math.lgamma, otypes=[float])


def poisson() -> ExponentialFamilyModel:
    """Poisson counts; natural parameter is the log rate.

    log h uses log-factorial via log-gamma so large counts do not overflow.
    """
    return ExponentialFamilyModel(
        name="poisson",
        param_dim=1,
        obs_dim=1,
        phi=lambda y: np.asarray(y, dtype=float),
        log_h=lambda y: -_gammaln_vec(np.asarray(y, dtype=float)[..., 0] + 1.0),
        log_lambda=lambda x: np.exp(np.asarray(x, dtype=float)[..., 0]),
        sampler=lambda x, seed, count: np.random.default_rng(seed).poisson(
            lam=math.exp(float(x[0])), size=(count, 1)).astype(float),
        closed_moments=lambda x, p: _poisson_raw_moment(math.exp(float(x[0])), p[0]),
        natural_space_desc="all of R",
    )


def bernoulli() -> ExponentialFamilyModel:
    """Bernoulli in {0,1}; natural parameter is the logit of the success probability."""
    return ExponentialFamilyModel(
        name="bernoulli",
        param_dim=1,
        obs_dim=1,
        phi=lambda y: np.asarray(y, dtype=float),
        log_h=lambda y: np.zeros(np.asarray(y, dtype=float).shape[:-1]),
        log_lambda=lambda x: np.logaddexp(0.0, np.asarray(x, dtype=float)[..., 0]),
        sampler=lambda x, seed, count: (
            np.random.default_rng(seed).random((count, 1)) < _sigmoid(float(x[0]))
        ).astype(float),
        closed_moments=lambda x, p: 1.0 if p[0] == 0 else _sigmoid(float(x[0])),
        natural_space_desc="all of R",
    )


def exponential_rate() -> ExponentialFamilyModel:
    """Exponential distribution on y >= 0 with rate -x; natural space x < 0."""

    def ll(x):
        x1 = np.asarray(x, dtype=float)[..., 0]
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.where(x1 < 0, -np.log(-x1), np.inf)

    def log_h(y):
        y1 = np.asarray(y, dtype=float)[..., 0]
        return np.where(y1 >= 0, 0.0, -np.inf)

    def closed(x, p):
        rate = -float(x[0])
        if rate <= 0:
            raise NaturalSpaceError(np.asarray(x, dtype=float))
        return math.factorial(p[0]) / rate ** p[0]

    return ExponentialFamilyModel(
        name="exponential-rate",
        param_dim=1,
        obs_dim=1,
        phi=lambda y: np.asarray(y, dtype=float),
        log_h=log_h,
        log_lambda=ll,
        sampler=lambda x, seed, count: np.random.default_rng(seed).exponential(
            scale=1.0 / (-float(x[0])), size=(count, 1)),
        closed_moments=closed,
        natural_space_desc="x < 0",
    )


#: Registry for the CLI: name -> (factory, hyperparameter names with defaults).
BUILTIN_FAMILIES: dict[str, tuple[Callable[..., ExponentialFamilyModel], dict]] = {
    "gaussian-mean": (gaussian_mean, {}),
    "poisson": (poisson, {}),
    "bernoulli": (bernoulli, {}),
    "exponential-rate": (exponential_rate, {}),
    "gaussian-mean-nd": (gaussian_mean_nd, {"dim": 2}),
    "gaussian-iid": (gaussian_iid, {"n_obs": 3}),
    "gaussian-sum": (gaussian_sum, {"n_obs": 3}),
}


def make_model(family: str, **params) -> ExponentialFamilyModel:
    if family not in BUILTIN_FAMILIES:
        raise ValueError(f"unknown family {family!r}; known: {sorted(BUILTIN_FAMILIES)}")
    factory, defaults = BUILTIN_FAMILIES[family]
    unknown = set(params) - set(defaults)
    if unknown:
        raise ValueError(f"family {family!r} does not take parameters {sorted(unknown)}")
    merged = {**defaults, **{k: int(v) for k, v in params.items()}}
    return factory(**merged)


# ---------------------------------------------------------------------------
# Prescribed mean functions
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class MeanFunction:
    """Prescribed estimator mean gamma with value and optional derivative oracle.

    derivative(x, p) returns the mixed partial of gamma of multi-index order p;
    at the zero index it must equal value(x) exactly.  When absent, callers
    fall back to finite differences.
    """

    value: Callable[[np.ndarray], float]
    derivative: Callable[[np.ndarray, MultiIndex], float] | None = None


def mean_partial(gamma: MeanFunction, x0, p, cfg: FDConfig | None = None) -> float:
    """Partial derivative of the mean function, closed-form when available."""
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    p = as_index(p, dim=x0.size)
    if p.order == 0:
        return float(gamma.value(x0))
    if gamma.derivative is not None:
        return float(gamma.derivative(x0, p))
    return partial_derivative(gamma.value, x0, p, cfg)


def constant_mean(c: float) -> MeanFunction:
    c = float(c)
    return MeanFunction(
        value=lambda x: c,
        derivative=lambda x, p: c if as_index(p).order == 0 else 0.0,
    )


def identity_mean(component: int = 0) -> MeanFunction:
    """gamma(x) = x_component."""

    def deriv(x, p):
        p = as_index(p)
        if p.order == 0:
            return float(np.atleast_1d(x)[component])
        if p.order == 1 and p[component] == 1:
            return 1.0
        return 0.0

    return MeanFunction(value=lambda x: float(np.atleast_1d(x)[component]), derivative=deriv)


def polynomial_mean(coeffs) -> MeanFunction:
    """gamma(x) = sum_i coeffs[i] * x^i for a scalar parameter."""
    coeffs = [float(c) for c in coeffs]

    def value(x):
        t = float(np.atleast_1d(x)[0])
        return sum(c * t ** i for i, c in enumerate(coeffs))

    def deriv(x, p):
        p = as_index(p, dim=1)
        m = p[0]
        t = float(np.atleast_1d(x)[0])
        return sum(c * math.perm(i, m) * t ** (i - m)
                   for i, c in enumerate(coeffs) if i >= m)

    return MeanFunction(value=value, derivative=deriv)


def expfam_mean(model: ExponentialFamilyModel, component: int = 0) -> MeanFunction:
    """gamma(x) = E_x{phi_component(y)}, with derivatives from moment algebra.

    The derivative uses the Leibniz expansion of (d^e lambda / lambda); it is
    exact when the family has closed-form moments and falls back to finite
    differences of the moments otherwise.
    """
    e_c = MultiIndex.unit(model.param_dim, component)

    def value(x):
        return moment(model, x, e_c)

    def deriv(x, p):
        p = as_index(p, dim=model.param_dim)
        if p.order == 0:
            return value(x)
        mu = moment_table(model, x, p.plus(e_c))
        nu = reciprocal_series(mu, p)
        return sum(multi_binomial(p, q) * mu[q.plus(e_c)] * nu[p.minus(q)]
                   for q in multi_indices_leq(p))

    return MeanFunction(value=value, derivative=deriv)
