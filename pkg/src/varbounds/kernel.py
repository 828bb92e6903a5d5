"""Likelihood-ratio kernel of an estimation problem, Gram-system assembly,
and projected squared norms.

For a canonical exponential family the kernel has the closed form

    R(x1, x2) = lambda(x1 + x2 - x0) * lambda(x0) / (lambda(x1) * lambda(x2)),

valid whenever x1 + x2 - x0 lies in the natural parameter space.  For any
other model it is estimated by Monte Carlo as the mean of products of
likelihood ratios over draws from the reference parameter x0.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .calculus import FDConfig, MultiIndex, as_index, moment_table, multi_binomial, \
    multi_indices_leq, partial_derivative, reciprocal_series, MAX_FD_ORDER
from .errors import KernelEvaluationError, NaturalSpaceError
from .models import ExponentialFamilyModel, MeanFunction, Model, \
    log_density_batch, mean_partial, natural_space_contains, sample


def kernel_expfam(model: ExponentialFamilyModel, x0, x1, x2) -> float:
    """Closed-form kernel value for a canonical exponential family."""
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    x1 = np.atleast_1d(np.asarray(x1, dtype=float))
    x2 = np.atleast_1d(np.asarray(x2, dtype=float))
    for x in (x0, x1, x2):
        if not natural_space_contains(model, x):
            raise NaturalSpaceError(x)
    s = x1 + x2 - x0
    lls = float(model.log_lambda(s))
    if not math.isfinite(lls):
        raise NaturalSpaceError(s, context="x1 + x2 - x0 must lie in the natural space")
    # grouping keeps the result bitwise symmetric in (x1, x2)
    return math.exp(lls + float(model.log_lambda(x0))
                    - (float(model.log_lambda(x1)) + float(model.log_lambda(x2))))


class ExpfamKernelEvaluator:
    """Closed-form kernel evaluator anchored at a reference parameter x0."""

    mode = "expfam_closed_form"

    def __init__(self, model: ExponentialFamilyModel, x0):
        if not isinstance(model, ExponentialFamilyModel):
            raise TypeError("closed-form kernel evaluation needs an ExponentialFamilyModel")
        self.model = model
        self.x0 = np.atleast_1d(np.asarray(x0, dtype=float))
        if not natural_space_contains(model, self.x0):
            raise NaturalSpaceError(self.x0)

    def evaluate(self, x1, x2) -> float:
        return kernel_expfam(self.model, self.x0, x1, x2)

    def pairwise(self, points: np.ndarray) -> np.ndarray:
        """Kernel matrix over rows of `points`, vectorized through log_lambda."""
        P = np.atleast_2d(np.asarray(points, dtype=float))
        lls = np.asarray(self.model.log_lambda(P), dtype=float)
        if not np.all(np.isfinite(lls)):
            raise NaturalSpaceError(P[~np.isfinite(lls)][0])
        sums = P[:, None, :] + P[None, :, :] - self.x0
        ll_sums = np.asarray(self.model.log_lambda(sums.reshape(-1, P.shape[1])), dtype=float)
        if not np.all(np.isfinite(ll_sums)):
            bad = sums.reshape(-1, P.shape[1])[~np.isfinite(ll_sums)][0]
            raise NaturalSpaceError(bad, context="x1 + x2 - x0 must lie in the natural space")
        ll0 = float(self.model.log_lambda(self.x0))
        expo = ll_sums.reshape(len(P), len(P)) + ll0 - (lls[:, None] + lls[None, :])
        with np.errstate(over="ignore"):  # overflow is detected and raised below
            K = np.exp(expo)
        if not np.all(np.isfinite(K)):
            raise KernelEvaluationError("kernel value overflowed for a point pair")
        return K


@dataclass(frozen=True)
class MCKernelEstimate:
    value: float
    stderr: float
    heavy_tail_warning: bool = False


class MonteCarloKernelEvaluator:
    """Kernel estimates from one frozen sample set drawn at x0.

    Reusing the same draws for all point pairs makes every empirical Gram
    matrix positive semidefinite by construction and keeps results
    reproducible.
    """

    mode = "monte_carlo"

    def __init__(self, model: Model, x0, mc_samples: int = 100_000, seed: int = 0,
                 samples: np.ndarray | None = None):
        if mc_samples < 2:
            raise ValueError("mc_samples must be >= 2")
        self.model = model
        self.x0 = np.atleast_1d(np.asarray(x0, dtype=float))
        self.seed = int(seed)
        self.samples = sample(model, self.x0, seed, mc_samples) if samples is None \
            else np.asarray(samples, dtype=float)
        self.mc_samples = len(self.samples)
        if self.mc_samples < 2:
            raise ValueError("need at least 2 samples")
        self._ld0 = log_density_batch(model, self.samples, self.x0)

    def _ratios(self, x) -> np.ndarray:
        ld = log_density_batch(self.model, self.samples, x)
        return np.exp(ld - self._ld0)

    def evaluate(self, x1, x2) -> float:
        return self.evaluate_with_se(x1, x2).value

    def evaluate_with_se(self, x1, x2) -> MCKernelEstimate:
        prod = self._ratios(x1) * self._ratios(x2)
        n = len(prod)
        value = float(prod.mean())
        stderr = float(prod.std(ddof=1) / math.sqrt(n))
        # heavy-tail symptom: when a single draw dominates the sum, the
        # standard error cannot be trusted to shrink like 1/sqrt(n)
        total = float(prod.sum())
        dominance = float(prod.max()) / total if total > 0 else 0.0
        heavy = dominance > max(0.01, 50.0 / n)
        return MCKernelEstimate(value=value, stderr=stderr, heavy_tail_warning=heavy)

    def pairwise(self, points: np.ndarray) -> np.ndarray:
        P = np.atleast_2d(np.asarray(points, dtype=float))
        R = np.stack([self._ratios(p) for p in P])
        K = (R @ R.T) / R.shape[1]
        if not np.all(np.isfinite(K)):
            raise KernelEvaluationError("Monte Carlo kernel produced non-finite values")
        return K


KernelEvaluator = ExpfamKernelEvaluator | MonteCarloKernelEvaluator


def kernel_mc(model: Model, x0, x1, x2, n: int = 100_000, seed: int = 0) -> MCKernelEstimate:
    """One-shot Monte Carlo kernel estimate with its standard error."""
    return MonteCarloKernelEvaluator(model, x0, n, seed).evaluate_with_se(x1, x2)


# ---------------------------------------------------------------------------
# Derivative functions of the kernel
# ---------------------------------------------------------------------------

def derivative_kernel_function(evaluator: ExpfamKernelEvaluator, p, x_eval,
                               cfg: FDConfig | None = None) -> float:
    """Value at x_eval of the kernel partial derivative taken in the second
    slot at x0, computed by central finite differences."""
    if evaluator.mode != "expfam_closed_form":
        raise ValueError("derivative kernel functions require the closed-form evaluator")
    p = as_index(p, dim=evaluator.model.param_dim)
    x_eval = np.atleast_1d(np.asarray(x_eval, dtype=float))
    if p.order == 0:
        return evaluator.evaluate(x_eval, evaluator.x0)
    return partial_derivative(lambda z: evaluator.evaluate(x_eval, z),
                              evaluator.x0, p, cfg)


def _has_closed_moments(model) -> bool:
    return isinstance(model, ExponentialFamilyModel) and model.closed_moments is not None


def _exact_tables(model, x0, indices: Sequence[MultiIndex]):
    """Moment and reciprocal-derivative tables sufficient for all pairwise
    inner products among derivative functions of the given orders."""
    cap = MultiIndex(tuple(max(p[k] for p in indices) for k in range(model.param_dim)))
    mu = moment_table(model, x0, cap.plus(cap))
    nu = reciprocal_series(mu, cap)
    return mu, nu


def _exact_deriv_inner(mu, nu, p1: MultiIndex, p2: MultiIndex) -> float:
    """<r^(p1), r^(p2)> from the Leibniz expansion of the closed-form kernel."""
    total = 0.0
    for q1 in multi_indices_leq(p1):
        c1 = multi_binomial(p1, q1) * nu[p1.minus(q1)]
        for q2 in multi_indices_leq(p2):
            total += c1 * multi_binomial(p2, q2) * mu[q1.plus(q2)] * nu[p2.minus(q2)]
    return total


def _exact_point_deriv(model, x0_nu, p: MultiIndex, a) -> float:
    """r^(p)(a) from moments at a and reciprocal derivatives at x0."""
    mu_a = moment_table(model, a, p)
    return sum(multi_binomial(p, q) * mu_a[q] * x0_nu[p.minus(q)]
               for q in multi_indices_leq(p))


def _fd_deriv_inner(model, x0, p1: MultiIndex, p2: MultiIndex,
                    cfg: FDConfig | None = None) -> float:
    """Mixed kernel derivative in both slots by one tensor stencil over the
    stacked (x1, x2) variables.  Total order is capped at MAX_FD_ORDER."""
    if p1.order + p2.order > MAX_FD_ORDER:
        raise ValueError(
            f"combined derivative order {p1.order + p2.order} exceeds the "
            f"finite-difference cap {MAX_FD_ORDER}; supply closed-form moments")
    N = model.param_dim
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    stacked = np.concatenate([x0, x0])

    def f(z):
        return kernel_expfam(model, x0, z[:N], z[N:])

    return partial_derivative(f, stacked, MultiIndex(tuple(p1) + tuple(p2)), cfg)


def deriv_inner_products(model: ExponentialFamilyModel, x0,
                         indices: Sequence, cfg: FDConfig | None = None) -> np.ndarray:
    """Matrix of inner products among kernel derivative functions at x0.

    Exact via moment algebra when the family has closed-form moments,
    finite differences of the closed-form kernel otherwise.
    """
    idxs = [as_index(p, dim=model.param_dim) for p in indices]
    L = len(idxs)
    out = np.empty((L, L))
    if _has_closed_moments(model):
        mu, nu = _exact_tables(model, x0, idxs)
        for i in range(L):
            for j in range(i, L):
                out[i, j] = out[j, i] = _exact_deriv_inner(mu, nu, idxs[i], idxs[j])
    else:
        for i in range(L):
            for j in range(i, L):
                out[i, j] = out[j, i] = _fd_deriv_inner(model, x0, idxs[i], idxs[j], cfg)
    return out


# ---------------------------------------------------------------------------
# Gram systems
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PointBasis:
    """Basis function u = R(., x)."""
    x: np.ndarray


@dataclass(frozen=True)
class DiffBasis:
    """Basis function u = R(., x) - R(., x0)."""
    x: np.ndarray


@dataclass(frozen=True)
class DerivBasis:
    """Basis function u = r^(p), the kernel derivative function at x0."""
    p: tuple


@dataclass(frozen=True)
class GramSystem:
    """Gram matrix, right-hand side of inner products with the mean function,
    pseudoinverse truncation tolerance, and conditioning diagnostics."""

    matrix: np.ndarray
    rhs: np.ndarray
    pinv_tol: float = 1e-10
    diagnostics: dict = field(default_factory=dict)


def make_gram_system(G: np.ndarray, rhs: np.ndarray, pinv_tol: float = 1e-10) -> GramSystem:
    G = np.atleast_2d(np.asarray(G, dtype=float))
    rhs = np.atleast_1d(np.asarray(rhs, dtype=float))
    if G.shape[0] != G.shape[1] or G.shape[0] != rhs.size:
        raise ValueError(f"incompatible Gram shapes {G.shape} and {rhs.shape}")
    scale = float(np.abs(G).max()) if G.size else 0.0
    if G.size and float(np.abs(G - G.T).max()) > 1e-12 * max(1.0, scale):
        raise ValueError("Gram matrix is not symmetric")
    if G.size:
        s = np.linalg.svd(G, compute_uv=False, hermitian=True)
        smax = float(s[0])
        rank = int(np.sum(s > pinv_tol * smax)) if smax > 0 else 0
        cond = float(smax / s[-1]) if s[-1] > 0 else math.inf
        min_eig = float(np.linalg.eigvalsh(G)[0])
    else:
        smax, rank, cond, min_eig = 0.0, 0, math.inf, 0.0
    return GramSystem(matrix=G, rhs=rhs, pinv_tol=float(pinv_tol),
                      diagnostics={"rank": rank, "min_eigenvalue": min_eig,
                                   "condition_number": cond})


def projected_sq_norm(system: GramSystem) -> float:
    """rhs' G^+ rhs with relative singular-value truncation, clamped at zero."""
    G, rhs = system.matrix, system.rhs
    if G.size == 0:
        return 0.0
    u, s, vt = np.linalg.svd(G, hermitian=True)
    smax = s[0]
    if smax <= 0:
        return 0.0
    keep = s > system.pinv_tol * smax
    coeff = (u.T[keep] @ rhs) * (vt[keep] @ rhs) / s[keep]
    value = float(coeff.sum())
    if value < 0.0:
        system.diagnostics["clamped_negative"] = True
        return 0.0
    return value


def gram(evaluator: KernelEvaluator, basis: Sequence) -> np.ndarray:
    """Gram matrix of inner products among basis functions, assembled from
    kernel values and kernel derivatives via the reproducing property."""
    x0 = evaluator.x0
    L = len(basis)
    G = np.empty((L, L))
    k00 = evaluator.evaluate(x0, x0)
    deriv_cache: dict[tuple, Callable] = {}

    if any(isinstance(b, DerivBasis) for b in basis):
        if evaluator.mode != "expfam_closed_form":
            raise ValueError("derivative basis functions require the closed-form evaluator")
        model = evaluator.model
        exact = _has_closed_moments(model)
        idxs = [as_index(b.p, dim=model.param_dim) for b in basis if isinstance(b, DerivBasis)]
        if exact:
            mu, nu = _exact_tables(model, x0, idxs)

        def deriv_value(p, a):
            if exact:
                return _exact_point_deriv(model, nu, p, a)
            return derivative_kernel_function(evaluator, p, a)

        def deriv_pair(p, q):
            if exact:
                return _exact_deriv_inner(mu, nu, p, q)
            return _fd_deriv_inner(model, x0, p, q)
    else:
        def deriv_value(p, a):  # pragma: no cover - unreachable without DerivBasis
            raise AssertionError
        deriv_pair = deriv_value

    def inner(bi, bj) -> float:
        if isinstance(bi, PointBasis):
            if isinstance(bj, PointBasis):
                return evaluator.evaluate(bi.x, bj.x)
            if isinstance(bj, DiffBasis):
                return evaluator.evaluate(bi.x, bj.x) - evaluator.evaluate(bi.x, x0)
            return deriv_value(as_index(bj.p, dim=len(x0)), np.asarray(bi.x, dtype=float))
        if isinstance(bi, DiffBasis):
            if isinstance(bj, PointBasis):
                return inner(bj, bi)
            if isinstance(bj, DiffBasis):
                return (evaluator.evaluate(bi.x, bj.x) - evaluator.evaluate(bi.x, x0)
                        - evaluator.evaluate(x0, bj.x) + k00)
            p = as_index(bj.p, dim=len(x0))
            return (deriv_value(p, np.asarray(bi.x, dtype=float))
                    - deriv_value(p, x0))
        # bi is DerivBasis
        if isinstance(bj, DerivBasis):
            return deriv_pair(as_index(bi.p, dim=len(x0)), as_index(bj.p, dim=len(x0)))
        return inner(bj, bi)

    for i in range(L):
        for j in range(i, L):
            G[i, j] = G[j, i] = inner(basis[i], basis[j])
    return G


def gram_rhs(evaluator: KernelEvaluator, basis: Sequence, gamma: MeanFunction) -> np.ndarray:
    """Inner products of the mean function with each basis function, obtained
    by the reproducing property: evaluation for point bases, differences for
    difference bases, partial derivatives for derivative bases."""
    x0 = evaluator.x0
    g0 = float(gamma.value(x0))
    out = np.empty(len(basis))
    for i, b in enumerate(basis):
        if isinstance(b, PointBasis):
            out[i] = float(gamma.value(np.asarray(b.x, dtype=float)))
        elif isinstance(b, DiffBasis):
            out[i] = float(gamma.value(np.asarray(b.x, dtype=float))) - g0
        else:
            out[i] = mean_partial(gamma, x0, b.p)
    return out


def gram_system(evaluator: KernelEvaluator, basis: Sequence, gamma: MeanFunction,
                pinv_tol: float = 1e-10) -> GramSystem:
    return make_gram_system(gram(evaluator, basis), gram_rhs(evaluator, basis, gamma),
                            pinv_tol)


# ---------------------------------------------------------------------------
# Kernel invariance under sufficient statistics
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SufficientStatistic:
    """A statistic map z = t(y) together with the statistical model it induces."""

    map: Callable[[np.ndarray], np.ndarray]
    induced_model: Model


@dataclass(frozen=True)
class ProbePairResult:
    x1: np.ndarray
    x2: np.ndarray
    value_original: float
    value_induced: float
    abs_difference: float
    combined_se: float | None
    within_tolerance: bool


@dataclass(frozen=True)
class SuffStatReport:
    mode: str
    tolerance: float
    pairs: list[ProbePairResult]
    #: Monte Carlo mode only: worst pointwise gap between the likelihood
    #: ratio of the original model and the ratio of the induced model
    #: evaluated on transformed draws z = t(y).
    factorization_gap: float | None = None

    @property
    def flagged(self) -> list[ProbePairResult]:
        return [p for p in self.pairs if not p.within_tolerance]


def suffstat_kernel_check(model: Model, statistic: SufficientStatistic, x0,
                          probe_pairs: Sequence, n: int = 100_000, seed: int = 0,
                          tolerance: float = 1e-9, mode: str = "auto",
                          se_multiplier: float = 4.0) -> SuffStatReport:
    """Compare the kernel of the original model against the kernel of the
    model induced by a statistic, pair by pair.

    mode "auto" uses closed forms when both models are exponential families,
    Monte Carlo otherwise; mode "mc" forces Monte Carlo.  In Monte Carlo mode
    each model uses its own draws (same seed, so the trivial statistic gives
    an exactly zero difference), a pair is flagged when the difference
    exceeds se_multiplier combined standard errors, and the report also
    carries the worst pointwise likelihood-ratio gap between the original
    model and the induced model evaluated on transformed draws.
    """
    induced = statistic.induced_model
    both_expfam = isinstance(model, ExponentialFamilyModel) and \
        isinstance(induced, ExponentialFamilyModel)
    if mode == "auto":
        mode = "closed_form" if both_expfam else "mc"
    if mode not in ("closed_form", "mc"):
        raise ValueError(f"unknown mode {mode!r}")
    if mode == "closed_form" and not both_expfam:
        raise ValueError("closed-form comparison needs two exponential-family models")

    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    pairs: list[ProbePairResult] = []
    if mode == "closed_form":
        for x1, x2 in probe_pairs:
            vy = kernel_expfam(model, x0, x1, x2)
            vz = kernel_expfam(induced, x0, x1, x2)
            diff = abs(vy - vz)
            pairs.append(ProbePairResult(
                x1=np.atleast_1d(np.asarray(x1, dtype=float)),
                x2=np.atleast_1d(np.asarray(x2, dtype=float)),
                value_original=vy, value_induced=vz, abs_difference=diff,
                combined_se=None, within_tolerance=diff <= tolerance))
        return SuffStatReport(mode=mode, tolerance=tolerance, pairs=pairs)

    ev_y = MonteCarloKernelEvaluator(model, x0, n, seed)
    ev_z = MonteCarloKernelEvaluator(induced, x0, n, seed)
    for x1, x2 in probe_pairs:
        ry = ev_y.evaluate_with_se(x1, x2)
        rz = ev_z.evaluate_with_se(x1, x2)
        diff = abs(ry.value - rz.value)
        se = math.hypot(ry.stderr, rz.stderr)
        pairs.append(ProbePairResult(
            x1=np.atleast_1d(np.asarray(x1, dtype=float)),
            x2=np.atleast_1d(np.asarray(x2, dtype=float)),
            value_original=ry.value, value_induced=rz.value, abs_difference=diff,
            combined_se=se, within_tolerance=diff <= se_multiplier * se))

    # pointwise factorization check: the likelihood ratio must be a function
    # of the statistic alone, so both models give the same ratio per draw
    probe_x = np.atleast_1d(np.asarray(probe_pairs[0][0], dtype=float)) if probe_pairs \
        else x0
    sub = ev_y.samples[: min(1000, len(ev_y.samples))]
    z_sub = np.atleast_2d(np.asarray(statistic.map(sub), dtype=float))
    ratio_y = np.exp(log_density_batch(model, sub, probe_x)
                     - log_density_batch(model, sub, x0))
    ratio_z = np.exp(log_density_batch(induced, z_sub, probe_x)
                     - log_density_batch(induced, z_sub, x0))
    gap = float(np.max(np.abs(ratio_y - ratio_z))) if len(sub) else 0.0
    return SuffStatReport(mode=mode, tolerance=tolerance, pairs=pairs,
                          factorization_gap=gap)
