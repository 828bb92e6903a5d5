"""Variance lower bounds realized as orthogonal projections onto subspaces
spanned by kernel evaluations, kernel differences, or kernel derivatives.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .calculus import FDConfig, MultiIndex, as_index, moment_table, multi_binomial, \
    multi_indices_leq
from .errors import ConstraintRankError, DataError, KernelEvaluationError, \
    NaturalSpaceError
from .kernel import ExpfamKernelEvaluator, KernelEvaluator, MonteCarloKernelEvaluator, \
    deriv_inner_products, make_gram_system, projected_sq_norm
from .models import ExponentialFamilyModel, MeanFunction, Model, \
    log_density_batch, mean_partial, sample

METHODS = ("crb", "constrained_crb", "bhattacharyya", "hcrb", "barankin_approx",
           "expfam_moment", "expfam_crb")


@dataclass(frozen=True)
class BoundResult:
    """A variance lower bound with its method tag and numerical diagnostics."""

    value: float
    method: str
    diagnostics: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}")
        if not self.value >= 0.0:
            raise ValueError(f"bound value must be nonnegative, got {self.value}")


@dataclass(frozen=True)
class TestPointSet:
    """Parameter vectors other than x0 used to build difference bases."""

    __test__ = False  # not a pytest case despite the name

    points: tuple
    provenance: str = "user"

    def __init__(self, points: Sequence, provenance: str = "user"):
        pts = tuple(np.atleast_1d(np.asarray(p, dtype=float)) for p in points)
        for i in range(len(pts)):
            for j in range(i + 1, len(pts)):
                if np.max(np.abs(pts[i] - pts[j]), initial=0.0) < 1e-12:
                    raise ValueError(f"duplicate test points at positions {i} and {j}")
        if provenance not in ("user", "grid", "random", "refinement"):
            raise ValueError(f"unknown provenance {provenance!r}")
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "provenance", provenance)

    def __len__(self) -> int:
        return len(self.points)


def _x0(model, x0) -> np.ndarray:
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    if x0.shape != (model.param_dim,):
        raise ValueError(f"x0 shape {x0.shape} does not match param_dim={model.param_dim}")
    return x0


def _quadratic_bound(matrix, rhs, method, pinv_tol, extra=None, offset=0.0) -> BoundResult:
    system = make_gram_system(matrix, rhs, pinv_tol)
    value = projected_sq_norm(system) - offset
    diagnostics = {
        "gram_rank": system.diagnostics["rank"],
        "condition_number": system.diagnostics["condition_number"],
        "min_eigenvalue": system.diagnostics["min_eigenvalue"],
    }
    if system.diagnostics.get("clamped_negative"):
        diagnostics["clamped_negative"] = True
    if value < 0.0:
        diagnostics["clamped_negative"] = True
        value = 0.0
    if extra:
        diagnostics.update(extra)
    return BoundResult(value=value, method=method, diagnostics=diagnostics)


# ---------------------------------------------------------------------------
# Fisher information and Cramer-Rao
# ---------------------------------------------------------------------------

def fisher_info(model: Model, x0, n_mc: int = 100_000, seed: int = 0,
                cfg: FDConfig | None = None) -> np.ndarray:
    """Fisher information matrix at x0.

    For a canonical exponential family this is the covariance of the
    sufficient statistic, computed exactly from moments.  Otherwise the score
    is formed by central differences of the log density and the matrix is the
    Monte Carlo mean of its outer products.
    """
    x0 = _x0(model, x0)
    N = model.param_dim
    if isinstance(model, ExponentialFamilyModel):
        cap = MultiIndex((2,) * N)
        mu = moment_table(model, x0, cap, cfg)
        first = np.array([mu[MultiIndex.unit(N, k)] for k in range(N)])
        J = np.empty((N, N))
        for k in range(N):
            for l in range(k, N):
                second = mu[MultiIndex.unit(N, k).plus(MultiIndex.unit(N, l))]
                J[k, l] = J[l, k] = second - first[k] * first[l]
        return J

    Y = sample(model, x0, seed, n_mc)
    scores = np.empty((len(Y), N))
    steps = np.maximum(1.0, np.abs(x0)) * 1e-4
    for k in range(N):
        e = np.zeros(N)
        e[k] = steps[k]
        scores[:, k] = (log_density_batch(model, Y, x0 + e)
                        - log_density_batch(model, Y, x0 - e)) / (2 * steps[k])
    if not np.all(np.isfinite(scores)):
        bad = np.where(~np.all(np.isfinite(scores), axis=1))[0][:5]
        raise DataError(f"non-finite score at draws {bad.tolist()}")
    return (scores.T @ scores) / len(Y)


def _mean_gradient(gamma: MeanFunction, x0, cfg: FDConfig | None = None) -> np.ndarray:
    N = len(x0)
    return np.array([mean_partial(gamma, x0, MultiIndex.unit(N, k), cfg) for k in range(N)])


def crb(model: Model, gamma: MeanFunction, x0, *, n_mc: int = 100_000, seed: int = 0,
        pinv_tol: float = 1e-10) -> BoundResult:
    """Cramer-Rao bound b' J^+ b with b the mean-function gradient."""
    x0 = _x0(model, x0)
    b = _mean_gradient(gamma, x0)
    J = fisher_info(model, x0, n_mc=n_mc, seed=seed)
    return _quadratic_bound(J, b, "crb", pinv_tol)


def null_space_onb(F) -> np.ndarray:
    """Orthonormal basis of the null space of a full-row-rank constraint Jacobian."""
    F = np.atleast_2d(np.asarray(F, dtype=float))
    Q, N = F.shape
    if Q > N:
        raise ConstraintRankError(f"more constraints ({Q}) than parameters ({N})")
    s = np.linalg.svd(F, compute_uv=False)
    if s[-1] <= 1e-10 * s[0]:
        raise ConstraintRankError(
            "constraint Jacobian is rank deficient; constraints are redundant")
    _, _, vt = np.linalg.svd(F)
    return vt[Q:].T


def constrained_crb(model: Model, gamma: MeanFunction, x0, F=None, *,
                    n_mc: int = 100_000, seed: int = 0,
                    pinv_tol: float = 1e-10) -> BoundResult:
    """Cramer-Rao bound restricted to the null space of the constraint Jacobian F.

    F=None (or zero rows) means no constraints and reduces to the plain bound.
    """
    x0 = _x0(model, x0)
    b = _mean_gradient(gamma, x0)
    J = fisher_info(model, x0, n_mc=n_mc, seed=seed)
    if F is None or np.size(F) == 0:
        return _quadratic_bound(J, b, "constrained_crb", pinv_tol)
    U = null_space_onb(F)
    if U.shape[1] == 0:
        return BoundResult(0.0, "constrained_crb",
                           {"gram_rank": 0, "condition_number": math.inf,
                            "min_eigenvalue": 0.0, "null_space_dim": 0})
    return _quadratic_bound(U.T @ J @ U, U.T @ b, "constrained_crb", pinv_tol,
                            extra={"null_space_dim": U.shape[1]})


# ---------------------------------------------------------------------------
# Bhattacharyya
# ---------------------------------------------------------------------------

def _validate_indices(indices, N, min_order=1) -> list[MultiIndex]:
    idxs = [as_index(p, dim=N) for p in indices]
    if len(set(idxs)) != len(idxs):
        raise ValueError("multi-indices must be distinct")
    for p in idxs:
        if p.order < min_order:
            raise ValueError(f"multi-index {tuple(p)} has order below {min_order}")
        if p.order > 4:
            raise ValueError(f"multi-index {tuple(p)} exceeds the order-4 cap")
    return idxs


def _mc_deriv_ratio_matrix(model, x0, idxs, n_mc, seed):
    """Monte Carlo matrix of E{ D^p rho * D^q rho } with the likelihood-ratio
    derivatives formed per draw by shared central-difference stencils."""
    from .calculus import _STENCILS, default_steps  # stencil tables

    Y = sample(model, x0, seed, n_mc)
    ld0 = log_density_batch(model, Y, x0)
    N = len(x0)
    cache: dict[tuple, np.ndarray] = {}

    def ratios_at(offset_key, point):
        if offset_key not in cache:
            cache[offset_key] = np.exp(log_density_batch(model, Y, point) - ld0)
        return cache[offset_key]

    D = np.empty((len(idxs), len(Y)))
    for i, p in enumerate(idxs):
        steps = default_steps(x0, p)
        axis = [(_STENCILS[o][0], tuple(c / steps[k] ** o for c in _STENCILS[o][1]))
                for k, o in enumerate(p)]
        acc = np.zeros(len(Y))
        from itertools import product as _cartesian
        for combo in _cartesian(*(range(len(a[0])) for a in axis)):
            point = x0.copy()
            weight = 1.0
            key = []
            for k, j in enumerate(combo):
                point[k] += axis[k][0][j] * steps[k]
                weight *= axis[k][1][j]
                key.append(axis[k][0][j])
            acc += weight * ratios_at(tuple(key), point)
        D[i] = acc
    return (D @ D.T) / len(Y)


def bhattacharyya(model: Model, gamma: MeanFunction, x0, indices, *,
                  n_mc: int = 100_000, seed: int = 0,
                  pinv_tol: float = 1e-10) -> BoundResult:
    """Higher-order derivative bound a' B^+ a.

    a stacks partial derivatives of the mean function at x0; B collects the
    inner products of the kernel derivative functions, exact from moments for
    exponential families with closed-form moments.  For other models B is
    estimated by Monte Carlo from finite-difference likelihood-ratio
    derivatives, which caps usable orders at 2 per index.
    """
    x0 = _x0(model, x0)
    idxs = _validate_indices(indices, model.param_dim)
    a = np.array([mean_partial(gamma, x0, p) for p in idxs])
    extra = {}
    if isinstance(model, ExponentialFamilyModel):
        B = deriv_inner_products(model, x0, idxs)
        if model.closed_moments is None:
            extra["moment_fd_fallback"] = True
    else:
        B = _mc_deriv_ratio_matrix(model, x0, idxs, n_mc, seed)
        extra["mc_samples"] = n_mc
    return _quadratic_bound(B, a, "bhattacharyya", pinv_tol, extra=extra)


# ---------------------------------------------------------------------------
# Hammersley-Chapman-Robbins and Barankin
# ---------------------------------------------------------------------------

def _make_evaluator(model, x0, mc_samples, seed) -> KernelEvaluator:
    if isinstance(model, ExponentialFamilyModel):
        return ExpfamKernelEvaluator(model, x0)
    return MonteCarloKernelEvaluator(model, x0, mc_samples, seed)


def _difference_projection(evaluator: KernelEvaluator, gamma: MeanFunction,
                           points: Sequence[np.ndarray], pinv_tol: float):
    """Projection of the centered mean onto the span of kernel differences."""
    x0 = evaluator.x0
    P = np.vstack([x0[None, :]] + [np.atleast_1d(p)[None, :] for p in points])
    K = evaluator.pairwise(P)
    V = K[1:, 1:] - K[1:, :1] - K[:1, 1:] + K[0, 0]
    g0 = float(gamma.value(x0))
    m = np.array([float(gamma.value(np.atleast_1d(p))) for p in points]) - g0
    system = make_gram_system(V, m, pinv_tol)
    value = projected_sq_norm(system)
    return value, system.diagnostics


def _mc_projection_se(evaluator: MonteCarloKernelEvaluator, gamma: MeanFunction,
                      points: Sequence[np.ndarray], pinv_tol: float) -> float:
    """Two-fold sample-split estimate of the Monte Carlo error of the
    difference projection."""
    half = len(evaluator.samples) // 2
    values = []
    for chunk in (evaluator.samples[:half], evaluator.samples[half:]):
        sub = MonteCarloKernelEvaluator(evaluator.model, evaluator.x0,
                                        seed=evaluator.seed, samples=chunk)
        try:
            v, _ = _difference_projection(sub, gamma, points, pinv_tol)
        except (NaturalSpaceError, KernelEvaluationError):
            return math.inf
        values.append(v)
    return abs(values[0] - values[1]) / 2.0


def hcrb(model: Model, gamma: MeanFunction, x0, tps: TestPointSet, *,
         mc_samples: int = 100_000, seed: int = 0,
         pinv_tol: float = 1e-10) -> BoundResult:
    """Test-point bound m' V^+ m built from the difference basis at the
    supplied test points."""
    x0 = _x0(model, x0)
    for p in tps.points:
        if np.max(np.abs(np.atleast_1d(p) - x0), initial=0.0) < 1e-12:
            raise ValueError("test points must exclude the reference parameter x0")
    evaluator = _make_evaluator(model, x0, mc_samples, seed)
    value, diag = _difference_projection(evaluator, gamma, tps.points, pinv_tol)
    diagnostics = {"gram_rank": diag["rank"],
                   "condition_number": diag["condition_number"],
                   "min_eigenvalue": diag["min_eigenvalue"],
                   "n_test_points": len(tps)}
    if diag.get("clamped_negative"):
        diagnostics["clamped_negative"] = True
    if isinstance(evaluator, MonteCarloKernelEvaluator):
        diagnostics["mc_samples"] = evaluator.mc_samples
        diagnostics["mc_standard_error"] = _mc_projection_se(
            evaluator, gamma, tps.points, pinv_tol)
    return BoundResult(value=value, method="hcrb", diagnostics=diagnostics)


@dataclass(frozen=True)
class BarankinSearch:
    """Search configuration for the test-point supremum.

    The search hill-climbs each test-point coordinate with an absolute step
    that halves after every stalled sweep level, restarting from random point
    sets.  Points closer than min_distance to x0 are rejected, as are points
    outside the ball of the given radius around x0 or the optional box.
    """

    initial_points: TestPointSet | None = None
    max_points: int = 4
    restarts: int = 5
    initial_step: float = 0.5
    halvings: int = 8
    max_sweeps_per_level: int = 40
    seed: int = 0
    radius: float | None = 3.0
    lower: tuple | None = None
    upper: tuple | None = None
    min_distance: float = 1e-6

    def __post_init__(self):
        if self.max_points < 1:
            raise ValueError("max_points must be >= 1")
        if self.initial_step <= 0:
            raise ValueError("initial_step must be positive")


def barankin_approx(model: Model, gamma: MeanFunction, x0,
                    search: BarankinSearch | None = None, *,
                    mc_samples: int = 100_000, seed: int | None = None,
                    pinv_tol: float = 1e-10) -> BoundResult:
    """Best test-point projection found by coordinate search with restarts.

    The reported value is the running maximum over every configuration the
    search evaluated, so it never decreases as the search proceeds.
    """
    x0 = _x0(model, x0)
    cfg = search if search is not None else BarankinSearch()
    if seed is not None:
        cfg = replace(cfg, seed=seed)
    evaluator = _make_evaluator(model, x0, mc_samples, cfg.seed)

    lower = np.asarray(cfg.lower, dtype=float) if cfg.lower is not None else None
    upper = np.asarray(cfg.upper, dtype=float) if cfg.upper is not None else None

    def in_domain(pt: np.ndarray) -> bool:
        if np.linalg.norm(pt - x0) < cfg.min_distance:
            return False
        if cfg.radius is not None and np.linalg.norm(pt - x0) > cfg.radius:
            return False
        if lower is not None and np.any(pt < lower):
            return False
        if upper is not None and np.any(pt > upper):
            return False
        return True

    evaluations = 0

    def objective(pts: np.ndarray):
        nonlocal evaluations
        evaluations += 1
        try:
            value, diag = _difference_projection(evaluator, gamma, list(pts), pinv_tol)
        except (NaturalSpaceError, KernelEvaluationError):
            return None, None
        return value, diag

    def random_points(rng) -> np.ndarray | None:
        lo = lower if lower is not None else x0 - (cfg.radius if cfg.radius else 1.0)
        hi = upper if upper is not None else x0 + (cfg.radius if cfg.radius else 1.0)
        pts = np.empty((cfg.max_points, len(x0)))
        for l in range(cfg.max_points):
            for _ in range(100):
                cand = rng.uniform(lo, hi)
                if in_domain(cand):
                    pts[l] = cand
                    break
            else:
                return None
        return pts

    starts: list[np.ndarray] = []
    if cfg.initial_points is not None and len(cfg.initial_points) > 0:
        starts.append(np.vstack([np.atleast_1d(p) for p in cfg.initial_points.points]))
    for r in range(cfg.restarts):
        rng = np.random.default_rng([cfg.seed, r])
        pts = random_points(rng)
        if pts is not None:
            starts.append(pts)

    best_value = 0.0
    best_diag: dict = {}
    best_points: np.ndarray | None = None
    trace = []
    for start_idx, start in enumerate(starts):
        pts = start.copy()
        current, diag = objective(pts)
        if current is None:
            # invalid start (kernel undefined there): any valid move wins
            current = -math.inf
        elif current > best_value:
            best_value, best_diag, best_points = current, diag, pts.copy()
        step = cfg.initial_step
        for _level in range(cfg.halvings):
            for _sweep in range(cfg.max_sweeps_per_level):
                improved = False
                for l in range(len(pts)):
                    for k in range(len(x0)):
                        for direction in (1.0, -1.0):
                            cand = pts.copy()
                            cand[l, k] += direction * step
                            if not in_domain(cand[l]):
                                continue
                            value, diag = objective(cand)
                            if value is not None and value > current:
                                pts, current = cand, value
                                improved = True
                                if value > best_value:
                                    best_value, best_diag = value, diag
                                    best_points = cand.copy()
                if not improved:
                    break
            step *= 0.5
        trace.append({"start": start_idx,
                      "best_value": current if math.isfinite(current) else None})

    diagnostics = {
        "gram_rank": best_diag.get("rank", 0),
        "condition_number": best_diag.get("condition_number", math.inf),
        "min_eigenvalue": best_diag.get("min_eigenvalue", 0.0),
        "evaluations": evaluations,
        "search_trace": trace,
    }
    if best_points is not None:
        diagnostics["best_points"] = [p.tolist() for p in best_points]
    if isinstance(evaluator, MonteCarloKernelEvaluator):
        diagnostics["mc_samples"] = evaluator.mc_samples
        if best_points is not None:
            diagnostics["mc_standard_error"] = _mc_projection_se(
                evaluator, gamma, list(best_points), pinv_tol)
    return BoundResult(value=max(best_value, 0.0), method="barankin_approx",
                       diagnostics=diagnostics)


# ---------------------------------------------------------------------------
# Exponential-family moment bounds
# ---------------------------------------------------------------------------

def expfam_bound(model: ExponentialFamilyModel, gamma: MeanFunction, x0, indices, *,
                 pinv_tol: float = 1e-10, cfg: FDConfig | None = None) -> BoundResult:
    """Closed-form moment bound n' S^+ n - gamma(x0)^2 for canonical
    exponential families.

    n_l combines moments with mean-function derivatives through the Leibniz
    rule; S is the matrix of raw moments at summed multi-indices.
    """
    if not isinstance(model, ExponentialFamilyModel):
        raise TypeError("expfam_bound requires an ExponentialFamilyModel")
    x0 = _x0(model, x0)
    idxs = _validate_indices(indices, model.param_dim, min_order=0)
    cap = MultiIndex(tuple(max(p[k] for p in idxs) for k in range(model.param_dim)))
    mu = moment_table(model, x0, cap.plus(cap), cfg)
    n_vec = np.array([
        sum(multi_binomial(p, q) * mu[p.minus(q)] * mean_partial(gamma, x0, q)
            for q in multi_indices_leq(p))
        for p in idxs
    ])
    S = np.empty((len(idxs), len(idxs)))
    for i, p in enumerate(idxs):
        for j, q in enumerate(idxs):
            S[i, j] = mu[p.plus(q)]
    extra = {"moment_fd_fallback": True} if model.closed_moments is None else None
    g0 = float(gamma.value(x0))
    return _quadratic_bound(S, n_vec, "expfam_moment", pinv_tol, extra=extra,
                            offset=g0 * g0)


def expfam_crb(model: ExponentialFamilyModel, gamma: MeanFunction, x0, *,
               pinv_tol: float = 1e-10, cfg: FDConfig | None = None) -> BoundResult:
    """Cramer-Rao bound for a canonical exponential family, with the Fisher
    information formed as the covariance of the sufficient statistic."""
    if not isinstance(model, ExponentialFamilyModel):
        raise TypeError("expfam_crb requires an ExponentialFamilyModel")
    x0 = _x0(model, x0)
    b = _mean_gradient(gamma, x0)
    J = fisher_info(model, x0, cfg=cfg)
    return _quadratic_bound(J, b, "expfam_crb", pinv_tol)


# ---------------------------------------------------------------------------
# Method dispatch shared by the harness and the CLI
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class MethodSpec:
    """A bound method by name plus its per-method options."""

    name: str
    options: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.name not in METHODS:
            raise ValueError(f"unknown method {self.name!r}; known: {METHODS}")


def evaluate_bound(model: Model, gamma: MeanFunction, x0, spec: MethodSpec, *,
                   mc_samples: int = 100_000, seed: int = 0,
                   pinv_tol: float = 1e-10) -> BoundResult:
    opts = dict(spec.options)
    if spec.name == "crb":
        return crb(model, gamma, x0, n_mc=mc_samples, seed=seed, pinv_tol=pinv_tol)
    if spec.name == "expfam_crb":
        return expfam_crb(model, gamma, x0, pinv_tol=pinv_tol)
    if spec.name == "constrained_crb":
        return constrained_crb(model, gamma, x0, opts.get("constraint"),
                               n_mc=mc_samples, seed=seed, pinv_tol=pinv_tol)
    if spec.name == "bhattacharyya":
        return bhattacharyya(model, gamma, x0, opts["indices"],
                             n_mc=mc_samples, seed=seed, pinv_tol=pinv_tol)
    if spec.name == "expfam_moment":
        return expfam_bound(model, gamma, x0, opts["indices"], pinv_tol=pinv_tol)
    if spec.name == "hcrb":
        tps = TestPointSet(opts["points"])
        return hcrb(model, gamma, x0, tps, mc_samples=mc_samples, seed=seed,
                    pinv_tol=pinv_tol)
    if spec.name == "barankin_approx":
        known = {"initial_points", "max_points", "restarts", "initial_step",
                 "halvings", "max_sweeps_per_level", "seed", "radius",
                 "lower", "upper", "min_distance"}
        unknown = set(opts) - known
        if unknown:
            raise ValueError(f"unknown barankin options {sorted(unknown)}")
        if "initial_points" in opts and opts["initial_points"] is not None \
                and not isinstance(opts["initial_points"], TestPointSet):
            opts["initial_points"] = TestPointSet(opts["initial_points"])
        search = BarankinSearch(seed=seed, **opts) if "seed" not in opts \
            else BarankinSearch(**opts)
        return barankin_approx(model, gamma, x0, search, mc_samples=mc_samples,
                               pinv_tol=pinv_tol)
    raise AssertionError(spec.name)
