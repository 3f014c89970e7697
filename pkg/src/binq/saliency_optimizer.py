"""Per-layer search for the salient share that minimizes reconstruction error.

The objective J is the hybrid quantization residual normalized by the
layer's squared Frobenius norm. A bounded Brent search (parabolic steps
with golden-section fallback) minimizes J over [0, p_sal_max]; because the
quantile cutoffs move in discrete steps J need not be unimodal, so the
search result is additionally compared against both interval endpoints and
the overall best is returned.
"""

import math
from dataclasses import dataclass, replace

import numpy as np

from .config import QuantConfig
from .errors import DomainError, OptimizationError
from .partitioner import partition
from .salient_quantizer import quantize_salient, salient_residual, store_scalar
from .unsalient_binarizer import binarize_subset, subset_error
from .weight_stats import GaussianFit

_GOLDEN = 0.3819660112501051
_SQRT_EPS = 1.4901161193847656e-08


@dataclass(frozen=True)
class ObjectiveEval:
    """One evaluation of the normalized reconstruction objective."""

    p_sal: float
    j: float
    salient_residual: float
    unsalient_residuals: tuple[float, ...]
    denom: float


def hybrid_quantize(matrix, fit: GaussianFit, p_sal: float, config: QuantConfig):
    """Partition at a fixed salient share and quantize both branches.

    Subset scalars are rounded to the configured storage width, matching
    what an artifact would hold, so residuals are storage-faithful.
    """
    part = partition(matrix, fit, p_sal, config.n_uns)
    salq = quantize_salient(matrix, part, config)
    subsets = []
    for k in range(1, config.n_uns + 1):
        sub = binarize_subset(matrix, part, k)
        sub.scale = store_scalar(sub.scale, config.scale_width)
        subsets.append(sub)
    return part, salq, subsets


def evaluate_objective(matrix, fit: GaussianFit, p_sal: float,
                       config: QuantConfig) -> ObjectiveEval:
    """Normalized reconstruction error of the full hybrid pipeline at p_sal."""
    p_cap = config.resolve_p_sal_max(matrix.role)
    if not 0.0 <= p_sal <= p_cap:
        raise DomainError(f"p_sal={p_sal} outside [0, {p_cap}]")
    denom = float(np.sum(np.square(matrix.data.astype(np.float64))))
    if denom == 0.0:
        raise DomainError("objective undefined for an all-zero matrix")
    part, salq, subsets = hybrid_quantize(matrix, fit, p_sal, config)
    sal_res = salient_residual(matrix, part, salq)
    uns_res = tuple(subset_error(matrix, part, s) for s in subsets)
    total = sal_res + sum(uns_res)
    return ObjectiveEval(p_sal=p_sal, j=total / denom, salient_residual=sal_res,
                         unsalient_residuals=uns_res, denom=denom)


def _checked_eval(f, x: float) -> float:
    fx = f(x)
    if not math.isfinite(fx):
        raise OptimizationError(f"objective returned non-finite value {fx} at {x}")
    return fx


def brent_minimize(f, lo: float, hi: float, tol: float, max_iters: int,
                   full_output: bool = False):
    """Bounded scalar minimization: parabolic steps with golden-section fallback.

    Stops once the bracket width drops to tol (or the classic proximity
    criterion fires, or max_iters evaluations are spent). The function is
    never evaluated outside [lo, hi]. Returns (x, f(x)); with full_output,
    (x, f(x), iterations).
    """
    if not lo < hi:
        raise DomainError(f"invalid bracket [{lo}, {hi}]")
    if tol <= 0.0:
        raise DomainError(f"tol must be positive, got {tol}")
    a, b = lo, hi
    x = w = v = a + _GOLDEN * (b - a)
    fx = fw = fv = _checked_eval(f, x)
    d = e = 0.0
    iters = 0
    while iters < max_iters:
        if b - a <= tol:
            break
        mid = 0.5 * (a + b)
        tol1 = _SQRT_EPS * abs(x) + tol / 4.0
        tol2 = 2.0 * tol1
        if abs(x - mid) <= tol2 - 0.5 * (b - a):
            break

        use_golden = True
        if abs(e) > tol1:
            # Parabola through (x, fx), (w, fw), (v, fv).
            r = (x - w) * (fx - fv)
            q = (x - v) * (fx - fw)
            p = (x - v) * q - (x - w) * r
            q = 2.0 * (q - r)
            if q > 0.0:
                p = -p
            q = abs(q)
            r, e = e, d
            if abs(p) < abs(0.5 * q * r) and p > q * (a - x) and p < q * (b - x):
                d = p / q
                u = x + d
                if u - a < tol2 or b - u < tol2:
                    d = tol1 if x < mid else -tol1
                use_golden = False
        if use_golden:
            e = (a if x >= mid else b) - x
            d = _GOLDEN * e

        step = d if abs(d) >= tol1 else math.copysign(tol1, d)
        u = min(max(x + step, a), b)
        fu = _checked_eval(f, u)
        iters += 1

        if fu <= fx:
            if u >= x:
                a = x
            else:
                b = x
            v, fv, w, fw, x, fx = w, fw, x, fx, u, fu
        else:
            if u < x:
                a = u
            else:
                b = u
            if fu <= fw or w == x:
                v, fv, w, fw = w, fw, u, fu
            elif fu <= fv or v == x or v == w:
                v, fv = u, fu

    if full_output:
        return x, fx, iters
    return x, fx


def optimize_saliency(matrix, fit: GaussianFit, config: QuantConfig) -> float:
    """Best salient share in [0, p_sal_max] under the normalized objective.

    Evaluations are memoized on the share rounded to 1e-6. The Brent result
    is compared against both endpoints, so the returned share is never worse
    than either bound; ties prefer the smaller (cheaper) share.
    """
    p_cap = config.resolve_p_sal_max(matrix.role)
    if not 0.0 < p_cap < 1.0:
        raise DomainError(f"p_sal_max must lie in (0, 1), got {p_cap}")
    if fit.sigma == 0.0:
        return 0.0

    cache: dict[float, float] = {}

    def j_of(p: float) -> float:
        key = round(min(max(p, 0.0), p_cap), 6)
        if key not in cache:
            cache[key] = evaluate_objective(matrix, fit, key, config).j
        return cache[key]

    x_int, f_int = brent_minimize(j_of, 0.0, p_cap, tol=1e-4 * p_cap, max_iters=50)
    candidates = [(j_of(0.0), 0.0), (j_of(p_cap), p_cap),
                  (f_int, round(min(max(x_int, 0.0), p_cap), 6))]
    best_j = min(j for j, _ in candidates)
    best_p = min(p for j, p in candidates if j <= best_j)
    return best_p


def sweep_thresholds(matrix, fit: GaussianFit, thresholds, config: QuantConfig):
    """Objective evaluated directly at each saliency threshold (no search)."""
    out = []
    for t in thresholds:
        if not 0.0 < t < 1.0:
            raise DomainError(f"threshold {t} outside (0, 1)")
        cfg = replace(config, p_sal_max=t)
        out.append(evaluate_objective(matrix, fit, t, cfg))
    return out
