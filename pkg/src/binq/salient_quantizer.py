"""2-bit quantization of the salient subset.

Row-wise scales and a relaxed code matrix are fitted by alternating exact
coordinate updates, then the relaxed values are snapped to centers of an
exponentially adapted level grid. Both half-steps minimize the residual
exactly, so the relaxed residual never increases across iterations.
"""

from dataclasses import dataclass

import numpy as np

from .config import QuantConfig
from .errors import DomainError
from .partitioner import LayerPartition


@dataclass
class SalientQuant:
    """Quantized salient subset: per-row scales plus codes into a level table.

    codes follow row-major traversal of the salient positions; the
    reconstruction at member (i, j) is scales[i] * centers[codes].
    """

    scales: np.ndarray    # (m,) float16 or float32 per configured scale width
    codes: np.ndarray     # (S,) uint8
    centers: np.ndarray   # (2**n_bits,) float64
    mu_b: float
    sigma_b: float
    alpha: float


def fit_rowwise(matrix, part: LayerPartition, iters: int, atol: float = 0.0,
                collect_residuals: bool = False):
    """Alternate row-scale and clipped-relaxation updates on the salient members.

    Returns (scales, relaxed) where relaxed holds one value in [-1, 1] per
    salient member in row-major order. Rows whose relaxed row has zero energy
    keep scale 0 and their members stay at relaxed value 0. atol > 0 stops
    early once no row scale moves by more than atol (the updates are then at
    a fixed point for all practical purposes). With collect_residuals the
    per-iteration squared residuals are returned as a third element.
    """
    if iters < 1:
        raise DomainError(f"iters must be >= 1, got {iters}")
    m = matrix.data.shape[0]
    mask = part.salient_mask()
    rows = np.nonzero(mask)[0]
    w = matrix.data[mask].astype(np.float64)
    relaxed = np.sign(w)
    scales = np.zeros(m, dtype=np.float64)
    residuals: list[float] = []

    for _ in range(iters):
        prev = scales
        num = np.bincount(rows, weights=w * relaxed, minlength=m)
        den = np.bincount(rows, weights=relaxed * relaxed, minlength=m)
        safe = np.where(den > 0.0, den, 1.0)
        scales = np.where(den > 0.0, num / safe, 0.0)
        row_scale = scales[rows]
        active = row_scale != 0.0
        relaxed = np.where(active,
                           np.clip(w / np.where(active, row_scale, 1.0), -1.0, 1.0),
                           relaxed)
        if collect_residuals:
            residuals.append(float(np.sum(np.square(w - row_scale * relaxed))))
        if atol > 0.0 and (scales.size == 0 or np.max(np.abs(scales - prev)) < atol):
            break

    if collect_residuals:
        return scales, relaxed, residuals
    return scales, relaxed


def level_grid(mu: float, sigma: float, n_bits: int, alpha: float):
    """Exponentially spaced quantization levels and their midpoints.

    2**n_bits + 1 linearly spaced anchors d in [-1, 1] map to
    mu + sigma * sign(d) * (alpha * exp(|d|) - 1); centers are midpoints of
    consecutive levels. sigma = 0 collapses every level onto mu.
    """
    if n_bits < 1:
        raise DomainError(f"n_bits must be >= 1, got {n_bits}")
    if alpha <= 0.0:
        raise DomainError(f"alpha must be positive, got {alpha}")
    d = np.linspace(-1.0, 1.0, 2 ** n_bits + 1)
    levels = mu + sigma * np.sign(d) * (alpha * np.exp(np.abs(d)) - 1.0)
    centers = 0.5 * (levels[:-1] + levels[1:])
    return levels, centers


def adaptive_levels(relaxed: np.ndarray, n_bits: int, alpha: float):
    """Level grid anchored at the mean/std of the nonzero relaxed values."""
    nonzero = relaxed[relaxed != 0.0]
    if nonzero.size == 0:
        raise DomainError("adaptive levels need at least one nonzero relaxed value")
    mu_b = float(np.mean(nonzero))
    sigma_b = float(np.std(nonzero))
    return level_grid(mu_b, sigma_b, n_bits, alpha)


def assign_codes(relaxed: np.ndarray, centers: np.ndarray) -> np.ndarray:
    """Nearest-center code per member; ties break to the lower index."""
    if relaxed.size == 0:
        return np.zeros(0, dtype=np.uint8)
    dist = np.abs(relaxed[:, None] - np.asarray(centers, dtype=np.float64)[None, :])
    return np.argmin(dist, axis=1).astype(np.uint8)


def store_scales(values: np.ndarray, width: int) -> np.ndarray:
    """Round scale factors to their stored precision (binary16 or binary32)."""
    if width == 16:
        return np.asarray(values, dtype=np.float16)
    if width == 32:
        return np.asarray(values, dtype=np.float32)
    raise DomainError(f"unsupported scale width {width}")


def store_scalar(value: float, width: int) -> float:
    return float(store_scales(np.asarray([value]), width)[0])


def quantize_salient(matrix, part: LayerPartition, config: QuantConfig) -> SalientQuant:
    """Full salient path: row-wise fit, adaptive levels, code assignment.

    After codes are assigned, each row scale is refitted once with the same
    exact update the relaxation loop uses, now against the discrete center
    values; without this closing step the center mapping rescales every row
    by a factor the relaxed-stage scales were never fitted for. Row scales
    are rounded to the configured storage width so the result is exactly
    what an artifact would hold. An empty salient set yields zero scales,
    no codes, and a degenerate all-zero center table.
    """
    _, relaxed = fit_rowwise(matrix, part, iters=config.iters, atol=config.fit_atol)
    if relaxed.size and np.any(relaxed != 0.0):
        _, centers = adaptive_levels(relaxed, config.n_bits, config.alpha)
        nonzero = relaxed[relaxed != 0.0]
        mu_b = float(np.mean(nonzero))
        sigma_b = float(np.std(nonzero))
    else:
        centers = np.zeros(2 ** config.n_bits, dtype=np.float64)
        mu_b = sigma_b = 0.0
    codes = assign_codes(relaxed, centers)

    m = matrix.data.shape[0]
    mask = part.salient_mask()
    rows = np.nonzero(mask)[0]
    w = matrix.data[mask].astype(np.float64)
    quantized = centers[codes]
    num = np.bincount(rows, weights=w * quantized, minlength=m)
    den = np.bincount(rows, weights=quantized * quantized, minlength=m)
    scales = np.where(den > 0.0, num / np.where(den > 0.0, den, 1.0), 0.0)
    return SalientQuant(scales=store_scales(scales, config.scale_width),
                        codes=codes, centers=centers,
                        mu_b=mu_b, sigma_b=sigma_b, alpha=config.alpha)


def salient_residual(matrix, part: LayerPartition, quant: SalientQuant) -> float:
    """Squared reconstruction error over the salient members."""
    mask = part.salient_mask()
    rows = np.nonzero(mask)[0]
    w = matrix.data[mask].astype(np.float64)
    if w.size == 0:
        return 0.0
    approx = quant.scales.astype(np.float64)[rows] * quant.centers[quant.codes]
    return float(np.sum(np.square(w - approx)))
