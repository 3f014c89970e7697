"""Closed-form 1-bit binarization of the unsalient subsets.

Each subset is represented by its sign pattern and a single nonnegative
scalar; for signs fixed to sign(w) the squared error is minimized exactly
by the mean absolute value of the members.
"""

from dataclasses import dataclass

import numpy as np

from .errors import DomainError
from .partitioner import LayerPartition


@dataclass
class BinarizedSubset:
    """One unsalient subset: scalar times +/-1 signs on its member positions.

    Signs follow row-major traversal of the member positions so packing is
    reproducible. True encodes +1 (the sign of an exact zero weight).
    """

    index: int          # 1-based subset id
    scale: float        # >= 0
    signs: np.ndarray   # bool, one per member


def binarize_subset(matrix, part: LayerPartition, k: int) -> BinarizedSubset:
    """Optimal sign pattern and scalar for unsalient subset k.

    An empty subset yields scale 0 with no signs, which is a valid result.
    """
    members = matrix.data[part.subset_mask(k)].astype(np.float64)
    signs = members >= 0.0
    scale = float(np.mean(np.abs(members))) if members.size else 0.0
    return BinarizedSubset(index=k, scale=scale, signs=signs)


def subset_error(matrix, part: LayerPartition, binarized: BinarizedSubset) -> float:
    """Frobenius-squared residual of the binarized subset over its members."""
    members = matrix.data[part.subset_mask(binarized.index)].astype(np.float64)
    if members.size != binarized.signs.size:
        raise DomainError("binarized subset does not match this partition")
    approx = binarized.scale * np.where(binarized.signs, 1.0, -1.0)
    return float(np.sum(np.square(members - approx)))
