import itertools

import numpy as np
import pytest

from binq import Role, WeightMatrix
from binq.partitioner import partition
from binq.unsalient_binarizer import binarize_subset, subset_error
from binq.weight_stats import fit_gaussian


def single_subset(values):
    """Partition placing every element in unsalient subset 1."""
    from binq.partitioner import LayerPartition, PartitionSpec
    mat = WeightMatrix("t", Role.LANGUAGE,
                       np.asarray(values, np.float32).reshape(1, -1))
    spec = PartitionSpec(p_sal=0.0, n_uns=1, z_cutoffs=(7.0,), mu=0.0, sigma=1.0)
    part = LayerPartition(labels=np.zeros(mat.data.shape, np.int8), spec=spec)
    return mat, part


def exhaustive_best(values):
    """Best squared error over all sign patterns with per-pattern optimal scalar."""
    w = np.asarray(values, dtype=np.float64)
    best = np.inf
    for signs in itertools.product((-1.0, 1.0), repeat=w.size):
        b = np.array(signs)
        denom = float(np.sum(b * b))
        a = float(np.sum(w * b)) / denom
        err = float(np.sum((w - a * b) ** 2))
        best = min(best, err)
    return best


class TestBinarizeSubset:
    def test_exactly_representable(self):
        mat, part = single_subset([3.0, 3.0, 3.0])
        sub = binarize_subset(mat, part, 1)
        assert sub.scale == pytest.approx(3.0)
        assert np.all(sub.signs)
        assert subset_error(mat, part, sub) == pytest.approx(0.0, abs=1e-12)

    def test_one_three(self):
        mat, part = single_subset([1.0, 3.0])
        sub = binarize_subset(mat, part, 1)
        assert sub.scale == pytest.approx(2.0)
        assert list(sub.signs) == [True, True]
        assert subset_error(mat, part, sub) == pytest.approx(2.0, abs=1e-10)
        # scalar grid + all four sign patterns confirm the minimum
        grid = np.arange(0.0, 5.0, 1e-4)[:, None]
        w = np.array([1.0, 3.0])
        best = np.inf
        for signs in ([1, 1], [1, -1], [-1, 1], [-1, -1]):
            errs = np.sum((w[None, :] - grid * np.array(signs)) ** 2, axis=1)
            best = min(best, float(errs.min()))
        assert subset_error(mat, part, sub) <= best + 1e-9

    def test_symmetric_pair(self):
        mat, part = single_subset([-2.0, 2.0])
        sub = binarize_subset(mat, part, 1)
        assert sub.scale == pytest.approx(2.0)
        assert list(sub.signs) == [False, True]
        assert subset_error(mat, part, sub) == pytest.approx(0.0, abs=1e-12)

    def test_zero_member_sign_convention(self):
        mat, part = single_subset([0.0, 1.0])
        sub = binarize_subset(mat, part, 1)
        assert list(sub.signs) == [True, True]
        assert sub.scale == pytest.approx(0.5)

    def test_empty_subset(self):
        mat = WeightMatrix("t", Role.LANGUAGE,
                           np.array([[1e-3, 10.0, -10.0, 1e-3]], np.float32))
        fit = fit_gaussian(mat)
        part = partition(mat, fit, 0.0, 3)
        empty = [k for k in range(1, 4) if part.subset_mask(k).sum() == 0]
        assert empty, "construction should leave a hole in the middle subsets"
        sub = binarize_subset(mat, part, empty[0])
        assert sub.scale == 0.0
        assert sub.signs.size == 0

    def test_optimality_oracle(self):
        rng = np.random.default_rng(99)
        for _ in range(50):
            size = rng.integers(1, 13)
            values = rng.normal(0, 1, size)
            mat, part = single_subset(values)
            sub = binarize_subset(mat, part, 1)
            closed = subset_error(mat, part, sub)
            stored = mat.data.astype(np.float64).ravel()
            assert closed <= exhaustive_best(stored) + 1e-9

    def test_error_identity(self):
        rng = np.random.default_rng(5)
        for _ in range(20):
            values = rng.normal(0, 2, rng.integers(2, 40))
            mat, part = single_subset(values)
            sub = binarize_subset(mat, part, 1)
            w = mat.data.astype(np.float64).ravel()
            identity = float(np.sum(w * w) - sub.scale ** 2 * w.size)
            assert subset_error(mat, part, sub) == pytest.approx(identity, abs=1e-8)

    def test_scale_equivariance(self):
        values = [0.5, -1.5, 2.5, -0.25]
        mat, part = single_subset(values)
        sub = binarize_subset(mat, part, 1)
        scaled, part2 = single_subset([4 * v for v in values])
        sub2 = binarize_subset(scaled, part2, 1)
        assert sub2.scale == pytest.approx(4 * sub.scale, rel=1e-12)
        assert np.array_equal(sub.signs, sub2.signs)

    def test_scale_nonnegative(self, rng):
        for _ in range(20):
            values = rng.normal(-3, 1, 10)
            mat, part = single_subset(values)
            assert binarize_subset(mat, part, 1).scale >= 0.0
