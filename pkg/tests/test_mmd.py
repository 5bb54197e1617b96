import numpy as np
import pytest

from mmdica import diffcore as dc
from mmdica.diffcore import Param, grad_check
from mmdica.mmd import KernelSpec, gaussian_kernel, joint_mmd2, kernel_from_median, median_bandwidth, mmd2


def test_kernel_spec_validation():
    with pytest.raises(ValueError):
        KernelSpec(())
    with pytest.raises(ValueError):
        KernelSpec((1.0, -2.0))
    with pytest.raises(ValueError):
        KernelSpec((1.0,), estimator="bogus")


def test_gaussian_kernel_values():
    assert gaussian_kernel([1.0, 2.0], [1.0, 2.0], 3.7) == pytest.approx(1.0)
    assert gaussian_kernel([0.0], [1.0], 0.5) == pytest.approx(np.exp(-1.0))
    # squared distance 25, 2 sigma^2 = 25
    assert gaussian_kernel([0.0, 0.0], [3.0, 4.0], 12.5) == pytest.approx(np.exp(-1.0))


def test_gaussian_kernel_errors():
    with pytest.raises(ValueError):
        gaussian_kernel([0.0], [0.0, 1.0], 1.0)
    with pytest.raises(ValueError):
        gaussian_kernel([0.0], [1.0], 0.0)


def test_median_bandwidth_enumerated():
    assert median_bandwidth(np.array([[0.0], [2.0]])) == pytest.approx(4.0)
    # pairs of {0,1,2}: squared distances {1, 4, 1} -> median 1
    assert median_bandwidth(np.array([[0.0], [1.0], [2.0]])) == pytest.approx(1.0)


def test_median_bandwidth_degenerate_falls_back():
    with pytest.warns(UserWarning, match="degenerate"):
        assert median_bandwidth(np.zeros((4, 2))) == 1.0


def test_mmd2_identical_sets_is_zero():
    rng = np.random.default_rng(0)
    x = rng.standard_normal((7, 3))
    k = KernelSpec((0.5, 1.0))
    assert mmd2(x, x.copy(), k) == pytest.approx(0.0, abs=1e-12)


def test_mmd2_single_points_hand_value():
    k = KernelSpec((2.0,))
    got = mmd2(np.array([[0.0]]), np.array([[2.0]]), k)
    assert got == pytest.approx(2.0 - 2.0 * np.exp(-1.0), abs=1e-12)


def test_mmd2_permutation_invariance_and_symmetry():
    rng = np.random.default_rng(1)
    x = rng.standard_normal((9, 2))
    y = rng.standard_normal((6, 2))
    k = KernelSpec((0.7, 1.3))
    base = mmd2(x, y, k)
    shuffled = mmd2(x[rng.permutation(9)], y[rng.permutation(6)], k)
    assert shuffled == pytest.approx(base, abs=1e-12)
    assert mmd2(y, x, k) == pytest.approx(base, abs=1e-12)


def test_mmd2_biased_nonnegative():
    k = KernelSpec((0.5, 2.0))
    for seed in range(10):
        rng = np.random.default_rng(seed)
        x = rng.standard_normal((5, 2))
        y = rng.standard_normal((8, 2)) + rng.uniform(-1, 1)
        assert mmd2(x, y, k) >= 0.0


def test_mmd2_multibandwidth_is_sum_of_single():
    rng = np.random.default_rng(2)
    x = rng.standard_normal((6, 2))
    y = rng.standard_normal((5, 2))
    bws = (0.3, 1.0, 4.0)
    total = mmd2(x, y, KernelSpec(bws))
    parts = sum(mmd2(x, y, KernelSpec((b,))) for b in bws)
    assert total == pytest.approx(parts, rel=1e-12)


def test_mmd2_unbiased_estimator():
    rng = np.random.default_rng(3)
    x = rng.standard_normal((6, 2))
    y = rng.standard_normal((6, 2))
    k = KernelSpec((1.0,), estimator="unbiased")
    # brute-force U-statistic
    def kf(a, b):
        return np.exp(-((a - b) ** 2).sum() / 2.0)
    m = n = 6
    sxx = sum(kf(x[i], x[j]) for i in range(m) for j in range(m) if i != j) / (m * (m - 1))
    syy = sum(kf(y[i], y[j]) for i in range(n) for j in range(n) if i != j) / (n * (n - 1))
    sxy = sum(kf(x[i], y[j]) for i in range(m) for j in range(n)) * 2.0 / (m * n)
    assert mmd2(x, y, k) == pytest.approx(sxx + syy - sxy, rel=1e-12)
    with pytest.raises(ValueError):
        mmd2(x[:1], y, k)


def test_mmd2_input_validation():
    k = KernelSpec((1.0,))
    with pytest.raises(ValueError):
        mmd2(np.zeros((0, 2)), np.zeros((3, 2)), k)
    with pytest.raises(ValueError):
        mmd2(np.zeros((3, 2)), np.zeros((3, 3)), k)


def test_mmd2_gradient_matches_fd():
    rng = np.random.default_rng(4)
    x = rng.standard_normal((6, 2))
    y = Param("Y", rng.standard_normal((5, 2)))
    k = KernelSpec((0.5, 1.0, 2.0))
    assert grad_check(lambda: mmd2(x, y, k), [y], epsilon=1e-6) <= 1e-4


def test_joint_mmd2_identical_tuples_zero():
    rng = np.random.default_rng(5)
    a = rng.standard_normal((6, 2))
    b = rng.standard_normal((6, 3))
    k = KernelSpec((1.0, 2.0))
    assert joint_mmd2([a, b], [a.copy(), b.copy()], k) == pytest.approx(0.0, abs=1e-12)


def test_joint_mmd2_constant_target_slot_reduces_to_marginal():
    rng = np.random.default_rng(6)
    cond_x = rng.standard_normal((5, 2))
    cond_y = rng.standard_normal((7, 2))
    const = np.full((5, 1), 3.25)
    k = KernelSpec((0.5, 1.5))
    joint = joint_mmd2([cond_x, const], [cond_y, np.full((7, 1), 3.25)], k)
    assert joint == pytest.approx(mmd2(cond_x, cond_y, k), rel=1e-12)


def test_joint_mmd2_single_tuples_hand_value():
    k = KernelSpec((2.0,))
    got = joint_mmd2([np.array([[0.0]]), np.array([[0.0]])],
                     [np.array([[2.0]]), np.array([[2.0]])], k)
    assert got == pytest.approx(2.0 - 2.0 * np.exp(-1.0) ** 2, abs=1e-12)


def test_joint_mmd2_arity_one_equals_mmd2():
    rng = np.random.default_rng(7)
    x = rng.standard_normal((8, 3))
    y = rng.standard_normal((6, 3))
    k = KernelSpec((0.25, 1.0, 4.0))
    assert joint_mmd2([x], [y], k) == pytest.approx(mmd2(x, y, k), rel=1e-14)


def test_joint_mmd2_arity_mismatch_rejected():
    a = np.zeros((3, 1))
    with pytest.raises(ValueError):
        joint_mmd2([a, a], [a], KernelSpec((1.0,)))
    with pytest.raises(ValueError):
        joint_mmd2([a, a], [a, a], [KernelSpec((1.0,)), KernelSpec((1.0, 2.0))])


def test_joint_mmd2_gradient_matches_fd():
    rng = np.random.default_rng(8)
    cond = rng.standard_normal((5, 2))
    real = rng.standard_normal((5, 2))
    gen = Param("G", rng.standard_normal((5, 2)))
    k = KernelSpec((0.5, 2.0))
    assert grad_check(lambda: joint_mmd2([cond, real], [cond, gen], k), [gen], epsilon=1e-6) <= 1e-4


def test_kernel_from_median_scales():
    rng = np.random.default_rng(9)
    x = rng.standard_normal((50, 2))
    k = kernel_from_median(x, scales=(0.5, 1.0, 2.0))
    med = median_bandwidth(x)
    assert k.bandwidths == pytest.approx((0.5 * med, med, 2.0 * med))
