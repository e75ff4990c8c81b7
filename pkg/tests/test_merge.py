import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from adarank.linalg import ShapeError, reconstruct_components, relative_frobenius
from adarank.merge import (
    MergePlan,
    check_fraction,
    masked_delta,
    merge_masked,
    merge_task_arithmetic,
    merge_topk,
    merge_weight_average,
    tied_lambda,
    topk_count,
    topk_masks,
)
from adarank.spectral import build_task_vectors, decompose


def toy(rng, T=3, shapes=None):
    shapes = shapes or {"a": (6, 4), "b": (5, 7)}
    pre = {n: rng.standard_normal(s) for n, s in shapes.items()}
    cks = [{n: pre[n] + 0.3 * rng.standard_normal(s) for n, s in shapes.items()} for _ in range(T)]
    tv = build_task_vectors(cks, "pretrained", pre)
    return pre, cks, tv, decompose(tv)


def ones_masks(sp):
    return {(t, n): np.ones(sp.k(n)) for t in range(sp.num_tasks) for n in sp.layer_names}


def test_plan_validation():
    MergePlan("task_arithmetic")
    MergePlan("topk_svd", topk_rank_rule="fraction", topk_fraction=0.16)
    with pytest.raises(ValueError):
        MergePlan("topk_svd")
    with pytest.raises(ValueError):
        MergePlan("task_arithmetic", topk_rank_rule="fraction", topk_fraction=0.1)
    with pytest.raises(ValueError):
        MergePlan("topk_svd", topk_rank_rule="fraction", topk_fraction=1.5)
    with pytest.raises(ValueError):
        MergePlan("ties")


def test_topk_count_rounding():
    assert topk_count(100, 0.16) == 16
    assert topk_count(100, 0.29) == 29
    assert topk_count(33, 0.16) == 5
    with pytest.raises(ValueError):
        check_fraction(0.0)


def test_weight_average_cases(rng):
    a = {"w": rng.standard_normal((3, 3))}
    assert np.array_equal(merge_weight_average([a, dict(a)])["w"], a["w"])
    out = merge_weight_average([{"w": np.zeros((2, 2))}, {"w": 2 * np.eye(2)}])
    assert np.array_equal(out["w"], np.eye(2))
    with pytest.raises(ValueError):
        merge_weight_average([a])
    with pytest.raises(ShapeError):
        merge_weight_average([a, {"w": np.zeros((2, 3))}])


def test_weight_average_is_ta_with_one_over_t(rng):
    pre, cks, tv, _ = toy(rng, T=4)
    avg = merge_weight_average(cks)
    ta = merge_task_arithmetic(pre, tv, 0.25)
    for n in pre:
        assert np.allclose(avg[n], ta[n], atol=1e-14)


def test_task_arithmetic_cases(rng):
    pre, cks, tv, _ = toy(rng)
    out = merge_task_arithmetic(pre, tv, 0.0)
    assert all(np.array_equal(out[n], pre[n]) for n in pre)
    single = build_task_vectors(cks[:1], "pretrained", pre)
    one = merge_task_arithmetic(pre, single, 1.0)
    assert all(np.allclose(one[n], cks[0][n], rtol=0, atol=1e-15) for n in pre)
    zero = {"w": np.zeros((1, 1))}
    tv2 = build_task_vectors([{"w": np.array([[2.0]])}, {"w": np.array([[4.0]])}], "pretrained", zero)
    assert merge_task_arithmetic(zero, tv2, 0.5)["w"][0, 0] == 3.0


def test_task_arithmetic_missing_coefficient(rng):
    pre, _, tv, _ = toy(rng)
    lam = tied_lambda(0.3, 3, ["a", "b"])
    del lam[(2, "b")]
    with pytest.raises(KeyError, match="task 2"):
        merge_task_arithmetic(pre, tv, lam)


def test_all_ones_mask_reduces_to_task_arithmetic(rng):
    pre, _, tv, sp = toy(rng)
    lam = {(t, n): 0.2 + 0.1 * t for t in range(3) for n in pre}
    a = merge_masked(pre, sp, ones_masks(sp), lam)
    b = merge_task_arithmetic(pre, tv, lam)
    for n in pre:
        assert relative_frobenius(a[n], b[n]) <= 1e-6


def test_topk_mask_matches_direct_low_rank_merge(rng):
    pre, _, tv, sp = toy(rng)
    masks = topk_masks(sp, "fraction", 0.5)
    out = merge_masked(pre, sp, masks, 0.7)
    for n in pre:
        keep = topk_count(sp.k(n), 0.5)
        ref = pre[n] + sum(0.7 * reconstruct_components(sp.svds[t][n], range(keep)) for t in range(3))
        assert relative_frobenius(out[n], ref) <= 1e-10


def test_zero_masks_give_base(rng):
    pre, _, _, sp = toy(rng)
    masks = {k: np.zeros_like(v) for k, v in ones_masks(sp).items()}
    out = merge_masked(pre, sp, masks, 0.3)
    assert all(np.array_equal(out[n], pre[n]) for n in pre)


def test_mask_length_checked(rng):
    pre, _, _, sp = toy(rng)
    masks = ones_masks(sp)
    masks[(0, "a")] = np.ones(2)
    with pytest.raises(ShapeError):
        merge_masked(pre, sp, masks, 0.3)


def test_topk_full_fraction_is_task_arithmetic(rng):
    pre, _, tv, sp = toy(rng)
    plan = MergePlan("topk_svd", lam=0.3, topk_rank_rule="fraction", topk_fraction=1.0)
    a, b = merge_topk(pre, sp, plan), merge_task_arithmetic(pre, tv, 0.3)
    assert all(relative_frobenius(a[n], b[n]) <= 1e-10 for n in pre)


def test_topk_diag_toy():
    base = {"w": np.zeros((2, 2))}
    tv = build_task_vectors([{"w": np.diag([3.0, 1.0])}], "pretrained", base)
    plan = MergePlan("topk_svd", lam=1.0, topk_rank_rule="fraction", topk_fraction=0.5)
    out = merge_topk(base, decompose(tv), plan)
    assert np.allclose(out["w"], np.diag([3.0, 0.0]), atol=1e-15)


def test_per_task_share_masks(rng):
    _, _, _, sp = toy(rng, T=2, shapes={"a": (9, 8)})
    m = topk_masks(sp, "per_task_share")
    assert m[(0, "a")].tolist() == [1, 1, 1, 1, 0, 0, 0, 0]
    with pytest.raises(ValueError):
        topk_masks(sp, "half")


@settings(max_examples=30, deadline=None)
@given(st.floats(-3, 3), st.integers(0, 2**32 - 1))
def test_masked_delta_homogeneous_in_lambda(c, seed):
    rng = np.random.default_rng(seed)
    pre, _, _, sp = toy(rng, T=2, shapes={"a": (4, 3)})
    masks = {k: rng.integers(0, 2, len(v)).astype(float) for k, v in ones_masks(sp).items()}
    lam = {k: rng.uniform(0.1, 1) for k in masks}
    scaled = {k: c * v for k, v in lam.items()}
    d1 = masked_delta(sp, masks, lam, "a")
    d2 = masked_delta(sp, masks, scaled, "a")
    assert np.allclose(d2, c * d1, rtol=1e-12, atol=1e-12)


def test_single_bit_flip_is_rank_one_update(rng):
    pre, _, _, sp = toy(rng)
    masks = topk_masks(sp, "fraction", 0.5)
    before = merge_masked(pre, sp, masks, 0.4)
    flipped = {k: v.copy() for k, v in masks.items()}
    flipped[(1, "b")][4] = 1.0
    after = merge_masked(pre, sp, flipped, 0.4)
    f = sp.svds[1]["b"]
    expect = 0.4 * f.s[4] * np.outer(f.u[:, 4], f.v[:, 4])
    assert np.allclose(after["b"] - before["b"], expect, atol=1e-14)
    assert np.array_equal(after["a"], before["a"])


def test_task_relabeling_leaves_merge_unchanged(rng):
    pre, cks, tv, sp = toy(rng)
    perm = [2, 0, 1]
    tv2 = build_task_vectors([cks[i] for i in perm], "pretrained", pre)
    sp2 = decompose(tv2)
    masks = topk_masks(sp, "fraction", 0.5)
    a = merge_masked(pre, sp, masks, 0.3)
    b = merge_masked(pre, sp2, topk_masks(sp2, "fraction", 0.5), 0.3)
    assert all(np.allclose(a[n], b[n], atol=1e-13) for n in pre)


def test_cart_beats_task_arithmetic_on_default_suite(wb):
    from adarank.bench import static_merge

    ta = wb.accuracy(static_merge(wb, "ta"))["mean"]
    cart = wb.accuracy(static_merge(wb, "cart"))["mean"]
    assert cart > ta
