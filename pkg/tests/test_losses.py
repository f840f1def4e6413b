import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from langvox.geometry import CorrespondenceSet, DepthFrame
from langvox.losses import (
    EmptySetError,
    PseudoLabels,
    assign_pseudo_labels,
    auxiliary_loss,
    decoder_contrastive,
    depth_loss,
    pixel_voxel_contrastive,
    pool_depth,
    pretrain_total,
    score_map,
)
from langvox.numerics import Parameter, ShapeError, Tensor, cosine_sim, fd_check, softmax
from langvox.numerics.functional import DegenerateError

from oracles import dense_pixel_voxel_loss, masked_softmax_ce


def random_instance(rng, m):
    n2d, n3d, d = m + rng.integers(0, 5), m + rng.integers(0, 5), rng.integers(2, 7)
    pairs = np.stack([rng.choice(n2d, m, replace=False), rng.choice(n3d, m, replace=False)], axis=1)
    return rng.standard_normal((n2d, d)), rng.standard_normal((n3d, d)), pairs


def test_contrastive_single_pair_is_zero():
    rng = np.random.default_rng(0)
    loss = pixel_voxel_contrastive(Tensor(rng.standard_normal((3, 4))), Tensor(rng.standard_normal((2, 4))),
                                   CorrespondenceSet([[2, 1]], 1, 3))
    assert loss.item() == 0.0


def test_contrastive_two_pair_closed_form():
    eye = Tensor(np.eye(2))
    loss = pixel_voxel_contrastive(eye, eye, CorrespondenceSet([[0, 0], [1, 1]], 1, 2), 0.4)
    expected = -2 * math.log(math.exp(2.5) / (math.exp(2.5) + 1))
    assert abs(loss.item() - expected) < 1e-12
    assert abs(loss.item() - 0.15777946858509925) < 1e-12


def test_contrastive_empty_set():
    with pytest.raises(EmptySetError):
        pixel_voxel_contrastive(Tensor(np.ones((2, 2))), Tensor(np.ones((2, 2))), CorrespondenceSet([], 1, 2))
    with pytest.raises(EmptySetError):
        decoder_contrastive(Tensor(np.ones((2, 2))), Tensor(np.ones((2, 2))), CorrespondenceSet([], 1, 2))


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**31 - 1), m=st.integers(1, 8))
def test_contrastive_matches_dense_oracle(seed, m):
    rng = np.random.default_rng(seed)
    f2d, f3d, pairs = random_instance(rng, m)
    tau = rng.uniform(0.1, 1.0)
    ours = pixel_voxel_contrastive(Tensor(f2d), Tensor(f3d), CorrespondenceSet(pairs, 1, len(f2d)), tau).item()
    assert abs(ours - dense_pixel_voxel_loss(f2d, f3d, pairs.tolist(), tau)) < 1e-10
    assert ours >= -1e-12


def test_contrastive_role_swap_symmetry():
    rng = np.random.default_rng(1)
    f2d, f3d, pairs = random_instance(rng, 6)
    a = pixel_voxel_contrastive(Tensor(f2d), Tensor(f3d), CorrespondenceSet(pairs, 1, len(f2d))).item()
    b = pixel_voxel_contrastive(Tensor(f3d), Tensor(f2d), CorrespondenceSet(pairs[:, ::-1], 1, len(f3d))).item()
    assert abs(a - b) < 1e-12


def test_contrastive_decreases_with_temperature_on_separated_instance():
    # diagonal cosine 1, off-diagonal cosine 0
    eye = Tensor(np.eye(4))
    pairs = CorrespondenceSet(np.stack([np.arange(4), np.arange(4)], 1), 1, 4)
    values = [pixel_voxel_contrastive(eye, eye, pairs, tau).item() for tau in (1.0, 0.7, 0.4, 0.2, 0.1)]
    assert all(b < a for a, b in zip(values, values[1:]))


def test_contrastive_fd():
    rng = np.random.default_rng(2)
    f2d, f3d, pairs = random_instance(rng, 5)
    a, b = Parameter(f2d, name="a"), Parameter(f3d, name="b")
    s = CorrespondenceSet(pairs, 1, len(f2d))
    assert fd_check(lambda: pixel_voxel_contrastive(a, b, s), [a, b]).passed


def test_score_map_examples():
    t = Tensor(np.eye(3))
    s = score_map(Tensor(np.array([[1.0, 0, 0], [0, 0, 2.0]])), t).data
    assert s[0, 0] == 1.0 and s[0, 1] == 0.0 and abs(s[1, 2] - 1.0) < 1e-15
    rng = np.random.default_rng(3)
    h, t = rng.standard_normal((7, 5)), rng.standard_normal((4, 5))
    s = score_map(Tensor(h), Tensor(t)).data
    for i in range(7):
        for j in range(4):
            assert abs(s[i, j] - cosine_sim(Tensor(h[i]), Tensor(t[j])).item()) < 1e-14
    with pytest.raises(DegenerateError):
        score_map(Tensor(np.zeros((1, 5))), Tensor(t))


def test_pseudo_label_rules():
    pts = np.array([[0, 0, 0], [0.01, 0, 0], [0, 0.01, 0], [5, 5, 5], [5.01, 5, 5], [9, 9, 9]], dtype=float)
    labels = np.array([2, 2, 7, 1, 2, 4])
    query = np.array([[0.0, 0.0, 0.005], [5.005, 5, 5], [20, 20, 20]])
    out = assign_pseudo_labels(query, pts, labels, radius=0.05)
    assert out.labels.tolist() == [2, 1, -1]
    assert out.covered.tolist() == [True, True, False]
    with pytest.raises(ValueError):
        assign_pseudo_labels(query, pts, labels, radius=0.0)


def test_pseudo_labels_deterministic_under_point_order():
    rng = np.random.default_rng(4)
    pts, labels = rng.uniform(0, 1, (200, 3)), rng.integers(0, 4, 200)
    q = rng.uniform(0, 1, (30, 3))
    a = assign_pseudo_labels(q, pts, labels, 0.15)
    perm = rng.permutation(200)
    b = assign_pseudo_labels(q, pts[perm], labels[perm], 0.15)
    assert np.array_equal(a.labels, b.labels)


def test_auxiliary_loss_cases():
    uniform = Tensor(np.zeros((2, 13)))
    pseudo = PseudoLabels(np.array([3, 5]), np.array([True, True]))
    assert abs(auxiliary_loss(uniform, pseudo, 0.07).item() - math.log(13)) < 1e-12

    aligned = Tensor(np.eye(3))
    pseudo = PseudoLabels(np.arange(3), np.ones(3, dtype=bool))
    assert auxiliary_loss(aligned, pseudo, 1e-3).item() < 1e-12

    with pytest.raises(EmptySetError):
        auxiliary_loss(aligned, PseudoLabels(np.full(3, -1), np.zeros(3, dtype=bool)))


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**31 - 1))
def test_auxiliary_loss_matches_oracle(seed):
    rng = np.random.default_rng(seed)
    n, k = rng.integers(1, 12), rng.integers(2, 9)
    scores = rng.uniform(-1, 1, (n, k))
    covered = rng.random(n) < 0.7
    covered[rng.integers(n)] = True
    labels = np.where(covered, rng.integers(0, k, n), -1)
    temp = rng.uniform(0.05, 1.0)
    ours = auxiliary_loss(Tensor(scores), PseudoLabels(labels, covered), temp).item()
    assert abs(ours - masked_softmax_ce(scores, labels, covered, temp)) < 1e-10


def test_auxiliary_loss_ignores_rows_outside_cover():
    rng = np.random.default_rng(5)
    scores = rng.uniform(-1, 1, (6, 4))
    covered = np.array([True, False, True, False, True, True])
    labels = np.array([1, 0, 3, 2, 0, 2])
    base = auxiliary_loss(Tensor(scores), PseudoLabels(labels, covered)).item()
    other = scores.copy()
    other[[1, 3]] = other[[3, 1]] * -1
    relabelled = labels.copy()
    relabelled[[1, 3]] = [3, 3]
    assert auxiliary_loss(Tensor(other), PseudoLabels(relabelled, covered)).item() == base


def test_temperature_never_changes_argmax():
    rng = np.random.default_rng(6)
    s = rng.uniform(-1, 1, (20, 5))
    for temp in (0.01, 0.07, 1.0, 10.0):
        assert np.array_equal(np.argmax(softmax(Tensor(s / temp), axis=1).data, 1), np.argmax(s, 1))


def test_depth_loss_cases():
    gt = np.random.default_rng(7).uniform(1, 3, (4, 6))
    assert depth_loss(Tensor(gt.copy()), DepthFrame(gt)).item() == 0.0
    assert abs(depth_loss(Tensor(gt + 0.25), DepthFrame(gt)).item() - 0.25) < 1e-12
    half = gt.copy()
    half[:2] = 0.0
    pred = gt + np.where(np.arange(4)[:, None] < 2, 100.0, 0.5)
    assert abs(depth_loss(Tensor(pred), DepthFrame(half)).item() - 0.5) < 1e-12
    with pytest.raises(EmptySetError):
        depth_loss(Tensor(gt), DepthFrame(np.zeros((4, 6))))
    with pytest.raises(ShapeError):
        depth_loss(Tensor(np.zeros((3, 5))), DepthFrame(gt))


def test_pool_depth_picks_nearest_valid():
    d = np.zeros((8, 8))
    d[0, 0] = 1.0          # corner of block (0, 0)
    d[1, 2] = 2.0          # next to the centre, wins
    d[6, 7] = 3.0
    pooled = pool_depth(DepthFrame(d), 2, 2).values
    assert pooled.tolist() == [[2.0, 0.0], [0.0, 3.0]]


def test_pretrain_total_cases():
    a, b, c = Tensor(np.array(1.5)), Tensor(np.array(2.0)), Tensor(np.array(0.25))
    assert pretrain_total({"encoder": a, "decoder": b, "depth": c}, {"encoder": 1, "decoder": 0, "depth": 0}).item() == 1.5
    assert pretrain_total({"encoder": a, "decoder": None, "depth": c}).item() == 1.75
    zero = Tensor(np.array(0.0))
    assert pretrain_total({"encoder": zero, "decoder": zero, "depth": zero}).item() == 0.0
    with pytest.raises(EmptySetError):
        pretrain_total({"encoder": None, "decoder": None, "depth": None})


def test_pretrain_total_gradient_is_sum_of_gradients():
    rng = np.random.default_rng(8)
    f2d, f3d, pairs = random_instance(rng, 5)
    s = CorrespondenceSet(pairs, 1, len(f2d))
    b = Parameter(f3d, name="b")
    gt = DepthFrame(rng.uniform(1, 2, (3, 3)))
    pred = Parameter(rng.uniform(1, 2, (3, 3)), name="pred")

    def terms():
        return {"encoder": pixel_voxel_contrastive(Tensor(f2d), b, s), "decoder": None,
                "depth": depth_loss(pred * (b[0, 0] * 0.1 + 1.0), gt)}

    pretrain_total(terms()).backward()
    total = [b.grad.copy(), pred.grad.copy()]
    parts = [np.zeros_like(b.data), np.zeros_like(pred.data)]
    for name in ("encoder", "depth"):
        b.grad = pred.grad = None
        terms()[name].backward()
        parts = [p + (np.zeros_like(q.data) if q.grad is None else q.grad) for p, q in zip(parts, (b, pred))]
    for x, y in zip(total, parts):
        assert np.allclose(x, y, atol=1e-12)
    assert fd_check(lambda: pretrain_total(terms()), [b, pred]).passed
