import numpy as np
import pytest

import reference
from cdcnet import gradcheck, nn


def test_relu_all_negative_and_all_positive(rng):
    neg = -rng.uniform(0.1, 1, (2, 3)).astype(np.float32)
    assert not nn.relu(neg).any()
    pos = rng.uniform(0.1, 1, (2, 3)).astype(np.float32)
    assert np.array_equal(nn.relu(pos), pos)


def test_relu_backward_masks_nonpositive():
    x = np.array([-1.0, 0.0, 2.0], dtype=np.float32)
    g = np.array([5.0, 5.0, 5.0], dtype=np.float32)
    assert nn.relu_backward(g, x).tolist() == [0.0, 0.0, 5.0]


def test_relu_finite_differences():
    for i in range(3):
        rng = np.random.Generator(np.random.PCG64([7, i]))
        assert gradcheck.check_relu(rng) < 1e-3


def test_dropout_eval_is_identity(rng):
    x = rng.uniform(-1, 1, (3, 5)).astype(np.float32)
    y, mask = nn.dropout(x, 0.5, train=False)
    assert y is x and mask is None


def test_dropout_ratio_zero_is_identity(rng):
    x = rng.uniform(-1, 1, (3, 5)).astype(np.float32)
    y, mask = nn.dropout(x, 0.0, train=True, seed=3)
    assert np.array_equal(y, x) and mask is None


def test_dropout_survivor_fraction():
    x = np.ones(100_000, dtype=np.float32)
    y, mask = nn.dropout(x, 0.5, train=True, seed=42)
    frac = mask.mean()
    assert abs(frac - 0.5) < 0.01
    # Inverted scaling: survivors are multiplied by 2.
    assert np.all(y[mask] == 2.0) and not y[~mask].any()


def test_dropout_seed_reproducible(rng):
    x = rng.uniform(-1, 1, 1000).astype(np.float32)
    y1, m1 = nn.dropout(x, 0.3, train=True, seed=9)
    y2, m2 = nn.dropout(x, 0.3, train=True, seed=9)
    assert np.array_equal(y1, y2) and np.array_equal(m1, m2)


def test_dropout_bad_ratio():
    with pytest.raises(ValueError):
        nn.dropout(np.ones(3, np.float32), 1.0, train=True)
    with pytest.raises(ValueError):
        nn.dropout(np.ones(3, np.float32), -0.1, train=True)


def test_dropout_finite_differences_fixed_mask():
    for i in range(3):
        rng = np.random.Generator(np.random.PCG64([8, i]))
        assert gradcheck.check_dropout(rng) < 1e-3


# -- frame-wise softmax --------------------------------------------------------


def test_softmax_uniform_logits():
    p = nn.framewise_softmax(np.zeros((2, 4), dtype=np.float32))
    assert p.shape == (4, 2)
    assert np.allclose(p, 0.5)


def test_softmax_large_logits_stable():
    p = nn.framewise_softmax(np.full((2, 1), 1000.0, dtype=np.float32))
    assert np.allclose(p, 0.5)
    assert np.all(np.isfinite(p))


def test_softmax_matches_direct_evaluation():
    logits = np.array([[1.0], [2.0], [3.0]], dtype=np.float32)
    p = nn.framewise_softmax(logits)
    e = np.exp([1.0, 2.0, 3.0])
    assert np.abs(p[0] - e / e.sum()).max() < 1e-6


def test_softmax_rows_sum_to_one_and_shift_invariant(rng):
    logits = rng.uniform(-5, 5, (4, 9)).astype(np.float32)
    p = nn.framewise_softmax(logits)
    assert np.abs(p.sum(axis=1) - 1).max() < 1e-5
    assert np.all((p > 0) & (p < 1))
    shifted = nn.framewise_softmax(logits + np.float32(3.7))
    assert np.abs(p - shifted).max() < 1e-6


def test_softmax_rejects_nonfinite():
    with pytest.raises(FloatingPointError):
        nn.framewise_softmax(np.array([[np.nan], [1.0]], dtype=np.float32))


# -- loss ----------------------------------------------------------------------


def test_loss_uniform_single_frame():
    p = np.full((1, 2), 0.5, dtype=np.float32)
    loss = nn.softmax_loss([p], [np.array([0])])
    assert abs(loss - np.log(2)) < 1e-6


def test_loss_perfect_prediction_clamped():
    l = 6
    p = np.zeros((l, 3), dtype=np.float32)
    p[:, 1] = 1.0
    loss = nn.softmax_loss([p], [np.full(l, 1)])
    assert abs(loss - 1e-7 * l) < 1e-8 * l


def test_loss_matches_direct_summation(rng):
    batch, labels = [], []
    for _ in range(2):
        logits = rng.uniform(-2, 2, (4, 3)).astype(np.float32)
        batch.append(nn.framewise_softmax(logits))
        labels.append(rng.integers(0, 4, 3))
    loss = nn.softmax_loss(batch, labels)
    assert abs(loss - reference.softmax_loss_naive(batch, labels)) < 1e-6


def test_loss_nonnegative_and_zero_only_at_onehot(rng):
    for _ in range(20):
        logits = rng.uniform(-4, 4, (3, 5)).astype(np.float32)
        p = nn.framewise_softmax(logits)
        labels = rng.integers(0, 3, 5)
        assert nn.softmax_loss([p], [labels]) > 0
    onehot = np.zeros((2, 3), dtype=np.float32)
    onehot[:, 2] = 1.0
    assert nn.softmax_loss([onehot], [np.array([2, 2])]) < 1e-6


def test_loss_rejects_bad_labels(rng):
    p = nn.framewise_softmax(rng.uniform(-1, 1, (3, 4)).astype(np.float32))
    with pytest.raises(ValueError):
        nn.softmax_loss([p], [np.array([0, 3, 1, 1])])
    with pytest.raises(ValueError):
        nn.softmax_loss([p], [np.array([0, -1, 1, 1])])


def test_loss_grad_two_class_half():
    p = np.array([[0.5, 0.5]], dtype=np.float32)
    g = nn.softmax_loss_grad([p], [np.array([0])])[0]
    assert np.allclose(g.ravel(), [-0.5, 0.5])


def test_loss_grad_zero_at_onehot():
    p = np.zeros((3, 2), dtype=np.float32)
    p[:, 0] = 1.0
    g = nn.softmax_loss_grad([p], [np.zeros(3, dtype=int)])[0]
    assert not g.any()


def test_loss_grad_batch_scaling(rng):
    p = nn.framewise_softmax(rng.uniform(-1, 1, (3, 4)).astype(np.float32))
    labels = np.array([0, 1, 2, 0])
    g1 = nn.softmax_loss_grad([p], [labels])[0]
    g2 = nn.softmax_loss_grad([p, p], [labels, labels])[0]
    assert np.allclose(g1, 2 * g2)


def test_loss_grad_finite_differences():
    for i in range(3):
        rng = np.random.Generator(np.random.PCG64([9, i]))
        assert gradcheck.check_softmax_loss(rng) < 1e-3


def test_loss_valid_mask_drops_frames(rng):
    logits = rng.uniform(-1, 1, (3, 5)).astype(np.float32)
    p = nn.framewise_softmax(logits)
    labels = np.array([0, 1, 2, 1, 0])
    valid = np.array([True, True, True, False, False])
    masked = nn.softmax_loss([p], [labels], [valid])
    direct = nn.softmax_loss([p[:3]], [labels[:3]])
    assert abs(masked - direct) < 1e-9
    g = nn.softmax_loss_grad([p], [labels], [valid])[0]
    assert not g[:, 3:].any() and g[:, :3].any()
