"""Contrastive objectives against independently coded brute-force oracles."""

import math

import numpy as np
import pytest

from oovtag.contrastive import (
    AS_WRITTEN, POSITIVES,
    ContrastiveBatch, ContrastiveError, ObjectiveConfig,
    combined_loss, contrastive_backward, cosine_sim,
    infonce_backward, infonce_loss, scl_backward, scl_loss,
)


def brute_scl(reps, group_ids, tau):
    """Double-loop SCL: mean over anchors of the mean over its positives of
    -log softmax, normalized over every other batch member."""
    n = len(reps)
    total = 0.0
    for i in range(n):
        positives = [k for k in range(n) if k != i and group_ids[k] == group_ids[i]]
        denom = sum(
            math.exp(cosine_sim(reps[i], reps[k]) / tau) for k in range(n) if k != i
        )
        inner = 0.0
        for p in positives:
            inner += -math.log(math.exp(cosine_sim(reps[i], reps[p]) / tau) / denom)
        total += inner / len(positives)
    return total / n


def brute_infonce(reps, pair_map, tau, mode):
    anchors = [a for a, _ in pair_map]
    positives = [p for _, p in pair_map]
    candidates = anchors if mode == AS_WRITTEN else positives
    total = 0.0
    for a, p in pair_map:
        denom = sum(math.exp(cosine_sim(reps[a], reps[c]) / tau) for c in candidates)
        total += -math.log(math.exp(cosine_sim(reps[a], reps[p]) / tau) / denom)
    return total / len(pair_map)


def random_group_batch(rng, n=None, dim=None):
    n = n or int(rng.integers(4, 13))
    dim = dim or int(rng.integers(2, 9))
    n_groups = int(rng.integers(1, n // 2 + 1))
    # Each group needs at least two members.
    ids = list(range(n_groups)) * 2
    while len(ids) < n:
        ids.append(int(rng.integers(n_groups)))
    rng.shuffle(ids)
    reps = rng.normal(size=(n, dim))
    return ContrastiveBatch(reps=reps, group_ids=tuple(ids))


def random_pair_batch(rng, n_pairs=None, dim=None):
    n_pairs = n_pairs or int(rng.integers(2, 7))
    dim = dim or int(rng.integers(2, 9))
    reps = rng.normal(size=(2 * n_pairs, dim))
    pair_map = tuple((k, n_pairs + k) for k in range(n_pairs))
    return ContrastiveBatch(
        reps=reps, group_ids=tuple(range(n_pairs)) * 2, pair_map=pair_map
    )


def test_cosine_sim():
    assert abs(cosine_sim(np.array([1.0, 2.0]), np.array([2.0, 1.0])) - 0.8) < 1e-15
    assert abs(cosine_sim(np.array([1.0, 0.0]), np.array([0.0, 3.0]))) < 1e-15
    with pytest.raises(ContrastiveError):
        cosine_sim(np.zeros(2), np.ones(2))


def test_objective_config_validation():
    ObjectiveConfig(tau1=0.1, tau2=0.2, alpha=0.0)
    with pytest.raises(ContrastiveError):
        ObjectiveConfig(tau1=0.0)
    with pytest.raises(ContrastiveError):
        ObjectiveConfig(alpha=1.5)
    with pytest.raises(ContrastiveError):
        ObjectiveConfig(infonce_denominator="everything")


def test_batch_validation():
    with pytest.raises(ContrastiveError):
        ContrastiveBatch(reps=np.ones((1, 3)), group_ids=(0,))
    with pytest.raises(ContrastiveError):
        ContrastiveBatch(reps=np.ones((2, 3)), group_ids=(0,))
    with pytest.raises(ContrastiveError):
        ContrastiveBatch(
            reps=np.ones((2, 3)), group_ids=(0, 0), pair_map=((0, 1), (0, 1))
        )
    with pytest.raises(ContrastiveError):
        ContrastiveBatch(reps=np.ones((2, 3)), group_ids=(0, 0), pair_map=((0, 5),))


def test_scl_matches_brute_force():
    rng = np.random.default_rng(10)
    cfg_pool = [ObjectiveConfig(tau1=t) for t in (0.05, 0.1, 0.5, 2.0)]
    for trial in range(50):
        batch = random_group_batch(rng)
        cfg = cfg_pool[trial % len(cfg_pool)]
        want = brute_scl(batch.reps, batch.group_ids, cfg.tau1)
        assert abs(scl_loss(batch, cfg) - want) < 1e-10


def test_infonce_matches_brute_force():
    rng = np.random.default_rng(11)
    for trial in range(50):
        batch = random_pair_batch(rng)
        mode = AS_WRITTEN if trial % 2 else POSITIVES
        cfg = ObjectiveConfig(tau2=(0.1, 0.5, 1.0)[trial % 3], infonce_denominator=mode)
        want = brute_infonce(batch.reps, batch.pair_map, cfg.tau2, mode)
        assert abs(infonce_loss(batch, cfg) - want) < 1e-10


def test_scl_degenerate_equal_representations():
    # Four identical vectors in one group: every similarity is 1, so each
    # -log term is log of the number of non-anchor members, exactly log 3.
    reps = np.tile(np.array([[0.6, 0.8]]), (4, 1))
    batch = ContrastiveBatch(reps=reps, group_ids=(1, 1, 1, 1))
    for tau in (0.07, 0.1, 1.0):
        assert abs(scl_loss(batch, ObjectiveConfig(tau1=tau)) - math.log(3)) < 1e-12


def test_scl_requires_positives():
    batch = ContrastiveBatch(reps=np.eye(3), group_ids=(0, 0, 7))
    with pytest.raises(ContrastiveError, match="no positive"):
        scl_loss(batch, ObjectiveConfig())


def test_infonce_two_orthogonal_pairs_closed_form():
    # Anchors e1, e2 orthogonal; positives equal their anchors. As-written
    # normalizes over both anchors: loss = log(1 + e^((0-1)/tau)).
    reps = np.array([[1.0, 0.0], [0.0, 1.0], [1.0, 0.0], [0.0, 1.0]])
    batch = ContrastiveBatch(
        reps=reps, group_ids=(0, 1, 0, 1), pair_map=((0, 2), (1, 3))
    )
    for tau in (0.5, 1.0):
        want = math.log(1.0 + math.exp(-1.0 / tau))
        got = infonce_loss(batch, ObjectiveConfig(tau2=tau, infonce_denominator=AS_WRITTEN))
        assert abs(got - want) < 1e-12


def test_infonce_requires_pairs():
    batch = ContrastiveBatch(reps=np.eye(2), group_ids=(0, 0))
    with pytest.raises(ContrastiveError, match="pair map"):
        infonce_loss(batch, ObjectiveConfig())


def test_losses_invariant_to_rescaling_rows():
    # Cosine similarity ignores any positive per-vector scale.
    rng = np.random.default_rng(12)
    batch = random_group_batch(rng, n=6, dim=4)
    scales = rng.uniform(0.1, 10.0, size=(6, 1))
    scaled = ContrastiveBatch(reps=batch.reps * scales, group_ids=batch.group_ids)
    cfg = ObjectiveConfig()
    assert abs(scl_loss(batch, cfg) - scl_loss(scaled, cfg)) < 1e-12

    pair_batch = random_pair_batch(rng, n_pairs=3, dim=4)
    pscales = rng.uniform(0.1, 10.0, size=(6, 1))
    pscaled = ContrastiveBatch(
        reps=pair_batch.reps * pscales,
        group_ids=pair_batch.group_ids,
        pair_map=pair_batch.pair_map,
    )
    assert abs(infonce_loss(pair_batch, cfg) - infonce_loss(pscaled, cfg)) < 1e-12


def test_losses_invariant_to_orthogonal_rotation():
    rng = np.random.default_rng(13)
    batch = random_group_batch(rng, n=6, dim=4)
    q, _ = np.linalg.qr(rng.normal(size=(4, 4)))
    rotated = ContrastiveBatch(reps=batch.reps @ q, group_ids=batch.group_ids)
    cfg = ObjectiveConfig()
    assert abs(scl_loss(batch, cfg) - scl_loss(rotated, cfg)) < 1e-12


def test_scl_invariant_to_batch_permutation():
    rng = np.random.default_rng(14)
    batch = random_group_batch(rng, n=7, dim=3)
    perm = rng.permutation(7)
    shuffled = ContrastiveBatch(
        reps=batch.reps[perm], group_ids=tuple(batch.group_ids[i] for i in perm)
    )
    cfg = ObjectiveConfig()
    assert abs(scl_loss(batch, cfg) - scl_loss(shuffled, cfg)) < 1e-12


def grad_vs_fd(loss_fn, backward_fn, batch, cfg, eps=1e-6, tol=2e-7):
    _, grad = backward_fn(batch, cfg)
    reps = batch.reps
    rng = np.random.default_rng(0)
    for _ in range(25):
        i = int(rng.integers(reps.shape[0]))
        j = int(rng.integers(reps.shape[1]))
        orig = reps[i, j]
        reps[i, j] = orig + eps
        plus = loss_fn(batch, cfg)
        reps[i, j] = orig - eps
        minus = loss_fn(batch, cfg)
        reps[i, j] = orig
        numeric = (plus - minus) / (2 * eps)
        assert abs(grad[i, j] - numeric) <= tol * max(1.0, abs(numeric))


def test_scl_gradient_matches_finite_differences():
    rng = np.random.default_rng(15)
    for _ in range(5):
        batch = random_group_batch(rng, n=6, dim=4)
        grad_vs_fd(scl_loss, scl_backward, batch, ObjectiveConfig(tau1=0.3))


def test_infonce_gradient_matches_finite_differences():
    rng = np.random.default_rng(16)
    for mode in (AS_WRITTEN, POSITIVES):
        batch = random_pair_batch(rng, n_pairs=4, dim=3)
        cfg = ObjectiveConfig(tau2=0.3, infonce_denominator=mode)
        grad_vs_fd(infonce_loss, infonce_backward, batch, cfg)


def test_combined_loss_and_backward():
    rng = np.random.default_rng(17)
    batch = random_pair_batch(rng, n_pairs=3, dim=4)
    for alpha in (0.0, 0.25, 1.0):
        cfg = ObjectiveConfig(alpha=alpha, tau1=0.3, tau2=0.3)
        want = combined_loss(scl_loss(batch, cfg), infonce_loss(batch, cfg), cfg)
        got, grad = contrastive_backward(batch, cfg)
        assert abs(got - want) < 1e-12
        g = alpha * scl_backward(batch, cfg)[1] + (1 - alpha) * infonce_backward(batch, cfg)[1]
        np.testing.assert_allclose(grad, g, atol=1e-12)
    with pytest.raises(ContrastiveError):
        combined_loss(float("nan"), 0.0, ObjectiveConfig())


def test_zero_norm_rep_rejected():
    reps = np.array([[1.0, 0.0], [0.0, 0.0], [1.0, 1.0], [0.5, 0.5]])
    batch = ContrastiveBatch(reps=reps, group_ids=(0, 0, 1, 1))
    with pytest.raises(ContrastiveError, match="zero-norm"):
        scl_loss(batch, ObjectiveConfig())
