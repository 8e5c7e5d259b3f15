"""Linear-chain CRF against exhaustive path enumeration."""

import itertools
import math

import numpy as np
import pytest

from oovtag.corpus import Dataset, Utterance
from oovtag.crf import (
    BIO_PENALTY, CrfParams, TagIndex, bio_penalty_params, build_tag_index,
    crf_backward, crf_nll, emissions, emissions_backward, init_crf_params,
    log_partition, marginal_table, score_sequence, viterbi,
)


def random_instance(rng, steps=None, n_tags=None, scale=1.0):
    steps = steps or int(rng.integers(1, 6))
    n_tags = n_tags or int(rng.integers(1, 5))
    params = CrfParams(
        proj_w=np.eye(n_tags),
        proj_b=np.zeros(n_tags),
        transitions=rng.normal(scale=scale, size=(n_tags, n_tags)),
        start=rng.normal(scale=scale, size=n_tags),
        end=rng.normal(scale=scale, size=n_tags),
    )
    em = rng.normal(scale=scale, size=(steps, n_tags))
    return em, params


def enumerate_scores(em, params):
    steps, n_tags = em.shape
    out = []
    for path in itertools.product(range(n_tags), repeat=steps):
        score = params.start[path[0]] + params.end[path[-1]]
        for t, k in enumerate(path):
            score += em[t, k]
        for a, b in zip(path, path[1:]):
            score += params.transitions[a, b]
        out.append((path, float(score)))
    return out


def brute_log_partition(em, params):
    scores = [s for _, s in enumerate_scores(em, params)]
    m = max(scores)
    return m + math.log(sum(math.exp(s - m) for s in scores))


def brute_viterbi(em, params):
    scored = enumerate_scores(em, params)
    best = max(s for _, s in scored)
    optimal = [p for p, s in scored if s >= best - 1e-12]
    # Per-step lowest-index tie-breaking equals the reverse-lexicographic
    # minimum over the optimal set.
    return list(min(optimal, key=lambda p: tuple(reversed(p))))


def test_log_partition_matches_enumeration():
    rng = np.random.default_rng(1)
    for _ in range(60):
        em, params = random_instance(rng, scale=float(rng.uniform(0.2, 3.0)))
        assert abs(log_partition(em, params) - brute_log_partition(em, params)) < 1e-9


def test_nll_matches_enumeration_and_is_nonnegative():
    rng = np.random.default_rng(2)
    for _ in range(60):
        em, params = random_instance(rng)
        gold = [int(rng.integers(params.n_tags)) for _ in range(em.shape[0])]
        want = brute_log_partition(em, params) - score_sequence(em, params, gold)
        got = crf_nll(em, params, gold)
        assert abs(got - want) < 1e-9
        assert got > -1e-12


def test_viterbi_matches_enumeration():
    rng = np.random.default_rng(3)
    for _ in range(60):
        em, params = random_instance(rng)
        assert viterbi(em, params) == brute_viterbi(em, params)


def test_viterbi_tie_breaking_exact():
    # All-zero scores make every path optimal; the rule picks all-zeros.
    params = CrfParams(
        proj_w=np.eye(3), proj_b=np.zeros(3),
        transitions=np.zeros((3, 3)), start=np.zeros(3), end=np.zeros(3),
    )
    em = np.zeros((4, 3))
    assert viterbi(em, params) == [0, 0, 0, 0]
    assert brute_viterbi(em, params) == [0, 0, 0, 0]
    # Two optimal paths differing at the first step: (0,1) and (1,0) under
    # a symmetric construction; reversed-tuple order prefers ending low.
    em2 = np.array([[1.0, 1.0], [1.0, 1.0]])
    params2 = CrfParams(
        proj_w=np.eye(2), proj_b=np.zeros(2),
        transitions=np.array([[0.0, 1.0], [1.0, 0.0]]),
        start=np.zeros(2), end=np.zeros(2),
    )
    assert viterbi(em2, params2) == brute_viterbi(em2, params2) == [1, 0]


def test_single_tag_chain_is_deterministic():
    rng = np.random.default_rng(4)
    em, params = random_instance(rng, steps=4, n_tags=1)
    assert abs(crf_nll(em, params, [0, 0, 0, 0])) < 1e-12
    assert viterbi(em, params) == [0, 0, 0, 0]
    np.testing.assert_allclose(marginal_table(em, params), 1.0)


def test_zero_parameter_partition_is_uniform():
    for steps, n_tags in ((1, 4), (3, 2), (5, 3)):
        params = CrfParams(
            proj_w=np.eye(n_tags), proj_b=np.zeros(n_tags),
            transitions=np.zeros((n_tags, n_tags)),
            start=np.zeros(n_tags), end=np.zeros(n_tags),
        )
        em = np.zeros((steps, n_tags))
        assert abs(log_partition(em, params) - steps * math.log(n_tags)) < 1e-12


def test_marginals_match_enumeration_and_sum_to_one():
    rng = np.random.default_rng(5)
    for _ in range(25):
        em, params = random_instance(rng)
        steps, n_tags = em.shape
        scored = enumerate_scores(em, params)
        log_z = brute_log_partition(em, params)
        want = np.zeros((steps, n_tags))
        for path, score in scored:
            weight = math.exp(score - log_z)
            for t, k in enumerate(path):
                want[t, k] += weight
        got = marginal_table(em, params)
        np.testing.assert_allclose(got, want, atol=1e-10)
        np.testing.assert_allclose(got.sum(axis=1), 1.0, atol=1e-12)


def test_crf_gradients_match_finite_differences():
    rng = np.random.default_rng(6)
    eps = 1e-6
    for _ in range(10):
        em, params = random_instance(rng, steps=4, n_tags=3)
        gold = [int(rng.integers(3)) for _ in range(4)]
        d_em, grads = crf_backward(em, params, gold)

        def nll():
            return crf_nll(em, params, gold)

        for t in range(4):
            for k in range(3):
                orig = em[t, k]
                em[t, k] = orig + eps
                plus = nll()
                em[t, k] = orig - eps
                minus = nll()
                em[t, k] = orig
                assert abs(d_em[t, k] - (plus - minus) / (2 * eps)) < 1e-7
        for name, tensor in (
            ("transitions", params.transitions),
            ("start", params.start),
            ("end", params.end),
        ):
            it = np.nditer(tensor, flags=["multi_index"])
            for _ in it:
                idx = it.multi_index
                orig = tensor[idx]
                tensor[idx] = orig + eps
                plus = nll()
                tensor[idx] = orig - eps
                minus = nll()
                tensor[idx] = orig
                assert abs(grads[name][idx] - (plus - minus) / (2 * eps)) < 1e-7


def test_emissions_projection_and_backward():
    rng = np.random.default_rng(7)
    params = init_crf_params(d_in=5, n_tags=3, rng=rng)
    hidden = rng.normal(size=(4, 5))
    em = emissions(hidden, params)
    np.testing.assert_allclose(em, hidden @ params.proj_w + params.proj_b, atol=1e-15)

    d_em = rng.normal(size=(4, 3))
    d_h, d_w, d_b = emissions_backward(hidden, params, d_em)
    eps = 1e-6

    def loss():
        return float((emissions(hidden, params) * d_em).sum())

    for arr, grad in ((hidden, d_h), (params.proj_w, d_w), (params.proj_b, d_b)):
        it = np.nditer(arr, flags=["multi_index"])
        for _ in it:
            idx = it.multi_index
            orig = arr[idx]
            arr[idx] = orig + eps
            plus = loss()
            arr[idx] = orig - eps
            minus = loss()
            arr[idx] = orig
            assert abs(grad[idx] - (plus - minus) / (2 * eps)) < 1e-7


def test_build_tag_index_layout(tiny_ds):
    index = build_tag_index(tiny_ds)
    assert index.tags[0] == "O"
    assert index.tags == ("O", "B-artist", "I-artist", "B-song", "I-song", "B-venue", "I-venue")
    assert index.id_of("O") == 0
    assert list(index.encode(("O", "B-song"))) == [0, 3]
    assert index.decode([0, 3]) == ("O", "B-song")
    with pytest.raises(KeyError):
        index.id_of("B-missing")


def test_tag_index_validation():
    with pytest.raises(ValueError):
        TagIndex(tags=("B-x",))  # O must come first
    with pytest.raises(ValueError):
        TagIndex(tags=("O", "B-x", "B-x"))


def test_bio_penalty_blocks_orphan_decodes():
    ds = Dataset(utterances=(Utterance(0, ("a", "b"), ("B-x", "I-x")),))
    index = build_tag_index(ds)
    rng = np.random.default_rng(8)
    params = init_crf_params(d_in=2, n_tags=len(index), rng=rng)
    constrained = bio_penalty_params(params, index)
    i_x = index.id_of("I-x")
    b_x = index.id_of("B-x")
    o = index.id_of("O")
    assert constrained.start[i_x] <= BIO_PENALTY
    assert constrained.transitions[o, i_x] <= BIO_PENALTY
    assert constrained.transitions[b_x, i_x] == params.transitions[b_x, i_x]
    assert constrained.transitions[i_x, i_x] == params.transitions[i_x, i_x]
    # Any decode under the penalty is strict-BIO valid, even when emissions
    # scream for orphan I tags.
    em = np.full((3, len(index)), -5.0)
    em[:, i_x] = 5.0
    path = index.decode(viterbi(em, constrained))
    from oovtag.corpus import validate_bio

    validate_bio(path, mode="strict")
    assert path[0] != "I-x"


def test_score_sequence_rejects_bad_paths():
    rng = np.random.default_rng(9)
    em, params = random_instance(rng, steps=3, n_tags=2)
    with pytest.raises(ValueError):
        score_sequence(em, params, [0, 1])
    with pytest.raises(ValueError):
        score_sequence(em, params, [0, 1, 2])
