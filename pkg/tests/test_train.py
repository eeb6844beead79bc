import math

import numpy as np
import pytest

from charngram import (
    AdamState,
    DataError,
    MinCount,
    NumericalError,
    PairDataset,
    TrainConfig,
    TrainingCurve,
    batch_step,
    build_vocab,
    cosine,
    encode,
    epoch_permutation,
    finite_diff_audit,
    init_model,
    normalize,
    pair_loss,
    select_negatives,
    train,
)
from charngram.model import Model
from charngram.train import _batch_gradients, _encode_batch, _rng

from conftest import random_model


def _vec(angle):
    return np.array([math.cos(angle), math.sin(angle)])


# --- pair_loss ---------------------------------------------------------------


def test_pair_loss_margins_satisfied():
    x = np.array([1.0, 0.0])
    t = np.array([0.0, 1.0])
    assert pair_loss(x, x, t, t, 0.4) == 0.0


def test_pair_loss_both_hinges_at_margin():
    x1 = np.array([1.0, 0.0])
    x2 = np.array([0.0, 1.0])
    # both negatives orthogonal to their anchor
    assert pair_loss(x1, x2, x2, x1, 0.4) == pytest.approx(0.8)


def test_pair_loss_mixed_hinges():
    x1 = _vec(0.0)
    x2 = _vec(math.pi / 3)  # cos(x1, x2) = 0.5
    t1 = _vec(math.pi / 3)  # cos(x1, t1) = 0.5
    t2 = -x2  # cos(x2, t2) = -1
    assert pair_loss(x1, x2, t1, t2, 0.4) == pytest.approx(0.4)


# --- select_negatives --------------------------------------------------------


def _batch_from_vectors(side1, side2):
    return [({}, {}, np.asarray(a), np.asarray(b)) for a, b in zip(side1, side2)]


def test_two_pairs_unique_candidate():
    batch = _batch_from_vectors([_vec(0), _vec(1)], [_vec(2), _vec(3)])
    for mode in ("max", "mix"):
        rng = _rng(0, 99)
        assert select_negatives(batch, mode, rng) == [((1, 0), (1, 1)), ((0, 0), (0, 1))]


def test_max_prefers_most_similar():
    # cos(e0, e1) = 0.9, cos(e0, e2) = 0.1
    side1 = [_vec(0), _vec(math.acos(0.9)), _vec(math.acos(0.1))]
    side2 = [_vec(1), _vec(2), _vec(3)]
    batch = _batch_from_vectors(side1, side2)
    out = select_negatives(batch, "max", _rng(0, 1))
    assert out[0][0] == (1, 0)


def test_max_tie_breaks_by_lowest_index():
    dup = _vec(0.5)
    batch = _batch_from_vectors([_vec(0), dup, dup.copy()], [_vec(1), _vec(2), _vec(3)])
    out = select_negatives(batch, "max", _rng(0, 2))
    assert out[0][0] == (1, 0)  # pairs 1 and 2 tie exactly; lowest index wins


def test_batch_of_one_rejected():
    with pytest.raises(DataError, match="cannot sample negatives"):
        select_negatives(_batch_from_vectors([_vec(0)], [_vec(1)]), "max", _rng(0, 3))


def test_max_never_consumes_rng():
    batch = _batch_from_vectors([_vec(i) for i in range(4)], [_vec(i + 9) for i in range(4)])
    rng = _rng(7, 4)
    select_negatives(batch, "max", rng)
    untouched = _rng(7, 4)
    assert rng.random() == untouched.random()


def test_mix_matches_manual_replay():
    rng_data = np.random.default_rng(21)
    n = 6
    side1 = [rng_data.normal(size=3) for _ in range(n)]
    side2 = [rng_data.normal(size=3) for _ in range(n)]
    batch = _batch_from_vectors(side1, side2)

    got = select_negatives(batch, "mix", _rng(5, 6))

    # replay: one coin per pair per side in order, uniform draw only on tails
    replay = _rng(5, 6)
    sides = (side1, side2)
    for i in range(n):
        for side in (0, 1):
            allowed = [j for j in range(n) if j != i]
            if replay.random() < 0.5:
                best = max(allowed, key=lambda j: (cosine(sides[side][i], sides[side][j]), -j))
                expected = (best, side)
            else:
                expected = (allowed[int(replay.integers(len(allowed)))], side)
            assert got[i][side] == expected


def test_string_equal_candidates_excluded():
    texts = [(" a ", " b "), (" a ", " c "), (" d ", " e ")]
    # make pair 1's side-1 the most similar, so exclusion must actively skip it
    side1 = [_vec(0), _vec(0.01), _vec(1.0)]
    side2 = [_vec(2), _vec(3), _vec(4)]
    out = select_negatives(_batch_from_vectors(side1, side2), "max", _rng(0, 7), texts=texts)
    assert out[0][0] == (2, 0)


def test_exclusion_fallback_when_pool_empties():
    texts = [(" a ", " b "), (" a ", " b ")]
    batch = _batch_from_vectors([_vec(0), _vec(0.2)], [_vec(1), _vec(1.2)])
    out = select_negatives(batch, "max", _rng(0, 8), texts=texts)
    assert out[0][0] == (1, 0)  # only candidate, readmitted by the fallback


def test_both_sides_pool_reaches_other_side():
    side1 = [_vec(0), _vec(math.pi / 2)]
    side2 = [_vec(2), _vec(0.05)]  # pair 1 side 2 is closest to pair 0 side 1
    batch = _batch_from_vectors(side1, side2)
    out = select_negatives(batch, "max", _rng(0, 9), pool="both-sides")
    assert out[0][0] == (1, 1)


def test_max_matches_exhaustive_scan():
    rng = np.random.default_rng(33)
    for _ in range(25):
        n = int(rng.integers(2, 12))
        side1 = [rng.normal(size=4) for _ in range(n)]
        side2 = [rng.normal(size=4) for _ in range(n)]
        got = select_negatives(_batch_from_vectors(side1, side2), "max", _rng(1, 10))
        for i in range(n):
            for side, embs in ((0, side1), (1, side2)):
                best, best_c = None, -2.0
                for j in range(n):
                    if j == i:
                        continue
                    c = cosine(embs[i], embs[j])
                    if c > best_c:
                        best, best_c = j, c
                assert got[i][side] == (best, side)


# --- crafted two-cluster setup ----------------------------------------------


def _orthogonal_setup(scale=3.0):
    """Vocabulary over "aa"/"bb"; a-grams embed along e1, b-grams along e2."""
    vocab = build_vocab(["aa", "bb"], {2}, MinCount(1))
    weights = np.zeros((len(vocab), 2))
    for ngram, _, _ in vocab.entries:
        row = vocab.index[ngram]
        weights[row] = [scale, 0.0] if "a" in ngram else [0.0, scale]
    model = Model(weights=weights, bias=np.zeros(2), activation="linear",
                  vocab_fingerprint=vocab.fingerprint)
    return vocab, model


def test_satisfied_margins_leave_parameters_unchanged():
    vocab, model = _orthogonal_setup()
    before_w = model.weights.copy()
    before_b = model.bias.copy()
    config = TrainConfig(dim=2, activation="linear", batch_size=2, reg_lambda=0.0)
    adam = AdamState()
    loss = batch_step([("aa", "aa"), ("bb", "bb")], model, vocab, config, adam, _rng(0, 11))
    assert loss == 0.0
    assert np.array_equal(model.weights, before_w)
    assert np.array_equal(model.bias, before_b)


def test_inactive_hinges_give_pure_regularizer_gradient():
    vocab, model = _orthogonal_setup()
    lam = 1e-2
    config = TrainConfig(dim=2, activation="linear", batch_size=2, reg_lambda=lam)
    texts, cv_sides = _encode_batch([("aa", "aa"), ("bb", "bb")], vocab, "lower")
    negatives = [((1, 0), (1, 1)), ((0, 0), (0, 1))]
    loss, grad_bias, grad_rows = _batch_gradients(cv_sides, model, config, negatives)
    assert loss == 0.0
    assert np.array_equal(grad_bias, 2 * lam * model.bias)
    for row, g in grad_rows.items():
        assert np.array_equal(g, 2 * lam * model.weights[row])


def test_decay_only_step_shrinks_touched_rows():
    vocab, model = _orthogonal_setup()
    config = TrainConfig(dim=2, activation="linear", batch_size=2, reg_lambda=1e-2)
    before = model.weights.copy()
    batch_step([("aa", "aa"), ("bb", "bb")], model, vocab, config, AdamState(), _rng(0, 12))
    moved = np.abs(model.weights) - np.abs(before)
    assert np.all(moved[np.abs(before) > 0.1] < 0)  # big coordinates move toward zero


def test_first_adam_step_is_signed_learning_rate():
    vocab, model = _orthogonal_setup()
    config = TrainConfig(dim=2, activation="linear", batch_size=2, learning_rate=0.001)
    texts, cv_sides = _encode_batch([("aa", "bb"), ("bb", "aa")], vocab, "lower")
    negatives = select_negatives(
        [(cv_sides[0][i], cv_sides[1][i],
          model.weights.T @ _indicator(cv_sides[0][i], len(vocab)),
          model.weights.T @ _indicator(cv_sides[1][i], len(vocab)))
         for i in range(2)],
        "max", _rng(0, 13), texts=texts)
    _, grad_bias, grad_rows = _batch_gradients(cv_sides, model, config, negatives)

    before_w = model.weights.copy()
    before_b = model.bias.copy()
    batch_step([("aa", "bb"), ("bb", "aa")], model, vocab, config, AdamState(), _rng(0, 13))

    for grad, delta in [(grad_bias, model.bias - before_b)] + [
        (grad_rows[r], model.weights[r] - before_w[r]) for r in grad_rows
    ]:
        big = np.abs(grad) > 1e-4
        assert np.allclose(delta[big], -config.learning_rate * np.sign(grad[big]), atol=1e-6)


def _indicator(cv, size):
    x = np.zeros(size)
    for row, count in cv.items():
        x[row] = count
    return x


def test_untouched_rows_bit_unchanged(small_vocab):
    config = TrainConfig(dim=4, batch_size=2, seed=3, reg_lambda=1e-4)
    model = init_model(small_vocab, config)
    before = model.weights.copy()
    batch = [("the cat", "black cat"), ("dogs bark", "bark loud")]
    adam = AdamState()
    batch_step(batch, model, small_vocab, config, adam, _rng(3, 14))

    touched = set()
    for a, b in batch:
        touched |= set(encode(normalize(a), small_vocab))
        touched |= set(encode(normalize(b), small_vocab))
    for row in range(len(small_vocab)):
        if row not in touched:
            assert np.array_equal(model.weights[row], before[row])
    assert set(adam.m_rows) <= touched
    assert adam.step == 1


def test_batch_step_rejects_singleton():
    vocab, model = _orthogonal_setup()
    config = TrainConfig(dim=2, activation="linear", batch_size=2)
    with pytest.raises(DataError, match="cannot sample negatives"):
        batch_step([("aa", "bb")], model, vocab, config, AdamState(), _rng(0, 15))


# --- config and curve --------------------------------------------------------


def test_config_rejects_relu():
    with pytest.raises(ValueError, match="relu"):
        TrainConfig(activation="relu").validate()


@pytest.mark.parametrize(
    "kwargs",
    [
        {"batch_size": 1},
        {"margin": 0.0},
        {"sampling": "hardest"},
        {"epochs": -1},
        {"learning_rate": 0.0},
        {"reg_lambda": -1e-6},
        {"adam_beta1": 1.0},
        {"eval_every": -0.5},
        {"negative_pool": "everything"},
    ],
)
def test_config_validation_errors(kwargs):
    with pytest.raises(ValueError):
        TrainConfig(**kwargs).validate()


def test_curve_requires_nondecreasing_examples():
    curve = TrainingCurve()
    curve.add(10, "loss", 1.0)
    curve.add(10, "dev", 0.5)
    with pytest.raises(ValueError):
        curve.add(9, "loss", 0.9)


# --- train -------------------------------------------------------------------


PAIRS = PairDataset(
    [
        ("the cat sat", "a cat sat down"),
        ("dogs run fast", "the dog runs"),
        ("birds sing", "a bird sings"),
        ("cats nap", "the cat naps"),
        ("fish swim", "fishes swimming"),
        ("a black cat", "black cats"),
        ("loud dogs", "a loud dog"),
    ]
)


@pytest.fixture(scope="module")
def pair_vocab():
    corpus = [t for pair in PAIRS.pairs for t in pair]
    return build_vocab(corpus, (2, 3), MinCount(1))


def test_train_deterministic(pair_vocab):
    config = TrainConfig(dim=5, batch_size=3, epochs=2, seed=42)
    m1, _, c1 = train(PAIRS, pair_vocab, config)
    m2, _, c2 = train(PAIRS, pair_vocab, config)
    assert np.array_equal(m1.weights, m2.weights)
    assert np.array_equal(m1.bias, m2.bias)
    assert c1.points == c2.points


def test_train_zero_epochs_returns_init(pair_vocab):
    config = TrainConfig(dim=5, batch_size=3, epochs=0, seed=8)
    model, adam, curve = train(PAIRS, pair_vocab, config)
    fresh = init_model(pair_vocab, config)
    assert np.array_equal(model.weights, fresh.weights)
    assert np.array_equal(model.bias, fresh.bias)
    assert curve.points == [] and adam.step == 0


def test_train_empty_inputs(pair_vocab):
    config = TrainConfig(dim=4, batch_size=2, epochs=1)
    with pytest.raises(DataError, match="empty dataset"):
        train(PairDataset([]), pair_vocab, config)
    with pytest.warns(UserWarning, match="empty"):
        empty_vocab = build_vocab(["q"], {4}, MinCount(9))
    with pytest.raises(DataError, match="empty vocabulary"):
        train(PAIRS, empty_vocab, config)


def test_short_final_batch_dropped(pair_vocab):
    # 7 pairs, batch 3 -> batches of 3 and 3; the trailing singleton is dropped
    config = TrainConfig(dim=4, batch_size=3, epochs=1, seed=1, eval_every=0.0)
    _, adam, curve = train(PAIRS, pair_vocab, config)
    assert adam.step == 2
    assert curve.points[-1][0] == 6


def test_epoch_permutation_properties():
    p1 = epoch_permutation(9, 4, 20, False)
    p2 = epoch_permutation(9, 4, 20, False)
    assert np.array_equal(p1, p2)
    assert sorted(p1) == list(range(20))
    assert not np.array_equal(epoch_permutation(9, 5, 20, False), p1)
    assert np.array_equal(epoch_permutation(9, 0, 20, True), np.arange(20))
    assert np.array_equal(epoch_permutation(9, 3, 20, True), epoch_permutation(9, 3, 20, False))


def test_curriculum_changes_only_first_epoch(pair_vocab):
    config = TrainConfig(dim=4, batch_size=3, epochs=3, seed=6)
    log_plain: list = []
    log_curr: list = []
    train(PAIRS, pair_vocab, config)  # warm call, no log
    train(PAIRS, pair_vocab, TrainConfig(**{**config.__dict__}), order_log=log_plain)
    train(
        PAIRS,
        pair_vocab,
        TrainConfig(**{**config.__dict__, "curriculum": True}),
        order_log=log_curr,
    )
    assert log_curr[0][1] == tuple(range(len(PAIRS)))
    assert log_plain[0][1] != log_curr[0][1]
    for epoch in (1, 2):
        assert log_plain[epoch][1] == log_curr[epoch][1]


def test_eval_hook_and_curve_metrics(pair_vocab):
    config = TrainConfig(dim=4, batch_size=3, epochs=2, seed=2, eval_every=0.5)
    calls = []

    def hook(model, examples_seen):
        calls.append(examples_seen)
        return {"dev_score": 0.25}

    _, _, curve = train(PAIRS, pair_vocab, config, eval_hook=hook)
    metrics = {m for _, m, _ in curve.points}
    assert metrics == {"train_loss", "dev_score", "epoch_mean_batch_loss"}
    assert calls == [int(n) for n, m, _ in curve.points if m == "dev_score"]
    seen = [n for n, _, _ in curve.points]
    assert seen == sorted(seen)


def test_train_nan_guard(pair_vocab):
    config = TrainConfig(
        dim=4, activation="linear", batch_size=3, epochs=3, seed=0, learning_rate=1e300
    )
    with pytest.raises(NumericalError, match=r"epoch \d+, batch \d+"):
        with np.errstate(all="ignore"):
            train(PAIRS, pair_vocab, config)


# --- finite-difference audit -------------------------------------------------


def test_audit_linear_no_reg(pair_vocab):
    config = TrainConfig(dim=4, activation="linear", batch_size=5, seed=3, reg_lambda=0.0)
    model = init_model(pair_vocab, config)
    worst = finite_diff_audit(model, pair_vocab, PAIRS.pairs[:5], config)
    assert worst < 1e-6


def test_audit_tanh_with_reg(pair_vocab):
    config = TrainConfig(dim=4, activation="tanh", batch_size=5, seed=4, reg_lambda=1e-4)
    model, _, _ = train(PAIRS, pair_vocab, TrainConfig(dim=4, batch_size=3, epochs=1, seed=4))
    worst = finite_diff_audit(model, pair_vocab, PAIRS.pairs[:5], config)
    assert worst < 1e-4


def test_audit_restores_parameters(pair_vocab):
    config = TrainConfig(dim=4, activation="tanh", batch_size=5, seed=5, reg_lambda=1e-5)
    model = init_model(pair_vocab, config)
    w = model.weights.copy()
    b = model.bias.copy()
    finite_diff_audit(model, pair_vocab, PAIRS.pairs[:5], config)
    assert np.array_equal(model.weights, w)
    assert np.array_equal(model.bias, b)
