import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from sasvkit.errors import InputError, NumericalError, ScoringError
from sasvkit.fusion_mlp import (
    HIDDEN, MlpParams, OptimState, ScheduleConfig, TrainConfig, accuracy,
    adam_step, batch_loss, build_train_pairs, forward, forward_batch, init_params,
    load_model, loss_and_grad, lr_schedule, pair_inputs, save_model, score_b2, train,
    zero_params,
)
from sasvkit.protocol import ProtocolSet, TrainRow
from sasvkit.synth import SynthConfig, generate


def fd_relative_error(params, x, y, h=1e-5, coords=None, rng=None):
    """Max elementwise relative error of the analytic gradient vs central differences."""
    _, grads = loss_and_grad(params, x, y)
    worst = 0.0
    for arr, g in zip(params.arrays(), grads.arrays()):
        flat_idx = range(arr.size) if coords is None else rng.choice(arr.size, min(coords, arr.size), replace=False)
        for j in flat_idx:
            idx = np.unravel_index(j, arr.shape)
            old = arr[idx]
            arr[idx] = old + h
            up = batch_loss(params, x, y)
            arr[idx] = old - h
            down = batch_loss(params, x, y)
            arr[idx] = old
            num = (up - down) / (2 * h)
            ana = g[idx]
            worst = max(worst, abs(num - ana) / max(abs(num), abs(ana), 1e-6))
    return worst


def test_zero_network():
    p = zero_params(4, 3, (5, 4))
    (l0, l1), prob = forward(p, np.ones(4), -np.ones(4), np.arange(3.0))
    assert (l0, l1) == (0.0, 0.0) and prob == 0.5
    x = np.random.default_rng(0).normal(size=(7, 11))
    assert abs(batch_loss(p, x, [True, False] * 3 + [True]) - math.log(2)) <= 1e-12


def _toy_1d(slope=0.01):
    # input width 3 (spk_dim 1, cm_dim 1), one hidden unit
    w1 = np.array([[1.0], [-2.0], [0.5]])
    b1 = np.array([0.1])
    w2 = np.array([[2.0, -1.0]])
    b2 = np.array([0.0, 0.3])
    return MlpParams([w1, w2], [b1, b2], slope)


def test_hand_forward():
    p = _toy_1d()
    # z = 1*0.4 - 2*0.3 + 0.5*1 + 0.1 = 0.4 > 0 ; logits = (0.8, -0.1)
    (l0, l1), prob = forward(p, [0.4], [0.3], [1.0])
    assert l0 == pytest.approx(0.8, abs=1e-12) and l1 == pytest.approx(-0.1, abs=1e-12)
    assert prob == pytest.approx(1 / (1 + math.exp(-0.9)), abs=1e-12)
    # negative pre-activation: z = -1.9 -> 0.01 * -1.9 = -0.019
    (l0, l1), _ = forward(p, [-1.0], [0.5], [0.0])
    assert l0 == pytest.approx(-0.038, abs=1e-12) and l1 == pytest.approx(0.019 + 0.3, abs=1e-12)


def test_positive_homogeneity_without_bias():
    p = init_params(3, 2, (6, 5), seed=1)
    p = MlpParams(p.weights, [np.zeros_like(b) for b in p.biases], p.negative_slope)
    x = np.random.default_rng(2).normal(size=(4, 8))
    l1, _ = forward_batch(p, x)
    l2, _ = forward_batch(p, 2 * x)
    np.testing.assert_allclose(l2, 2 * l1, rtol=1e-12, atol=1e-14)


def test_input_width_mismatch():
    with pytest.raises(ScoringError):
        forward_batch(zero_params(2, 2, (3,)), np.zeros((1, 5)))


def test_gradient_small_network():
    rng = np.random.default_rng(11)
    for i in range(5):
        p = init_params(3, 2, (5, 4, 3), seed=i)
        p = MlpParams(p.weights, [rng.normal(0, 0.1, b.shape) for b in p.biases], p.negative_slope)
        x = rng.normal(size=(6, 8))
        y = rng.random(6) < 0.5
        assert fd_relative_error(p, x, y) < 1e-4


def test_gradient_full_size_spot_check():
    rng = np.random.default_rng(5)
    p = init_params(192, 160, HIDDEN, seed=0)
    x = rng.normal(size=(4, 544)) / 10
    y = np.array([True, False, True, False])
    assert fd_relative_error(p, x, y, coords=6, rng=rng) < 1e-4


def test_duplicated_batch_same_loss_and_grad():
    rng = np.random.default_rng(3)
    p = init_params(2, 2, (4,), seed=0)
    x = rng.normal(size=(5, 6))
    y = rng.random(5) < 0.5
    l1, g1 = loss_and_grad(p, x, y)
    l2, g2 = loss_and_grad(p, np.vstack([x, x]), np.concatenate([y, y]))
    assert abs(l1 - l2) < 1e-14
    for a, b in zip(g1.arrays(), g2.arrays()):
        np.testing.assert_allclose(a, b, rtol=1e-12, atol=1e-15)


def test_empty_batch():
    with pytest.raises(InputError):
        loss_and_grad(zero_params(2, 2, (3,)), np.zeros((0, 6)), [])


def _single(value):
    return MlpParams([np.array([[value, 0.0]])], [np.zeros(2)])


def test_adam_first_step():
    p = _single(0.5)
    g = MlpParams([np.array([[0.2, -3.0]])], [np.array([0.0, 1e-3])])
    new, opt = adam_step(p, g, OptimState.for_params(p), lr=0.01)
    # bias-corrected m and v equal g and g**2 after one step
    for gv, pv, nv in zip((0.2, -3.0), (0.5, 0.0), new.weights[0][0]):
        assert nv == pytest.approx(pv - 0.01 * gv / (abs(gv) + 1e-8), abs=1e-12)
    assert new.biases[0][0] == 0.0
    assert new.biases[0][1] == pytest.approx(-0.01 * 1e-3 / (1e-3 + 1e-8), abs=1e-12)
    assert opt.step == 1
    assert p.weights[0][0, 0] == 0.5


def test_adam_two_steps_manual():
    p = _single(1.0)
    opt = OptimState.for_params(p)
    gs, lrs = (0.3, -0.7), (0.1, 0.05)
    w = 1.0
    m = v = 0.0
    for t, (gv, lr) in enumerate(zip(gs, lrs), start=1):
        m = 0.9 * m + 0.1 * gv
        v = 0.999 * v + 0.001 * gv * gv
        w -= lr * (m / (1 - 0.9 ** t)) / (math.sqrt(v / (1 - 0.999 ** t)) + 1e-8)
        g = MlpParams([np.array([[gv, 0.0]])], [np.zeros(2)])
        p, opt = adam_step(p, g, opt, lr)
    assert abs(p.weights[0][0, 0] - w) <= 1e-12
    assert opt.step == 2


def test_adam_zero_gradient_is_noop():
    p = init_params(2, 1, (3,), seed=0)
    new, _ = adam_step(p, p.zeros_like(), OptimState.for_params(p), lr=0.1)
    assert new.equals(p)


def test_adam_non_finite_gradient():
    p = _single(1.0)
    g = MlpParams([np.array([[np.nan, 0.0]])], [np.zeros(2)])
    with pytest.raises(NumericalError):
        adam_step(p, g, OptimState.for_params(p), lr=0.1)


def test_lr_schedule_points():
    c = ScheduleConfig(0.1, 0.001, period=10)
    assert lr_schedule(0, c) == 0.1
    assert lr_schedule(10, c) == 0.1 and lr_schedule(30, c) == 0.1
    assert abs(lr_schedule(5, c) - 0.0505) <= 1e-12
    assert lr_schedule(9, c) < lr_schedule(8, c)


def test_lr_schedule_growing_cycles():
    c = ScheduleConfig(0.1, 0.001, period=4, restart_mult=2)
    for boundary in (0, 4, 12, 28):
        assert lr_schedule(boundary, c) == 0.1
    assert abs(lr_schedule(4 + 4, c) - 0.0505) <= 1e-12
    assert lr_schedule(11, c) < lr_schedule(10, c)


@given(st.integers(0, 10_000), st.integers(1, 50), st.integers(1, 3))
def test_lr_schedule_bounds(step, period, mult):
    lr = lr_schedule(step, ScheduleConfig(0.1, 0.001, period, mult))
    assert 0.001 <= lr <= 0.1


def test_schedule_validation():
    for bad in (ScheduleConfig(0.001, 0.1), ScheduleConfig(period=0), ScheduleConfig(restart_mult=0)):
        with pytest.raises(ValueError):
            lr_schedule(0, bad)


def _rows_2x2():
    return [TrainRow("s1", "a", "bonafide"), TrainRow("s1", "b", "bonafide"),
            TrainRow("s2", "c", "bonafide"), TrainRow("s2", "d", "bonafide")]


def test_pairs_2x2():
    pairs = build_train_pairs(_rows_2x2(), seed=0)
    kinds = [p.kind for p in pairs]
    assert kinds.count("target") == 4 and kinds.count("nontarget") == 4
    same = {"a": "b", "b": "a", "c": "d", "d": "c"}
    for p in pairs:
        if p.kind == "target":
            assert p.test_utt == same[p.enrol_utt]
        else:
            assert p.test_utt not in (p.enrol_utt, same[p.enrol_utt])
    assert build_train_pairs(_rows_2x2(), seed=0) == pairs


def test_pairs_spoof_and_degenerate():
    rows = _rows_2x2() + [TrainRow("s1", "x", "A01")]
    spoofs = [p for p in build_train_pairs(rows) if p.kind == "spoof"]
    assert len(spoofs) == 2 and all(p.test_utt == "x" for p in spoofs)
    with pytest.raises(InputError, match="degenerate"):
        build_train_pairs([TrainRow("s1", "a", "bonafide"), TrainRow("s2", "b", "bonafide")])


def _toy_setup(seed=0, **kw):
    c = generate(SynthConfig(n_speakers=1, spoof_cm_separation=10.0, seed=seed, **kw))
    return c, build_train_pairs(c.train_rows, seed=seed)


def test_train_zero_epochs_returns_init():
    c, pairs = _toy_setup(spk_dim=8, cm_dim=6)
    res = train(c.spk_store, c.cm_emb_store, pairs, TrainConfig(epochs=0, hidden=(4, 3), seed=7))
    assert res.params.equals(init_params(8, 6, (4, 3), seed=7))
    assert res.trace == []


def test_train_deterministic():
    c, pairs = _toy_setup(spk_dim=8, cm_dim=6)
    cfg = TrainConfig(epochs=2, hidden=(8, 4), seed=1)
    a = train(c.spk_store, c.cm_emb_store, pairs, cfg)
    b = train(c.spk_store, c.cm_emb_store, pairs, cfg)
    assert a.params.equals(b.params) and a.trace == b.trace


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_train_separable_toy(seed):
    c, pairs = _toy_setup(seed)
    res = train(c.spk_store, c.cm_emb_store, pairs, TrainConfig(seed=seed))
    x, y = pair_inputs(pairs, c.spk_store, c.cm_emb_store)
    assert accuracy(res.params, x, y) >= 0.99


def test_score_b2(small_corpus):
    c = small_corpus
    p = zero_params(c.spk_store.dim, c.cm_emb_store.dim, (4, 3))
    s = score_b2(p, c.eval, c.spk_store, c.cm_emb_store)
    assert np.all(s.scores == 0.5)
    p = init_params(c.spk_store.dim, c.cm_emb_store.dim, (4, 3), seed=0)
    s = score_b2(p, c.eval, c.spk_store, c.cm_emb_store)
    t = c.eval.trials[0]
    enrol = np.mean([c.spk_store[u] for u in c.eval.enrolments[t.speaker_model].enrol_utts], axis=0)
    _, prob = forward(p, enrol, c.spk_store[t.test_utt], c.cm_emb_store[t.test_utt])
    assert s.scores[0] == pytest.approx(prob, abs=1e-15)
    with pytest.raises(ScoringError):
        score_b2(p, c.eval, c.spk_store, c.cm_logit_store)


def test_score_b2_permutation(small_corpus):
    c = small_corpus
    p = init_params(c.spk_store.dim, c.cm_emb_store.dim, (4, 3), seed=1)
    base = score_b2(p, c.eval, c.spk_store, c.cm_emb_store)
    order = np.random.default_rng(0).permutation(len(c.eval))
    perm = ProtocolSet(tuple(c.eval.trials[i] for i in order), c.eval.enrolments)
    np.testing.assert_array_equal(score_b2(p, perm, c.spk_store, c.cm_emb_store).scores, base.scores[order])
    one = ProtocolSet(c.eval.trials[:1], c.eval.enrolments)
    assert score_b2(p, one, c.spk_store, c.cm_emb_store).scores[0] == base.scores[0]


@given(st.integers(0, 2**31), st.floats(0.1, 50))
def test_softmax_and_loss_bounds(seed, scale):
    rng = np.random.default_rng(seed)
    p = init_params(2, 2, (5, 3), seed=seed)
    x = rng.normal(0, scale, size=(6, 6))
    logits, prob = forward_batch(p, x)
    e = np.exp(logits - logits.max(axis=1, keepdims=True))
    soft = e / e.sum(axis=1, keepdims=True)
    np.testing.assert_allclose(soft.sum(axis=1), 1.0, atol=1e-12)
    np.testing.assert_allclose(prob, soft[:, 0], atol=1e-15)
    assert batch_loss(p, x, rng.random(6) < 0.5) >= 0.0


def test_model_round_trip(tmp_path):
    p = init_params(5, 3, (7, 4), seed=2, negative_slope=0.02)
    save_model(p, tmp_path / "m.bin", {"seed": "2"})
    q, meta = load_model(tmp_path / "m.bin")
    assert q.equals(p) and meta["seed"] == "2"
    save_model(q, tmp_path / "m2.bin", {"seed": "2"})
    assert (tmp_path / "m.bin").read_bytes() == (tmp_path / "m2.bin").read_bytes()


def test_model_file_errors(tmp_path):
    (tmp_path / "x.bin").write_bytes(b"NOTAMODEL")
    with pytest.raises(InputError):
        load_model(tmp_path / "x.bin")
    p = init_params(2, 1, (3,), seed=0)
    save_model(p, tmp_path / "m.bin")
    (tmp_path / "t.bin").write_bytes((tmp_path / "m.bin").read_bytes()[:40])
    with pytest.raises(InputError):
        load_model(tmp_path / "t.bin")
