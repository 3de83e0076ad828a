import numpy as np
import pytest

from deconav.memory import Frame, MemoryBank
from deconav.policy import (T_MAX, PolicyError, PolicyParams, TrainConfig, bc_train, feature_dim, featurize,
                            load_checkpoint, loss_and_grad, predict_chunk, save_checkpoint)
from deconav.world import Action


def test_gradient_matches_central_differences():
    rng = np.random.default_rng(0)
    worst = 0.0
    for trial in range(20):
        f = int(rng.integers(3, 9))
        b = int(rng.integers(1, 7))
        params = PolicyParams.init(f, seed=trial, scale=0.5)
        params.b = rng.standard_normal(params.b.shape)
        feats = rng.standard_normal((b, f))
        chunks = rng.integers(0, 4, size=(b, 4))
        l2 = float(rng.uniform(0, 0.1))
        _, (gw, gb) = loss_and_grad(params, feats, chunks, l2)
        h = 1e-5
        for arr, grad in ((params.w, gw), (params.b, gb)):
            for idx in np.ndindex(arr.shape):
                old = arr[idx]
                arr[idx] = old + h
                up = loss_and_grad(params, feats, chunks, l2)[0]
                arr[idx] = old - h
                down = loss_and_grad(params, feats, chunks, l2)[0]
                arr[idx] = old
                num = (up - down) / (2 * h)
                worst = max(worst, abs(num - grad[idx]) / max(1e-6, abs(num) + abs(grad[idx])))
    assert worst < 1e-4


def test_training_reduces_loss_and_fits_separable_data():
    rng = np.random.default_rng(1)
    feats = rng.standard_normal((400, 6))
    chunks = np.stack([(feats[:, j] > 0).astype(int) for j in range(4)], axis=1)
    res = bc_train(feats, chunks, TrainConfig(epochs=15, learning_rate=0.1))
    assert res.loss_trace[-1] < res.loss_trace[0]
    pred = np.array([[int(a) for a in predict_chunk(res.params, x)] for x in feats])
    assert (pred == chunks).mean() > 0.95


def test_training_is_deterministic_and_validated():
    rng = np.random.default_rng(2)
    feats, chunks = rng.standard_normal((50, 4)), rng.integers(0, 4, (50, 4))
    a = bc_train(feats, chunks, TrainConfig(epochs=2, seed=3)).params
    b = bc_train(feats, chunks, TrainConfig(epochs=2, seed=3)).params
    assert a.checksum() == b.checksum()
    with pytest.raises(ValueError):
        bc_train(feats, chunks, TrainConfig(epochs=0))
    with pytest.raises(PolicyError):
        bc_train(feats[:0], chunks[:0])


def test_checkpoint_roundtrip(tmp_path):
    p = PolicyParams.init(5, seed=4, scale=1.0)
    path = tmp_path / "ck.json"
    save_checkpoint(p, path, {"note": 1})
    q = load_checkpoint(path)
    assert q.checksum() == p.checksum()
    text = path.read_text().replace(p.checksum(), "0" * 64)
    path.write_text(text)
    with pytest.raises(PolicyError):
        load_checkpoint(path)


def _frames(rng, n, d, t0=0):
    out = []
    for i in range(n):
        v = rng.standard_normal(d)
        out.append(Frame(t0 + i, v / np.linalg.norm(v)))
    return out


def test_featurize_layout():
    rng = np.random.default_rng(3)
    d = 6
    e_i = _frames(rng, 1, d)[0].embedding
    cur = _frames(rng, 1, d, 40)[0]
    recent = _frames(rng, 4, d, 30)
    empty = featurize(e_i, MemoryBank((), 8), recent, cur, 10)
    assert empty.shape == (feature_dim(d),) and np.all(np.isfinite(empty))
    assert np.array_equal(empty[d:2 * d], np.zeros(d)) and empty[4 * d] == 0.0
    assert empty[4 * d + 1] == 10 / T_MAX
    one = _frames(rng, 1, d, 5)
    f1 = featurize(e_i, MemoryBank(tuple(one), 8), recent, cur, 10)
    assert np.array_equal(f1[d:2 * d], one[0].embedding)
    full = _frames(rng, 8, d, 5)
    f8 = featurize(e_i, MemoryBank(tuple(full), 8), recent, cur, 10)
    assert np.allclose(f8[d:2 * d], sum(f.embedding for f in full) / 8, atol=1e-15)
    assert f8[4 * d] == 1.0
    assert np.array_equal(f8[:d], e_i) and np.array_equal(f8[3 * d:4 * d], cur.embedding)
    with pytest.raises(PolicyError):
        featurize(e_i, MemoryBank(()), recent, Frame(1, np.ones(d + 1) / np.sqrt(d + 1)), 0)


def test_predict_chunk_examples():
    p = PolicyParams.zeros(5)
    assert predict_chunk(p, np.ones(5)) == [Action.MOVE_FORWARD] * 4
    p.b[0, Action.STOP] = 10.0
    assert predict_chunk(p, np.ones(5))[0] == Action.STOP
    rng = np.random.default_rng(4)
    for trial in range(20):
        q = PolicyParams.init(7, seed=trial, scale=1.0)
        q.b = rng.standard_normal(q.b.shape)
        x = rng.standard_normal(7)
        expect = []
        for j in range(4):
            z = [q.w[j, a, :7] @ x + q.w[j, a, 7 + j] + q.b[j, a] for a in range(4)]
            expect.append(Action(int(np.argmax(z))))
        assert predict_chunk(q, x) == expect
        shifted = q.copy()
        shifted.b += rng.standard_normal((4, 1))  # same constant on every logit of a position
        assert predict_chunk(shifted, x) == expect


def test_loss_examples():
    rng = np.random.default_rng(5)
    feats = rng.standard_normal((3, 4))
    chunks = rng.integers(0, 4, (3, 4))
    loss, _ = loss_and_grad(PolicyParams.zeros(4), feats, chunks, l2=0.0)
    assert loss == pytest.approx(np.log(4.0), abs=1e-12)
    with pytest.raises(PolicyError):
        loss_and_grad(PolicyParams.zeros(4), feats[:0], chunks[:0])
    res = bc_train(feats[:1], chunks[:1], TrainConfig(epochs=300, learning_rate=0.5, l2=0.0))
    assert loss_and_grad(res.params, feats[:1], chunks[:1], l2=0.0)[0] < 0.01
