import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from rawhfl import learner
from rawhfl.content import ProcessedSample


def toy_data(C=4, n=12, seed=0):
    rng = np.random.default_rng(seed)
    return rng.integers(0, C, n), rng.integers(0, C, n)


def dim_from_architecture(C):
    return C * 512 + 512 + 512 * 256 + 256 + 256 * C + C


def test_param_counts():
    assert learner.num_params(256) == dim_from_architecture(256) == 328_704
    assert learner.num_params(4) == dim_from_architecture(4) == 134_916
    assert learner.num_params(32) == 156_448
    assert learner.init_model(4, 0).dim == 134_916


def test_init_deterministic_and_bounded():
    a, b = learner.init_model(8, 3), learner.init_model(8, 3)
    assert a.vector.tobytes() == b.vector.tobytes()
    w1, _ = a.layers()[0]
    assert np.all(np.abs(w1) <= 1 / np.sqrt(8))
    with pytest.raises(ValueError):
        learner.init_model(1, 0)


def test_uniform_logits_give_log_c_loss():
    m = learner.init_model(6, 0)
    m.vector[:] = 0.0
    loss, _ = learner.loss_and_grad(m, [ProcessedSample(2, 4, 6)])
    assert loss == pytest.approx(np.log(6))


def fd_check(model, x, y, coords, h=1e-6):
    _, g = learner.loss_and_grad_arrays(model, x, y)
    errs = []
    for i in coords:
        v = model.vector.copy()
        v[i] += h
        lp, _ = learner.loss_and_grad_arrays(model, x, y, vec=v)
        v[i] -= 2 * h
        lm, _ = learner.loss_and_grad_arrays(model, x, y, vec=v)
        num = (lp - lm) / (2 * h)
        errs.append(abs(num - g[i]) / max(abs(num), abs(g[i]), 1e-7))
    return max(errs)


def test_gradient_matches_finite_differences():
    m = learner.init_model(4, 1)
    x, y = toy_data()
    rng = np.random.default_rng(2)
    _, g = learner.loss_and_grad_arrays(m, x, y)
    # sample among coordinates the batch actually touches
    live = np.flatnonzero(g != 0)
    assert fd_check(m, x, y, rng.choice(live, 20, replace=False)) < 1e-4


def test_duplicated_batch_same_loss_and_grad():
    m = learner.init_model(4, 0)
    x, y = toy_data()
    l1, g1 = learner.loss_and_grad_arrays(m, x, y)
    l2, g2 = learner.loss_and_grad_arrays(m, np.tile(x, 2), np.tile(y, 2))
    assert l1 == pytest.approx(l2, rel=1e-12)
    np.testing.assert_allclose(g1, g2, rtol=1e-10, atol=1e-15)


def test_empty_batch_rejected():
    m = learner.init_model(4, 0)
    with pytest.raises(ValueError):
        learner.loss_and_grad(m, [])


def test_loss_accepts_samples_and_arrays():
    m = learner.init_model(4, 0)
    samples = [ProcessedSample(0, 1, 4), ProcessedSample(3, 2, 4)]
    l1, g1 = learner.loss_and_grad(m, samples)
    l2, g2 = learner.loss_and_grad(m, (np.array([0, 3]), np.array([1, 2])))
    assert l1 == l2 and np.array_equal(g1, g2)
    assert learner.mean_loss(m, samples) == pytest.approx(l1)


@given(st.integers(0, 10_000), st.integers(1, 4), st.floats(0.0, 0.5))
@settings(max_examples=15, deadline=None)
def test_telescoping_identity(seed, rounds, lr):
    m = learner.init_model(4, seed % 7)
    x, y = toy_data(seed=seed)
    out, acc, sq = learner.local_sgd(m, (x, y), rounds, lr, 2, 3, np.random.default_rng(seed))
    assert np.max(np.abs(out.vector - (m.vector - lr * acc.vector))) < 1e-9
    assert acc.steps_taken == rounds and len(sq) == rounds


def test_zero_step_size():
    m = learner.init_model(4, 0)
    x, y = toy_data()
    out, acc, _ = learner.local_sgd(m, (x, y), 2, 0.0, 2, 4, np.random.default_rng(0))
    assert np.array_equal(out.vector, m.vector)
    assert np.any(acc.vector != 0)


def test_single_sample_descent():
    m = learner.init_model(4, 0)
    data = (np.array([1]), np.array([3]))
    out, _, _ = learner.local_sgd(m, data, 2, 0.01, 1, 1, np.random.default_rng(0))
    assert learner.mean_loss(out, data) < learner.mean_loss(m, data)


def test_local_sgd_rejects_zero_rounds():
    m = learner.init_model(4, 0)
    with pytest.raises(ValueError):
        learner.local_sgd(m, toy_data(), 0, 0.1, 1, 1, np.random.default_rng(0))


def test_local_sgd_replay():
    m = learner.init_model(4, 0)
    d = toy_data()
    a = learner.local_sgd(m, d, 3, 0.1, 2, 5, np.random.default_rng(5))
    b = learner.local_sgd(m, d, 3, 0.1, 2, 5, np.random.default_rng(5))
    assert np.array_equal(a[1].vector, b[1].vector)


def test_top_m_hand_built():
    scores = np.array([[0.1, 0.9, 0.0],
                       [0.5, 0.2, 0.3],
                       [0.2, 0.2, 0.6]])
    labels = np.array([1, 2, 1])
    assert learner.top_m_from_logits(scores, labels, 1) == pytest.approx(1 / 3)
    assert learner.top_m_from_logits(scores, labels, 2) == pytest.approx(2 / 3)
    # sample 3 ties classes 0 and 1; class 0 wins the tie, pushing label 1 out of the top 2
    assert not learner.top_m_hits(scores, labels, 2)[2]
    assert learner.top_m_hits(scores, labels, 3)[2]
    assert not learner.top_m_hits(np.array([[1.0, 1.0, 0.0]]), np.array([1]), 1)[0]


def test_top_m_full_and_monotone():
    m = learner.init_model(5, 0)
    x, y = toy_data(C=5, n=40)
    assert learner.top_m_accuracy(m, (x, y), 5) == 1.0
    accs = [learner.top_m_accuracy(m, (x, y), k) for k in range(1, 6)]
    assert all(a <= b for a, b in zip(accs, accs[1:]))
    with pytest.raises(ValueError):
        learner.top_m_accuracy(m, (x, y), 0)


def test_checkpoint_roundtrip(tmp_path):
    m = learner.init_model(4, 0)
    path = tmp_path / "w.bin"
    learner.save_checkpoint(path, m, 17)
    back, k = learner.load_checkpoint(path)
    assert k == 17 and back.num_items == 4
    np.testing.assert_array_equal(back.vector, m.vector.astype(np.float32))


def test_checkpoint_rejects_garbage(tmp_path):
    path = tmp_path / "bad.bin"
    path.write_bytes(b"XXXX" + bytes(40))
    with pytest.raises(ValueError):
        learner.load_checkpoint(path)
