import numpy as np
import pytest

from semapower.approximator import (AdamState, NetworkSpec, adam_step, backward, clone_params, forward,
                                    gradcheck, init_params, load_params, save_params)

SPEC = NetworkSpec(5, 6, lstm_units=4, dense=(7, 5))


def random_params(seed=0, scale=0.3):
    rng = np.random.default_rng(seed)
    return rng.normal(scale=scale, size=SPEC.n_params)


def numeric_grad(spec, params, obs, dq, step=1e-6):
    g = np.zeros_like(params)
    for k in range(len(params)):
        p = params.copy()
        p[k] += step
        up = np.sum(dq * forward(spec, p, obs))
        p[k] -= 2 * step
        down = np.sum(dq * forward(spec, p, obs))
        g[k] = (up - down) / (2 * step)
    return g


def test_param_count():
    u, w = 4, 5
    expected = w * 4 * u + u * 4 * u + 4 * u + (u * 7 + 7) + (7 * 5 + 5) + (5 + 1) + (5 * 6 + 6)
    assert SPEC.n_params == expected


def test_zero_params_zero_q():
    obs = np.random.default_rng(0).uniform(size=(4, 5))
    np.testing.assert_array_equal(forward(SPEC, np.zeros(SPEC.n_params), obs), np.zeros(6))


def test_dueling_combination():
    spec = NetworkSpec(2, 3, lstm_units=1, dense=(1,))
    params = np.zeros(spec.n_params)
    v = spec.unpack(params)
    v["value.b"][:] = 1.0
    v["adv.b"][:] = [0.0, 2.0, 4.0]
    np.testing.assert_allclose(forward(spec, params, np.ones((3, 2))), [-1.0, 1.0, 3.0], rtol=1e-15)


def test_equal_advantages_give_value():
    spec = NetworkSpec(2, 4, lstm_units=3, dense=(5,))
    params = init_params(spec, np.random.default_rng(1))
    v = spec.unpack(params)
    v["adv.W"][:] = 0.0
    v["adv.b"][:] = 0.7
    q = forward(spec, params, np.random.default_rng(2).uniform(size=(4, 2)))
    assert np.ptp(q) == pytest.approx(0.0, abs=1e-15)


def test_advantage_bias_gradient():
    params = random_params(3)
    obs = np.random.default_rng(4).uniform(size=(4, 5))
    dq = np.zeros(6)
    dq[2] = 1.0
    g = SPEC.unpack(backward(SPEC, params, obs, dq))
    expected = np.full(6, -1.0 / 6)
    expected[2] += 1.0
    np.testing.assert_allclose(g["adv.b"], expected, rtol=1e-14)
    assert g["value.b"][0] == pytest.approx(1.0, rel=1e-14)


def test_zero_upstream_gradient():
    obs = np.random.default_rng(0).uniform(size=(2, 4, 5))
    assert not np.any(backward(SPEC, random_params(), obs, np.zeros((2, 6))))


def test_full_gradient_against_finite_differences():
    params = random_params(5)
    rng = np.random.default_rng(6)
    obs = rng.uniform(size=(3, 4, 5))
    dq = rng.normal(size=(3, 6))
    g = backward(SPEC, params, obs, dq)
    fd = numeric_grad(SPEC, params, obs, dq)
    np.testing.assert_allclose(g, fd, rtol=1e-5, atol=1e-8)


def test_gradcheck_every_block():
    res = gradcheck(SPEC, cases=10, seed=1)
    assert res.max_rel_error < 1e-6
    assert set(res.per_group) == {"lstm", "dense0", "dense1", "value", "adv"}
    assert max(res.per_group.values()) < 1e-5


def test_batch_equals_singles():
    params = random_params(7)
    obs = np.random.default_rng(8).uniform(size=(5, 4, 5))
    batch = forward(SPEC, params, obs)
    for k in range(5):
        np.testing.assert_allclose(batch[k], forward(SPEC, params, obs[k]), rtol=1e-13, atol=1e-15)


def test_shape_mismatch():
    with pytest.raises(ValueError):
        forward(SPEC, random_params(), np.zeros((4, 3)))
    with pytest.raises(ValueError):
        forward(SPEC, np.zeros(3), np.zeros((4, 5)))


def test_init_forget_bias():
    p = SPEC.unpack(init_params(SPEC, np.random.default_rng(0)))
    u = SPEC.lstm_units
    np.testing.assert_array_equal(p["lstm.b"][u:2 * u], 1.0)
    np.testing.assert_array_equal(p["lstm.b"][:u], 0.0)


class TestAdam:
    def test_first_step_sign(self):
        g = np.array([0.5, -2.0, 1e-3, -7.0])
        new, st = adam_step(np.zeros(4), g, AdamState.zeros(4), lr=0.01)
        np.testing.assert_allclose(new, -0.01 * np.sign(g), rtol=1e-4)
        assert st.t == 1

    def test_zero_gradient(self):
        st = AdamState(np.full(3, 0.5), np.full(3, 0.25), 4)
        params = np.array([1.0, 2.0, 3.0])
        new, st2 = adam_step(params, np.zeros(3), st, lr=0.0)
        np.testing.assert_array_equal(new, params)
        np.testing.assert_allclose(st2.m, 0.45)
        np.testing.assert_allclose(st2.v, 0.25 * 0.999)

    def test_matches_reference_sequence(self):
        rng = np.random.default_rng(0)
        p = rng.normal(size=5)
        st = AdamState.zeros(5)
        m = np.zeros(5)
        v = np.zeros(5)
        ref = p.copy()
        for t in range(1, 6):
            g = rng.normal(size=5)
            p, st = adam_step(p, g, st, lr=0.003)
            m = 0.9 * m + 0.1 * g
            v = 0.999 * v + 0.001 * g * g
            ref = ref - 0.003 * (m / (1 - 0.9 ** t)) / (np.sqrt(v / (1 - 0.999 ** t)) + 1e-8)
        np.testing.assert_allclose(p, ref, rtol=1e-14)

    def test_deterministic_and_pure(self):
        st = AdamState.zeros(3)
        g = np.array([1.0, 2.0, 3.0])
        a = adam_step(np.ones(3), g, st)
        b = adam_step(np.ones(3), g, st)
        np.testing.assert_array_equal(a[0], b[0])
        assert st.t == 0 and not st.m.any()


def test_clone_independent():
    p = random_params()
    c = clone_params(p)
    p[0] += 1.0
    assert c[0] != p[0]


def test_save_load_round_trip(tmp_path):
    p = random_params(9)
    save_params(tmp_path / "a.params", SPEC, p)
    spec, q = load_params(tmp_path / "a.params")
    assert spec == SPEC
    np.testing.assert_array_equal(p, q)


def test_load_rejects_garbage(tmp_path):
    (tmp_path / "bad").write_bytes(b"nope" + bytes(40))
    with pytest.raises(ValueError):
        load_params(tmp_path / "bad")
    save_params(tmp_path / "ok", SPEC, random_params())
    data = (tmp_path / "ok").read_bytes()
    (tmp_path / "cut").write_bytes(data[:-8])
    with pytest.raises(ValueError, match="count mismatch"):
        load_params(tmp_path / "cut")
