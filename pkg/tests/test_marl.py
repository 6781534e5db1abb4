import numpy as np
import pytest

from semapower.approximator import AdamState, NetworkSpec, forward
from semapower.env import ScenarioConfig
from semapower.marl import (Agent, Batch, EpsilonSchedule, ReplayMemory, Trainer, TrainingConfig,
                            d3ql_target, joint_loss_gradients, run_training, select_action, train_step,
                            vdn_total, write_metrics_csv)
from semapower.validation import constant_q_agent, reference_target

SCENARIO = ScenarioConfig(num_uavs=2, num_bss=1, num_channels=2, steps_per_episode=10, image="builtin:ramp", seed=3)
TRAINING = TrainingConfig(batch_size=8, memory_capacity=40, lstm_units=6, dense=(8, 6), target_sync=5,
                          train_episodes=3, test_episodes=1)


def random_agent(seed, width=4, n_actions=5):
    rng = np.random.default_rng(seed)
    spec = NetworkSpec(width, n_actions, lstm_units=3, dense=(4,))
    return Agent(spec, rng.normal(size=spec.n_params), rng.normal(size=spec.n_params),
                 AdamState.zeros(spec.n_params))


def random_batch(seed, n=6, agents=2, width=4, n_actions=5):
    rng = np.random.default_rng(seed)
    return Batch(rng.uniform(size=(n, agents, 3, width)), rng.integers(n_actions, size=(n, agents)),
                 rng.normal(size=n), rng.uniform(size=(n, agents, 3, width)))


class TestSelectAction:
    def test_greedy(self):
        ag = constant_q_agent([0.1, 0.9, 0.3])
        assert select_action(ag, np.zeros((1, 2)), 0.0, None) == 1

    def test_tie_lowest(self):
        ag = constant_q_agent([2.0, 5.0, 5.0, 1.0])
        assert select_action(ag, np.zeros((1, 2)), 0.0, None) == 1

    def test_uniform_when_eps_one(self):
        ag = constant_q_agent([0.0, 1.0, 0.0, 0.0, 0.0, 0.0])
        rng = np.random.default_rng(0)
        draws = [select_action(ag, np.zeros((1, 2)), 1.0, rng) for _ in range(10_000)]
        counts = np.bincount(draws, minlength=6)
        chi2 = float(np.sum((counts - 10_000 / 6) ** 2 / (10_000 / 6)))
        assert chi2 < 20.52  # chi-square 0.999 quantile, 5 degrees of freedom


def test_vdn_total():
    assert vdn_total([1.0, 2.5]) == 3.5
    assert vdn_total([0.0, 0.0, 0.0]) == 0.0
    assert vdn_total([-4.25]) == -4.25


class TestTarget:
    def test_hand_example(self):
        online = constant_q_agent([1.0, 5.0])
        online.target = constant_q_agent([10.0, 2.0]).params
        batch = Batch(np.zeros((1, 1, 1, 2)), np.zeros((1, 1), dtype=int), np.array([1.0]), np.zeros((1, 1, 1, 2)))
        assert d3ql_target(batch, [online], 0.8)[0] == pytest.approx(2.6, abs=1e-12)

    def test_gamma_zero(self):
        batch = random_batch(1)
        agents = [random_agent(1), random_agent(2)]
        np.testing.assert_array_equal(d3ql_target(batch, agents, 0.0), batch.rewards)

    def test_zero_target_nets(self):
        batch = random_batch(2)
        agents = [random_agent(3), random_agent(4)]
        for ag in agents:
            ag.target = np.zeros_like(ag.target)
        np.testing.assert_array_equal(d3ql_target(batch, agents, 0.9), batch.rewards)

    def test_against_loop_reference(self):
        for seed in range(20):
            batch = random_batch(seed)
            agents = [random_agent(10 + seed), random_agent(40 + seed)]
            np.testing.assert_allclose(d3ql_target(batch, agents, 0.8), reference_target(batch, agents, 0.8),
                                       rtol=1e-12, atol=1e-12)


class TestTrainStep:
    def test_zero_residual_leaves_params(self):
        agents = [random_agent(1), random_agent(2)]
        batch = random_batch(3)
        rows = np.arange(len(batch.rewards))
        q_tot = sum(forward(ag.spec, ag.params, batch.obs[:, i])[rows, batch.actions[:, i]]
                    for i, ag in enumerate(agents))
        batch.rewards = q_tot - (d3ql_target(batch, agents, 0.8) - batch.rewards)
        before = [ag.params.copy() for ag in agents]
        loss = train_step(batch, agents, 0.8, 1e-3)
        assert loss == pytest.approx(0.0, abs=1e-20)
        for b, ag in zip(before, agents):
            np.testing.assert_allclose(ag.params, b, atol=1e-12)

    def test_single_sample_moves_toward_target(self):
        agents = [random_agent(5), random_agent(6)]
        batch = random_batch(7, n=1)
        q = lambda: sum(forward(ag.spec, ag.params, batch.obs[:, i])[0, batch.actions[0, i]]
                        for i, ag in enumerate(agents))
        y = d3ql_target(batch, agents, 0.5)[0]
        before = abs(q() - y)
        for ag in agents:
            ag.target = ag.target.copy()
        train_step(batch, agents, 0.5, 1e-4)
        assert abs(q() - y) < before

    def test_loss_gradient_against_finite_differences(self):
        agents = [random_agent(8), random_agent(9)]
        batch = random_batch(10)
        _, grads = joint_loss_gradients(batch, agents, 0.7)
        y = d3ql_target(batch, agents, 0.7)
        rows = np.arange(len(y))

        def loss(i, p):
            total = np.zeros(len(y))
            for j, ag in enumerate(agents):
                params = p if j == i else ag.params
                total += forward(ag.spec, params, batch.obs[:, j])[rows, batch.actions[:, j]]
            return np.mean((total - y) ** 2)

        rng = np.random.default_rng(0)
        for i, ag in enumerate(agents):
            for k in rng.choice(ag.spec.n_params, 15, replace=False):
                p = ag.params.copy()
                p[k] += 1e-6
                up = loss(i, p)
                p[k] -= 2e-6
                down = loss(i, p)
                assert grads[i][k] == pytest.approx((up - down) / 2e-6, rel=1e-4, abs=1e-9)

    def test_unchosen_advantage_bias_gets_only_centering_gradient(self):
        agents = [random_agent(11)]
        batch = random_batch(12, agents=1)
        batch.actions[:] = 0
        _, (g,) = joint_loss_gradients(batch, agents, 0.0)
        adv_b = agents[0].spec.unpack(g)["adv.b"]
        np.testing.assert_allclose(adv_b[1:], adv_b[1], rtol=1e-12)
        assert adv_b.sum() == pytest.approx(0.0, abs=1e-12)


class TestReplay:
    def test_fifo_eviction(self):
        mem = ReplayMemory(3, 1, 2, 2)
        for k in range(5):
            mem.push(np.full((1, 2, 2), k), [k], float(k), np.zeros((1, 2, 2)))
        assert len(mem) == 3
        assert sorted(mem.rewards.tolist()) == [2.0, 3.0, 4.0]
        assert sorted(mem.ids.tolist()) == [2, 3, 4]

    def test_sample_without_replacement(self):
        mem = ReplayMemory(10, 1, 1, 1)
        for k in range(10):
            mem.push(np.zeros((1, 1, 1)), [0], float(k), np.zeros((1, 1, 1)))
        b = mem.sample(np.random.default_rng(0), 10)
        assert sorted(b.rewards.tolist()) == list(map(float, range(10)))

    def test_rejects_nan_reward(self):
        mem = ReplayMemory(2, 1, 1, 1)
        with pytest.raises(ValueError):
            mem.push(np.zeros((1, 1, 1)), [0], float("nan"), np.zeros((1, 1, 1)))


class TestEpsilon:
    def test_closed_form(self):
        sch = EpsilonSchedule(1.0, 0.001, 0.9995)
        for k in range(1, 20001):
            v = sch.step()
            if k in (1, 100, 5000, 13814, 20000):
                assert v == pytest.approx(max(0.001, 0.9995 ** k), rel=1e-9)
        assert sch.value == 0.001

    def test_floor_is_sticky(self):
        sch = EpsilonSchedule(0.001, 0.001, 0.5)
        assert sch.step() == 0.001


class TestTrainer:
    def test_warm_up_no_updates(self):
        # one 10-step episode never fills a batch of 11
        tr = Trainer(SCENARIO, TrainingConfig(batch_size=11, memory_capacity=40, lstm_units=6, dense=(8, 6)))
        before = [ag.params.copy() for ag in tr.agents]
        rec = tr.run_episode(True)
        assert len(tr.memory) == 10
        assert rec.train_steps == 0 and np.isnan(rec.loss)
        for b, ag in zip(before, tr.agents):
            np.testing.assert_array_equal(b, ag.params)

    def test_steps_and_target_sync(self):
        tr = Trainer(SCENARIO, TRAINING)
        rec = tr.run_episode(True)
        assert rec.train_steps == 10 - TRAINING.batch_size + 1
        tr.run_episode(True)
        assert tr.train_steps == 13
        # synced at step 10, stale since
        stale = tr.agents[0].target.copy()
        assert not np.array_equal(stale, tr.agents[0].params)
        tr.run_episode(True)  # passes step 15 and 20
        assert tr.train_steps == 23
        assert not np.array_equal(stale, tr.agents[0].target)

    def test_epsilon_per_step(self):
        tr = Trainer(SCENARIO, TRAINING)
        tr.train(2)
        assert tr.epsilon.value == pytest.approx(0.9995 ** 20, rel=1e-12)

    def test_same_seed_same_metrics(self, tmp_path):
        a = run_training(SCENARIO, TRAINING)
        b = run_training(SCENARIO, TRAINING)
        write_metrics_csv(a.rows(), tmp_path / "a.csv")
        write_metrics_csv(b.rows(), tmp_path / "b.csv")
        assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()
        assert len(a.rows()) == 4

    def test_different_seed_differs(self):
        a = run_training(SCENARIO, TRAINING)
        b = run_training(SCENARIO.replace(seed=4), TRAINING)
        assert not np.array_equal(a.agents[0].params, b.agents[0].params)

    def test_checkpoint_resume_is_bit_exact(self, tmp_path):
        straight = Trainer(SCENARIO, TRAINING)
        straight.train(4)
        first = Trainer(SCENARIO, TRAINING)
        first.train(2)
        first.save_checkpoint(tmp_path / "ck")
        resumed = Trainer(SCENARIO, TRAINING)
        resumed.load_checkpoint(tmp_path / "ck")
        resumed.train(2)
        for a, b in zip(straight.agents, resumed.agents):
            np.testing.assert_array_equal(a.params, b.params)
            np.testing.assert_array_equal(a.target, b.target)
        assert straight.epsilon.value == resumed.epsilon.value

    def test_checkpoint_scenario_mismatch(self, tmp_path):
        tr = Trainer(SCENARIO, TRAINING)
        tr.save_checkpoint(tmp_path / "ck")
        with pytest.raises(ValueError, match="different scenario"):
            Trainer(SCENARIO.replace(seed=9), TRAINING).load_checkpoint(tmp_path / "ck")

    def test_test_episodes_do_not_learn(self):
        tr = Trainer(SCENARIO, TRAINING)
        tr.train(2)
        before = [ag.params.copy() for ag in tr.agents]
        eps = tr.epsilon.value
        rec = tr.test(1)[0]
        assert rec.phase == "test" and rec.epsilon == 0.0
        assert tr.epsilon.value == eps
        for b, ag in zip(before, tr.agents):
            np.testing.assert_array_equal(b, ag.params)
