import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from lrla.bandit import (BanditTask, TaskDistribution, episode_regret, make_streams,
                         read_trajectories_csv, regret_from_arrays, rollout, sample_arm_means,
                         sample_task, step, trajectories_from_arrays, write_trajectories_csv)


def always(arm):
    return lambda history: arm


class TestSampleTask:

    def test_degenerate_prior_gives_prior_mean(self):
        dist = TaskDistribution(mean_prior_mu=3.0, mean_prior_sd=0.0)
        task = sample_task(dist, np.random.default_rng(0))
        assert task.arm_means == (3.0, 3.0)

    def test_arm_mean_spread(self):
        means = sample_arm_means(TaskDistribution(), 50_000, np.random.default_rng(1)).ravel()
        assert 9.8 <= means.std() <= 10.2
        # within 3 standard errors of the generating moments
        assert abs(means.mean()) < 3 * 10 / math.sqrt(means.size)
        assert abs(means.std() - 10) < 3 * 10 / math.sqrt(2 * means.size)

    def test_fixed_seed_is_deterministic(self):
        a = sample_task(TaskDistribution(), np.random.default_rng(7))
        b = sample_task(TaskDistribution(), np.random.default_rng(7))
        assert a == b

    def test_invalid_distribution(self):
        with pytest.raises(ValueError):
            TaskDistribution(horizon=0)
        with pytest.raises(ValueError):
            TaskDistribution(mean_prior_sd=-1.0)


class TestStep:

    def test_noiseless(self):
        assert step(BanditTask((3.0, -1.0), 0.0), 0, np.random.default_rng(0)) == 3.0

    def test_sample_mean(self):
        rng = np.random.default_rng(2)
        task = BanditTask((1.5, 0.0), math.sqrt(10))
        # sd of the mean is sqrt(10 / 1e5) = 0.01, so +-0.05 is 5 standard errors
        pulls = [step(task, 0, rng) for _ in range(100_000)]
        assert abs(np.mean(pulls) - 1.5) < 0.05

    @pytest.mark.parametrize("action", [2, -1, 1.0, True, "0"])
    def test_bad_arm(self, action):
        with pytest.raises(ValueError):
            step(BanditTask((0.0, 0.0), 1.0), action, np.random.default_rng(0))


class TestRollout:

    def test_length(self):
        traj = rollout(BanditTask((1.0, 2.0), 1.0), always(1), 10, np.random.default_rng(0))
        assert len(traj.steps) == 10
        assert [s.step_index for s in traj.steps] == list(range(10))

    def test_total_reward(self):
        traj = rollout(BanditTask((5.0, 0.0), 0.0), always(0), 10, np.random.default_rng(0))
        assert traj.rewards.sum() == 50.0

    def test_seeded_rollout_repeats(self):
        task = BanditTask((1.0, -1.0), 3.0)
        a = rollout(task, always(1), 10, np.random.default_rng(3))
        b = rollout(task, always(1), 10, np.random.default_rng(3))
        assert a == b

    def test_policy_sees_history(self):
        seen = []

        def policy(history):
            seen.append(len(history))
            return 0

        rollout(BanditTask((0.0, 0.0), 1.0), policy, 4, np.random.default_rng(0))
        assert seen == [0, 1, 2, 3]

    def test_invalid_policy_output(self):
        with pytest.raises(ValueError):
            rollout(BanditTask((0.0, 0.0), 1.0), always(5), 3, np.random.default_rng(0))

    def test_q_values_recorded(self):
        traj = rollout(BanditTask((0.0, 0.0), 1.0), lambda h: (1, (0.1, 0.2)), 2,
                       np.random.default_rng(0))
        assert traj.steps[0].q_values == (0.1, 0.2)


class TestRegret:

    def test_best_arm_is_free(self):
        traj = rollout(BanditTask((2.0, 1.0), 1.0), always(0), 10, np.random.default_rng(0))
        assert episode_regret(traj) == 0.0

    def test_worst_arm(self):
        traj = rollout(BanditTask((10.0, 0.0), 1.0), always(1), 10, np.random.default_rng(0))
        assert episode_regret(traj) == 100.0

    @settings(max_examples=50, deadline=None)
    @given(st.lists(st.integers(0, 1), min_size=1, max_size=12),
           st.tuples(st.floats(-50, 50), st.floats(-50, 50)))
    def test_nonnegative(self, actions, means):
        choices = iter(actions)
        traj = rollout(BanditTask(means, 1.0), lambda h: next(choices), len(actions),
                       np.random.default_rng(0))
        r = episode_regret(traj)
        assert r >= 0
        assert r == pytest.approx(regret_from_arrays(np.array([means]), np.array([actions]))[0])

    def test_random_policy_reference(self):
        # half the trials land on the worse arm: 5 * E|mu0 - mu1|, mu0 - mu1 ~ N(0, 200)
        analytic = 5 * 2 * 10 * math.sqrt(2) / math.sqrt(2 * math.pi)
        assert analytic == pytest.approx(56.419, abs=1e-3)
        rng = np.random.default_rng(4)
        means = sample_arm_means(TaskDistribution(), 200_000, rng)
        actions = rng.integers(0, 2, size=(200_000, 10))
        assert regret_from_arrays(means, actions).mean() == pytest.approx(analytic, rel=0.01)


class TestStreams:

    def test_consumers_are_independent(self):
        a = make_streams(11, ["tasks", "rewards"])
        b = make_streams(11, ["tasks", "rewards", "policy"])
        assert a["tasks"].random() == b["tasks"].random()
        assert a["rewards"].random() == b["rewards"].random()


class TestTrajectoryCsv:

    def test_round_trip(self, tmp_path):
        rng = np.random.default_rng(5)
        means = rng.normal(size=(3, 2))
        actions = rng.integers(0, 2, size=(3, 4))
        rewards = rng.normal(size=(3, 4))
        qs = rng.normal(size=(3, 4, 2))
        trajs = trajectories_from_arrays(means, actions, rewards, 1.0, "lrla_nhat-256", qs, seed=4)
        trajs += trajectories_from_arrays(means[:1], actions[:1], rewards[:1], 1.0, "value", seed=0)
        path = tmp_path / "t.csv"
        write_trajectories_csv(path, trajs)
        back = read_trajectories_csv(path, 1.0)
        assert [t.source_tag for t in back] == [t.source_tag for t in trajs]
        assert [t.seed for t in back] == [4, 4, 4, 0]
        for x, y in zip(trajs, back):
            assert x.task == y.task and x.steps == y.steps

    def test_header_and_blank_q(self, tmp_path):
        trajs = trajectories_from_arrays(np.zeros((1, 2)), np.zeros((1, 2), int), np.zeros((1, 2)),
                                         1.0, "thompson")
        path = tmp_path / "t.csv"
        write_trajectories_csv(path, trajs)
        lines = path.read_text().splitlines()
        assert lines[0] == "source_tag,seed,episode,trial,action,reward,mu0,mu1,q0,q1"
        assert lines[1].endswith(",,")
