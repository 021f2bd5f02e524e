import collections

import numpy as np
import pytest

from tdae.envs import (PHASE_EVAL, PHASE_TRAIN, ScenarioConfig,
                       analytic_values, make_env)

UP, DOWN, LEFT, RIGHT = 0, 1, 2, 3


def grid_env(kind, **kw):
    return make_env(ScenarioConfig(kind=kind, **kw), run_seed=0,
                    phase=PHASE_TRAIN, worker=0)


class TestSeeding:
    def test_same_stream_same_layout(self):
        a = grid_env("kitem")
        b = grid_env("kitem")
        np.testing.assert_array_equal(a.reset(), b.reset())

    def test_phases_decorrelate(self):
        a = make_env(ScenarioConfig(kind="kitem"), 0, PHASE_TRAIN, 0)
        b = make_env(ScenarioConfig(kind="kitem"), 0, PHASE_EVAL, 0)
        assert not np.array_equal(a.reset(), b.reset())

    def test_episodes_decorrelate(self):
        env = grid_env("labyrinth", grid_size=7)
        first = env.reset()
        while True:
            res = env.step(0)
            if res.terminated or res.truncated:
                break
        second = env.reset()
        assert not np.array_equal(first, second)


class TestContracts:
    def test_step_before_reset_rejected(self):
        env = grid_env("kitem")
        with pytest.raises(RuntimeError):
            env.step(0)

    def test_step_after_done_rejected(self):
        env = grid_env("constobs", timeout=3)
        env.reset()
        for _ in range(3):
            res = env.step(0)
        assert res.truncated
        with pytest.raises(RuntimeError):
            env.step(0)

    def test_obs_in_unit_range(self):
        for kind in ("kitem", "labyrinth", "twocolor", "constobs"):
            env = grid_env(kind, grid_size=9 if kind != "labyrinth" else 7)
            obs = env.reset()
            assert obs.shape == env.cfg.obs_shape
            assert obs.min() >= 0.0 and obs.max() <= 1.0

    def test_timeout_truncates_not_terminates(self):
        env = grid_env("constobs", timeout=5)
        env.reset()
        for i in range(5):
            res = env.step(0)
        assert res.truncated and not res.terminated

    def test_ego_view_shape(self):
        env = grid_env("kitem", grid_size=9, view_radius=2)
        assert env.reset().shape == (3, 5, 5)

    def test_agent_pixel_white_in_ego_center(self):
        env = grid_env("kitem")
        obs = env.reset()
        np.testing.assert_array_equal(obs[:, 2, 2], [1.0, 1.0, 1.0])


class TestKItem:
    def collect_events(self, env, episodes=40):
        """Random-walks episodes, returning observed (reward, flags) pairs."""
        rng = np.random.default_rng(0)
        rewards = collections.Counter()
        for _ in range(episodes):
            env.reset()
            while True:
                res = env.step(int(rng.integers(4)))
                rewards[round(res.reward, 3)] += 1
                if res.terminated or res.truncated:
                    break
        return rewards

    def test_reward_alphabet(self):
        env = grid_env("kitem", grid_size=7, k=2, items_per_color=2)
        rewards = self.collect_events(env)
        assert set(rewards) <= {0.0, 0.5, -0.25, 1.5}
        assert rewards[0.5] > 0 and rewards[-0.25] > 0

    def test_completion_gives_bonus_and_terminates(self):
        env = grid_env("kitem", grid_size=7, k=1, items_per_color=1)
        rng = np.random.default_rng(1)
        saw_completion = False
        for _ in range(60):
            env.reset()
            while True:
                res = env.step(int(rng.integers(4)))
                if res.terminated:
                    assert res.reward == pytest.approx(1.5)  # 0.5 item + 1.0 bonus
                    saw_completion = True
                if res.terminated or res.truncated:
                    break
        assert saw_completion


class TestLabyrinth:
    def test_maze_is_connected_and_goal_reachable(self):
        for seed in range(5):
            env = make_env(ScenarioConfig(kind="labyrinth", grid_size=7),
                           seed, PHASE_TRAIN, 0)
            obs = env.reset()
            walls = np.all(obs == 0.3, axis=0)
            agent = tuple(np.argwhere(np.all(obs == 1.0, axis=0))[0])
            goal_mask = (obs[1] > 0.5) & (obs[0] < 0.5)
            assert goal_mask.sum() == 1
            goal = tuple(np.argwhere(goal_mask)[0])
            seen, frontier = {agent}, [agent]
            while frontier:
                r, c = frontier.pop()
                for dr, dc in ((1, 0), (-1, 0), (0, 1), (0, -1)):
                    nxt = (r + dr, c + dc)
                    if (0 <= nxt[0] < 7 and 0 <= nxt[1] < 7
                            and not walls[nxt] and nxt not in seen):
                        seen.add(nxt)
                        frontier.append(nxt)
            assert goal in seen

    def test_step_cost_and_goal_reward(self):
        env = grid_env("labyrinth", grid_size=7)
        rng = np.random.default_rng(3)
        env.reset()
        while True:
            res = env.step(int(rng.integers(4)))
            if res.terminated:
                assert res.reward == pytest.approx(0.99)
                return
            if res.truncated:
                break
            assert res.reward == pytest.approx(-0.01)

    def test_full_view_forced(self):
        cfg = ScenarioConfig(kind="labyrinth", grid_size=7, view="ego")
        assert cfg.view == "full"


class TestTwoColor:
    def test_indicator_visible_then_neutral(self):
        env = grid_env("twocolor", grid_size=9, indicator_visible_steps=4,
                       view="full")
        obs = env.reset()
        red, green = (1.0, 0.0, 0.0), (0.0, 1.0, 0.0)
        assert tuple(obs[:, 1, 1]) in (red, green)
        shown = tuple(obs[:, 1, 1])
        for _ in range(3):
            res = env.step(UP)
            assert tuple(res.obs[:, 1, 1]) == shown  # still inside the window
        res = env.step(UP)
        np.testing.assert_array_equal(res.obs[:, 1, 1], [0.5, 0.5, 0.5])

    def test_all_items_removed_terminates(self):
        env = grid_env("twocolor", grid_size=7, items_per_color=1)
        rng = np.random.default_rng(5)
        terminated_once = False
        for _ in range(50):
            env.reset()
            got = []
            while True:
                res = env.step(int(rng.integers(4)))
                if abs(res.reward) == 1.0:
                    got.append(res.reward)
                if res.terminated:
                    assert len(got) == 2  # both items removed, either sign
                    terminated_once = True
                if res.terminated or res.truncated:
                    break
        assert terminated_once

    def test_reward_signs(self):
        env = grid_env("twocolor", grid_size=7, items_per_color=2)
        rng = np.random.default_rng(6)
        seen = set()
        for _ in range(60):
            env.reset()
            while True:
                res = env.step(int(rng.integers(4)))
                if res.reward != 0.0:
                    seen.add(res.reward)
                if res.terminated or res.truncated:
                    break
        assert 1.0 in seen and -1.0 in seen


class TestConstObs:
    def test_constant_and_zero_reward(self):
        env = grid_env("constobs", x=0.6)
        obs = env.reset()
        assert np.all(obs == 0.6)
        res = env.step(2)
        assert res.reward == 0.0
        assert np.all(res.obs == 0.6)


class TestChain:
    P = [[0.0, 1.0, 0.0], [0.0, 0.0, 1.0], [0.0, 0.0, 1.0]]
    R = [0.0, 1.0, 0.0]
    TERM = [False, False, True]

    def cfg(self):
        return ScenarioConfig(kind="chain", chain_p=self.P, chain_r=self.R,
                              chain_terminal=self.TERM)

    def test_analytic_values_example(self):
        v = analytic_values(self.P, self.R, self.TERM, gamma=0.5)
        np.testing.assert_allclose(v, [0.5, 1.0, 0.0], atol=1e-12)

    def test_deterministic_walk(self):
        env = make_env(self.cfg(), 0, PHASE_TRAIN, 0)
        obs = env.reset()
        assert obs[0, 0, 0] == 1.0
        res = env.step(0)
        assert res.reward == 0.0 and not res.terminated
        res = env.step(0)
        assert res.reward == 1.0 and res.terminated

    def test_one_hot_obs(self):
        env = make_env(self.cfg(), 0, PHASE_TRAIN, 0)
        obs = env.reset()
        assert obs.shape == (3, 1, 1)
        assert obs.sum() == 1.0

    def test_bad_chain_rejected(self):
        with pytest.raises(ValueError):
            ScenarioConfig(kind="chain", chain_p=[[0.5, 0.2], [0.0, 1.0]],
                           chain_r=[0, 0], chain_terminal=[False, True])

    def test_terminal_rows_zeroed_in_solve(self):
        p = [[0.0, 1.0], [0.3, 0.7]]
        v = analytic_values(p, [1.0, 9.9], [False, True], gamma=0.9)
        np.testing.assert_allclose(v, [1.0, 0.0], atol=1e-12)


class TestValidation:
    def test_unknown_kind_rejected(self):
        with pytest.raises(ValueError):
            ScenarioConfig(kind="pong")

    def test_even_labyrinth_rejected(self):
        with pytest.raises(ValueError):
            ScenarioConfig(kind="labyrinth", grid_size=8)

    def test_view_window_bounded(self):
        with pytest.raises(ValueError):
            ScenarioConfig(kind="kitem", grid_size=5, view_radius=3)
