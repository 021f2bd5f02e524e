import hashlib
import json
import os
import warnings

import numpy as np
import pytest

from tdae.config import ExperimentConfig, load_config
from tdae.experiment import evaluate, load_agent, run, sweep
from tdae.metrics import COLUMNS, EvalRecord, MetricsWriter, read_metrics
from tdae.network import AgentNet, NetConfig
from tdae.plotting import bimodality_report, plot_curves
from tdae.trace import pixel_prediction_trace
from tdae.trajio import read_trajectory, write_trajectory


def tiny_config(tmp_path, **overrides):
    base = {
        "scenario": {"kind": "constobs", "x": 0.6, "timeout": 8},
        "network": {"trunk": "mlp", "fc_size": 8, "hidden_size": 4,
                    "decoder_sizes": [8, 8]},
        "rollout": {"workers": 2, "segment_length": 4},
        "gamma": 0.9,
        "auxiliary": [{"gamma_aux": 0.5, "lambda_tdae": 1.0}],
        "optimizer": {"lr": 0.001},
        "total_frames": 64,
        "eval_every_frames": 16,
        "eval_episodes": 3,
        "seeds": [0],
        "output_dir": str(tmp_path / "runs"),
        "dtype": "float32",
    }
    base.update(overrides)
    return ExperimentConfig.from_json_dict(base)


class TestConfig:
    def test_roundtrip(self, tmp_path):
        cfg = tiny_config(tmp_path)
        again = ExperimentConfig.from_json_dict(
            json.loads(json.dumps(cfg.to_json_dict())))
        assert again.to_json_dict() == cfg.to_json_dict()

    def test_unknown_top_level_key(self, tmp_path):
        with pytest.raises(ValueError, match="lamda_v"):
            tiny_config(tmp_path, lamda_v=0.5)

    def test_unknown_nested_key_named_with_path(self, tmp_path):
        with pytest.raises(ValueError, match="optimizer.lerning_rate"):
            tiny_config(tmp_path, optimizer={"lerning_rate": 0.1})

    def test_unknown_aux_key(self, tmp_path):
        with pytest.raises(ValueError, match=r"auxiliary\[0\]"):
            tiny_config(tmp_path, auxiliary=[{"gamma": 0.5, "lambda_tdae": 1}])

    def test_missing_required_key(self):
        with pytest.raises(ValueError, match="output_dir"):
            ExperimentConfig.from_json_dict(
                {"scenario": {"kind": "constobs"}, "total_frames": 10})

    def test_duplicate_seeds_rejected(self, tmp_path):
        with pytest.raises(ValueError, match="duplicates"):
            tiny_config(tmp_path, seeds=[1, 1])

    def test_load_config_bad_json(self, tmp_path):
        p = tmp_path / "bad.json"
        p.write_text("{not json")
        with pytest.raises(ValueError, match="not valid JSON"):
            load_config(str(p))


class TestRun:
    def test_files_and_frame_accounting(self, tmp_path):
        cfg = tiny_config(tmp_path)
        paths = run(cfg, seed=0)
        m = read_metrics(paths["metrics"])
        # W*n=8 per update, eval every 16 -> rows at 0,16,32,48,64
        np.testing.assert_array_equal(m["frames"], [0, 16, 32, 48, 64])
        assert np.all(m["seed"] == 0)
        assert np.all(m["wall_time"] == 0.0)
        # frames=0 row has no training behind it
        assert m["policy_loss"][0] == 0.0 and m["tdae_loss"][0] == 0.0
        man = json.load(open(paths["manifest"]))
        assert man["status"] == "complete"
        assert man["config"] == cfg.to_json_dict()

    def test_single_update_when_total_equals_batch(self, tmp_path):
        cfg = tiny_config(tmp_path, total_frames=8, eval_every_frames=100)
        paths = run(cfg, seed=0)
        man = json.load(open(paths["manifest"]))
        assert man["updates"] == 1
        m = read_metrics(paths["metrics"])
        np.testing.assert_array_equal(m["frames"], [0, 8])

    def test_repeat_run_byte_identical(self, tmp_path):
        cfg_a = tiny_config(tmp_path / "a")
        cfg_b = tiny_config(tmp_path / "b")
        pa = run(cfg_a, seed=0)
        pb = run(cfg_b, seed=0)
        assert open(pa["metrics"], "rb").read() == open(pb["metrics"], "rb").read()

    def test_constobs_mean_return_exactly_zero(self, tmp_path):
        cfg = tiny_config(tmp_path)
        m = read_metrics(run(cfg, seed=0)["metrics"])
        assert np.all(m["mean_return"] == 0.0)

    def test_checkpoint_loads_back(self, tmp_path):
        cfg = tiny_config(tmp_path)
        paths = run(cfg, seed=0)
        net, cfg2, frames, seed = load_agent(paths["checkpoint"])
        assert frames == 64 and seed == 0
        assert cfg2.to_json_dict() == cfg.to_json_dict()
        assert net.config.np_dtype == np.float32


class TestEvaluate:
    def test_params_untouched(self, tmp_path):
        cfg = tiny_config(tmp_path)
        net = AgentNet.init(0, cfg.net_config())
        digest = hashlib.sha256(
            b"".join(p.data.tobytes() for _, p in sorted(net.params.items())))
        before = digest.hexdigest()
        evaluate(net, cfg.scenario_config(), run_seed=0, episodes=4)
        after = hashlib.sha256(
            b"".join(p.data.tobytes() for _, p in sorted(net.params.items()))
        ).hexdigest()
        assert before == after

    def test_episode_count_exact(self, tmp_path):
        cfg = tiny_config(tmp_path)
        net = AgentNet.init(0, cfg.net_config())
        rec = evaluate(net, cfg.scenario_config(), run_seed=0, episodes=7)
        assert len(rec.returns) == 7

    def test_repeat_eval_identical(self, tmp_path):
        cfg = tiny_config(tmp_path, scenario={"kind": "kitem", "grid_size": 7})
        net = AgentNet.init(0, cfg.net_config())
        a = evaluate(net, cfg.scenario_config(), 0, episodes=5)
        b = evaluate(net, cfg.scenario_config(), 0, episodes=5)
        np.testing.assert_array_equal(a.returns, b.returns)

    def test_argmax_on_fixed_layouts_zero_stddev(self, tmp_path):
        # constobs episodes are identical, so greedy play has one outcome
        cfg = tiny_config(tmp_path)
        net = AgentNet.init(0, cfg.net_config())
        rec = evaluate(net, cfg.scenario_config(), 0, episodes=5,
                       action_selection="argmax")
        assert rec.return_stddev == 0.0


class TestSweep:
    def test_axes_product_and_summary(self, tmp_path):
        cfg = tiny_config(tmp_path, seeds=[0, 1],
                          sweep={"lambda_tdae": [0.0, 2.0]})
        rows = sweep(cfg)
        assert {r["name"] for r in rows} == {"lam0", "lam2"}
        assert all(r["seeds"] == 2 for r in rows)
        assert sum(r["best"] for r in rows) == 1
        assert os.path.exists(os.path.join(cfg.output_dir, "summary.csv"))
        for name in ("lam0", "lam2"):
            for seed in (0, 1):
                assert os.path.exists(os.path.join(
                    cfg.output_dir, name, f"seed{seed}", "metrics.csv"))

    def test_no_axes_single_base_run(self, tmp_path):
        cfg = tiny_config(tmp_path)
        rows = sweep(cfg)
        assert [r["name"] for r in rows] == ["base"]
        assert os.path.exists(os.path.join(
            cfg.output_dir, "base", "seed0", "metrics.csv"))

    def test_gamma_and_n_axes_named(self, tmp_path):
        cfg = tiny_config(tmp_path, total_frames=16,
                          sweep={"gamma_aux": [0.0, 0.9],
                                 "segment_length": [2]})
        rows = sweep(cfg)
        assert {r["name"] for r in rows} == {"gaux0_n2", "gaux0.9_n2"}


class TestPlotting:
    def make_metrics(self, path, frames, values, seed=0):
        os.makedirs(os.path.dirname(path), exist_ok=True)
        with MetricsWriter(path) as w:
            for f, v in zip(frames, values):
                rec = EvalRecord(int(f), seed, float(v), 0.0,
                                 np.array([float(v)]))
                w.write_row(rec, {"policy_loss": 0.0, "value_loss": 0.0,
                                  "entropy": 0.0, "tdae_loss": 0.0})
        return path

    def test_svg_rendering_deterministic(self, tmp_path):
        f = self.make_metrics(str(tmp_path / "m" / "metrics.csv"),
                              [0, 10, 20, 30], [0.0, 0.5, 0.7, 0.9])
        a = plot_curves([f], "seed", str(tmp_path / "a.svg"))
        b = plot_curves([f], "seed", str(tmp_path / "b.svg"))
        assert open(a, "rb").read() == open(b, "rb").read()

    def test_band_matches_hand_stderr(self, tmp_path):
        frames = [0, 10, 20, 30]
        curves = [[0.0, 0.1, 0.2, 0.3], [0.1, 0.3, 0.2, 0.5],
                  [0.2, 0.2, 0.8, 0.7]]
        files = [self.make_metrics(str(tmp_path / f"s{i}" / "metrics.csv"),
                                   frames, c, seed=i)
                 for i, c in enumerate(curves)]
        # no manifests -> one shared group; band edges = mean +- std/sqrt(3)
        out = plot_curves(files, "dir2", str(tmp_path / "c.svg"))
        stack = np.array(curves)
        sem = stack.std(axis=0, ddof=1) / np.sqrt(3)
        assert os.path.getsize(out) > 0
        assert sem[1] == pytest.approx(np.std([0.1, 0.3, 0.2], ddof=1) / np.sqrt(3))

    def test_mismatched_grids_resampled_with_warning(self, tmp_path):
        a = self.make_metrics(str(tmp_path / "a" / "metrics.csv"),
                              [0, 10, 20, 30], [0, 1, 2, 3])
        b = self.make_metrics(str(tmp_path / "b" / "metrics.csv"),
                              [0, 15, 30], [0, 1, 2])
        with pytest.warns(UserWarning, match="coarsest"):
            plot_curves([a, b], "x", str(tmp_path / "c.svg"))

    def test_single_seed_no_band_noted(self, tmp_path):
        f = self.make_metrics(str(tmp_path / "m" / "metrics.csv"),
                              [0, 10], [0.0, 1.0])
        out = plot_curves([f], "x", str(tmp_path / "c.svg"))
        assert b"1 seed, no band" in open(out, "rb").read()


class TestBimodality:
    def synth(self, tmp_path, finals):
        files = []
        plotter = TestPlotting()
        for i, final in enumerate(finals):
            curve = [0.0, final / 3, final / 2, final]
            files.append(plotter.make_metrics(
                str(tmp_path / f"s{i}" / "metrics.csv"),
                [0, 10, 20, 30], curve, seed=i))
        return files

    def test_six_flat_four_rising(self, tmp_path):
        files = self.synth(tmp_path, [0.0] * 6 + [1.0] * 4)
        report = bimodality_report(files, theta=0.5)
        assert report["counts"] == {"learning": 4, "failure": 6}

    def test_default_theta_is_midpoint(self, tmp_path):
        files = self.synth(tmp_path, [0.0, 1.0, 0.2, 0.9])
        report = bimodality_report(files)
        # finals are means over the last ceil(4/4)=1 evaluation
        assert report["theta"] == pytest.approx(0.5)

    def test_identical_curves_one_label(self, tmp_path):
        files = self.synth(tmp_path, [0.7, 0.7, 0.7])
        report = bimodality_report(files)
        labels = {r["label"] for r in report["rows"]}
        assert labels == {"learning"}

    def test_refuses_below_four_evals(self, tmp_path):
        plotter = TestPlotting()
        f = plotter.make_metrics(str(tmp_path / "m" / "metrics.csv"),
                                 [0, 10, 20], [0, 0, 0])
        with pytest.raises(ValueError, match="fewer than 4"):
            bimodality_report([f])

    def test_single_run_absolute_theta(self, tmp_path):
        files = self.synth(tmp_path, [0.9])
        report = bimodality_report(files, theta=0.5)
        assert len(report["rows"]) == 1
        assert report["rows"][0]["label"] == "learning"

    def test_report_files_written(self, tmp_path):
        files = self.synth(tmp_path, [0.0, 1.0, 0.5, 0.8])
        report = bimodality_report(files, out_prefix=str(tmp_path / "bim"))
        assert os.path.exists(report["files"]["csv"])
        assert os.path.exists(report["files"]["svg"])


class TestTrajIO:
    def test_roundtrip(self, tmp_path):
        rng = np.random.default_rng(0)
        obs = rng.random((9, 3, 2, 2)).astype(np.float32)
        actions = rng.integers(0, 4, 9)
        rewards = rng.normal(size=9)
        term = rng.random(9) < 0.3
        trunc = (rng.random(9) < 0.2) & ~term
        p = str(tmp_path / "t.traj")
        write_trajectory(p, obs, actions, rewards, term, trunc)
        back = read_trajectory(p)
        np.testing.assert_array_equal(back["observations"], obs)
        np.testing.assert_array_equal(back["actions"], actions)
        np.testing.assert_allclose(back["rewards"], rewards, atol=0)
        np.testing.assert_array_equal(back["terminated"], term)
        np.testing.assert_array_equal(back["truncated"], trunc)

    def test_truncated_body_rejected(self, tmp_path):
        p = str(tmp_path / "t.traj")
        write_trajectory(p, np.zeros((2, 1, 1, 1), np.float32),
                         [0, 1], [0.0, 1.0], [False, True], [False, False])
        blob = open(p, "rb").read()
        open(p, "wb").write(blob[:-3])
        with pytest.raises(ValueError):
            read_trajectory(p)


class TestTrace:
    def checkpoint(self, tmp_path, gamma_aux=0.0, scenario=None):
        overrides = {}
        if scenario:
            overrides["scenario"] = scenario
        cfg = tiny_config(tmp_path, total_frames=16,
                          auxiliary=[{"gamma_aux": gamma_aux,
                                      "lambda_tdae": 1.0}], **overrides)
        return run(cfg, seed=0)["checkpoint"]

    def test_gamma_zero_empirical_is_pixel_value(self, tmp_path):
        ck = self.checkpoint(tmp_path, gamma_aux=0.0)
        result = pixel_prediction_trace(ck, pixels=[0, 5], steps=12)
        # gamma=0 scaled return is the current pixel itself: X everywhere 0.6
        np.testing.assert_allclose(result["empirical"], 0.6, atol=1e-12)

    def test_untrained_head_series_well_formed(self, tmp_path):
        ck = self.checkpoint(tmp_path, gamma_aux=0.9)
        result = pixel_prediction_trace(ck, pixels=[3], steps=20)
        assert result["predictions"].shape == (20, 1)
        assert result["empirical"].shape == (20, 1)
        assert np.all(np.isfinite(result["predictions"]))
        assert np.all(np.isfinite(result["empirical"]))

    def test_pixel_out_of_range(self, tmp_path):
        ck = self.checkpoint(tmp_path)
        with pytest.raises(IndexError):
            pixel_prediction_trace(ck, pixels=[75], steps=5)

    def test_no_head_rejected(self, tmp_path):
        cfg = tiny_config(tmp_path, total_frames=16, auxiliary=[])
        ck = run(cfg, seed=0)["checkpoint"]
        with pytest.raises(ValueError, match="no auxiliary"):
            pixel_prediction_trace(ck, pixels=[0], steps=5)

    def test_recursion_consistency_within_episode(self, tmp_path):
        # forward-summed series must satisfy the one-step recursion
        # G_t = (1-g)X_t + g*G_{t+1} wherever no episode boundary intervenes
        ck = self.checkpoint(tmp_path, gamma_aux=0.9,
                             scenario={"kind": "kitem", "grid_size": 7})
        result = pixel_prediction_trace(ck, pixels=[0], steps=15,
                                        out_prefix=str(tmp_path / "tr"))
        traj = read_trajectory(result["files"]["traj"])
        x = traj["observations"].reshape(15, -1)[:, 0].astype(np.float64)
        emp = result["empirical"][:, 0]
        ended = traj["terminated"] | traj["truncated"]
        for t in range(14):
            if not ended[t]:
                expect = 0.1 * x[t] + 0.9 * emp[t + 1]
                assert emp[t] == pytest.approx(expect, abs=1e-10)

    def test_output_files_written(self, tmp_path):
        ck = self.checkpoint(tmp_path, gamma_aux=0.5)
        result = pixel_prediction_trace(ck, pixels=[0, 1], steps=8,
                                        out_prefix=str(tmp_path / "tr"))
        for key in ("traj", "csv", "svg"):
            assert os.path.exists(result["files"][key])
