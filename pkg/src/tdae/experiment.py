"""Run orchestration: the train/eval loop, frozen-policy evaluation, and
Cartesian sweeps with a best-weight summary.

A run writes, under output_dir/seed<k>/:
  metrics.csv     one row per evaluation point (see metrics.py)
  manifest.json   resolved config snapshot + status, written before training
                  starts and finalized after
  checkpoint.bin  rolling parameter snapshot, rewritten at every eval point

Frame accounting: reported frames are exactly updates * W * n; evaluation
episodes never count toward training frames.
"""

from __future__ import annotations

import itertools
import json
import os
import time

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .checkpoint import load_checkpoint, save_checkpoint
from .config import ExperimentConfig
from .envs import PHASE_EVAL, ScenarioConfig, make_env
from .metrics import EvalRecord, LossAccumulator, MetricsWriter, read_metrics
from .network import AgentNet
from .optim import RMSProp
from .rollout import (ACTIONS_EVAL, collect_segment, init_workers,
                      sample_action)
from .rollout import train_update as _train_update


def evaluate(net: AgentNet, scenario: ScenarioConfig, run_seed: int,
             frames: int = 0, episodes: int = 50,
             action_selection: str = "sample") -> EvalRecord:
    """Plays `episodes` episodes with frozen parameters and a zeroed hidden
    state at each episode start. Episode slot s always uses the same
    environment seed stream, so successive evaluations of one run face the
    same task draws. Parameters are never written."""
    cfg = net.config
    dt = cfg.np_dtype
    envs = [make_env(scenario, run_seed, PHASE_EVAL, s) for s in range(episodes)]
    rngs = [np.random.default_rng(np.random.SeedSequence([run_seed, ACTIONS_EVAL, s]))
            for s in range(episodes)]
    obs = np.stack([e.reset() for e in envs]).astype(dt)
    h = np.zeros((episodes, cfg.hidden_size), dt)
    returns = np.zeros(episodes, dtype=np.float64)
    alive = list(range(episodes))
    while alive:
        logits, h_new = net.step_inference(obs[alive], h[alive])
        if action_selection == "argmax":
            acts = np.argmax(logits, axis=1)
        else:
            probs = ad.softmax_probs(logits.astype(np.float64))
        still = []
        for row, s in enumerate(alive):
            a = int(acts[row]) if action_selection == "argmax" \
                else sample_action(probs[row], rngs[s])
            res = envs[s].step(a)
            returns[s] += res.reward
            if not (res.terminated or res.truncated):
                obs[s] = res.obs.astype(dt)
                h[s] = h_new[row]
                still.append(s)
        alive = still
    rec = EvalRecord.from_returns(frames, run_seed, returns)
    assert len(rec.returns) == episodes
    return rec


def load_agent(checkpoint_path: str):
    """Rebuilds (net, config, frames, seed) from a checkpoint file."""
    arrays, cfg_dict, frames, seed = load_checkpoint(checkpoint_path)
    config = ExperimentConfig.from_json_dict(cfg_dict)
    params = {name: Tensor(arr, requires_grad=True)
              for name, arr in arrays.items()}
    net = AgentNet(config.net_config(), params)
    expect = set(AgentNet.init(0, config.net_config()).params)
    if set(params) != expect:
        missing = expect - set(params)
        extra = set(params) - expect
        raise ValueError(f"checkpoint parameters do not match the config "
                         f"(missing {sorted(missing)}, extra {sorted(extra)})")
    return net, config, frames, seed


def _write_manifest(path: str, config: ExperimentConfig, seed: int, status: str,
                    extra: dict | None = None):
    from . import __version__
    doc = {
        "config": config.to_json_dict(),
        "version": __version__,
        "seed": seed,
        "eval_action_selection": config.eval_action_selection,
        "files": {"metrics": "metrics.csv", "checkpoint": "checkpoint.bin"},
        "status": status,
    }
    if extra:
        doc.update(extra)
    tmp = path + ".tmp"
    with open(tmp, "w", encoding="utf-8") as f:
        json.dump(doc, f, indent=2, sort_keys=True)
        f.write("\n")
    os.replace(tmp, path)


def run(config: ExperimentConfig, seed: int) -> dict:
    """Trains one seed to total_frames, evaluating at frames=0, at every
    eval_every_frames crossing, and at the end. Returns the output paths."""
    out = os.path.join(config.output_dir, f"seed{seed}")
    os.makedirs(out, exist_ok=True)
    manifest_path = os.path.join(out, "manifest.json")
    metrics_path = os.path.join(out, "metrics.csv")
    ckpt_path = os.path.join(out, "checkpoint.bin")
    _write_manifest(manifest_path, config, seed, "running")

    scen = config.scenario_config()
    net = AgentNet.init(seed, config.net_config())
    rcfg = config.rollout_config()
    slots = init_workers(scen, rcfg, net, run_seed=seed)
    opt = RMSProp(net.params, **config.optimizer_kwargs())
    aux = config.aux_specs()
    acc = LossAccumulator()
    t0 = time.time()

    def eval_point(frames):
        rec = evaluate(net, scen, seed, frames, config.eval_episodes,
                       config.eval_action_selection)
        writer.write_row(rec, acc.means())
        acc.reset()
        save_checkpoint(ckpt_path, net.params, config.to_json_dict(),
                        frames, seed)
        return rec

    frames = 0
    updates = 0
    try:
        with MetricsWriter(metrics_path) as writer:
            eval_point(0)
            last_eval = 0
            next_mark = config.eval_every_frames
            while frames < config.total_frames:
                batch, _ = collect_segment(net, slots, rcfg)
                bd = _train_update(net, opt, batch, config.gamma,
                                   config.lambda_v, config.lambda_h, aux,
                                   updates)
                acc.add(bd)
                frames += batch.transitions
                updates += 1
                if frames >= next_mark:
                    eval_point(frames)
                    last_eval = frames
                    while next_mark <= frames:
                        next_mark += config.eval_every_frames
            if last_eval != frames:
                eval_point(frames)
    except BaseException as e:
        _write_manifest(manifest_path, config, seed,
                        f"failed: {type(e).__name__}: {e}",
                        {"partial_files": True})
        raise
    _write_manifest(manifest_path, config, seed, "complete",
                    {"updates": updates, "frames": frames,
                     "wall_time_seconds": round(time.time() - t0, 3)})
    return {"metrics": metrics_path, "manifest": manifest_path,
            "checkpoint": ckpt_path, "dir": out}


def _point_name(g, lam, n) -> str:
    parts = []
    if g is not None:
        parts.append(f"gaux{g:g}")
    if lam is not None:
        parts.append(f"lam{lam:g}")
    if n is not None:
        parts.append(f"n{n}")
    return "_".join(parts) if parts else "base"


def _point_config(base: ExperimentConfig, g, lam, n, out_dir: str) -> ExperimentConfig:
    d = base.to_json_dict()
    d.pop("sweep", None)
    d["output_dir"] = out_dir
    if g is not None or lam is not None:
        heads = [dict(h) for h in d["auxiliary"]] or [{"gamma_aux": 0.0, "lambda_tdae": 0.0}]
        if len(heads) != 1:
            raise ValueError("sweeping gamma_aux/lambda_tdae needs at most one auxiliary head in the base config")
        if g is not None:
            heads[0]["gamma_aux"] = g
        if lam is not None:
            heads[0]["lambda_tdae"] = lam
        d["auxiliary"] = heads
    if n is not None:
        d["rollout"] = dict(d["rollout"], segment_length=n)
    return ExperimentConfig.from_json_dict(d)


def sweep(config: ExperimentConfig, jobs: int = 1) -> list:
    """Cartesian product of the config's sweep axes (gamma_aux, lambda_tdae,
    segment_length) x seeds, each a full run(). Returns summary rows and
    writes output_dir/summary.csv marking the best lambda per
    (gamma_aux, segment_length) group by final mean return."""
    axes = config.sweep
    gs = axes.get("gamma_aux", [None])
    ls = axes.get("lambda_tdae", [None])
    ns = axes.get("segment_length", [None])
    points = [(g, lam, n) for g, lam, n in itertools.product(gs, ls, ns)]
    names = [_point_name(*p) for p in points]
    if len(set(names)) != len(names):
        raise ValueError(f"sweep points collide on output paths: {names}")

    tasks = []
    for (g, lam, n), name in zip(points, names):
        pc = _point_config(config, g, lam, n,
                           os.path.join(config.output_dir, name))
        for seed in config.seeds:
            tasks.append((name, pc, seed))

    if jobs > 1:
        import concurrent.futures as cf
        with cf.ProcessPoolExecutor(max_workers=jobs) as ex:
            futs = [ex.submit(run, pc, seed) for _, pc, seed in tasks]
            for f in futs:
                f.result()
    else:
        for _, pc, seed in tasks:
            run(pc, seed)

    rows = []
    for (g, lam, n), name in zip(points, names):
        finals = []
        for seed in config.seeds:
            m = read_metrics(os.path.join(config.output_dir, name,
                                          f"seed{seed}", "metrics.csv"))
            finals.append(m["mean_return"][-1])
        rows.append({"gamma_aux": g, "segment_length": n, "lambda_tdae": lam,
                     "name": name, "final_mean_return": float(np.mean(finals)),
                     "seeds": len(finals), "best": 0})
    for key in {(r["gamma_aux"], r["segment_length"]) for r in rows}:
        group = [r for r in rows if (r["gamma_aux"], r["segment_length"]) == key]
        max(group, key=lambda r: r["final_mean_return"])["best"] = 1

    os.makedirs(config.output_dir, exist_ok=True)
    with open(os.path.join(config.output_dir, "summary.csv"), "w",
              encoding="utf-8", newline="\n") as f:
        f.write("name,gamma_aux,segment_length,lambda_tdae,final_mean_return,seeds,best\n")
        for r in rows:
            f.write(f"{r['name']},{r['gamma_aux']},{r['segment_length']},"
                    f"{r['lambda_tdae']},{repr(r['final_mean_return'])},"
                    f"{r['seeds']},{r['best']}\n")
    return rows
