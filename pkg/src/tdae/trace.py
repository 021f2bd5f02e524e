"""Per-pixel prediction traces: roll a trained agent forward, record the
scaled GVF prediction for chosen pixels at every step, and compare it with
the empirical scaled return computed by independent forward summation.

The empirical return follows the training target's episode rules: the
discounted sum is cut at terminations, bootstrapped with the prediction at
the timeout state on truncations, and bootstrapped with the prediction at
the final state when the trace window ends mid-episode.
"""

from __future__ import annotations

import math

import numpy as np

from . import autodiff as ad
from .envs import PHASE_TRACE, make_env
from .experiment import load_agent
from .rollout import ACTIONS_TRACE, sample_action
from .trajio import write_trajectory


def _select_head(config, gamma_aux):
    heads = config.aux_specs()
    if not heads:
        raise ValueError("checkpoint has no auxiliary prediction head")
    if gamma_aux is None:
        if len(heads) > 1:
            raise ValueError(
                f"checkpoint has {len(heads)} heads; pass gamma_aux to pick one "
                f"(available: {[h.gamma_aux for h in heads]})")
        return 0, heads[0].gamma_aux
    for j, h in enumerate(heads):
        if math.isclose(h.gamma_aux, gamma_aux, abs_tol=1e-12):
            return j, h.gamma_aux
    raise ValueError(f"no head with gamma_aux={gamma_aux} "
                     f"(available: {[h.gamma_aux for h in heads]})")


def pixel_prediction_trace(checkpoint_path: str, pixels, steps: int,
                           gamma_aux: float | None = None,
                           out_prefix: str | None = None) -> dict:
    """Returns per-pixel (prediction, empirical-return) series of length
    `steps`, spanning episode boundaries with resets and zeroed hidden
    state. `pixels` are flat indices into the C*H*W observation vector."""
    net, config, _, seed = load_agent(checkpoint_path)
    scen = config.scenario_config()
    j, gamma = _select_head(config, gamma_aux)
    d = scen.d
    pixels = [int(p) for p in pixels]
    for p in pixels:
        if not 0 <= p < d:
            raise IndexError(f"pixel index {p} out of range for d={d}")
    if steps < 1:
        raise ValueError("steps must be >= 1")

    dt = net.config.np_dtype
    env = make_env(scen, seed, PHASE_TRACE, 0)
    rng = np.random.default_rng(np.random.SeedSequence([seed, ACTIONS_TRACE, 0]))
    obs = env.reset().astype(dt)
    h = np.zeros((1, net.config.hidden_size), dt)

    obs_hist = np.empty((steps,) + scen.obs_shape, dtype=dt)
    preds = np.empty((steps, d), dtype=np.float64)
    actions = np.empty(steps, dtype=np.int64)
    rewards = np.empty(steps, dtype=np.float64)
    term = np.zeros(steps, dtype=bool)
    trunc = np.zeros(steps, dtype=bool)
    trunc_psi = {}
    end_psi = np.zeros(d, dtype=np.float64)

    for t in range(steps):
        obs_hist[t] = obs
        logits, h2 = net.step_inference(obs[None], h)
        _, psi = net.bootstrap_inference(obs[None], h, [j])
        preds[t] = psi[j][0].astype(np.float64)
        probs = ad.softmax_probs(logits.astype(np.float64))
        a = sample_action(probs[0], rng)
        res = env.step(a)
        actions[t] = a
        rewards[t] = res.reward
        term[t] = res.terminated
        trunc[t] = res.truncated
        if res.terminated or res.truncated:
            if res.truncated:
                _, psi_b = net.bootstrap_inference(
                    res.obs.astype(dt)[None], h2, [j])
                trunc_psi[t] = psi_b[j][0].astype(np.float64)
            obs = env.reset().astype(dt)
            h = np.zeros_like(h)
        else:
            obs = res.obs.astype(dt)
            h = h2
    if not (term[-1] or trunc[-1]):
        _, psi_e = net.bootstrap_inference(obs[None], h, [j])
        end_psi = psi_e[j][0].astype(np.float64)

    x = obs_hist.reshape(steps, d).astype(np.float64)
    emp = np.zeros((steps, d), dtype=np.float64)
    for t in range(steps):
        g = np.zeros(d)
        disc = 1.0
        k = t
        while k < steps:
            g += (1.0 - gamma) * disc * x[k]
            if term[k]:
                break
            if trunc[k]:
                g += gamma * disc * trunc_psi[k]
                break
            disc *= gamma
            k += 1
        else:
            g += disc * end_psi
        emp[t] = g

    cols = list(pixels)
    result = {
        "pixels": cols,
        "gamma_aux": gamma,
        "predictions": preds[:, cols],
        "empirical": emp[:, cols],
        "terminated": term,
        "truncated": trunc,
    }

    if out_prefix:
        write_trajectory(out_prefix + ".traj", obs_hist, actions, rewards,
                         term, trunc)
        with open(out_prefix + ".csv", "w", encoding="utf-8", newline="\n") as f:
            head = ["t"] + [f"pred_px{p}" for p in cols] + [f"emp_px{p}" for p in cols]
            f.write(",".join(head) + "\n")
            for t in range(steps):
                row = [str(t)] + [repr(v) for v in result["predictions"][t]] \
                    + [repr(v) for v in result["empirical"][t]]
                f.write(",".join(row) + "\n")
        from .plotting import _SAVE_KW, plt
        fig, ax = plt.subplots(figsize=(8.0, 4.0))
        ts = np.arange(steps)
        for i, p in enumerate(cols):
            color = f"C{i % 10}"
            ax.plot(ts, result["predictions"][:, i], color=color,
                    label=f"px{p} predicted")
            ax.plot(ts, result["empirical"][:, i], color=color,
                    linestyle="--", alpha=0.7, label=f"px{p} empirical")
        for t in np.flatnonzero(term | trunc):
            ax.axvline(t + 0.5, color="gray", alpha=0.3, linewidth=0.8)
        ax.set_xlabel("step")
        ax.set_ylabel("scaled pixel return")
        ax.grid(True, alpha=0.3)
        ax.legend(fontsize=7)
        fig.tight_layout()
        fig.savefig(out_prefix + ".svg", **_SAVE_KW)
        plt.close(fig)
        result["files"] = {"traj": out_prefix + ".traj",
                           "csv": out_prefix + ".csv",
                           "svg": out_prefix + ".svg"}
    return result
