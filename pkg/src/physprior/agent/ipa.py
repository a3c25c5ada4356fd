"""Imagination-augmented PPO: observation stacks from predictor rollouts.

The policy sees the current frame stacked with ``k`` frames imagined by the
dynamics predictor. Stacks are computed without a tape, so they enter the
policy as constants and no policy gradient can reach the predictor. The
predictor is fine-tuned separately on observed transitions.
"""

import csv
import dataclasses
import math

import numpy as np

from .. import autodiff as ad
from ..optim import Adam
from ..physworld import PhysWorldEnv
from ..predictor.models import rollout
from ..predictor.train import window_loss
from ..rng import derive_seed, numpy_rng
from .policy import PolicyModel
from .ppo import PPOConfig, RolloutBuffer, ppo_update

AGENT_COLUMNS = ("frames", "episode_reward", "predictor_mse", "policy_loss", "value_loss", "entropy")


def frames_to_float(obs):
    return np.asarray(obs, dtype=np.float32) / np.float32(255.0)


def ipa_observe(predictor, h_live, x_t, k):
    """Stack ``x_t`` with ``k`` imagined frames; returns ``(stack, new_live_state)``.

    The live state advances one step on ``x_t`` and that step's output is
    the first imagined frame; the remaining ``k - 1`` frames come from a
    rollout on a clone, so the returned live state does not depend on ``k``.
    ``x_t`` is ``N x H x W x 3`` in [0, 1].
    """
    x_t = np.asarray(x_t, dtype=np.float32)
    if predictor is None:
        if k:
            raise ValueError("k > 0 needs a predictor")
        return x_t.copy(), h_live
    pred, h_next = predictor.predict_step(x_t, h_live)
    if k == 0:
        return x_t.copy(), h_next
    frames = [x_t, pred.astype(np.float32)]
    frames.extend(f.astype(np.float32) for f in rollout(predictor, pred, h_next, k - 1))
    return np.concatenate(frames, axis=-1), h_next


def reset_state_rows(state, rows):
    """Zero the recurrent state of finished environments (in place)."""
    if state is None or not len(rows):
        return state
    parts = state if isinstance(state, tuple) else (state,)
    for part in parts:
        part.data[rows] = 0
    return state


def transition_windows(buffer, bptt_len):
    """``(env, t0, length)`` windows of consecutive transitions within episodes."""
    windows = []
    for e in range(buffer.n_envs):
        start = 0
        for t in range(buffer.horizon):
            end_here = buffer.dones[t, e] or t == buffer.horizon - 1 or t - start + 1 == bptt_len
            if end_here:
                windows.append((e, start, t - start + 1))
                start = t + 1
    return windows


def fine_tune_predictor(predictor, optimizer, buffer, bptt_len=10, batch_size=8, rng=None):
    """One pass of 1-step MSE training on the rollout's transitions.

    Returns the mean per-step loss measured before each update, i.e. the
    predictor's online error on fresh experience.
    """
    windows = transition_windows(buffer, bptt_len)
    by_length = {}
    for w in windows:
        by_length.setdefault(w[2], []).append(w)
    batches = []
    for length in sorted(by_length):
        group = by_length[length]
        batches.extend((length, group[i:i + batch_size]) for i in range(0, len(group), batch_size))
    if rng is not None:
        batches = [batches[i] for i in rng.permutation(len(batches))]
    total, count = 0.0, 0
    for length, group in batches:
        clips = np.stack([
            np.concatenate([buffer.frames[t0:t0 + length, e], buffer.next_frames[t0 + length - 1, e][None]])
            for e, t0, _ in group
        ]).astype(predictor.dtype)
        with ad.Tape():
            loss = window_loss(predictor, clips)
            ad.backward(loss)
        optimizer.step()
        predictor.zero_grad()
        total += loss.item()
        count += length * len(group)
    return total / max(count, 1)


class AgentLog:
    """Per-episode rows of the agent metrics CSV."""

    def __init__(self, path=None, with_predictor=True):
        self.columns = AGENT_COLUMNS if with_predictor else tuple(c for c in AGENT_COLUMNS if c != "predictor_mse")
        self.rows = []
        self._fh = None
        if path is not None:
            self._fh = open(path, "w", newline="")
            self._writer = csv.writer(self._fh)
            self._writer.writerow(self.columns)

    def log(self, **row):
        values = tuple(row.get(c) for c in self.columns)
        self.rows.append(values)
        if self._fh is not None:
            self._writer.writerow(["" if v is None else v for v in values])
            self._fh.flush()

    def close(self):
        if self._fh is not None:
            self._fh.close()
            self._fh = None


class TrainResult:
    def __init__(self, policy, predictor):
        self.policy = policy
        self.predictor = predictor
        self.episode_rewards = []
        self.predictor_mse = []
        self.updates = []
        self.frames = 0


def make_envs(env_config, n_envs, seed):
    return [PhysWorldEnv(dataclasses.replace(env_config, seed=derive_seed(seed, "env", i)))
            for i in range(n_envs)]


def train_agent(env_config, predictor=None, config=None, total_frames=50_000, seed=0, metrics_path=None,
                finetune=True, policy=None, callback=None):
    """PPO with imagined observation stacks; ``k = 0`` is the plain PPO baseline.

    ``predictor`` is a frame predictor or None (allowed only when ``k = 0``).
    Returns a :class:`TrainResult`.
    """
    config = config or PPOConfig()
    config.validate()
    k = config.k
    if k and predictor is None:
        raise ValueError("IPA with k > 0 needs a predictor")
    envs = make_envs(env_config, config.n_envs, seed)
    h, w = env_config.height, env_config.width
    if policy is None:
        policy = PolicyModel((k + 1) * 3, envs[0].n_actions, h, w, seed=derive_seed(seed, "policy"))
    opt = Adam(policy.parameters(), lr=config.policy_lr)
    pred_opt = Adam(predictor.parameters(), lr=config.predictor_lr) if predictor is not None and finetune else None
    rng = numpy_rng(seed, "agent")
    result = TrainResult(policy, predictor)
    log = AgentLog(metrics_path, with_predictor=predictor is not None)
    buffer = RolloutBuffer(config.horizon, config.n_envs, (h, w, (k + 1) * 3), (h, w, 3))

    x = np.stack([frames_to_float(env.reset()) for env in envs])
    state = predictor.initial_state(len(envs), h, w) if predictor is not None else None
    stack, state = ipa_observe(predictor, state, x, k)
    ep_reward = np.zeros(len(envs))
    latest = {}
    frames = 0
    try:
        while frames < total_frames:
            buffer.reset()
            for _ in range(config.horizon):
                actions, logp, values = policy.act(stack, rng)
                next_x = np.empty_like(x)
                rewards = np.zeros(len(envs))
                dones = np.zeros(len(envs))
                for i, env in enumerate(envs):
                    res = env.step(int(actions[i]))
                    next_x[i] = frames_to_float(res.observation)
                    rewards[i], dones[i] = res.reward, res.done
                buffer.add(stack, x, next_x, actions, logp, values, rewards, dones)
                frames += len(envs)
                ep_reward += rewards
                finished = np.flatnonzero(dones)
                for i in finished:
                    result.episode_rewards.append(float(ep_reward[i]))
                    log.log(frames=frames, episode_reward=float(ep_reward[i]), **latest)
                    ep_reward[i] = 0.0
                    next_x[i] = frames_to_float(envs[i].reset())
                reset_state_rows(state, finished)
                x = next_x
                stack, state = ipa_observe(predictor, state, x, k)
            with ad.no_tape():
                _, last_values = policy.forward(stack)
            buffer.finish(last_values.data, config.gamma, config.lam)
            stats = ppo_update(policy, opt, buffer, config, rng)
            latest = {"policy_loss": stats["policy_loss"], "value_loss": stats["value_loss"],
                      "entropy": stats["entropy"]}
            if pred_opt is not None:
                mse = fine_tune_predictor(predictor, pred_opt, buffer, rng=rng)
                result.predictor_mse.append(mse)
                latest["predictor_mse"] = mse
            stats["frames"] = frames
            result.updates.append(stats)
            if callback is not None:
                callback(result, stats)
    finally:
        log.close()
    result.frames = frames
    return result


class RandomPolicy:
    """Uniform action choice, for baselines."""

    def __init__(self, n_actions):
        self.n_actions = n_actions

    def act(self, obs, rng, greedy=False):
        n = len(obs)
        return rng.integers(0, self.n_actions, size=n), np.full(n, -math.log(self.n_actions)), np.zeros(n)


def evaluate_agent(env_config, policy, predictor=None, k=0, episodes=100, seed=0, greedy=True, csv_path=None):
    """Mean and standard deviation of episode reward; per-episode rewards optionally to CSV."""
    if episodes < 1:
        raise ValueError(f"episodes must be >= 1, got {episodes}")
    env = PhysWorldEnv(env_config)
    rng = numpy_rng(seed, "evaluate")
    h, w = env_config.height, env_config.width
    rewards = []
    for ep in range(episodes):
        x = frames_to_float(env.reset(seed=derive_seed(seed, "eval-episode", ep)))[None]
        state = predictor.initial_state(1, h, w) if predictor is not None else None
        total, done = 0.0, False
        while not done:
            stack, state = ipa_observe(predictor, state, x, k)
            action = policy.act(stack, rng, greedy=greedy)[0]
            res = env.step(int(action[0]))
            total += res.reward
            done = res.done
            x = frames_to_float(res.observation)[None]
        rewards.append(total)
    if csv_path is not None:
        with open(csv_path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(("episode", "reward"))
            writer.writerows(enumerate(rewards))
    rewards = np.asarray(rewards)
    return float(rewards.mean()), float(rewards.std()), rewards
