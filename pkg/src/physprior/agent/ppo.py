"""Proximal policy optimisation: GAE, the clipped surrogate and minibatch updates."""

import dataclasses
from dataclasses import dataclass

import numpy as np

from .. import autodiff as ad
from ..autodiff import Tensor
from ..optim import clip_grad_norm


@dataclass
class PPOConfig:
    gamma: float = 0.99
    lam: float = 0.95
    clip_eps: float = 0.2
    epochs: int = 4
    minibatches: int = 4
    value_coef: float = 0.5
    entropy_coef: float = 0.01
    horizon: int = 128
    k: int = 3
    policy_lr: float = 2.5e-4
    predictor_lr: float = 1e-4
    max_grad_norm: float = 0.5
    n_envs: int = 1

    def validate(self):
        if not 0 < self.clip_eps < 1:
            raise ValueError(f"clip epsilon must lie in (0, 1), got {self.clip_eps}")
        if not (0 <= self.gamma <= 1 and 0 <= self.lam <= 1):
            raise ValueError(f"gamma and lambda must lie in [0, 1], got {self.gamma}, {self.lam}")
        for name in ("epochs", "minibatches", "horizon", "n_envs"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.k < 0:
            raise ValueError(f"rollout horizon k must be >= 0, got {self.k}")

    def to_dict(self):
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown PPO config keys: {sorted(unknown)}")
        return cls(**d)


def compute_gae(rewards, values, dones, gamma, lam, last_value=0.0):
    """Generalised advantage estimates and returns along axis 0.

    ``dones[t]`` marks that the episode ended with transition ``t``;
    ``last_value`` bootstraps the state after the final transition.
    Arrays may carry a trailing environment axis.
    """
    rewards = np.asarray(rewards, dtype=np.float64)
    values = np.asarray(values, dtype=np.float64)
    dones = np.asarray(dones, dtype=np.float64)
    if not (rewards.shape == values.shape == dones.shape):
        raise ValueError(f"GAE inputs differ in shape: {rewards.shape}, {values.shape}, {dones.shape}")
    n = rewards.shape[0]
    next_value = np.broadcast_to(np.asarray(last_value, dtype=np.float64), rewards.shape[1:])
    adv = np.zeros_like(rewards)
    running = np.zeros(rewards.shape[1:])
    for t in range(n - 1, -1, -1):
        live = 1.0 - dones[t]
        delta = rewards[t] + gamma * next_value * live - values[t]
        running = delta + gamma * lam * live * running
        adv[t] = running
        next_value = values[t]
    return adv, adv + values


def normalize_advantages(adv, eps=1e-8):
    adv = np.asarray(adv, dtype=np.float64)
    return (adv - adv.mean()) / (adv.std() + eps)


class RolloutBuffer:
    """Fixed-horizon storage for ``n_envs`` parallel environments.

    Stores observation stacks, actions, old log-probs, values, rewards and
    done flags, plus the raw frames ``x_t`` and ``x_{t+1}`` of every
    transition for predictor fine-tuning.
    """

    def __init__(self, horizon, n_envs, obs_shape, frame_shape, dtype=np.float32):
        self.horizon, self.n_envs = int(horizon), int(n_envs)
        t, e = self.horizon, self.n_envs
        self.obs = np.zeros((t, e) + tuple(obs_shape), dtype=dtype)
        self.frames = np.zeros((t, e) + tuple(frame_shape), dtype=dtype)
        self.next_frames = np.zeros((t, e) + tuple(frame_shape), dtype=dtype)
        self.actions = np.zeros((t, e), dtype=np.int64)
        self.log_probs = np.zeros((t, e))
        self.values = np.zeros((t, e))
        self.rewards = np.zeros((t, e))
        self.dones = np.zeros((t, e))
        self.advantages = None
        self.returns = None
        self.ptr = 0

    def __len__(self):
        return self.horizon * self.n_envs

    @property
    def full(self):
        return self.ptr >= self.horizon

    def add(self, obs, frames, next_frames, actions, log_probs, values, rewards, dones):
        if self.full:
            raise RuntimeError("rollout buffer is full")
        t = self.ptr
        self.obs[t] = obs
        self.frames[t] = frames
        self.next_frames[t] = next_frames
        self.actions[t] = actions
        self.log_probs[t] = log_probs
        self.values[t] = values
        self.rewards[t] = rewards
        self.dones[t] = dones
        self.ptr += 1

    def finish(self, last_values, gamma, lam):
        if not self.full:
            raise RuntimeError(f"rollout buffer holds {self.ptr} of {self.horizon} steps")
        self.advantages, self.returns = compute_gae(self.rewards, self.values, self.dones, gamma, lam,
                                                    last_values)

    def flat(self):
        """Transitions flattened to length ``T * n_envs`` (time-major)."""
        if self.advantages is None:
            raise RuntimeError("advantages must be computed (finish) before the buffer is consumed")
        n = len(self)
        return {
            "obs": self.obs.reshape((n,) + self.obs.shape[2:]),
            "actions": self.actions.reshape(n),
            "log_probs": self.log_probs.reshape(n),
            "values": self.values.reshape(n),
            "advantages": self.advantages.reshape(n),
            "returns": self.returns.reshape(n),
        }

    def reset(self):
        self.ptr = 0
        self.advantages = None
        self.returns = None


def ppo_loss(policy, obs, actions, old_log_probs, advantages, returns, config):
    """Total PPO loss (a tape scalar) and its components as floats.

    ``advantages`` are used as given; normalisation happens in ``ppo_update``.
    """
    dtype = policy.dtype
    logits, values = policy.forward(obs)
    dist = ad.Categorical(logits)
    logp = dist.log_prob(np.asarray(actions))
    ratio = ad.exp(ad.sub(logp, Tensor(np.asarray(old_log_probs, dtype=dtype))))
    adv = Tensor(np.asarray(advantages, dtype=dtype))
    unclipped = ad.mul(ratio, adv)
    clipped = ad.mul(ad.clip(ratio, 1.0 - config.clip_eps, 1.0 + config.clip_eps), adv)
    policy_loss = ad.scale(ad.tmean(ad.minimum(unclipped, clipped)), -1.0)
    value_loss = ad.mse(values, Tensor(np.asarray(returns, dtype=dtype)))
    entropy = ad.tmean(dist.entropy())
    total = ad.add(ad.add(policy_loss, ad.scale(value_loss, config.value_coef)),
                   ad.scale(entropy, -config.entropy_coef))
    ratio_data = ratio.data
    stats = {
        "loss": float(total.data),
        "policy_loss": float(policy_loss.data),
        "value_loss": float(value_loss.data),
        "entropy": float(entropy.data),
        "clip_fraction": float(np.mean(np.abs(ratio_data - 1.0) > config.clip_eps)),
    }
    return total, stats


def ppo_update(policy, optimizer, buffer, config, rng):
    """``config.epochs`` passes over shuffled minibatches; returns mean statistics."""
    data = buffer.flat()
    adv = normalize_advantages(data["advantages"])
    n = len(adv)
    splits = min(config.minibatches, n)
    history = []
    for _ in range(config.epochs):
        order = rng.permutation(n)
        for idx in np.array_split(order, splits):
            with ad.Tape():
                loss, stats = ppo_loss(policy, data["obs"][idx], data["actions"][idx],
                                       data["log_probs"][idx], adv[idx], data["returns"][idx], config)
                if not np.isfinite(stats["loss"]):
                    raise FloatingPointError(f"PPO loss is not finite: {stats}")
                ad.backward(loss)
            grad_norm = clip_grad_norm(policy.parameters(), config.max_grad_norm)
            if not np.isfinite(grad_norm):
                raise FloatingPointError(f"PPO gradient norm is not finite ({grad_norm}); stats {stats}")
            optimizer.step()
            policy.zero_grad()
            stats["grad_norm"] = grad_norm
            history.append(stats)
    return {k: float(np.mean([h[k] for h in history])) for k in history[0]}
