import csv

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from agentchecks import (gae_bruteforce, gae_exhaustive_error, grads_exactly_zero, ppo_loss_error,
                         predictor_grads_after_update)
from physprior.agent.ipa import (AGENT_COLUMNS, AgentLog, RandomPolicy, evaluate_agent, fine_tune_predictor,
                                 ipa_observe, reset_state_rows, train_agent, transition_windows)
from physprior.agent.policy import PolicyModel, fit_padding, policy_from_arrays
from physprior.agent.ppo import PPOConfig, RolloutBuffer, compute_gae, normalize_advantages
from physprior.optim import Adam
from physprior.physworld import EnvConfig
from physprior.predictor.models import build_model, rollout

TINY_ENV = EnvConfig.trivial_goal(max_steps=12)


def test_gae_matches_bruteforce_exhaustively():
    err, cases = gae_exhaustive_error(6)
    assert cases == 126 and err < 1e-12


def test_gae_hand_example():
    # two steps, episode ends at the second: A_1 = r_1 - V_1, A_0 = d_0 + g*l*A_1
    adv, ret = compute_gae([1.0, 2.0], [0.5, 1.0], [0, 1], gamma=0.9, lam=0.5, last_value=7.0)
    a1 = 2.0 - 1.0
    a0 = (1.0 + 0.9 * 1.0 - 0.5) + 0.45 * a1
    np.testing.assert_allclose(adv, [a0, a1])
    np.testing.assert_allclose(ret, [a0 + 0.5, a1 + 1.0])


def test_gae_lambda_one_is_discounted_return():
    r = np.array([1.0, 0.0, 2.0])
    adv, ret = compute_gae(r, np.zeros(3), np.zeros(3), gamma=0.5, lam=1.0, last_value=4.0)
    np.testing.assert_allclose(ret, [1 + 0.25 * 2 + 0.125 * 4, 0.5 * 2 + 0.25 * 4, 2 + 0.5 * 4])


def test_gae_env_axis_and_shape_check():
    r = np.random.default_rng(0).normal(size=(5, 3))
    v = np.random.default_rng(1).normal(size=(5, 3))
    d = np.zeros((5, 3))
    d[2, 1] = 1
    adv, _ = compute_gae(r, v, d, 0.9, 0.8, last_value=np.array([1.0, 2.0, 3.0]))
    for e in range(3):
        ref = gae_bruteforce(r[:, e], v[:, e], d[:, e], 0.9, 0.8, [1.0, 2.0, 3.0][e])
        np.testing.assert_allclose(adv[:, e], ref, atol=1e-12)
    with pytest.raises(ValueError):
        compute_gae(r, v[:4], d, 0.9, 0.9)


@settings(max_examples=30)
@given(n=st.integers(1, 12), seed=st.integers(0, 10_000))
def test_gae_property_random_lengths(n, seed):
    rng = np.random.default_rng(seed)
    r, v, d = rng.normal(size=n), rng.normal(size=n), rng.integers(0, 2, n)
    adv, _ = compute_gae(r, v, d, 0.97, 0.9, 0.3)
    np.testing.assert_allclose(adv, gae_bruteforce(r, v, d, 0.97, 0.9, 0.3), atol=1e-10)


def test_normalize_advantages():
    a = normalize_advantages([1.0, 2.0, 3.0, 6.0])
    assert abs(a.mean()) < 1e-12 and abs(a.std() - 1) < 1e-6
    assert np.all(normalize_advantages([2.0, 2.0]) == 0)


@pytest.mark.parametrize("seed", range(5))
def test_ppo_loss_matches_hand_transcription(seed):
    err, clip_fraction = ppo_loss_error(seed)
    assert err < 1e-6
    assert 0 < clip_fraction < 1


def test_predictor_receives_no_policy_gradient():
    grads, unchanged, moved = predictor_grads_after_update()
    assert moved
    assert grads_exactly_zero(grads)
    assert unchanged


# ------------------------------------------------------------------- buffer

def test_buffer_lifecycle():
    buf = RolloutBuffer(2, 3, (4, 4, 6), (4, 4, 3))
    assert len(buf) == 6 and not buf.full
    with pytest.raises(RuntimeError):
        buf.finish(np.zeros(3), 0.9, 0.9)
    row = dict(obs=np.ones((3, 4, 4, 6)), frames=np.ones((3, 4, 4, 3)), next_frames=np.ones((3, 4, 4, 3)),
               actions=[0, 1, 2], log_probs=np.zeros(3), values=np.zeros(3), rewards=[1, 0, 0], dones=[0, 1, 0])
    buf.add(**row)
    with pytest.raises(RuntimeError):
        buf.flat()
    buf.add(**row)
    with pytest.raises(RuntimeError, match="full"):
        buf.add(**row)
    buf.finish(np.zeros(3), 0.9, 0.9)
    flat = buf.flat()
    assert flat["obs"].shape == (6, 4, 4, 6)
    assert flat["actions"].tolist() == [0, 1, 2, 0, 1, 2]
    buf.reset()
    assert buf.ptr == 0 and buf.advantages is None


def test_transition_windows_stop_at_episode_ends():
    buf = RolloutBuffer(6, 1, (2, 2, 3), (2, 2, 3))
    buf.dones[:, 0] = [0, 1, 0, 0, 0, 0]
    assert transition_windows(buf, 3) == [(0, 0, 2), (0, 2, 3), (0, 5, 1)]


# ------------------------------------------------------------------- policy

def test_fit_padding():
    assert fit_padding(84, 8, 4) == 0
    assert fit_padding(42, 8, 4) == 1
    with pytest.raises(ValueError):
        fit_padding(3, 4, 2)


@pytest.mark.parametrize("size", [42, 84])
def test_policy_shapes_and_sampling(size):
    pol = PolicyModel(12, 5, size, size)
    obs = np.random.default_rng(0).uniform(0, 1, (3, size, size, 12)).astype(np.float32)
    logits, values = pol.forward(obs)
    assert logits.shape == (3, 5) and values.shape == (3,)
    a, logp, v = pol.act(obs, np.random.default_rng(1))
    assert a.shape == (3,) and np.all(logp <= 0) and np.allclose(v, values.data)
    greedy, _, _ = pol.act(obs, np.random.default_rng(2), greedy=True)
    assert np.array_equal(greedy, np.argmax(logits.data, axis=1))


def test_policy_rejects_bad_inputs():
    with pytest.raises(ValueError):
        PolicyModel(4, 5, 42, 42)
    pol = PolicyModel(3, 5, 42, 42)
    with pytest.raises(ValueError):
        pol.forward(np.zeros((1, 42, 42, 6)))


def test_policy_checkpoint_arrays():
    pol = PolicyModel(6, 9, 42, 42, seed=3)
    back = policy_from_arrays(pol.state_dict(), 42, 42)
    obs = np.random.default_rng(0).uniform(0, 1, (2, 42, 42, 6)).astype(np.float32)
    assert np.array_equal(pol.forward(obs)[0].data, back.forward(obs)[0].data)
    with pytest.raises(KeyError):
        policy_from_arrays({}, 42, 42)


# ---------------------------------------------------------------------- IPA

@pytest.mark.parametrize("k", [0, 1, 3])
def test_ipa_stack_layout(k):
    pred = build_model("spatialnet", 3)
    rng = np.random.default_rng(0)
    x = rng.uniform(0, 1, (2, 16, 16, 3)).astype(np.float32)
    state = pred.initial_state(2, 16, 16)
    stack, live = ipa_observe(pred, state, x, k)
    assert stack.shape == (2, 16, 16, 3 * (k + 1))
    assert np.array_equal(stack[..., :3], x)
    first, ref_live = pred.predict_step(x, state)
    assert np.array_equal(live.data, ref_live.data)
    if k:
        assert np.array_equal(stack[..., 3:6], first)
        rest = rollout(pred, first, ref_live, k - 1)
        for j, f in enumerate(rest):
            assert np.array_equal(stack[..., 6 + 3 * j:9 + 3 * j], f)


def test_ipa_without_predictor():
    x = np.zeros((1, 8, 8, 3), np.float32)
    stack, state = ipa_observe(None, None, x, 0)
    assert stack.shape == x.shape and state is None
    with pytest.raises(ValueError):
        ipa_observe(None, None, x, 2)


def test_reset_state_rows():
    pred = build_model("convlstm", 2)
    state = tuple(s.__class__(np.ones(s.shape, np.float32)) for s in pred.initial_state(3, 8, 8))
    reset_state_rows(state, np.array([1]))
    assert np.all(state[0].data[1] == 0) and np.all(state[1].data[1] == 0)
    assert np.all(state[0].data[[0, 2]] == 1)


def test_fine_tune_reduces_online_error():
    pred = build_model("spatialnet", 4)
    opt = Adam(pred.parameters(), lr=3e-3)
    buf = RolloutBuffer(8, 2, (16, 16, 3), (16, 16, 3))
    base = np.zeros((16, 16, 3), np.float32)
    base[:, :8] = 1.0
    buf.frames[:] = base
    buf.next_frames[:] = base
    losses = [fine_tune_predictor(pred, opt, buf, bptt_len=4, rng=np.random.default_rng(i)) for i in range(30)]
    assert losses[-1] < 0.5 * losses[0]


def test_ppo_config_validation():
    for kw in ({"clip_eps": 0}, {"gamma": 1.5}, {"horizon": 0}, {"k": -1}):
        with pytest.raises(ValueError):
            PPOConfig(**kw).validate()
    with pytest.raises(ValueError, match="zz"):
        PPOConfig.from_dict({"zz": 1})
    assert PPOConfig.from_dict(PPOConfig(k=2).to_dict()) == PPOConfig(k=2)


def test_train_agent_smoke(tmp_path):
    cfg = PPOConfig(horizon=8, n_envs=2, k=2, epochs=1, minibatches=2)
    path = tmp_path / "agent.csv"
    res = train_agent(TINY_ENV, build_model("spatialnet", 2), cfg, total_frames=48, metrics_path=path)
    assert res.frames == 48 and len(res.updates) == 3 and len(res.predictor_mse) == 3
    with open(path) as fh:
        rows = list(csv.reader(fh))
    assert tuple(rows[0]) == AGENT_COLUMNS
    assert len(rows) - 1 == len(res.episode_rewards) >= 2


def test_train_agent_is_deterministic():
    cfg = PPOConfig(horizon=6, n_envs=2, k=0, epochs=1, minibatches=1)
    a = train_agent(TINY_ENV, None, cfg, total_frames=24, seed=5)
    b = train_agent(TINY_ENV, None, cfg, total_frames=24, seed=5)
    assert a.episode_rewards == b.episode_rewards
    assert [u["loss"] for u in a.updates] == [u["loss"] for u in b.updates]


def test_train_agent_needs_predictor_for_imagination():
    with pytest.raises(ValueError):
        train_agent(TINY_ENV, None, PPOConfig(k=1), total_frames=1)


def test_frozen_predictor_is_untouched_without_finetune():
    pred = build_model("spatialnet", 2)
    before = [p.data.copy() for p in pred.parameters()]
    train_agent(TINY_ENV, pred, PPOConfig(horizon=4, n_envs=1, k=1, epochs=1, minibatches=1),
                total_frames=8, finetune=False)
    assert all(np.array_equal(a, p.data) for a, p in zip(before, pred.parameters()))


def test_agent_log_without_predictor(tmp_path):
    log = AgentLog(tmp_path / "a.csv", with_predictor=False)
    log.log(frames=3, episode_reward=1.0, predictor_mse=0.5)
    log.close()
    with open(tmp_path / "a.csv") as fh:
        rows = list(csv.reader(fh))
    assert "predictor_mse" not in rows[0] and rows[1][:2] == ["3", "1.0"]


def test_evaluate_agent(tmp_path):
    mean, std, rewards = evaluate_agent(TINY_ENV, RandomPolicy(5), episodes=4, csv_path=tmp_path / "e.csv")
    assert len(rewards) == 4 and mean == pytest.approx(rewards.mean()) and std >= 0
    again = evaluate_agent(TINY_ENV, RandomPolicy(5), episodes=4)[2]
    assert np.array_equal(rewards, again)
    with pytest.raises(ValueError):
        evaluate_agent(TINY_ENV, RandomPolicy(5), episodes=0)
