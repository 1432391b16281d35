"""Network, replay memory, gradients, and the deep training loop."""

import numpy as np
import pytest

from aoi_rl.dqn import (
    DqnHyperparams,
    QNetwork,
    ReplayMemory,
    batch_targets,
    encode_state,
    gradient_step,
    greedy_policy_fn,
    loss_and_grads,
    tabulate_policy,
    target_value,
    train_dqn,
)
from aoi_rl.env import SourceState, SystemState, feasible_actions, initial_state
from aoi_rl.errors import ContractError
from aoi_rl.mdp import build_kernel, enumerate_states, evaluate_policy, solve_rvia

from conftest import make_config


# --- encoding -------------------------------------------------------------


def test_encode_extremes(small_config):
    lo = SystemState((SourceState(battery=0, aoi=1, g_level=1, h_level=1),))
    hi = SystemState((SourceState(battery=3, aoi=4, g_level=4, h_level=4),))
    assert encode_state(small_config, lo) == pytest.approx(np.zeros(4))
    assert encode_state(small_config, hi) == pytest.approx(np.ones(4))


def test_encode_two_sources_length_eight():
    cfg = make_config(distances=(25.0, 40.0))
    enc = encode_state(cfg, initial_state(cfg))
    assert enc.shape == (8,)
    assert np.all((0.0 <= enc) & (enc <= 1.0))


def test_encode_degenerate_axes_stay_zero():
    cfg = make_config(aoi_cap=1, levels=1)
    enc = encode_state(cfg, initial_state(cfg))
    assert enc[1:] == pytest.approx([0.0, 0.0, 0.0])


# --- network --------------------------------------------------------------


def test_forward_shapes_and_batching():
    rng = np.random.default_rng(0)
    net = QNetwork.create([4, 8, 3], rng)
    single = net.forward(np.zeros(4))
    batch = net.forward(np.zeros((5, 4)))
    assert single.shape == (3,)
    assert batch.shape == (5, 3)
    assert batch[2] == pytest.approx(single)


def test_forward_rejects_wrong_width():
    net = QNetwork.create([4, 8, 3], np.random.default_rng(0))
    with pytest.raises(ContractError):
        net.forward(np.zeros(5))


def test_network_copy_is_independent():
    net = QNetwork.create([2, 4, 2], np.random.default_rng(1))
    clone = net.copy()
    net.weights[0][0, 0] += 1.0
    assert clone.weights[0][0, 0] != net.weights[0][0, 0]


def test_checkpoint_round_trip(tmp_path):
    net = QNetwork.create([4, 16, 16, 2], np.random.default_rng(2))
    path = tmp_path / "net.npz"
    net.save(path)
    loaded = QNetwork.load(path)
    x = np.random.default_rng(3).uniform(size=4)
    assert loaded.forward(x) == pytest.approx(net.forward(x))
    assert loaded.layer_sizes == [4, 16, 16, 2]


def test_checkpoint_version_guard(tmp_path):
    path = tmp_path / "net.npz"
    np.savez(path, format_version=np.array(2), layer_sizes=np.array([2, 2]))
    with pytest.raises(ContractError, match="version"):
        QNetwork.load(path)


# --- replay memory --------------------------------------------------------


def test_replay_ring_buffer_wraps():
    mem = ReplayMemory(capacity=4, state_width=2, num_actions=2)
    for k in range(6):
        mem.push(np.full(2, k), k % 2, float(k), np.full(2, k + 1), np.array([True, False]))
    assert mem.size == 4
    stored = sorted(mem.costs.tolist())
    assert stored == [2.0, 3.0, 4.0, 5.0]  # the two oldest were overwritten


def test_replay_sampling_is_uniform():
    mem = ReplayMemory(capacity=50, state_width=1, num_actions=2)
    for k in range(50):
        mem.push([0.0], 0, float(k), [0.0], np.array([True, True]))
    rng = np.random.default_rng(5)
    idx = mem.sample(1_000_000, rng)
    freq = np.bincount(idx, minlength=50) / 1_000_000
    assert np.all(np.abs(freq - 0.02) < 0.02 * 0.02 + 3e-4)
    assert np.abs(freq - 0.02).max() / 0.02 < 0.02  # within 2% of uniform


# --- targets and gradients ------------------------------------------------


def _finite_difference_grads(net, enc_batch, actions, targets, h=1e-6):
    grads_w = [np.zeros_like(w) for w in net.weights]
    grads_b = [np.zeros_like(b) for b in net.biases]

    def loss_only():
        return loss_and_grads(net, enc_batch, actions, targets)[0]

    for layer, grad in enumerate(grads_w):
        w = net.weights[layer]
        for pos in np.ndindex(w.shape):
            orig = w[pos]
            w[pos] = orig + h
            hi = loss_only()
            w[pos] = orig - h
            lo = loss_only()
            w[pos] = orig
            grad[pos] = (hi - lo) / (2 * h)
    for layer, grad in enumerate(grads_b):
        b = net.biases[layer]
        for pos in np.ndindex(b.shape):
            orig = b[pos]
            b[pos] = orig + h
            hi = loss_only()
            b[pos] = orig - h
            lo = loss_only()
            b[pos] = orig
            grad[pos] = (hi - lo) / (2 * h)
    return grads_w, grads_b


def test_analytic_gradient_matches_finite_differences():
    rng = np.random.default_rng(7)
    net = QNetwork.create([3, 6, 2], rng)
    enc = rng.uniform(size=(4, 3))
    actions = rng.integers(0, 2, size=4)
    targets = rng.normal(size=4)
    _, gw, gb = loss_and_grads(net, enc, actions, targets)
    fw, fb = _finite_difference_grads(net, enc, actions, targets)
    for a, b in zip(gw + gb, fw + fb):
        scale = max(np.abs(b).max(), 1e-8)
        assert np.abs(a - b).max() / scale < 1e-5


def test_batch_targets_match_scalar_targets():
    rng = np.random.default_rng(8)
    net = QNetwork.create([4, 8, 3], rng)
    costs = rng.uniform(size=5)
    enc_next = rng.uniform(size=(5, 4))
    masks = rng.random((5, 3)) < 0.7
    masks[:, 0] = True
    enc_ref = np.zeros(4)
    mask_ref = np.array([True, False, False])
    batched = batch_targets(net, costs, enc_next, masks, enc_ref, mask_ref)
    for k in range(5):
        scalar = target_value(net, costs[k], enc_next[k], masks[k], enc_ref, mask_ref)
        assert batched[k] == pytest.approx(scalar)


def test_gradient_step_reduces_loss_on_fixed_batch():
    rng = np.random.default_rng(9)
    net = QNetwork.create([3, 8, 2], rng)
    enc = rng.uniform(size=(16, 3))
    actions = rng.integers(0, 2, size=16)
    targets = rng.normal(size=16)
    first = gradient_step(net, enc, actions, targets, learning_rate=0.05)
    for _ in range(200):
        last = gradient_step(net, enc, actions, targets, learning_rate=0.05)
    assert last < first


def test_gradient_step_guards_non_finite():
    net = QNetwork.create([2, 4, 2], np.random.default_rng(10))
    with np.errstate(invalid="ignore"), pytest.raises(FloatingPointError):
        gradient_step(net, np.zeros((1, 2)), [0], [np.inf], 0.01)


# --- training loop --------------------------------------------------------


def test_training_deterministic_per_seed(small_config):
    hyper = DqnHyperparams(total_slots=1500, seed=21)
    a = train_dqn(small_config, hyper)
    b = train_dqn(small_config, DqnHyperparams(total_slots=1500, seed=21))
    c = train_dqn(small_config, DqnHyperparams(total_slots=1500, seed=22))
    assert np.array_equal(a.gain_trace, b.gain_trace)
    assert not np.array_equal(a.gain_trace, c.gain_trace)


def test_epsilon_trace_follows_schedule(small_config):
    hyper = DqnHyperparams(total_slots=200, seed=0)
    result = train_dqn(small_config, hyper)
    assert result.epsilon_trace == pytest.approx(np.full(200, hyper.eps0))


def test_greedy_policy_only_feasible_actions(small_config):
    result = train_dqn(small_config, DqnHyperparams(total_slots=2000, seed=3))
    state = SystemState((SourceState(battery=0, aoi=2, g_level=1, h_level=1),))
    assert result.greedy_policy(state) in feasible_actions(small_config, state)


def test_tabulated_policy_matches_pointwise_greedy(small_config):
    result = train_dqn(small_config, DqnHyperparams(total_slots=2000, seed=4))
    kernel = build_kernel(small_config, enumerate_states(small_config))
    table = tabulate_policy(result.network, kernel)
    policy = greedy_policy_fn(result.network, small_config)
    idx = kernel.indexer
    for s in range(0, kernel.total_states, 13):
        b, A, g, h = idx.index_to_state(s)
        state = SystemState((SourceState(battery=b, aoi=A + 1, g_level=g + 1, h_level=h + 1),))
        assert table[s] == policy(state)


def test_tabulate_policy_requires_age_space(small_config):
    result = train_dqn(small_config, DqnHyperparams(total_slots=600, seed=5))
    kernel = build_kernel(small_config, enumerate_states(small_config, "throughput"))
    with pytest.raises(ContractError):
        tabulate_policy(result.network, kernel)


def test_dqn_learns_small_instance():
    cfg = make_config(battery_quanta=2, aoi_cap=3, levels=2)
    kernel = build_kernel(cfg, enumerate_states(cfg))
    vt, _ = solve_rvia(kernel)
    result = train_dqn(cfg, DqnHyperparams(total_slots=30_000, seed=0))
    gain = evaluate_policy(kernel, tabulate_policy(result.network, kernel))
    assert gain == pytest.approx(vt.gain, rel=0.10)


def test_hyperparameter_validation():
    with pytest.raises(ValueError):
        DqnHyperparams(target_refresh=0)
    with pytest.raises(ValueError):
        DqnHyperparams(batch_size=0)
