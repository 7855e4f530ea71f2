import numpy as np
import pytest

import pocco
from pocco import DecodeMode, ModelConfig, ProblemType
from pocco.core import finite_diff_check
from pocco.core import tensor as T
from pocco.models.env import feasible_mask, reset, step
from pocco.models.trajectory import avg_log_likelihood
from pocco.nn import Policy, cco_forward, load_checkpoint, save_checkpoint


def cco_params(d, n_experts, gate=None, seed=0):
    rng = np.random.default_rng(seed)
    params = {
        "blk.gate": T.parameter(np.zeros((d, n_experts + 1)) if gate is None else gate),
        "blk.norm.scale": T.parameter(np.ones(d)),
        "blk.norm.shift": T.parameter(np.zeros(d)),
    }
    for j in range(n_experts):
        params[f"blk.expert.{j}.W1"] = T.parameter(rng.uniform(-0.5, 0.5, (d, 2 * d)))
        params[f"blk.expert.{j}.b1"] = T.parameter(rng.uniform(-0.5, 0.5, 2 * d))
        params[f"blk.expert.{j}.W2"] = T.parameter(rng.uniform(-0.5, 0.5, (2 * d, d)))
        params[f"blk.expert.{j}.b2"] = T.parameter(rng.uniform(-0.5, 0.5, d))
    return params


def example_gate(d):
    gate = np.zeros((d, 5))
    gate[0] = [2.0, 1.0, 0.0, -1.0, 3.0]
    return gate


def basis(d):
    h = np.zeros((1, d))
    h[0, 0] = 1.0
    return T.constant(h)


def test_cco_all_experts_with_equal_logits_get_uniform_gates():
    out = cco_forward(basis(4), cco_params(4, 4), "blk", n_experts=4, k=5)
    assert sorted(out.experts.tolist()) == [0, 1, 2, 3, 4]
    np.testing.assert_allclose(out.gates, np.full(5, 0.2), atol=1e-15)


def test_cco_top_two_example():
    out = cco_forward(basis(4), cco_params(4, 4, example_gate(4)), "blk", n_experts=4, k=2)
    assert out.experts.tolist() == [4, 0]
    np.testing.assert_allclose(out.gates, [0.7311, 0.2689], atol=1e-4)
    assert np.count_nonzero(out.gates) == 2
    assert out.gates.sum() == pytest.approx(1.0, abs=1e-12)


def test_cco_identity_expert_only():
    gate = np.zeros((4, 3))
    gate[0, 2] = 5.0
    h = np.array([[1.0, -2.0, 0.5, 3.0]])
    out = cco_forward(T.constant(h), cco_params(4, 2, gate), "blk", n_experts=2, k=1)

    assert out.experts.tolist() == [2]
    assert out.gates.tolist() == [1.0]
    mixed = 2.0 * h
    centered = mixed - mixed.mean()
    np.testing.assert_allclose(out.value.data, centered / np.sqrt((centered**2).mean() + 1e-5), atol=1e-12)


def test_cco_unselected_experts_get_no_gradient():
    params = cco_params(4, 4, example_gate(4))
    out = cco_forward(basis(4), params, "blk", n_experts=4, k=2)
    contracted = T.reduce_sum(T.mul(out.value, T.constant([[0.3, -1.0, 0.7, 0.2]])))
    T.backward(contracted)

    assert np.any(params["blk.expert.0.W2"].grad != 0.0)
    for j in (1, 2, 3):
        for name in ("W1", "b1", "W2", "b2"):
            assert not np.any(params[f"blk.expert.{j}.{name}"].grad)


def test_cco_rejects_bad_k():
    with pytest.raises(pocco.InvalidArgument):
        cco_forward(basis(4), cco_params(4, 2), "blk", n_experts=2, k=4)


def test_initialization_is_seeded(tiny_model):
    a = Policy(tiny_model, ProblemType.motsp, 2, seed=3).arrays()
    b = Policy(tiny_model, ProblemType.motsp, 2, seed=3).arrays()
    c = Policy(tiny_model, ProblemType.motsp, 2, seed=4).arrays()

    assert all(np.array_equal(a[k], b[k]) for k in a)
    assert not all(np.array_equal(a[k], c[k]) for k in a)
    np.testing.assert_array_equal(a["enc.0.norm1.scale"], np.ones(8))
    np.testing.assert_array_equal(a["enc.0.norm1.shift"], np.zeros(8))


def test_parameter_set_is_checked(tiny_model, tsp_policy):
    arrays = tsp_policy.arrays()
    arrays.pop("dec.compat.Wk")
    with pytest.raises(pocco.InvalidArgument):
        Policy(tiny_model, ProblemType.motsp, 2, arrays=arrays)

    arrays = tsp_policy.arrays()
    arrays["dec.compat.Wk"] = np.zeros((3, 3))
    with pytest.raises(pocco.InvalidArgument):
        Policy(tiny_model, ProblemType.motsp, 2, arrays=arrays)


def test_encode_rejects_foreign_instance(tsp_policy):
    with pytest.raises(pocco.InvalidArgument):
        tsp_policy.encode(pocco.generate("MOCVRP", 6, 2, 0), [0.5, 0.5])
    with pytest.raises(pocco.InvalidArgument):
        tsp_policy.encode(pocco.generate("MOTSP", 6, 2, 0), [0.7, 0.7])


def test_decode_step_is_a_distribution(tsp_policy, tsp_instance):
    embeds = tsp_policy.encode(tsp_instance, [0.5, 0.5])
    state = reset(tsp_instance)

    probs = tsp_policy.decode_step(embeds, state)
    assert probs.sum() == pytest.approx(1.0, abs=1e-12)
    assert np.all(probs > 0.0)

    state = step(step(state, 2), 4)
    probs = tsp_policy.decode_step(embeds, state)
    assert probs[2] == 0.0 and probs[4] == 0.0
    assert probs.sum() == pytest.approx(1.0, abs=1e-12)


def test_logits_are_clipped(tsp_instance):
    config = ModelConfig(embed_dim=8, n_encoder_layers=1, n_heads=2, n_ff_experts=2, topk=1, clip=2.0)
    policy = Policy(config, ProblemType.motsp, 2, seed=0)
    embeds = policy.encode(tsp_instance, [0.3, 0.7])
    state = reset(tsp_instance)

    log_probs, _ = policy.step_log_probs(embeds, state, feasible_mask(state))
    spread = log_probs.data.max() - log_probs.data.min()
    assert spread <= 2 * config.clip + 1e-12


def test_encoder_is_permutation_equivariant(tsp_policy, tsp_instance):
    perm = np.random.default_rng(0).permutation(tsp_instance.n_nodes)
    moved = tsp_instance.with_features(tsp_instance.features[perm])

    base = tsp_policy.encode(tsp_instance, [0.4, 0.6])
    permuted = tsp_policy.encode(moved, [0.4, 0.6])
    np.testing.assert_allclose(permuted.nodes.data, base.nodes.data[perm], atol=1e-10)
    np.testing.assert_allclose(permuted.weight.data, base.weight.data, atol=1e-10)


def test_weight_conditions_the_embeddings(tsp_policy, tsp_instance):
    a = tsp_policy.encode(tsp_instance, [0.2, 0.8]).nodes.data
    b = tsp_policy.encode(tsp_instance, [0.8, 0.2]).nodes.data
    assert not np.allclose(a, b)


def test_greedy_rollout_is_deterministic(tsp_policy, tsp_instance):
    first = tsp_policy.rollout(tsp_instance, [0.5, 0.5])
    second = tsp_policy.rollout(tsp_instance, [0.5, 0.5])
    assert first.actions == second.actions
    np.testing.assert_array_equal(first.objectives, second.objectives)
    assert sorted(first.actions) == list(range(6))


def test_sample_mode_needs_rng(tsp_policy, tsp_instance):
    with pytest.raises(pocco.InvalidArgument):
        tsp_policy.rollout(tsp_instance, [0.5, 0.5], DecodeMode.sample)


def test_router_load_counts_decoder_steps(tsp_policy, tsp_instance):
    traj = tsp_policy.rollout(tsp_instance, [0.5, 0.5])
    assert traj.router_load.shape == (1, 3)
    # the last of 6 nodes is forced, so 5 steps route through the block
    assert traj.router_load.sum() == 2 * 5
    assert traj.step_log_probs[-1] == 0.0


def test_replayed_log_likelihood_matches_sampling(tsp_policy, tsp_instance, rng):
    for traj in tsp_policy.sample(tsp_instance, [0.3, 0.7], 4, rng):
        replay = tsp_policy.log_likelihood(tsp_instance, [0.3, 0.7], traj.actions)
        assert replay.log_likelihood().item() == pytest.approx(traj.log_likelihood().item(), abs=1e-12)
        assert traj.step_log_probs.sum() == pytest.approx(traj.log_likelihood().item(), abs=1e-12)
        assert avg_log_likelihood(traj).item() <= 0.0


def test_forced_actions_are_validated(tsp_policy, tsp_instance):
    with pytest.raises(pocco.InvalidArgument):
        tsp_policy.log_likelihood(tsp_instance, [0.5, 0.5], [0, 1, 2])
    with pytest.raises(pocco.InvalidArgument):
        tsp_policy.log_likelihood(tsp_instance, [0.5, 0.5], [0, 1, 2, 3, 4, 5, 0])
    with pytest.raises(pocco.InfeasibleAction):
        tsp_policy.log_likelihood(tsp_instance, [0.5, 0.5], [0, 0, 1, 2, 3, 4])


def test_small_motsp_rollout_is_a_permutation(tsp_policy, rng):
    instance = pocco.generate("MOTSP", 4, 2, 9)
    for traj in tsp_policy.sample(instance, [0.5, 0.5], 10, rng):
        assert sorted(traj.actions) == [0, 1, 2, 3]


@pytest.mark.parametrize("problem, n", [("MOCVRP", 6), ("MOKP", 8)])
def test_other_problems_roll_out_feasibly(tiny_model, problem, n, rng):
    problem = ProblemType(problem)
    policy = Policy(tiny_model, problem, 2, seed=1)
    instance = pocco.generate(problem, n, 2, 2)

    greedy = policy.rollout(instance, [0.5, 0.5])
    sampled = policy.sample(instance, [0.1, 0.9], 3, rng)
    for traj in [greedy, *sampled]:
        assert np.all(np.isfinite(traj.objectives))
        np.testing.assert_array_equal(traj.objectives, pocco.evaluate(instance, traj.actions))


def test_log_likelihood_gradient_matches_finite_differences(tsp_policy, rng):
    instance = pocco.generate("MOTSP", 4, 2, 17)
    lam = np.array([0.35, 0.65])
    actions = tsp_policy.rollout(instance, lam, DecodeMode.sample, rng).actions
    own = tsp_policy.params

    def f(leaves):
        tsp_policy.params = dict(leaves)
        try:
            return tsp_policy.log_likelihood(instance, lam, actions).log_likelihood()
        finally:
            tsp_policy.params = own

    assert finite_diff_check(f, tsp_policy.arrays(), max_coords=2, rng=rng) < 1e-4


def test_checkpoint_round_trip(tmp_path, tsp_policy, tsp_instance):
    path = tmp_path / "policy.ckpt"
    size = save_checkpoint(path, tsp_policy)
    assert size == path.stat().st_size

    loaded = load_checkpoint(path)
    assert loaded.problem is ProblemType.motsp and loaded.kappa == 2
    original = tsp_policy.arrays()
    for name, data in loaded.arrays().items():
        assert np.array_equal(data, original[name])

    again = tmp_path / "again.ckpt"
    save_checkpoint(again, loaded)
    assert again.read_bytes() == path.read_bytes()
    assert loaded.rollout(tsp_instance, [0.5, 0.5]).actions == tsp_policy.rollout(tsp_instance, [0.5, 0.5]).actions


def test_checkpoint_rejects_garbage(tmp_path, tsp_policy):
    bad = tmp_path / "bad.ckpt"
    bad.write_bytes(b"not a checkpoint")
    with pytest.raises(pocco.DataFormatError):
        load_checkpoint(bad)

    good = tmp_path / "good.ckpt"
    save_checkpoint(good, tsp_policy)
    truncated = tmp_path / "truncated.ckpt"
    truncated.write_bytes(good.read_bytes()[:-16])
    with pytest.raises(pocco.DataFormatError):
        load_checkpoint(truncated)
