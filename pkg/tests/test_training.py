import functools
import math

import numpy as np
import pytest

import pocco
from pocco import Algorithm, ModelConfig, ProblemType, Scalarization, TrainConfig, VarianceConfig
from pocco.core import tensor as T
from pocco.inference import solve_front
from pocco.models import Trajectory
from pocco.nn import Policy, load_checkpoint
from pocco.training import (
    METRICS_HEADER,
    MetricsRow,
    _Run,
    PreferencePair,
    batch_loss,
    build_pairs,
    collect_rollouts,
    pl_gradient_check,
    pl_loss,
    pooled_variance,
    reinforce_loss,
    sample_gradients,
    sample_subproblems,
    sample_variance,
    sample_weights,
    train,
    variance_study,
)
from pocco.utils import derive_rng

WS = Scalarization(kappa=2)
FIRST_OBJECTIVE = np.array([1.0, 0.0])


def fake_trajectory(objectives, step_log_probs, weight=FIRST_OBJECTIVE):
    """A trajectory whose per-step log-probabilities are trainable leaves."""
    log_probs = [T.parameter([[lp]]) for lp in step_log_probs]
    actions = list(range(len(step_log_probs)))
    return Trajectory(None, weight, actions, log_probs, np.asarray(objectives, dtype=np.float64))


def leaf_grads(traj):
    return np.array([lp.grad[0, 0] for lp in traj.log_probs])


def policy_grads(policy, root):
    policy.zero_grad()
    T.backward(root)
    grads = [p.grad.copy() for p in policy.parameters()]
    policy.zero_grad()
    return grads


def test_two_objective_weights_sum_exactly():
    weights = sample_weights(np.random.default_rng(0), 2, 1000)
    assert np.array_equal(weights[:, 1], 1.0 - weights[:, 0])
    assert np.all(weights >= 0.0)


@pytest.mark.parametrize("kappa, marginal_var", [(2, 1 / 12), (3, 1 / 18)])
def test_weights_are_uniform_on_simplex(kappa, marginal_var):
    count = 100_000
    weights = sample_weights(np.random.default_rng(1), kappa, count)
    sigma = math.sqrt(marginal_var / count)
    assert np.all(np.abs(weights.mean(axis=0) - 1.0 / kappa) < 4 * sigma)


def test_subproblem_batch_is_seeded():
    a = sample_subproblems(derive_rng(3, 1, 1), 4, ProblemType.motsp, 10, 2)
    b = sample_subproblems(derive_rng(3, 1, 1), 4, ProblemType.motsp, 10, 2)
    assert len(a) == 4
    for x, y in zip(a, b):
        assert x.instance == y.instance
        np.testing.assert_array_equal(x.weight, y.weight)


def test_build_pairs_orients_winner():
    first, second = fake_trajectory([3.0, 9.0], [-1.0]), fake_trajectory([5.0, 1.0], [-1.0])
    pairs = build_pairs([second, first], WS)
    assert len(pairs) == 1
    assert pairs[0].winner is first and pairs[0].label == 1


def test_build_pairs_counts_and_ties():
    distinct = [fake_trajectory([v, 0.0], [-1.0]) for v in (1.0, 2.0, 3.0)]
    assert len(build_pairs(distinct, WS)) == 3

    tied = [fake_trajectory([2.0, 0.0], [-1.0]), fake_trajectory([2.0, 7.0], [-1.0])]
    assert build_pairs(tied, WS) == []

    with pytest.raises(pocco.InvalidArgument):
        build_pairs(distinct[:1], WS)


def test_pairs_ignore_positive_rescaling():
    rng = np.random.default_rng(2)
    objectives = rng.uniform(1.0, 10.0, size=(5, 2))
    lam = np.array([0.3, 0.7])
    plain = [fake_trajectory(o, [-1.0], lam) for o in objectives]
    scaled = [fake_trajectory(o * 17.0, [-1.0], lam) for o in objectives]

    def orientation(pairs, group):
        return [(group.index(p.winner), group.index(p.loser)) for p in pairs]

    assert orientation(build_pairs(plain, WS), plain) == orientation(build_pairs(scaled, WS), scaled)


def test_pl_loss_at_equal_likelihoods_is_ln2():
    pair = PreferencePair(fake_trajectory([1, 0], [-0.5, -1.5]), fake_trajectory([2, 0], [-1.0]))
    assert pl_loss(pair, 3.5).item() == pytest.approx(math.log(2.0), abs=1e-12)


def test_pl_loss_example():
    pair = PreferencePair(fake_trajectory([1, 0], [-1.0, -1.0]), fake_trajectory([2, 0], [-1.2]))
    assert pl_loss(pair, 3.5).item() == pytest.approx(0.403186, abs=1e-6)


def test_pl_loss_falls_as_winner_gains_likelihood():
    loser = fake_trajectory([2, 0], [-1.0])
    losses = [pl_loss(PreferencePair(fake_trajectory([1, 0], [lp]), loser), 3.5).item() for lp in (-2.0, -1.0, -0.5)]
    assert losses[0] > losses[1] > losses[2]


def test_pl_loss_is_finite_for_a_hopeless_winner():
    # beta * (avg_ll(winner) - avg_ll(loser)) = 3.5 * (-300) = -1050
    winner, loser = fake_trajectory([1, 0], [-300.0]), fake_trajectory([2, 0], [0.0])
    loss = pl_loss(PreferencePair(winner, loser), 3.5)
    assert loss.item() == pytest.approx(1050.0, rel=1e-12)

    T.backward(loss)
    np.testing.assert_allclose(leaf_grads(winner), [-3.5])
    np.testing.assert_allclose(leaf_grads(loser), [3.5])


def test_switched_off_pair_has_no_loss_or_gradient():
    winner, loser = fake_trajectory([1, 0], [-0.3, -0.9]), fake_trajectory([2, 0], [-2.0])
    loss = pl_loss(PreferencePair(winner, loser, label=0), 3.5)
    T.backward(loss)

    assert loss.item() == 0.0
    assert not np.any(leaf_grads(winner)) and not np.any(leaf_grads(loser))


def test_pl_gradient_ignores_objective_gap():
    def gradients(loser_objectives):
        winner = fake_trajectory([1, 0], [-0.7, -0.2])
        loser = fake_trajectory(loser_objectives, [-1.1])
        (pair,) = build_pairs([winner, loser], WS)
        T.backward(pl_loss(pair, 3.5))
        return np.concatenate([leaf_grads(winner), leaf_grads(loser)])

    np.testing.assert_array_equal(gradients([1.5, 0.0]), gradients([900.0, 0.0]))


def test_preference_label_must_be_binary():
    with pytest.raises(pocco.InvalidArgument):
        PreferencePair(fake_trajectory([1, 0], [-1.0]), fake_trajectory([2, 0], [-1.0]), label=2)


def test_closed_form_gradient(tsp_policy, rng):
    instance = pocco.generate("MOTSP", 4, 2, 8)
    for _ in range(5):
        lam = sample_weights(rng, 2, 1)[0]
        first, second = tsp_policy.sample(instance, lam, 2, rng)
        assert pl_gradient_check(PreferencePair(first, second), 3.5, tsp_policy) < 1e-10
        assert pl_gradient_check(PreferencePair(first, second, label=0), 3.5, tsp_policy) == 0.0


def test_small_beta_gradient_is_half_the_likelihood_gap(tsp_policy, rng):
    instance = pocco.generate("MOTSP", 4, 2, 12)
    lam = np.array([0.5, 0.5])
    first, second = tsp_policy.sample(instance, lam, 2, rng)
    beta = 1e-6

    def replay(traj):
        return tsp_policy.log_likelihood(instance, lam, traj.actions)

    got = policy_grads(tsp_policy, pl_loss(PreferencePair(replay(first), replay(second)), beta))
    gw = policy_grads(tsp_policy, pocco.avg_log_likelihood(replay(first)))
    gl = policy_grads(tsp_policy, pocco.avg_log_likelihood(replay(second)))

    for g, a, b in zip(got, gw, gl):
        expected = -0.5 * beta * (a - b)
        np.testing.assert_allclose(g, expected, rtol=1e-5, atol=1e-18)


def test_reinforce_advantages():
    better, worse = fake_trajectory([3.0, 0.0], [-0.4, -0.6]), fake_trajectory([5.0, 0.0], [-2.0])
    loss = reinforce_loss([better, worse], WS)
    # rewards (-3, -5), baseline -4, advantages (+1, -1)
    assert loss.item() == pytest.approx(-0.5 * (1.0 * -1.0 + -1.0 * -2.0))

    T.backward(loss)
    np.testing.assert_allclose(leaf_grads(better), [-0.5, -0.5])
    np.testing.assert_allclose(leaf_grads(worse), [0.5])


def test_reinforce_with_equal_rewards_has_zero_gradient():
    group = [fake_trajectory([4.0, 1.0], [-0.1]), fake_trajectory([4.0, 2.0], [-3.0, -1.0])]
    T.backward(reinforce_loss(group, WS))
    for traj in group:
        assert not np.any(leaf_grads(traj))

    with pytest.raises(pocco.InvalidArgument):
        reinforce_loss(group[:1], WS)


def test_batch_loss_averages_subproblems():
    a = [fake_trajectory([1.0, 0.0], [-1.0]), fake_trajectory([2.0, 0.0], [-1.0])]
    b = [fake_trajectory([1.0, 0.0], [-2.0]), fake_trajectory([1.0, 0.0], [-1.0])]
    loss = batch_loss([a, b], Algorithm.preference, WS, 3.5)
    # the second subproblem ties, so only the first contributes
    assert loss.item() == pytest.approx(math.log(2.0) / 2)

    assert batch_loss([b], Algorithm.preference, WS, 3.5).item() == 0.0


def test_pooled_variance():
    assert pooled_variance([]) == 0.0
    assert pooled_variance([T.parameter(np.ones(3))]) == 0.0

    p, q = T.parameter([0.0]), T.parameter([0.0, 0.0])
    p.grad, q.grad = np.array([1.0]), np.array([3.0, 2.0])
    assert pooled_variance([p, q]) == pytest.approx(np.var([1.0, 3.0, 2.0]))


def flat_grads(policy, root):
    policy.zero_grad()
    T.backward(root)
    grads = [np.zeros(p.data.size) if p.grad is None else p.grad.ravel().copy() for p in policy.parameters()]
    policy.zero_grad()
    return np.concatenate(grads)


@pytest.fixture
def tsp_rollouts(tsp_policy, rng):
    subproblems = sample_subproblems(rng, 2, "MOTSP", 5, 2)
    return collect_rollouts(tsp_policy, subproblems, 3, seed=2, step=1)


def test_reinforce_samples_average_to_the_batch_gradient(tsp_policy, tsp_rollouts):
    samples = sample_gradients(tsp_policy, tsp_rollouts, Algorithm.reinforce, WS, 3.5)
    assert samples.shape == (6, tsp_policy.size)

    expected = flat_grads(tsp_policy, batch_loss(tsp_rollouts, Algorithm.reinforce, WS, 3.5))
    np.testing.assert_allclose(samples.mean(axis=0), expected, rtol=1e-9, atol=1e-15)


def test_preference_samples_sum_to_the_batch_gradient(tsp_policy, tsp_rollouts):
    samples = sample_gradients(tsp_policy, tsp_rollouts, Algorithm.preference, WS, 3.5)
    # three pairs in each of two subproblems
    assert samples.shape == (6, tsp_policy.size)

    expected = flat_grads(tsp_policy, batch_loss(tsp_rollouts, Algorithm.preference, WS, 3.5))
    np.testing.assert_allclose(samples.sum(axis=0) / 2, expected, rtol=1e-9, atol=1e-15)
    assert all(p.grad is None or not np.any(p.grad) for p in tsp_policy.parameters())


def test_tied_pairs_are_zero_samples(tsp_policy):
    group = [fake_trajectory([1, 0], [-1.0]), fake_trajectory([1, 0], [-2.0]), fake_trajectory([2, 0], [-0.5])]
    samples = sample_gradients(tsp_policy, [group], Algorithm.preference, WS, 3.5)
    assert samples.shape == (3, tsp_policy.size)

    with pytest.raises(pocco.InvalidArgument):
        sample_gradients(tsp_policy, [group[:1]], Algorithm.reinforce, WS, 3.5)


def test_sample_variance():
    assert sample_variance(np.zeros((0, 4))) == 0.0
    assert sample_variance(np.ones((3, 4))) == 0.0
    samples = np.array([[0.0, 2.0], [2.0, 2.0]])
    assert sample_variance(samples) == pytest.approx(0.5)


def test_metrics_row_leaves_unmeasured_cells_blank():
    assert MetricsRow(0, "PL", validation_hv=0.5).to_csv() == "0,PL,,0.5,,"


def test_zero_steps_keeps_initialization(tmp_path, tiny_train_config):
    config = tiny_train_config.model_copy(update={"steps": 0})
    result = train(config, tmp_path)

    initial = Policy(config.model, ProblemType.motsp, 2, seed=config.seed).arrays()
    loaded = load_checkpoint(tmp_path / "policy.ckpt").arrays()
    assert all(np.array_equal(loaded[name], data) for name, data in initial.items())

    assert [row.step for row in result.metrics] == [0]
    assert result.metrics[0].validation_hv is not None


def test_training_is_deterministic(tmp_path, tiny_train_config):
    first = train(tiny_train_config, tmp_path / "a")
    second = train(tiny_train_config, tmp_path / "b")

    assert first.metrics == second.metrics
    assert [row.step for row in first.metrics] == [0, 1, 2]
    assert all(row.grad_variance is not None for row in first.metrics[1:])
    assert all(row.wall_ms is None for row in first.metrics)

    text = (tmp_path / "a" / "metrics.csv").read_text()
    assert text.splitlines()[0] == METRICS_HEADER
    assert text == (tmp_path / "b" / "metrics.csv").read_text()


def test_threads_do_not_change_training(tiny_train_config):
    single = train(tiny_train_config)
    threaded = train(tiny_train_config.model_copy(update={"threads": 3}))
    assert single.metrics == threaded.metrics


@pytest.mark.parametrize("algorithm", ["PL", "REINFORCE"])
def test_training_moves_parameters(tiny_train_config, algorithm):
    config = tiny_train_config.model_copy(update={"algorithm": algorithm, "steps": 1})
    trained = train(config).policy.arrays()
    initial = Policy(config.model, ProblemType.motsp, 2, seed=config.seed).arrays()
    assert any(not np.array_equal(trained[name], data) for name, data in initial.items())


def test_variance_study_rows(tiny_train_config):
    config = VarianceConfig(**tiny_train_config.model_dump())
    rows = variance_study(config)

    assert [(r.batch, r.algorithm) for r in rows] == [(1, "PL"), (1, "REINFORCE"), (2, "PL"), (2, "REINFORCE")]
    assert all(r.variance >= 0.0 for r in rows)


def test_variance_study_scores_both_estimators_on_one_batch(tiny_train_config):
    config = VarianceConfig(**{**tiny_train_config.model_dump(), "variance_batches": 1})
    first_pl, first_rl = variance_study(config)

    run = _Run(config, None)
    n, rollouts = run.collect(1)
    for row, algorithm in ((first_pl, Algorithm.preference), (first_rl, Algorithm.reinforce)):
        samples = sample_gradients(run.policy, rollouts, algorithm, run.scalarization(n), run.beta)
        assert row.variance == pytest.approx(sample_variance(samples), rel=1e-12, abs=0.0)


def test_variance_study_updates_with_the_configured_algorithm(tiny_train_config):
    def study(algorithm):
        return variance_study(VarianceConfig(**{**tiny_train_config.model_dump(), "algorithm": algorithm}))

    pl, rl = study("PL"), study("REINFORCE")
    assert pl[:2] == rl[:2]
    assert pl[2:] != rl[2:]


@pytest.mark.parametrize("bounds", [(1, 5), (8, 4)])
def test_n_range_bounds_are_checked(tiny_train_config, bounds):
    with pytest.raises(ValueError):
        TrainConfig(**{**tiny_train_config.model_dump(), "n_range": bounds})


def test_training_over_a_size_range(tmp_path, tiny_train_config):
    config = tiny_train_config.model_copy(update={"n_range": (4, 7), "steps": 3})
    first = train(config, tmp_path)
    assert first.metrics == train(config).metrics

    run = _Run(config, None)
    sizes = {run.collect(step)[0] for step in range(1, 9)}
    assert sizes <= {4, 5, 6, 7} and len(sizes) > 1

    policy = load_checkpoint(tmp_path / "policy.ckpt")
    weights = pocco.das_dennis_weights(2, 2)
    for n in (5, 9):
        result = solve_front(policy, pocco.generate("MOTSP", n, 2, 3), weights, WS)
        assert result.rollouts == len(weights)
        assert all(sorted(t.actions) == list(range(n)) for t in result.best)


@pytest.mark.slow
def test_preference_gradients_vary_less_than_reinforce():
    config = VarianceConfig(
        problem="MOTSP",
        n=20,
        kappa=2,
        batch_size=16,
        samples_per_subproblem=2,
        seed=0,
        model=ModelConfig(embed_dim=32, n_encoder_layers=2),
    )
    by_batch = {}
    for row in variance_study(config):
        by_batch.setdefault(row.batch, {})[row.algorithm] = row.variance

    assert len(by_batch) == 5
    assert all(v["PL"] < v["REINFORCE"] for v in by_batch.values())
    assert sum(v["REINFORCE"] >= 10.0 * v["PL"] for v in by_batch.values()) >= 3


DESK_SEEDS = (0, 1, 2)


@functools.lru_cache(maxsize=None)
def desk_curve(algorithm, seed):
    """``(step, validation hv)`` of a 2000-step Bi-TSP10 run, validated every 100 steps."""
    config = TrainConfig(
        problem="MOTSP",
        n=10,
        kappa=2,
        batch_size=16,
        samples_per_subproblem=2,
        beta=3.5,
        steps=2000,
        seed=seed,
        algorithm=algorithm,
        validate_every=100,
        validation_H=10,
        model=ModelConfig(embed_dim=32, n_encoder_layers=2),
    )
    return tuple((row.step, row.validation_hv) for row in train(config).metrics if row.validation_hv is not None)


def first_step_reaching(curve, target):
    return next((step for step, hv in curve if hv >= target), None)


@pytest.mark.slow
@pytest.mark.parametrize("seed", DESK_SEEDS)
def test_desk_training_improves_validation_hv(seed):
    curve = desk_curve("PL", seed)
    (_, initial), (last, final) = curve[0], curve[-1]
    assert last == 2000
    assert final >= 1.2 * initial


@pytest.mark.slow
def test_preference_learning_reaches_reinforce_hv_sooner():
    sooner = 0
    for seed in DESK_SEEDS:
        pl, rl = desk_curve("PL", seed), desk_curve("REINFORCE", seed)
        target = rl[-1][1]
        pl_step = first_step_reaching(pl, target)
        if pl_step is not None and pl_step < first_step_reaching(rl, target):
            sooner += 1

    assert sooner >= 2
