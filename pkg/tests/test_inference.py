import numpy as np
import pytest

import pocco
from pocco import DecodeMode, ProblemType, Scalarization
from pocco.inference import (
    apply_transform,
    augment_transforms,
    evaluate_model,
    rank_sum_test,
    read_instance_hvs,
    solve_front,
    write_evaluation,
)
from pocco.models.env import feasible_mask, reset, step
from pocco.nn import Policy

WEIGHTS = pocco.das_dennis_weights(2, 4)


def test_transform_counts():
    assert len(augment_transforms(ProblemType.motsp, 2)) == 64
    assert len(augment_transforms(ProblemType.motsp, 3)) == 512
    assert len(augment_transforms(ProblemType.mocvrp, 2)) == 8
    assert augment_transforms(ProblemType.motsp, 2)[0].is_identity

    with pytest.raises(pocco.InvalidArgument):
        augment_transforms(ProblemType.mokp, 2)


def test_identity_transform_keeps_instance():
    instance = pocco.generate("MOTSP", 10, 2, 0)
    identity = augment_transforms(ProblemType.motsp, 2)[0]
    assert apply_transform(instance, identity) == instance


def test_transforms_are_isometries():
    rng = np.random.default_rng(0)
    transforms = augment_transforms(ProblemType.motsp, 2)
    for trial in range(100):
        instance = pocco.generate("MOTSP", 8, 2, trial)
        tour = rng.permutation(8)
        base = pocco.evaluate(instance, tour)
        for t in transforms:
            np.testing.assert_allclose(pocco.evaluate(apply_transform(instance, t), tour), base, atol=1e-12)


def test_cvrp_transform_keeps_demands():
    instance = pocco.generate("MOCVRP", 10, 2, 1)
    state = reset(instance)
    while not state.done:
        state = step(state, int(np.flatnonzero(feasible_mask(state))[-1]))
    routes = state.partial

    for t in augment_transforms(ProblemType.mocvrp, 2):
        moved = apply_transform(instance, t)
        np.testing.assert_array_equal(moved.demands, instance.demands)
        np.testing.assert_allclose(pocco.evaluate(moved, routes), pocco.evaluate(instance, routes), atol=1e-12)


def test_apply_transform_rejects_bad_input():
    with pytest.raises(pocco.InvalidArgument):
        apply_transform(pocco.generate("MOKP", 10, 2, 0), pocco.AugmentTransform((0,)))
    with pytest.raises(pocco.InvalidArgument):
        apply_transform(pocco.generate("MOTSP", 10, 2, 0), pocco.AugmentTransform((0,)))


def test_front_without_augmentation(tsp_policy, tsp_instance):
    result = solve_front(tsp_policy, tsp_instance, WEIGHTS, Scalarization(kappa=2))
    assert result.rollouts == len(WEIGHTS)
    assert len(result.best) == len(WEIGHTS)
    assert 1 <= len(result.archive) <= len(WEIGHTS)


def test_augmentation_never_worsens_a_weight(tsp_policy, tsp_instance):
    scalarization = Scalarization(kappa=2)
    plain = solve_front(tsp_policy, tsp_instance, WEIGHTS, scalarization)
    augmented = solve_front(tsp_policy, tsp_instance, WEIGHTS, scalarization, augment=True)

    assert augmented.rollouts == 64 * len(WEIGHTS)
    for lam, a, b in zip(WEIGHTS, augmented.best, plain.best):
        assert scalarization.score(a.objectives, lam) <= scalarization.score(b.objectives, lam)


def test_pooled_augmentation_dominates_best_only(tsp_policy, tsp_instance):
    scalarization = Scalarization(kappa=2)
    frame = pocco.reference_frame(ProblemType.motsp, 2, 6)
    best = solve_front(tsp_policy, tsp_instance, WEIGHTS, scalarization, augment=True)
    pooled = solve_front(tsp_policy, tsp_instance, WEIGHTS, scalarization, augment=True, pool=True)
    assert pocco.hypervolume(pooled.archive, frame) >= pocco.hypervolume(best.archive, frame)


def test_mokp_augmentation_is_skipped(tiny_model):
    policy = Policy(tiny_model, ProblemType.mokp, 2, seed=0)
    instance = pocco.generate("MOKP", 8, 2, 0)
    scalarization = Scalarization.for_problem(ProblemType.mokp, 2, 8)
    result = solve_front(policy, instance, WEIGHTS, scalarization, augment=True)
    assert result.rollouts == len(WEIGHTS)


def test_evaluate_model_report(tsp_policy):
    instances = [pocco.generate("MOTSP", 6, 2, i) for i in range(3)]
    frame = pocco.reference_frame(ProblemType.motsp, 2, 6)
    result = evaluate_model(tsp_policy, instances, WEIGHTS, Scalarization(kappa=2), frame, hv_ref=0.5)

    report = result.report
    assert report["n_instances"] == 3 and report["n_weights"] == 5
    assert 0.0 < report["mean_hv"] <= 1.0
    assert report["gap"] == pytest.approx(pocco.gap(report["mean_hv"], 0.5))
    assert report["wall_ms"] is None and report["augment"] is False
    assert sum(report["expert_load"]["block.0"]) > 0
    assert report["mean_hv"] == pytest.approx(np.mean([i.normalized_hv for i in result.instances]))


def test_single_instance_mean_is_its_hv(tsp_policy, tsp_instance):
    frame = pocco.reference_frame(ProblemType.motsp, 2, 6)
    scalarization = Scalarization(kappa=2)
    result = evaluate_model(tsp_policy, [tsp_instance], WEIGHTS, scalarization, frame)
    front = solve_front(tsp_policy, tsp_instance, WEIGHTS, scalarization)
    assert result.report["mean_hv"] == pocco.normalized_hv(front.archive, frame)


def test_evaluation_is_deterministic(tsp_policy):
    instances = [pocco.generate("MOTSP", 6, 2, i) for i in range(4)]
    frame = pocco.reference_frame(ProblemType.motsp, 2, 6)
    scalarization = Scalarization(kappa=2)

    def run(threads):
        return evaluate_model(
            tsp_policy, instances, WEIGHTS, scalarization, frame, mode=DecodeMode.sample, seed=9, threads=threads
        ).report

    assert run(1) == run(1) == run(3)


def test_evaluate_model_rejects_mismatch(tsp_policy):
    frame = pocco.reference_frame(ProblemType.motsp, 2, 6)
    with pytest.raises(pocco.InvalidArgument):
        evaluate_model(tsp_policy, [], WEIGHTS, Scalarization(kappa=2), frame)
    with pytest.raises(pocco.InvalidArgument):
        evaluate_model(tsp_policy, [pocco.generate("MOCVRP", 6, 2, 0)], WEIGHTS, Scalarization(kappa=2), frame)
    with pytest.raises(pocco.InvalidArgument):
        evaluate_model(tsp_policy, [pocco.generate("MOTSP", 6, 2, 0)], [[0.6, 0.6]], Scalarization(kappa=2), frame)


def test_evaluation_files(tmp_path, tsp_policy):
    instances = [pocco.generate("MOTSP", 6, 2, i) for i in range(2)]
    frame = pocco.reference_frame(ProblemType.motsp, 2, 6)
    result = evaluate_model(tsp_policy, instances, WEIGHTS, Scalarization(kappa=2), frame)
    write_evaluation(tmp_path, result, write_fronts=True)

    assert (tmp_path / "report.json").exists()
    hvs = read_instance_hvs(tmp_path / "instances.csv")
    np.testing.assert_array_equal(hvs, [i.normalized_hv for i in result.instances])
    np.testing.assert_array_equal(pocco.read_front(tmp_path / "fronts" / "1.csv"), result.instances[1].front)


def test_instance_hv_file_needs_header(tmp_path):
    path = tmp_path / "instances.csv"
    path.write_text("0,0.5,3\n")
    with pytest.raises(pocco.DataFormatError):
        read_instance_hvs(path)


def test_rank_sum_test():
    rng = np.random.default_rng(0)
    low, high = rng.uniform(0.4, 0.5, 30), rng.uniform(0.6, 0.7, 30)

    verdict = rank_sum_test(high, low)
    assert verdict["significant"] and verdict["better"] == "a"
    assert rank_sum_test(low, high)["better"] == "b"
    assert rank_sum_test(low, low)["better"] == "none"

    with pytest.raises(pocco.InvalidArgument):
        rank_sum_test([], low)
