"""Pipelines: master building, the four algorithms, degenerate equality."""

import numpy as np
import pytest

from snowball.data import gen_two_moons, split
from snowball.discovery import assign_pseudo_labels, select_samples
from snowball.errors import ConfigError, OrchestrationError
from snowball.network import init_params, params_equal
from snowball.orchestrator import (
    ExperimentConfig,
    TrainingSet,
    build_master,
    mean_teacher_run,
    run_algorithm,
    self_learning_run,
    snowball_run,
    supervised_run,
)


def small_data(seed=0, n=240, lpc=2, noise=0.1):
    raw = gen_two_moons(n, noise, seed=seed)
    return split(raw, labels_per_class=lpc, test_fraction=0.25, seed=seed)


def quick_cfg(**kw):
    base = dict(generations=2, iterations=2, steps=25, ramp_len=10,
                master_refine_steps=5, seed=0)
    base.update(kw)
    return ExperimentConfig(**base)


class TestExperimentConfig:
    def test_validation(self):
        with pytest.raises(ConfigError):
            ExperimentConfig(generations=0).validate()
        with pytest.raises(ConfigError):
            ExperimentConfig(beta=2.0).validate()
        with pytest.raises(ConfigError):
            ExperimentConfig(strategy="closest").validate()
        with pytest.raises(ConfigError):
            ExperimentConfig(fusion="blend").validate()
        ExperimentConfig().validate()

    def test_doubling_schedule(self):
        cfg = ExperimentConfig(iterations=3)
        # discovering L, 2L, 4L doubles the cumulative labelled count each time
        assert cfg.resolved_schedule(4) == (4, 8, 16)
        assert cfg.resolved_schedule(10) == (10, 20, 40)

    def test_explicit_schedule_truncated_to_iterations(self):
        cfg = ExperimentConfig(iterations=2, discovery_schedule=(5, 6, 7))
        assert cfg.resolved_schedule(4) == (5, 6)

    def test_refine_steps_default_quarter(self):
        assert ExperimentConfig(steps=300).resolved_refine_steps() == 75
        assert ExperimentConfig(steps=300, master_refine_steps=10).resolved_refine_steps() == 10


class TestTrainingSet:
    def test_from_split_and_growth(self):
        d = small_data()
        ts = TrainingSet.from_split(d, generation=1)
        assert len(ts) == len(d.labeled_ids)
        assert ts.discovered_count() == 0
        grown = ts.with_discovered(
            np.array([9991, 9992]), np.zeros((2, 2)), np.array([0, 1]), 1, 1)
        assert len(grown) == len(ts) + 2
        assert grown.discovered_count() == 2
        assert grown.original_count() == len(d.labeled_ids)

    def test_duplicate_ids_rejected(self):
        d = small_data()
        ts = TrainingSet.from_split(d, generation=1)
        dup = int(ts.ids[0])
        with pytest.raises(OrchestrationError):
            ts.with_discovered(np.array([dup]), np.zeros((1, 2)), np.array([0]), 1, 1)


class TestBuildMaster:
    def make_report(self, d, model, n_select=4):
        rep = assign_pseudo_labels(model, d.unlabeled_x, d.unlabeled_ids,
                                   d.labeled_x, d.labeled_y, d.class_count)
        return select_samples(rep, n_select, "min")

    def test_zero_fraction_uses_selected_only(self):
        d = small_data()
        teacher = init_params((2, 8, 2), seed=1)
        ts = TrainingSet.from_split(d, generation=1)
        rep = self.make_report(d, teacher)
        cfg = quick_cfg(master_extra_fraction=0.0, master_refine_steps=3)
        m = build_master(teacher, ts, rep, cfg)
        assert not params_equal(m, teacher)

    def test_beta_one_keeps_previous_master(self):
        d = small_data()
        teacher = init_params((2, 8, 2), seed=1)
        prev = init_params((2, 8, 2), seed=2)
        ts = TrainingSet.from_split(d, generation=1)
        rep = self.make_report(d, teacher)
        cfg = quick_cfg(beta=1.0, master_refine_steps=4)
        m = build_master(teacher, ts, rep, cfg, prev_master=prev)
        assert params_equal(m, prev)

    def test_zero_steps_returns_prev_or_teacher(self):
        d = small_data()
        teacher = init_params((2, 8, 2), seed=1)
        prev = init_params((2, 8, 2), seed=2)
        ts = TrainingSet.from_split(d, generation=1)
        rep = self.make_report(d, teacher)
        cfg = quick_cfg(master_refine_steps=0)
        assert params_equal(build_master(teacher, ts, rep, cfg, prev), prev)
        assert params_equal(build_master(teacher, ts, rep, cfg), teacher)

    def test_extra_candidates_are_next_ranked(self):
        # N=10 selected, fraction 0.5 -> 5 extras: ranks 10..14 of 20
        d = small_data(n=400)
        teacher = init_params((2, 8, 2), seed=1)
        ts = TrainingSet.from_split(d, generation=1)
        rep = assign_pseudo_labels(teacher, d.unlabeled_x[:20], d.unlabeled_ids[:20],
                                   d.labeled_x, d.labeled_y, d.class_count)
        rep = select_samples(rep, 10, "min")
        # under min-selection the selected rows are ranks 0..9, so the
        # refinement pool is exactly ranks 0..14 plus the training set
        unsel = np.flatnonzero(~rep.selected)
        assert list(unsel[:5]) == [10, 11, 12, 13, 14]
        cfg = quick_cfg(master_extra_fraction=0.5, master_refine_steps=2)
        m = build_master(teacher, ts, rep, cfg)
        assert m.layer_dims == teacher.layer_dims

    def test_empty_selection_rejected(self):
        d = small_data()
        teacher = init_params((2, 8, 2), seed=1)
        ts = TrainingSet.from_split(d, generation=1)
        rep = assign_pseudo_labels(teacher, d.unlabeled_x, d.unlabeled_ids,
                                   d.labeled_x, d.labeled_y, d.class_count)
        with pytest.raises(OrchestrationError):
            build_master(teacher, ts, rep, quick_cfg())


class TestDegenerateEquivalence:
    def test_snowball_m1_k1_n0_equals_mean_teacher(self):
        d = small_data()
        cfg = quick_cfg(generations=1, iterations=1, discovery_schedule=(0,))
        a = snowball_run(d, cfg)
        b = mean_teacher_run(d, cfg)
        assert params_equal(a.models["student"], b.models["student"])
        assert params_equal(a.models["teacher"], b.models["teacher"])

    def test_lambda2_zero_equals_supervised(self):
        d = small_data()
        cfg = quick_cfg(generations=1, iterations=1, discovery_schedule=(0,),
                        lambda2_max=0.0)
        a = snowball_run(d, cfg)
        b = supervised_run(d, cfg)
        c = mean_teacher_run(d, cfg)
        assert params_equal(a.models["student"], b.models["student"])
        assert params_equal(b.models["student"], c.models["student"])

    def test_self_learning_n0_matches_supervised_weights(self):
        # one generation of N=0 self-learning is plain supervised training
        d = small_data()
        cfg = quick_cfg(generations=1, iterations=1, discovery_schedule=(0,))
        a = self_learning_run(d, cfg)
        b = supervised_run(d, cfg)
        assert params_equal(a.models["student"], b.models["student"])


class TestRunStructure:
    def test_row_grid_and_reset(self):
        d = small_data()
        cfg = quick_cfg(generations=2, iterations=2, discovery_schedule=(2, 2))
        rec = snowball_run(d, cfg)
        grid = [(r.generation, r.iteration) for r in rec.rows]
        assert grid == [(1, 1), (1, 2), (2, 1), (2, 2)]
        sizes = [r.labeled_size for r in rec.rows]
        base = len(d.labeled_ids)
        # discovery grows within a generation, resets at the next
        assert sizes == [base + 2, base + 4, base + 2, base + 4]

    def test_same_seed_identical_records(self):
        d = small_data()
        cfg = quick_cfg(discovery_schedule=(2, 2))
        a = snowball_run(d, cfg)
        b = snowball_run(d, cfg)
        assert params_equal(a.models["student"], b.models["student"])
        assert params_equal(a.models["teacher"], b.models["teacher"])
        assert params_equal(a.models["master"], b.models["master"])
        for ra, rb in zip(a.rows, b.rows):
            assert ra.test_err == rb.test_err
            assert ra.train_err == rb.train_err
            assert ra.noise_rate == rb.noise_rate

    def test_different_seed_differs(self):
        d = small_data()
        a = snowball_run(d, quick_cfg(seed=0, discovery_schedule=(2, 2)))
        b = snowball_run(d, quick_cfg(seed=1, discovery_schedule=(2, 2)))
        assert not params_equal(a.models["student"], b.models["student"])

    def test_output_model_convention(self):
        d = small_data()
        cfg = quick_cfg(generations=1, iterations=1, discovery_schedule=(2,))
        snow = snowball_run(d, cfg)
        for r in snow.rows:
            assert r.test_err == r.teacher_test_err
        sup = supervised_run(d, cfg)
        for r in sup.rows:
            assert r.test_err == r.student_test_err

    def test_self_learning_has_no_master(self):
        d = small_data()
        rec = self_learning_run(d, quick_cfg(discovery_schedule=(2, 2)))
        assert "master" not in rec.models
        assert all((r.generation, r.iteration) in rec.reports or r.noise_rate == 0.0
                   for r in rec.rows)

    def test_snowball_builds_master_and_reports(self):
        d = small_data()
        rec = snowball_run(d, quick_cfg(discovery_schedule=(2, 2)))
        assert "master" in rec.models
        assert (1, 1) in rec.reports
        assert (2, 2) in rec.reports

    def test_use_true_labels_discovery_noise_still_reported(self):
        d = small_data()
        rec = snowball_run(d, quick_cfg(discovery_schedule=(3, 3), use_true_labels=True))
        # noise is a property of the assignment, not of what was trained on
        assert all(0.0 <= r.noise_rate <= 1.0 for r in rec.rows)

    def test_unknown_algorithm(self):
        d = small_data()
        with pytest.raises(ConfigError):
            run_algorithm("co-training", d, quick_cfg())

    def test_fusion_runs(self):
        d = small_data()
        for fusion in ("average_distance", "feature_cascade", "average_sorting_score"):
            rec = snowball_run(d, quick_cfg(generations=1, iterations=3,
                                            discovery_schedule=(2, 2, 2),
                                            fusion=fusion))
            assert len(rec.rows) == 3


class TestSemiSupervisedDirection:
    def test_snowball_beats_supervised_seed0(self):
        # Regression fixture: two-moons with 4 labels, M=2, K=3, seed 0,
        # benchmark-strength guidance -> snowball strictly better than
        # training on the 4 labels alone.  Frozen after the first good run;
        # a change in outcome means the pipeline changed behaviour.
        raw = gen_two_moons(1500, 0.15, seed=0)
        d = split(raw, labels_per_class=2, test_fraction=1 / 3, seed=0)
        cfg = ExperimentConfig(generations=2, iterations=3, seed=0,
                               lambda2_max=3.0, sigma_aug=0.15,
                               balance_classes=True)
        snow = snowball_run(d, cfg)
        sup = supervised_run(d, cfg)
        assert snow.final_test_err() < sup.final_test_err()
