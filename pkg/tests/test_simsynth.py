"""Synthetic population generator and brokerage simulation."""

import math

import numpy as np
import pytest

from respred.discretize import ResourceClasses
from respred.pipeline import fit_all_bins, label_dataset
from respred.simsynth import (
    BrokerInputs,
    GeneratorSpec,
    SimConfig,
    compare,
    generate,
    simulate,
)
from respred.targets import aggregate_scouts

TARGETS = ("RAMCOUNT", "CPUTIME", "IOINTENSITY", "WALLTIME")


def small_inputs(n_tasks=300, seed=4):
    synth = generate(GeneratorSpec(seed=seed, n_tasks=n_tasks))
    bins = fit_all_bins(synth.targets)
    labeled = label_dataset(synth.dataset, synth.targets, bins)
    true_classes = [
        ResourceClasses(
            ram_class=int(labeled.labels["RAMCOUNT"][i]),
            cpu_class=int(labeled.labels["CPUTIME"][i]),
            io_class=int(labeled.labels["IOINTENSITY"][i]),
            wall_class=int(labeled.labels["WALLTIME"][i]),
        )
        for i in range(len(labeled))
    ]
    return BrokerInputs(
        records=labeled.records,
        true_classes=true_classes,
        true_targets=synth.targets,
        bins=bins,
        jobs_by_task=synth.jobs_by_task(),
        resource_config=GeneratorSpec().resource_config,
    ), synth


def perfect_predictor(inputs):
    lookup = {r.task_id: c for r, c in zip(inputs.records, inputs.true_classes)}
    return lambda records: [lookup[r.task_id] for r in records]


def shifted_predictor(inputs, field, delta):
    lookup = {r.task_id: c for r, c in zip(inputs.records, inputs.true_classes)}
    top = inputs.bins[field].n_classes - 1

    def predict(records):
        out = []
        for r in records:
            d = lookup[r.task_id].as_dict()
            d[field] = int(np.clip(d[field] + delta, 0, top))
            out.append(ResourceClasses.from_dict(d))
        return out

    return predict


# --- generator

def test_generate_empty():
    res = generate(GeneratorSpec(seed=0, n_tasks=0))
    assert len(res.dataset) == 0
    assert res.jobs == []


def test_generate_deterministic():
    a = generate(GeneratorSpec(seed=5, n_tasks=100))
    b = generate(GeneratorSpec(seed=5, n_tasks=100))
    assert a.dataset.records == b.dataset.records
    assert a.jobs == b.jobs
    for t in TARGETS:
        assert np.array_equal(a.targets[t], b.targets[t])


def test_generate_respects_record_invariants():
    res = generate(GeneratorSpec(seed=2, n_tasks=500))
    for rec in res.dataset.records:
        assert rec.validate() is None
    for job in res.jobs:
        assert job.validate() is None


def test_generate_heavy_tails_at_scale():
    res = generate(GeneratorSpec(seed=1, n_tasks=100_000))
    for name in ("RAMCOUNT", "CPUTIME", "WALLTIME"):
        v = res.targets[name]
        skew = float(((v - v.mean()) ** 3).mean() / v.std() ** 3)
        assert skew > 2, name
        assert v.max() / np.median(v) > 100, name
    io = res.targets["IOINTENSITY"]
    assert float(((io - io.mean()) ** 3).mean() / io.std() ** 3) > 2
    assert io.max() / np.median(io) > 100


def test_generate_every_task_has_a_scout():
    res = generate(GeneratorSpec(seed=3, n_tasks=50))
    by_task = res.jobs_by_task()
    assert set(by_task) == {r.task_id for r in res.dataset.records}
    for jobs in by_task.values():
        assert any(j.is_scout for j in jobs)


def test_generate_scout_derivations_near_truth():
    spec = GeneratorSpec(seed=6, n_tasks=80)
    res = generate(spec)
    by_task = res.jobs_by_task()
    ids = [r.task_id for r in res.dataset.records]
    ram_err = []
    for i, task_id in enumerate(ids):
        scouts = [j for j in by_task[task_id] if j.is_scout]
        agg = aggregate_scouts(scouts, spec.resource_config)
        ram_err.append(abs(np.log(agg.targets.ram_count / res.targets["RAMCOUNT"][i])))
    # 75th percentile of jittered per-scout values stays within ~2 jitter sigmas
    assert np.median(ram_err) < 3 * spec.job_jitter


def test_generate_profile_probabilities_validated():
    from respred.simsynth import CategoryProfile
    bad = (CategoryProfile("a", "b", 0.5, 1, 1, 1, 1, 1, 1, math.log(2)),)
    with pytest.raises(ValueError):
        GeneratorSpec(profiles=bad)


# --- simulation

def test_ml_mode_perfect_predictor_zero_latency():
    inputs, _ = small_inputs()
    cfg = SimConfig(seed=1, ml_latency=0.0)
    report = simulate(inputs, "ml", cfg, predictor=perfect_predictor(inputs))
    expected = inputs.true_targets["WALLTIME"] / 3600.0
    assert report.failure_retries == 0
    assert report.wasted_core_hours == 0.0
    assert np.allclose(report.turnaround_hours, expected)


def test_scout_mode_fixed_wait_delta():
    inputs, _ = small_inputs()
    # degenerate wait distribution: sigma 0 pins every wait at the mean
    cfg = SimConfig(seed=2, scout_wait_sigma=0.0, scout_wait_mean_hours=7.0, ml_latency=0.5)
    override = list(inputs.true_classes)
    scout = simulate(inputs, "scout", cfg, allocation_override=override)
    ml = simulate(inputs, "ml", cfg, allocation_override=override)
    delta = scout.mean_turnaround_hours - ml.mean_turnaround_hours
    assert delta == pytest.approx(7.0 - 0.5 / 3600.0, rel=1e-9)


def test_ml_mode_requires_predictor():
    inputs, _ = small_inputs(n_tasks=10)
    with pytest.raises(ValueError, match="predictor"):
        simulate(inputs, "ml", SimConfig())


def test_scout_mode_requires_jobs():
    inputs, _ = small_inputs(n_tasks=10)
    inputs.jobs_by_task = None
    with pytest.raises(ValueError, match="job profiles"):
        simulate(inputs, "scout", SimConfig())


def test_simulation_deterministic():
    inputs, _ = small_inputs(n_tasks=100)
    a = simulate(inputs, "scout", SimConfig(seed=3))
    b = simulate(inputs, "scout", SimConfig(seed=3))
    assert a.as_dict() == b.as_dict()
    assert np.array_equal(a.turnaround_hours, b.turnaround_hours)


def test_under_predicted_ram_fails_and_retries():
    inputs, _ = small_inputs()
    cfg = SimConfig(seed=4)
    under = simulate(inputs, "ml", cfg, predictor=shifted_predictor(inputs, "RAMCOUNT", -1))
    exact = simulate(inputs, "ml", cfg, predictor=perfect_predictor(inputs))
    assert under.failure_retries > exact.failure_retries
    assert under.wasted_core_hours > exact.wasted_core_hours
    assert under.mean_turnaround_hours > exact.mean_turnaround_hours


def test_over_predicted_ram_wastes_without_failures():
    inputs, _ = small_inputs()
    cfg = SimConfig(seed=5)
    over = simulate(inputs, "ml", cfg, predictor=shifted_predictor(inputs, "RAMCOUNT", +1))
    assert over.failure_retries == 0
    assert over.wasted_core_hours > 0


def test_under_predicted_walltime_killed_and_retried():
    inputs, _ = small_inputs()
    cfg = SimConfig(seed=6)
    under = simulate(inputs, "ml", cfg, predictor=shifted_predictor(inputs, "WALLTIME", -1))
    assert under.failure_retries > 0
    assert under.mean_turnaround_hours > simulate(
        inputs, "ml", cfg, predictor=perfect_predictor(inputs)
    ).mean_turnaround_hours


def test_perfect_predictor_is_lower_bound():
    inputs, _ = small_inputs(n_tasks=150)
    cfg = SimConfig(seed=7, ml_latency=0.2)
    best = simulate(inputs, "ml", cfg, predictor=perfect_predictor(inputs))
    rng = np.random.default_rng(8)
    for trial in range(4):
        def noisy(records, rng=rng):
            lookup = {r.task_id: c for r, c in zip(inputs.records, inputs.true_classes)}
            out = []
            for r in records:
                d = lookup[r.task_id].as_dict()
                for t in TARGETS:
                    if rng.random() < 0.3:
                        hi = inputs.bins[t].n_classes - 1
                        d[t] = int(np.clip(d[t] + rng.integers(-1, 2), 0, hi))
                out.append(ResourceClasses.from_dict(d))
            return out
        noisy_report = simulate(inputs, "ml", cfg, predictor=noisy)
        assert noisy_report.mean_turnaround_hours >= best.mean_turnaround_hours - 1e-12


def test_turnaround_at_least_execution():
    inputs, _ = small_inputs(n_tasks=100)
    report = simulate(inputs, "scout", SimConfig(seed=9))
    exec_hours = inputs.true_targets["WALLTIME"] / 3600.0
    assert (report.turnaround_hours >= exec_hours - 1e-12).all()


def test_wasted_core_hours_zero_iff_exact_classes():
    inputs, _ = small_inputs(n_tasks=60)
    cfg = SimConfig(seed=10)
    exact = simulate(inputs, "ml", cfg, predictor=perfect_predictor(inputs))
    assert exact.wasted_core_hours == 0.0
    for field, delta in (("RAMCOUNT", 1), ("WALLTIME", 1), ("RAMCOUNT", -1)):
        shifted = simulate(inputs, "ml", cfg, predictor=shifted_predictor(inputs, field, delta))
        assert shifted.wasted_core_hours > 0.0, (field, delta)


# --- compare

def test_compare_equalized_isolates_decision_latency():
    inputs, _ = small_inputs(n_tasks=200)
    cfg = SimConfig(seed=11, ml_latency=0.5)
    result = compare(inputs, cfg, equalize_allocations=True)
    expected = result.scout.mean_decision_hours - cfg.ml_latency / 3600.0
    assert result.turnaround_reduction_hours == pytest.approx(expected, rel=1e-9)
    assert result.failure_delta == 0
    assert result.waste_delta_core_hours == 0.0


def test_compare_under_predicting_ml_shows_more_failures():
    inputs, _ = small_inputs(n_tasks=150)
    cfg = SimConfig(seed=12)
    result = compare(inputs, cfg, predictor=shifted_predictor(inputs, "RAMCOUNT", -1))
    assert result.ml.failure_retries > result.scout.failure_retries
    assert result.failure_delta > 0


def test_compare_runs_same_stream_both_modes():
    inputs, _ = small_inputs(n_tasks=100)
    result = compare(inputs, SimConfig(seed=13), equalize_allocations=True)
    # identical allocations and per-task execution: only decisions differ
    per_task_delta = result.scout.turnaround_hours - result.ml.turnaround_hours
    decisions = result.scout.decision_latency_hours - result.ml.decision_latency_hours
    assert np.allclose(per_task_delta, decisions)
