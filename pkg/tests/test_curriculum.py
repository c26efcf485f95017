import json
from collections import Counter

import pytest

from pixeldoc.curriculum import paper_schedule, sample_task, stage_at


def test_full_scale_schedule():
    s = paper_schedule(1.0)
    assert tuple(st.steps for st in s.stages) == (50_000, 350_000, 55_000, 150_000)
    assert s.boundaries == (50_000, 400_000, 455_000, 605_000)
    assert tuple(st.resolution for st in s.stages) == (224, 224, 896, 896)
    assert tuple(st.batch_size for st in s.stages) == (1024, 1024, 256, 256)


def test_small_scale_rounding():
    s = paper_schedule(0.001)
    assert tuple(st.steps for st in s.stages) == (50, 350, 55, 150)
    assert paper_schedule(0.01).boundaries == (500, 4000, 4550, 6050)
    assert all(st.steps >= 1 and st.batch_size >= 1 for st in paper_schedule(1e-6).stages)


def test_task_sets_are_cumulative():
    stages = paper_schedule(1.0).stages
    assert stages[0].active_tasks == ("MAE", "MDTG")
    for a, b in zip(stages, stages[1:]):
        assert set(a.active_tasks) <= set(b.active_tasks)
    assert "TABLEQA" in stages[3].active_tasks and "BB" in stages[3].active_tasks


@pytest.mark.parametrize("step,stage", [(0, 1), (49_999, 1), (50_000, 2), (400_000, 3), (604_999, 4)])
def test_stage_at(step, stage):
    assert stage_at(paper_schedule(1.0), step).index == stage


def test_stage_at_out_of_range():
    s = paper_schedule(0.001)
    for bad in (-1, s.total_steps):
        with pytest.raises(IndexError):
            stage_at(s, bad)


def test_invalid_scale():
    for bad in (0, -1, 1.5):
        with pytest.raises(ValueError):
            paper_schedule(bad)


def test_stage1_frequencies():
    s = paper_schedule(1.0)
    c = Counter(sample_task(s, k, seed=5) for k in range(10_000))
    assert set(c) == {"MAE", "MDTG"}
    assert all(abs(v / 10_000 - 0.5) <= 0.02 for v in c.values())


def test_stage4_frequencies():
    s = paper_schedule(1.0)
    start = s.stages[3].start
    c = Counter(sample_task(s, start + k, seed=5) for k in range(10_000))
    assert len(c) == 5 and all(abs(v / 10_000 - 0.2) <= 0.02 for v in c.values())


def test_sampling_deterministic_and_seed_dependent():
    s = paper_schedule(0.01)
    a = [sample_task(s, k, 1) for k in range(200)]
    assert a == [sample_task(s, k, 1) for k in range(200)]
    assert a != [sample_task(s, k, 2) for k in range(200)]


def test_marginal_uniformity_across_seeds():
    # any single step is uniform over seeds, not just balanced within a stage
    s = paper_schedule(0.01)
    step = s.stages[3].start + 3
    c = Counter(sample_task(s, step, seed) for seed in range(5000))
    assert all(abs(v / 5000 - 0.2) <= 0.03 for v in c.values())


def test_schedule_json():
    d = json.loads(paper_schedule(0.001).to_json())
    assert d["boundaries"] == [50, 400, 455, 605] and len(d["stages"]) == 4
