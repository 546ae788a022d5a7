import numpy as np
import pytest

from core import pipeline
from core.errors import ContractError, StageError
from core.metrics import aji, dice
from core.settings import PipelineConfig
from core.synthetic import BACKGROUND_RGB, planted_nuclei


@pytest.fixture(scope="module")
def planted_run(planted):
    rgb, truth = planted
    return pipeline.run(rgb), truth


def test_blank_image_has_no_instances():
    img = np.empty((120, 150, 3), dtype=np.uint8)
    img[:] = BACKGROUND_RGB
    outputs = pipeline.run(img)
    for labels in outputs.stages:
        assert labels.shape == (120, 150)
        assert not labels.any()


def test_outputs_match_input_size(planted_run, planted):
    outputs, _ = planted_run
    for labels in outputs.stages:
        assert labels.shape == planted[0].shape[:2]
        assert labels.min() >= 0


def test_filter_never_adds_instances(planted_run):
    outputs, _ = planted_run
    a, b, _ = outputs.stages
    assert pipeline.count_instances(b) <= pipeline.count_instances(a)
    assert np.all((b == 0) | (b == a))


def test_every_block_has_a_fit(planted_run, planted):
    outputs, _ = planted_run
    height, width = planted[0].shape[:2]
    assert len(outputs.block_fits) == -(-height // 50) * -(-width // 50)


def test_runs_are_deterministic(planted):
    rgb, _ = planted
    runs = [pipeline.run(rgb, workers=w) for w in (1, 1, 4)]
    for other in runs[1:]:
        for x, y in zip(runs[0].stages, other.stages):
            np.testing.assert_array_equal(x, y)


def test_image_smaller_than_a_block_is_rejected():
    with pytest.raises(ContractError):
        pipeline.run(np.zeros((30, 80, 3), dtype=np.uint8))


def test_non_rgb_input_is_rejected():
    with pytest.raises(ContractError):
        pipeline.run(np.zeros((80, 80), dtype=np.uint8))


def test_failing_stage_is_named(planted, monkeypatch):
    def boom(*args, **kwargs):
        raise RuntimeError("tile scorer exploded")

    monkeypatch.setattr(pipeline, "score_and_filter", boom)
    with pytest.raises(StageError) as info:
        pipeline.run(planted[0])
    assert info.value.stage == "fp_filter"
    assert isinstance(info.value.__cause__, RuntimeError)


def test_identity_relabel_keeps_filtered_map_before_refinement(planted):
    rgb, _ = planted
    cfg = PipelineConfig(tau_flip=1.0)
    outputs = pipeline.run(rgb, cfg)
    assert outputs.relabel_report.flipped == 0


@pytest.mark.slow
def test_planted_suite_is_segmented(planted_run):
    outputs, truth = planted_run
    a, b, c = outputs.stages
    assert dice(truth, c) > 0.75
    assert aji(truth, c).aji > 0.5
    assert aji(truth, c).aji >= aji(truth, a).aji - 0.05


@pytest.mark.slow
def test_thirty_planted_disks_reach_target_aji():
    rgb, truth = planted_nuclei(shape=(256, 256), n_nuclei=30, seed=0)
    final = pipeline.run(rgb).final
    assert aji(truth, final).aji >= 0.75


@pytest.mark.slow
def test_staining_defects_are_filtered_on_average():
    scores = []
    for seed in range(3):
        rgb, truth = planted_nuclei(shape=(200, 200), n_nuclei=50, n_defects=8, seed=seed)
        a, b, _ = pipeline.run(rgb).stages
        scores.append((aji(truth, a).aji, aji(truth, b).aji))
    mean_a, mean_b = np.mean(scores, axis=0)
    assert mean_b >= mean_a - 0.02
