import json

import numpy as np
import pytest

from baa.calibration import (BAA_FIXED, BAA_SA, BASELINE, MetricConfig, ProtocolConfig, SplitError, SplitSpec,
                             calibrate_threshold, predict_all, run_protocol, split_dataset, write_run_dir)
from baa.data_io import gen_synthetic
from baa.toytrain import TrainConfig
from oracles import brute_ods

GRID = tuple(np.round(np.arange(0.05, 1.0, 0.05), 2))
CFG = ProtocolConfig(train=TrainConfig(epochs=4, lr=1e-2, batch_size=4, crop_size=16),
                     metrics=MetricConfig(grid=GRID), tile=16, stride=12)


@pytest.fixture(scope="module")
def samples():
    return gen_synthetic(1, 12, 24)


def test_split_eight_ids():
    s = split_dataset([f"i{k}" for k in range(8)], 0.25, seed=0)
    assert (len(s.pretrain), len(s.validation), len(s.test)) == (6, 2, 0)


def test_split_four_hundred_training_ids():
    s = split_dataset([f"i{k}" for k in range(400)], 0.25, seed=3)
    assert (len(s.pretrain), len(s.validation)) == (300, 100)


def test_split_with_test_part_is_a_partition():
    ids = [f"i{k}" for k in range(60)]
    s = split_dataset(ids, 0.25, 0.25, seed=1)
    assert (len(s.test), len(s.validation), len(s.pretrain)) == (15, 11, 34)
    assert sorted(s.pretrain + s.validation + s.test) == sorted(ids)


def test_split_depends_on_seed_only():
    ids = [f"i{k}" for k in range(20)]
    assert split_dataset(ids, seed=4) == split_dataset(ids, seed=4)
    assert split_dataset(ids, seed=4) != split_dataset(ids, seed=5)


def test_split_rejects_degenerate_cases():
    with pytest.raises(SplitError):
        split_dataset(["a"], 0.25)
    with pytest.raises(SplitError):
        split_dataset(["a", "a", "b"], 0.5)
    with pytest.raises(SplitError):
        SplitSpec(["a"], ["a"])
    with pytest.raises(SplitError):
        SplitSpec([], ["a"])


def test_calibration_returns_validation_ods_argmax(samples):
    split = split_dataset([s.id for s in samples], 0.25, 0.25, seed=0)
    by_id = {s.id: s for s in samples}
    pre = [by_id[i] for i in split.pretrain]
    val = [by_id[i] for i in split.validation]
    thr, model, report, _ = calibrate_threshold(pre, val, CFG, seed=0)
    data = predict_all(model, val, CFG.tile, CFG.stride)
    ref_thr, ref_f = brute_ods(data, list(GRID), 1)
    assert thr == ref_thr
    assert report.ods_f1 == pytest.approx(ref_f, abs=1e-15)
    assert thr in GRID


@pytest.mark.parametrize("mode", [BASELINE, BAA_FIXED, BAA_SA])
def test_protocol_never_trains_on_test_ids(samples, mode):
    split = split_dataset([s.id for s in samples], 0.25, 0.25, seed=2)
    res = run_protocol(samples, split, ProtocolConfig(**{**CFG.__dict__, "mode": mode}), seed=2)
    assert res.trained_ids
    assert not set(res.trained_ids) & set(split.test)
    assert set(res.trained_ids) <= set(split.train)


def test_protocol_requires_test_part(samples):
    split = split_dataset([s.id for s in samples], 0.25, 0.0, seed=0)
    with pytest.raises(SplitError):
        run_protocol(samples, split, CFG)


def test_skip_calibration_uses_configured_threshold(samples):
    split = split_dataset([s.id for s in samples], 0.25, 0.25, seed=0)
    cfg = ProtocolConfig(**{**CFG.__dict__, "skip_calibration": True})
    res = run_protocol(samples, split, cfg)
    assert res.thr == 0.7 and res.pretrained_model is None
    assert res.metadata()["calibrated"] is False


def test_baa_fixed_records_threshold(samples):
    split = split_dataset([s.id for s in samples], 0.25, 0.25, seed=0)
    res = run_protocol(samples, split, ProtocolConfig(**{**CFG.__dict__, "mode": BAA_FIXED}))
    assert res.thr == 0.7


def test_run_dir_is_byte_identical_on_rerun(samples, tmp_path):
    split = split_dataset([s.id for s in samples], 0.25, 0.25, seed=0)
    for name in ("a", "b"):
        write_run_dir(tmp_path / name, run_protocol(samples, split, CFG, seed=1))
    names = sorted(p.name for p in (tmp_path / "a").iterdir())
    assert "pretrained_model.json" in names and "validation_eval.csv" in names
    for n in names:
        assert (tmp_path / "a" / n).read_bytes() == (tmp_path / "b" / n).read_bytes(), n
    meta = json.loads((tmp_path / "a" / "run.json").read_text())
    assert meta["mode"] == BAA_SA and meta["thr"] in GRID
