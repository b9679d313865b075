import json
import os

import numpy as np
import pytest

from mtgat.seqdata import (
    DataError,
    Dataset,
    Modality,
    MultimodalSample,
    SyntheticSpec,
    Task,
    gen_synthetic,
    load_dataset,
    save_dataset,
    trigger_label,
)


def one_sample_obj():
    return {
        "task": "regression",
        "dims": {"audio": 3, "video": 3, "text": 3},
        "samples": [{
            "id": "s0",
            "split": "train",
            "label": 1.0,
            "audio": [[0.1, 0.2, 0.3], [1.0, 2.0, 3.0]],
            "video": [[0.5, -0.5, 0.25]],
            "text": [[1, 2, 3], [4, 5, 6], [7, 8, 9.5]],
        }],
    }


def write(tmp_path, obj, name="d.json"):
    p = tmp_path / name
    p.write_text(json.dumps(obj))
    return p


def test_load_one_sample(tmp_path):
    ds = load_dataset(write(tmp_path, one_sample_obj()))
    assert len(ds) == 1
    assert ds.dims == {Modality.AUDIO: 3, Modality.VIDEO: 3, Modality.TEXT: 3}
    s = ds.samples[0]
    assert s.lengths() == (2, 1, 3)
    assert s.label == 1.0
    assert ds.splits == {"s0": "train"}


def test_dimension_mismatch_names_sample_and_modality(tmp_path):
    obj = one_sample_obj()
    obj["samples"][0]["text"][1] = [4.0, 5.0]
    with pytest.raises(DataError, match=r"s0.*text.*dimension"):
        load_dataset(write(tmp_path, obj))


def test_uniform_wrong_width(tmp_path):
    obj = one_sample_obj()
    obj["samples"][0]["video"] = [[1.0, 2.0]]
    with pytest.raises(DataError, match=r"video dimension mismatch"):
        load_dataset(write(tmp_path, obj))


def test_empty_sequence(tmp_path):
    obj = one_sample_obj()
    obj["samples"][0]["audio"] = []
    with pytest.raises(DataError, match="empty"):
        load_dataset(write(tmp_path, obj))


def test_non_finite_value(tmp_path):
    p = tmp_path / "d.json"
    text = json.dumps(one_sample_obj()).replace("0.25", "NaN")
    p.write_text(text)
    with pytest.raises(DataError, match="non-finite"):
        load_dataset(p)


def test_malformed_json(tmp_path):
    p = tmp_path / "d.json"
    p.write_text("{not json")
    with pytest.raises(DataError, match="malformed"):
        load_dataset(p)


def test_multilabel_labels(tmp_path):
    obj = one_sample_obj()
    obj["task"] = {"multilabel": 4}
    obj["samples"][0]["label"] = [1, 0, 1, 0]
    ds = load_dataset(write(tmp_path, obj))
    assert ds.task == Task("multilabel", 4)
    assert ds.samples[0].label == (1, 0, 1, 0)
    obj["samples"][0]["label"] = [1, 0, 1]
    with pytest.raises(DataError, match="multilabel"):
        load_dataset(write(tmp_path, obj, "bad.json"))


def test_round_trip_small(tmp_path):
    ds = load_dataset(write(tmp_path, one_sample_obj()))
    out = tmp_path / "again.json"
    save_dataset(ds, out)
    assert load_dataset(out) == ds


def test_round_trip_synthetic_bit_exact(tmp_path):
    ds = gen_synthetic(SyntheticSpec(n_samples=600), seed=3)
    out = tmp_path / "syn.json"
    save_dataset(ds, out)
    back = load_dataset(out)
    assert back == ds
    for a, b in zip(ds.samples, back.samples):
        for m in Modality:
            assert a.sequences[m].tobytes() == b.sequences[m].tobytes()


@pytest.mark.skipif(os.geteuid() == 0, reason="root ignores file permissions")
def test_save_unwritable(tmp_path):
    d = tmp_path / "ro"
    d.mkdir()
    d.chmod(0o500)
    with pytest.raises(OSError):
        save_dataset(gen_synthetic(SyntheticSpec(n_samples=2), 0), d / "x.json")


def test_save_to_missing_directory(tmp_path):
    with pytest.raises(OSError):
        save_dataset(gen_synthetic(SyntheticSpec(n_samples=2), 0), tmp_path / "no" / "such" / "x.json")


def test_synthetic_deterministic():
    spec = SyntheticSpec(n_samples=50)
    assert gen_synthetic(spec, 11) == gen_synthetic(spec, 11)
    assert gen_synthetic(spec, 11) != gen_synthetic(spec, 12)


def test_synthetic_split_sizes():
    ds = gen_synthetic(SyntheticSpec(dim=8, min_len=8, max_len=16, n_samples=1000), seed=7)
    assert [len(ds.split(s)) for s in ("train", "val", "test")] == [600, 200, 200]


def test_synthetic_label_balance():
    ds = gen_synthetic(SyntheticSpec(n_samples=1000), seed=7)
    frac = np.mean([s.label == 2.0 for s in ds.samples])
    assert 0.40 <= frac <= 0.60


def test_synthetic_labels_match_brute_force_rederivation():
    ds = gen_synthetic(SyntheticSpec(n_samples=300, min_len=2, max_len=9), seed=5)
    u_text = np.array(ds.meta["trigger_text"])
    u_video = np.array(ds.meta["trigger_video"])
    for s in ds.samples:
        text, video = s.sequences[Modality.TEXT], s.sequences[Modality.VIDEO]
        t_t, t_v = s.meta["trigger_text"], s.meta["trigger_video"]
        assert np.array_equal(text[t_t], u_text)
        assert np.array_equal(video[t_v], u_video)
        # fractions compared as floats, independent of the integer rule
        expected = 2.0 if t_t / len(text) < t_v / len(video) else -2.0
        assert s.label == expected


def test_trigger_vectors_are_scaled_basis():
    ds = gen_synthetic(SyntheticSpec(n_samples=1), 0)
    assert ds.meta["trigger_text"] == [4.0] + [0.0] * 7
    assert ds.meta["trigger_video"] == [0.0, 4.0] + [0.0] * 6
    unit = gen_synthetic(SyntheticSpec(n_samples=1, trigger_scale=1.0), 0)
    assert unit.meta["trigger_text"][:2] == [1.0, 0.0]


@pytest.mark.parametrize("kwargs", [
    {"min_len": 1},
    {"n_samples": 0},
    {"fractions": (0.5, 0.2, 0.2)},
    {"max_len": 3, "min_len": 4},
])
def test_synthetic_invalid_settings(kwargs):
    with pytest.raises(DataError):
        gen_synthetic(SyntheticSpec(**kwargs), 0)


def test_trigger_label_tie_goes_negative():
    assert trigger_label(1, 4, 2, 8) == -2.0
    assert trigger_label(0, 4, 1, 8) == 2.0


def test_dataset_rejects_missing_split():
    s = MultimodalSample("a", {m: np.zeros((1, 2)) for m in Modality}, 0.5)
    with pytest.raises(DataError, match="split"):
        Dataset([s], {m: 2 for m in Modality}, {}, Task())


def test_dataset_rejects_missing_modality():
    s = MultimodalSample("a", {Modality.AUDIO: np.zeros((1, 2))}, 0.5)
    with pytest.raises(DataError, match="modalities"):
        Dataset([s], {m: 2 for m in Modality}, {"a": "train"}, Task())
