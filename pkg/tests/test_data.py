import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from csfnet.data import (ClinicalRecord, FollowupCase, FollowupDataset, generate, nodule_mass, split)


@pytest.fixture(scope="module")
def cases():
    return generate(100, seed=7)


def test_same_seed_bit_identical(cases):
    again = generate(100, seed=7)
    assert again == cases
    for a, b in zip(cases, again):
        assert a.t0_volume.tobytes() == b.t0_volume.tobytes()
        assert a.t1_volume.tobytes() == b.t1_volume.tobytes()
    assert generate(100, seed=8) != cases


def test_exact_malignant_count(cases):
    assert sum(c.label for c in cases) == 40


def test_volumes_in_unit_range_and_shape(cases):
    for c in cases:
        assert c.t0_volume.shape == (1, 8, 16, 16) and c.t0_volume.dtype == np.float32
        for v in (c.t0_volume, c.t1_volume):
            assert v.min() >= 0.0 and v.max() <= 1.0


def test_malignant_growth_exceeds_benign(cases):
    ratio = lambda c: nodule_mass(c.t1_volume) / nodule_mass(c.t0_volume)
    mal = np.mean([ratio(c) for c in cases if c.label == 1])
    ben = np.mean([ratio(c) for c in cases if c.label == 0])
    assert mal > ben
    assert mal > 1.5 and 0.8 < ben < 1.3


def test_clinical_leak_skews_malignant(cases):
    mal = [c.clinical for c in cases if c.label == 1]
    ben = [c.clinical for c in cases if c.label == 0]
    assert np.mean([r.age for r in mal]) > np.mean([r.age for r in ben])
    frac = lambda rs, f, v: np.mean([getattr(r, f) == v for r in rs])
    assert frac(mal, "smoking_status", "current") > frac(ben, "smoking_status", "current")
    assert frac(mal, "screening_result", "positive") > frac(ben, "screening_result", "positive")


def test_case_depends_only_on_seed_index_label(cases):
    # per-case generators make cases independent of generation order
    from csfnet.data import _make_case
    for i in (0, 17, 99):
        assert _make_case(7, i, cases[i].label, (8, 16, 16), 0.6) == cases[i]


@pytest.mark.parametrize("kwargs", [dict(n_cases=1), dict(n_cases=10, malignant_fraction=0.0),
                                    dict(n_cases=10, malignant_fraction=1.0), dict(n_cases=10, shape=(8, 16)),
                                    dict(n_cases=10, leak=1.5)])
def test_generate_rejects_invalid(kwargs):
    with pytest.raises(ValueError):
        generate(seed=0, **kwargs)


def test_clinical_record_validation():
    with pytest.raises(ValueError):
        ClinicalRecord(44, "male", "former", "negative")
    with pytest.raises(ValueError):
        ClinicalRecord(60, "unknown", "former", "negative")
    with pytest.raises(ValueError):
        ClinicalRecord(60.5, "male", "former", "negative")
    with pytest.raises(ValueError, match="unknown"):
        ClinicalRecord.from_dict({"age": 60, "sex": "male", "smoking_status": "former",
                                  "screening_result": "negative", "bmi": 3})


def test_case_validation():
    vol = np.zeros((1, 2, 2, 2), dtype=np.float32)
    rec = ClinicalRecord(60, "male", "former", "negative")
    with pytest.raises(ValueError):
        FollowupCase("a", vol, np.zeros((1, 2, 2, 3), dtype=np.float32), rec, 0)
    with pytest.raises(ValueError):
        FollowupCase("a", vol, vol, rec, 2)


def test_split_all_train(cases):
    s = split(cases, (1.0, 0.0, 0.0))
    assert len(s["train"]) == 100 and not s["val"] and not s["test"]


def test_split_stratified_counts(cases):
    s = split(cases, (0.8, 0.1, 0.1), seed=0)
    label = {c.case_id: c.label for c in cases}
    counts = {k: (len(v), sum(label[i] for i in v)) for k, v in s.items()}
    # 40 malignant cut 32/4/4, 60 benign cut 48/6/6
    assert counts == {"train": (80, 32), "val": (10, 4), "test": (10, 4)}


def test_split_rejects_bad_fractions(cases):
    with pytest.raises(ValueError):
        split(cases, (0.5, 0.2, 0.2))
    with pytest.raises(ValueError, match="no cases"):
        split(cases[:6], (0.8, 0.1, 0.1))


@settings(max_examples=20, deadline=None)
@given(n=st.integers(20, 60), a=st.floats(0.5, 0.8), seed=st.integers(0, 1000))
def test_split_is_a_deterministic_partition(n, a, seed):
    cs = generate(n, seed=seed, shape=(2, 2, 2))
    b = (1 - a) / 2
    fractions = (a, b, 1 - a - b)
    s = split(cs, fractions, seed=seed)
    assert s == split(cs, fractions, seed=seed)
    ids = [i for v in s.values() for i in v]
    assert sorted(ids) == sorted(c.case_id for c in cs)
    assert len(set(ids)) == len(ids)


def test_dataset_counts_access(cases):
    ds = FollowupDataset(cases, split(cases))
    idx = ds.split_indices("train")[:4]
    assert ds.volumes(idx, "t1").shape == (4, 1, 8, 16, 16)
    assert ds.access_counts["t1"] == 4 and ds.access_counts["t0"] == 0
    assert ds.clinical(idx).shape == (4, 4)
    with pytest.raises(ValueError):
        ds.volumes(idx, "t2")
