import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from confmia.dataset import (Dataset, SynthSpec, dataset_from_bytes, dataset_to_bytes,
                             generate_synthetic, load_dataset, save_dataset)
from confmia.errors import FormatError, ValidationError
from confmia.model import Architecture, TrainConfig, accuracy, train


def test_minimal_spec_counts():
    ds = generate_synthetic(SynthSpec(2, 2, 1, seed=7))
    assert ds.num_examples == 2
    assert ds.labels.tolist() == [0, 1]
    assert ds.ids.tolist() == [0, 1]


def test_generation_is_byte_deterministic():
    spec = SynthSpec(10, 8, 50, seed=1)
    assert dataset_to_bytes(generate_synthetic(spec)) == dataset_to_bytes(generate_synthetic(spec))


def test_seed_changes_data():
    a = generate_synthetic(SynthSpec(3, 4, 5, seed=1))
    b = generate_synthetic(SynthSpec(3, 4, 5, seed=2))
    assert a != b


def test_class_balance_and_center_norm():
    spec = SynthSpec(4, 6, 2000, cluster_spread=0.5, class_center_scale=5.0, seed=3)
    ds = generate_synthetic(spec)
    assert np.bincount(ds.labels).tolist() == [2000] * 4
    for c in range(4):
        center = ds.features[ds.labels == c].mean(axis=0)
        assert np.linalg.norm(center) == pytest.approx(5.0, abs=0.1)


@pytest.mark.parametrize("kwargs", [
    dict(per_class_count=0), dict(cluster_spread=0.0), dict(cluster_spread=-1.0),
    dict(class_center_scale=0.0), dict(num_classes=0), dict(dim=0),
])
def test_invalid_spec_rejected(kwargs):
    base = dict(num_classes=2, dim=2, per_class_count=1)
    base.update(kwargs)
    with pytest.raises(ValidationError):
        generate_synthetic(SynthSpec(**base))


def test_well_separated_clusters_are_learnable():
    ds = generate_synthetic(SynthSpec(3, 4, 100, cluster_spread=0.1, class_center_scale=5.0,
                                      seed=11))
    arch = Architecture(4, 3, hidden_dims=())
    model = train(ds, arch, TrainConfig(epochs=50, batch_size=32, learning_rate=0.1, seed=0))
    assert accuracy(model, ds) >= 0.99


def test_roundtrip(tmp_path):
    ds = generate_synthetic(SynthSpec(3, 5, 7, seed=9))
    path = tmp_path / "d.dset"
    save_dataset(ds, path)
    back = load_dataset(path)
    assert back == ds
    assert back.features.tobytes() == ds.features.tobytes()
    assert back.num_classes == 3


@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(allow_nan=False, allow_infinity=False, width=64),
                min_size=2, max_size=12))
def test_roundtrip_is_lossless_for_any_finite_payload(values):
    feats = np.array(values[: len(values) // 2 * 2]).reshape(-1, 2)
    ds = Dataset(feats, np.zeros(len(feats), dtype=int), 1)
    assert dataset_from_bytes(dataset_to_bytes(ds)).features.tobytes() == feats.tobytes()


def test_layout_header():
    ds = generate_synthetic(SynthSpec(2, 3, 2, seed=0))
    raw = dataset_to_bytes(ds)
    assert raw[:4] == b"DSET"
    assert int.from_bytes(raw[4:8], "little") == 1
    assert [int.from_bytes(raw[8 + 8 * k:16 + 8 * k], "little") for k in range(3)] == [4, 3, 2]
    assert len(raw) == 32 + 4 * 3 * 8 + 4 * 4


def test_truncated_file_is_format_error():
    raw = dataset_to_bytes(generate_synthetic(SynthSpec(2, 3, 2, seed=0)))
    for cut in (0, 3, 10, 30, len(raw) - 1):
        with pytest.raises(FormatError) as info:
            dataset_from_bytes(raw[:cut])
        assert "offset" in str(info.value)


def test_bad_magic_names_offset_zero():
    raw = bytearray(dataset_to_bytes(generate_synthetic(SynthSpec(2, 3, 2, seed=0))))
    raw[0:4] = b"XXXX"
    with pytest.raises(FormatError) as info:
        dataset_from_bytes(bytes(raw))
    assert info.value.offset == 0


def test_out_of_range_label_reports_offset():
    ds = generate_synthetic(SynthSpec(2, 3, 2, seed=0))
    raw = bytearray(dataset_to_bytes(ds))
    label_off = 32 + ds.num_examples * ds.dim * 8
    raw[label_off + 4 * 2: label_off + 4 * 3] = (2).to_bytes(4, "little")  # label == C
    with pytest.raises(FormatError) as info:
        dataset_from_bytes(bytes(raw))
    assert info.value.offset == label_off + 8
    assert "out of range" in str(info.value)


def test_dimension_mismatch_detected():
    raw = bytearray(dataset_to_bytes(generate_synthetic(SynthSpec(2, 3, 2, seed=0))))
    raw[16:24] = (4).to_bytes(8, "little")  # claim d=4
    with pytest.raises(FormatError, match="size mismatch"):
        dataset_from_bytes(bytes(raw))


def test_dataset_invariants_enforced():
    with pytest.raises(ValidationError):
        Dataset(np.zeros((2, 2)), np.array([0, 2]), 2)
    with pytest.raises(ValidationError):
        Dataset(np.array([[np.nan, 0.0]]), np.array([0]), 1)
    with pytest.raises(ValidationError):
        Dataset(np.zeros((3, 2)), np.array([0, 1]), 2)
