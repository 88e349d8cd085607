import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from carmsim.errors import ConfigError, HeaderError, PayloadError, ValidationError
from carmsim.phantom import (
    Landmark,
    LandmarkSet,
    MU_WATER_MM,
    PhantomConfig,
    Volume,
    generate_phantom,
    load_landmarks,
    load_volume,
    save_landmarks,
    save_volume,
)


def test_deterministic_per_seed():
    va, la = generate_phantom(42)
    vb, lb = generate_phantom(42)
    assert np.array_equal(va.data, vb.data)
    assert la == lb


def test_seeds_differ():
    va, la = generate_phantom(1)
    vb, lb = generate_phantom(2)
    assert not np.array_equal(va.data, vb.data)
    assert la != lb


def test_skull_above_t1(phantom42):
    _, landmarks = phantom42
    assert landmarks.get(1).position_mm[2] > landmarks.get(10).position_mm[2]


def test_humeral_separation_in_population_band(phantom42):
    _, landmarks = phantom42
    sep = abs(landmarks.get(3).position_mm[0] - landmarks.get(2).position_mm[0])
    assert 255.0 <= sep <= 315.0


def test_volume_values_finite_nonnegative(phantom42):
    volume, _ = phantom42
    assert np.all(np.isfinite(volume.data))
    assert volume.data.min() >= 0.0
    assert volume.data.max() > 0.0


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(min_value=0, max_value=2**32 - 1))
def test_landmark_invariants_for_all_seeds(seed):
    # LandmarkSet's constructor enforces every invariant; it must not raise
    _, landmarks = generate_phantom(seed)
    assert len(landmarks.landmarks) == 14
    sep = abs(landmarks.get(3).position_mm[0] - landmarks.get(2).position_mm[0])
    assert 255.0 <= sep <= 315.0


def test_nonpositive_extent_rejected():
    with pytest.raises(ConfigError):
        PhantomConfig(extent_mm=(500.0, -1.0, 900.0))
    with pytest.raises(ConfigError):
        PhantomConfig(extent_mm=(100.0, 100.0, 100.0))  # too small for a body


def test_volume_roundtrip(tmp_path, phantom42):
    volume, _ = phantom42
    header, raw = tmp_path / "v.yaml", tmp_path / "v.raw"
    save_volume(volume, header, raw)
    loaded = load_volume(header, raw)
    assert loaded == volume


def test_landmarks_roundtrip(tmp_path, phantom42):
    _, landmarks = phantom42
    path = tmp_path / "lm.yaml"
    save_landmarks(landmarks, path)
    assert load_landmarks(path) == landmarks


def _write_hu_volume(tmp_path, hu_value, dims=(2, 2, 2)):
    header = tmp_path / "v.yaml"
    raw = tmp_path / "v.raw"
    header.write_text(
        "format: carmsim-volume\nversion: 1\n"
        f"dims: [{dims[0]}, {dims[1]}, {dims[2]}]\n"
        "spacing_mm: [1.0, 1.0, 1.0]\ndtype: float32\nbyte_order: little\n"
        "units: hu\n"
    )
    data = np.full(dims, hu_value, dtype="<f4")
    raw.write_bytes(data.tobytes())
    return header, raw


def test_hu_zero_maps_to_mu_water(tmp_path):
    header, raw = _write_hu_volume(tmp_path, 0.0)
    volume = load_volume(header, raw)
    assert np.allclose(volume.data, MU_WATER_MM)


def test_hu_minus_1000_is_air(tmp_path):
    header, raw = _write_hu_volume(tmp_path, -1000.0)
    volume = load_volume(header, raw)
    assert np.all(volume.data == 0.0)


def test_hu_below_air_clamped(tmp_path):
    header, raw = _write_hu_volume(tmp_path, -2000.0)
    volume = load_volume(header, raw)
    assert np.all(volume.data == 0.0)


def test_short_payload_rejected(tmp_path):
    header, raw = _write_hu_volume(tmp_path, 0.0)
    payload = raw.read_bytes()
    raw.write_bytes(payload[:-4])  # one element short
    with pytest.raises(PayloadError):
        load_volume(header, raw)


def test_negative_spacing_rejected(tmp_path):
    header, raw = _write_hu_volume(tmp_path, 0.0)
    text = header.read_text().replace("spacing_mm: [1.0, 1.0, 1.0]",
                                      "spacing_mm: [1.0, -1.0, 1.0]")
    header.write_text(text)
    with pytest.raises(HeaderError):
        load_volume(header, raw)


def test_negative_mu_payload_rejected(tmp_path):
    header = tmp_path / "v.yaml"
    raw = tmp_path / "v.raw"
    header.write_text(
        "format: carmsim-volume\nversion: 1\ndims: [2, 2, 2]\n"
        "spacing_mm: [1.0, 1.0, 1.0]\ndtype: float32\nbyte_order: little\n"
        "units: mu_mm\n"
    )
    raw.write_bytes(np.full((2, 2, 2), -0.5, dtype="<f4").tobytes())
    with pytest.raises(PayloadError):
        load_volume(header, raw)


def _landmark_doc(entries, extent=(500.0, 300.0, 900.0)):
    lines = [
        "format: carmsim-landmarks",
        "version: 1",
        f"extent_mm: [{extent[0]}, {extent[1]}, {extent[2]}]",
        "landmarks:",
    ]
    for index, x in entries:
        lines += [
            f"- index: {index}",
            f"  name: L{index}",
            f"  variants: [L{index}]",
            f"  position_mm: [{x}, 150.0, 450.0]",
        ]
    return "\n".join(lines) + "\n"


def test_duplicate_index_rejected(tmp_path, phantom42):
    _, landmarks = phantom42
    path = tmp_path / "lm.yaml"
    save_landmarks(landmarks, path)
    text = path.read_text().replace("index: 2", "index: 1", 1)
    path.write_text(text)
    with pytest.raises(ValidationError, match="duplicate"):
        load_landmarks(path)


def test_cardinality_error(tmp_path, phantom42):
    import yaml

    _, landmarks = phantom42
    path = tmp_path / "lm.yaml"
    save_landmarks(landmarks, path)
    doc = yaml.safe_load(path.read_text())
    doc["landmarks"] = doc["landmarks"][:13]
    path.write_text(yaml.safe_dump(doc))
    with pytest.raises(ValidationError, match="exactly 14"):
        load_landmarks(path)


def test_position_outside_extent_rejected(phantom42):
    _, landmarks = phantom42
    moved = list(landmarks.landmarks)
    bad = Landmark(
        index=1, name="Skull", variants=("Skull",), position_mm=(9999.0, 0.0, 0.0)
    )
    moved[0] = bad
    with pytest.raises(ValidationError, match="outside"):
        LandmarkSet(landmarks=tuple(moved), extent_mm=landmarks.extent_mm)


def test_paired_landmarks_straddle_midline(phantom42):
    _, landmarks = phantom42
    midline = landmarks.extent_mm[0] / 2
    for right, left in ((2, 3), (4, 5), (6, 7), (8, 9)):
        assert landmarks.get(right).position_mm[0] < midline
        assert landmarks.get(left).position_mm[0] > midline


def test_volume_invariants():
    with pytest.raises(ValidationError):
        Volume(np.ones((1, 4, 4)), (1, 1, 1))  # dim < 2
    with pytest.raises(ValidationError):
        Volume(np.ones((4, 4, 4)), (1, 0, 1))  # non-positive spacing
    with pytest.raises(ValidationError):
        Volume(np.full((4, 4, 4), -1.0), (1, 1, 1))  # negative attenuation
    with pytest.raises(ValidationError):
        Volume(np.full((4, 4, 4), np.nan), (1, 1, 1))  # non-finite


def test_resolve_names(phantom42):
    _, landmarks = phantom42
    assert landmarks.resolve("right_scapula") == 4
    assert landmarks.resolve("Calvarium") == 1
    assert landmarks.resolve("10") == 10
    assert landmarks.resolve(14) == 14
    with pytest.raises(ValidationError):
        landmarks.resolve("femur")
