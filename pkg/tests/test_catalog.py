import json

import numpy as np
import pytest

from cwrubench import catalog
from cwrubench.catalog import (
    ALL_CONDITIONS,
    FAULTY_CONDITIONS,
    HEALTHY,
    LABEL_TYPES,
    Accelerometer,
    CatalogError,
    ChecksumError,
    FaultCondition,
    FaultType,
    Location,
    MissingFileError,
    MissingVariableError,
    build_catalog,
    check_catalog,
    label_for,
    load_manifest,
    verify_manifest,
)

from conftest import FAKE_SAMPLES
from matwriter import mat_file


def test_nineteen_conditions():
    assert len(FAULTY_CONDITIONS) == 18
    assert len(ALL_CONDITIONS) == 19
    assert len({c.key for c in ALL_CONDITIONS}) == 19


def test_condition_keys_round_trip():
    for c in ALL_CONDITIONS:
        assert FaultCondition.from_key(c.key) == c


@pytest.mark.parametrize("args", [
    (Location.HEALTHY, FaultType.INNER, None),
    (Location.DRIVE_END, FaultType.NONE, 7),
    (Location.DRIVE_END, FaultType.BALL, 28),
    (Location.FAN_END, FaultType.OUTER, None),
])
def test_inconsistent_conditions_rejected(args):
    with pytest.raises(ValueError):
        FaultCondition(*args)


def test_labels_follow_sensor_location():
    de_inner = FaultCondition(Location.DRIVE_END, FaultType.INNER, 14)
    assert label_for(de_inner, Accelerometer.DE) == (1, 0, 0)
    assert label_for(de_inner, Accelerometer.FE) == (0, 0, 0)
    fe_ball = FaultCondition(Location.FAN_END, FaultType.BALL, 7)
    assert label_for(fe_ball, Accelerometer.FE) == (0, 0, 1)
    assert label_for(fe_ball, Accelerometer.DE) == (0, 0, 0)
    for acc in Accelerometer:
        assert label_for(HEALTHY, acc) == (0, 0, 0)


# --------------------------------------------------------------------------- manifest


def test_packaged_manifest_is_complete():
    m = load_manifest()
    assert m.validate() == []
    assert len(m.entries) == 57
    assert len({e.file for e in m.entries}) == 57


def test_manifest_record_numbers():
    by_key = {(e.condition.key, e.load_hp): e for e in load_manifest().entries}
    assert [by_key[("healthy", l)].record for l in (1, 2, 3)] == [98, 99, 100]
    assert all(by_key[("healthy", l)].sample_rate_hz == 48000 for l in (1, 2, 3))
    assert [by_key[("drive-inner-07", l)].record for l in (1, 2, 3)] == [106, 107, 108]
    assert [by_key[("fan-outer-14", l)].record for l in (1, 2, 3)] == [309, 311, 312]
    assert by_key[("fan-outer-14", 1)].outer_position == "orthogonal@3:00"
    assert by_key[("drive-outer-21", 2)].outer_position == "centered@6:00"
    assert by_key[("drive-ball-07", 1)].channels == {"DE": "X119_DE_time", "FE": "X119_FE_time"}


def test_manifest_round_trip_and_digest():
    m = load_manifest()
    again = catalog.Manifest.from_dict(json.loads(json.dumps(m.to_dict())))
    assert again == m
    assert again.digest() == m.digest()


def test_manifest_validation_names_gaps():
    doc = load_manifest().to_dict()
    doc["entries"] = doc["entries"][1:]
    problems = catalog.Manifest.from_dict(doc).validate()
    assert any("missing" in p for p in problems)


# --------------------------------------------------------------------------- ingest


def test_build_catalog_on_fixture(fake_raw):
    records = build_catalog(load_manifest(), fake_raw)
    assert len(records) == 114
    check_catalog(records)
    assert all(len(r) == FAKE_SAMPLES for r in records)  # 48 kHz records were decimated by 4
    assert all(r.sample_rate_hz == 12000 for r in records)
    assert len({r.record_id for r in records}) == 114
    assert {r.rpm for r in records} == {1750.0}


def test_positive_counts(fake_raw):
    records = build_catalog(load_manifest(), fake_raw)
    for acc in Accelerometer:
        for j, ft in enumerate(LABEL_TYPES):
            assert sum(r.label[j] for r in records if r.accelerometer is acc) == 9
    assert all(sum(r.label) <= 1 for r in records)


def test_verify_with_pinned_checksums(pinned_raw):
    raw, mpath = pinned_raw
    m = load_manifest(mpath)
    rep = verify_manifest(m, raw)
    assert rep.ok and not rep.unpinned and len(rep.present) == 57


def test_flipped_byte_is_corrupted(pinned_raw):
    raw, mpath = pinned_raw
    target = raw / "106.mat"
    data = bytearray(target.read_bytes())
    data[-1] ^= 0xFF
    target.write_bytes(bytes(data))
    rep = verify_manifest(load_manifest(mpath), raw)
    assert rep.corrupted == ["106.mat"]
    with pytest.raises(ChecksumError):
        build_catalog(load_manifest(mpath), raw)


def test_missing_file(pinned_raw):
    raw, mpath = pinned_raw
    (raw / "99.mat").unlink()
    rep = verify_manifest(load_manifest(mpath), raw)
    assert rep.missing == ["99.mat"]
    with pytest.raises(MissingFileError):
        build_catalog(load_manifest(mpath), raw)


def test_unpinned_files_reported(fake_raw):
    rep = verify_manifest(load_manifest(), fake_raw)
    assert rep.ok
    assert len(rep.unpinned) == 57


def test_missing_variable(tmp_path):
    raw = tmp_path / "raw"
    from conftest import write_fake_raw

    write_fake_raw(raw, n=512)
    (raw / "120.mat").write_bytes(mat_file({"X120_DE_time": np.zeros((512, 1))}))
    with pytest.raises(MissingVariableError, match="X120_FE_time"):
        build_catalog(load_manifest(), raw)


def test_check_catalog_rejects_missing_record(synth):
    with pytest.raises(CatalogError):
        check_catalog(synth[1:])


def test_truncate_half(synth):
    half = catalog.truncate_half(synth[:2])
    assert len(half[0]) == len(synth[0]) // 2
    np.testing.assert_array_equal(half[0].samples, synth[0].samples[: len(half[0])])


def test_synthetic_catalog_is_deterministic():
    a = catalog.synthetic_catalog(2048, 5)
    b = catalog.synthetic_catalog(2048, 5)
    check_catalog(a)
    assert all(np.array_equal(x.samples, y.samples) for x, y in zip(a, b))


def test_skeleton_has_structure_only():
    sk = catalog.skeleton_catalog()
    check_catalog(sk)
    assert all(len(r) == 0 for r in sk)


def test_records_are_read_only(synth):
    with pytest.raises(ValueError):
        synth[0].samples[0] = 1.0
