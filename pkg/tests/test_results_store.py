import json
import os
import tempfile

import pytest

from results_store import RECORD_FIELDS, ResultsStore, series_key, write_text_atomic


def _record(scale=1.0, dofs=100):
    values = {name: scale * (i + 1) for i, name in enumerate(RECORD_FIELDS)}
    values["dofs"] = dofs
    values["elements"] = 80
    return values


@pytest.fixture
def temp_results_file():
    """Create a temporary results.json file for testing."""
    directory = tempfile.mkdtemp(prefix="surfstokes_results_")
    path = os.path.join(directory, "results.json")
    yield path
    if os.path.exists(path):
        os.unlink(path)


@pytest.fixture
def store(temp_results_file):
    return ResultsStore(temp_results_file)


def test_store_initialization(store):
    """A new store is empty and not yet loaded."""
    assert store.path
    assert store.data == {"series": {}}
    assert not store._loaded


def test_series_key():
    assert series_key("sf", 2) == "sf-k2"


def test_put_and_get(store):
    store.put("th", 2, 0, _record())
    record = store.get("th", 2, 0)
    assert record == {name: _record()[name] for name in RECORD_FIELDS}
    assert store.levels("th", 2) == [0]


def test_put_stamps_update_time(store):
    store.put("th", 2, 0, _record())
    assert "updated_at" in store.data["series"]["th-k2"]


def test_put_rejects_incomplete_record(store):
    record = _record()
    del record["l2_div"]
    with pytest.raises(ValueError, match="missing fields: l2_div"):
        store.put("th", 2, 0, record)


def test_get_missing_record(store):
    with pytest.raises(KeyError, match="No record for sf-k3 level 1"):
        store.get("sf", 3, 1)


def test_levels_are_sorted_numerically(store):
    """Level keys are strings on disk but come back as ordered integers."""
    for level in (10, 2, 0):
        store.put("sf", 2, level, _record(scale=level + 1))
    assert store.levels("sf", 2) == [0, 2, 10]
    assert [store.get("sf", 2, level)["h"] for level in store.levels("sf", 2)] == [1.0, 3.0, 11.0]
    assert store.levels("th", 2) == []


def test_persistence_across_instances(temp_results_file):
    ResultsStore(temp_results_file).put("th", 3, 1, _record(scale=0.5))
    reopened = ResultsStore(temp_results_file)
    assert reopened.get("th", 3, 1)["h"] == 0.5
    with open(temp_results_file, "r", encoding="utf-8") as f:
        assert "th-k3" in json.load(f)["series"]


def test_atomic_write_leaves_no_temp_files(store, temp_results_file):
    store.put("th", 2, 0, _record())
    store.put("th", 2, 1, _record())
    leftovers = [name for name in os.listdir(os.path.dirname(temp_results_file)) if name.startswith(".results.")]
    assert leftovers == []


def test_corrupt_file_starts_empty(temp_results_file):
    """An unreadable store is treated as empty and overwritten on the next save."""
    with open(temp_results_file, "w", encoding="utf-8") as f:
        f.write("{not json")
    store = ResultsStore(temp_results_file)
    assert store.levels("sf", 2) == []
    store.put("sf", 2, 0, _record())
    assert ResultsStore(temp_results_file).levels("sf", 2) == [0]


def test_summary_path_is_next_to_store(store, temp_results_file):
    assert store.summary_path() == os.path.join(os.path.dirname(temp_results_file), "eoc_summary.json")


def test_write_text_atomic_replaces_existing_file(tmp_path):
    path = tmp_path / "table.csv"
    path.write_text("old\n")
    write_text_atomic(str(path), "h,l2_u\n0.1,0.2\n")
    assert path.read_text() == "h,l2_u\n0.1,0.2\n"
    assert sorted(p.name for p in tmp_path.iterdir()) == ["table.csv"]


def test_write_text_atomic_keeps_old_file_on_failure(tmp_path, monkeypatch):
    """A failed rename leaves the previous contents and no temp file behind."""
    path = tmp_path / "table.csv"
    path.write_text("old\n")

    def fail(src, dst):
        raise OSError("disk full")
    monkeypatch.setattr(os, "replace", fail)
    with pytest.raises(OSError, match="disk full"):
        write_text_atomic(str(path), "new\n")
    assert path.read_text() == "old\n"
    assert sorted(p.name for p in tmp_path.iterdir()) == ["table.csv"]
