import json

import numpy as np
import pytest

from cwrubench.catalog import load_manifest, sha256_file, synthetic_catalog

from matwriter import mat_file

FAKE_SAMPLES = 4096


def write_fake_raw(raw_dir, n=FAKE_SAMPLES, compress=False):
    """One MAT file per manifest entry, with CWRU variable names and seeded noise."""
    manifest = load_manifest()
    raw_dir.mkdir(parents=True, exist_ok=True)
    for e in manifest.entries:
        m = n * e.sample_rate_hz // 12000
        rng = np.random.default_rng(e.record)
        variables = {e.channels["DE"]: rng.standard_normal((m, 1)), e.channels["FE"]: rng.standard_normal((m, 1))}
        if e.rpm_variable:
            variables[e.rpm_variable] = np.array([[1750.0]])
        (raw_dir / e.file).write_bytes(mat_file(variables, compress=compress))
    return manifest


@pytest.fixture(scope="session")
def fake_raw(tmp_path_factory):
    raw = tmp_path_factory.mktemp("raw")
    write_fake_raw(raw)
    return raw


@pytest.fixture()
def pinned_raw(tmp_path):
    """A private raw directory with a fixture manifest carrying real checksums."""
    raw = tmp_path / "raw"
    manifest = write_fake_raw(raw)
    doc = manifest.to_dict()
    for e in doc["entries"]:
        e["sha256"] = sha256_file(raw / e["file"])
    mpath = tmp_path / "manifest.json"
    mpath.write_text(json.dumps(doc))
    return raw, mpath


@pytest.fixture(scope="session")
def synth():
    return synthetic_catalog(16384, 0)


# --------------------------------------------------------------------------- acceptance summary

_ACCEPTANCE = pytest.StashKey[dict]()


def pytest_configure(config):
    config.stash[_ACCEPTANCE] = {}


@pytest.fixture()
def criterion(pytestconfig):
    """Record one PASS/FAIL line for the terminal summary, then assert it."""
    results = pytestconfig.stash[_ACCEPTANCE]

    def record(number: int, title: str, ok: bool, detail: str = ""):
        results[number] = (title, bool(ok), detail)
        assert ok, f"criterion {number} ({title}): {detail}"

    return record


def pytest_terminal_summary(terminalreporter, config):
    results = config.stash.get(_ACCEPTANCE, {})
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(results):
        title, ok, detail = results[n]
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  {n:2d}. {title}" + (f"  [{detail}]" if detail else ""))
