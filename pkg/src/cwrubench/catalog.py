"""Bearing configurations, the data manifest, and the canonical 114-signal dataset."""

from __future__ import annotations

import enum
import hashlib
import json
import logging
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path

import numpy as np

from . import dsp
from .matfile import read_mat

log = logging.getLogger(__name__)

TARGET_RATE_HZ = 12000
LOADS_HP = (1, 2, 3)
FAULT_SIZES = (7, 14, 21)
PIN_FILE = "checksums.json"


class Location(str, enum.Enum):
    FAN_END = "FanEnd"
    DRIVE_END = "DriveEnd"
    HEALTHY = "Healthy"


class FaultType(str, enum.Enum):
    INNER = "Inner"
    OUTER = "Outer"
    BALL = "Ball"
    NONE = "None"


class Accelerometer(str, enum.Enum):
    FE = "FE"
    DE = "DE"

    @property
    def location(self) -> Location:
        return Location.FAN_END if self is Accelerometer.FE else Location.DRIVE_END


# label bit order is (inner, outer, ball)
LABEL_TYPES = (FaultType.INNER, FaultType.OUTER, FaultType.BALL)
ACCELEROMETERS = (Accelerometer.FE, Accelerometer.DE)

_SHORT = {
    Location.FAN_END: "fan",
    Location.DRIVE_END: "drive",
    FaultType.INNER: "inner",
    FaultType.OUTER: "outer",
    FaultType.BALL: "ball",
}


@dataclass(frozen=True, order=True)
class FaultCondition:
    location: Location
    fault_type: FaultType
    fault_size_mils: int | None = None

    def __post_init__(self):
        object.__setattr__(self, "location", Location(self.location))
        object.__setattr__(self, "fault_type", FaultType(self.fault_type))
        healthy = self.location is Location.HEALTHY
        if healthy != (self.fault_type is FaultType.NONE) or healthy != (self.fault_size_mils is None):
            raise ValueError(f"inconsistent fault condition {self!r}")
        if not healthy and self.fault_size_mils not in FAULT_SIZES:
            raise ValueError(f"fault size must be one of {FAULT_SIZES}, got {self.fault_size_mils}")

    @property
    def is_healthy(self) -> bool:
        return self.location is Location.HEALTHY

    @property
    def column(self) -> tuple[Location, FaultType]:
        return (self.location, self.fault_type)

    @property
    def key(self) -> str:
        """Short name such as ``drive-inner-14`` or ``healthy``."""
        if self.is_healthy:
            return "healthy"
        return f"{_SHORT[self.location]}-{_SHORT[self.fault_type]}-{self.fault_size_mils:02d}"

    @classmethod
    def from_key(cls, key: str) -> "FaultCondition":
        if key == "healthy":
            return HEALTHY
        loc, ftype, size = key.split("-")
        inv = {v: k for k, v in _SHORT.items()}
        return cls(inv[loc], inv[ftype], int(size))

    def __str__(self):
        return self.key


HEALTHY = FaultCondition(Location.HEALTHY, FaultType.NONE, None)

# The six (location, type) columns in display order: fan end first, then drive end.
COLUMNS: tuple[tuple[Location, FaultType], ...] = tuple(
    (loc, ft) for loc in (Location.FAN_END, Location.DRIVE_END) for ft in (FaultType.BALL, FaultType.INNER, FaultType.OUTER)
)

FAULTY_CONDITIONS: tuple[FaultCondition, ...] = tuple(
    FaultCondition(loc, ft, size) for loc, ft in COLUMNS for size in FAULT_SIZES
)
ALL_CONDITIONS: tuple[FaultCondition, ...] = FAULTY_CONDITIONS + (HEALTHY,)


def label_for(condition: FaultCondition, accelerometer: Accelerometer) -> tuple[int, int, int]:
    """Multi-label target of a signal: positive only for a fault at the sensor's own location."""
    accelerometer = Accelerometer(accelerometer)
    if condition.is_healthy or condition.location is not accelerometer.location:
        return (0, 0, 0)
    return tuple(int(condition.fault_type is ft) for ft in LABEL_TYPES)


@dataclass(frozen=True, eq=False)
class SignalRecord:
    condition: FaultCondition
    accelerometer: Accelerometer
    load_hp: int
    samples: np.ndarray
    source_file: str
    sample_rate_hz: int = TARGET_RATE_HZ
    rpm: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "accelerometer", Accelerometer(self.accelerometer))
        if self.sample_rate_hz != TARGET_RATE_HZ:
            raise ValueError(f"stored records must be at {TARGET_RATE_HZ} Hz, got {self.sample_rate_hz}")
        self.samples.setflags(write=False)

    @property
    def label(self) -> tuple[int, int, int]:
        return label_for(self.condition, self.accelerometer)

    @property
    def record_id(self) -> str:
        return f"{self.condition.key}/{self.load_hp}hp/{self.accelerometer.value}"

    def __len__(self):
        return self.samples.size


# --------------------------------------------------------------------------- manifest


@dataclass(frozen=True)
class ManifestEntry:
    record: int
    file: str
    url: str
    condition: FaultCondition
    load_hp: int
    channels: dict
    sample_rate_hz: int
    sha256: str | None = None
    rpm_variable: str | None = None
    outer_position: str | None = None

    @classmethod
    def from_dict(cls, d: dict) -> "ManifestEntry":
        cond = FaultCondition(d["location"], d["fault_type"], d.get("fault_size_mils"))
        return cls(
            record=int(d["record"]),
            file=d["file"],
            url=d.get("url", ""),
            condition=cond,
            load_hp=int(d["load_hp"]),
            channels=dict(d["channels"]),
            sample_rate_hz=int(d["sample_rate_hz"]),
            sha256=d.get("sha256"),
            rpm_variable=d.get("rpm_variable"),
            outer_position=d.get("outer_position"),
        )

    def to_dict(self) -> dict:
        return {
            "record": self.record,
            "file": self.file,
            "url": self.url,
            "sha256": self.sha256,
            "location": self.condition.location.value,
            "fault_type": self.condition.fault_type.value,
            "fault_size_mils": self.condition.fault_size_mils,
            "load_hp": self.load_hp,
            "channels": self.channels,
            "rpm_variable": self.rpm_variable,
            "sample_rate_hz": self.sample_rate_hz,
            "outer_position": self.outer_position,
        }


@dataclass(frozen=True)
class Manifest:
    entries: tuple[ManifestEntry, ...]
    description: str = ""

    @classmethod
    def from_dict(cls, doc: dict) -> "Manifest":
        return cls(tuple(ManifestEntry.from_dict(e) for e in doc["entries"]), doc.get("description", ""))

    def to_dict(self) -> dict:
        return {"schema_version": 1, "description": self.description, "entries": [e.to_dict() for e in self.entries]}

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()

    def validate(self) -> list[str]:
        """Structural problems with the entry set (empty list when it covers the 57 configurations)."""
        problems = []
        seen = {}
        for e in self.entries:
            k = (e.condition, e.load_hp)
            if k in seen:
                problems.append(f"duplicate entry for {e.condition.key} at {e.load_hp} HP")
            seen[k] = e
            if e.load_hp not in LOADS_HP:
                problems.append(f"record {e.record}: load {e.load_hp} HP is out of scope")
            if set(e.channels) != {"DE", "FE"}:
                problems.append(f"record {e.record}: channels must name DE and FE variables")
            if e.condition.fault_type is FaultType.OUTER and e.outer_position not in ("centered@6:00", "orthogonal@3:00"):
                problems.append(f"record {e.record}: outer-race entry without a valid position")
        for cond in ALL_CONDITIONS:
            for load in LOADS_HP:
                if (cond, load) not in seen:
                    problems.append(f"missing {cond.key} at {load} HP")
        # centered @6:00 is preferred; a condition must not mix positions across loads
        for cond in FAULTY_CONDITIONS:
            if cond.fault_type is FaultType.OUTER:
                positions = {seen[(cond, l)].outer_position for l in LOADS_HP if (cond, l) in seen}
                if len(positions) > 1:
                    problems.append(f"{cond.key} mixes outer-race positions {sorted(positions)}")
        return problems


def load_manifest(path: str | Path | None = None) -> Manifest:
    """Load a manifest JSON file; with no path, the packaged CWRU manifest."""
    if path is None:
        text = resources.files("cwrubench").joinpath("data/manifest.json").read_text()
    else:
        text = Path(path).read_text()
    return Manifest.from_dict(json.loads(text))


def sha256_file(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def read_pins(raw_dir: Path) -> dict[str, str]:
    p = Path(raw_dir) / PIN_FILE
    return json.loads(p.read_text()) if p.exists() else {}


def expected_checksum(entry: ManifestEntry, pins: dict[str, str]) -> str | None:
    return entry.sha256 or pins.get(entry.file)


@dataclass
class ManifestReport:
    present: list[str] = field(default_factory=list)
    missing: list[str] = field(default_factory=list)
    corrupted: list[str] = field(default_factory=list)
    unpinned: list[str] = field(default_factory=list)  # present, but no checksum to compare against

    @property
    def ok(self) -> bool:
        return not self.missing and not self.corrupted


def verify_manifest(manifest: Manifest, raw_dir: str | Path) -> ManifestReport:
    """Check each manifest file against its checksum.  Never touches the files."""
    raw_dir = Path(raw_dir)
    if raw_dir.exists() and not raw_dir.is_dir():
        raise NotADirectoryError(raw_dir)
    pins = read_pins(raw_dir) if raw_dir.is_dir() else {}
    report = ManifestReport()
    for e in manifest.entries:
        path = raw_dir / e.file
        if not path.is_file():
            report.missing.append(e.file)
            continue
        want = expected_checksum(e, pins)
        if want is None:
            report.present.append(e.file)
            report.unpinned.append(e.file)
        elif sha256_file(path) == want:
            report.present.append(e.file)
        else:
            report.corrupted.append(e.file)
    return report


class CatalogError(RuntimeError):
    pass


class MissingFileError(CatalogError):
    pass


class ChecksumError(CatalogError):
    pass


class MissingVariableError(CatalogError):
    pass


def build_catalog(manifest: Manifest, raw_dir: str | Path) -> list[SignalRecord]:
    """Read, resample and label every signal named by ``manifest``."""
    raw_dir = Path(raw_dir)
    problems = manifest.validate()
    if problems:
        raise CatalogError("invalid manifest: " + "; ".join(problems))
    report = verify_manifest(manifest, raw_dir)
    if report.missing:
        raise MissingFileError(f"missing files in {raw_dir}: {', '.join(report.missing)}")
    if report.corrupted:
        raise ChecksumError(f"checksum mismatch: {', '.join(report.corrupted)}")
    if report.unpinned:
        log.warning("%d files have no pinned checksum and were not verified", len(report.unpinned))

    records = []
    for e in manifest.entries:
        contents = read_mat(raw_dir / e.file)
        rpm = None
        if e.rpm_variable and e.rpm_variable in contents:
            rpm = float(contents[e.rpm_variable].data[0])
        for acc in ACCELEROMETERS:
            var = e.channels[acc.value]
            if var not in contents:
                raise MissingVariableError(f"{e.file}: variable {var!r} not found (have {sorted(contents)})")
            x = contents[var].as_vector().astype(np.float64)
            if e.sample_rate_hz == 4 * TARGET_RATE_HZ:
                x = dsp.resample_4to1(x)
            elif e.sample_rate_hz != TARGET_RATE_HZ:
                raise CatalogError(f"{e.file}: unsupported sample rate {e.sample_rate_hz}")
            records.append(SignalRecord(e.condition, acc, e.load_hp, x, e.file, TARGET_RATE_HZ, rpm))
    check_catalog(records)
    return records


def check_catalog(records: list[SignalRecord]) -> None:
    """Assert the structural facts of the 114-signal dataset."""
    if len(records) != len(ALL_CONDITIONS) * len(ACCELEROMETERS) * len(LOADS_HP):
        raise CatalogError(f"expected 114 records, got {len(records)}")
    per_config: dict[FaultCondition, int] = {}
    positives: dict[tuple, int] = {}
    for r in records:
        per_config[r.condition] = per_config.get(r.condition, 0) + 1
        if sum(r.label) > 1:
            raise CatalogError(f"{r.record_id} carries more than one positive label")
        for bit, ft in zip(r.label, LABEL_TYPES):
            if bit:
                key = (r.accelerometer, ft)
                positives[key] = positives.get(key, 0) + 1
    bad = {c.key: n for c, n in per_config.items() if n != 6}
    if bad or len(per_config) != len(ALL_CONDITIONS):
        raise CatalogError(f"every configuration needs exactly 6 signals: {bad}")
    for acc in ACCELEROMETERS:
        for ft in LABEL_TYPES:
            if positives.get((acc, ft), 0) != 9:
                raise CatalogError(f"{acc.value}/{ft.value}: expected 9 positive records")


def skeleton_catalog() -> list[SignalRecord]:
    """The 114 records with empty sample arrays: enough structure for split auditing."""
    return [
        SignalRecord(c, acc, load, np.zeros(0), "structure")
        for c in ALL_CONDITIONS for load in LOADS_HP for acc in ACCELEROMETERS
    ]


def truncate_half(records: list[SignalRecord]) -> list[SignalRecord]:
    return [replace(r, samples=r.samples[: r.samples.size // 2].copy()) for r in records]


# --------------------------------------------------------------------------- synthetic data

# characteristic fault frequencies as multiples of shaft speed (6205-like geometry)
_FAULT_ORDERS = {FaultType.INNER: 5.415, FaultType.OUTER: 3.585, FaultType.BALL: 2.357}
_RESONANCE_HZ = {Location.DRIVE_END: 3100.0, Location.FAN_END: 2300.0}
_LOAD_RPM = {1: 1772.0, 2: 1750.0, 3: 1730.0}


def _impulse_train(rng, n, fs, rate_hz, resonance_hz, amplitude, modulation_hz=None):
    t = np.arange(n) / fs
    out = np.zeros(n)
    period = fs / rate_hz
    decay = np.exp(-np.arange(int(fs * 0.004)) / (fs * 0.0006))
    ring = decay * np.sin(2 * np.pi * resonance_hz * np.arange(decay.size) / fs)
    pos = rng.uniform(0, period)
    while pos < n:
        i = int(pos)
        amp = amplitude * (1 + 0.1 * rng.standard_normal())
        if modulation_hz:
            amp *= 1 + 0.6 * np.cos(2 * np.pi * modulation_hz * t[i])
        stop = min(n, i + ring.size)
        out[i:stop] += amp * ring[: stop - i]
        pos += period * (1 + 0.01 * rng.standard_normal())
    return out


def synthetic_catalog(n_samples: int = 24000, seed: int = 0) -> list[SignalRecord]:
    """A deterministic stand-in for the CWRU dataset with the same 114-record structure.

    Faulty bearings emit resonance-exciting impulse trains at their
    characteristic fault frequency; the opposite sensor picks up an attenuated
    copy.  Used by tests and ``--synthetic`` CLI runs, never by benchmarks.
    """
    fs = TARGET_RATE_HZ
    records = []
    for ci, cond in enumerate(ALL_CONDITIONS):
        for load in LOADS_HP:
            rpm = _LOAD_RPM[load]
            shaft = rpm / 60.0
            for ai, acc in enumerate(ACCELEROMETERS):
                rng = np.random.default_rng([seed, ci, load, ai])
                t = np.arange(n_samples) / fs
                x = 0.4 * rng.standard_normal(n_samples)
                x += 0.3 * np.sin(2 * np.pi * shaft * t + rng.uniform(0, 2 * np.pi))
                x += _impulse_train(rng, n_samples, fs, 7.3 * shaft, _RESONANCE_HZ[acc.location] * 0.6, 0.15)
                if not cond.is_healthy:
                    size_shift = {7: 0.95, 14: 1.0, 21: 1.05}[cond.fault_size_mils]
                    mod = shaft if cond.fault_type is FaultType.INNER else (
                        0.4 * shaft if cond.fault_type is FaultType.BALL else None
                    )
                    own = cond.location is acc.location
                    x += _impulse_train(
                        rng,
                        n_samples,
                        fs,
                        _FAULT_ORDERS[cond.fault_type] * shaft,
                        _RESONANCE_HZ[cond.location] * size_shift,
                        1.5 if own else 0.2,
                        mod,
                    )
                records.append(
                    SignalRecord(cond, acc, load, x, f"synthetic-{seed}-{ci}-{load}", TARGET_RATE_HZ, rpm)
                )
    return records
