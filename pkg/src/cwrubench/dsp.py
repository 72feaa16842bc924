"""Signal transforms: resampling, overlapped segmentation, spectrum, power
cepstrum, spectrogram and pooled z-score normalization.

All functions are pure.  Transforms with a fixed input length (4096 for the
spectrum and cepstrum, 11500 for the spectrogram) check it; the generic
``*_n`` variants take arbitrary lengths and exist so that the same code path
can be compared against a naive DFT at small sizes.
"""

from __future__ import annotations

import enum
import json
import os
import struct
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import TYPE_CHECKING, Sequence

import numpy as np

if TYPE_CHECKING:
    from .catalog import SignalRecord

OVERLAP = 0.97
LOG_EPS = 1e-12

SPECTRUM_INPUT = 4096
CEPSTRUM_INPUT = 4096
SPECTROGRAM_INPUT = 11500
STFT_FRAME = 104
STFT_HOP = 50  # 104 - 54 overlap
STFT_NFFT = 452
SPECTROGRAM_CROP = (224, 224)

# anti-aliasing filter for 48 kHz -> 12 kHz
RESAMPLE_TAPS = 255
RESAMPLE_CUTOFF = 0.8 * 0.5 / 4  # 0.8 x new Nyquist, in cycles/sample at the input rate
RESAMPLE_KAISER_BETA = 8.0


class Representation(str, enum.Enum):
    TIME = "Time"
    SPECTRUM = "Spectrum"
    POWER_CEPSTRUM = "PowerCepstrum"
    SPECTROGRAM = "Spectrogram"

    @property
    def window(self) -> int:
        return _WINDOWS[self]

    @property
    def input_shape(self) -> tuple[int, ...]:
        return _SHAPES[self]


_WINDOWS = {
    Representation.TIME: 2048,
    Representation.SPECTRUM: SPECTRUM_INPUT,
    Representation.POWER_CEPSTRUM: CEPSTRUM_INPUT,
    Representation.SPECTROGRAM: SPECTROGRAM_INPUT,
}
_SHAPES = {
    Representation.TIME: (2048,),
    Representation.SPECTRUM: (SPECTRUM_INPUT // 2,),
    Representation.POWER_CEPSTRUM: (CEPSTRUM_INPUT // 4,),
    Representation.SPECTROGRAM: SPECTROGRAM_CROP,
}

# recorded in run reports so the unstated choices travel with results
METADATA = {
    "overlap": OVERLAP,
    "hop_rule": "round(window * (1 - overlap))",
    "spectrum": "one-sided DFT magnitude, bins 0..N/2-1",
    "power_cepstrum": "|DFT(ln(|DFT(x)|^2 + 1e-12))|^2, one-sided, N/4 bins",
    "spectrogram_window": "periodic Hann, 104 samples",
    "spectrogram_scale": "linear magnitude (no log)",
    "resampler": f"Kaiser windowed-sinc FIR, {RESAMPLE_TAPS} taps, beta {RESAMPLE_KAISER_BETA}, cutoff 4.8 kHz",
    "zscore": "single pooled mean and population std over the training set",
}


class SignalLengthError(ValueError):
    pass


# --------------------------------------------------------------------------- resampling


def lowpass_taps(numtaps: int = RESAMPLE_TAPS, cutoff: float = RESAMPLE_CUTOFF, beta: float = RESAMPLE_KAISER_BETA):
    """Linear-phase windowed-sinc low-pass with unit DC gain; ``cutoff`` in cycles/sample."""
    m = np.arange(numtaps) - (numtaps - 1) / 2
    h = 2 * cutoff * np.sinc(2 * cutoff * m) * np.kaiser(numtaps, beta)
    return h / h.sum()


def resample_4to1(x: np.ndarray) -> np.ndarray:
    """Anti-alias filter and keep every 4th sample (48 kHz -> 12 kHz)."""
    x = np.asarray(x, dtype=np.float64)
    h = lowpass_taps()
    if x.size < h.size:
        raise SignalLengthError(f"resample_4to1 needs at least {h.size} samples, got {x.size}")
    # 'same' mode removes the (numtaps-1)/2 group delay
    y = np.convolve(x, h, mode="same")
    return y[::4][: x.size // 4].copy()


# --------------------------------------------------------------------------- segmentation


@dataclass(frozen=True)
class SegmentationSpec:
    window_length: int
    overlap_fraction: float = OVERLAP

    def __post_init__(self):
        if self.window_length < 1:
            raise ValueError("window_length must be positive")
        if not 0 <= self.overlap_fraction < 1:
            raise ValueError("overlap_fraction must be in [0, 1)")

    @property
    def hop(self) -> int:
        return max(1, round(self.window_length * (1 - self.overlap_fraction)))

    def count(self, n: int) -> int:
        if n < self.window_length:
            return 0
        return (n - self.window_length) // self.hop + 1


def segment(x: np.ndarray, spec: SegmentationSpec) -> np.ndarray:
    """Overlapping windows as rows of a (K, W) array; the trailing remainder is dropped."""
    x = np.asarray(x)
    w = spec.window_length
    if x.size < w:
        raise SignalLengthError(f"signal of {x.size} samples is shorter than the {w}-sample window")
    views = np.lib.stride_tricks.sliding_window_view(x, w)[:: spec.hop]
    return np.ascontiguousarray(views)


# --------------------------------------------------------------------------- transforms


def _check(x, n, what):
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != n:
        raise SignalLengthError(f"{what} expects length {n}, got {x.shape[-1]}")
    return x


def spectrum_n(x: np.ndarray) -> np.ndarray:
    """One-sided DFT magnitude, bins 0..N/2-1 (Nyquist dropped), over the last axis."""
    n = x.shape[-1]
    return np.abs(np.fft.rfft(x, axis=-1)[..., : n // 2])


def power_cepstrum_n(x: np.ndarray, eps: float = LOG_EPS) -> np.ndarray:
    n = x.shape[-1]
    p = np.abs(np.fft.rfft(x, axis=-1)[..., : n // 2]) ** 2
    log_p = np.log(p + eps)
    return np.abs(np.fft.rfft(log_p, axis=-1)[..., : n // 4]) ** 2


def stft_magnitude(x: np.ndarray, frame: int, hop: int, nfft: int) -> np.ndarray:
    """|STFT| with a periodic Hann window as a (nfft//2+1, frames) matrix."""
    window = np.hanning(frame + 1)[:-1]
    frames = np.lib.stride_tricks.sliding_window_view(x, frame, axis=-1)[..., ::hop, :]
    spec = np.fft.rfft(frames * window, n=nfft, axis=-1)
    return np.abs(np.swapaxes(spec, -1, -2))


def spectrum(x: np.ndarray) -> np.ndarray:
    return spectrum_n(_check(x, SPECTRUM_INPUT, "spectrum"))


def power_cepstrum(x: np.ndarray) -> np.ndarray:
    """Power spectrum of the log power spectrum: 4096 samples in, 1024 quefrency bins out."""
    return power_cepstrum_n(_check(x, CEPSTRUM_INPUT, "power_cepstrum"))


def spectrogram_full(x: np.ndarray) -> np.ndarray:
    """Uncropped 227 x 228 magnitude spectrogram of an 11500-sample segment."""
    return stft_magnitude(_check(x, SPECTROGRAM_INPUT, "spectrogram"), STFT_FRAME, STFT_HOP, STFT_NFFT)


def spectrogram(x: np.ndarray) -> np.ndarray:
    """224 x 224 lower-left crop (lowest frequencies, earliest frames)."""
    rows, cols = SPECTROGRAM_CROP
    return spectrogram_full(x)[..., :rows, :cols]


_TRANSFORMS = {
    Representation.TIME: lambda seg: np.asarray(seg, dtype=np.float64),
    Representation.SPECTRUM: spectrum,
    Representation.POWER_CEPSTRUM: power_cepstrum,
    Representation.SPECTROGRAM: spectrogram,
}


def transform(segments: np.ndarray, representation: Representation) -> np.ndarray:
    return _TRANSFORMS[Representation(representation)](segments)


# --------------------------------------------------------------------------- normalization


@dataclass(frozen=True)
class NormStats:
    mean: float
    std: float

    def to_dict(self):
        return {"mean": self.mean, "std": self.std}


def fit_zscore(train_inputs) -> NormStats:
    """Pooled mean and population std over every element of every training input."""
    if isinstance(train_inputs, np.ndarray):
        pool = train_inputs.astype(np.float64, copy=False).ravel()
    else:
        pool = np.concatenate([np.asarray(a, dtype=np.float64).ravel() for a in train_inputs])
    if pool.size == 0:
        raise ValueError("empty training pool")
    mean = float(pool.mean())
    std = float(np.sqrt(np.mean((pool - mean) ** 2)))
    if not std > 0:
        raise ValueError("training pool has zero variance")
    return NormStats(mean, std)


def apply_zscore(inputs: np.ndarray, stats: NormStats) -> np.ndarray:
    return (np.asarray(inputs) - stats.mean) / stats.std


# --------------------------------------------------------------------------- feature sets


@dataclass(frozen=True, eq=False)
class FeatureSet:
    """Model inputs for one representation with per-input provenance.

    ``record_ids``, ``segment_index``, ``accelerometers`` and ``conditions``
    are parallel to the first axis of ``inputs`` and ``labels``.
    """

    representation: Representation
    inputs: np.ndarray
    labels: np.ndarray
    record_ids: np.ndarray
    segment_index: np.ndarray
    accelerometers: np.ndarray
    conditions: np.ndarray
    norm_stats: NormStats | None = None

    def __post_init__(self):
        n = len(self.inputs)
        for name in ("labels", "record_ids", "segment_index", "accelerometers", "conditions"):
            if len(getattr(self, name)) != n:
                raise ValueError(f"FeatureSet.{name} has {len(getattr(self, name))} entries, inputs has {n}")

    def __len__(self):
        return len(self.inputs)

    @property
    def input_shape(self) -> tuple[int, ...]:
        return tuple(self.inputs.shape[1:])

    def subset(self, mask) -> "FeatureSet":
        return replace(
            self,
            inputs=self.inputs[mask],
            labels=self.labels[mask],
            record_ids=self.record_ids[mask],
            segment_index=self.segment_index[mask],
            accelerometers=self.accelerometers[mask],
            conditions=self.conditions[mask],
        )

    def normalized(self, stats: NormStats) -> "FeatureSet":
        return replace(self, inputs=apply_zscore(self.inputs, stats).astype(np.float32), norm_stats=stats)

    @classmethod
    def concat(cls, parts: Sequence["FeatureSet"]) -> "FeatureSet":
        if not parts:
            raise ValueError("nothing to concatenate")
        rep = parts[0].representation
        if any(p.representation != rep for p in parts):
            raise ValueError("cannot mix representations")
        cat = lambda name: np.concatenate([getattr(p, name) for p in parts])  # noqa: E731
        return cls(rep, cat("inputs"), cat("labels"), cat("record_ids"), cat("segment_index"),
                   cat("accelerometers"), cat("conditions"))


def record_features(record: "SignalRecord", representation: Representation,
                    overlap: float = OVERLAP, dtype=np.float32) -> FeatureSet:
    representation = Representation(representation)
    spec = SegmentationSpec(representation.window, overlap)
    segs = segment(record.samples, spec)
    if representation is Representation.SPECTROGRAM:
        # one at a time: a full batch of 224x224 complex spectra is large
        inputs = np.stack([spectrogram(s) for s in segs]).astype(dtype)
    else:
        inputs = transform(segs, representation).astype(dtype)
    k = len(segs)
    return FeatureSet(
        representation,
        inputs,
        np.tile(np.asarray(record.label, dtype=np.uint8), (k, 1)),
        np.full(k, record.record_id, dtype=object),
        np.arange(k),
        np.full(k, record.accelerometer.value, dtype=object),
        np.full(k, record.condition.key, dtype=object),
    )


def make_features(records: Sequence["SignalRecord"], representation: Representation,
                  overlap: float = OVERLAP) -> FeatureSet:
    """Segment, transform and label every record; labels are copied from the parent record."""
    if not records:
        raise ValueError("make_features needs at least one record")
    return FeatureSet.concat([record_features(r, representation, overlap) for r in records])


# --------------------------------------------------------------------------- cache container
#
# Layout: b"CWRF" | uint32 LE header length | UTF-8 JSON header | padding to a
# multiple of 8 | little-endian float32 values in C order.

FEATURE_MAGIC = b"CWRF"


def write_feature_file(path: str | Path, fs: FeatureSet, extra: dict | None = None) -> None:
    header = {
        "format": "cwrubench-features/1",
        "representation": fs.representation.value,
        "shape": list(fs.inputs.shape),
        "dtype": "float32",
        "byte_order": "little",
        "provenance": {
            "record_ids": [str(r) for r in fs.record_ids],
            "segment_index": [int(i) for i in fs.segment_index],
            "accelerometers": [str(a) for a in fs.accelerometers],
            "conditions": [str(c) for c in fs.conditions],
        },
        "labels": fs.labels.astype(int).tolist(),
    }
    if fs.norm_stats is not None:
        header["norm_stats"] = fs.norm_stats.to_dict()
    if extra:
        header.update(extra)
    blob = json.dumps(header, separators=(",", ":")).encode()
    pad = (-(8 + len(blob))) % 8
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(f"{path.suffix}.{os.getpid()}.tmp")
    with open(tmp, "wb") as fh:
        fh.write(FEATURE_MAGIC + struct.pack("<I", len(blob) + pad) + blob + b" " * pad)
        fh.write(np.ascontiguousarray(fs.inputs, dtype="<f4").tobytes())
    tmp.replace(path)


def read_feature_file(path: str | Path) -> tuple[FeatureSet, dict]:
    raw = Path(path).read_bytes()
    if raw[:4] != FEATURE_MAGIC:
        raise ValueError(f"{path}: not a feature file")
    (hlen,) = struct.unpack_from("<I", raw, 4)
    header = json.loads(raw[8 : 8 + hlen])
    shape = tuple(header["shape"])
    inputs = np.frombuffer(raw, dtype="<f4", offset=8 + hlen, count=int(np.prod(shape))).reshape(shape)
    prov = header["provenance"]
    stats = header.get("norm_stats")
    fs = FeatureSet(
        Representation(header["representation"]),
        inputs.astype(np.float32),
        np.asarray(header["labels"], dtype=np.uint8).reshape(-1, 3),
        np.asarray(prov["record_ids"], dtype=object),
        np.asarray(prov["segment_index"]),
        np.asarray(prov["accelerometers"], dtype=object),
        np.asarray(prov["conditions"], dtype=object),
        NormStats(**stats) if stats else None,
    )
    return fs, header


@dataclass
class FeatureStore:
    """Per-(record, representation) feature cache, in memory and optionally on disk."""

    cache_dir: Path | None = None
    overlap: float = OVERLAP
    _mem: dict = field(default_factory=dict, repr=False)
    computed: int = 0  # transforms actually run (cache misses)

    def _path(self, record: "SignalRecord", rep: Representation) -> Path | None:
        if self.cache_dir is None:
            return None
        name = f"{record.record_id}_{record.source_file}".replace("/", "_")
        tag = f"{rep.value}-ov{self.overlap:g}-n{record.samples.size}"
        return Path(self.cache_dir) / tag / f"{name}.cwrf"

    def get(self, record: "SignalRecord", representation: Representation) -> FeatureSet:
        rep = Representation(representation)
        key = (record.record_id, record.samples.size, rep, record.source_file)
        if key in self._mem:
            return self._mem[key]
        path = self._path(record, rep)
        if path is not None and path.exists():
            fs, _ = read_feature_file(path)
        else:
            fs = record_features(record, rep, self.overlap)
            self.computed += 1
            if path is not None:
                write_feature_file(path, fs, {"source_file": record.source_file})
        self._mem[key] = fs
        return fs

    def features(self, records: Sequence["SignalRecord"], representation: Representation) -> FeatureSet:
        if not records:
            raise ValueError("no records")
        return FeatureSet.concat([self.get(r, representation) for r in records])
