"""Complex-sample containers, dB helpers and sample-rate bookkeeping."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import EmptyInputError, InvalidConfigError


@dataclass(frozen=True)
class IqBuffer:
    """One stream of contiguous complex baseband samples at a fixed rate.

    Immutable after construction; the sample array is marked read-only so
    buffers can be shared across parallel trials without copying.
    """

    samples: np.ndarray
    sample_rate_hz: float

    def __post_init__(self) -> None:
        arr = np.ascontiguousarray(self.samples, dtype=np.complex128)
        if arr.ndim != 1:
            raise InvalidConfigError("IqBuffer samples must be one-dimensional")
        if not np.all(np.isfinite(arr)):
            raise InvalidConfigError("IqBuffer samples must be finite (no NaN/Inf)")
        rate = float(self.sample_rate_hz)
        if not (math.isfinite(rate) and rate > 0):
            raise InvalidConfigError("sample_rate_hz must be a positive finite number")
        arr.setflags(write=False)
        object.__setattr__(self, "samples", arr)
        object.__setattr__(self, "sample_rate_hz", rate)

    def __len__(self) -> int:
        return self.samples.shape[0]

    def scaled(self, factor: float | complex) -> "IqBuffer":
        """New buffer with every sample multiplied by `factor`."""
        return IqBuffer(self.samples * factor, self.sample_rate_hz)


@dataclass(frozen=True)
class RateConfig:
    """Converter clock plus integer resampling factor of the radio front end."""

    converter_clock_hz: float
    resampling_factor: int

    def __post_init__(self) -> None:
        if not (math.isfinite(self.converter_clock_hz) and self.converter_clock_hz > 0):
            raise InvalidConfigError("converter_clock_hz must be positive")
        factor = self.resampling_factor
        if not isinstance(factor, (int, np.integer)) or factor <= 0:
            raise InvalidConfigError("resampling_factor must be a positive integer")


def derive_sample_rate(cfg: RateConfig) -> float:
    """Baseband rate produced by dividing the converter clock by the factor."""
    return cfg.converter_clock_hz / cfg.resampling_factor


def db_to_amplitude(gain_db: float) -> float:
    """Amplitude scale factor for a power gain expressed in dB."""
    if not math.isfinite(gain_db):
        raise InvalidConfigError("gain_db must be finite")
    return 10.0 ** (gain_db / 20.0)


def measure_power_db(buf: IqBuffer) -> float:
    """Mean-square sample power in dB relative to unit amplitude.

    An all-zero buffer reports -inf; serializers map that to a null field.
    """
    if len(buf) == 0:
        raise EmptyInputError("cannot measure power of an empty buffer")
    p = float(np.mean(np.abs(buf.samples) ** 2))
    if p == 0.0:
        return float("-inf")
    return 10.0 * math.log10(p)


def write_cf32(buf: IqBuffer, path: str | Path, stream_id: str) -> Path:
    """Dump interleaved little-endian float32 I/Q pairs plus a JSON sidecar.

    The sidecar lives next to the data file with a .json extension and holds
    {sample_rate_hz, num_samples, stream_id}.
    """
    path = Path(path)
    interleaved = np.empty(2 * len(buf), dtype="<f4")
    interleaved[0::2] = buf.samples.real
    interleaved[1::2] = buf.samples.imag
    interleaved.tofile(path)
    header = {
        "sample_rate_hz": buf.sample_rate_hz,
        "num_samples": len(buf),
        "stream_id": stream_id,
    }
    path.with_suffix(".json").write_text(json.dumps(header, indent=2) + "\n")
    return path


def read_cf32(path: str | Path) -> tuple[IqBuffer, str]:
    """Load a .cf32 dump written by write_cf32."""
    path = Path(path)
    header = json.loads(path.with_suffix(".json").read_text())
    raw = np.fromfile(path, dtype="<f4")
    samples = raw[0::2].astype(np.float64) + 1j * raw[1::2].astype(np.float64)
    buf = IqBuffer(samples, float(header["sample_rate_hz"]))
    if len(buf) != int(header["num_samples"]):
        raise InvalidConfigError(f"{path}: sample count does not match sidecar header")
    return buf, str(header["stream_id"])
