"""Link KPIs: RMS EVM at the fine-frequency tap, end-to-end BER, received power
and per-frame EVM statistics, plus the flat record schema they are stored in.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np

from .errors import ContractViolation, EmptyInputError, InvalidReferenceError
from .framing import FRAME_BITS, FRAME_SYMBOLS, assemble_frame
from .rxchain import RxChannelOutput
from .txchain import frame_symbols

CSV_COLUMNS = [
    "scenario",
    "mode",
    "seed",
    "channel_id",
    "tx_gain_db",
    "agc_max_gain_db",
    "interferer_gain_db",
    "n_absorbers",
    "prx_db",
    "evm_rms_pct",
    "evm_mean_pct",
    "evm_std_pct",
    "ber",
    "bits_compared",
    "frames_sent",
    "frames_detected",
    "cfo_estimate_hz",
]


def evm_rms_pct(measured: np.ndarray, reference: np.ndarray) -> float:
    """Data-aided RMS error vector magnitude in percent.

    100 * sqrt(sum|m - r|^2 / sum|r|^2) with the known transmitted symbols as
    the reference.
    """
    measured = np.asarray(measured)
    reference = np.asarray(reference)
    if measured.size == 0 or measured.size != reference.size:
        raise ContractViolation("measured and reference must have equal nonzero length")
    ref_power = float(np.sum(np.abs(reference) ** 2))
    if ref_power == 0.0:
        raise InvalidReferenceError("reference sequence has zero power")
    err = float(np.sum(np.abs(measured - reference) ** 2))
    return 100.0 * math.sqrt(err / ref_power)


def ber(tx_bits: np.ndarray, rx_bits: np.ndarray) -> tuple[float, int]:
    """Bit error rate and raw error count over two equal-length bit streams."""
    tx_bits = np.asarray(tx_bits)
    rx_bits = np.asarray(rx_bits)
    if tx_bits.size == 0 or tx_bits.size != rx_bits.size:
        raise ContractViolation("bit streams must have equal nonzero length")
    errors = int(np.sum(tx_bits != rx_bits))
    return errors / tx_bits.size, errors


def evm_series_stats(per_frame_evm) -> tuple[float, float]:
    """Arithmetic mean and population standard deviation of a per-frame EVM series."""
    values = np.asarray(list(per_frame_evm), dtype=np.float64)
    if values.size == 0:
        raise EmptyInputError("EVM series is empty")
    return float(np.mean(values)), float(np.std(values))


@dataclass
class KpiRecord:
    """One trial's KPIs for one channel, in the CSV column order.

    prx_db of -inf and missing EVM/BER (no frames detected) serialize as empty
    fields; ber * bits_compared always recovers the exact error count.
    """

    scenario: str
    mode: str
    seed: int
    channel_id: int
    tx_gain_db: float
    agc_max_gain_db: float
    interferer_gain_db: float | None
    n_absorbers: int
    prx_db: float
    evm_rms_pct: float | None
    evm_mean_pct: float | None
    evm_std_pct: float | None
    ber: float | None
    bits_compared: int
    frames_sent: int
    frames_detected: int
    cfo_estimate_hz: float

    def to_row(self) -> list[str]:
        row = []
        for f in fields(self):
            v = getattr(self, f.name)
            if v is None or (isinstance(v, float) and v == -math.inf):
                row.append("")
            else:
                row.append(repr(v) if isinstance(v, float) else str(v))
        return row

    @classmethod
    def from_row(cls, row: list[str]) -> "KpiRecord":
        def opt_f(s: str) -> float | None:
            return None if s == "" else float(s)

        return cls(
            scenario=row[0],
            mode=row[1],
            seed=int(row[2]),
            channel_id=int(row[3]),
            tx_gain_db=float(row[4]),
            agc_max_gain_db=float(row[5]),
            interferer_gain_db=opt_f(row[6]),
            n_absorbers=int(row[7]),
            prx_db=-math.inf if row[8] == "" else float(row[8]),
            evm_rms_pct=opt_f(row[9]),
            evm_mean_pct=opt_f(row[10]),
            evm_std_pct=opt_f(row[11]),
            ber=opt_f(row[12]),
            bits_compared=int(row[13]),
            frames_sent=int(row[14]),
            frames_detected=int(row[15]),
            cfo_estimate_hz=float(row[16]),
        )


def write_records_csv(records, path: str | Path) -> Path:
    path = Path(path)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(CSV_COLUMNS)
        for rec in records:
            writer.writerow(rec.to_row())
    return path


def read_records_csv(path: str | Path) -> list[KpiRecord]:
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header != CSV_COLUMNS:
            raise ContractViolation(f"{path}: unexpected record CSV header")
        return [KpiRecord.from_row(row) for row in reader]


def _frame_index_for_offset(offset: int, frames_sent: int) -> int:
    # Frames are back-to-back from the capture start and the receiver output
    # is delay-compensated, so the k-th frame sits at symbol offset 73k.
    idx = int(round(offset / FRAME_SYMBOLS))
    return min(max(idx, 0), frames_sent - 1)


def assemble_record(
    *,
    scenario_label: str,
    mode: str,
    seed: int,
    channel_id: int,
    tx_gain_db: float,
    agc_max_gain_db: float,
    interferer_gain_db: float | None,
    n_absorbers: int,
    frames_sent: int,
    rx_out: RxChannelOutput,
    prx_db: float,
) -> tuple[KpiRecord, list[float]]:
    """Aggregate one channel's receiver output into a KpiRecord.

    BER pools the bits of every detected frame against the matching
    transmitted frame; EVM statistics run over the per-frame EVM series, and
    the headline EVM pools all tap symbols. With zero detected frames the
    record still carries Prx/CFO and null KPI fields.
    """
    err_total = 0
    bits_total = 0
    per_frame_evm: list[float] = []
    err_power = 0.0
    ref_power = 0.0
    seen: set[int] = set()
    detected = 0
    for frame in rx_out.frames:
        if not frame.sync_ok:
            continue
        idx = _frame_index_for_offset(frame.frame_offset, frames_sent)
        if idx in seen:
            continue
        seen.add(idx)
        detected += 1
        tx_bits = assemble_frame(idx, channel_id).bits
        _, errs = ber(tx_bits, frame.recovered_bits)
        err_total += errs
        bits_total += FRAME_BITS
        reference = frame_symbols(idx, channel_id)
        per_frame_evm.append(evm_rms_pct(frame.symbols_after_fine_cfo, reference))
        err_power += float(np.sum(np.abs(frame.symbols_after_fine_cfo - reference) ** 2))
        ref_power += float(np.sum(np.abs(reference) ** 2))

    if detected:
        mean_evm, std_evm = evm_series_stats(per_frame_evm)
        pooled_evm = 100.0 * math.sqrt(err_power / ref_power)
        rate = err_total / bits_total
    else:
        mean_evm = std_evm = pooled_evm = None
        rate = None

    record = KpiRecord(
        scenario=scenario_label,
        mode=mode,
        seed=seed,
        channel_id=channel_id,
        tx_gain_db=tx_gain_db,
        agc_max_gain_db=agc_max_gain_db,
        interferer_gain_db=interferer_gain_db,
        n_absorbers=n_absorbers,
        prx_db=prx_db,
        evm_rms_pct=pooled_evm,
        evm_mean_pct=mean_evm,
        evm_std_pct=std_evm,
        ber=rate,
        bits_compared=bits_total,
        frames_sent=frames_sent,
        frames_detected=detected,
        cfo_estimate_hz=rx_out.coarse_cfo_hz,
    )
    return record, per_frame_evm
