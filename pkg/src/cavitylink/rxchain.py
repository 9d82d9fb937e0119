"""QPSK receiver bank: AGC, coarse/fine frequency compensation, timing recovery,
frame synchronization, quarter-turn ambiguity resolution and data recovery.

The two streams of a capture are processed as independent links with their own
loop state; there is no joint MIMO detection. The symbol sequence after the
fine-frequency loop is the tap where EVM is measured.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import _kernels
from .corebuf import IqBuffer, db_to_amplitude, write_cf32
from .errors import ContractViolation, EmptyInputError, InvalidConfigError, TruncatedFrameError
from .framing import FRAME_SYMBOLS
from .txchain import ModemParams, header_symbols, qpsk_hard_bits, rrc_taps

AGC_WINDOW = 32
# Tracking step kept slow so the gain cannot follow noise fluctuations on the
# matched-filter timescale (which would skew BER below the AWGN reference).
AGC_STEP = 0.002
_GARDNER_TED_GAIN = 0.37  # measured S-curve slope, unit-power QPSK, rolloff 0.5


@dataclass(frozen=True)
class RxChainConfig:
    """Receiver stage constants; only the AGC cap is swept in the bench presets."""

    agc_max_gain_db: float = 60.0
    agc_target_power: float = 1.0
    coarse_fft_size: int = 4096
    fine_loop_bandwidth_norm: float = 0.01
    fine_loop_damping: float = 0.707
    timing_loop_bandwidth_norm: float = 0.005
    sync_threshold: float = 0.6

    def __post_init__(self) -> None:
        if self.agc_target_power <= 0:
            raise InvalidConfigError("agc_target_power must be positive")
        n = self.coarse_fft_size
        if n < 2 or (n & (n - 1)) != 0:
            raise InvalidConfigError("coarse_fft_size must be a power of two")
        if self.fine_loop_bandwidth_norm <= 0 or self.timing_loop_bandwidth_norm <= 0:
            raise InvalidConfigError("loop bandwidths must be positive")
        if self.fine_loop_damping <= 0:
            raise InvalidConfigError("fine_loop_damping must be positive")
        if not (0.0 < self.sync_threshold <= 1.0):
            raise InvalidConfigError("sync_threshold must be in (0, 1]")


@dataclass
class RxFrameResult:
    """One synchronized frame: offset, resolved rotation, EVM-tap symbols, bits."""

    frame_offset: int
    resolved_rotation: float
    symbols_after_fine_cfo: np.ndarray
    recovered_bits: np.ndarray
    sync_ok: bool


@dataclass
class RxChannelOutput:
    """Per-channel receiver products plus diagnostics."""

    frames: list[RxFrameResult]
    coarse_cfo_hz: float
    agc_gain_trace: np.ndarray
    symbols: np.ndarray
    samples_consumed: int


def _loop_gains(bandwidth_norm: float, damping: float, detector_gain: float) -> tuple[float, float]:
    theta = bandwidth_norm / (damping + 0.25 / damping)
    denom = 1.0 + 2.0 * damping * theta + theta * theta
    k1 = 4.0 * damping * theta / (denom * detector_gain)
    k2 = 4.0 * theta * theta / (denom * detector_gain)
    return k1, k2


def agc(buf: IqBuffer, cfg: RxChainConfig) -> IqBuffer:
    """Normalize stream power toward the target, gain capped at the configured dB."""
    y, _ = _agc_arrays(buf.samples, cfg)
    return IqBuffer(y, buf.sample_rate_hz)


def _agc_arrays(
    x: np.ndarray, cfg: RxChainConfig, head_skip: int | None = None
) -> tuple[np.ndarray, np.ndarray]:
    if x.size == 0:
        raise EmptyInputError("agc needs at least one sample")
    if head_skip is None:
        head_skip = AGC_WINDOW
    return _kernels.agc_loop(
        x,
        cfg.agc_target_power,
        db_to_amplitude(cfg.agc_max_gain_db),
        AGC_STEP,
        AGC_WINDOW,
        head_skip,
    )


def coarse_cfo_estimate(buf: IqBuffer, fft_size: int = 4096) -> float:
    """Fourth-power FFT carrier offset estimate.

    Raising QPSK to the 4th power strips the modulation and leaves a spectral
    line at four times the offset; magnitude spectra of consecutive segments
    are averaged before picking the peak. Range +-(sample_rate/8), resolution
    sample_rate / (4 * fft_size).
    """
    x = buf.samples
    if x.size < fft_size:
        raise ContractViolation(f"need at least {fft_size} samples for the coarse estimate")
    n_seg = x.size // fft_size
    acc = np.zeros(fft_size)
    for s in range(n_seg):
        seg = x[s * fft_size : (s + 1) * fft_size]
        acc += np.abs(np.fft.fft(seg**4)) ** 2
    freqs = np.fft.fftfreq(fft_size, d=1.0 / buf.sample_rate_hz)
    return float(freqs[int(np.argmax(acc))] / 4.0)


def timing_recover(
    buf: IqBuffer,
    sps: int,
    loop_bandwidth_norm: float = 0.005,
    damping: float = 0.707,
    start_offset: float | None = None,
) -> np.ndarray:
    """Gardner-detector symbol synchronizer; returns one sample per symbol.

    `start_offset` positions the first strobe (callers pass the known filter
    group delay so output index k lines up with transmitted symbol k).
    """
    k1, k2 = _loop_gains(loop_bandwidth_norm, damping, _GARDNER_TED_GAIN)
    start = float(sps if start_offset is None else start_offset)
    if start < sps / 2 + 1:
        start = sps / 2 + 1
    out, count = _kernels.gardner_loop(buf.samples, float(sps), k1, k2, start)
    return out[:count].copy()


def fine_cfo_compensate(symbols: np.ndarray, cfg: RxChainConfig) -> np.ndarray:
    """Decision-directed second-order phase loop; output is the EVM tap."""
    symbols = np.ascontiguousarray(symbols, dtype=np.complex128)
    k1, k2 = _loop_gains(cfg.fine_loop_bandwidth_norm, cfg.fine_loop_damping, 1.0)
    return _kernels.pll_loop(symbols, k1, k2)


def frame_sync(
    symbols: np.ndarray,
    hdr: np.ndarray,
    sync_threshold: float = 0.6,
    min_separation: int = FRAME_SYMBOLS,
) -> list[tuple[int, float]]:
    """Locate frame headers by normalized correlation against the header symbols.

    The metric is the power-normalized correlation |c|^2 / window_energy,
    which peaks at len(hdr) on a clean match and is amplitude-free.
    Detections require the metric to clear sync_threshold * len(hdr), to be
    the maximum of its +-min_separation/2 neighborhood, and to sit at least
    min_separation after the previous detection (a stronger candidate inside
    the guard replaces it).
    """
    if not (0.0 < sync_threshold <= 1.0):
        raise InvalidConfigError("sync_threshold must be in (0, 1]")
    symbols = np.asarray(symbols, dtype=np.complex128)
    L = len(hdr)
    if symbols.size < L:
        return []
    corr = np.abs(np.correlate(symbols, hdr, mode="valid"))
    power = np.abs(symbols) ** 2
    csum = np.concatenate([[0.0], np.cumsum(power)])
    win_energy = csum[L:] - csum[:-L]
    metric = corr * corr / np.maximum(win_energy, 1e-30)
    thr = sync_threshold * L
    guard = max(L, min_separation // 2)

    peaks: list[tuple[int, float]] = []
    for k in np.flatnonzero(metric >= thr):
        lo = max(0, k - guard)
        hi = min(metric.size, k + guard + 1)
        if k != lo + int(np.argmax(metric[lo:hi])):
            continue
        if peaks and k < peaks[-1][0] + min_separation:
            if metric[k] > peaks[-1][1]:
                peaks[-1] = (int(k), float(metric[k]))
            continue
        peaks.append((int(k), float(metric[k])))
    return peaks


def resolve_phase_ambiguity(symbols: np.ndarray, hdr: np.ndarray, offset: int) -> float:
    """Quarter-turn rotation of the received header, one of {0, pi/2, pi, 3pi/2}."""
    seg = symbols[offset : offset + len(hdr)]
    if len(seg) < len(hdr):
        raise TruncatedFrameError("not enough symbols after offset to cover the header")
    rot = np.angle(np.vdot(hdr, seg))  # angle of sum(received * conj(ideal))
    quarter = int(round(rot / (math.pi / 2.0))) % 4
    return quarter * math.pi / 2.0


def demodulate_recover(
    symbols_block: np.ndarray, rotation: float, frame_offset: int = 0
) -> RxFrameResult:
    """Derotate one frame block and hard-demap it back to bits."""
    block = np.asarray(symbols_block, dtype=np.complex128)
    if block.size < FRAME_SYMBOLS:
        raise TruncatedFrameError(
            f"frame block has {block.size} symbols, need {FRAME_SYMBOLS}"
        )
    block = block[:FRAME_SYMBOLS]
    derotated = block * np.exp(-1j * rotation)
    bits = qpsk_hard_bits(derotated)
    return RxFrameResult(
        frame_offset=int(frame_offset),
        resolved_rotation=float(rotation),
        symbols_after_fine_cfo=derotated,
        recovered_bits=bits,
        sync_ok=True,
    )


def _run_rx_channel(
    buf: IqBuffer,
    cfg: RxChainConfig,
    modem: ModemParams,
    dump_dir: Path | None = None,
    tag: str = "",
) -> RxChannelOutput:
    x = buf.samples
    fs = buf.sample_rate_hz
    sps = modem.samples_per_symbol

    # Keep the feedforward power estimate clear of the pulse-shaping ramp.
    ramp = modem.filter_span_symbols * sps // 2
    y, gains = _agc_arrays(x, cfg, head_skip=max(AGC_WINDOW, ramp))

    if y.size >= cfg.coarse_fft_size:
        f_hat = coarse_cfo_estimate(IqBuffer(y, fs), cfg.coarse_fft_size)
    else:
        f_hat = 0.0
    if f_hat != 0.0:
        z = y * np.exp(-2j * np.pi * f_hat * np.arange(y.size) / fs)
    else:
        z = y

    matched = np.convolve(z, rrc_taps(modem))
    # Unit-energy RRC cascade concentrates sps * (input power) at symbol
    # instants; rescale so the loops see near-unit symbols.
    matched /= math.sqrt(sps * cfg.agc_target_power)

    delay = modem.filter_span_symbols * sps
    syms = timing_recover(
        IqBuffer(matched, fs),
        sps,
        cfg.timing_loop_bandwidth_norm,
        start_offset=float(delay),
    )
    # The capture is exactly as long as the transmission, so everything past
    # (len - shaping tail) is filter run-out, not data; keeping it would skew
    # the unit-power normalization on short captures.
    n_data = max(0, (x.size - delay) // sps)
    syms = syms[:n_data]
    if syms.size:
        mean_p = float(np.mean(np.abs(syms) ** 2))
        if mean_p > 0.0:
            syms = syms / math.sqrt(mean_p)

    tap = fine_cfo_compensate(syms, cfg)

    hdr = header_symbols()
    frames: list[RxFrameResult] = []
    for off, _peak in frame_sync(tap, hdr, cfg.sync_threshold, FRAME_SYMBOLS):
        if off + FRAME_SYMBOLS > tap.size:
            continue
        rot = resolve_phase_ambiguity(tap, hdr, off)
        frames.append(demodulate_recover(tap[off : off + FRAME_SYMBOLS], rot, off))

    if dump_dir is not None:
        dump_dir = Path(dump_dir)
        dump_dir.mkdir(parents=True, exist_ok=True)
        write_cf32(IqBuffer(y, fs), dump_dir / f"{tag}post_agc.cf32", f"{tag}post_agc")
        write_cf32(IqBuffer(z, fs), dump_dir / f"{tag}post_coarse.cf32", f"{tag}post_coarse")
        write_cf32(
            IqBuffer(tap, modem.symbol_rate_hz),
            dump_dir / f"{tag}evm_tap.cf32",
            f"{tag}evm_tap",
        )

    return RxChannelOutput(
        frames=frames,
        coarse_cfo_hz=float(f_hat),
        agc_gain_trace=gains,
        symbols=tap,
        samples_consumed=int(x.size),
    )


def run_rx(
    bufs: tuple[IqBuffer, IqBuffer],
    cfg: RxChainConfig,
    modem: ModemParams,
    dump_dir: str | Path | None = None,
) -> tuple[RxChannelOutput, RxChannelOutput]:
    """Run the full receiver independently on both captured streams."""
    ch1, ch2 = bufs
    if len(ch1) != len(ch2):
        raise ContractViolation("the two captured streams must have equal length")
    dump = Path(dump_dir) if dump_dir is not None else None
    out1 = _run_rx_channel(ch1, cfg, modem, dump, "ch1_")
    out2 = _run_rx_channel(ch2, cfg, modem, dump, "ch2_")
    return out1, out2
