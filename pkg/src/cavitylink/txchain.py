"""Gray-mapped QPSK, root-raised-cosine shaping and two-stream waveform build."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .corebuf import IqBuffer, db_to_amplitude
from .errors import ContractViolation, EmptyInputError, InvalidConfigError
from .framing import build_header_bits, assemble_frame, frame_stream_bits

_SQRT_HALF = 1.0 / math.sqrt(2.0)


@dataclass(frozen=True)
class ModemParams:
    """Pulse-shaping and rate parameters of the QPSK modem.

    The canonical configuration is 4 samples/symbol at 100 ksym/s, i.e. a
    400 ksps baseband stream.
    """

    samples_per_symbol: int = 4
    rolloff: float = 0.5
    # Span sized so the truncated matched cascade keeps the accumulated
    # symbol-spaced ISI of the full chain below 1e-3 worst case.
    filter_span_symbols: int = 28
    symbol_rate_hz: float = 100_000.0

    def __post_init__(self) -> None:
        if self.samples_per_symbol < 2:
            raise InvalidConfigError("samples_per_symbol must be >= 2")
        if not (0.0 < self.rolloff <= 1.0):
            raise InvalidConfigError("rolloff must be in (0, 1]")
        if self.filter_span_symbols < 2 or self.filter_span_symbols % 2 != 0:
            raise InvalidConfigError("filter_span_symbols must be an even integer >= 2")
        if not self.symbol_rate_hz > 0:
            raise InvalidConfigError("symbol_rate_hz must be positive")

    @property
    def sample_rate_hz(self) -> float:
        return self.samples_per_symbol * self.symbol_rate_hz


def qpsk_modulate(bits: np.ndarray) -> np.ndarray:
    """Map bit pairs onto the unit-energy Gray QPSK constellation.

    Pair (b1, b0): 00 -> (+1+j)/sqrt2, 01 -> (-1+j)/sqrt2,
    11 -> (-1-j)/sqrt2, 10 -> (+1-j)/sqrt2.
    """
    bits = np.asarray(bits, dtype=np.uint8)
    if bits.size % 2 != 0:
        raise ContractViolation("bit count must be even for QPSK")
    b1 = bits[0::2].astype(np.float64)
    b0 = bits[1::2].astype(np.float64)
    return ((1.0 - 2.0 * b0) + 1j * (1.0 - 2.0 * b1)) * _SQRT_HALF


def qpsk_hard_bits(symbols: np.ndarray) -> np.ndarray:
    """Hard-decision Gray demapping; exact inverse of qpsk_modulate on clean input."""
    symbols = np.asarray(symbols)
    bits = np.empty(2 * symbols.size, dtype=np.uint8)
    bits[0::2] = symbols.imag < 0
    bits[1::2] = symbols.real < 0
    return bits


def header_symbols() -> np.ndarray:
    """The 13 diagonal QPSK symbols carrying the frame header."""
    return qpsk_modulate(build_header_bits())


def frame_symbols(frame_index: int, channel_id: int = 1) -> np.ndarray:
    """Ideal transmitted symbols of one frame (reference for data-aided EVM)."""
    return qpsk_modulate(assemble_frame(frame_index, channel_id).bits)


def rrc_taps(p: ModemParams) -> np.ndarray:
    """Unit-energy, even-symmetric root-raised-cosine impulse response.

    Length is span*sps + 1 so the tap grid is symmetric about t = 0.
    """
    sps = p.samples_per_symbol
    alpha = p.rolloff
    n = p.filter_span_symbols * sps + 1
    t = (np.arange(n) - (n - 1) / 2) / sps  # in symbol periods
    h = np.empty(n, dtype=np.float64)
    singular = 1.0 / (4.0 * alpha)
    for i, ti in enumerate(t):
        if ti == 0.0:
            h[i] = 1.0 - alpha + 4.0 * alpha / math.pi
        elif math.isclose(abs(ti), singular, rel_tol=0.0, abs_tol=1e-12):
            h[i] = (alpha / math.sqrt(2.0)) * (
                (1.0 + 2.0 / math.pi) * math.sin(math.pi / (4.0 * alpha))
                + (1.0 - 2.0 / math.pi) * math.cos(math.pi / (4.0 * alpha))
            )
        else:
            num = math.sin(math.pi * ti * (1.0 - alpha)) + 4.0 * alpha * ti * math.cos(
                math.pi * ti * (1.0 + alpha)
            )
            den = math.pi * ti * (1.0 - (4.0 * alpha * ti) ** 2)
            h[i] = num / den
    return h / math.sqrt(np.sum(h * h))


def pulse_shape(symbols: np.ndarray, p: ModemParams) -> IqBuffer:
    """Upsample by sps and filter with the RRC; the full convolution tail is kept.

    Output length is len(symbols)*sps + span*sps at rate sps * symbol_rate.
    """
    symbols = np.asarray(symbols, dtype=np.complex128)
    if symbols.size == 0:
        raise EmptyInputError("pulse_shape needs at least one symbol")
    up = np.zeros(symbols.size * p.samples_per_symbol, dtype=np.complex128)
    up[:: p.samples_per_symbol] = symbols
    shaped = np.convolve(up, rrc_taps(p))
    return IqBuffer(shaped, p.sample_rate_hz)


def build_tx_waveforms(
    frame_indices, p: ModemParams, tx_gain_db: float
) -> tuple[IqBuffer, IqBuffer]:
    """Pulse-shaped, gain-scaled baseband waveforms for both transmit channels.

    Frames are back-to-back with no gap; the two channels carry identical bit
    content for the same indices, so the buffers are equal length and
    sample-aligned by construction.
    """
    indices = list(frame_indices)
    if not indices:
        raise EmptyInputError("need at least one frame")
    bits = frame_stream_bits(indices, channel_id=1)
    shaped = pulse_shape(qpsk_modulate(bits), p)
    scale = db_to_amplitude(tx_gain_db)
    samples = shaped.samples if scale == 1.0 else shaped.samples * scale
    ch1 = IqBuffer(samples, p.sample_rate_hz)
    ch2 = IqBuffer(samples, p.sample_rate_hz)
    return ch1, ch2
