"""Bit-level frame construction: Barker-derived header plus counted text payload."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidConfigError

# Standard length-13 Barker sequence.
_BARKER13 = np.array([1, 1, 1, 1, 1, -1, -1, 1, 1, -1, 1, -1, 1], dtype=np.int8)

HEADER_BITS = 2 * len(_BARKER13)      # 26: one bit pair per chip
PAYLOAD_CHARS = 15                    # "Hello World NNN"
PAYLOAD_BITS = 8 * PAYLOAD_CHARS      # 120
FRAME_BITS = HEADER_BITS + PAYLOAD_BITS   # 146
FRAME_SYMBOLS = FRAME_BITS // 2           # 73
COUNTER_PERIOD = 99


def barker13_chips() -> np.ndarray:
    """The +-1 chip sequence used to build the frame header."""
    return _BARKER13.copy()


def build_header_bits() -> np.ndarray:
    """Header bits: each chip c becomes the equal pair (b, b) with b = (1-c)/2.

    Duplicating the bit onto both halves of a QPSK symbol puts every header
    symbol on a diagonal constellation point, which keeps correlation sync and
    quarter-turn ambiguity resolution well defined.
    """
    b = ((1 - _BARKER13) // 2).astype(np.uint8)
    bits = np.empty(HEADER_BITS, dtype=np.uint8)
    bits[0::2] = b
    bits[1::2] = b
    return bits


def payload_text(frame_index: int) -> str:
    """Payload string for one frame; the counter cycles 001..099."""
    if frame_index < 0:
        raise InvalidConfigError("frame_index must be non-negative")
    return f"Hello World {(frame_index % COUNTER_PERIOD) + 1:03d}"


def text_to_bits(text: str) -> np.ndarray:
    """8-bit ASCII, MSB first."""
    data = np.frombuffer(text.encode("ascii"), dtype=np.uint8)
    return np.unpackbits(data)


def bits_to_text(bits: np.ndarray) -> str:
    """Inverse of text_to_bits; undecodable bytes are replaced, not raised."""
    data = np.packbits(np.asarray(bits, dtype=np.uint8))
    return data.tobytes().decode("ascii", errors="replace")


def build_payload_bits(frame_index: int) -> np.ndarray:
    return text_to_bits(payload_text(frame_index))


@dataclass(frozen=True)
class FrameSpec:
    """Header and payload bit layout of one numbered frame on one channel."""

    frame_index: int
    channel_id: int
    header_bits: np.ndarray
    payload_bits: np.ndarray

    @property
    def bits(self) -> np.ndarray:
        return np.concatenate([self.header_bits, self.payload_bits])


def assemble_frame(frame_index: int, channel_id: int) -> FrameSpec:
    """Full frame = header followed by payload.

    The two channels carry the same bit content for a given index; channel_id
    is bookkeeping only.
    """
    if channel_id not in (1, 2):
        raise InvalidConfigError("channel_id must be 1 or 2")
    return FrameSpec(
        frame_index=frame_index,
        channel_id=channel_id,
        header_bits=build_header_bits(),
        payload_bits=build_payload_bits(frame_index),
    )


def frame_stream_bits(frame_indices, channel_id: int = 1) -> np.ndarray:
    """Concatenated bits of several back-to-back frames."""
    return np.concatenate(
        [assemble_frame(i, channel_id).bits for i in frame_indices]
    )
