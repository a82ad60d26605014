"""MindCube packet codec: payload layout, CRC-16 integrity, COBS framing.

A packet on the wire is ``cobs_encode(version || body || crc)`` followed by
a single 0x00 delimiter.  The pre-COBS packet is exactly 33 bytes:

    version   1 byte   0x01
    body     30 bytes  little-endian, see ``SensorFrame``
    crc       2 bytes  CRC-16/CCITT-FALSE over version||body, big-endian

The body carries 29 bytes of sensor fields plus one trailing reserved byte
(transmitted as 0x00) that pads the body to 30 bytes.  See
docs/wire-format.md for a hex-dump walkthrough.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

PROTOCOL_VERSION = 0x01

# <seq u8><timestamp_ms u32><accel 3h><gyro 3h><mag 3h><joy 2h><buttons u8><encoder b><reserved u8>
_BODY = struct.Struct("<BIhhhhhhhhhhhBbB")
BODY_LEN = _BODY.size            # 30
PACKET_LEN = 1 + BODY_LEN + 2    # 33
MAX_FRAMED_LEN = PACKET_LEN + 2  # +1 COBS overhead, +1 delimiter

# raw-count scale factors
ACCEL_LSB_PER_G = 4096.0      # +/-8 g full scale
GYRO_LSB_PER_DPS = 16.4       # +/-2000 deg/s full scale
MAG_UT_PER_LSB = 0.15
JOY_FULL_SCALE = 32767.0


class WireError(Exception):
    """Base error for packet encoding/decoding."""


class InputTooLong(WireError):
    """COBS payload exceeds the single-block limit of 254 bytes."""


class MalformedFrame(WireError):
    """Frame bytes violate COBS structure or packet length."""


class CrcMismatch(WireError):
    """CRC check over version||body failed."""


class UnsupportedVersion(WireError):
    """Packet version byte is not a version this codec speaks."""


class InvalidFrame(WireError):
    """SensorFrame field values violate their declared ranges."""


@dataclass(frozen=True)
class SensorFrame:
    """One 20 Hz reading of all sixteen input channels, in raw counts.

    accel: 1 LSB = 1/4096 g; gyro: 1 LSB = 1/16.4 deg/s; mag: 1 LSB = 0.15 uT;
    joy: -32768..32767 maps to full deflection -1..+1; buttons: bits 0..3 =
    buttons 1..4; encoder_delta: ticks since the previous frame.
    """

    seq: int = 0
    timestamp_ms: int = 0
    accel: tuple[int, int, int] = (0, 0, 0)
    gyro: tuple[int, int, int] = (0, 0, 0)
    mag: tuple[int, int, int] = (0, 0, 0)
    joy: tuple[int, int] = (0, 0)
    buttons: int = 0
    encoder_delta: int = 0

    def validate(self) -> None:
        """Raise InvalidFrame if any field is outside its declared range."""
        if not 0 <= self.seq <= 0xFF:
            raise InvalidFrame(f"seq {self.seq} outside u8")
        if not 0 <= self.timestamp_ms <= 0xFFFFFFFF:
            raise InvalidFrame(f"timestamp_ms {self.timestamp_ms} outside u32")
        for name, vec in (("accel", self.accel), ("gyro", self.gyro), ("mag", self.mag)):
            if len(vec) != 3 or any(not -32768 <= v <= 32767 for v in vec):
                raise InvalidFrame(f"{name} {vec!r} outside i16 triplet")
        if len(self.joy) != 2 or any(not -32768 <= v <= 32767 for v in self.joy):
            raise InvalidFrame(f"joy {self.joy!r} outside i16 pair")
        if not 0 <= self.buttons <= 0xFF:
            raise InvalidFrame(f"buttons {self.buttons:#x} outside u8")
        if self.buttons & 0xF0:
            raise InvalidFrame(f"buttons {self.buttons:#x} has upper nibble set")
        if not -128 <= self.encoder_delta <= 127:
            raise InvalidFrame(f"encoder_delta {self.encoder_delta} outside i8")

    # scaled views

    def accel_g(self) -> tuple[float, float, float]:
        ax, ay, az = self.accel
        return (ax / ACCEL_LSB_PER_G, ay / ACCEL_LSB_PER_G, az / ACCEL_LSB_PER_G)

    def gyro_dps(self) -> tuple[float, float, float]:
        gx, gy, gz = self.gyro
        return (gx / GYRO_LSB_PER_DPS, gy / GYRO_LSB_PER_DPS, gz / GYRO_LSB_PER_DPS)

    def mag_ut(self) -> tuple[float, float, float]:
        mx, my, mz = self.mag
        return (mx * MAG_UT_PER_LSB, my * MAG_UT_PER_LSB, mz * MAG_UT_PER_LSB)

    def joy_xy(self) -> tuple[float, float]:
        return (self.joy[0] / JOY_FULL_SCALE, self.joy[1] / JOY_FULL_SCALE)

    def button_pressed(self, index: int) -> bool:
        """True if button ``index`` (1..4) is held."""
        if not 1 <= index <= 4:
            raise ValueError(f"button index {index} outside 1..4")
        return bool(self.buttons >> (index - 1) & 1)


def _make_crc_table(poly: int = 0x1021) -> tuple[int, ...]:
    table = []
    for byte in range(256):
        crc = byte << 8
        for _ in range(8):
            crc = ((crc << 1) ^ poly) if crc & 0x8000 else (crc << 1)
        table.append(crc & 0xFFFF)
    return tuple(table)


_CRC_TABLE = _make_crc_table()


def crc16(data: bytes, init: int = 0xFFFF) -> int:
    """CRC-16/CCITT-FALSE: poly 0x1021, init 0xFFFF, no reflection, no xorout."""
    crc = init
    for b in data:
        crc = ((crc << 8) & 0xFFFF) ^ _CRC_TABLE[(crc >> 8) ^ b]
    return crc


def cobs_encode(raw: bytes) -> bytes:
    """COBS-encode ``raw`` (single-block variant, input limited to 254 bytes).

    The output contains no 0x00; the stream delimiter is appended by the
    framer, not here.
    """
    if len(raw) > 254:
        raise InputTooLong(f"{len(raw)} bytes exceeds single-block COBS limit of 254")
    out = bytearray([0])
    code_idx = 0
    code = 1
    for b in raw:
        if b == 0:
            out[code_idx] = code
            code_idx = len(out)
            out.append(0)
            code = 1
        else:
            out.append(b)
            code += 1
    out[code_idx] = code
    return bytes(out)


def cobs_decode(encoded: bytes) -> bytes:
    """Invert cobs_encode.  Rejects empty input, embedded zeros, and frames
    needing multi-block (>254 byte) decoding."""
    if not encoded:
        raise MalformedFrame("empty COBS frame")
    if len(encoded) > 255:
        raise MalformedFrame(f"{len(encoded)} bytes exceeds single-block COBS frame")
    if 0 in encoded:
        raise MalformedFrame(
            f"zero byte inside COBS frame at offset {encoded.index(0)}")
    out = bytearray()
    i = 0
    first = True
    while i < len(encoded):
        code = encoded[i]
        if code == 0xFF:
            raise MalformedFrame("multi-block COBS frame rejected")
        if i + code > len(encoded):
            raise MalformedFrame(
                f"block header {code} at offset {i} points past end of frame")
        if not first:
            out.append(0)
        out.extend(encoded[i + 1:i + code])
        i += code
        first = False
    return bytes(out)


def encode_frame(frame: SensorFrame) -> bytes:
    """Serialize, checksum, COBS-encode and delimit one SensorFrame."""
    frame.validate()
    body = _BODY.pack(
        frame.seq, frame.timestamp_ms,
        *frame.accel, *frame.gyro, *frame.mag, *frame.joy,
        frame.buttons, frame.encoder_delta, 0,
    )
    packet = bytes([PROTOCOL_VERSION]) + body
    packet += crc16(packet).to_bytes(2, "big")
    return cobs_encode(packet) + b"\x00"


def decode_frame(frame_bytes: bytes) -> SensorFrame:
    """Decode one delimiter-stripped COBS frame back into a SensorFrame."""
    packet = cobs_decode(frame_bytes)
    if len(packet) != PACKET_LEN:
        raise MalformedFrame(f"packet is {len(packet)} bytes, expected {PACKET_LEN}")
    crc_sent = int.from_bytes(packet[-2:], "big")
    crc_want = crc16(packet[:-2])
    if crc_sent != crc_want:
        raise CrcMismatch(f"crc {crc_sent:#06x} != computed {crc_want:#06x}")
    if packet[0] != PROTOCOL_VERSION:
        raise UnsupportedVersion(f"version byte {packet[0]:#04x}")
    fields = _BODY.unpack(packet[1:-2])
    frame = SensorFrame(
        seq=fields[0],
        timestamp_ms=fields[1],
        accel=fields[2:5],
        gyro=fields[5:8],
        mag=fields[8:11],
        joy=fields[11:13],
        buttons=fields[13],
        encoder_delta=fields[14],
    )
    frame.validate()
    return frame


@dataclass
class FrameSplitter:
    """Incremental splitter for a 0x00-delimited byte stream.

    Feed arbitrary chunks; complete delimiter-stripped frames come back in
    order.  Empty frames (back-to-back delimiters) are skipped so a stream
    can resynchronize on any delimiter.
    """

    _buf: bytearray = field(default_factory=bytearray)

    def feed(self, chunk: bytes) -> list[bytes]:
        self._buf.extend(chunk)
        frames = []
        while True:
            pos = self._buf.find(0)
            if pos < 0:
                break
            if pos > 0:
                frames.append(bytes(self._buf[:pos]))
            del self._buf[:pos + 1]
        return frames

    def pending(self) -> int:
        return len(self._buf)
