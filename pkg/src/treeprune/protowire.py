"""Minimal Protocol Buffers wire-format codec.

Implements just enough of the encoding (varint, 64-bit, length-delimited,
32-bit groups are rejected) to read and write the model container format.
No schema compiler involved: message layers call :func:`iter_fields` and
dispatch on field number themselves.
"""

from __future__ import annotations

import struct

from .errors import ParseError

WIRE_VARINT = 0
WIRE_I64 = 1
WIRE_LEN = 2
WIRE_I32 = 5

_U64_MASK = (1 << 64) - 1


def encode_varint(value: int) -> bytes:
    """Encode a non-negative integer (< 2**64) as a base-128 varint."""
    if value < 0:
        raise ValueError("varint value must be non-negative; zigzag is not used here")
    out = bytearray()
    while True:
        byte = value & 0x7F
        value >>= 7
        if value:
            out.append(byte | 0x80)
        else:
            out.append(byte)
            return bytes(out)


def encode_signed_varint(value: int) -> bytes:
    # int64 fields store negatives as 10-byte two's-complement varints
    return encode_varint(value & _U64_MASK)


def decode_varint(data: bytes, pos: int) -> tuple[int, int]:
    """Decode a varint at ``pos``; returns (value, next position)."""
    result = 0
    shift = 0
    start = pos
    while True:
        if pos >= len(data):
            raise ParseError("truncated varint at byte %d" % start)
        byte = data[pos]
        pos += 1
        result |= (byte & 0x7F) << shift
        if not byte & 0x80:
            return result, pos
        shift += 7
        if shift >= 70:
            raise ParseError("varint longer than 10 bytes at byte %d" % start)


def to_signed(value: int) -> int:
    """Reinterpret a decoded varint as a two's-complement int64."""
    if value >= 1 << 63:
        value -= 1 << 64
    return value


def encode_tag(field_number: int, wire_type: int) -> bytes:
    return encode_varint((field_number << 3) | wire_type)


def iter_fields(data: bytes):
    """Yield (field_number, wire_type, payload) triples of one message.

    ``payload`` is an int for varints, raw 8/4 bytes for fixed-width
    fields, and a bytes slice for length-delimited fields.
    """
    pos = 0
    size = len(data)
    while pos < size:
        tag, pos = decode_varint(data, pos)
        field_number = tag >> 3
        wire_type = tag & 0x7
        if field_number == 0:
            raise ParseError("field number 0 is invalid")
        if wire_type == WIRE_VARINT:
            value, pos = decode_varint(data, pos)
        elif wire_type == WIRE_I64:
            if pos + 8 > size:
                raise ParseError("truncated 64-bit field %d" % field_number)
            value = data[pos:pos + 8]
            pos += 8
        elif wire_type == WIRE_LEN:
            length, pos = decode_varint(data, pos)
            if pos + length > size:
                raise ParseError("length-delimited field %d overruns buffer" % field_number)
            value = data[pos:pos + length]
            pos += length
        elif wire_type == WIRE_I32:
            if pos + 4 > size:
                raise ParseError("truncated 32-bit field %d" % field_number)
            value = data[pos:pos + 4]
            pos += 4
        else:
            raise ParseError("unsupported wire type %d in field %d" % (wire_type, field_number))
        yield field_number, wire_type, value


class MessageWriter:
    """Accumulates encoded fields of one message in call order."""

    def __init__(self):
        self._chunks: list[bytes] = []

    def varint(self, field: int, value: int) -> None:
        self._chunks.append(encode_tag(field, WIRE_VARINT))
        self._chunks.append(encode_signed_varint(value))

    def bytes_field(self, field: int, value: bytes) -> None:
        self._chunks.append(encode_tag(field, WIRE_LEN))
        self._chunks.append(encode_varint(len(value)))
        self._chunks.append(value)

    def string(self, field: int, value: str) -> None:
        self.bytes_field(field, value.encode("utf-8"))

    def message(self, field: int, encoded: bytes) -> None:
        self.bytes_field(field, encoded)

    def packed_varints(self, field: int, values) -> None:
        if not len(values):
            return
        body = b"".join(encode_signed_varint(int(v)) for v in values)
        self.bytes_field(field, body)

    def packed_fixed(self, field: int, raw: bytes) -> None:
        if raw:
            self.bytes_field(field, raw)

    def getvalue(self) -> bytes:
        return b"".join(self._chunks)


def expect_len(wire_type: int, field: int) -> None:
    if wire_type != WIRE_LEN:
        raise ParseError("field %d: expected length-delimited payload" % field)


def expect_varint(wire_type: int, field: int) -> None:
    if wire_type != WIRE_VARINT:
        raise ParseError("field %d: expected varint payload" % field)


def decode_packed_varints(wire_type: int, payload) -> list[int]:
    """Decode a packed (or single unpacked) repeated varint field."""
    if wire_type == WIRE_VARINT:
        return [to_signed(payload)]
    if wire_type != WIRE_LEN:
        raise ParseError("repeated varint field has wire type %d" % wire_type)
    values = []
    pos = 0
    while pos < len(payload):
        value, pos = decode_varint(payload, pos)
        values.append(to_signed(value))
    return values


def decode_packed_floats(wire_type: int, payload) -> list[float]:
    if wire_type == WIRE_I32:
        return [struct.unpack("<f", payload)[0]]
    if wire_type != WIRE_LEN:
        raise ParseError("repeated float field has wire type %d" % wire_type)
    if len(payload) % 4:
        raise ParseError("packed float payload is not a multiple of 4 bytes")
    return list(struct.unpack("<%df" % (len(payload) // 4), payload))


def decode_packed_doubles(wire_type: int, payload) -> list[float]:
    if wire_type == WIRE_I64:
        return [struct.unpack("<d", payload)[0]]
    if wire_type != WIRE_LEN:
        raise ParseError("repeated double field has wire type %d" % wire_type)
    if len(payload) % 8:
        raise ParseError("packed double payload is not a multiple of 8 bytes")
    return list(struct.unpack("<%dd" % (len(payload) // 8), payload))
