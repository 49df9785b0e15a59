"""Minimal Standard MIDI File reader/writer.

Only what chart files need: channel voice messages, meta events and sysex
are decoded; everything else is a parse error. Events are kept as
``(absolute_tick, MidiEvent)`` pairs per track.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

META_TRACK_NAME = 0x03
META_END_OF_TRACK = 0x2F
META_SET_TEMPO = 0x51
META_TIME_SIGNATURE = 0x58

MAX_VLQ = 0x0FFFFFFF


class MidiParseError(ValueError):
    """Malformed SMF data; ``offset`` is the byte position of the problem."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at byte {offset})")
        self.offset = offset


@dataclass(frozen=True)
class MidiEvent:
    """A decoded event.

    ``kind`` is ``"note_on"``, ``"note_off"``, ``"meta"``, ``"sysex"`` or
    ``"other"`` (remaining channel voice messages, kept for completeness).
    """

    kind: str
    channel: int = 0
    note: int = 0
    velocity: int = 0
    meta_type: int = 0
    data: bytes = b""


@dataclass
class MidiFile:
    format: int
    division: int
    tracks: list[list[tuple[int, MidiEvent]]]


def _read_vlq(buf: bytes, pos: int) -> tuple[int, int]:
    value = 0
    for i in range(4):
        if pos >= len(buf):
            raise MidiParseError("truncated variable-length quantity", pos)
        byte = buf[pos]
        pos += 1
        value = (value << 7) | (byte & 0x7F)
        if not byte & 0x80:
            return value, pos
    raise MidiParseError("variable-length quantity longer than 4 bytes", pos - 4)


def encode_vlq(value: int) -> bytes:
    if not 0 <= value <= MAX_VLQ:
        raise ValueError(f"value {value} not representable as a MIDI variable-length quantity")
    out = [value & 0x7F]
    value >>= 7
    while value:
        out.append((value & 0x7F) | 0x80)
        value >>= 7
    return bytes(reversed(out))


_DATA_LEN = {0x80: 2, 0x90: 2, 0xA0: 2, 0xB0: 2, 0xC0: 1, 0xD0: 1, 0xE0: 2}


def _parse_track(buf: bytes, start: int, end: int) -> list[tuple[int, MidiEvent]]:
    events = []
    pos, tick, status = start, 0, None
    while pos < end:
        delta, pos = _read_vlq(buf, pos)
        tick += delta
        if pos >= end:
            raise MidiParseError("event missing after delta time", pos)
        byte = buf[pos]
        if byte == 0xFF:
            if pos + 2 > end:
                raise MidiParseError("truncated meta event", pos)
            meta_type = buf[pos + 1]
            length, data_pos = _read_vlq(buf, pos + 2)
            if data_pos + length > end:
                raise MidiParseError("meta event overruns track chunk", pos)
            events.append((tick, MidiEvent("meta", meta_type=meta_type, data=buf[data_pos:data_pos + length])))
            pos = data_pos + length
            if meta_type == META_END_OF_TRACK:
                break
            continue
        if byte in (0xF0, 0xF7):
            length, data_pos = _read_vlq(buf, pos + 1)
            if data_pos + length > end:
                raise MidiParseError("sysex overruns track chunk", pos)
            events.append((tick, MidiEvent("sysex", data=buf[data_pos:data_pos + length])))
            pos = data_pos + length
            status = None
            continue
        if byte & 0x80:
            if byte >= 0xF0:
                raise MidiParseError(f"unsupported system message 0x{byte:02X}", pos)
            status = byte
            pos += 1
        elif status is None:
            raise MidiParseError("running status without a preceding status byte", pos)
        kind_bits, channel = status & 0xF0, status & 0x0F
        n = _DATA_LEN[kind_bits]
        if pos + n > end:
            raise MidiParseError("truncated channel message", pos)
        data = buf[pos:pos + n]
        if any(b & 0x80 for b in data):
            raise MidiParseError("data byte with high bit set", pos)
        pos += n
        if kind_bits == 0x90 and data[1] > 0:
            ev = MidiEvent("note_on", channel, data[0], data[1])
        elif kind_bits in (0x80, 0x90):
            ev = MidiEvent("note_off", channel, data[0], 0)
        else:
            ev = MidiEvent("other", channel, data=bytes([status]) + bytes(data))
        events.append((tick, ev))
    return events


def read_midi(buf: bytes) -> MidiFile:
    if len(buf) < 14 or buf[:4] != b"MThd":
        raise MidiParseError("missing MThd header", 0)
    (hlen,) = struct.unpack(">I", buf[4:8])
    if hlen < 6 or 8 + hlen > len(buf):
        raise MidiParseError("bad header length", 4)
    fmt, ntracks, division = struct.unpack(">HHH", buf[8:14])
    if fmt not in (0, 1):
        raise MidiParseError(f"unsupported SMF format {fmt}", 8)
    if division & 0x8000 or division == 0:
        raise MidiParseError("SMPTE or zero division is not supported", 12)
    pos = 8 + hlen
    tracks = []
    while pos < len(buf) and len(tracks) < ntracks:
        if pos + 8 > len(buf):
            raise MidiParseError("truncated chunk header", pos)
        cid = buf[pos:pos + 4]
        (clen,) = struct.unpack(">I", buf[pos + 4:pos + 8])
        body = pos + 8
        if body + clen > len(buf):
            raise MidiParseError(f"chunk {cid!r} overruns file", pos)
        if cid == b"MTrk":
            tracks.append(_parse_track(buf, body, body + clen))
        pos = body + clen
    if len(tracks) < ntracks:
        raise MidiParseError(f"header declares {ntracks} tracks, found {len(tracks)}", pos)
    return MidiFile(fmt, division, tracks)


def _encode_event(ev: MidiEvent) -> bytes:
    if ev.kind == "note_on":
        return bytes([0x90 | ev.channel, ev.note, ev.velocity])
    if ev.kind == "note_off":
        return bytes([0x80 | ev.channel, ev.note, 0])
    if ev.kind == "meta":
        return bytes([0xFF, ev.meta_type]) + encode_vlq(len(ev.data)) + ev.data
    if ev.kind == "sysex":
        return b"\xF0" + encode_vlq(len(ev.data)) + ev.data
    return ev.data


def write_midi(mf: MidiFile) -> bytes:
    """Serialize without running status so the output is canonical.

    Events within a track must already be in emission order; an
    end-of-track meta event is appended if missing.
    """
    out = [struct.pack(">4sIHHH", b"MThd", 6, mf.format, len(mf.tracks), mf.division)]
    for track in mf.tracks:
        body = bytearray()
        last = 0
        has_eot = False
        for tick, ev in track:
            if tick < last:
                raise ValueError("track events must be in non-decreasing tick order")
            body += encode_vlq(tick - last)
            body += _encode_event(ev)
            last = tick
            has_eot = ev.kind == "meta" and ev.meta_type == META_END_OF_TRACK
        if not has_eot:
            body += b"\x00\xFF\x2F\x00"
        out.append(struct.pack(">4sI", b"MTrk", len(body)) + bytes(body))
    return b"".join(out)


def track_name_event(name: str) -> MidiEvent:
    return MidiEvent("meta", meta_type=META_TRACK_NAME, data=name.encode("latin-1"))


def tempo_event(uspq: int) -> MidiEvent:
    return MidiEvent("meta", meta_type=META_SET_TEMPO, data=uspq.to_bytes(3, "big"))


def time_signature_event(numerator: int, denominator: int) -> MidiEvent:
    power = denominator.bit_length() - 1
    return MidiEvent("meta", meta_type=META_TIME_SIGNATURE, data=bytes([numerator, power, 24, 8]))
