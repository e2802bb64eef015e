"""Shared protocol vocabulary: resource kinds, identifiers, frames, defaults.

Everything on the wire is integer-valued.  Amounts are deciunits (tenths of
the kind's base unit), times are integer milliseconds, and the frame codec is
bit-exact so event logs replay byte-identically.  The frame layout is
documented field by field in protocol.md at the repository root.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from enum import Enum

MS_PER_SECOND = 1_000
MS_PER_MINUTE = 60_000
MS_PER_HOUR = 3_600_000
MS_PER_DAY = 86_400_000

#: deciunits per base unit: every protocol quantity is an integer count of
#: tenths of its kind's base unit, so frames never carry fractions.
DECI = 10

#: session counters are unsigned 32-bit and wrap modulo this value
SESSION_MOD = 2**32

FRAME_VERSION = 1

#: top byte of every 64-bit identifier names the device role
METER_NAMESPACE = 0x01
CONCENTRATOR_NAMESPACE = 0x02
_SERIAL_BITS = 56

#: state flag bits carried in the frame's flags byte
FLAG_TAMPER = 0x01
FLAG_SENSOR_FAULT = 0x02
FLAG_CLOCKLESS_IDLE = 0x04


class ResourceKind(Enum):
    """Metered resource families, each with one canonical base unit."""

    COLD_WATER = "cold_water"
    HOT_WATER = "hot_water"
    ELECTRICITY = "electricity"
    HEAT = "heat"
    GAS = "gas"
    GENERIC_SENSOR = "generic_sensor"

    @property
    def base_unit(self) -> str:
        return BASE_UNIT[self]

    @property
    def quality_fields(self) -> tuple[str, ...]:
        return QUALITY_FIELDS[self]


BASE_UNIT = {
    ResourceKind.COLD_WATER: "ml",
    ResourceKind.HOT_WATER: "ml",
    ResourceKind.ELECTRICITY: "Wh",
    ResourceKind.HEAT: "kcal",
    ResourceKind.GAS: "l",
    ResourceKind.GENERIC_SENSOR: "tick",
}

#: factory-default emission quantum per kind, in deciunits of the base unit
DEFAULT_QUANTUM_DU = {
    ResourceKind.COLD_WATER: 1000,     # 100 ml
    ResourceKind.HOT_WATER: 1000,      # 100 ml
    ResourceKind.ELECTRICITY: 100,     # 10 Wh
    ResourceKind.HEAT: 50,             # 5 kcal
    ResourceKind.GAS: 100,             # 10 l
    ResourceKind.GENERIC_SENSOR: 10,   # 1 tick
}

#: per-kind schema of the quality block: field names, one signed 16-bit
#: deciunit value each, in frame order
QUALITY_FIELDS = {
    ResourceKind.COLD_WATER: ("temperature_c", "pressure_kpa"),
    ResourceKind.HOT_WATER: ("temperature_c", "pressure_kpa"),
    ResourceKind.ELECTRICITY: ("voltage_v", "frequency_hz"),
    ResourceKind.HEAT: ("temperature_c", "pressure_kpa"),
    ResourceKind.GAS: ("temperature_c",),
    ResourceKind.GENERIC_SENSOR: ("reading",),
}

#: plausible sensor readouts used when a scenario does not pin its own
NOMINAL_QUALITY_DU = {
    ResourceKind.COLD_WATER: (120, 3000),
    ResourceKind.HOT_WATER: (550, 3000),
    ResourceKind.ELECTRICITY: (2300, 500),
    ResourceKind.HEAT: (750, 3000),
    ResourceKind.GAS: (200,),
    ResourceKind.GENERIC_SENSOR: (0,),
}


class MessageType(Enum):
    QUANTUM_EVENT = "quantum_event"
    HEARTBEAT = "heartbeat"


_KIND_TAG = {
    ResourceKind.COLD_WATER: 1,
    ResourceKind.HOT_WATER: 2,
    ResourceKind.ELECTRICITY: 3,
    ResourceKind.HEAT: 4,
    ResourceKind.GAS: 5,
    ResourceKind.GENERIC_SENSOR: 6,
}
_TAG_KIND = {tag: kind for kind, tag in _KIND_TAG.items()}

_TYPE_TAG = {MessageType.QUANTUM_EVENT: 1, MessageType.HEARTBEAT: 2}
_TAG_TYPE = {tag: mt for mt, tag in _TYPE_TAG.items()}


class MalformedFrame(ValueError):
    """Raised when a byte string cannot be decoded as a protocol frame."""


class DuplicateIdError(ValueError):
    """Raised when a registry is loaded with a non-unique identifier."""


class ConfigError(ValueError):
    """Raised for invalid scenario configuration, with the offending field."""


# ---------------------------------------------------------------------------
# identifiers

def meter_id(serial: int) -> int:
    """Build a meter identifier from a plain serial number."""
    if not 0 <= serial < 2**_SERIAL_BITS:
        raise ValueError(f"meter serial out of range: {serial}")
    return (METER_NAMESPACE << _SERIAL_BITS) | serial


def concentrator_id(serial: int) -> int:
    if not 0 <= serial < 2**_SERIAL_BITS:
        raise ValueError(f"concentrator serial out of range: {serial}")
    return (CONCENTRATOR_NAMESPACE << _SERIAL_BITS) | serial


def id_namespace(ident: int) -> int:
    return ident >> _SERIAL_BITS


def id_serial(ident: int) -> int:
    return ident & (2**_SERIAL_BITS - 1)


# ---------------------------------------------------------------------------
# session arithmetic

def session_delta(a: int, b: int, modulus: int = SESSION_MOD) -> int:
    """Signed wrap-aware distance from counter value ``a`` to ``b``.

    A forward distance below half the counter range is a genuine advance;
    anything larger is read as a backward step, i.e. the counter wrapped
    rather than reset.
    """
    d = (b - a) % modulus
    return d if d < modulus // 2 else d - modulus


def session_wire(value: int, modulus: int = SESSION_MOD) -> int:
    """Fold an unbounded session index back onto the wire counter range."""
    return value % modulus


# ---------------------------------------------------------------------------
# value types

@dataclass(frozen=True)
class QualityVector:
    """Secondary sensor readings attached to every message.

    The field set is fixed by the resource kind; values are signed 16-bit
    deciunits in the order given by ``QUALITY_FIELDS[kind]``.
    """

    kind: ResourceKind
    values: tuple[int, ...]

    def __post_init__(self) -> None:
        names = QUALITY_FIELDS[self.kind]
        if len(self.values) != len(names):
            raise ValueError(
                f"{self.kind.value} quality needs {len(names)} fields, "
                f"got {len(self.values)}"
            )
        for name, v in zip(names, self.values):
            if not isinstance(v, int) or isinstance(v, bool):
                raise ValueError(f"quality field {name} must be an integer deciunit")
            if not -(2**15) <= v < 2**15:
                raise ValueError(f"quality field {name} out of 16-bit range: {v}")

    @classmethod
    def from_floats(cls, kind: ResourceKind, *values: float) -> QualityVector:
        """Build from base-unit floats, rounding to deciunits."""
        out = []
        for v in values:
            if v != v or v in (float("inf"), float("-inf")):
                raise ValueError(f"non-finite quality value: {v}")
            out.append(round(v * DECI))
        return cls(kind, tuple(out))

    def as_floats(self) -> tuple[float, ...]:
        return tuple(v / DECI for v in self.values)

    @classmethod
    def nominal(cls, kind: ResourceKind) -> QualityVector:
        return cls(kind, NOMINAL_QUALITY_DU[kind])


@dataclass(frozen=True)
class MeterState:
    """Self-reported device health carried in every message."""

    battery_level: float = 1.0          # fraction, quantized to 0.5% on the wire
    tamper_flag: bool = False
    sensor_fault: bool = False
    clockless_idle: bool = False
    cumulative_quanta: int = 0          # emission quanta since installation

    def __post_init__(self) -> None:
        if not 0.0 <= self.battery_level <= 1.0:
            raise ValueError(f"battery level out of [0, 1]: {self.battery_level}")
        if self.cumulative_quanta < 0:
            raise ValueError("cumulative_quanta must be nonnegative")


@dataclass(frozen=True)
class MeterMessage:
    """One transmission: a consumption quantum crossing or an idle heartbeat.

    Messages deliberately carry no emission timestamp; time is attached by
    whichever concentrator hears them.
    """

    meter_id: int
    session: int
    kind: ResourceKind
    message_type: MessageType
    quality: QualityVector
    state: MeterState

    def __post_init__(self) -> None:
        if not 0 <= self.session < SESSION_MOD:
            raise ValueError(f"session out of range: {self.session}")
        if not 0 <= self.meter_id < 2**64:
            raise ValueError(f"meter id out of range: {self.meter_id}")
        if self.quality.kind is not self.kind:
            raise ValueError("quality vector kind does not match message kind")


@dataclass(frozen=True)
class ConcentratorState:
    uplink_ok: bool = True
    queue_depth: int = 0


@dataclass(frozen=True)
class ConcentratorReport:
    """A meter message stamped with reception time by one concentrator."""

    message: MeterMessage
    concentrator_id: int
    rx_time_ms: int
    state: ConcentratorState = ConcentratorState()


# ---------------------------------------------------------------------------
# frame codec

def frame_size(kind: ResourceKind) -> int:
    """Encoded frame length in bytes for the given kind."""
    return 21 + 2 * len(QUALITY_FIELDS[kind])


def encode_frame(msg: MeterMessage) -> bytes:
    """Serialize a message to its little-endian wire frame."""
    head = struct.pack(
        "<BBBQI",
        FRAME_VERSION,
        _KIND_TAG[msg.kind],
        _TYPE_TAG[msg.message_type],
        msg.meter_id,
        msg.session,
    )
    qual = struct.pack(f"<{len(msg.quality.values)}h", *msg.quality.values)
    st = msg.state
    flags = (
        (FLAG_TAMPER if st.tamper_flag else 0)
        | (FLAG_SENSOR_FAULT if st.sensor_fault else 0)
        | (FLAG_CLOCKLESS_IDLE if st.clockless_idle else 0)
    )
    battery = round(st.battery_level * 200)
    tail = struct.pack("<BBI", battery, flags, st.cumulative_quanta % 2**32)
    return head + qual + tail


def decode_frame(data: bytes) -> MeterMessage:
    """Parse a wire frame back into a message.

    Raises:
        MalformedFrame: on bad version, unknown kind or type tag, a length
            that does not match the declared kind, or an out-of-range
            battery byte.
    """
    if len(data) < 3:
        raise MalformedFrame(f"frame too short: {len(data)} bytes")
    version, kind_tag, type_tag = data[0], data[1], data[2]
    if version != FRAME_VERSION:
        raise MalformedFrame(f"unsupported frame version: {version}")
    kind = _TAG_KIND.get(kind_tag)
    if kind is None:
        raise MalformedFrame(f"unknown kind tag: {kind_tag}")
    mtype = _TAG_TYPE.get(type_tag)
    if mtype is None:
        raise MalformedFrame(f"unknown message type tag: {type_tag}")
    expected = frame_size(kind)
    if len(data) != expected:
        raise MalformedFrame(
            f"{kind.value} frame must be {expected} bytes, got {len(data)}"
        )
    _, _, _, mid, session = struct.unpack_from("<BBBQI", data, 0)
    nfields = len(QUALITY_FIELDS[kind])
    values = struct.unpack_from(f"<{nfields}h", data, 15)
    battery, flags, cumulative = struct.unpack_from("<BBI", data, 15 + 2 * nfields)
    if battery > 200:
        raise MalformedFrame(f"battery byte out of range: {battery}")
    state = MeterState(
        battery_level=battery / 200,
        tamper_flag=bool(flags & FLAG_TAMPER),
        sensor_fault=bool(flags & FLAG_SENSOR_FAULT),
        clockless_idle=bool(flags & FLAG_CLOCKLESS_IDLE),
        cumulative_quanta=cumulative,
    )
    return MeterMessage(
        meter_id=mid,
        session=session,
        kind=kind,
        message_type=mtype,
        quality=QualityVector(kind, tuple(values)),
        state=state,
    )


# ---------------------------------------------------------------------------
# registry

@dataclass(frozen=True)
class MeterInfo:
    kind: ResourceKind
    quantum_du: int


class Registry:
    """Identifier book for one deployment; duplicates are rejected on load."""

    def __init__(self) -> None:
        self._meters: dict[int, MeterInfo] = {}
        self._concentrators: set[int] = set()

    def add_meter(self, ident: int, kind: ResourceKind,
                  quantum_du: int | None = None) -> None:
        if id_namespace(ident) != METER_NAMESPACE:
            raise ValueError(f"not a meter id: {ident:#x}")
        if ident in self._meters:
            raise DuplicateIdError(f"duplicate meter id: {ident:#x}")
        if quantum_du is None:
            quantum_du = DEFAULT_QUANTUM_DU[kind]
        if quantum_du <= 0:
            raise ValueError("quantum must be positive")
        self._meters[ident] = MeterInfo(kind, quantum_du)

    def add_concentrator(self, ident: int) -> None:
        if id_namespace(ident) != CONCENTRATOR_NAMESPACE:
            raise ValueError(f"not a concentrator id: {ident:#x}")
        if ident in self._concentrators:
            raise DuplicateIdError(f"duplicate concentrator id: {ident:#x}")
        self._concentrators.add(ident)

    def meter(self, ident: int) -> MeterInfo:
        return self._meters[ident]

    def has_meter(self, ident: int) -> bool:
        return ident in self._meters

    def meter_ids(self) -> list[int]:
        return sorted(self._meters)

    def concentrator_ids(self) -> list[int]:
        return sorted(self._concentrators)
