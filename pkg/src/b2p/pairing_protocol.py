"""Two-party pairing exchange over an eavesdropped channel.

DevA (initiator) walks its change points.  At each one it commits its key
bits ``Q_A`` under a fresh BCH codeword and sends the block.  DevB
(responder) tries the candidate anchors around the same change-point
ordinal, and on the first that decodes it returns a confirmation token
keyed with the derived key.  DevA checks the token and the sync offset,
then acknowledges.  Any failed attempt moves DevA on to its next change
point until a key is agreed or the attempt budget runs out.

The attempt id carried by every message is DevA's change-point ordinal,
which is also the base index DevB uses for its candidate anchors.
"""

from __future__ import annotations

import enum
import hashlib
import hmac
import struct
from collections import deque
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

from b2p.dsp_preprocess import PreprocessConfig, preprocess
from b2p.ecc_bch import BchCode, FinalKey, commit, finalize_key, make_code, pack_bits, recover, unpack_bits, Commitment
from b2p.errors import FormatError, ParameterError, WindowUnderflowError
from b2p.quantizer import Coding, QuantizerSpec, SegmentPolicy, fit_lloyd_max, quantize_encode, select_key_bits
from b2p.signal_source import Signal
from b2p.sync_cpd import ChangePoint, SyncConfig, candidate_anchors, change_points, within_sync_offset

MAGIC = 0xB2
VERSION = 0x01
_HEADER = struct.Struct("<BBBQIH")
CONFIRM_LEN = 4 + 32
_MASK_LABEL = b"\x49"
_TAG_LABEL = b"\x43"


class Kind(enum.IntEnum):
    COMMIT = 1
    CONFIRM = 2
    ACK = 3
    FAIL = 4


class Role(str, enum.Enum):
    INITIATOR = "initiator"
    RESPONDER = "responder"


class Status(str, enum.Enum):
    SUCCESS = "success"
    TIMEOUT = "timeout"
    ABORTED = "aborted"


# --------------------------------------------------------------------------
# Wire format
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class Message:
    kind: Kind
    session_id: int
    attempt_id: int
    payload: bytes = b""

    def __post_init__(self):
        object.__setattr__(self, "kind", Kind(self.kind))
        if not 0 <= self.session_id < 2**64:
            raise ParameterError("session_id must fit in 64 bits")
        if not 0 <= self.attempt_id < 2**32:
            raise ParameterError("attempt_id must fit in 32 bits")
        if len(self.payload) >= 2**16:
            raise ParameterError("payload too long")
        object.__setattr__(self, "payload", bytes(self.payload))


def commit_payload_len(n: int) -> int:
    return (n + 7) // 8


def encode_message(m: Message) -> bytes:
    head = _HEADER.pack(MAGIC, VERSION, int(m.kind), m.session_id, m.attempt_id, len(m.payload))
    return head + m.payload


def decode_message(buf: bytes, code_n: int | None = None) -> Message:
    """Parse one framed message.

    ``code_n`` (the BCH length ``N``) enables the COMMIT payload length
    check; without it any COMMIT length is accepted.
    """
    buf = bytes(buf)
    if len(buf) < _HEADER.size:
        raise FormatError(f"truncated header: {len(buf)} < {_HEADER.size} bytes")
    magic, version, kind, sid, aid, plen = _HEADER.unpack_from(buf)
    if magic != MAGIC:
        raise FormatError(f"bad magic 0x{magic:02x}")
    if version != VERSION:
        raise FormatError(f"unsupported version {version}")
    try:
        kind = Kind(kind)
    except ValueError:
        raise FormatError(f"unknown message kind {kind}") from None
    payload = buf[_HEADER.size:]
    if len(payload) != plen:
        raise FormatError(f"payload length {len(payload)} != declared {plen}")
    if kind is Kind.COMMIT and code_n is not None and plen != commit_payload_len(code_n):
        raise FormatError(f"COMMIT payload must be {commit_payload_len(code_n)} bytes, got {plen}")
    if kind is Kind.CONFIRM and plen != CONFIRM_LEN:
        raise FormatError(f"CONFIRM payload must be {CONFIRM_LEN} bytes, got {plen}")
    if kind in (Kind.ACK, Kind.FAIL) and plen != 0:
        raise FormatError(f"{kind.name} payload must be empty")
    return Message(kind, sid, aid, payload)


# --------------------------------------------------------------------------
# Confirmation token
# --------------------------------------------------------------------------

class ConfirmResult(str, enum.Enum):
    ACCEPT = "accept"
    BAD_TAG = "bad_tag"
    OUT_OF_SYNC = "out_of_sync"


def _u32(v: int) -> bytes:
    return struct.pack("<I", v & 0xFFFFFFFF)


def _mask(key: FinalKey, attempt_id: int) -> bytes:
    return hashlib.sha256(key.key_bytes + _MASK_LABEL + _u32(attempt_id)).digest()[:4]


def _tag(key: FinalKey, attempt_id: int, cp_index: int) -> bytes:
    return hashlib.sha256(key.key_bytes + _TAG_LABEL + _u32(attempt_id) + _u32(cp_index)).digest()


def make_confirm(key: FinalKey, cp_index_b: int, attempt_id: int) -> bytes:
    """Masked responder change-point index followed by a keyed SHA-256 tag."""
    masked = bytes(x ^ y for x, y in zip(_u32(cp_index_b), _mask(key, attempt_id)))
    return masked + _tag(key, attempt_id, cp_index_b)


def open_confirm(key: FinalKey, payload: bytes, attempt_id: int) -> int | None:
    """Unmask the index and check the tag; ``None`` if the tag is wrong."""
    if len(payload) != CONFIRM_LEN:
        return None
    raw = bytes(x ^ y for x, y in zip(payload[:4], _mask(key, attempt_id)))
    index = struct.unpack("<I", raw)[0]
    if not hmac.compare_digest(payload[4:], _tag(key, attempt_id, index)):
        return None
    return index


def verify_confirm(key: FinalKey, payload: bytes, attempt_id: int, own_cp_time_ms: float,
                   responder_cp_time_fn: Callable[[int], float],
                   sync_offset_ms: float = 250.0) -> tuple[ConfirmResult, int | None]:
    """Check a CONFIRM payload; returns ``(result, responder cp index)``."""
    index = open_confirm(key, payload, attempt_id)
    if index is None:
        return ConfirmResult.BAD_TAG, None
    if not within_sync_offset(own_cp_time_ms, responder_cp_time_fn(index), sync_offset_ms):
        return ConfirmResult.OUT_OF_SYNC, index
    return ConfirmResult.ACCEPT, index


# --------------------------------------------------------------------------
# Configuration and device state
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class SessionConfig:
    key_len: int = 256
    bch: tuple[int, int] = (255, 115)
    sync_cfg: SyncConfig = field(default_factory=SyncConfig)
    seg_policy: SegmentPolicy = field(default_factory=SegmentPolicy)
    timeout_attempts: int = 20
    role: Role = Role.INITIATOR
    bits_per_sample: int = 2
    coding: Coding = Coding.GRAY

    def __post_init__(self):
        object.__setattr__(self, "role", Role(self.role))
        object.__setattr__(self, "coding", Coding(self.coding))
        object.__setattr__(self, "bch", tuple(int(v) for v in self.bch))

    def validate(self) -> None:
        if self.key_len not in (128, 256):
            raise ParameterError("key_len must be 128 or 256")
        if self.timeout_attempts < 1:
            raise ParameterError("timeout_attempts must be >= 1")
        if not 1 <= self.bits_per_sample <= 16:
            raise ParameterError("bits_per_sample must lie in 1..16")
        self.sync_cfg.validate()
        self.seg_policy.validate()
        make_code(*self.bch)

    @property
    def code(self) -> BchCode:
        return make_code(*self.bch)

    def as_role(self, role) -> "SessionConfig":
        return replace(self, role=Role(role))


def _check_compatible(cfg_a: SessionConfig, cfg_b: SessionConfig) -> None:
    cfg_a.validate()
    cfg_b.validate()
    if cfg_a.role is not Role.INITIATOR or cfg_b.role is not Role.RESPONDER:
        raise ParameterError("cfg_a must be the initiator and cfg_b the responder")
    for name in ("key_len", "bch", "seg_policy", "bits_per_sample", "coding"):
        if getattr(cfg_a, name) != getattr(cfg_b, name):
            raise ParameterError(f"devices disagree on {name}")


@dataclass(frozen=True, eq=False)
class Device:
    """A device's preprocessed signal with its anchors and key material."""

    signal: Signal
    cps: tuple[ChangePoint, ...]
    quantizer: QuantizerSpec
    bits: np.ndarray

    def cp_time_ms(self, sample_idx: int) -> float:
        return 1000.0 * sample_idx / self.signal.rate_hz

    def key_bits_at(self, cp: ChangePoint, cfg: SessionConfig) -> np.ndarray:
        return select_key_bits(self.bits, cp.idx, cfg.bch[0], cfg.bits_per_sample, cfg.seg_policy)


def prepare_device(sig: Signal, cfg: SessionConfig, quantizer: QuantizerSpec | None = None) -> Device:
    """Detect change points and quantize a preprocessed signal.

    Each device fits its own Lloyd-Max quantizer to its own samples unless
    one is supplied.
    """
    cps = tuple(change_points(sig, cfg.sync_cfg))
    if quantizer is None:
        quantizer = fit_lloyd_max(cfg.bits_per_sample, samples=sig.samples, coding=cfg.coding)
    else:
        quantizer = quantizer.with_coding(cfg.coding)
    return Device(sig, cps, quantizer, quantize_encode(sig, quantizer))


def prepare_raw(sig: Signal, cfg: SessionConfig, pre: PreprocessConfig = PreprocessConfig()) -> Device:
    return prepare_device(preprocess(sig, pre), cfg)


# --------------------------------------------------------------------------
# Channel
# --------------------------------------------------------------------------

FaultInjector = Callable[[bytes], list]


class Channel:
    """Reliable, ordered, in-process duplex link that records a transcript.

    ``fault`` maps each sent frame to the list of frames actually
    delivered, so it can drop (``[]``) or duplicate (``[f, f]``) frames.
    """

    def __init__(self, fault: FaultInjector | None = None):
        self._queues = {Role.INITIATOR: deque(), Role.RESPONDER: deque()}
        self.transcript: list[bytes] = []
        self._fault = fault

    def send(self, sender: Role, frame: bytes) -> None:
        self.transcript.append(frame)
        dest = Role.RESPONDER if sender is Role.INITIATOR else Role.INITIATOR
        delivered = [frame] if self._fault is None else self._fault(frame)
        self._queues[dest].extend(delivered)

    def recv(self, role: Role) -> bytes | None:
        q = self._queues[role]
        return q.popleft() if q else None

    def pending(self) -> bool:
        return any(self._queues.values())


# --------------------------------------------------------------------------
# Session state machines
# --------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class PairingOutcome:
    status: Status
    key: FinalKey | None = None
    attempts_used: int = 0
    agreed_cp_time_ms: float | None = None
    next_cp: int = 0
    exhausted: bool = False

    def __post_init__(self):
        object.__setattr__(self, "status", Status(self.status))
        if (self.key is not None) != (self.status is Status.SUCCESS):
            raise ParameterError("key must be present exactly when status is success")


class _Abort(Exception):
    pass


class Initiator:
    def __init__(self, dev: Device, cfg: SessionConfig, rng: np.random.Generator,
                 session_id: int, start_cp: int = 0):
        self.dev, self.cfg, self.rng = dev, cfg, rng
        self.session_id = session_id
        self.code = cfg.code
        self.cursor = start_cp
        self.attempts = 0
        self.waiting: tuple[int, FinalKey, ChangePoint] | None = None
        self.outcome: PairingOutcome | None = None
        self.last_q: np.ndarray | None = None

    def _finish(self, status, key=None, cp_time=None, exhausted=False):
        self.outcome = PairingOutcome(status, key, self.attempts, cp_time, self.cursor, exhausted)

    def next_commit(self) -> Message | None:
        """Start the next attempt, or finish the session and return ``None``."""
        if self.outcome is not None:
            return None
        while True:
            if self.attempts >= self.cfg.timeout_attempts:
                self._finish(Status.TIMEOUT)
                return None
            if self.cursor >= len(self.dev.cps):
                self._finish(Status.TIMEOUT, exhausted=True)
                return None
            ordinal = self.cursor
            cp = self.dev.cps[ordinal]
            self.cursor += 1
            try:
                q_a = self.dev.key_bits_at(cp, self.cfg)
            except WindowUnderflowError:
                continue
            self.attempts += 1
            block, _ = commit(self.code, q_a, self.rng, ordinal)
            self.last_q = q_a
            self.waiting = (ordinal, finalize_key(q_a, self.cfg.key_len), cp)
            return Message(Kind.COMMIT, self.session_id, ordinal, pack_bits(block.block))

    def handle(self, msg: Message) -> list[Message]:
        if msg.session_id != self.session_id:
            raise _Abort("session id mismatch")
        if self.waiting is None or msg.attempt_id != self.waiting[0]:
            return []  # stale or duplicated reply
        ordinal, key, cp = self.waiting
        if msg.kind is Kind.FAIL:
            self.waiting = None
            return []
        if msg.kind is not Kind.CONFIRM:
            raise _Abort(f"unexpected {msg.kind.name} at initiator")
        self.waiting = None
        verdict, _ = verify_confirm(key, msg.payload, ordinal, self.dev.cp_time_ms(cp.idx),
                                    self._responder_time, self.cfg.sync_cfg.sync_offset_ms)
        if verdict is ConfirmResult.ACCEPT:
            self._finish(Status.SUCCESS, key, self.dev.cp_time_ms(cp.idx))
            return [Message(Kind.ACK, self.session_id, ordinal)]
        return [Message(Kind.FAIL, self.session_id, ordinal)]

    def _responder_time(self, index: int) -> float:
        # Both devices run the same agreed sample rate after preprocessing.
        return 1000.0 * index / self.dev.signal.rate_hz

    def silence(self) -> None:
        """The current attempt got no reply: give up on it."""
        self.waiting = None


class Responder:
    def __init__(self, dev: Device, cfg: SessionConfig):
        self.dev, self.cfg = dev, cfg
        self.code = cfg.code
        self.session_id: int | None = None
        self.last_attempt = -1
        self.attempts = 0
        self.pending: tuple[int, FinalKey, ChangePoint] | None = None
        self.outcome: PairingOutcome | None = None
        # Candidates examined for the latest COMMIT: (cp ordinal, Q_B, decoded).
        self.last_tried: list[tuple[int, np.ndarray, bool]] = []

    def handle(self, msg: Message) -> list[Message]:
        if self.session_id is None:
            self.session_id = msg.session_id
        elif msg.session_id != self.session_id:
            raise _Abort("session id mismatch")
        if msg.kind is Kind.COMMIT:
            if msg.attempt_id <= self.last_attempt:
                return []  # replayed or reordered COMMIT
            self.last_attempt = msg.attempt_id
            self.attempts += 1
            self.pending = None
            return [self._on_commit(msg)]
        if self.pending is None or msg.attempt_id != self.pending[0]:
            return []
        _, key, cp = self.pending
        self.pending = None
        if msg.kind is Kind.ACK:
            self.outcome = PairingOutcome(Status.SUCCESS, key, self.attempts, self.dev.cp_time_ms(cp.idx))
        elif msg.kind is not Kind.FAIL:
            raise _Abort(f"unexpected {msg.kind.name} at responder")
        return []

    def _on_commit(self, msg: Message) -> Message:
        n = self.code.n
        block = Commitment(unpack_bits(msg.payload, n), self.code, msg.attempt_id)
        cps = self.dev.cps
        tried = []
        self.last_tried = tried
        if cps:
            base = min(msg.attempt_id, len(cps) - 1)
            for j in candidate_anchors(cps, base, self.cfg.sync_cfg.n_offset):
                try:
                    q_b = self.dev.key_bits_at(cps[j], self.cfg)
                except WindowUnderflowError:
                    continue
                got = recover(self.code, block, q_b)
                tried.append((j, q_b, got is not None))
                if got is not None:
                    q_a_prime, _ = got
                    key = finalize_key(q_a_prime, self.cfg.key_len)
                    self.pending = (msg.attempt_id, key, cps[j])
                    return Message(Kind.CONFIRM, msg.session_id, msg.attempt_id,
                                   make_confirm(key, cps[j].idx, msg.attempt_id))
        return Message(Kind.FAIL, msg.session_id, msg.attempt_id)

    def final(self) -> PairingOutcome:
        if self.outcome is not None:
            return self.outcome
        return PairingOutcome(Status.TIMEOUT, None, self.attempts)


@dataclass(frozen=True, eq=False)
class SessionResult:
    outcome_a: PairingOutcome
    outcome_b: PairingOutcome
    transcript: list[bytes]
    messages: list[Message]


def session_id_for(seed: int, session_index: int = 0) -> int:
    ss = np.random.SeedSequence(int(seed), spawn_key=(1, session_index))
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def pair_devices(dev_a: Device, dev_b: Device, cfg_a: SessionConfig, cfg_b: SessionConfig,
                 channel: Channel | None = None, seed: int = 0, start_cp: int = 0,
                 session_index: int = 0,
                 observer: Callable[[int, np.ndarray, Responder], None] | None = None) -> SessionResult:
    """Run one session between two prepared devices.

    The commitment randomness and session id derive from ``(seed,
    session_index)`` only.  ``observer`` is a simulator hook called after
    each COMMIT is answered with DevA's ``Q_A``; it never touches the wire.
    """
    _check_compatible(cfg_a, cfg_b)
    channel = Channel() if channel is None else channel
    ss = np.random.SeedSequence(int(seed), spawn_key=(2, session_index))
    sid = session_id_for(seed, session_index)
    init = Initiator(dev_a, cfg_a, np.random.default_rng(ss), sid, start_cp)
    resp = Responder(dev_b, cfg_b)
    n = cfg_a.bch[0]
    decoded: list[Message] = []
    start = len(channel.transcript)

    def deliver(role: Role, endpoint) -> None:
        while (frame := channel.recv(role)) is not None:
            msg = decode_message(frame, n)
            for reply in endpoint.handle(msg):
                channel.send(role, encode_message(reply))

    try:
        while (first := init.next_commit()) is not None:
            channel.send(Role.INITIATOR, encode_message(first))
            while channel.pending():
                deliver(Role.RESPONDER, resp)
                deliver(Role.INITIATOR, init)
            if observer is not None:
                observer(first.attempt_id, init.last_q, resp)
            if init.waiting is not None:
                init.silence()
        out_a = init.outcome
        out_b = resp.final()
    except (FormatError, _Abort):
        out_a = PairingOutcome(Status.ABORTED, None, init.attempts, None, init.cursor)
        out_b = PairingOutcome(Status.ABORTED, None, resp.attempts)
    transcript = channel.transcript[start:]
    for frame in transcript:
        try:
            decoded.append(decode_message(frame))
        except FormatError:
            pass
    return SessionResult(out_a, out_b, transcript, decoded)


def run_session(sig_a: Signal, sig_b: Signal, cfg_a: SessionConfig, cfg_b: SessionConfig | None = None,
                channel: Channel | None = None, seed: int = 0) -> SessionResult:
    """Pair two preprocessed signals in a single session.

    ``cfg_b`` defaults to ``cfg_a`` in the responder role.
    """
    if cfg_b is None:
        cfg_b = cfg_a.as_role(Role.RESPONDER)
    _check_compatible(cfg_a, cfg_b)
    return pair_devices(prepare_device(sig_a, cfg_a), prepare_device(sig_b, cfg_b), cfg_a, cfg_b, channel, seed)
