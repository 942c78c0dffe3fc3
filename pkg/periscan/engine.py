# PERISCAN (TM) IPv6 Periphery Measurement Toolkit
# All trademark and other rights reserved by their respective owners
# Copyright 2025 Periscan Developers
# BSD-3 License
# Redistribution and use in source and binary forms, with or without
# modification, are permitted provided that the following conditions are met:
# 1. Redistributions of source code must retain the above copyright notice,
#    this list of conditions and the following disclaimer.
# 2. Redistributions in binary form must reproduce the above copyright notice,
#    this list of conditions and the following disclaimer in the documentation
#    and/or other materials provided with the distribution.
# 3. Neither the name of the copyright holder nor the names of its
#    contributors may be used to endorse or promote products derived from this
#    software without specific prior written permission.
# THIS SOFTWARE IS PROVIDED BY THE COPYRIGHT HOLDERS AND CONTRIBUTORS "AS IS"
# AND ANY EXPRESS OR IMPLIED WARRANTIES, INCLUDING, BUT NOT LIMITED TO,
# THE IMPLIED WARRANTIES OF MERCHANTABILITY AND FITNESS FOR A PARTICULAR
# PURPOSE ARE DISCLAIMED. IN NO EVENT SHALL THE COPYRIGHT HOLDER OR
# CONTRIBUTORS  BE LIABLE FOR ANY DIRECT, INDIRECT, INCIDENTAL, SPECIAL,
# EXEMPLARY, OR CONSEQUENTIAL DAMAGES (INCLUDING, BUT NOT LIMITED TO,
# PROCUREMENT OF SUBSTITUTE GOODS OR SERVICES; LOSS OF USE, DATA,
# OR PROFITS;  OR BUSINESS INTERRUPTION) HOWEVER CAUSED AND ON ANY THEORY OF
# LIABILITY, WHETHER IN CONTRACT, STRICT LIABILITY, OR TORT (INCLUDING
# NEGLIGENCE OR OTHERWISE) ARISING IN ANY WAY OUT OF THE USE OF THIS
# SOFTWARE,  EVEN IF ADVISED OF THE POSSIBILITY OF SUCH DAMAGE.

from abc import ABC, abstractmethod
from collections import Counter, deque
from dataclasses import dataclass, field
from hashlib import blake2b
from queue import Empty, Queue
from threading import Event, Lock, Thread
from typing import Callable, Deque, Dict, Iterable, Iterator, List, \
    Literal, Optional, Tuple, Union

from neon_utils.logger import LOG
from pydantic import BaseModel, ConfigDict, Field

from periscan.prefix import Address
from periscan.ratelimit import RateLimit, TokenBucket
from periscan.utils.config import ScanConfig
from periscan.utils.constants import BANNER_LIMIT, DEFAULT_HOP_LIMIT, \
    DEFAULT_RETRIES, DEFAULT_TIMEOUT, TCP_HOP_LIMIT
from periscan.utils.exceptions import BackendError
from periscan.utils.http import parse_response
from periscan.wire import TCP_ACK, TCP_RST, TCP_SYN, Datagram, DecodeError, \
    build_echo, build_syn, decode

StopPredicate = Callable[[float], bool]

# Receiver lane poll interval in threaded mode
_POLL_INTERVAL = 0.05
_SPORT_BASE = 1024
_SPORT_RANGE = 64000


class EchoProbe(BaseModel):
    kind: Literal["icmp6_echo"] = "icmp6_echo"
    hop_limit: int = Field(default=DEFAULT_HOP_LIMIT, ge=1, le=255)
    payload_tag: Optional[int] = Field(default=None, ge=0, le=0xFFFF)


class SynProbe(BaseModel):
    kind: Literal["tcp_syn"] = "tcp_syn"
    port: int = Field(ge=1, le=65535)
    hop_limit: int = Field(default=TCP_HOP_LIMIT, ge=1, le=255)


class AppRequest(BaseModel):
    kind: Literal["app_request"] = "app_request"
    port: int = Field(ge=1, le=65535)
    transport: Literal["tcp", "udp"] = "tcp"
    request: bytes = b""
    read_limit: int = Field(default=BANNER_LIMIT, gt=0)


class ProbeSpec(BaseModel):
    kind: Union[EchoProbe, SynProbe, AppRequest] = \
        Field(discriminator="kind")
    timeout: float = Field(default=DEFAULT_TIMEOUT, gt=0)
    retries: int = Field(default=DEFAULT_RETRIES, ge=0, le=10)


class IcmpPayload(BaseModel):
    model_config = ConfigDict(frozen=True)
    kind: Literal["icmp"] = "icmp"
    icmp_type: int
    icmp_code: int
    echoed_hop_limit: Optional[int] = None


class SynAckPayload(BaseModel):
    model_config = ConfigDict(frozen=True)
    kind: Literal["syn_ack"] = "syn_ack"


class RstPayload(BaseModel):
    model_config = ConfigDict(frozen=True)
    kind: Literal["rst"] = "rst"


class AppPayload(BaseModel):
    model_config = ConfigDict(frozen=True)
    kind: Literal["app"] = "app"
    status_line: str = ""
    headers: List[Tuple[str, str]] = Field(default_factory=list)
    body_prefix: bytes = b""
    raw: bytes = b""


class TimeoutPayload(BaseModel):
    model_config = ConfigDict(frozen=True)
    kind: Literal["timeout"] = "timeout"


Payload = Union[IcmpPayload, SynAckPayload, RstPayload, AppPayload,
                TimeoutPayload]


class ProbeResponse(BaseModel):
    """
    One classified observation tied to the probe that caused it
    """
    model_config = ConfigDict(frozen=True)

    target: Address
    source: Optional[Address] = None
    payload: Payload = Field(discriminator="kind")
    rtt: float = 0.0
    probe_id: str = ""
    port: Optional[int] = None
    received_at: float = 0.0

    @property
    def is_timeout(self) -> bool:
        return self.payload.kind == "timeout"

    @property
    def icmp_type(self) -> Optional[int]:
        return getattr(self.payload, "icmp_type", None)


@dataclass(frozen=True)
class Unsolicited:
    reason: str
    source: Optional[Address] = None


@dataclass
class ScanStats:
    targets: int = 0
    sent: int = 0
    matched: int = 0
    timeouts: int = 0
    retransmissions: int = 0
    unsolicited: Counter = field(default_factory=Counter)
    started_at: float = 0.0
    finished_at: float = 0.0
    stopped_early: bool = False
    error: Optional[str] = None
    _lock: Lock = field(default_factory=Lock, repr=False, compare=False)

    def increment(self, name: str, count: int = 1):
        with self._lock:
            setattr(self, name, getattr(self, name) + count)

    def note_unsolicited(self, reason: str):
        with self._lock:
            self.unsolicited[reason] += 1

    @property
    def elapsed(self) -> float:
        return self.finished_at - self.started_at

    @property
    def conserved(self) -> bool:
        return self.matched + self.timeouts == self.targets


class ScanBackend(ABC):
    """
    Transport used by the scan engine. `deterministic` backends are driven
    in lockstep on their own clock; others get concurrent send and receive
    lanes.
    """
    deterministic: bool = False

    @abstractmethod
    def open(self, config: ScanConfig) -> None:
        pass

    @abstractmethod
    def send(self, data: bytes, destination: Address) -> None:
        pass

    @abstractmethod
    def receive(self, max_wait: float) -> Optional[Tuple[bytes, Address]]:
        """
        Returns the next datagram and its source, waiting at most `max_wait`
        seconds of backend time
        """

    @abstractmethod
    def now(self) -> float:
        pass

    @abstractmethod
    def sleep(self, seconds: float) -> None:
        pass

    @abstractmethod
    def exchange(self, destination: Address, port: int, transport: str,
                 request: bytes, read_limit: int,
                 timeout: float) -> Optional[bytes]:
        """
        Single request/response on an application port
        :returns: bytes read (at most `read_limit`), or None when nothing
            answered within `timeout`
        """

    @property
    @abstractmethod
    def source_address(self) -> Address:
        pass

    def close(self) -> None:
        pass


@dataclass
class OutstandingProbe:
    tag: int
    target: Address
    attempt: int
    sent_at: float
    deadline: float
    hop_limit: Optional[int] = None
    port: Optional[int] = None
    sport: Optional[int] = None
    cookie: int = 0

    @property
    def probe_id(self) -> str:
        return f"{self.tag:08x}.{self.attempt}"


class CorrelationTable:
    """
    Outstanding probes keyed by tag (ICMP) and by flow (TCP). Every
    mutation happens under one lock so the send and receive lanes can share
    it; expired probes due for retransmission are queued here as well.
    """

    def __init__(self, ident: int, secret: bytes):
        self.ident = ident
        self._secret = secret
        self._lock = Lock()
        self._next_tag = 0
        self._by_tag: Dict[int, OutstandingProbe] = dict()
        self._by_flow: Dict[Tuple[int, int, int], int] = dict()
        self._retry: Deque[Tuple[Address, int]] = deque()

    def allocate(self) -> int:
        with self._lock:
            tag = self._next_tag
            self._next_tag = (tag + 1) & 0xFFFFFFFF
            return tag

    def cookie(self, tag: int, target: Address, port: int = 0) -> int:
        digest = blake2b(tag.to_bytes(4, "big") + target.packed +
                         port.to_bytes(2, "big"), key=self._secret,
                         digest_size=4).digest()
        return int.from_bytes(digest, "big")

    def echo_fields(self, tag: int) -> Tuple[int, int]:
        return (self.ident + (tag >> 16)) & 0xFFFF, tag & 0xFFFF

    def insert(self, entry: OutstandingProbe):
        with self._lock:
            self._by_tag[entry.tag] = entry
            if entry.sport is not None:
                self._by_flow[(int(entry.target), entry.port,
                               entry.sport)] = entry.tag

    def _remove(self, entry: OutstandingProbe):
        self._by_tag.pop(entry.tag, None)
        if entry.sport is not None:
            self._by_flow.pop((int(entry.target), entry.port, entry.sport),
                              None)

    def claim_tag(self, tag: int,
                  check: Callable[[OutstandingProbe], bool]) \
            -> Union[OutstandingProbe, str]:
        with self._lock:
            entry = self._by_tag.get(tag)
            if entry is None:
                return "unknown_tag"
            if not check(entry):
                return "cookie_mismatch"
            self._remove(entry)
            return entry

    def claim_flow(self, target: Address, port: int, sport: int,
                   check: Callable[[OutstandingProbe], bool]) \
            -> Union[OutstandingProbe, str]:
        with self._lock:
            tag = self._by_flow.get((int(target), port, sport))
            if tag is None:
                return "unknown_flow"
            entry = self._by_tag[tag]
            if not check(entry):
                return "ack_mismatch"
            self._remove(entry)
            return entry

    def expire(self, now: float, max_attempts: int) \
            -> List[OutstandingProbe]:
        """
        Removes probes past their deadline. Those with attempts left are
        queued for retransmission; the rest are returned as timed out.
        """
        timed_out = list()
        with self._lock:
            while self._by_tag:
                entry = next(iter(self._by_tag.values()))
                if entry.deadline > now:
                    break
                self._remove(entry)
                if entry.attempt + 1 < max_attempts:
                    self._retry.append((entry.target, entry.attempt + 1))
                else:
                    timed_out.append(entry)
        return timed_out

    def take_retry(self) -> Optional[Tuple[Address, int]]:
        with self._lock:
            return self._retry.popleft() if self._retry else None

    def next_deadline(self) -> Optional[float]:
        with self._lock:
            if not self._by_tag:
                return None
            return next(iter(self._by_tag.values())).deadline

    @property
    def idle(self) -> bool:
        with self._lock:
            return not self._by_tag and not self._retry

    def __len__(self) -> int:
        with self._lock:
            return len(self._by_tag)


def _echo_tag(datagram: Datagram, table: CorrelationTable) -> Optional[int]:
    if datagram.ident is None or len(datagram.data) < 8:
        return None
    tag = int.from_bytes(datagram.data[:4], "big")
    if table.echo_fields(tag) != (datagram.ident, datagram.seq):
        return None
    return tag


def _response(entry: OutstandingProbe, source: Address, payload: Payload,
              now: float) -> ProbeResponse:
    return ProbeResponse(target=entry.target, source=source, payload=payload,
                         rtt=max(0.0, now - entry.sent_at),
                         probe_id=entry.probe_id, port=entry.port,
                         received_at=now)


def _match_echo(datagram: Datagram, reporter: Address,
                table: CorrelationTable, now: float, icmp: Datagram) \
        -> Union[ProbeResponse, Unsolicited]:
    tag = _echo_tag(datagram, table)
    if tag is None:
        return Unsolicited("unknown_tag", reporter)
    quoted = datagram.kind == "echo_request"

    def check(entry: OutstandingProbe) -> bool:
        if quoted and entry.target != datagram.dst:
            return False
        return datagram.data[4:8] == entry.cookie.to_bytes(4, "big")
    entry = table.claim_tag(tag, check)
    if isinstance(entry, str):
        return Unsolicited(entry, reporter)
    return _response(entry, reporter,
                     IcmpPayload(icmp_type=icmp.icmp_type,
                                 icmp_code=icmp.icmp_code,
                                 echoed_hop_limit=entry.hop_limit), now)


def _match_tcp(datagram: Datagram, reporter: Address,
               table: CorrelationTable, now: float, icmp: Datagram = None) \
        -> Union[ProbeResponse, Unsolicited]:
    if icmp is None:
        # Reply from the target: our sport is its dport
        target, port, sport = datagram.src, datagram.sport, datagram.dport

        def check(entry: OutstandingProbe) -> bool:
            return datagram.tcp_ack == (entry.cookie + 1) & 0xFFFFFFFF
    else:
        target, port, sport = datagram.dst, datagram.dport, datagram.sport

        def check(entry: OutstandingProbe) -> bool:
            return datagram.tcp_seq == entry.cookie
    claimed = table.claim_flow(target, port, sport, check)
    if isinstance(claimed, str):
        return Unsolicited(claimed, reporter)
    if icmp is not None:
        payload = IcmpPayload(icmp_type=icmp.icmp_type,
                              icmp_code=icmp.icmp_code,
                              echoed_hop_limit=claimed.hop_limit)
    elif datagram.tcp_flags & TCP_RST:
        payload = RstPayload()
    else:
        payload = SynAckPayload()
    return _response(claimed, reporter, payload, now)


def match_response(raw: bytes, source: Address,
                   outstanding: CorrelationTable, now: float = 0.0) \
        -> Union[ProbeResponse, Unsolicited]:
    """
    Correlates one received datagram with an outstanding probe. ICMPv6
    errors are matched through the packet they quote, echo replies through
    identifier/sequence/cookie, TCP through the flow and acknowledgment.
    :param raw: datagram bytes starting at the IPv6 header
    :param source: address the datagram came from
    :param outstanding: correlation table of the running scan
    :param now: scan clock at reception
    :returns: ProbeResponse, or Unsolicited with a reason
    """
    try:
        datagram = decode(raw)
    except DecodeError as e:
        return Unsolicited(e.reason, source)
    if datagram.kind == "echo_reply":
        return _match_echo(datagram, datagram.src, outstanding, now,
                           datagram)
    if datagram.is_icmp_error:
        quoted = datagram.quoted
        if quoted.kind == "echo_request":
            return _match_echo(quoted, datagram.src, outstanding, now,
                               datagram)
        if quoted.kind == "tcp":
            return _match_tcp(quoted, datagram.src, outstanding, now,
                              datagram)
        return Unsolicited("unsupported_quote", datagram.src)
    if datagram.kind == "tcp":
        flags = datagram.tcp_flags
        if flags & TCP_RST or flags & (TCP_SYN | TCP_ACK) == \
                (TCP_SYN | TCP_ACK):
            return _match_tcp(datagram, datagram.src, outstanding, now)
    return Unsolicited("unsupported", source)


def app_payload(raw: bytes) -> AppPayload:
    http = parse_response(raw)
    if http is None:
        return AppPayload(body_prefix=raw, raw=raw)
    return AppPayload(status_line=http.status_line, headers=http.headers,
                      body_prefix=http.body, raw=raw)


class ScanEngine:
    """
    Rate-limited prober with decoupled send and receive lanes over a shared
    correlation table
    """

    def __init__(self, backend: ScanBackend, rate: RateLimit, seed: int = 0):
        self.backend = backend
        self.rate = rate
        self.limiter = TokenBucket(rate.max_pps, clock=backend.now)
        self._seed = seed
        self._scans = 0
        self.stats: Optional[ScanStats] = None

    def _new_table(self, spec: ProbeSpec) -> CorrelationTable:
        self._scans += 1
        key = self._seed.to_bytes(8, "big")
        ident = int.from_bytes(blake2b(b"ident", key=key,
                                       digest_size=2).digest(), "big")
        if isinstance(spec.kind, EchoProbe) and \
                spec.kind.payload_tag is not None:
            ident = spec.kind.payload_tag
        secret = blake2b(self._scans.to_bytes(8, "big"), key=key,
                         digest_size=16).digest()
        return CorrelationTable(ident=ident, secret=secret)

    def _send(self, target: Address, attempt: int, spec: ProbeSpec,
              table: CorrelationTable, stats: ScanStats):
        tag = table.allocate()
        now = self.backend.now()
        kind = spec.kind
        source = self.backend.source_address
        if isinstance(kind, EchoProbe):
            cookie = table.cookie(tag, target)
            ident, seq = table.echo_fields(tag)
            data = tag.to_bytes(4, "big") + cookie.to_bytes(4, "big")
            packet = build_echo(source, target, kind.hop_limit, ident, seq,
                                data)
            entry = OutstandingProbe(tag=tag, target=target, attempt=attempt,
                                     sent_at=now,
                                     deadline=now + spec.timeout,
                                     hop_limit=kind.hop_limit)
        else:
            sport = _SPORT_BASE + tag % _SPORT_RANGE
            cookie = table.cookie(tag, target, kind.port)
            packet = build_syn(source, target, sport, kind.port, cookie,
                               kind.hop_limit)
            entry = OutstandingProbe(tag=tag, target=target, attempt=attempt,
                                     sent_at=now,
                                     deadline=now + spec.timeout,
                                     hop_limit=kind.hop_limit,
                                     port=kind.port, sport=sport)
        entry.cookie = cookie
        table.insert(entry)
        self.backend.send(packet, target)
        stats.increment("sent")
        if attempt:
            stats.increment("retransmissions")
        else:
            stats.increment("targets")

    def _handle(self, raw: bytes, source: Address, table: CorrelationTable,
                stats: ScanStats) -> Optional[ProbeResponse]:
        result = match_response(raw, source, table, self.backend.now())
        if isinstance(result, Unsolicited):
            stats.note_unsolicited(result.reason)
            LOG.debug(f"Unsolicited datagram reason={result.reason}|"
                      f"source={result.source}")
            return None
        stats.increment("matched")
        return result

    def _timeouts(self, table: CorrelationTable, spec: ProbeSpec,
                  stats: ScanStats) -> List[ProbeResponse]:
        now = self.backend.now()
        expired = table.expire(now, spec.retries + 1)
        stats.increment("timeouts", len(expired))
        return [ProbeResponse(target=entry.target, payload=TimeoutPayload(),
                              rtt=spec.timeout, probe_id=entry.probe_id,
                              port=entry.port, received_at=now)
                for entry in expired]

    def _drain(self, max_wait: float, table: CorrelationTable,
               spec: ProbeSpec, stats: ScanStats) -> Iterator[ProbeResponse]:
        deadline = self.backend.now() + max_wait
        while True:
            received = self.backend.receive(max(0.0,
                                                deadline - self.backend.now()))
            if received is None:
                break
            response = self._handle(*received, table, stats)
            if response is not None:
                yield response
        yield from self._timeouts(table, spec, stats)

    def _run_lockstep(self, targets: Iterator[Address], spec: ProbeSpec,
                      stop_when: Optional[StopPredicate],
                      stats: ScanStats) -> Iterator[ProbeResponse]:
        table = self._new_table(spec)
        exhausted = False
        while True:
            yield from self._drain(0.0, table, spec, stats)
            if not exhausted and stop_when and \
                    stop_when(self.backend.now()):
                exhausted = stats.stopped_early = True
            job = table.take_retry()
            if job is None and not exhausted:
                target = next(targets, None)
                if target is None:
                    exhausted = True
                else:
                    job = (target, 0)
            if job is not None:
                while not self.limiter.consume():
                    yield from self._drain(self.limiter.delay(), table, spec,
                                           stats)
                self._send(*job, spec, table, stats)
                continue
            if table.idle:
                break
            next_deadline = table.next_deadline()
            yield from self._drain(max(0.0, next_deadline -
                                       self.backend.now()), table, spec,
                                   stats)

    def _run_threaded(self, targets: Iterator[Address], spec: ProbeSpec,
                      stop_when: Optional[StopPredicate],
                      stats: ScanStats) -> Iterator[ProbeResponse]:
        table = self._new_table(spec)
        results: Queue = Queue()
        sending_done = Event()
        failures: List[BaseException] = list()
        finished = object()

        def sender_lane():
            exhausted = False
            try:
                while not failures:
                    if not exhausted and stop_when and \
                            stop_when(self.backend.now()):
                        exhausted = stats.stopped_early = True
                    job = table.take_retry()
                    if job is None and not exhausted:
                        target = next(targets, None)
                        if target is None:
                            exhausted = True
                        else:
                            job = (target, 0)
                    if job is None:
                        if table.idle:
                            break
                        self.backend.sleep(_POLL_INTERVAL / 5)
                        continue
                    self.limiter.acquire(self.backend.sleep)
                    self._send(*job, spec, table, stats)
            except Exception as e:
                LOG.exception(f"Sender lane failed: {e}")
                failures.append(e)
            finally:
                sending_done.set()

        def receiver_lane():
            try:
                while not failures:
                    received = self.backend.receive(_POLL_INTERVAL)
                    if received is not None:
                        response = self._handle(*received, table, stats)
                        if response is not None:
                            results.put(response)
                    for response in self._timeouts(table, spec, stats):
                        results.put(response)
                    if sending_done.is_set() and table.idle:
                        break
            except Exception as e:
                LOG.exception(f"Receiver lane failed: {e}")
                failures.append(e)
            finally:
                results.put(finished)

        lanes = [Thread(target=sender_lane, daemon=True),
                 Thread(target=receiver_lane, daemon=True)]
        for lane in lanes:
            lane.start()
        while True:
            try:
                item = results.get(timeout=_POLL_INTERVAL)
            except Empty:
                continue
            if item is finished:
                break
            yield item
        for lane in lanes:
            lane.join()
        if failures:
            raise failures[0]

    def _run_app(self, targets: Iterator[Address], spec: ProbeSpec,
                 stop_when: Optional[StopPredicate],
                 stats: ScanStats) -> Iterator[ProbeResponse]:
        kind = spec.kind
        for index, target in enumerate(targets):
            if stop_when and stop_when(self.backend.now()):
                stats.stopped_early = True
                break
            stats.increment("targets")
            for attempt in range(spec.retries + 1):
                self.limiter.acquire(self.backend.sleep)
                stats.increment("sent")
                if attempt:
                    stats.increment("retransmissions")
                started = self.backend.now()
                data = self.backend.exchange(target, kind.port,
                                             kind.transport, kind.request,
                                             kind.read_limit, spec.timeout)
                if data is not None:
                    now = self.backend.now()
                    stats.increment("matched")
                    yield ProbeResponse(target=target, source=target,
                                        payload=app_payload(data),
                                        rtt=now - started,
                                        probe_id=f"app.{index}.{attempt}",
                                        port=kind.port, received_at=now)
                    break
            else:
                stats.increment("timeouts")
                yield ProbeResponse(target=target, payload=TimeoutPayload(),
                                    rtt=spec.timeout,
                                    probe_id=f"app.{index}.{spec.retries}",
                                    port=kind.port,
                                    received_at=self.backend.now())

    def run_scan(self, targets: Iterable[Address], spec: ProbeSpec,
                 stop_when: Optional[StopPredicate] = None,
                 stats: Optional[ScanStats] = None) \
            -> Iterator[ProbeResponse]:
        """
        Probes every target and streams classified responses in arrival
        order. Each target ends with exactly one matched response or one
        Timeout record.
        :param targets: addresses to probe
        :param spec: probe kind, timeout and retries
        :param stop_when: optional predicate on the scan clock; once true no
            new targets are sent, outstanding probes still drain
        :param stats: counters to fill, a fresh ScanStats by default
        """
        stats = stats or ScanStats(started_at=self.backend.now())
        self.stats = stats
        targets = iter(targets)
        if isinstance(spec.kind, AppRequest):
            lane = self._run_app(targets, spec, stop_when, stats)
        elif self.backend.deterministic:
            lane = self._run_lockstep(targets, spec, stop_when, stats)
        else:
            lane = self._run_threaded(targets, spec, stop_when, stats)
        try:
            yield from lane
        except BackendError as e:
            stats.error = str(e)
            LOG.error(f"Scan aborted error={e}|sent={stats.sent}|"
                      f"matched={stats.matched}")
            raise
        finally:
            stats.finished_at = self.backend.now()
            LOG.debug(f"Scan finished targets={stats.targets}|"
                      f"matched={stats.matched}|timeouts={stats.timeouts}|"
                      f"unsolicited={sum(stats.unsolicited.values())}")


class Scanner:
    """
    Scan capability shared by the detectors: one backend, one rate limiter
    and the configured probe defaults
    """

    def __init__(self, backend: ScanBackend,
                 config: Optional[ScanConfig] = None):
        self.config = config or ScanConfig()
        self.backend = backend
        backend.open(self.config)
        self.engine = ScanEngine(backend, RateLimit(max_pps=self.config.rate),
                                 seed=self.config.seed)
        self.history: List[ScanStats] = list()

    @property
    def deterministic(self) -> bool:
        return self.backend.deterministic

    @property
    def last_stats(self) -> Optional[ScanStats]:
        return self.engine.stats

    def now(self) -> float:
        return self.backend.now()

    def spec(self, kind: Union[EchoProbe, SynProbe, AppRequest]) -> ProbeSpec:
        return ProbeSpec(kind=kind, timeout=self.config.timeout,
                         retries=self.config.retries)

    def scan(self, targets: Iterable[Address],
             kind: Union[EchoProbe, SynProbe, AppRequest],
             stop_when: Optional[StopPredicate] = None) \
            -> Iterator[ProbeResponse]:
        stats = ScanStats(started_at=self.backend.now())
        try:
            yield from self.engine.run_scan(targets, self.spec(kind),
                                            stop_when, stats)
        finally:
            self.history.append(stats)

    def echo(self, targets: Iterable[Address],
             hop_limit: int = DEFAULT_HOP_LIMIT,
             stop_when: Optional[StopPredicate] = None) \
            -> Iterator[ProbeResponse]:
        return self.scan(targets, EchoProbe(hop_limit=hop_limit), stop_when)

    def syn(self, targets: Iterable[Address], port: int) \
            -> Iterator[ProbeResponse]:
        return self.scan(targets, SynProbe(port=port))

    def request(self, target: Address, port: int, request: bytes = b"",
                transport: str = "tcp",
                read_limit: int = BANNER_LIMIT) -> ProbeResponse:
        kind = AppRequest(port=port, transport=transport, request=request,
                          read_limit=read_limit)
        return list(self.scan([target], kind))[0]

    def close(self):
        self.backend.close()
