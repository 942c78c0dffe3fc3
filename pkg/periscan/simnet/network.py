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

import heapq

from collections import Counter
from dataclasses import dataclass, field
from hashlib import blake2b
from random import Random
from threading import RLock
from typing import Dict, List, Optional, Tuple, Union

from neon_utils.logger import LOG

from periscan.engine import ScanBackend
from periscan.prefix import Address, Prefix, contains, parse_prefix
from periscan.simnet.responders import Responder, build_responders
from periscan.simnet.topology import HostSpec, RouterSpec, TopologySpec, \
    validate_topology
from periscan.utils.config import ScanConfig
from periscan.utils.constants import TCP_HOP_LIMIT
from periscan.wire import Datagram, DecodeError, build_dest_unreach, \
    build_echo_reply, build_tcp_reply, build_time_exceeded, decode


class VirtualClock:
    """
    Monotone scan clock, advanced only by the simulation
    """

    def __init__(self, start: float = 0.0):
        self._now = start

    @property
    def now(self) -> float:
        return self._now

    def advance(self, seconds: float):
        if seconds > 0:
            self._now += seconds

    def advance_to(self, instant: float):
        if instant > self._now:
            self._now = instant


@dataclass(order=True)
class _Arrival:
    at: float
    seq: int
    data: bytes = field(compare=False)
    source: Address = field(compare=False)


@dataclass(frozen=True)
class _Router:
    spec: RouterSpec
    prefix: Prefix
    address: Address


class SimNetwork(ScanBackend):
    """
    Deterministic network backend. Probes are answered from the topology at
    send time and queued for arrival on the virtual clock; all randomness is
    keyed from the topology seed and the packet bytes.
    """
    deterministic = True

    def __init__(self, spec: TopologySpec):
        self.spec = spec
        self.clock = VirtualClock()
        self.diagnostics: Counter = Counter()
        self._lock = RLock()
        self._queue: List[_Arrival] = list()
        self._seq = 0
        self._occurrences: Counter = Counter()
        self._key = spec.seed.to_bytes(8, "big")
        self._transit = parse_prefix(spec.transit_prefix)
        self._hosts: Dict[Address, HostSpec] = {h.address: h
                                                for h in spec.hosts}
        self._responders: Dict[Address, Dict[Tuple[int, str], Responder]] = \
            {h.address: build_responders(h) for h in spec.hosts}
        routers = [_Router(spec=r, prefix=r.network, address=r.router_address)
                   for r in spec.routers]
        # Most specific first
        self._routers = sorted(routers, key=lambda r: -r.prefix.length)
        self._routers_by_id = {r.spec.id: r for r in routers}
        self._unassigned = [parse_prefix(p) for p in spec.unassigned]

    # Backend interface
    def open(self, config: ScanConfig) -> None:
        LOG.debug(f"Simnet open hosts={len(self._hosts)}|"
                  f"routers={len(self._routers)}|seed={self.spec.seed}")

    @property
    def source_address(self) -> Address:
        return self.spec.prober

    def now(self) -> float:
        return self.clock.now

    def sleep(self, seconds: float) -> None:
        with self._lock:
            self.clock.advance(seconds)

    def send(self, data: bytes, destination: Address) -> None:
        with self._lock:
            for response, arrival, source in self._deliver(data,
                                                           self.clock):
                self._seq += 1
                heapq.heappush(self._queue, _Arrival(at=arrival,
                                                     seq=self._seq,
                                                     data=response,
                                                     source=source))

    def receive(self, max_wait: float) -> Optional[Tuple[bytes, Address]]:
        with self._lock:
            horizon = self.clock.now + max(0.0, max_wait)
            if self._queue and self._queue[0].at <= horizon:
                arrival = heapq.heappop(self._queue)
                self.clock.advance_to(arrival.at)
                return arrival.data, arrival.source
            self.clock.advance_to(horizon)
            return None

    def exchange(self, destination: Address, port: int, transport: str,
                 request: bytes, read_limit: int,
                 timeout: float) -> Optional[bytes]:
        with self._lock:
            rng = self._random(destination.packed + port.to_bytes(2, "big") +
                               transport.encode() + request)
            responder = self._responders.get(destination, dict()).get(
                (port, transport))
            reachable = self._reachable(destination)
            if not reachable or self._dropped(rng):
                self.clock.advance(timeout)
                return None
            latency = self._latency(rng)
            if responder is None:
                # Refused for TCP, silence for UDP
                self.clock.advance(latency if transport == "tcp" else timeout)
                return None
            data = responder.respond(request)
            if not data:
                self.clock.advance(timeout)
                return None
            self.clock.advance(latency)
            return data[:read_limit]

    # Simulation
    def _random(self, material: bytes) -> Random:
        digest = blake2b(material, key=self._key, digest_size=16).digest()
        occurrence = self._occurrences[digest]
        self._occurrences[digest] += 1
        return Random(digest + occurrence.to_bytes(4, "big"))

    def _dropped(self, rng: Random) -> bool:
        drop = self.spec.link.drop
        if drop and rng.random() < drop:
            self.diagnostics["dropped"] += 1
            return True
        return False

    def _latency(self, rng: Random) -> float:
        link = self.spec.link
        return link.latency + link.jitter * rng.random()

    def _transit_hop(self, hop: int) -> Address:
        return Address(self._transit.bits + hop)

    def covering_router(self, destination: Address) -> Optional[_Router]:
        for router in self._routers:
            if contains(router.prefix, destination):
                return router
        return None

    def loop_members(self, router: _Router) -> List[_Router]:
        members = [router]
        current = self._routers_by_id[router.spec.loop_with]
        while current.spec.id != router.spec.id:
            members.append(current)
            current = self._routers_by_id[current.spec.loop_with]
        return members

    def is_assigned(self, address: Address) -> bool:
        return address in self._hosts

    def _reachable(self, destination: Address) -> bool:
        host = self._hosts.get(destination)
        if host is None:
            return False
        router = self.covering_router(destination)
        distance = router.spec.distance + 1 if router else \
            (host.distance or self.spec.host_distance)
        return distance <= TCP_HOP_LIMIT

    def route(self, destination: Address, hop_limit: int) \
            -> Tuple[str, Optional[Address], int]:
        """
        Walks a probe toward `destination`
        :returns: (action, responder address, code) where action is one of
            `time_exceeded`, `unreachable`, `reply` or `silent`
        """
        host = self._hosts.get(destination)
        router = self.covering_router(destination)
        if router is None:
            if host is None:
                return "silent", None, 0
            distance = host.distance or self.spec.host_distance
            if hop_limit < distance:
                return "time_exceeded", self._transit_hop(hop_limit), 0
            return "reply", destination, 0
        entry = router.spec.distance
        if hop_limit < entry:
            return "time_exceeded", self._transit_hop(hop_limit), 0
        if destination == router.address:
            return "reply", destination, 0
        if hop_limit == entry:
            return "time_exceeded", router.address, 0
        if host is not None:
            return "reply", destination, 0
        if router.spec.behavior == "unreachable":
            return "unreachable", router.address, router.spec.code
        if router.spec.behavior == "loop":
            members = self.loop_members(router)
            member = members[(hop_limit - entry) % len(members)]
            return "time_exceeded", member.address, 0
        return "silent", None, 0

    def _reply(self, probe: Datagram, responder: Address,
               rng: Random) -> Optional[bytes]:
        host = self._hosts.get(responder)
        if probe.kind == "echo_request":
            if host is not None and not host.answers_echo:
                return None
            return build_echo_reply(probe, responder)
        listeners = self._responders.get(responder, dict())
        if (probe.dport, "tcp") in listeners:
            return build_tcp_reply(probe, "SA", rng.getrandbits(32))
        return build_tcp_reply(probe, "RA", 0)

    def _deliver(self, packet: bytes, clock: VirtualClock) \
            -> List[Tuple[bytes, float, Address]]:
        try:
            probe = decode(packet)
        except DecodeError as e:
            self.diagnostics["unparseable"] += 1
            LOG.debug(f"Simnet dropped unparseable packet reason={e.reason}")
            return list()
        if probe.kind != "echo_request" and not probe.is_syn:
            self.diagnostics["unsupported"] += 1
            LOG.debug(f"Simnet dropped unsupported packet kind={probe.kind}")
            return list()
        rng = self._random(packet)
        if self._dropped(rng):
            return list()
        action, responder, code = self.route(probe.dst, probe.hop_limit)
        if action == "time_exceeded":
            response = build_time_exceeded(responder, probe.src, packet)
        elif action == "unreachable":
            response = build_dest_unreach(responder, probe.src, code, packet)
        elif action == "reply":
            response = self._reply(probe, responder, rng)
        else:
            response = None
        if response is None:
            self.diagnostics["silent"] += 1
            return list()
        return [(response, clock.now + self._latency(rng), responder)]

    def deliver(self, packet: bytes, clock: Optional[VirtualClock] = None) \
            -> List[Tuple[bytes, float]]:
        """
        Computes the network's answer to one probe
        :param packet: probe bytes
        :param clock: clock stamping the arrival; defaults to the network's
        :returns: list of (response bytes, arrival time)
        """
        with self._lock:
            return [(data, at) for data, at, _ in
                    self._deliver(packet, clock or self.clock)]


def build_topology(spec: Union[TopologySpec, dict]) -> SimNetwork:
    """
    Builds a simulated network from a topology
    :param spec: TopologySpec or its dict form
    :raises TopologyError: when the topology violates its invariants
    """
    if not isinstance(spec, TopologySpec):
        spec = validate_topology(spec)
    return SimNetwork(spec)
