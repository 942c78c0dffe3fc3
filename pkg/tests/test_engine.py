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

import time
import unittest

from queue import Empty, Queue
from threading import Lock
from typing import List, Optional, Tuple

from periscan.engine import CorrelationTable, EchoProbe, OutstandingProbe, \
    ProbeSpec, ScanBackend, ScanEngine, Scanner, SynProbe, Unsolicited, \
    match_response
from periscan.prefix import Address
from periscan.ratelimit import RateLimit, TokenBucket
from periscan.utils.config import ScanConfig
from periscan.utils.exceptions import BackendError
from periscan.wire import ICMP_ECHO_REPLY, Datagram, build_echo_reply, decode

from .test_utils.utils.factory import TopologyFactory

PROBER = Address("100::ffff")


class WallClockBackend(ScanBackend):
    """
    Threaded backend on the wall clock that answers echo requests to
    `responsive` addresses and records send instants
    """

    def __init__(self, responsive: Tuple[Address, ...] = (),
                 fail_after: Optional[int] = None):
        self.responsive = set(responsive)
        self.fail_after = fail_after
        self.sent: List[float] = list()
        self._replies: Queue = Queue()
        self._lock = Lock()

    def open(self, config: ScanConfig) -> None:
        pass

    @property
    def source_address(self) -> Address:
        return PROBER

    def send(self, data: bytes, destination: Address) -> None:
        with self._lock:
            if self.fail_after is not None and \
                    len(self.sent) >= self.fail_after:
                raise BackendError("socket closed")
            self.sent.append(time.monotonic())
        if destination in self.responsive:
            self._replies.put((build_echo_reply(decode(data), destination),
                               destination))

    def receive(self, max_wait: float):
        try:
            return self._replies.get(timeout=max_wait)
        except Empty:
            return None

    def now(self) -> float:
        return time.monotonic()

    def sleep(self, seconds: float) -> None:
        time.sleep(seconds)

    def exchange(self, destination, port, transport, request, read_limit,
                 timeout):
        return None


def _targets(count: int, base: str = "2001:db8::") -> List[Address]:
    return [Address(int(Address(base)) + i) for i in range(count)]


class TestTokenBucket(unittest.TestCase):

    def test_paces_virtual_clock(self):
        now = [0.0]
        bucket = TokenBucket(10, clock=lambda: now[0])
        self.assertTrue(bucket.consume())
        self.assertFalse(bucket.consume())
        self.assertAlmostEqual(bucket.delay(), 0.1)
        now[0] += 0.1
        self.assertTrue(bucket.consume())

    def test_acquire_sleeps_through_clock(self):
        now = [0.0]

        def sleep(seconds):
            now[0] += seconds

        bucket = TokenBucket(100, clock=lambda: now[0])
        for _ in range(101):
            bucket.acquire(sleep)
        self.assertAlmostEqual(now[0], 1.0, places=6)

    def test_no_burst_after_idle(self):
        now = [0.0]
        bucket = TokenBucket(50, clock=lambda: now[0])
        now[0] = 100.0
        self.assertTrue(bucket.consume())
        self.assertFalse(bucket.consume())


class TestMatchResponse(unittest.TestCase):

    def setUp(self):
        self.table = CorrelationTable(ident=0x1234, secret=b"s" * 16)
        self.target = Address("2001:db8::7")
        self.tag = self.table.allocate()
        self.entry = OutstandingProbe(tag=self.tag, target=self.target,
                                      attempt=0, sent_at=0.0, deadline=5.0,
                                      hop_limit=64)
        self.entry.cookie = self.table.cookie(self.tag, self.target)
        self.table.insert(self.entry)

    def _reply(self, cookie: int, tag: Optional[int] = None) -> bytes:
        tag = self.tag if tag is None else tag
        ident, seq = self.table.echo_fields(tag)
        request = Datagram(kind="echo_request", src=PROBER, dst=self.target,
                           hop_limit=64, ident=ident, seq=seq,
                           data=tag.to_bytes(4, "big") +
                           cookie.to_bytes(4, "big"))
        return build_echo_reply(request, self.target)

    def test_matches_echo_reply(self):
        response = match_response(self._reply(self.entry.cookie),
                                  self.target, self.table, now=0.25)
        self.assertNotIsInstance(response, Unsolicited)
        self.assertEqual(response.target, self.target)
        self.assertEqual(response.source, self.target)
        self.assertEqual(response.icmp_type, ICMP_ECHO_REPLY)
        self.assertEqual(response.rtt, 0.25)
        self.assertEqual(response.probe_id, f"{self.tag:08x}.0")
        self.assertTrue(self.table.idle)

    def test_duplicate_is_unsolicited(self):
        raw = self._reply(self.entry.cookie)
        match_response(raw, self.target, self.table)
        duplicate = match_response(raw, self.target, self.table)
        self.assertIsInstance(duplicate, Unsolicited)
        self.assertEqual(duplicate.reason, "unknown_tag")

    def test_forged_cookie(self):
        forged = match_response(self._reply(self.entry.cookie ^ 1),
                                self.target, self.table)
        self.assertIsInstance(forged, Unsolicited)
        self.assertEqual(forged.reason, "cookie_mismatch")
        self.assertEqual(len(self.table), 1)

    def test_unknown_tag(self):
        stray = match_response(self._reply(0, tag=99), self.target,
                               self.table)
        self.assertIsInstance(stray, Unsolicited)
        self.assertEqual(stray.reason, "unknown_tag")

    def test_garbage(self):
        garbage = match_response(b"\x60\x00", self.target, self.table)
        self.assertIsInstance(garbage, Unsolicited)
        self.assertEqual(garbage.reason, "truncated")

    def test_expire_and_retry(self):
        self.assertEqual(self.table.expire(4.0, max_attempts=2), [])
        self.assertEqual(self.table.expire(5.0, max_attempts=2), [])
        self.assertEqual(self.table.take_retry(), (self.target, 1))
        self.assertTrue(self.table.idle)


class TestSimulatedScan(unittest.TestCase):

    def test_echo_outcomes_are_conserved(self):
        scanner = TopologyFactory.scanner("hlev", retries=1)
        hosts = _targets(3, "2001:db8:11::1")
        silent = _targets(4, "2001:db8:99::1")
        responses = list(scanner.echo(hosts + silent))
        stats = scanner.history[-1]

        self.assertEqual(len(responses), 7)
        self.assertEqual({r.target for r in responses}, set(hosts + silent))
        replies = [r for r in responses if not r.is_timeout]
        self.assertEqual({r.source for r in replies}, set(hosts))
        self.assertTrue(all(r.icmp_type == ICMP_ECHO_REPLY for r in replies))
        self.assertEqual(stats.targets, 7)
        self.assertEqual(stats.matched, 3)
        self.assertEqual(stats.timeouts, 4)
        self.assertEqual(stats.retransmissions, 4)
        self.assertEqual(stats.sent, 11)
        self.assertTrue(stats.conserved)

    def test_rate_on_virtual_clock(self):
        scanner = TopologyFactory.scanner("hlev", rate=100)
        start = scanner.now()
        list(scanner.echo(_targets(12, "2001:db8:11::1")))
        # 12 sends at 100 pps are spaced 10 ms apart
        self.assertGreaterEqual(scanner.now() - start, 0.109)

    def test_syn_outcomes(self):
        scanner = TopologyFactory.scanner("hlev")
        targets = [Address("2001:db8:11::1"), Address("2001:db8:11::c"),
                   Address("2001:db8:99::1")]
        kinds = {r.target: r.payload.kind
                 for r in scanner.syn(targets, 11434)}
        self.assertEqual(kinds, {targets[0]: "syn_ack", targets[1]: "rst",
                                 targets[2]: "timeout"})

    def test_stop_when(self):
        scanner = TopologyFactory.scanner("hlev", rate=10)
        start = scanner.now()
        responses = list(scanner.echo(_targets(100, "2001:db8:99::1"),
                                      stop_when=lambda now: now - start > 1))
        stats = scanner.history[-1]
        self.assertTrue(stats.stopped_early)
        self.assertLess(stats.targets, 100)
        self.assertEqual(len(responses), stats.targets)
        self.assertTrue(stats.conserved)

    def test_app_request(self):
        scanner = TopologyFactory.scanner("hlev")
        response = scanner.request(Address("2001:db8:11::1"), 11434,
                                   b"GET / HTTP/1.1\r\nHost: x\r\n\r\n")
        self.assertEqual(response.payload.kind, "app")
        self.assertEqual(response.payload.status_line, "HTTP/1.1 200 OK")
        self.assertEqual(response.payload.body_prefix, b"Ollama is running")

        refused = scanner.request(Address("2001:db8:11::c"), 11434, b"")
        self.assertTrue(refused.is_timeout)

    def test_scans_are_reproducible(self):
        def run():
            scanner = TopologyFactory.scanner("loops")
            targets = _targets(5, "2001:db8:b00::1") + \
                _targets(5, "2001:db8:d00::1")
            return [(r.target, r.source, r.payload, r.received_at)
                    for r in scanner.echo(targets, hop_limit=8)]
        self.assertEqual(run(), run())


class TestThreadedScan(unittest.TestCase):

    def test_rate_limit_holds_on_wall_clock(self):
        backend = WallClockBackend()
        engine = ScanEngine(backend, RateLimit(max_pps=100))
        spec = ProbeSpec(kind=EchoProbe(), timeout=0.2, retries=0)
        responses = list(engine.run_scan(_targets(500), spec))

        self.assertEqual(len(responses), 500)
        self.assertTrue(all(r.is_timeout for r in responses))
        self.assertTrue(engine.stats.conserved)
        sent = sorted(backend.sent)
        self.assertEqual(len(sent), 500)
        window_start = 0
        busiest = 0
        for index, instant in enumerate(sent):
            while sent[window_start] <= instant - 1.0:
                window_start += 1
            busiest = max(busiest, index - window_start + 1)
        self.assertLessEqual(busiest, 105)

    def test_responses_are_matched(self):
        targets = _targets(20)
        backend = WallClockBackend(responsive=tuple(targets[:10]))
        scanner = Scanner(backend, ScanConfig(rate=1000, timeout=0.3,
                                              retries=0))
        responses = list(scanner.echo(targets))
        matched = [r for r in responses if not r.is_timeout]
        self.assertEqual({r.source for r in matched}, set(targets[:10]))
        self.assertEqual(len(responses), 20)
        self.assertTrue(scanner.last_stats.conserved)
        self.assertEqual(len(scanner.history), 1)

    def test_backend_failure_aborts(self):
        backend = WallClockBackend(fail_after=5)
        engine = ScanEngine(backend, RateLimit(max_pps=1000))
        spec = ProbeSpec(kind=SynProbe(port=80), timeout=0.2, retries=0)
        with self.assertRaises(BackendError):
            list(engine.run_scan(_targets(20), spec))
        self.assertEqual(engine.stats.error, "socket closed")
        self.assertEqual(engine.stats.sent, 5)


if __name__ == '__main__':
    unittest.main()
