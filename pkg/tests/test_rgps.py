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

import unittest

from random import Random

from periscan.engine import Scanner
from periscan.prefix import Address, parse_prefix
from periscan.rgps import NEVER_FIRES, FireAt, RejectReason, RgpsConfig, \
    derive_active_subprefixes, prefix_seed, select_good_prefixes, \
    silence_monitor
from periscan.simnet import SimNetwork
from periscan.utils.config import ScanConfig
from periscan.utils.exceptions import BackendError, ChildLengthError, \
    ConfigurationError, ForeignSourceError

from .test_utils.utils.factory import RecordFactory, TopologyFactory

FAST = dict(tau=10.0, exploratory_budget=256, candidate_budget=200)


class FailingNetwork(SimNetwork):
    def __init__(self, spec, fail_after: int):
        super().__init__(spec)
        self.fail_after = fail_after
        self.sends = 0

    def send(self, data, destination):
        self.sends += 1
        if self.sends > self.fail_after:
            raise BackendError("interface down")
        super().send(data, destination)


def _silence_oracle(times, scan_clock: int, tau: int):
    """
    Walks the scan clock one second at a time
    """
    last = 0
    pending = list(times)
    for now in range(scan_clock + 1):
        while pending and pending[0] < now:
            last = pending.pop(0)
        if now - last > tau:
            return FireAt(last + tau)
    return NEVER_FIRES


def _generated_pool(rng: Random, index: int):
    """
    A pool of four /40s (populated, silent behind a router or unrouted), a
    /56 and a /24 with zero to three populated /28 children
    :returns: topology, pool texts, expected good set, expected reasons
    """
    routers = list()
    pool = list()
    good = set()
    reasons = dict()

    def router(prefix: str, behavior: str):
        routers.append({"id": f"r{len(routers)}", "prefix": prefix,
                        "distance": rng.randint(2, 10),
                        "behavior": behavior})

    slots = rng.sample(range(256), 5)
    for slot in slots[:4]:
        prefix = str(parse_prefix(f"2001:{0x100 + index:x}:{slot:02x}00::/40"))
        pool.append(prefix)
        kind = rng.choice(("populated", "forward", "unrouted"))
        if kind == "populated":
            router(prefix, "unreachable")
            good.add(prefix)
        else:
            if kind == "forward":
                router(prefix, "forward")
            reasons[prefix] = RejectReason.SILENT_TIMEOUT
    too_long = str(parse_prefix(
        f"2001:{0x100 + index:x}:{slots[4]:02x}00:100::/56"))
    pool.append(too_long)
    reasons[too_long] = RejectReason.TOO_LONG
    short = f"2c{index:02x}::/24"
    pool.append(short)
    children = rng.sample(range(16), rng.randint(0, 3))
    for child in children:
        prefix = str(parse_prefix(f"2c{index:02x}:{child:x}0::/28"))
        router(prefix, "unreachable")
        good.add(prefix)
    if not children:
        reasons[short] = RejectReason.NO_ACTIVE_CHILDREN
    rng.shuffle(pool)
    return {"seed": index, "routers": routers}, pool, good, reasons


class TestSilenceMonitor(unittest.TestCase):

    def test_never_fires_while_responses_flow(self):
        self.assertIs(silence_monitor([1.0, 2.0, 3.0], 4.0, 5.0), NEVER_FIRES)

    def test_fires_on_gap(self):
        self.assertEqual(silence_monitor([1.0, 10.0], 11.0, 5.0), FireAt(6.0))

    def test_fires_without_responses(self):
        self.assertEqual(silence_monitor([], 6.0, 5.0), FireAt(5.0))
        self.assertIs(silence_monitor([], 5.0, 5.0), NEVER_FIRES)

    def test_fires_on_trailing_silence(self):
        self.assertEqual(silence_monitor([1.0], 7.5, 5.0), FireAt(6.0))

    def test_random_event_sequences(self):
        rng = Random(120)
        for _ in range(10000):
            scan_clock = rng.randint(0, 200)
            times = sorted(rng.randint(0, scan_clock)
                           for _ in range(rng.randint(0, 12)))
            tau = rng.randint(1, 60)
            self.assertEqual(silence_monitor(times, scan_clock, tau),
                             _silence_oracle(times, scan_clock, tau),
                             f"times={times} clock={scan_clock} tau={tau}")


class TestDerivation(unittest.TestCase):
    parent = RecordFactory.prefix("2a00::/24", rir="LACNIC")

    def test_children_of_sources(self):
        responses = [RecordFactory.response("2a00:10::1"),
                     RecordFactory.response("2a00:1f::9"),
                     RecordFactory.response("2a00:70::1"),
                     RecordFactory.response("2a00:10::1")]
        children = derive_active_subprefixes(responses, self.parent, 28)
        self.assertEqual([str(c) for c in children],
                         ["2a00:10::/28", "2a00:70::/28"])
        self.assertTrue(all(c.meta.rir == self.parent.meta.rir
                            for c in children))

    def test_foreign_source(self):
        with self.assertRaises(ForeignSourceError):
            derive_active_subprefixes([RecordFactory.response("2b00::1")],
                                      self.parent, 28)

    def test_short_child(self):
        with self.assertRaises(ChildLengthError):
            derive_active_subprefixes([], self.parent, 20)

    def test_prefix_seed(self):
        a = prefix_seed(1, self.parent, b"explore")
        self.assertEqual(a, prefix_seed(1, self.parent, b"explore"))
        self.assertNotEqual(a, prefix_seed(1, self.parent, b"candidate"))
        self.assertNotEqual(a, prefix_seed(2, self.parent, b"explore"))


class TestRgpsConfig(unittest.TestCase):

    def test_defaults_and_overrides(self):
        cfg = RgpsConfig.from_config({"PERISCAN": {"rgps": {"tau": 60}}},
                                     child_len=32, candidate_budget=None)
        self.assertEqual(cfg.tau, 60)
        self.assertEqual(cfg.child_len, 32)
        self.assertEqual(cfg.candidate_budget, 65536)

    def test_invalid(self):
        with self.assertRaises(ConfigurationError):
            RgpsConfig.from_config({"PERISCAN": {}}, child_len=20)
        with self.assertRaises(ConfigurationError):
            RgpsConfig.from_config({"PERISCAN": {}}, tau=0)


class TestSelectGoodPrefixes(unittest.TestCase):

    def setUp(self):
        self.pool = [
            RecordFactory.prefix("2001:db8:a00::/40", rir="APNIC"),
            RecordFactory.prefix("2001:db8:c00::/40", rir="ARIN"),
            RecordFactory.prefix("2a00::/24", rir="LACNIC"),
            RecordFactory.prefix("2001:db8:a00:100::/56", rir="APNIC"),
        ]
        self.cfg = RgpsConfig(**FAST)

    def test_selection(self):
        scanner = TopologyFactory.scanner("rgps", rate=10)
        outcome = select_good_prefixes(self.pool, self.cfg, scanner)

        self.assertIsNone(outcome.error)
        self.assertEqual(sorted(str(p) for p in outcome.good),
                         ["2001:db8:a00::/40", "2a00:10::/28",
                          "2a00:70::/28"])
        self.assertEqual([(str(p), r) for p, r in outcome.rejected],
                         [("2001:db8:c00::/40", RejectReason.SILENT_TIMEOUT),
                          ("2001:db8:a00:100::/56", RejectReason.TOO_LONG)])
        self.assertEqual([str(p) for p in outcome.derived[self.pool[2]]],
                         ["2a00:10::/28", "2a00:70::/28"])
        derived = [p for p in outcome.good if p.length == 28]
        self.assertTrue(all(p.meta.rir.value == "LACNIC" for p in derived))
        sources = {r.source for r in outcome.responses}
        self.assertIn(Address("2001:db8:a00::1"), sources)
        self.assertIn(Address("2a00:70::1"), sources)

    def test_selection_is_deterministic(self):
        def run():
            scanner = TopologyFactory.scanner("rgps", rate=10)
            outcome = select_good_prefixes(self.pool[:3], self.cfg, scanner)
            return sorted(outcome.good), outcome.rejected, \
                [(r.source, r.received_at) for r in outcome.responses]
        self.assertEqual(run(), run())

    def test_silent_candidate_stops_early(self):
        scanner = TopologyFactory.scanner("rgps", rate=10)
        outcome = select_good_prefixes(self.pool[1:2], self.cfg, scanner)
        self.assertEqual(outcome.reasons,
                         {self.pool[1]: RejectReason.SILENT_TIMEOUT})
        stats = scanner.history[-1]
        self.assertTrue(stats.stopped_early)
        self.assertLess(stats.targets, self.cfg.candidate_budget)

    def test_no_active_children(self):
        scanner = TopologyFactory.scanner("rgps", rate=10)
        empty = RecordFactory.prefix("2b00::/24", rir="RIPE")
        outcome = select_good_prefixes(
            [empty], RgpsConfig(tau=10.0, exploratory_budget=32), scanner)
        self.assertEqual(outcome.rejected,
                         [(empty, RejectReason.NO_ACTIVE_CHILDREN)])
        self.assertEqual(outcome.derived[empty], [])

    def test_silent_candidate_at_high_rate(self):
        # The whole candidate budget is sent and answered well within tau
        scanner = TopologyFactory.scanner("rgps", rate=100_000)
        cfg = RgpsConfig(tau=120.0, candidate_budget=200)
        quiet = RecordFactory.prefix("2001:db8:c00::/40", rir="ARIN")
        unrouted = RecordFactory.prefix("2c0f:f000::/32", rir="AFRINIC")
        outcome = select_good_prefixes([quiet, unrouted], cfg, scanner)
        self.assertEqual(outcome.good, set())
        self.assertEqual(outcome.rejected,
                         [(quiet, RejectReason.SILENT_TIMEOUT),
                          (unrouted, RejectReason.SILENT_TIMEOUT)])
        self.assertLess(scanner.now(), cfg.tau)
        self.assertFalse(any(stats.stopped_early
                             for stats in scanner.history))

    def test_generated_pools(self):
        rng = Random(2025)
        cfg = RgpsConfig(tau=10.0, exploratory_budget=256,
                         candidate_budget=32)
        for index in range(20):
            topology, pool, good, reasons = _generated_pool(rng, index)
            scanner = TopologyFactory.scanner(topology)
            outcome = select_good_prefixes(
                [RecordFactory.prefix(p) for p in pool], cfg, scanner)
            self.assertIsNone(outcome.error)
            self.assertEqual({str(p) for p in outcome.good}, good,
                             f"pool={index}")
            self.assertEqual({str(p): r for p, r in outcome.rejected},
                             reasons, f"pool={index}")

    def test_empty_pool(self):
        scanner = TopologyFactory.scanner("rgps")
        with self.assertRaises(ValueError):
            select_good_prefixes([], self.cfg, scanner)

    def test_backend_failure_keeps_partial_result(self):
        network = FailingNetwork(TopologyFactory.load("rgps"),
                                 fail_after=250)
        scanner = Scanner(network, ScanConfig(rate=10, timeout=2.0,
                                              retries=0))
        outcome = select_good_prefixes(self.pool, self.cfg, scanner)
        self.assertIsInstance(outcome.error, BackendError)
        self.assertEqual({str(p) for p in outcome.good},
                         {"2001:db8:a00::/40"})


if __name__ == '__main__':
    unittest.main()
