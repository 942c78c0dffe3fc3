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

from periscan.engine import Scanner
from periscan.loops import IcmpCategory, LoopProbePlan, Verdict, \
    choose_unassigned_target, classify_icmp, delegated_prefix, \
    detect_loops, probe_for_loop
from periscan.prefix import Address, parse_prefix, slash64_of
from periscan.simnet import SimNetwork
from periscan.utils.config import ScanConfig
from periscan.utils.constants import DEFAULT_UNASSIGNED_IID
from periscan.utils.exceptions import BackendError, ConfigurationError
from periscan.wire import ICMP_DEST_UNREACH, ICMP_ECHO_REPLY, \
    ICMP_TIME_EXCEEDED

from .test_utils.utils.factory import TopologyFactory

LOOP_A = Address("2001:db8:b00::1")
LOOP_B = Address("2001:db8:bff::1")
UNREACHABLE = Address("2001:db8:d00::1")
QUIET = Address("2001:db8:f00::1")
END_HOST_CPE = Address("2001:db8:e00::1")


class BrokenNetwork(SimNetwork):
    def send(self, data, destination):
        raise BackendError("no route to prober")


def _loop_corpus_topology(distance: int, loop_size: int) -> dict:
    """
    A loop of `loop_size` routers entered `distance` hops away, plus a silent
    forwarder and an unreachable reply at the same distance
    """
    def prefix(offset: int) -> str:
        return f"2001:db8:{distance + offset:02x}00::/40"

    ids = [f"loop{k}" for k in range(loop_size)]
    offsets = (0x00, 0x40, 0x20)
    routers = [{"id": ids[k], "prefix": prefix(offsets[k]),
                "distance": distance, "behavior": "loop",
                "loop_with": ids[(k + 1) % loop_size]}
               for k in range(loop_size)]
    routers.append({"id": "quiet", "prefix": prefix(0x80),
                    "distance": distance, "behavior": "forward"})
    routers.append({"id": "unreach", "prefix": prefix(0xc0),
                    "distance": distance, "behavior": "unreachable",
                    "code": 3})
    return {"seed": distance, "routers": routers}


class TestTargets(unittest.TestCase):

    def test_same_slash64(self):
        target = choose_unassigned_target(LOOP_A)
        self.assertEqual(slash64_of(target), slash64_of(LOOP_A))
        self.assertEqual(int(target) & ((1 << 64) - 1),
                         DEFAULT_UNASSIGNED_IID)
        self.assertEqual(str(target), "2001:db8:b00::7a3e:5c1d:9b0f:4e62")

    def test_never_the_device(self):
        device = Address("2001:db8::7a3e:5c1d:9b0f:4e62")
        self.assertNotEqual(choose_unassigned_target(device), device)

    def test_delegated_prefix(self):
        target = choose_unassigned_target(LOOP_A, "delegated_prefix", 1)
        self.assertEqual(str(target), "2001:db8:b00:ff::1")
        self.assertEqual(delegated_prefix(LOOP_A, 1), target)


class TestPlan(unittest.TestCase):

    def test_defaults(self):
        plan = LoopProbePlan.from_config({"PERISCAN": {}})
        self.assertEqual(plan.initial_hop_limit, 32)
        self.assertEqual(plan.confirm_hop_limit, 34)
        self.assertEqual(plan.trials, 2)

    def test_invalid(self):
        with self.assertRaises(ConfigurationError):
            LoopProbePlan.from_config({"PERISCAN": {}}, initial_hop_limit=254,
                                      increment=2)
        with self.assertRaises(ConfigurationError):
            LoopProbePlan.from_config({"PERISCAN": {}},
                                      target_strategy="random")

    def test_classify(self):
        self.assertEqual(classify_icmp(ICMP_TIME_EXCEEDED, 0).category,
                         IcmpCategory.TIME_EXCEEDED)
        self.assertEqual(classify_icmp(ICMP_DEST_UNREACH, 3).category,
                         IcmpCategory.DESTINATION_UNREACHABLE)
        self.assertEqual(classify_icmp(ICMP_ECHO_REPLY, 0).category,
                         IcmpCategory.ECHO_REPLY)
        self.assertEqual(classify_icmp(2, 0).category, IcmpCategory.OTHER)


class TestDetectLoops(unittest.TestCase):

    def setUp(self):
        self.plan = LoopProbePlan()

    def test_verdicts(self):
        scanner = TopologyFactory.scanner("loops")
        devices = [LOOP_A, LOOP_B, UNREACHABLE, QUIET, END_HOST_CPE]
        evidence = list(detect_loops(devices, self.plan, scanner))

        self.assertEqual([e.device for e in evidence], devices)
        verdicts = {e.device: e.verdict for e in evidence}
        self.assertEqual(verdicts, {LOOP_A: Verdict.CONFIRMED,
                                    LOOP_B: Verdict.CONFIRMED,
                                    UNREACHABLE: Verdict.NOT_LOOPING,
                                    QUIET: Verdict.INCONCLUSIVE,
                                    END_HOST_CPE: Verdict.NOT_LOOPING})

    def test_confirmed_evidence(self):
        scanner = TopologyFactory.scanner("loops")
        evidence = probe_for_loop(LOOP_A, self.plan, scanner)
        self.assertEqual(evidence.verdict, Verdict.CONFIRMED)
        # Two trials of (h, h + increment)
        self.assertEqual([o.hop_limit_sent for o in evidence.observations],
                         [32, 34, 32, 34])
        self.assertTrue(all(o.icmp_type == ICMP_TIME_EXCEEDED
                            for o in evidence.observations))
        self.assertEqual({o.reporter for o in evidence.observations},
                         {LOOP_B})
        self.assertIsNone(evidence.error)

    def test_not_looping_stops_after_first_probe(self):
        scanner = TopologyFactory.scanner("loops")
        evidence = probe_for_loop(UNREACHABLE, self.plan, scanner)
        self.assertEqual(evidence.verdict, Verdict.NOT_LOOPING)
        self.assertEqual(len(evidence.observations), 1)
        self.assertEqual(evidence.observations[0].icmp_type,
                         ICMP_DEST_UNREACH)

    def test_single_time_exceeded_is_inconclusive(self):
        # The first hop limit expires at the router, the second one is refused
        scanner = TopologyFactory.scanner({"routers": [
            {"id": "edge", "prefix": "2001:db8::/32", "distance": 5,
             "behavior": "unreachable"}]})
        plan = LoopProbePlan(initial_hop_limit=5, increment=1, trials=1)
        evidence = probe_for_loop(Address("2001:db8::1"), plan, scanner)
        self.assertEqual(evidence.verdict, Verdict.INCONCLUSIVE)
        self.assertEqual([o.icmp_type for o in evidence.observations],
                         [ICMP_TIME_EXCEEDED, ICMP_DEST_UNREACH])

    def test_devices_sharing_a_target(self):
        scanner = TopologyFactory.scanner("loops")
        twin = Address("2001:db8:b00::2")
        evidence = list(detect_loops([LOOP_A, twin], self.plan, scanner))
        self.assertEqual([e.verdict for e in evidence],
                         [Verdict.CONFIRMED, Verdict.CONFIRMED])
        self.assertEqual(evidence[0].target, evidence[1].target)

    def test_backend_failure(self):
        scanner = Scanner(BrokenNetwork(TopologyFactory.load("loops")),
                          ScanConfig(timeout=2.0, retries=0))
        evidence = probe_for_loop(LOOP_A, self.plan, scanner)
        self.assertEqual(evidence.verdict, Verdict.INCONCLUSIVE)
        self.assertEqual(evidence.error, "no route to prober")


class TestLoopCorpus(unittest.TestCase):

    def test_loop_distances(self):
        for distance in range(1, 31):
            topology = _loop_corpus_topology(distance, 2 + distance % 2)
            members = [Address(parse_prefix(r["prefix"]).bits + 1)
                       for r in topology["routers"]]
            looping, quiet, unreachable = members[:-2], members[-2], \
                members[-1]
            for trials in (1, 2, 3):
                scanner = TopologyFactory.scanner(topology)
                plan = LoopProbePlan(trials=trials)
                verdicts = {e.device: e.verdict for e in
                            detect_loops(members, plan, scanner)}
                message = f"distance={distance} trials={trials}"
                for device in looping:
                    self.assertEqual(verdicts[device], Verdict.CONFIRMED,
                                     message)
                self.assertEqual(verdicts[quiet], Verdict.INCONCLUSIVE,
                                 message)
                self.assertEqual(verdicts[unreachable], Verdict.NOT_LOOPING,
                                 message)
                self.assertTrue(all(s.conserved for s in scanner.history))

    def test_path_longer_than_confirm_hop_limit(self):
        # Both hop limits expire on the way to a distant forwarder, which
        # reads as a loop; the reporters are distinct transit hops
        scanner = TopologyFactory.scanner({"routers": [
            {"id": "far", "prefix": "2001:db8:e00::/40", "distance": 40,
             "behavior": "forward"}]})
        evidence = probe_for_loop(Address("2001:db8:e00::1"),
                                  LoopProbePlan(trials=1), scanner)
        self.assertEqual(evidence.verdict, Verdict.CONFIRMED)
        self.assertEqual(len({o.reporter for o in evidence.observations}), 2)


if __name__ == '__main__':
    unittest.main()
