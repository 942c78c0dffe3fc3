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

from collections import defaultdict
from dataclasses import dataclass
from enum import Enum
from typing import Callable, Dict, Iterable, Iterator, List, Optional

from neon_utils.logger import LOG
from pydantic import BaseModel, Field, ValidationError, model_validator

from periscan.engine import ProbeResponse, Scanner
from periscan.prefix import Address, slash64_of
from periscan.utils.config import periscan_section
from periscan.utils.constants import DEFAULT_LOOP_HOP_LIMIT, \
    DEFAULT_LOOP_INCREMENT, DEFAULT_LOOP_TRIALS, DEFAULT_UNASSIGNED_IID
from periscan.utils.exceptions import BackendError, ConfigurationError
from periscan.wire import ICMP_DEST_UNREACH, ICMP_ECHO_REPLY, \
    ICMP_TIME_EXCEEDED

_IID_MASK = (1 << 64) - 1


class IcmpCategory(str, Enum):
    DESTINATION_UNREACHABLE = "DestinationUnreachable"
    TIME_EXCEEDED = "TimeExceeded"
    ECHO_REPLY = "EchoReply"
    OTHER = "Other"


@dataclass(frozen=True)
class IcmpClass:
    category: IcmpCategory
    icmp_type: int
    icmp_code: int


def classify_icmp(icmp_type: int, icmp_code: int) -> IcmpClass:
    if icmp_type == ICMP_DEST_UNREACH:
        category = IcmpCategory.DESTINATION_UNREACHABLE
    elif icmp_type == ICMP_TIME_EXCEEDED:
        category = IcmpCategory.TIME_EXCEEDED
    elif icmp_type == ICMP_ECHO_REPLY:
        category = IcmpCategory.ECHO_REPLY
    else:
        category = IcmpCategory.OTHER
    return IcmpClass(category=category, icmp_type=icmp_type,
                     icmp_code=icmp_code)


class Verdict(str, Enum):
    CONFIRMED = "Confirmed"
    NOT_LOOPING = "NotLooping"
    INCONCLUSIVE = "Inconclusive"


def same_slash64(device: Address, iid: int) -> Address:
    """
    Constant interface identifier inside the device's own /64
    """
    target = Address(slash64_of(device).bits | (iid & _IID_MASK))
    if target == device:
        target = Address(int(target) ^ 1)
    return target


def delegated_prefix(device: Address, iid: int) -> Address:
    """
    Constant interface identifier inside the last /64 of the device's /56,
    where CPEs usually delegate downstream subnets
    """
    slash56 = int(device) >> 72 << 72
    target = Address(slash56 | (0xFF << 64) | (iid & _IID_MASK))
    if target == device:
        target = Address(int(target) ^ 1)
    return target


TARGET_STRATEGIES: Dict[str, Callable[[Address, int], Address]] = {
    "same_slash64": same_slash64,
    "delegated_prefix": delegated_prefix,
}


class LoopProbePlan(BaseModel):
    initial_hop_limit: int = Field(default=DEFAULT_LOOP_HOP_LIMIT, ge=1,
                                   le=254)
    increment: int = Field(default=DEFAULT_LOOP_INCREMENT, ge=1, le=254)
    trials: int = Field(default=DEFAULT_LOOP_TRIALS, ge=1)
    target_strategy: str = "same_slash64"
    unassigned_iid: int = Field(default=DEFAULT_UNASSIGNED_IID, ge=0,
                                le=_IID_MASK)

    @model_validator(mode="after")
    def check_plan(self) -> "LoopProbePlan":
        if self.initial_hop_limit + self.increment > 255:
            raise ValueError("initial_hop_limit + increment exceeds 255")
        if self.target_strategy not in TARGET_STRATEGIES:
            raise ValueError(f"unknown target_strategy="
                             f"{self.target_strategy}")
        return self

    @property
    def confirm_hop_limit(self) -> int:
        return self.initial_hop_limit + self.increment

    @classmethod
    def from_config(cls, config: Optional[dict] = None, **overrides) \
            -> "LoopProbePlan":
        values = dict(periscan_section(config).get("loops", dict()))
        values.update({k: v for k, v in overrides.items() if v is not None})
        try:
            return cls.model_validate(values)
        except ValidationError as e:
            raise ConfigurationError(f"Invalid loop plan: {e}") from e


class LoopObservation(BaseModel):
    hop_limit_sent: int
    icmp_type: int
    icmp_code: int
    reporter: Address


class LoopEvidence(BaseModel):
    device: Address
    target: Address
    observations: List[LoopObservation] = Field(default_factory=list)
    verdict: Verdict = Verdict.INCONCLUSIVE
    error: Optional[str] = None


def choose_unassigned_target(device: Address,
                             strategy: str = "same_slash64",
                             iid: int = DEFAULT_UNASSIGNED_IID) -> Address:
    """
    Picks an address the device routes for but nobody holds
    :param device: device under test
    :param strategy: name in TARGET_STRATEGIES
    :param iid: constant interface identifier
    :returns: target address, never equal to `device`
    """
    return TARGET_STRATEGIES[strategy](device, iid)


def _observe(response: ProbeResponse, hop_limit: int) \
        -> Optional[LoopObservation]:
    if response.is_timeout or response.icmp_type is None:
        return None
    return LoopObservation(hop_limit_sent=hop_limit,
                           icmp_type=response.payload.icmp_type,
                           icmp_code=response.payload.icmp_code,
                           reporter=response.source)


def _category(observation: Optional[LoopObservation]) \
        -> Optional[IcmpCategory]:
    if observation is None:
        return None
    return classify_icmp(observation.icmp_type,
                         observation.icmp_code).category


def _probe_round(targets: List[Address], hop_limit: int, scanner: Scanner) \
        -> Dict[Address, Optional[LoopObservation]]:
    observed = {target: None for target in targets}
    for response in scanner.echo(targets, hop_limit):
        observed[response.target] = _observe(response, hop_limit)
    return observed


def detect_loops(devices: Iterable[Address], plan: LoopProbePlan,
                 scanner: Scanner) -> Iterator[LoopEvidence]:
    """
    Probes every device for a forwarding loop toward an unassigned target.
    All devices share each scan round; per device the h then h+increment
    order holds in every trial.

    Time Exceeded at both hop limits is the whole loop signature. A
    loop-free path longer than h+increment hops expires both probes in
    transit and is reported Confirmed too; the distinct reporters in
    `observations` are the only hint of such a path.
    :param devices: devices under test
    :param plan: hop limits, trials and target strategy
    :param scanner: scan capability
    :returns: one LoopEvidence per device, in input order
    """
    devices = list(dict.fromkeys(devices))
    targets = {device: choose_unassigned_target(device, plan.target_strategy,
                                                plan.unassigned_iid)
               for device in devices}
    by_target = defaultdict(list)
    for device, target in targets.items():
        by_target[target].append(device)
    evidence = {device: LoopEvidence(device=device, target=target)
                for device, target in targets.items()}
    pending = list(by_target)
    try:
        for trial in range(plan.trials):
            if not pending:
                break
            first = _probe_round(pending, plan.initial_hop_limit, scanner)
            confirm = list()
            for target in pending:
                observation = first[target]
                category = _category(observation)
                for device in by_target[target]:
                    if observation is not None:
                        evidence[device].observations.append(observation)
                    if category in (IcmpCategory.ECHO_REPLY,
                                    IcmpCategory.DESTINATION_UNREACHABLE):
                        evidence[device].verdict = Verdict.NOT_LOOPING
                if category == IcmpCategory.TIME_EXCEEDED:
                    confirm.append(target)
            second = _probe_round(confirm, plan.confirm_hop_limit, scanner) \
                if confirm else dict()
            still_looping = list()
            for target in confirm:
                observation = second[target]
                for device in by_target[target]:
                    if observation is not None:
                        evidence[device].observations.append(observation)
                if _category(observation) == IcmpCategory.TIME_EXCEEDED:
                    still_looping.append(target)
            LOG.debug(f"Loop trial={trial}|probed={len(pending)}|"
                      f"first_te={len(confirm)}|"
                      f"confirmed={len(still_looping)}")
            pending = still_looping
        for target in pending:
            for device in by_target[target]:
                evidence[device].verdict = Verdict.CONFIRMED
    except BackendError as e:
        LOG.exception(f"Loop probing aborted: {e}")
        for item in evidence.values():
            if item.verdict != Verdict.NOT_LOOPING:
                item.verdict = Verdict.INCONCLUSIVE
                item.error = str(e)
    for device in devices:
        yield evidence[device]


def probe_for_loop(device: Address, plan: LoopProbePlan,
                   scanner: Scanner) -> LoopEvidence:
    return next(detect_loops([device], plan, scanner))
