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

from dataclasses import dataclass, field
from enum import Enum
from hashlib import blake2b
from typing import Dict, Iterable, List, Optional, Sequence, Set, Tuple, \
    Union

from neon_utils.logger import LOG
from pydantic import BaseModel, Field, ValidationError

from periscan.engine import ProbeResponse, Scanner
from periscan.prefix import LengthClass, Prefix, classify_length, contains
from periscan.targets import TargetSpace, iter_targets
from periscan.utils.config import periscan_section
from periscan.utils.constants import DEFAULT_CANDIDATE_BUDGET, \
    DEFAULT_CHILD_LEN, DEFAULT_EXPLORATORY_BUDGET, DEFAULT_HOP_LIMIT, \
    DEFAULT_TAU, MAX_SCAN_LENGTH, MIN_SCAN_LENGTH
from periscan.utils.exceptions import BackendError, ChildLengthError, \
    ConfigurationError, ForeignSourceError


class RgpsConfig(BaseModel):
    tau: float = Field(default=DEFAULT_TAU, gt=0)
    exploratory_budget: int = Field(default=DEFAULT_EXPLORATORY_BUDGET, ge=1)
    child_len: int = Field(default=DEFAULT_CHILD_LEN, ge=MIN_SCAN_LENGTH,
                           le=MAX_SCAN_LENGTH)
    candidate_budget: int = Field(default=DEFAULT_CANDIDATE_BUDGET, ge=1)
    hop_limit: int = Field(default=DEFAULT_HOP_LIMIT, ge=1, le=255)

    @classmethod
    def from_config(cls, config: Optional[dict] = None, **overrides) \
            -> "RgpsConfig":
        values = dict(periscan_section(config).get("rgps", dict()))
        values.update({k: v for k, v in overrides.items() if v is not None})
        try:
            return cls.model_validate(values)
        except ValidationError as e:
            raise ConfigurationError(f"Invalid RGPS configuration: {e}") \
                from e


class RejectReason(str, Enum):
    TOO_LONG = "TooLong"
    SILENT_TIMEOUT = "SilentTimeout"
    NO_ACTIVE_CHILDREN = "NoActiveChildren"


@dataclass(frozen=True)
class FireAt:
    at: float


@dataclass(frozen=True)
class NeverFires:
    pass


NEVER_FIRES = NeverFires()


@dataclass
class RgpsOutcome:
    good: Set[Prefix] = field(default_factory=set)
    rejected: List[Tuple[Prefix, RejectReason]] = field(default_factory=list)
    derived: Dict[Prefix, List[Prefix]] = field(default_factory=dict)
    # Devices seen while scanning, kept for early-stopped candidates too
    responses: List[ProbeResponse] = field(default_factory=list)
    error: Optional[BaseException] = None

    @property
    def reasons(self) -> Dict[Prefix, RejectReason]:
        return dict(self.rejected)


class SilenceWatch:
    """
    Early-stop predicate: true once the scan clock ran `tau` seconds past
    the last response (or past the scan start)
    """

    def __init__(self, tau: float, start: float):
        self.tau = tau
        self.last = start

    def observe(self, instant: float):
        self.last = max(self.last, instant)

    def __call__(self, now: float) -> bool:
        return now - self.last > self.tau


def silence_monitor(response_times: Sequence[float], scan_clock: float,
                    tau: float) -> Union[FireAt, NeverFires]:
    """
    Finds the first silence longer than `tau`
    :param response_times: sorted response instants, relative to scan start
    :param scan_clock: scan duration
    :param tau: tolerated silence
    :returns: FireAt(last event before the gap + tau), or NEVER_FIRES
    """
    last = 0.0
    for instant in response_times:
        if instant - last > tau:
            return FireAt(last + tau)
        last = instant
    if scan_clock - last > tau:
        return FireAt(last + tau)
    return NEVER_FIRES


def derive_active_subprefixes(responses: Iterable[ProbeResponse],
                              parent: Prefix, child_len: int) -> List[Prefix]:
    """
    Maps response sources to the children of `parent` that hold them
    :param responses: responses of an exploratory scan of `parent`
    :param parent: explored prefix
    :param child_len: length of the derived children
    :returns: distinct children in ascending order
    :raises ForeignSourceError: if a source lies outside `parent`
    """
    if child_len < parent.length:
        raise ChildLengthError(f"child_len={child_len} is shorter than "
                               f"parent length={parent.length}")
    mask = ((1 << 128) - 1) ^ ((1 << (128 - child_len)) - 1)
    children = set()
    for response in responses:
        if response.source is None:
            continue
        if not contains(parent, response.source):
            raise ForeignSourceError(f"source={response.source} outside "
                                     f"parent={parent}")
        children.add(Prefix(bits=int(response.source) & mask,
                            length=child_len, meta=parent.meta))
    return sorted(children)


def prefix_seed(seed: int, prefix: Prefix, label: bytes) -> int:
    digest = blake2b(label + prefix.bits.to_bytes(16, "big") +
                     bytes([prefix.length]),
                     key=seed.to_bytes(8, "big"), digest_size=8).digest()
    return int.from_bytes(digest, "big")


def _explore(parent: Prefix, cfg: RgpsConfig,
             scanner: Scanner) -> List[ProbeResponse]:
    seed = prefix_seed(scanner.config.seed, parent, b"explore")
    targets = iter_targets(TargetSpace([parent]), seed,
                           limit=cfg.exploratory_budget)
    inside = list()
    foreign = 0
    for response in scanner.echo(targets, cfg.hop_limit):
        if response.is_timeout:
            continue
        if contains(parent, response.source):
            inside.append(response)
        else:
            foreign += 1
    if foreign:
        LOG.info(f"Ignored responses from outside parent={parent}|"
                 f"count={foreign}")
    return inside


def _scan_candidate(candidate: Prefix, cfg: RgpsConfig, scanner: Scanner) \
        -> Tuple[Union[FireAt, NeverFires], List[ProbeResponse]]:
    start = scanner.now()
    watch = SilenceWatch(cfg.tau, start)
    seed = prefix_seed(scanner.config.seed, candidate, b"candidate")
    targets = iter_targets(TargetSpace([candidate]), seed,
                           limit=cfg.candidate_budget)
    responses = list()
    for response in scanner.echo(targets, cfg.hop_limit, stop_when=watch):
        if response.is_timeout:
            continue
        watch.observe(response.received_at)
        responses.append(response)
    if not responses:
        # The budget can run out before `tau` does; a candidate that never
        # answered stays silent from the scan start
        LOG.debug(f"No responses from prefix={candidate}|"
                  f"elapsed={scanner.now() - start:.1f}")
        return FireAt(cfg.tau), responses
    times = [r.received_at - start for r in responses]
    return silence_monitor(times, scanner.now() - start, cfg.tau), responses


def select_good_prefixes(pool: Sequence[Prefix], cfg: RgpsConfig,
                         scanner: Scanner) -> RgpsOutcome:
    """
    Filters an announced-prefix pool into prefixes worth a full scan:
    lengths /28 to /48 are scanned as they are, shorter prefixes are
    explored and replaced by their active children, longer ones skipped.
    A candidate silent for `tau` seconds of scan clock is rejected, and so
    is one whose whole candidate budget drew no response.
    :param pool: announced prefixes
    :param cfg: selection parameters
    :param scanner: scan capability
    :returns: RgpsOutcome; `error` is set when the backend failed midway
    """
    if not pool:
        raise ValueError("Prefix pool is empty")
    outcome = RgpsOutcome()
    try:
        for prefix in pool:
            length_class = classify_length(prefix)
            if length_class == LengthClass.TOO_LONG:
                LOG.debug(f"Skipping prefix={prefix}|reason=TooLong")
                outcome.rejected.append((prefix, RejectReason.TOO_LONG))
                continue
            if length_class == LengthClass.IN_RANGE:
                candidates = [prefix]
            else:
                explored = _explore(prefix, cfg, scanner)
                outcome.responses.extend(explored)
                candidates = derive_active_subprefixes(explored, prefix,
                                                       cfg.child_len)
                outcome.derived[prefix] = candidates
                LOG.info(f"Explored prefix={prefix}|responses={len(explored)}"
                         f"|children={len(candidates)}")
                if not candidates:
                    outcome.rejected.append(
                        (prefix, RejectReason.NO_ACTIVE_CHILDREN))
                    continue
            for candidate in candidates:
                verdict, responses = _scan_candidate(candidate, cfg, scanner)
                outcome.responses.extend(responses)
                if isinstance(verdict, FireAt):
                    LOG.info(f"Candidate silent prefix={candidate}|"
                             f"at={verdict.at:.1f}|"
                             f"responses={len(responses)}")
                    outcome.rejected.append((candidate,
                                             RejectReason.SILENT_TIMEOUT))
                else:
                    outcome.good.add(candidate)
    except BackendError as e:
        LOG.exception(f"Prefix selection aborted: {e}")
        outcome.error = e
    return outcome
