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

import csv
import io
import json

from dataclasses import dataclass, field
from enum import Enum
from os.path import join
from threading import Lock
from typing import Dict, Iterable, Iterator, List, Optional, Sequence, Set, \
    Tuple, Union

from neon_utils.logger import LOG
from pydantic import BaseModel, ConfigDict, Field, ValidationError, \
    field_validator, model_validator

from periscan.engine import Scanner
from periscan.prefix import Address
from periscan.utils.constants import HTTP_BODY_LIMIT, HTTP_READ_LIMIT, \
    RES_DIR
from periscan.utils.exceptions import BackendError
from periscan.utils.http import HttpResponse, build_request, parse_response

SIGNATURE_COLUMNS = ("tool", "port", "match1_field", "match1_value",
                     "match2_field", "match2_value", "confirm_path",
                     "confirm_kind")


class LlmTool(str, Enum):
    OLLAMA = "Ollama"
    LMSTUDIO = "LMStudio"
    GPT4ALL = "GPT4All"
    JANAI = "JanAi"
    VLLM = "VLLM"
    XINFERENCE = "Xinference"
    LOBECHAT = "LobeChat"


TOOL_PORTS: Dict[LlmTool, int] = {
    LlmTool.OLLAMA: 11434,
    LlmTool.LMSTUDIO: 1234,
    LlmTool.GPT4ALL: 4891,
    LlmTool.JANAI: 1337,
    LlmTool.VLLM: 8000,
    LlmTool.XINFERENCE: 9997,
    LlmTool.LOBECHAT: 3210,
}


class Stage(str, Enum):
    RESPONSE0 = "Response0"
    RESPONSE1 = "Response1"
    RESPONSE2 = "Response2"


class ConfirmKind(str, Enum):
    OLLAMA_TAGS = "ollama_tags"
    OPENAI_MODELS = "openai_models"


class HlevRejectReason(str, Enum):
    NO_HTTP = "NoHttp"
    SIGNATURE_MISMATCH = "SignatureMismatch"
    AUTH_REQUIRED = "AuthRequired"
    UNPARSEABLE = "Unparseable"
    NO_MODELS = "NoModels"
    UNKNOWN_MODELS = "UnknownModels"


def _squash(value: str) -> str:
    return "".join(value.split()).lower()


class MatchRule(BaseModel):
    """
    One signature predicate over an HTTP response.
    `body`: whitespace-separated tokens of `value` occur in order in the body
    prefix, double quotes ignored on both sides.
    `grep`: case-insensitive substring anywhere in the response.
    `status`: status code equality.
    Anything else names a header compared case-insensitively, whitespace
    ignored.
    """
    model_config = ConfigDict(frozen=True)

    field: str = Field(min_length=1)
    value: str = Field(min_length=1)

    @field_validator("field")
    @classmethod
    def lower_field(cls, value: str) -> str:
        return value.strip().lower()

    def matches(self, response: HttpResponse, raw: bytes = b"") -> bool:
        if self.field == "body":
            body = response.body[:HTTP_BODY_LIMIT].decode(
                "utf-8", "replace").replace('"', "")
            position = 0
            for token in self.value.replace('"', "").split():
                position = body.find(token, position)
                if position < 0:
                    return False
                position += len(token)
            return True
        if self.field == "grep":
            text = (raw or response.body).decode("latin-1")
            return self.value.lower() in text.lower()
        if self.field == "status":
            return str(response.status_code) == self.value.strip()
        header = response.header(self.field)
        return header is not None and _squash(header) == _squash(self.value)


class ToolProfile(BaseModel):
    model_config = ConfigDict(frozen=True)

    tool: LlmTool
    port: int = Field(ge=1, le=65535)
    match1: MatchRule
    match2: Optional[MatchRule] = None
    confirm_path: Optional[str] = None
    confirm_kind: Optional[ConfirmKind] = None

    @model_validator(mode="after")
    def check_profile(self):
        if self.port != TOOL_PORTS[self.tool]:
            raise ValueError(f"{self.tool.value} listens on "
                             f"{TOOL_PORTS[self.tool]}, not {self.port}")
        if (self.confirm_path is None) != (self.confirm_kind is None):
            raise ValueError("confirm_path and confirm_kind go together")
        return self

    @property
    def rules(self) -> Tuple[MatchRule, ...]:
        return tuple(r for r in (self.match1, self.match2) if r is not None)


class HlevEvidence(BaseModel):
    model_config = ConfigDict(frozen=True)

    syn_ack: bool = False
    status_line: Optional[str] = None
    matched: Tuple[str, ...] = ()
    models: Tuple[str, ...] = ()
    known_models: Tuple[str, ...] = ()


class HlevCandidate(BaseModel):
    model_config = ConfigDict(frozen=True)

    address: Address
    port: int
    tool: LlmTool
    stage: Stage = Stage.RESPONSE0
    evidence: HlevEvidence = HlevEvidence()

    @model_validator(mode="after")
    def check_confirmation(self):
        if self.stage == Stage.RESPONSE2 and not self.evidence.models:
            raise ValueError("Response2 requires model metadata")
        return self


@dataclass(frozen=True)
class Rejected:
    candidate: HlevCandidate
    reason: HlevRejectReason
    detail: str = ""


@dataclass
class FunnelStats:
    tool: LlmTool
    family: str = "IPv6"
    probed: int = 0
    r0: int = 0
    r1: int = 0
    r2: int = 0
    _lock: Lock = field(default_factory=Lock, repr=False, compare=False)

    def add(self, name: str, count: int = 1):
        with self._lock:
            setattr(self, name, getattr(self, name) + count)

    @property
    def monotone(self) -> bool:
        return self.r2 <= self.r1 <= self.r0 <= self.probed

    def as_dict(self) -> dict:
        return {"tool": self.tool.value, "family": self.family,
                "probed": self.probed, "r0": self.r0, "r1": self.r1,
                "r2": self.r2}


@dataclass
class HlevResult:
    exposed: Set[HlevCandidate] = field(default_factory=set)
    stats: Dict[LlmTool, FunnelStats] = field(default_factory=dict)
    verified: List[HlevCandidate] = field(default_factory=list)
    rejected: List[Rejected] = field(default_factory=list)
    error: Optional[str] = None


# Signature and model fixtures

def parse_signatures(text: str) -> List[ToolProfile]:
    profiles = list()
    reader = csv.DictReader(io.StringIO(text))
    for line_no, row in enumerate(reader, 2):
        try:
            match2 = MatchRule(field=row["match2_field"],
                               value=row["match2_value"]) \
                if row.get("match2_field") else None
            profiles.append(ToolProfile(
                tool=row["tool"], port=int(row["port"]),
                match1=MatchRule(field=row["match1_field"],
                                 value=row["match1_value"]),
                match2=match2,
                confirm_path=row.get("confirm_path") or None,
                confirm_kind=row.get("confirm_kind") or None))
        except (KeyError, TypeError, ValueError, ValidationError) as e:
            LOG.warning(f"Skipping signature line={line_no}|error={e}")
    return profiles


def load_signatures(path: Optional[str] = None) -> List[ToolProfile]:
    path = path or join(RES_DIR, "signatures.csv")
    with open(path, encoding="utf-8", newline="") as f:
        profiles = parse_signatures(f.read())
    LOG.info(f"Loaded signatures={len(profiles)}|path={path}")
    return profiles


def dump_signatures(profiles: Iterable[ToolProfile]) -> str:
    out = io.StringIO()
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(SIGNATURE_COLUMNS)
    for profile in profiles:
        match2 = profile.match2
        writer.writerow([
            profile.tool.value, profile.port,
            profile.match1.field, profile.match1.value,
            match2.field if match2 else "", match2.value if match2 else "",
            profile.confirm_path or "",
            profile.confirm_kind.value if profile.confirm_kind else ""])
    return out.getvalue()


def load_known_models(path: Optional[str] = None) -> List[str]:
    path = path or join(RES_DIR, "known_models.txt")
    with open(path, encoding="utf-8") as f:
        models = [line.strip() for line in f
                  if line.strip() and not line.startswith("#")]
    LOG.info(f"Loaded known models={len(models)}|path={path}")
    return models


# Stages

def iter_stage0(addresses: Iterable[Address], profiles: Sequence[ToolProfile],
                scanner: Scanner,
                stats: Optional[Dict[LlmTool, FunnelStats]] = None) \
        -> Iterator[HlevCandidate]:
    """
    SYN sweep over every profile port, yielding Response0 candidates as
    SYN-ACKs arrive
    """
    if not profiles:
        raise ValueError("No tool profiles given")
    addresses = list(dict.fromkeys(addresses))
    for profile in profiles:
        funnel = stats.get(profile.tool) if stats else None
        for response in scanner.syn(addresses, profile.port):
            if funnel:
                funnel.add("probed")
            if response.payload.kind != "syn_ack":
                continue
            if funnel:
                funnel.add("r0")
            yield HlevCandidate(address=response.target, port=profile.port,
                                tool=profile.tool,
                                evidence=HlevEvidence(syn_ack=True))


def stage0_syn_sweep(addresses: Iterable[Address],
                     profiles: Sequence[ToolProfile],
                     scanner: Scanner) -> Set[HlevCandidate]:
    return set(iter_stage0(addresses, profiles, scanner))


def _get(candidate: HlevCandidate, path: str, scanner: Scanner) \
        -> Tuple[Optional[HttpResponse], bytes]:
    request = build_request(str(candidate.address), path, candidate.port)
    response = scanner.request(candidate.address, candidate.port, request,
                               "tcp", read_limit=HTTP_READ_LIMIT)
    if response.is_timeout:
        return None, b""
    raw = response.payload.raw
    return parse_response(raw), raw


def stage1_http_verify(c: HlevCandidate, profile: ToolProfile,
                       scanner: Scanner) -> Union[HlevCandidate, Rejected]:
    """
    Fetch `/` and apply the profile's signature rules conjunctively
    :param c: Response0 candidate
    :param profile: profile of the tool listening on `c.port`
    :param scanner: scan capability
    :returns: Response1 candidate, or Rejected
    """
    if c.stage != Stage.RESPONSE0 or profile.port != c.port:
        raise ValueError(f"Cannot verify {c.stage.value} candidate on "
                         f"port {c.port} with {profile.tool.value}")
    response, raw = _get(c, "/", scanner)
    if response is None:
        return Rejected(c, HlevRejectReason.NO_HTTP)
    for rule in profile.rules:
        if not rule.matches(response, raw):
            return Rejected(c, HlevRejectReason.SIGNATURE_MISMATCH,
                            f"{rule.field}={rule.value}")
    evidence = c.evidence.model_copy(update={
        "status_line": response.status_line,
        "matched": tuple(f"{r.field}={r.value}" for r in profile.rules)})
    return c.model_copy(update={"stage": Stage.RESPONSE1,
                                "evidence": evidence})


def parse_model_list(kind: ConfirmKind, body: bytes) -> List[str]:
    """
    Extract model identifiers from a model listing
    :raises ValueError: when the body is not the expected document
    """
    document = json.loads(body.decode("utf-8"))
    if kind == ConfirmKind.OLLAMA_TAGS:
        items, keys = document["models"], ("name", "model")
    else:
        items, keys = document["data"], ("id",)
    if not isinstance(items, list):
        raise ValueError("model list is not an array")
    models = list()
    for item in items:
        name = next((item[k] for k in keys
                     if isinstance(item, dict) and
                     isinstance(item.get(k), str)), None)
        if name is None:
            raise ValueError(f"model entry without identifier: {item}")
        models.append(name)
    return models


def _known(models: Sequence[str], known_models: Sequence[str]) \
        -> Tuple[str, ...]:
    known = [k.lower() for k in known_models]
    return tuple(m for m in models if any(k in m.lower() for k in known))


def stage2_model_confirm(c: HlevCandidate, profile: ToolProfile,
                         scanner: Scanner,
                         known_models: Optional[Sequence[str]] = None) \
        -> Union[HlevCandidate, Rejected]:
    """
    Read the profile's model listing endpoint. Profiles without a confirm
    endpoint leave the candidate at Response1.
    :param c: Response1 candidate
    :param profile: profile of the tool listening on `c.port`
    :param scanner: scan capability
    :param known_models: optional model names; when given at least one
        listed model has to contain one of them
    :returns: Response2 candidate, the unchanged candidate, or Rejected
    """
    if c.stage != Stage.RESPONSE1:
        raise ValueError(f"Cannot confirm {c.stage.value} candidate")
    if profile.confirm_kind is None:
        return c
    response, _ = _get(c, profile.confirm_path, scanner)
    if response is None:
        return Rejected(c, HlevRejectReason.NO_HTTP, profile.confirm_path)
    if response.status_code in (401, 403):
        return Rejected(c, HlevRejectReason.AUTH_REQUIRED,
                        response.status_line)
    if response.status_code != 200:
        return Rejected(c, HlevRejectReason.UNPARSEABLE,
                        response.status_line)
    try:
        models = parse_model_list(profile.confirm_kind, response.body)
    except (ValueError, KeyError, TypeError) as e:
        return Rejected(c, HlevRejectReason.UNPARSEABLE, str(e))
    if not models:
        return Rejected(c, HlevRejectReason.NO_MODELS)
    known = ()
    if known_models is not None:
        known = _known(models, known_models)
        if not known:
            return Rejected(c, HlevRejectReason.UNKNOWN_MODELS,
                            ",".join(models))
    evidence = c.evidence.model_copy(update={"models": tuple(models),
                                             "known_models": known})
    return c.model_copy(update={"stage": Stage.RESPONSE2,
                                "evidence": evidence})


def run_hlev(addresses: Iterable[Address], profiles: Sequence[ToolProfile],
             scanner: Scanner,
             known_models: Optional[Sequence[str]] = None) -> HlevResult:
    """
    Run the three-stage funnel. Each SYN-ACK is verified and confirmed as
    soon as the sweep yields it.
    :param addresses: periphery devices to probe
    :param profiles: tool profiles to sweep
    :param scanner: scan capability
    :param known_models: optional model names used for confirmation
    :returns: HlevResult with the exposed set and per-tool funnel counts
    """
    profiles = list(profiles)
    by_tool = {profile.tool: profile for profile in profiles}
    result = HlevResult(stats={profile.tool: FunnelStats(profile.tool)
                               for profile in profiles})
    if not profiles:
        return result
    try:
        for candidate in iter_stage0(addresses, profiles, scanner,
                                     result.stats):
            profile = by_tool[candidate.tool]
            funnel = result.stats[candidate.tool]
            verified = stage1_http_verify(candidate, profile, scanner)
            if isinstance(verified, Rejected):
                result.rejected.append(verified)
                continue
            funnel.add("r1")
            result.verified.append(verified)
            confirmed = stage2_model_confirm(verified, profile, scanner,
                                             known_models)
            if isinstance(confirmed, Rejected):
                result.rejected.append(confirmed)
            elif confirmed.stage == Stage.RESPONSE2:
                funnel.add("r2")
                result.exposed.add(confirmed)
    except BackendError as e:
        LOG.exception(f"LLM exposure verification aborted: {e}")
        result.error = str(e)
    for funnel in result.stats.values():
        LOG.info(f"Funnel tool={funnel.tool.value}|probed={funnel.probed}|"
                 f"r0={funnel.r0}|r1={funnel.r1}|r2={funnel.r2}")
    return result
