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

from typing import Dict, List, Literal, Optional, Tuple

import yaml

from neon_utils.logger import LOG
from pydantic import BaseModel, Field, ValidationError, field_validator, \
    model_validator

from periscan.prefix import Address, Prefix, contains, parse_prefix
from periscan.utils.constants import DEFAULT_HOST_DISTANCE, \
    DEFAULT_PROBER_ADDRESS, TRANSIT_PREFIX
from periscan.utils.exceptions import TopologyError

ServiceKind = Literal["banner", "http", "dns", "ntp", "tls", "echo",
                      "closed"]


def _prefix_text(value: str) -> str:
    return str(parse_prefix(value))


class HttpRoute(BaseModel):
    status: int = Field(default=200, ge=100, le=599)
    reason: str = "OK"
    headers: List[Tuple[str, str]] = Field(default_factory=list)
    body: str = ""


class ServiceSpec(BaseModel):
    port: int = Field(ge=1, le=65535)
    transport: Literal["tcp", "udp"] = "tcp"
    kind: ServiceKind
    banner: str = ""
    routes: Dict[str, HttpRoute] = Field(default_factory=dict)
    version_bind: Optional[str] = None
    recursive: bool = True


class LlmToolSpec(BaseModel):
    tool: str
    models: List[str] = Field(default_factory=list)
    auth_required: bool = False
    port: Optional[int] = Field(default=None, ge=1, le=65535)


class HostSpec(BaseModel):
    address: Address
    services: List[ServiceSpec] = Field(default_factory=list)
    llm_tool: Optional[LlmToolSpec] = None
    answers_echo: bool = True
    distance: Optional[int] = Field(default=None, ge=1, le=255)


class RouterSpec(BaseModel):
    id: str
    prefix: str
    distance: int = Field(ge=1, le=255)
    address: Optional[Address] = None
    behavior: Literal["forward", "loop", "unreachable"] = "forward"
    loop_with: Optional[str] = None
    code: int = Field(default=0, ge=0, le=255)

    @field_validator("prefix")
    @classmethod
    def validate_prefix(cls, value: str) -> str:
        return _prefix_text(value)

    @property
    def network(self) -> Prefix:
        return parse_prefix(self.prefix)

    @property
    def router_address(self) -> Address:
        return self.address or Address(self.network.bits + 1)


class LinkSpec(BaseModel):
    latency: float = Field(default=0.01, ge=0)
    jitter: float = Field(default=0.0, ge=0)
    drop: float = Field(default=0.0, ge=0, le=1)


def _check_loop_cycle(router: RouterSpec, routers: Dict[str, RouterSpec]):
    seen = [router.id]
    current = router
    while True:
        peer = routers.get(current.loop_with or "")
        if peer is None or peer.behavior != "loop":
            raise ValueError(f"router {current.id} loops with unknown "
                             f"or non-loop router {current.loop_with}")
        if peer.id == router.id:
            return
        if peer.id in seen:
            raise ValueError(f"loop from {router.id} does not return")
        seen.append(peer.id)
        current = peer


class TopologySpec(BaseModel):
    """
    Simulated network: hosts with service inventories, routers with a
    forwarding behavior for unassigned destinations, and link parameters
    """
    seed: int = Field(default=0, ge=0, lt=1 << 64)
    prober: Address = Address(DEFAULT_PROBER_ADDRESS)
    transit_prefix: str = TRANSIT_PREFIX
    host_distance: int = Field(default=DEFAULT_HOST_DISTANCE, ge=1, le=255)
    hosts: List[HostSpec] = Field(default_factory=list)
    routers: List[RouterSpec] = Field(default_factory=list)
    unassigned: List[str] = Field(default_factory=list)
    link: LinkSpec = Field(default_factory=LinkSpec)

    @field_validator("transit_prefix")
    @classmethod
    def validate_transit(cls, value: str) -> str:
        return _prefix_text(value)

    @field_validator("unassigned")
    @classmethod
    def validate_unassigned(cls, value: List[str]) -> List[str]:
        return [_prefix_text(v) for v in value]

    @model_validator(mode="after")
    def check_invariants(self) -> "TopologySpec":
        addresses = [h.address for h in self.hosts]
        if len(set(addresses)) != len(addresses):
            raise ValueError("host addresses must be unique")
        routers = {r.id: r for r in self.routers}
        if len(routers) != len(self.routers):
            raise ValueError("router ids must be unique")
        for router in self.routers:
            if router.behavior == "loop":
                _check_loop_cycle(router, routers)
            elif router.loop_with:
                raise ValueError(f"router {router.id} has loop_with but "
                                 f"behavior={router.behavior}")
        for text in self.unassigned:
            prefix = parse_prefix(text)
            if any(contains(prefix, a) for a in addresses):
                raise ValueError(f"unassigned prefix {text} holds a host")
        return self


def validate_topology(data: dict) -> TopologySpec:
    try:
        return TopologySpec.model_validate(data)
    except ValidationError as e:
        raise TopologyError(f"Invalid topology: {e}") from e


def load_topology(path: str) -> TopologySpec:
    """
    Reads a YAML topology document
    :param path: topology file
    :returns: validated TopologySpec
    """
    with open(path, encoding="utf-8") as f:
        data = yaml.safe_load(f) or dict()
    spec = validate_topology(data)
    LOG.info(f"Loaded topology path={path}|hosts={len(spec.hosts)}|"
             f"routers={len(spec.routers)}")
    return spec
