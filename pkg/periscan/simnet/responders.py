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

import json
import struct

from abc import ABC, abstractmethod
from hashlib import blake2b
from typing import Dict, List, Optional, Tuple

import dns.exception
import dns.flags
import dns.message
import dns.name
import dns.rcode
import dns.rdataclass
import dns.rdatatype
import dns.rrset

from periscan.hlev import LlmTool, TOOL_PORTS
from periscan.simnet.topology import HostSpec, HttpRoute, LlmToolSpec, \
    ServiceSpec
from periscan.utils.http import build_response, parse_request_path

_VERSION_BIND = dns.name.from_text("version.bind.")
_NTP_FORMAT = "!BBbbIII4Q"
_NTP_PACKET_LEN = 48
_NTP_SERVER_MODE = 4
_NTP_CLIENT_MODE = 3
_TLS_HANDSHAKE = 0x16
_TLS_SERVER_HELLO = 0x02


def _encode(text: str) -> bytes:
    try:
        return text.encode("latin-1")
    except UnicodeEncodeError:
        return text.encode("utf-8")


class Responder(ABC):
    """
    Server side of one simulated listener
    """

    @abstractmethod
    def respond(self, request: bytes) -> Optional[bytes]:
        """
        :returns: bytes sent back, or None when the service stays silent
        """


class BannerResponder(Responder):
    def __init__(self, banner: str):
        self.banner = _encode(banner)

    def respond(self, request: bytes) -> Optional[bytes]:
        return self.banner


class EchoResponder(Responder):
    def respond(self, request: bytes) -> Optional[bytes]:
        return request or None


class HttpResponder(Responder):
    def __init__(self, routes: Dict[str, HttpRoute]):
        self.routes = routes

    def respond(self, request: bytes) -> Optional[bytes]:
        path = parse_request_path(request)
        if path is None:
            return build_response(400, "Bad Request")
        route = self.routes.get(path) or self.routes.get("*")
        if route is None:
            return build_response(404, "Not Found",
                                  [("Content-Type", "text/html")],
                                  b"<html><body>Not Found</body></html>")
        return build_response(route.status, route.reason, route.headers,
                              _encode(route.body))


class DnsResponder(Responder):
    def __init__(self, recursive: bool = True,
                 version_bind: Optional[str] = None):
        self.recursive = recursive
        self.version_bind = version_bind

    def respond(self, request: bytes) -> Optional[bytes]:
        try:
            query = dns.message.from_wire(request)
        except dns.exception.DNSException:
            return None
        response = dns.message.make_response(query)
        if not query.question:
            response.set_rcode(dns.rcode.FORMERR)
            return response.to_wire()
        question = query.question[0]
        if question.rdclass == dns.rdataclass.CH and \
                question.rdtype == dns.rdatatype.TXT and \
                question.name == _VERSION_BIND:
            if self.version_bind:
                response.answer.append(dns.rrset.from_text(
                    question.name, 0, "CH", "TXT", f'"{self.version_bind}"'))
            else:
                response.set_rcode(dns.rcode.REFUSED)
        elif self.recursive and query.flags & dns.flags.RD and \
                question.rdtype == dns.rdatatype.A:
            response.flags |= dns.flags.RA
            response.answer.append(dns.rrset.from_text(
                question.name, 300, "IN", "A", "192.0.2.53"))
        else:
            response.set_rcode(dns.rcode.REFUSED)
        return response.to_wire()


class NtpResponder(Responder):
    def respond(self, request: bytes) -> Optional[bytes]:
        if len(request) < _NTP_PACKET_LEN or \
                request[0] & 0x07 != _NTP_CLIENT_MODE:
            return None
        client_transmit = struct.unpack("!Q", request[40:48])[0]
        server_time = client_transmit + (1 << 32)
        return struct.pack(_NTP_FORMAT, (4 << 3) | _NTP_SERVER_MODE, 2, 6,
                           -20, 0, 0, 0x7F000001, server_time,
                           client_transmit, server_time, server_time)


class TlsResponder(Responder):
    def __init__(self, identity: bytes):
        self.random = blake2b(identity, digest_size=32).digest()

    def respond(self, request: bytes) -> Optional[bytes]:
        if len(request) < 6 or request[0] != _TLS_HANDSHAKE:
            return None
        body = b"\x03\x03" + self.random + b"\x00" + b"\xc0\x2f" + b"\x00"
        handshake = bytes([_TLS_SERVER_HELLO]) + \
            len(body).to_bytes(3, "big") + body
        return bytes([_TLS_HANDSHAKE]) + b"\x03\x03" + \
            len(handshake).to_bytes(2, "big") + handshake


def _json(status: int, reason: str, payload,
          headers: List[Tuple[str, str]] = ()) -> bytes:
    return build_response(status, reason,
                          [("Content-Type", "application/json")] +
                          list(headers), json.dumps(payload).encode())


class LlmEmulator(Responder):
    """
    HTTP front of a local LLM runner: the root page each tool serves and
    its model listing endpoint
    """

    def __init__(self, spec: LlmToolSpec):
        self.tool = LlmTool(spec.tool)
        self.models = list(spec.models)
        self.auth_required = spec.auth_required

    def _root(self) -> bytes:
        if self.tool == LlmTool.OLLAMA:
            return build_response(200, "OK", [("Content-Type",
                                               "text/plain; charset=utf-8")],
                                  b"Ollama is running")
        if self.tool == LlmTool.LMSTUDIO:
            return _json(200, "OK", {"error": "Unexpected endpoint or "
                                              "method. (GET /)"})
        if self.tool == LlmTool.GPT4ALL:
            return build_response(404, "Not Found",
                                  [("Content-Type", "application/x-empty"),
                                   ("Server", "GPT4All API")])
        if self.tool == LlmTool.JANAI:
            return build_response(302, "Found",
                                  [("Location", "./static/index.html")])
        if self.tool == LlmTool.VLLM:
            return _json(404, "Not Found", {"detail": "Not Found"},
                         [("Server", "uvicorn"),
                          ("X-Served-By", "vLLM OpenAI API server")])
        if self.tool == LlmTool.XINFERENCE:
            return build_response(307, "Temporary Redirect",
                                  [("Location", "/ui/")])
        return build_response(
            200, "OK", [("Content-Type", "text/html; charset=utf-8")],
            b'<!DOCTYPE html><html><head><title>LobeChat</title>'
            b'<meta name="application-name" content="lobechat"/></head>'
            b'<body><div id="root"></div></body></html>')

    def _models(self, path: str) -> Optional[bytes]:
        if self.tool == LlmTool.OLLAMA and path == "/api/tags":
            return _json(200, "OK", {"models": [
                {"name": m, "model": m, "details": {"format": "gguf"}}
                for m in self.models]})
        if self.tool not in (LlmTool.OLLAMA, LlmTool.LOBECHAT) and \
                path == "/v1/models":
            return _json(200, "OK", {"object": "list", "data": [
                {"id": m, "object": "model", "owned_by": "local"}
                for m in self.models]})
        return None

    def respond(self, request: bytes) -> Optional[bytes]:
        path = parse_request_path(request)
        if path is None:
            return build_response(400, "Bad Request")
        if path == "/":
            return self._root()
        models = self._models(path)
        if models is None:
            return _json(404, "Not Found", {"detail": "Not Found"})
        if self.auth_required:
            return _json(401, "Unauthorized", {"error": "unauthorized"},
                         [("WWW-Authenticate", 'Bearer realm="api"')])
        return models


def _service_responder(host: HostSpec, service: ServiceSpec) \
        -> Optional[Responder]:
    if service.kind == "banner":
        return BannerResponder(service.banner)
    if service.kind == "http":
        return HttpResponder(service.routes)
    if service.kind == "dns":
        return DnsResponder(service.recursive, service.version_bind)
    if service.kind == "ntp":
        return NtpResponder()
    if service.kind == "tls":
        return TlsResponder(host.address.packed)
    if service.kind == "echo":
        return EchoResponder()
    return None


def build_responders(host: HostSpec) -> Dict[Tuple[int, str], Responder]:
    """
    Listeners of `host` keyed by (port, transport); `closed` services have
    no listener
    """
    responders = dict()
    for service in host.services:
        responder = _service_responder(host, service)
        if responder is not None:
            responders[(service.port, service.transport)] = responder
    if host.llm_tool is not None:
        tool = LlmTool(host.llm_tool.tool)
        port = host.llm_tool.port or TOOL_PORTS[tool]
        responders[(port, "tcp")] = LlmEmulator(host.llm_tool)
    return responders
