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

from dataclasses import dataclass
from typing import Optional

from scapy.layers.inet import TCP
from scapy.layers.inet6 import IPv6, ICMPv6DestUnreach, ICMPv6EchoReply, \
    ICMPv6EchoRequest, ICMPv6TimeExceeded
from scapy.packet import Raw

from periscan.prefix import Address
from periscan.utils.constants import TCP_HOP_LIMIT

ICMP_DEST_UNREACH = 1
ICMP_TIME_EXCEEDED = 3
ICMP_ECHO_REQUEST = 128
ICMP_ECHO_REPLY = 129

IPV6_HEADER_LEN = 40
ICMP_ERROR_HEADER_LEN = 8
# RFC 4443: an error message must fit in the minimum IPv6 MTU
MIN_MTU = 1280

TCP_SYN = 0x02
TCP_RST = 0x04
TCP_ACK = 0x10


class DecodeError(ValueError):
    def __init__(self, reason: str, message: str = ""):
        super().__init__(message or reason)
        self.reason = reason


@dataclass(frozen=True)
class Datagram:
    """
    Decoded view of one IPv6 datagram
    """
    kind: str
    src: Address
    dst: Address
    hop_limit: int
    icmp_type: Optional[int] = None
    icmp_code: Optional[int] = None
    ident: Optional[int] = None
    seq: Optional[int] = None
    data: bytes = b""
    sport: Optional[int] = None
    dport: Optional[int] = None
    tcp_seq: Optional[int] = None
    tcp_ack: Optional[int] = None
    tcp_flags: int = 0
    quoted: Optional["Datagram"] = None

    @property
    def is_icmp_error(self) -> bool:
        return self.kind in ("time_exceeded", "dest_unreach")

    @property
    def is_syn(self) -> bool:
        return self.kind == "tcp" and \
            self.tcp_flags & (TCP_SYN | TCP_ACK) == TCP_SYN


def build_echo(source: Address, destination: Address, hop_limit: int,
               ident: int, seq: int, data: bytes = b"") -> bytes:
    return bytes(IPv6(src=str(source), dst=str(destination), hlim=hop_limit) /
                 ICMPv6EchoRequest(id=ident, seq=seq, data=data))


def build_echo_reply(request: Datagram, source: Address,
                     hop_limit: int = 64) -> bytes:
    return bytes(IPv6(src=str(source), dst=str(request.src), hlim=hop_limit) /
                 ICMPv6EchoReply(id=request.ident, seq=request.seq,
                                 data=request.data))


def build_syn(source: Address, destination: Address, sport: int, dport: int,
              seq: int, hop_limit: int = TCP_HOP_LIMIT) -> bytes:
    return bytes(IPv6(src=str(source), dst=str(destination), hlim=hop_limit) /
                 TCP(sport=sport, dport=dport, flags="S", seq=seq,
                     window=65535))


def build_tcp_reply(request: Datagram, flags: str, seq: int,
                    hop_limit: int = 64) -> bytes:
    return bytes(IPv6(src=str(request.dst), dst=str(request.src),
                      hlim=hop_limit) /
                 TCP(sport=request.dport, dport=request.sport, flags=flags,
                     seq=seq, ack=(request.tcp_seq + 1) & 0xFFFFFFFF,
                     window=65535 if "S" in flags else 0))


def _quote(original: bytes) -> Raw:
    return Raw(load=original[:MIN_MTU - IPV6_HEADER_LEN -
                             ICMP_ERROR_HEADER_LEN])


def build_time_exceeded(reporter: Address, prober: Address,
                        original: bytes) -> bytes:
    return bytes(IPv6(src=str(reporter), dst=str(prober), hlim=64) /
                 ICMPv6TimeExceeded(code=0) / _quote(original))


def build_dest_unreach(reporter: Address, prober: Address, code: int,
                       original: bytes) -> bytes:
    return bytes(IPv6(src=str(reporter), dst=str(prober), hlim=64) /
                 ICMPv6DestUnreach(code=code) / _quote(original))


def decode(raw: bytes) -> Datagram:
    """
    Classifies a raw IPv6 datagram. ICMPv6 errors carry their quoted
    original packet, decoded recursively.
    :param raw: bytes starting at the IPv6 header
    :raises DecodeError: on truncated or unparseable input
    """
    if len(raw) < IPV6_HEADER_LEN:
        raise DecodeError("truncated", f"{len(raw)} bytes")
    try:
        packet = IPv6(raw)
    except Exception as e:
        raise DecodeError("unparseable", str(e))
    if packet.version != 6:
        raise DecodeError("unparseable", f"version={packet.version}")
    base = dict(src=Address(packet.src), dst=Address(packet.dst),
                hop_limit=packet.hlim)
    layer = packet.payload
    if isinstance(layer, (ICMPv6EchoRequest, ICMPv6EchoReply)):
        kind = "echo_request" if isinstance(layer, ICMPv6EchoRequest) \
            else "echo_reply"
        return Datagram(kind=kind, icmp_type=layer.type, icmp_code=layer.code,
                        ident=layer.id, seq=layer.seq,
                        data=bytes(layer.data or b""), **base)
    if isinstance(layer, (ICMPv6TimeExceeded, ICMPv6DestUnreach)):
        quoted_raw = bytes(layer.payload)
        if len(quoted_raw) < IPV6_HEADER_LEN + ICMP_ERROR_HEADER_LEN:
            raise DecodeError("truncated_quote", f"{len(quoted_raw)} bytes")
        kind = "time_exceeded" if isinstance(layer, ICMPv6TimeExceeded) \
            else "dest_unreach"
        return Datagram(kind=kind, icmp_type=layer.type, icmp_code=layer.code,
                        quoted=decode(quoted_raw), **base)
    if isinstance(layer, TCP):
        return Datagram(kind="tcp", sport=layer.sport, dport=layer.dport,
                        tcp_seq=layer.seq, tcp_ack=layer.ack,
                        tcp_flags=int(layer.flags), **base)
    icmp_type = getattr(layer, "type", None) if packet.nh == 58 else None
    return Datagram(kind="icmp_other" if icmp_type is not None else "other",
                    icmp_type=icmp_type,
                    icmp_code=getattr(layer, "code", None), **base)
