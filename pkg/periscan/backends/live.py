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

import socket

from select import select
from threading import Lock
from time import monotonic, sleep
from typing import Optional, Tuple

from neon_utils.logger import LOG

from periscan.engine import ScanBackend
from periscan.prefix import Address
from periscan.utils.config import ScanConfig
from periscan.utils.exceptions import BackendError, ConfigurationError

# Any global unicast destination selects the default IPv6 route
_ROUTE_PROBE = "2001:4860::"


class LiveBackend(ScanBackend):
    """
    Raw IPv6 backend over the host stack. Needs raw-socket privileges and is
    only opened when `live_enabled` is set in configuration.
    """
    deterministic = False

    def __init__(self):
        self._socket = None
        self._source: Optional[Address] = None
        self._send_lock = Lock()

    def open(self, config: ScanConfig) -> None:
        if not config.live_enabled:
            raise ConfigurationError("Live backend disabled; set "
                                     "PERISCAN.live_enabled to scan")
        from scapy.config import conf
        try:
            self._socket = conf.L3socket6(promisc=False)
        except (OSError, PermissionError) as e:
            raise BackendError(f"Cannot open raw IPv6 socket: {e}") from e
        if config.source_address is not None:
            self._source = config.source_address
        else:
            _, source, _ = conf.route6.route(_ROUTE_PROBE)
            self._source = Address(source)
        LOG.info(f"Live backend open source={self._source}")

    @property
    def source_address(self) -> Address:
        return self._source

    def send(self, data: bytes, destination: Address) -> None:
        from scapy.layers.inet6 import IPv6
        try:
            with self._send_lock:
                self._socket.send(IPv6(data))
        except OSError as e:
            raise BackendError(f"Send to {destination} failed: {e}") from e

    def receive(self, max_wait: float) -> Optional[Tuple[bytes, Address]]:
        from scapy.layers.inet6 import IPv6
        deadline = monotonic() + max_wait
        while True:
            remaining = max(0.0, deadline - monotonic())
            try:
                ready, _, _ = select([self._socket], [], [], remaining)
            except OSError as e:
                raise BackendError(f"Receive failed: {e}") from e
            if not ready:
                return None
            packet = self._socket.recv()
            if packet is not None and IPv6 in packet:
                layer = packet[IPv6]
                if Address(layer.dst) == self._source:
                    return bytes(layer), Address(layer.src)
            if remaining <= 0:
                return None

    def now(self) -> float:
        return monotonic()

    def sleep(self, seconds: float) -> None:
        sleep(seconds)

    def exchange(self, destination: Address, port: int, transport: str,
                 request: bytes, read_limit: int,
                 timeout: float) -> Optional[bytes]:
        kind = socket.SOCK_DGRAM if transport == "udp" else socket.SOCK_STREAM
        try:
            with socket.socket(socket.AF_INET6, kind) as sock:
                sock.settimeout(timeout)
                sock.connect((str(destination), port))
                if request:
                    sock.sendall(request)
                return self._read(sock, read_limit, transport) or None
        except (socket.timeout, ConnectionError, OSError) as e:
            LOG.debug(f"Exchange failed target={destination}|port={port}|"
                      f"error={e}")
            return None

    @staticmethod
    def _read(sock: socket.socket, read_limit: int, transport: str) -> bytes:
        if transport == "udp":
            return sock.recv(read_limit)
        chunks = list()
        size = 0
        try:
            while size < read_limit:
                chunk = sock.recv(read_limit - size)
                if not chunk:
                    break
                chunks.append(chunk)
                size += len(chunk)
        except socket.timeout:
            pass
        return b"".join(chunks)

    def close(self) -> None:
        if self._socket is not None:
            self._socket.close()
            self._socket = None
