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

from threading import Lock
from typing import Callable

from pydantic import BaseModel, Field

from periscan.utils.constants import DEFAULT_RATE, MAX_RATE

# Absorbs float drift of clocks that advance by computed delays
_EPSILON = 1e-9


class RateLimit(BaseModel):
    max_pps: int = Field(default=DEFAULT_RATE, ge=1, le=MAX_RATE)


class TokenBucket:
    """
    Thread-safe token bucket driven by an injectable clock, so the same
    limiter paces wall-clock and virtual-clock scans.
    Capacity defaults to one token: no bursts above `rate`.
    """

    def __init__(self, rate: float, clock: Callable[[], float],
                 capacity: float = 1.0):
        self._rate = float(rate)
        self._capacity = float(capacity)
        self._clock = clock
        self._tokens = self._capacity
        self._last_update = clock()
        self._lock = Lock()

    @property
    def rate(self) -> float:
        return self._rate

    @property
    def capacity(self) -> float:
        return self._capacity

    def _add_tokens(self) -> None:
        now = self._clock()
        elapsed = now - self._last_update
        if elapsed > 0:
            self._tokens = min(self._capacity,
                               self._tokens + elapsed * self._rate)
            self._last_update = now

    def delay(self, tokens: float = 1) -> float:
        """
        Seconds until `tokens` can be consumed (0 when available now)
        """
        with self._lock:
            self._add_tokens()
            missing = tokens - self._tokens
            if missing <= _EPSILON:
                return 0.0
            return missing / self._rate

    def consume(self, tokens: float = 1) -> bool:
        with self._lock:
            self._add_tokens()
            if self._tokens >= tokens - _EPSILON:
                self._tokens -= tokens
                return True
            return False

    def acquire(self, sleep: Callable[[float], None],
                tokens: float = 1) -> None:
        """
        Blocks through `sleep` until `tokens` were consumed
        """
        while not self.consume(tokens):
            sleep(max(self.delay(tokens), 1e-6))

    def reset(self) -> None:
        with self._lock:
            self._tokens = self._capacity
            self._last_update = self._clock()
