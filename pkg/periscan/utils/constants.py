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

from os.path import dirname, join

SCHEMA_VERSION = 1

DEFAULT_RATE = 1000
MAX_RATE = 100_000
DEFAULT_TIMEOUT = 5.0
DEFAULT_RETRIES = 1
DEFAULT_HOP_LIMIT = 64
TCP_HOP_LIMIT = 64

# RGPS
DEFAULT_TAU = 120.0
DEFAULT_CHILD_LEN = 28
DEFAULT_EXPLORATORY_BUDGET = 1 << 16
DEFAULT_CANDIDATE_BUDGET = 1 << 16
MIN_SCAN_LENGTH = 28
MAX_SCAN_LENGTH = 48

# Loop probing
DEFAULT_LOOP_HOP_LIMIT = 32
DEFAULT_LOOP_INCREMENT = 2
DEFAULT_LOOP_TRIALS = 2
# Interface identifier placed in the device /64 to reach an unassigned address
DEFAULT_UNASSIGNED_IID = 0x7A3E_5C1D_9B0F_4E62

# Services
BANNER_LIMIT = 4096
HTTP_BODY_LIMIT = 16 * 1024
HTTP_READ_LIMIT = HTTP_BODY_LIMIT + 4096
DNS_PROBE_NAME = "periscan-probe.example."

# Simnet
DEFAULT_PROBER_ADDRESS = "100::ffff"
TRANSIT_PREFIX = "100::/64"
DEFAULT_HOST_DISTANCE = 8

RES_DIR = join(dirname(dirname(__file__)), "res")
