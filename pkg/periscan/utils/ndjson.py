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

from os import makedirs
from os.path import dirname, exists
from typing import Iterable, Iterator, Optional

from combo_lock import ComboLock
from neon_utils.logger import LOG

from periscan.utils.constants import SCHEMA_VERSION


def dumps_record(record_type: str, payload: dict) -> str:
    """
    Serialize one record as a single JSON line with sorted keys
    """
    record = dict(payload)
    record["schema"] = SCHEMA_VERSION
    record["type"] = record_type
    return json.dumps(record, sort_keys=True, separators=(",", ":"),
                      ensure_ascii=False, default=str)


class NdjsonWriter:
    """
    Append-only NDJSON result file; appends take an exclusive lock shared
    across threads and processes
    """

    def __init__(self, path: str):
        self.path = path
        if dirname(path) and not exists(dirname(path)):
            makedirs(dirname(path), exist_ok=True)
        self._lock = ComboLock(f"{path}.lock")

    def append(self, record_type: str, payload: dict):
        self.extend(record_type, [payload])

    def extend(self, record_type: str, payloads: Iterable[dict]) -> int:
        lines = [dumps_record(record_type, p) + "\n" for p in payloads]
        if not lines:
            return 0
        with self._lock:
            with open(self.path, "a", encoding="utf-8") as f:
                f.writelines(lines)
        return len(lines)


def read_records(path: str, record_type: Optional[str] = None) \
        -> Iterator[dict]:
    """
    Read records back, optionally only those of one type
    """
    with open(path, encoding="utf-8") as f:
        for line_no, line in enumerate(f, 1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as e:
                LOG.warning(f"Skipping malformed record path={path}|"
                            f"line={line_no}|error={e}")
                continue
            if record.get("schema") != SCHEMA_VERSION:
                LOG.warning(f"Skipping record with schema="
                            f"{record.get('schema')}|line={line_no}")
                continue
            if record_type is None or record.get("type") == record_type:
                yield record
