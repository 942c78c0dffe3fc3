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

from collections import defaultdict
from dataclasses import dataclass, field
from decimal import ROUND_HALF_UP, Decimal
from enum import Enum
from typing import Any, Callable, Dict, Iterable, List, Mapping, Optional, \
    Sequence, Set, Tuple, Union

from neon_utils.logger import LOG

from periscan.engine import ProbeResponse
from periscan.prefix import Address, Prefix, PrefixMeta, Rir, contains, \
    parse_address, rir_group, slash64_of
from periscan.utils.exceptions import UnknownGroupKeyError
from periscan.utils.ndjson import dumps_record

GROUP_KEYS = ("rir", "region", "asn", "isp", "service", "vendor")
UNKNOWN_GROUP = "UNKNOWN"


class PercentDef(str, Enum):
    OF_GROUP_TOTAL = "OfGroupTotal"
    OF_GLOBAL_TOTAL = "OfGlobalTotal"


class ReportFormat(str, Enum):
    TABLE = "table"
    CSV = "csv"
    NDJSON = "ndjson"


@dataclass(frozen=True)
class PeripheryDevice:
    address: Address
    slash64: Prefix = field(compare=False)
    first_seen: float = field(default=0.0, compare=False)
    provenance: Optional[PrefixMeta] = field(default=None, compare=False)

    @property
    def rir(self) -> str:
        return rir_group(self.provenance)

    def as_dict(self) -> dict:
        meta = self.provenance.as_dict() if self.provenance else \
            {"asn": None, "isp": "", "region": "", "rir": rir_group(None)}
        return {"address": str(self.address), "slash64": str(self.slash64),
                "first_seen": self.first_seen, **meta}

    @classmethod
    def from_dict(cls, record: Mapping[str, Any]) -> "PeripheryDevice":
        address = parse_address(record["address"])
        rir = record.get("rir")
        meta = PrefixMeta(asn=record.get("asn"), isp=record.get("isp") or "",
                          region=record.get("region") or "",
                          rir=Rir.from_text(rir) if rir else None,
                          rir_raw=rir or "")
        return cls(address=address, slash64=slash64_of(address),
                   first_seen=float(record.get("first_seen", 0.0)),
                   provenance=meta)


@dataclass(frozen=True)
class AggregateRow:
    key: str
    count: int
    denominator: int
    percent: Decimal
    definition: PercentDef = PercentDef.OF_GLOBAL_TOTAL
    scope: Optional[str] = None

    def as_dict(self) -> dict:
        return {"group": self.key, "count": self.count,
                "denominator": self.denominator,
                "percent": f"{self.percent:.2f}",
                "definition": self.definition.value, "scope": self.scope}


@dataclass(frozen=True)
class ComparisonRow:
    key: str
    before: int
    after: int
    delta: int
    increase_percent: Optional[Decimal]
    share_before: Decimal
    share_after: Decimal
    share_delta: Decimal


@dataclass(frozen=True)
class DensityRow:
    key: str
    services: int
    devices: int
    density: Decimal


def round_half_up(value: Union[Decimal, int, str], places: int = 2) \
        -> Decimal:
    quantum = Decimal(1).scaleb(-places)
    return Decimal(value).quantize(quantum, rounding=ROUND_HALF_UP)


def percent_of(count: int, denominator: int, places: int = 2) -> Decimal:
    """
    100 * count / denominator rounded half-up; 0 for an empty denominator
    """
    if denominator <= 0:
        return round_half_up(0, places)
    return round_half_up(Decimal(100 * count) / Decimal(denominator), places)


def provenance_lookup(prefixes: Sequence[Prefix]) \
        -> Callable[[Address], Optional[PrefixMeta]]:
    """
    Build a lookup returning the metadata of the most specific prefix with
    metadata containing an address
    """
    ordered = sorted(prefixes, key=lambda p: -p.length)

    def lookup(address: Address) -> Optional[PrefixMeta]:
        for prefix in ordered:
            if prefix.meta is not None and contains(prefix, address):
                return prefix.meta
        return None
    return lookup


def dedupe_devices(responses: Iterable[ProbeResponse],
                   provenance_of: Optional[Callable[[Address],
                                                    Optional[PrefixMeta]]]
                   = None) -> Set[PeripheryDevice]:
    """
    One device per responding source address
    :param responses: scan responses; timeouts are ignored
    :param provenance_of: optional metadata lookup for a device address
    :returns: devices stamped with their earliest response time
    """
    first_seen: Dict[Address, float] = dict()
    for response in responses:
        if response.is_timeout or response.source is None:
            continue
        seen = first_seen.get(response.source)
        if seen is None or response.received_at < seen:
            first_seen[response.source] = response.received_at
    return {PeripheryDevice(address=address, slash64=slash64_of(address),
                            first_seen=seen,
                            provenance=provenance_of(address)
                            if provenance_of else None)
            for address, seen in first_seen.items()}


def _attribute(record: Any, key: str) -> Any:
    if isinstance(record, Mapping):
        value = record.get(key)
        if value is None and isinstance(record.get("provenance"), Mapping):
            value = record["provenance"].get(key)
        return value
    if key == "rir" and isinstance(record, PeripheryDevice):
        return record.rir
    value = getattr(record, key, None)
    if value is None:
        value = getattr(getattr(record, "provenance", None), key, None)
    return value


def group_value(record: Any, key: str) -> str:
    """
    Group label of `record` under `key`
    :raises UnknownGroupKeyError: for keys outside GROUP_KEYS
    """
    if key not in GROUP_KEYS:
        raise UnknownGroupKeyError(key)
    value = _attribute(record, key)
    if key == "rir" and (value is None or value == ""):
        return rir_group(None)
    if value is None or value == "":
        return UNKNOWN_GROUP
    if isinstance(value, Enum):
        value = value.value
    return str(value)


def _weight(record: Any) -> int:
    weight = _attribute(record, "weight")
    return 1 if weight is None else int(weight)


def _sorted(rows: Iterable[AggregateRow]) -> List[AggregateRow]:
    return sorted(rows, key=lambda r: (-r.count, r.key))


def aggregate(records: Iterable[Any], group_by: str,
              percent_def: PercentDef = PercentDef.OF_GLOBAL_TOTAL,
              positive: Optional[Callable[[Any], bool]] = None,
              scope: Optional[str] = None,
              global_total: Optional[int] = None) -> List[AggregateRow]:
    """
    Count records per group
    :param records: devices, evidence or exposure records, or mappings. A
        `weight` field counts a record that many times.
    :param group_by: one of GROUP_KEYS
    :param percent_def: OfGroupTotal divides positives by the group size,
        OfGlobalTotal divides by the global count
    :param positive: predicate selecting counted records; all by default
    :param scope: label of the scanned-prefix scope carried on every row
    :param global_total: OfGlobalTotal denominator. Defaults to the number
        of positive records, so the rows of a full partition sum to 100%;
        pass the population size when positives are a subset of it.
    :returns: rows sorted by descending count
    """
    if group_by not in GROUP_KEYS:
        raise UnknownGroupKeyError(group_by)
    if global_total is not None and global_total < 0:
        raise ValueError(f"Negative global_total={global_total}")
    counts: Dict[str, int] = defaultdict(int)
    sizes: Dict[str, int] = defaultdict(int)
    for record in records:
        key = group_value(record, group_by)
        weight = _weight(record)
        sizes[key] += weight
        if positive is None or positive(record):
            counts[key] += weight
    total = sum(counts.values()) if global_total is None else global_total
    rows = list()
    for key, size in sizes.items():
        count = counts.get(key, 0)
        denominator = size if percent_def == PercentDef.OF_GROUP_TOTAL \
            else total
        rows.append(AggregateRow(key=key, count=count,
                                 denominator=denominator,
                                 percent=percent_of(count, denominator),
                                 definition=percent_def, scope=scope))
    return _sorted(rows)


def total_row(rows: Sequence[AggregateRow], label: str = "Total") \
        -> AggregateRow:
    count = sum(r.count for r in rows)
    definition = rows[0].definition if rows else PercentDef.OF_GLOBAL_TOTAL
    if definition == PercentDef.OF_GLOBAL_TOTAL:
        denominator = rows[0].denominator if rows else 0
    else:
        denominator = sum(r.denominator for r in rows)
    return AggregateRow(key=label, count=count, denominator=denominator,
                        percent=percent_of(count, denominator),
                        definition=definition,
                        scope=rows[0].scope if rows else None)


def slash64_share(devices: Iterable[PeripheryDevice]) -> Tuple[int, Decimal]:
    """
    Distinct /64 prefixes among devices, and their ratio to the device count
    as a one-decimal percentage
    """
    devices = list(devices)
    unique = len({d.slash64 for d in devices})
    return unique, percent_of(unique, len(devices), places=1)


def top_n(rows: Iterable[AggregateRow], n: int) -> List[AggregateRow]:
    return _sorted(rows)[:max(0, n)]


def compare_snapshots(before: Iterable[AggregateRow],
                      after: Iterable[AggregateRow]) -> List[ComparisonRow]:
    """
    Per-group change between two aggregations of the same key
    """
    old = {r.key: r for r in before}
    new = {r.key: r for r in after}
    zero = round_half_up(0)
    rows = list()
    for key in set(old) | set(new):
        b = old[key].count if key in old else 0
        a = new[key].count if key in new else 0
        share_b = old[key].percent if key in old else zero
        share_a = new[key].percent if key in new else zero
        rows.append(ComparisonRow(
            key=key, before=b, after=a, delta=a - b,
            increase_percent=percent_of(a - b, b) if b else None,
            share_before=share_b, share_after=share_a,
            share_delta=share_a - share_b))
    return sorted(rows, key=lambda r: (-r.after, r.key))


def exposure_density(devices: Iterable[PeripheryDevice],
                     exposures: Iterable[Any],
                     group_by: str) -> List[DensityRow]:
    """
    Average number of responsive services per device in each group
    :param devices: devices carrying provenance
    :param exposures: exposure records or mappings with `device` and
        `responsive`
    :param group_by: one of GROUP_KEYS
    """
    if group_by not in GROUP_KEYS:
        raise UnknownGroupKeyError(group_by)
    groups = {d.address: group_value(d, group_by) for d in devices}
    device_counts: Dict[str, int] = defaultdict(int)
    for key in groups.values():
        device_counts[key] += 1
    service_counts: Dict[str, int] = defaultdict(int)
    for record in exposures:
        if not _attribute(record, "responsive"):
            continue
        address = _attribute(record, "device")
        if isinstance(address, str):
            address = parse_address(address)
        if address in groups:
            service_counts[groups[address]] += 1
    rows = [DensityRow(key=key, services=service_counts[key], devices=count,
                       density=round_half_up(Decimal(service_counts[key]) /
                                             Decimal(count)))
            for key, count in device_counts.items()]
    return sorted(rows, key=lambda r: (-r.density, r.key))


def humanize(count: Union[int, Decimal], unit: Optional[str] = None) -> str:
    """
    Render a count the way the report tables do: 87.40k, 249.51M
    :param unit: force "k" or "M"; picked from the magnitude by default
    """
    if unit is None:
        unit = "M" if count >= 1_000_000 else "k" if count >= 1_000 else ""
    if unit == "M":
        return f"{round_half_up(Decimal(count) / 1_000_000)}M"
    if unit == "k":
        return f"{round_half_up(Decimal(count) / 1_000)}k"
    return str(count)


_COLUMNS = ("group", "count", "denominator", "percent", "definition",
            "scope")


def render_report(rows: Sequence[AggregateRow],
                  fmt: ReportFormat = ReportFormat.TABLE,
                  total: bool = False, title: Optional[str] = None) -> bytes:
    """
    Render aggregate rows
    :param rows: rows to render, in the given order
    :param fmt: plain table with humanized counts, RFC 4180 CSV, or NDJSON
    :param total: append a Total row
    :param title: optional caption for the plain table
    :returns: UTF-8 bytes, identical for identical input
    """
    rows = list(rows)
    if total:
        rows.append(total_row(rows))
    fmt = ReportFormat(fmt)
    if fmt == ReportFormat.NDJSON:
        return "".join(dumps_record("aggregate", r.as_dict()) + "\n"
                       for r in rows).encode("utf-8")
    if fmt == ReportFormat.CSV:
        out = io.StringIO()
        writer = csv.writer(out, lineterminator="\r\n")
        writer.writerow(_COLUMNS)
        for row in rows:
            values = row.as_dict()
            writer.writerow(["" if values[c] is None else values[c]
                             for c in _COLUMNS])
        return out.getvalue().encode("utf-8")

    header = ("Group", "#", "Total", "%")
    body = [(r.key, humanize(r.count), humanize(r.denominator),
             f"{r.percent:.2f}%") for r in rows]
    widths = [max(len(line[i]) for line in [header] + body)
              for i in range(len(header))]
    lines = list()
    if title:
        lines.append(title)
    scopes = sorted({r.scope for r in rows if r.scope})
    if scopes:
        lines.append(f"scope: {', '.join(scopes)}")
    lines.append("  ".join(h.ljust(w) if i == 0 else h.rjust(w)
                           for i, (h, w) in enumerate(zip(header, widths))))
    lines.append("  ".join("-" * w for w in widths))
    for line in body:
        lines.append("  ".join(v.ljust(w) if i == 0 else v.rjust(w)
                               for i, (v, w) in enumerate(zip(line,
                                                               widths))))
    LOG.debug(f"Rendered report rows={len(rows)}|format={fmt.value}")
    return ("\n".join(lines) + "\n").encode("utf-8")


def comparison_payload(row: ComparisonRow) -> dict:
    return {"group": row.key, "before": row.before, "after": row.after,
            "delta": row.delta,
            "increase_percent": None if row.increase_percent is None
            else f"{row.increase_percent:.2f}",
            "share_before": f"{row.share_before:.2f}",
            "share_after": f"{row.share_after:.2f}",
            "share_delta": f"{row.share_delta:.2f}"}


def record_payload(record: Any) -> dict:
    """
    JSON-ready payload of a device, evidence, exposure or candidate record
    """
    if isinstance(record, PeripheryDevice):
        return record.as_dict()
    if hasattr(record, "model_dump"):
        return json.loads(record.model_dump_json())
    raise TypeError(f"Cannot serialize {type(record).__name__}")
