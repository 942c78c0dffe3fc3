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

from dataclasses import dataclass, field
from enum import Enum
from ipaddress import IPv6Address, IPv6Network, AddressValueError
from typing import Iterable, List, Optional, Union

from neon_utils.logger import LOG

from periscan.utils.constants import MAX_SCAN_LENGTH, MIN_SCAN_LENGTH
from periscan.utils.exceptions import ChildLengthError, InvalidLength, \
    InvalidPrefix

Address = IPv6Address

_ALL_ONES = (1 << 128) - 1
PREFIX_FILE_FIELDS = ("prefix", "asn", "isp", "region", "rir")


class Rir(str, Enum):
    AFRINIC = "AFRINIC"
    APNIC = "APNIC"
    ARIN = "ARIN"
    LACNIC = "LACNIC"
    RIPE = "RIPE"

    @classmethod
    def from_text(cls, text: str) -> Optional["Rir"]:
        normalized = text.strip().upper().replace(" ", "")
        if normalized == "RIPENCC":
            normalized = "RIPE"
        try:
            return cls(normalized)
        except ValueError:
            return None


class LengthClass(str, Enum):
    IN_RANGE = "InRange"
    TOO_SHORT = "TooShort"
    TOO_LONG = "TooLong"


@dataclass(frozen=True)
class PrefixMeta:
    asn: Optional[int] = None
    isp: str = ""
    region: str = ""
    rir: Optional[Rir] = None
    rir_raw: str = ""

    def as_dict(self) -> dict:
        return {"asn": self.asn, "isp": self.isp, "region": self.region,
                "rir": rir_group(self)}


@dataclass(frozen=True, order=True)
class Prefix:
    bits: int
    length: int
    meta: Optional[PrefixMeta] = field(default=None, compare=False)

    def __post_init__(self):
        if not 0 <= self.length <= 128:
            raise InvalidLength(f"Prefix length out of range: {self.length}")
        if not 0 <= self.bits <= _ALL_ONES:
            raise InvalidPrefix(f"Prefix bits out of range: {self.bits}")
        if self.bits & ~_netmask(self.length) & _ALL_ONES:
            raise InvalidPrefix(f"Host bits set in {self.bits:#x}/"
                                f"{self.length}")

    @property
    def size(self) -> int:
        return 1 << (128 - self.length)

    @property
    def last(self) -> int:
        return self.bits + self.size - 1

    @property
    def network(self) -> IPv6Network:
        return IPv6Network((self.bits, self.length))

    def address_at(self, offset: int) -> Address:
        return Address(self.bits + offset)

    def __contains__(self, item) -> bool:
        return contains(self, item)

    def __str__(self) -> str:
        return render(self)


def _netmask(length: int) -> int:
    return (_ALL_ONES << (128 - length)) & _ALL_ONES


def parse_prefix(text: str, meta: Optional[PrefixMeta] = None) -> Prefix:
    """
    Parses textual CIDR into a canonical Prefix. Host bits are masked off
    rather than rejected.
    :param text: `<ipv6-literal>/<len>`
    :param meta: optional provenance to attach
    :returns: canonical Prefix
    """
    literal, sep, length_text = text.strip().partition("/")
    if not sep:
        raise InvalidPrefix(f"Missing prefix length: {text!r}")
    length_text = length_text.strip()
    try:
        length = int(length_text)
    except ValueError:
        raise InvalidPrefix(f"Malformed prefix length: {text!r}")
    if not 0 <= length <= 128:
        raise InvalidLength(f"Prefix length out of range: {text!r}")
    try:
        value = int(IPv6Address(literal.strip()))
    except AddressValueError as e:
        raise InvalidPrefix(f"Malformed IPv6 literal: {text!r} ({e})")
    return Prefix(bits=value & _netmask(length), length=length, meta=meta)


def render(p: Prefix) -> str:
    return f"{IPv6Address(p.bits).compressed}/{p.length}"


def parse_address(text: str) -> Address:
    try:
        return IPv6Address(text.strip())
    except AddressValueError as e:
        raise InvalidPrefix(f"Malformed IPv6 address: {text!r} ({e})")


def render_address(address: Address) -> str:
    return address.compressed


def contains(p: Prefix, item: Union[Address, Prefix, int]) -> bool:
    if isinstance(item, Prefix):
        return item.length >= p.length and \
            item.bits & _netmask(p.length) == p.bits
    return int(item) & _netmask(p.length) == p.bits


def decompose(parent: Prefix, child_len: int) -> List[Prefix]:
    """
    Splits `parent` into its children of length `child_len`
    :param parent: prefix to split
    :param child_len: length of every child
    :returns: children in ascending address order, sharing parent's meta
    """
    if child_len < parent.length:
        raise ChildLengthError(f"child_len={child_len} is shorter than "
                               f"parent length={parent.length}")
    if child_len > 128:
        raise InvalidLength(f"child_len={child_len} exceeds 128")
    stride = 1 << (128 - child_len)
    return [Prefix(bits=parent.bits + i * stride, length=child_len,
                   meta=parent.meta)
            for i in range(1 << (child_len - parent.length))]


def slash64_of(address: Union[Address, int]) -> Prefix:
    return Prefix(bits=int(address) & _netmask(64), length=64)


def classify_length(p: Prefix) -> LengthClass:
    if p.length < MIN_SCAN_LENGTH:
        return LengthClass.TOO_SHORT
    if p.length > MAX_SCAN_LENGTH:
        return LengthClass.TOO_LONG
    return LengthClass.IN_RANGE


def rir_group(meta: Optional[PrefixMeta]) -> str:
    if meta is None or meta.rir is None:
        return "OTHER"
    return meta.rir.value


def _parse_meta(row: List[str]) -> PrefixMeta:
    asn_text, isp, region, rir_text = (row + [""] * 4)[1:5]
    asn_text = asn_text.strip().upper().removeprefix("AS")
    asn = int(asn_text) if asn_text else None
    return PrefixMeta(asn=asn, isp=isp.strip(), region=region.strip(),
                      rir=Rir.from_text(rir_text) if rir_text.strip()
                      else None,
                      rir_raw=rir_text.strip())


def parse_prefix_lines(lines: Iterable[str]) -> List[Prefix]:
    """
    Parses prefix records `prefix,asn,isp,region,rir`. Exact duplicates are
    dropped keeping the first provenance; nested prefixes are kept.
    :param lines: text lines of a prefix file
    :returns: prefixes in file order
    """
    prefixes = list()
    seen = set()
    for line_no, line in enumerate(lines, 1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        row = next(csv.reader([stripped]))
        if row and row[0].strip().lower() == "prefix":
            continue
        try:
            meta = _parse_meta(row)
            prefix = parse_prefix(row[0], meta=meta)
        except ValueError as e:
            raise InvalidPrefix(f"line {line_no}: {e}") from e
        key = (prefix.bits, prefix.length)
        if key in seen:
            LOG.debug(f"Dropping duplicate prefix={prefix}|line={line_no}")
            continue
        seen.add(key)
        if prefix.meta.rir is None and prefix.meta.rir_raw:
            LOG.info(f"Unknown registry rir={prefix.meta.rir_raw}|"
                     f"prefix={prefix}")
        prefixes.append(prefix)
    return prefixes


def load_prefix_file(path: str) -> List[Prefix]:
    with open(path, encoding="utf-8") as f:
        prefixes = parse_prefix_lines(f)
    LOG.info(f"Loaded prefixes={len(prefixes)}|path={path}")
    return prefixes


def dump_prefix_file(prefixes: Iterable[Prefix],
                     reasons: Optional[dict] = None) -> str:
    """
    Renders prefixes in the prefix file format
    :param prefixes: prefixes to write
    :param reasons: optional mapping of Prefix to a rejection reason; adds a
        trailing `reason` column when given
    """
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    header = list(PREFIX_FILE_FIELDS)
    if reasons is not None:
        header.append("reason")
    buffer.write("# " + ",".join(header) + "\n")
    for prefix in prefixes:
        meta = prefix.meta or PrefixMeta()
        row = [render(prefix), "" if meta.asn is None else str(meta.asn),
               meta.isp, meta.region,
               meta.rir.value if meta.rir else meta.rir_raw]
        if reasons is not None:
            reason = reasons.get(prefix, "")
            row.append(getattr(reason, "value", reason))
        writer.writerow(row)
    return buffer.getvalue()
