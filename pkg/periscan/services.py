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
import re
import struct

from collections import Counter
from dataclasses import dataclass
from enum import Enum
from functools import lru_cache
from os.path import join
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple, \
    Union

import dns.exception
import dns.message
import dns.rcode
import dns.rdataclass
import dns.rdatatype

from neon_utils.logger import LOG
from pydantic import BaseModel, ConfigDict, Field, ValidationError, \
    field_validator, model_validator

from periscan.engine import Scanner
from periscan.prefix import Address
from periscan.utils.constants import BANNER_LIMIT, DNS_PROBE_NAME, RES_DIR
from periscan.utils.http import build_request, parse_response

_DNS_QUERY_ID = 0x5053
_NTP_FORMAT = "!BBbbIII4Q"
_NTP_PACKET_LEN = 48
_NTP_TRANSMIT = 0x5045524953434E21
_TLS_HANDSHAKE = 0x16
_TLS_SERVER_HELLO = 0x02
_TLS_CIPHERS = (0xC02F, 0xC030, 0xC02B, 0xC02C, 0x009C, 0x009D, 0x002F,
                0x0035)
_CVE_RE = re.compile(r"^CVE-\d{4}-\d{4,}$")

_SERVER_RE = re.compile(r"^(?P<product>[^/(\s]+)(?:[/(]v?(?P<version>[^)\s]+))?")
_SSH_RE = re.compile(r"^SSH-[\d.]+-(?P<product>[A-Za-z]+?)"
                     r"(?:[_-]?v?(?P<version>\d[\w.]*))?(?:[\s_-]|$)")
_PRODUCT_RE = re.compile(r"[A-Za-z][\w!'.+]*(?:-[A-Za-z][\w!'.+]*)*")
_VERSION_RE = re.compile(r"(?<![\w.])v?(\d+(?:\.[0-9A-Za-z]+)+)")
_REPLY_CODE_RE = re.compile(r"^\d{3}[- ]\s*")
_STOPWORDS = frozenset({"welcome", "to", "the", "ftp", "server", "service",
                        "ready", "login", "user", "username", "password"})

# IAC framing bytes stripped from Telnet banners
_IAC = 0xFF
_SB = 0xFA
_SE = 0xF0
_WILL = 0xFB
_DONT = 0xFE


class ServiceName(str, Enum):
    DNS = "DNS"
    NTP = "NTP"
    FTP = "FTP"
    SSH = "SSH"
    TELNET = "TELNET"
    HTTP80 = "HTTP80"
    TLS = "TLS"
    HTTP8080 = "HTTP8080"


class Transport(str, Enum):
    UDP = "udp"
    TCP = "tcp"


@dataclass(frozen=True)
class ServiceId:
    name: ServiceName
    transport: Transport
    port: int

    def __str__(self):
        return self.name.value


SERVICES: Dict[ServiceName, ServiceId] = {
    ServiceName.DNS: ServiceId(ServiceName.DNS, Transport.UDP, 53),
    ServiceName.NTP: ServiceId(ServiceName.NTP, Transport.UDP, 123),
    ServiceName.FTP: ServiceId(ServiceName.FTP, Transport.TCP, 21),
    ServiceName.SSH: ServiceId(ServiceName.SSH, Transport.TCP, 22),
    ServiceName.TELNET: ServiceId(ServiceName.TELNET, Transport.TCP, 23),
    ServiceName.HTTP80: ServiceId(ServiceName.HTTP80, Transport.TCP, 80),
    ServiceName.TLS: ServiceId(ServiceName.TLS, Transport.TCP, 443),
    ServiceName.HTTP8080: ServiceId(ServiceName.HTTP8080, Transport.TCP,
                                    8080),
}
ALL_SERVICES: Tuple[ServiceId, ...] = tuple(SERVICES.values())
HTTP_SERVICES = frozenset({ServiceName.HTTP80, ServiceName.HTTP8080})

VENDOR_FIELDS = ("server", "www-authenticate", "x-powered-by", "title",
                 "ftp_banner", "telnet_banner")


def service_id(name: Union[str, ServiceName, ServiceId]) -> ServiceId:
    """
    Look up one of the eight measured services by name
    """
    if isinstance(name, ServiceId):
        return name
    if isinstance(name, ServiceName):
        return SERVICES[name]
    try:
        return SERVICES[ServiceName(name.upper())]
    except ValueError:
        raise ValueError(f"Unknown service: {name}") from None


class SoftwareVersion(BaseModel):
    model_config = ConfigDict(frozen=True)

    product: str = Field(min_length=1)
    version_pattern: str = "unknown"
    version: Optional[str] = None

    @property
    def label(self) -> str:
        return f"{self.product}_{self.version_pattern}"


class ExposureRecord(BaseModel):
    """
    Outcome of probing one service on one device
    """
    model_config = ConfigDict(frozen=True, ser_json_bytes="base64")

    device: Address
    service: ServiceName
    responsive: bool = False
    banner: bytes = Field(default=b"", max_length=BANNER_LIMIT)
    metadata: Dict[str, str] = Field(default_factory=dict)
    extracted: Optional[SoftwareVersion] = None
    vendor: Optional[str] = None
    cves: List[str] = Field(default_factory=list)

    @model_validator(mode="after")
    def check_unresponsive_is_bare(self):
        if not self.responsive and (self.extracted is not None or
                                    self.vendor is not None or self.cves):
            raise ValueError("unresponsive record carries findings")
        return self

    @property
    def service_id(self) -> ServiceId:
        return SERVICES[self.service]


class CveEntry(BaseModel):
    model_config = ConfigDict(frozen=True)

    product: str = Field(min_length=1)
    version_pattern: str = Field(min_length=1)
    cve_id: str
    severity: Optional[str] = None

    @field_validator("cve_id")
    @classmethod
    def check_cve_id(cls, value: str) -> str:
        if not _CVE_RE.match(value):
            raise ValueError(f"not a CVE identifier: {value}")
        return value


class CveDb(BaseModel):
    model_config = ConfigDict(frozen=True)

    entries: Tuple[CveEntry, ...] = ()

    def __len__(self):
        return len(self.entries)


class VendorRule(BaseModel):
    model_config = ConfigDict(frozen=True)

    field: str
    regex: str
    vendor: str = Field(min_length=1)

    @field_validator("field")
    @classmethod
    def check_field(cls, value: str) -> str:
        value = value.strip().lower()
        if value not in VENDOR_FIELDS:
            raise ValueError(f"unsupported metadata field: {value}")
        return value

    @field_validator("regex")
    @classmethod
    def check_regex(cls, value: str) -> str:
        try:
            _compile(value)
        except re.error as e:
            raise ValueError(f"invalid regex {value!r}: {e}") from e
        return value

    def matches(self, value: str) -> bool:
        return _compile(self.regex).search(value) is not None


@lru_cache(maxsize=512)
def _compile(regex: str) -> re.Pattern:
    return re.compile(regex, re.I)


# Probe requests

def dns_query(name: str = DNS_PROBE_NAME) -> dns.message.Message:
    """
    Recursive A query for a probe-owned name
    """
    query = dns.message.make_query(name, dns.rdatatype.A)
    query.id = _DNS_QUERY_ID
    return query


def version_bind_query() -> dns.message.Message:
    query = dns.message.make_query("version.bind.", dns.rdatatype.TXT,
                                   dns.rdataclass.CH)
    query.id = _DNS_QUERY_ID + 1
    return query


def ntp_request() -> bytes:
    # LI=0, VN=4, mode 3
    return struct.pack(_NTP_FORMAT, 0x23, 0, 0, 0, 0, 0, 0, 0, 0, 0,
                       _NTP_TRANSMIT)


def tls_client_hello(random: bytes = b"\x00" * 32) -> bytes:
    """
    Minimal TLS 1.2 ClientHello offering common AEAD and CBC suites
    """
    suites = b"".join(s.to_bytes(2, "big") for s in _TLS_CIPHERS)
    groups = b"\x00\x1d\x00\x17\x00\x18"
    sig_algs = b"\x04\x03\x08\x04\x04\x01\x05\x01\x02\x01"
    extensions = \
        b"\x00\x0a" + struct.pack("!HH", len(groups) + 2, len(groups)) + \
        groups + \
        b"\x00\x0b\x00\x02\x01\x00" + \
        b"\x00\x0d" + struct.pack("!HH", len(sig_algs) + 2, len(sig_algs)) + \
        sig_algs
    body = b"\x03\x03" + random + b"\x00" + \
        struct.pack("!H", len(suites)) + suites + b"\x01\x00" + \
        struct.pack("!H", len(extensions)) + extensions
    handshake = b"\x01" + len(body).to_bytes(3, "big") + body
    return bytes([_TLS_HANDSHAKE]) + b"\x03\x01" + \
        struct.pack("!H", len(handshake)) + handshake


def build_probe(service: ServiceId, device: Address) -> bytes:
    """
    Request bytes sent to `service`; banner services get an empty request
    """
    if service.name == ServiceName.DNS:
        return dns_query().to_wire()
    if service.name == ServiceName.NTP:
        return ntp_request()
    if service.name in HTTP_SERVICES:
        return build_request(str(device), "/", service.port)
    if service.name == ServiceName.TLS:
        return tls_client_hello()
    return b""


def is_responsive(service: ServiceId, raw: bytes,
                  request: bytes = b"") -> bool:
    """
    Check that `raw` is a protocol-valid answer for `service`
    """
    if not raw:
        return False
    if service.name == ServiceName.DNS:
        try:
            response = dns.message.from_wire(raw)
        except dns.exception.DNSException:
            return False
        if request:
            if not dns.message.from_wire(request).is_response(response):
                return False
        return response.rcode() == dns.rcode.NOERROR and \
            bool(response.answer)
    if service.name == ServiceName.NTP:
        return len(raw) >= _NTP_PACKET_LEN and raw[0] & 0x07 == 4
    if service.name in HTTP_SERVICES:
        return parse_response(raw) is not None
    if service.name == ServiceName.TLS:
        return len(raw) > 5 and raw[0] == _TLS_HANDSHAKE and \
            raw[5] == _TLS_SERVER_HELLO
    return True


# Version extraction

def strip_telnet_iac(raw: bytes) -> bytes:
    """
    Remove Telnet option negotiation from a banner
    """
    out = bytearray()
    i = 0
    while i < len(raw):
        byte = raw[i]
        if byte != _IAC:
            out.append(byte)
            i += 1
            continue
        command = raw[i + 1] if i + 1 < len(raw) else None
        if command == _IAC:
            out.append(_IAC)
            i += 2
        elif command == _SB:
            end = raw.find(bytes([_IAC, _SE]), i + 2)
            i = len(raw) if end < 0 else end + 2
        elif command is not None and _WILL <= command <= _DONT:
            i += 3
        else:
            i += 2
    return bytes(out)


def _first_line(raw: bytes) -> str:
    for line in raw.decode("latin-1").splitlines():
        line = "".join(c for c in line if c.isprintable()).strip()
        if line:
            return line
    return ""


def _token_version(text: str) -> Optional[SoftwareVersion]:
    for match in _PRODUCT_RE.finditer(text):
        product = match.group(0).rstrip(".")
        if product.endswith("'s"):
            product = product[:-2]
        if not product or product.lower() in _STOPWORDS:
            continue
        version = _VERSION_RE.search(text, match.end())
        if version:
            return SoftwareVersion(product=product,
                                   version_pattern=version.group(1),
                                   version=version.group(1))
        return SoftwareVersion(product=product)
    return None


def _from_server(server: str) -> Optional[SoftwareVersion]:
    match = _SERVER_RE.match(server.strip())
    if not match:
        return None
    version = match.group("version")
    if version:
        return SoftwareVersion(product=match.group("product"),
                               version_pattern=version, version=version)
    return SoftwareVersion(product=match.group("product"))


def _header(headers: Iterable[Tuple[str, str]], name: str) -> Optional[str]:
    for key, value in headers:
        if key.lower() == name:
            return value
    return None


def extract_version(service: ServiceId,
                    banner_or_headers: Union[bytes,
                                             Sequence[Tuple[str, str]]]) \
        -> Optional[SoftwareVersion]:
    """
    Extract product and version from service metadata
    :param service: service the data came from
    :param banner_or_headers: raw response bytes, or an HTTP header list.
        For DNS this is the version.bind TXT string.
    :returns: SoftwareVersion, or None when nothing identifies the software
    """
    if service.name in HTTP_SERVICES:
        title = None
        if isinstance(banner_or_headers, (bytes, bytearray)):
            response = parse_response(bytes(banner_or_headers))
            if response is None:
                return None
            headers, title = response.headers, response.title
        else:
            headers = list(banner_or_headers)
        server = _header(headers, "server")
        if server:
            found = _from_server(server)
            if found:
                return found
        if title:
            return _token_version(title)
        return None

    if not isinstance(banner_or_headers, (bytes, bytearray)):
        return None
    raw = bytes(banner_or_headers)
    if service.name == ServiceName.TELNET:
        raw = strip_telnet_iac(raw)
    line = _first_line(raw)
    if not line:
        return None
    if service.name == ServiceName.SSH:
        match = _SSH_RE.match(line)
        if not match:
            return None
        version = match.group("version")
        if version:
            return SoftwareVersion(product=match.group("product"),
                                   version_pattern=version, version=version)
        return SoftwareVersion(product=match.group("product"))
    if service.name == ServiceName.FTP:
        return _token_version(_REPLY_CODE_RE.sub("", line).replace("(", " "))
    if service.name == ServiceName.TELNET:
        return _token_version(line)
    if service.name == ServiceName.DNS:
        line = line.strip('"')
        if line[:1].isdigit():
            version = _VERSION_RE.match(line)
            if version:
                return SoftwareVersion(product="bind",
                                       version_pattern=version.group(1),
                                       version=version.group(1))
        return _token_version(line)
    return None


# CVE correlation

@lru_cache(maxsize=1024)
def _pattern_regex(pattern: str) -> re.Pattern:
    if pattern == "*":
        return re.compile(r".*", re.S)
    segments = list()
    for segment in pattern.split("."):
        if re.fullmatch(r"\d*x", segment):
            segments.append(re.escape(segment[:-1]) + r"[^.]+")
        else:
            segments.append(re.escape(segment))
    return re.compile(r"\.".join(segments), re.I)


def version_matches(pattern: str, version: str) -> bool:
    """
    Match a version against a db pattern; an `x` suffix wildcards the rest of
    its segment and `*` matches any version
    """
    return _pattern_regex(pattern).fullmatch(version) is not None


def _raw_version(v: SoftwareVersion) -> str:
    return v.version or v.version_pattern


def map_cves(v: SoftwareVersion, db: CveDb) -> List[str]:
    product = v.product.casefold()
    version = _raw_version(v)
    found = list()
    for entry in db.entries:
        if entry.product.casefold() != product or entry.cve_id in found:
            continue
        if version_matches(entry.version_pattern, version) or \
                entry.version_pattern == v.version_pattern:
            found.append(entry.cve_id)
    return found


def bucket_version(v: SoftwareVersion, db: CveDb) -> SoftwareVersion:
    """
    Replace the version by the first matching db pattern of the same product
    """
    product = v.product.casefold()
    version = _raw_version(v)
    for entry in db.entries:
        if entry.product.casefold() == product and \
                entry.version_pattern != "*" and \
                version_matches(entry.version_pattern, version):
            return SoftwareVersion(product=v.product,
                                   version_pattern=entry.version_pattern,
                                   version=version)
    return v


def parse_cve_db(text: str) -> CveDb:
    entries = list()
    reader = csv.reader(io.StringIO(text))
    for line_no, row in enumerate(reader, 1):
        if not row or row[0].startswith("#") or row[0] == "product":
            continue
        try:
            product, pattern, cve_id, *rest = [c.strip() for c in row]
            entries.append(CveEntry(product=product, version_pattern=pattern,
                                    cve_id=cve_id,
                                    severity=(rest[0] if rest and rest[0]
                                              else None)))
        except (ValueError, ValidationError) as e:
            LOG.warning(f"Skipping CVE row line={line_no}|error={e}")
    return CveDb(entries=tuple(entries))


def load_cve_db(path: Optional[str] = None) -> CveDb:
    path = path or join(RES_DIR, "cve_db.csv")
    with open(path, encoding="utf-8") as f:
        db = parse_cve_db(f.read())
    LOG.info(f"Loaded CVE entries={len(db)}|path={path}")
    return db


def dump_cve_db(db: CveDb) -> str:
    out = io.StringIO()
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(["product", "version_pattern", "cve_id", "severity"])
    for entry in db.entries:
        writer.writerow([entry.product, entry.version_pattern, entry.cve_id,
                         entry.severity or ""])
    return out.getvalue()


# Vendor inference

def parse_vendor_rules(text: str) -> List[VendorRule]:
    rules = list()
    reader = csv.reader(io.StringIO(text))
    for line_no, row in enumerate(reader, 1):
        if not row or row[0].startswith("#") or row[0] == "field":
            continue
        try:
            field, regex, vendor = [c.strip() for c in row[:3]]
            rules.append(VendorRule(field=field, regex=regex, vendor=vendor))
        except (ValueError, ValidationError) as e:
            LOG.warning(f"Skipping vendor rule line={line_no}|error={e}")
    return rules


@lru_cache()
def _shipped_vendor_rules() -> Tuple[VendorRule, ...]:
    return tuple(load_vendor_rules())


def load_vendor_rules(path: Optional[str] = None) -> List[VendorRule]:
    path = path or join(RES_DIR, "vendor_rules.csv")
    with open(path, encoding="utf-8") as f:
        rules = parse_vendor_rules(f.read())
    LOG.info(f"Loaded vendor rules={len(rules)}|path={path}")
    return rules


def infer_vendor(records: Iterable[ExposureRecord],
                 rules: Optional[Sequence[VendorRule]] = None) \
        -> Optional[str]:
    """
    Apply an ordered rule table to the metadata of one device's records
    :param records: exposure records of a single device
    :param rules: rule table; defaults to the packaged table
    :returns: vendor of the first matching rule, or None
    """
    if rules is None:
        rules = _shipped_vendor_rules()
    values: Dict[str, set] = {name: set() for name in VENDOR_FIELDS}
    for record in records:
        for name, value in record.metadata.items():
            if name in values and value:
                values[name].add(value)
    for rule in rules:
        for value in sorted(values[rule.field]):
            if rule.matches(value):
                return rule.vendor
    return None


# Scanning

def _metadata(service: ServiceId, raw: bytes) -> Dict[str, str]:
    metadata = dict()
    if service.name in HTTP_SERVICES:
        response = parse_response(raw)
        if response is None:
            return metadata
        for name in ("server", "www-authenticate", "x-powered-by"):
            value = response.header(name)
            if value:
                metadata[name] = value
        if response.title:
            metadata["title"] = response.title
    elif service.name == ServiceName.FTP:
        metadata["ftp_banner"] = _first_line(raw)
    elif service.name == ServiceName.TELNET:
        metadata["telnet_banner"] = _first_line(strip_telnet_iac(raw))
    elif service.name == ServiceName.SSH:
        metadata["ssh_banner"] = _first_line(raw)
    return {k: v for k, v in metadata.items() if v}


def _version_bind(device: Address, scanner: Scanner) -> Optional[str]:
    query = version_bind_query()
    response = scanner.request(device, 53, query.to_wire(), "udp")
    if response.is_timeout or not response.payload.raw:
        return None
    try:
        answer = dns.message.from_wire(response.payload.raw)
    except dns.exception.DNSException:
        return None
    if not query.is_response(answer):
        return None
    for rrset in answer.answer:
        if rrset.rdtype == dns.rdatatype.TXT:
            for rdata in rrset:
                return b"".join(rdata.strings).decode("utf-8", "replace")
    return None


def scan_services(device: Address,
                  services: Iterable[Union[ServiceId, ServiceName, str]],
                  scanner: Scanner, cve_db: Optional[CveDb] = None,
                  vendor_rules: Optional[Sequence[VendorRule]] = None) \
        -> List[ExposureRecord]:
    """
    Probe each requested service on `device` once
    :param device: periphery device address
    :param services: subset of the eight measured services
    :param scanner: scan capability
    :param cve_db: optional CVE reference for version bucketing and mapping
    :param vendor_rules: rule table for vendor inference; None skips it
    :returns: one ExposureRecord per requested service, in table order
    """
    requested = {service_id(s) for s in services}
    records = list()
    for service in ALL_SERVICES:
        if service not in requested:
            continue
        request = build_probe(service, device)
        response = scanner.request(device, service.port, request,
                                   service.transport.value,
                                   read_limit=BANNER_LIMIT)
        raw = b"" if response.is_timeout else \
            response.payload.raw[:BANNER_LIMIT]
        if not is_responsive(service, raw, request):
            records.append(ExposureRecord(device=device, service=service.name,
                                          banner=raw))
            continue

        metadata = _metadata(service, raw)
        source = raw
        if service.name == ServiceName.DNS:
            version_bind = _version_bind(device, scanner)
            source = version_bind.encode() if version_bind else b""
            if version_bind:
                metadata["version_bind"] = version_bind
        extracted = extract_version(service, source) if source else None
        cves = list()
        if extracted is not None and cve_db is not None:
            extracted = bucket_version(extracted, cve_db)
            cves = map_cves(extracted, cve_db)
        records.append(ExposureRecord(device=device, service=service.name,
                                      responsive=True, banner=raw,
                                      metadata=metadata, extracted=extracted,
                                      cves=cves))
    if vendor_rules is not None:
        vendor = infer_vendor(records, vendor_rules)
        if vendor:
            records = [r.model_copy(update={"vendor": vendor})
                       if r.responsive else r for r in records]
    LOG.debug(f"Scanned services device={device}|"
              f"responsive={sum(r.responsive for r in records)}|"
              f"requested={len(records)}")
    return records


def _histogram_key(record: Union[ExposureRecord, Mapping]) \
        -> Optional[Tuple[str, str, str]]:
    if isinstance(record, Mapping):
        extracted = record.get("extracted")
        if not record.get("responsive") or not extracted:
            return None
        return (str(record["service"]), extracted["product"],
                extracted.get("version_pattern") or "unknown")
    if not record.responsive or record.extracted is None:
        return None
    return (record.service.value, record.extracted.product,
            record.extracted.version_pattern)


def version_histogram(records: Iterable[Union[ExposureRecord, Mapping]]) \
        -> List[Tuple[str, str, str, int]]:
    """
    Count (service, product, version bucket) over responsive records
    :param records: ExposureRecords or their persisted form
    :returns: rows sorted by descending count, then by key
    """
    counts = Counter()
    for record in records:
        key = _histogram_key(record)
        if key is not None:
            counts[key] += 1
    return [(*key, count) for key, count in
            sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))]
