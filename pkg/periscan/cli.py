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
import json
import sys

from argparse import SUPPRESS, ArgumentParser, Namespace
from typing import Callable, Dict, Iterable, Iterator, List, Optional, \
    Sequence, Tuple

from neon_utils.logger import LOG

from periscan.engine import ProbeResponse, Scanner
from periscan.hlev import load_known_models, load_signatures, run_hlev
from periscan.loops import LoopProbePlan, Verdict, detect_loops
from periscan.prefix import Prefix, classify_length, dump_prefix_file, \
    load_prefix_file, parse_address, parse_prefix_lines
from periscan.report import GROUP_KEYS, AggregateRow, PercentDef, \
    PeripheryDevice, ReportFormat, aggregate, dedupe_devices, group_value, \
    percent_of, provenance_lookup, record_payload, render_report, top_n
from periscan.rgps import RgpsConfig, prefix_seed, select_good_prefixes
from periscan.services import ALL_SERVICES, load_cve_db, load_vendor_rules, \
    scan_services, service_id, version_histogram
from periscan.targets import TargetSpace, iter_targets
from periscan.utils.config import ScanConfig, load_config, \
    load_config_file, periscan_section
from periscan.utils.exceptions import BackendError, ConfigurationError, \
    PeriscanError
from periscan.utils.ndjson import NdjsonWriter, dumps_record, read_records

EXIT_OK = 0
EXIT_PARTIAL = 1
EXIT_CONFIG = 2

V4_SWEEP = "v4-sweep"
REPORT_KINDS = ("devices", "slash64", "loops", "services", "versions")
_DURATION_UNITS = {"s": 1.0, "m": 60.0, "h": 3600.0}

Payloads = List[Tuple[str, dict]]


def parse_duration(text: str) -> float:
    """
    Parse `120`, `120s`, `2m` or `1h` into seconds
    """
    text = str(text).strip().lower()
    unit = _DURATION_UNITS.get(text[-1:]) if text else None
    try:
        return float(text[:-1]) * unit if unit else float(text)
    except ValueError:
        raise ValueError(f"Invalid duration: {text}") from None


class CliContext:
    """
    Configuration and scan capability shared by one CLI invocation
    """

    def __init__(self, args: Namespace):
        self.args = args
        self.config = load_config_file(args.config) if args.config \
            else load_config()
        self.section = periscan_section(self.config)
        self.scan_config = ScanConfig.from_config(
            self.config, backend=args.backend, seed=args.seed,
            rate=args.rate, timeout=args.timeout, retries=args.retries)
        self._scanner: Optional[Scanner] = None

    @property
    def scanner(self) -> Scanner:
        if self._scanner is None:
            self._scanner = Scanner(self._backend(), self.scan_config)
        return self._scanner

    def _backend(self):
        if self.scan_config.backend == "live":
            from periscan.backends.live import LiveBackend
            return LiveBackend()
        from periscan.simnet import build_topology, load_topology
        path = self.args.topology or self.section.get("topology")
        if not path:
            raise ConfigurationError("The sim backend needs --topology")
        return build_topology(load_topology(path))

    def fixture(self, name: str, override: Optional[str]) -> Optional[str]:
        return override or self.section.get("fixtures", dict()).get(name)

    def close(self):
        if self._scanner is not None:
            self._scanner.close()

    def emit(self, payloads: Payloads):
        """
        Append typed records to --out, or print them
        """
        if self.args.out:
            writer = NdjsonWriter(self.args.out)
            for record_type, payload in payloads:
                writer.append(record_type, payload)
        else:
            for record_type, payload in payloads:
                sys.stdout.write(dumps_record(record_type, payload) + "\n")

    def write_text(self, text: str):
        if self.args.out:
            with open(self.args.out, "w", encoding="utf-8") as f:
                f.write(text)
        else:
            sys.stdout.write(text)


# Inputs

def _good_prefix_lines(path: str) -> Iterator[str]:
    with open(path, encoding="utf-8") as f:
        for line in f:
            row = next(csv.reader([line]), [])
            if not line.startswith("#") and len(row) > 5 and row[5].strip():
                continue
            yield line


def load_good_prefixes(path: str) -> List[Prefix]:
    """
    Read a prefix file, dropping rows that carry a rejection reason
    """
    return parse_prefix_lines(_good_prefix_lines(path))


def load_devices(path: str) -> List[PeripheryDevice]:
    """
    Read devices from NDJSON device records or a plain address list
    """
    devices = dict()
    with open(path, encoding="utf-8") as f:
        lines = f.readlines()
    for line in lines:
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if line.startswith("{"):
            record = json.loads(line)
            if record.get("type") != "device":
                continue
            device = PeripheryDevice.from_dict(record)
        else:
            address = parse_address(line.split(",")[0])
            device = PeripheryDevice.from_dict({"address": str(address)})
        devices.setdefault(device.address, device)
    return sorted(devices.values(), key=lambda d: int(d.address))


def _meta(device: PeripheryDevice) -> dict:
    payload = device.as_dict()
    return {k: payload[k] for k in ("asn", "isp", "region", "rir")}


# Measurements

def run_select(ctx: CliContext, pool: Sequence[Prefix]) \
        -> Tuple[List[Prefix], Dict[Prefix, str], List[ProbeResponse], bool]:
    args = ctx.args
    cfg = RgpsConfig.from_config(
        ctx.config,
        tau=parse_duration(args.tau) if args.tau else None,
        child_len=args.child_len,
        exploratory_budget=args.exploratory_budget,
        candidate_budget=args.candidate_budget)
    outcome = select_good_prefixes(pool, cfg, ctx.scanner)
    good = sorted(outcome.good)
    reasons = {prefix: reason.value for prefix, reason in outcome.rejected}
    LOG.info(f"Selected good={len(good)}|rejected={len(reasons)}|"
             f"pool={len(pool)}")
    return good, reasons, outcome.responses, outcome.error is None


def discover_devices(prefixes: Sequence[Prefix], scanner: Scanner,
                     budget: int, hop_limit: int,
                     extra: Iterable[ProbeResponse] = (),
                     known: Sequence[Prefix] = (), shard: int = 0,
                     shards: int = 1) \
        -> Tuple[List[PeripheryDevice], bool]:
    """
    Echo-scan up to `budget` addresses of every prefix and keep one device
    per responding address
    :param extra: responses gathered earlier, e.g. during prefix selection
    :param known: further prefixes providing device provenance
    :param shard: stripe of every prefix permutation probed by this run
    :param shards: number of stripes
    :returns: devices sorted by address, and False if the scan failed
    """
    def targets():
        for prefix in sorted(prefixes):
            seed = prefix_seed(scanner.config.seed, prefix, b"discover")
            yield from iter_targets(TargetSpace([prefix]), seed, shard=shard,
                                    shards=shards, limit=budget)

    responses = list(extra)
    complete = True
    try:
        responses.extend(scanner.echo(targets(), hop_limit))
    except BackendError as e:
        LOG.error(f"Discovery scan failed: {e}")
        complete = False
    devices = dedupe_devices(responses, provenance_lookup(
        list(known) + list(prefixes)))
    return sorted(devices, key=lambda d: int(d.address)), complete


def run_discovery(ctx: CliContext, prefixes: Sequence[Prefix],
                  extra: Iterable[ProbeResponse] = (),
                  known: Sequence[Prefix] = ()) \
        -> Tuple[List[PeripheryDevice], bool]:
    discovery = ctx.section.get("discovery", dict())
    budget = getattr(ctx.args, "budget", None) or \
        int(discovery.get("budget", 1 << 16))
    hop_limit = getattr(ctx.args, "hop_limit", None) or \
        int(discovery.get("hop_limit", 64))
    shards = getattr(ctx.args, "shards", 1)
    shard = getattr(ctx.args, "shard", 0)
    if shards < 1 or not 0 <= shard < shards:
        raise ConfigurationError(f"Invalid stripe shard={shard} of "
                                 f"shards={shards}")
    return discover_devices(prefixes, ctx.scanner, budget, hop_limit, extra,
                            known, shard, shards)


def run_loops(ctx: CliContext, devices: Sequence[PeripheryDevice]) \
        -> Tuple[Payloads, bool]:
    args = ctx.args
    plan = LoopProbePlan.from_config(
        ctx.config, initial_hop_limit=getattr(args, "loop_hop_limit", None),
        increment=getattr(args, "increment", None),
        trials=getattr(args, "trials", None),
        target_strategy=getattr(args, "strategy", None))
    by_address = {d.address: d for d in devices}
    payloads = list()
    complete = True
    for evidence in detect_loops([d.address for d in devices], plan,
                                 ctx.scanner):
        complete = complete and evidence.error is None
        payloads.append(("loop_evidence", {
            **record_payload(evidence), **_meta(by_address[evidence.device])}))
    confirmed = sum(p["verdict"] == Verdict.CONFIRMED.value
                    for _, p in payloads)
    LOG.info(f"Loop detection devices={len(devices)}|confirmed={confirmed}")
    return payloads, complete


def run_services(ctx: CliContext, devices: Sequence[PeripheryDevice]) \
        -> Tuple[Payloads, bool]:
    args = ctx.args
    names = getattr(args, "services", None)
    services = [service_id(n) for n in names.split(",")] if names \
        else list(ALL_SERVICES)
    cve_db = load_cve_db(ctx.fixture("cve_db", getattr(args, "cve_db",
                                                       None)))
    rules = load_vendor_rules(ctx.fixture("vendor_rules",
                                          getattr(args, "vendor_rules",
                                                  None)))
    payloads = list()
    try:
        for device in devices:
            for record in scan_services(device.address, services,
                                        ctx.scanner, cve_db, rules):
                payloads.append(("exposure", {**record_payload(record),
                                              **_meta(device)}))
    except BackendError as e:
        LOG.error(f"Service scan aborted: {e}")
        return payloads, False
    return payloads, True


def run_hlev_stage(ctx: CliContext, devices: Sequence[PeripheryDevice]) \
        -> Tuple[Payloads, bool]:
    args = ctx.args
    profiles = load_signatures(ctx.fixture("signatures",
                                           getattr(args, "signatures",
                                                   None)))
    known = load_known_models(ctx.fixture("known_models",
                                          getattr(args, "models", None)))
    result = run_hlev([d.address for d in devices], profiles, ctx.scanner,
                      known)
    candidates = {(int(c.address), c.port): c for c in result.verified}
    candidates.update({(int(c.address), c.port): c for c in result.exposed})
    payloads = [("hlev_candidate", record_payload(candidates[key]))
                for key in sorted(candidates)]
    payloads.extend(("funnel", stats.as_dict())
                    for stats in result.stats.values())
    return payloads, result.error is None


# Reports

def report_rows(kind: str, records: List[dict], group_by: Optional[str],
                percent_def: Optional[str],
                scope: Optional[str] = None) -> List[AggregateRow]:
    """
    Aggregate persisted records into report rows
    :param kind: one of REPORT_KINDS
    """
    if kind == "devices":
        return aggregate(records, group_by or "rir",
                         PercentDef(percent_def or "OfGlobalTotal"),
                         scope=scope)
    if kind == "loops":
        return aggregate(records, group_by or "rir",
                         PercentDef(percent_def or "OfGroupTotal"),
                         positive=lambda r: r.get("verdict") ==
                         Verdict.CONFIRMED.value, scope=scope)
    if kind == "services":
        return aggregate(records, group_by or "service",
                         PercentDef(percent_def or "OfGroupTotal"),
                         positive=lambda r: bool(r.get("responsive")),
                         scope=scope)
    if kind == "slash64":
        key = group_by or "rir"
        groups: Dict[str, List[dict]] = dict()
        for record in records:
            groups.setdefault(group_value(record, key), list()).append(record)
        rows = [AggregateRow(key=name, count=len({r["slash64"]
                                                  for r in members}),
                             denominator=len(members),
                             percent=percent_of(len({r["slash64"]
                                                     for r in members}),
                                                len(members)),
                             definition=PercentDef.OF_GROUP_TOTAL,
                             scope=scope)
                for name, members in groups.items()]
        return sorted(rows, key=lambda r: (-r.count, r.key))
    raise ConfigurationError(f"Unknown report kind: {kind}")


def _record_type(kind: str) -> str:
    return {"devices": "device", "slash64": "device",
            "loops": "loop_evidence", "services": "exposure",
            "versions": "exposure"}[kind]


def render_versions(records: Iterable[dict], fmt: ReportFormat) -> bytes:
    rows = version_histogram(records)
    if fmt == ReportFormat.NDJSON:
        return "".join(dumps_record("version", {
            "service": s, "product": p, "version_pattern": v, "count": c})
            + "\n" for s, p, v, c in rows).encode("utf-8")
    if fmt == ReportFormat.CSV:
        lines = ["service,product,version_pattern,count"]
        lines.extend(",".join(_csv_cell(x) for x in row) for row in rows)
        return ("\r\n".join(lines) + "\r\n").encode("utf-8")
    lines = [f"{s:<10} {f'{p}_{v}':<40} {c:>8}" for s, p, v, c in rows]
    return ("\n".join(["Service    Version" + " " * 35 + "#"] + lines) +
            "\n").encode("utf-8")


def _csv_cell(value) -> str:
    text = str(value)
    if any(c in text for c in ',"\r\n'):
        return '"' + text.replace('"', '""') + '"'
    return text


def make_report(kind: str, records: List[dict], args: Namespace) -> bytes:
    fmt = ReportFormat(args.format)
    if kind == "versions":
        return render_versions(records, fmt)
    rows = report_rows(kind, records, args.group_by, args.percent_def,
                       args.scope)
    if args.top:
        rows = top_n(rows, args.top)
    return render_report(rows, fmt, total=args.total)


# Commands

def cmd_ingest(ctx: CliContext) -> int:
    prefixes = load_prefix_file(ctx.args.prefixes)
    classes = dict()
    for prefix in prefixes:
        name = classify_length(prefix).value
        classes[name] = classes.get(name, 0) + 1
    LOG.info(f"Ingested prefixes={len(prefixes)}|classes={classes}")
    ctx.write_text(dump_prefix_file(prefixes))
    return EXIT_OK


def cmd_select(ctx: CliContext) -> int:
    pool = load_prefix_file(ctx.args.pool)
    good, reasons, _, complete = run_select(ctx, pool)
    ctx.write_text(dump_prefix_file(good + list(reasons), reasons))
    return EXIT_OK if complete else EXIT_PARTIAL


def cmd_scan(ctx: CliContext) -> int:
    devices, complete = run_discovery(ctx,
                                      load_good_prefixes(ctx.args.prefixes))
    ctx.emit([("device", d.as_dict()) for d in devices])
    return EXIT_OK if complete else EXIT_PARTIAL


def cmd_loops(ctx: CliContext) -> int:
    payloads, complete = run_loops(ctx, load_devices(ctx.args.devices))
    ctx.emit(payloads)
    return EXIT_OK if complete else EXIT_PARTIAL


def cmd_services(ctx: CliContext) -> int:
    payloads, complete = run_services(ctx, load_devices(ctx.args.devices))
    ctx.emit(payloads)
    return EXIT_OK if complete else EXIT_PARTIAL


def cmd_hlev(ctx: CliContext) -> int:
    if ctx.args.targets == V4_SWEEP:
        raise ConfigurationError("IPv4 sweeps are not supported; pass a "
                                 "periphery device file")
    payloads, complete = run_hlev_stage(ctx, load_devices(ctx.args.targets))
    ctx.emit(payloads)
    return EXIT_OK if complete else EXIT_PARTIAL


def cmd_report(ctx: CliContext) -> int:
    args = ctx.args
    if args.kind not in REPORT_KINDS:
        raise ConfigurationError(f"Unknown report kind: {args.kind}")
    records = list(read_records(args.input, _record_type(args.kind)))
    output = make_report(args.kind, records, args)
    if args.out:
        with open(args.out, "wb") as f:
            f.write(output)
    else:
        sys.stdout.buffer.write(output)
        sys.stdout.flush()
    return EXIT_OK


def cmd_pipeline(ctx: CliContext) -> int:
    args = ctx.args
    pool = load_prefix_file(args.pool)
    good, reasons, responses, complete = run_select(ctx, pool)
    payloads: Payloads = [("selection", {"prefix": str(p),
                                         "reason": reasons.get(p)})
                          for p in good + list(reasons)]
    devices, scanned = run_discovery(ctx, good, responses, pool)
    payloads.extend(("device", d.as_dict()) for d in devices)
    steps: List[Callable] = [run_loops, run_services, run_hlev_stage]
    results = [scanned]
    for step in steps:
        step_payloads, step_complete = step(ctx, devices)
        payloads.extend(step_payloads)
        results.append(step_complete)
    ctx.emit(payloads)
    device_records = [p for t, p in payloads if t == "device"]
    report = render_report(aggregate(device_records, "rir", scope="pipeline"),
                           ReportFormat(args.format), total=True)
    sys.stdout.buffer.write(report)
    sys.stdout.flush()
    return EXIT_OK if complete and all(results) else EXIT_PARTIAL


COMMANDS = {
    "ingest": cmd_ingest,
    "select": cmd_select,
    "scan": cmd_scan,
    "loops": cmd_loops,
    "services": cmd_services,
    "hlev": cmd_hlev,
    "report": cmd_report,
    "pipeline": cmd_pipeline,
}


def _add_select_options(parser: ArgumentParser):
    parser.add_argument("--tau", help="silence threshold, e.g. 120s or 2m")
    parser.add_argument("--child-len", type=int)
    parser.add_argument("--exploratory-budget", type=int)
    parser.add_argument("--candidate-budget", type=int)


def _add_discovery_options(parser: ArgumentParser):
    parser.add_argument("--budget", type=int, help="probes per prefix")
    parser.add_argument("--hop-limit", type=int)
    parser.add_argument("--shards", type=int, default=1,
                        help="split the targets into this many stripes")
    parser.add_argument("--shard", type=int, default=0,
                        help="stripe probed by this run")


def _add_service_options(parser: ArgumentParser):
    parser.add_argument("--services",
                        help="comma separated subset, e.g. FTP,SSH")
    parser.add_argument("--cve-db")
    parser.add_argument("--vendor-rules")


def _add_hlev_options(parser: ArgumentParser):
    parser.add_argument("--signatures")
    parser.add_argument("--models")


def _add_loop_options(parser: ArgumentParser):
    parser.add_argument("--hop", "--loop-hop-limit", dest="loop_hop_limit",
                        type=int, help="initial hop limit")
    parser.add_argument("--inc", "--increment", dest="increment", type=int,
                        help="hop limit increment of the confirming probe")
    parser.add_argument("--trials", type=int)
    parser.add_argument("--strategy")


def _global_options(default=None) -> ArgumentParser:
    """
    Options accepted before and after the subcommand. Subcommands take them
    with a SUPPRESS default, so only values given after the subcommand
    replace the ones given before it.
    """
    parent = ArgumentParser(add_help=False, argument_default=default)
    parent.add_argument("--config", help="JSON or YAML configuration file")
    parent.add_argument("--backend", choices=("sim", "live"))
    parent.add_argument("--topology", help="simulated network (YAML)")
    parent.add_argument("--seed", type=int)
    parent.add_argument("--rate", type=int, help="probes per second")
    parent.add_argument("--timeout", type=float)
    parent.add_argument("--retries", type=int)
    parent.add_argument("--out", help="output file; stdout by default")
    return parent


def build_parser() -> ArgumentParser:
    common = _global_options(SUPPRESS)
    parser = ArgumentParser(prog="periscan", parents=[_global_options()],
                            description="IPv6 network periphery "
                                        "measurement toolkit")
    commands = parser.add_subparsers(dest="command", required=True)

    def command(name: str, text: str) -> ArgumentParser:
        return commands.add_parser(name, help=text, parents=[common])

    ingest = command("ingest", "normalize a prefix file")
    ingest.add_argument("--prefixes", required=True)

    select = command("select", "response-guided prefix selection")
    select.add_argument("--pool", required=True)
    _add_select_options(select)

    scan = command("scan", "discover periphery devices")
    scan.add_argument("--prefixes", required=True)
    _add_discovery_options(scan)

    loops = command("loops", "routing loop detection")
    loops.add_argument("--devices", required=True)
    _add_loop_options(loops)

    services = command("services", "service exposure")
    services.add_argument("--devices", required=True)
    _add_service_options(services)

    hlev = command("hlev", "LLM tool exposure funnel")
    hlev.add_argument("--targets", required=True,
                      help=f"device file ({V4_SWEEP} is rejected)")
    _add_hlev_options(hlev)

    report = command("report", "aggregate result records")
    report.add_argument("--input", required=True)
    report.add_argument("--kind", default="devices", choices=REPORT_KINDS)
    report.add_argument("--group-by", choices=GROUP_KEYS)
    report.add_argument("--percent-def",
                        choices=[d.value for d in PercentDef])
    report.add_argument("--format", default="table",
                        choices=[f.value for f in ReportFormat])
    report.add_argument("--total", action="store_true")
    report.add_argument("--top", type=int)
    report.add_argument("--scope")

    pipeline = command("pipeline", "select, scan, loops, services, hlev, "
                                   "report")
    pipeline.add_argument("--pool", required=True)
    pipeline.add_argument("--format", default="table",
                          choices=[f.value for f in ReportFormat])
    _add_discovery_options(pipeline)
    _add_select_options(pipeline)
    _add_loop_options(pipeline)
    _add_service_options(pipeline)
    _add_hlev_options(pipeline)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    ctx = None
    try:
        ctx = CliContext(args)
        return COMMANDS[args.command](ctx)
    except (ConfigurationError, FileNotFoundError, ValueError) as e:
        LOG.error(f"Configuration error: {e}")
        return EXIT_CONFIG
    except PeriscanError as e:
        LOG.exception(f"{args.command} failed: {e}")
        return EXIT_PARTIAL
    finally:
        if ctx is not None:
            ctx.close()


if __name__ == "__main__":
    sys.exit(main())
