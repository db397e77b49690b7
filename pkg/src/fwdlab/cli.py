"""Command line entry point: ``fwdlab <subcommand> ...``."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path
from typing import Optional, Sequence

from . import __version__

EX_USAGE = 64


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _address(text: str, default_port: int = 53) -> tuple[str, int]:
    host, sep, port = text.rpartition(":")
    if not sep:
        return text, default_port
    try:
        return host, int(port)
    except ValueError:
        raise UsageError(f"bad address {text!r}") from None


def _load_profile(args):
    from .forwarder import ProfileError, get_profile, load_profile
    from .lab import NAT_RULE

    try:
        if getattr(args, "profile_file", None):
            return load_profile(Path(args.profile_file).read_text())
        if args.profile == NAT_RULE:
            return NAT_RULE
        return get_profile(args.profile)
    except (ProfileError, OSError) as e:
        raise UsageError(str(e)) from None


SCENARIO_KEYS = ("scenario", "profile", "seed", "budget", "race_window", "chase", "max_chase_depth", "malicious_client")


def _apply_scenario_file(args) -> None:
    from .forwarder import _parse_bool, parse_kv

    if not args.scenario_file:
        return
    try:
        kv = parse_kv(Path(args.scenario_file).read_text())
    except OSError as e:
        raise UsageError(str(e)) from None
    for key, value in kv.items():
        if key not in SCENARIO_KEYS:
            raise UsageError(f"unknown scenario key {key!r}")
        if key in ("seed", "budget", "race_window", "max_chase_depth"):
            value = int(value)
        elif key in ("chase", "malicious_client"):
            value = _parse_bool(value)
        setattr(args, key, value)


def _run_attack(args, show_transcript: bool) -> int:
    from .harness import ScenarioStall, run_scenario
    from .resolver import StubConfig

    _apply_scenario_file(args)
    if not args.scenario:
        raise UsageError("--scenario is required")
    profile = _load_profile(args)
    kwargs = {}
    if args.scenario == "xdri-cname":
        kwargs["stub_config"] = StubConfig(chase_incomplete_cname=args.chase, max_chase_depth=args.max_chase_depth)
        kwargs["malicious_client"] = args.malicious_client
    elif args.scenario in ("txid-known", "static-port"):
        kwargs["spoof_budget"] = args.budget
        kwargs["race_window"] = args.race_window
    try:
        outcome = run_scenario(args.scenario, profile, seed=args.seed, **kwargs)
    except ValueError as e:
        raise UsageError(str(e)) from None
    except ScenarioStall as e:
        print(f"scenario stalled: {e}", file=sys.stderr)
        for event in e.transcript:
            print("  " + str(event), file=sys.stderr)
        return 2
    if args.json:
        print(json.dumps(outcome.to_dict(transcript=show_transcript), indent=2))
    else:
        print(outcome.render(transcript=show_transcript))
    return 0 if outcome.success else 1


def cmd_scan(args) -> int:
    from .scanner import Scanner, parse_target, render_table

    reports = []
    for spec in args.target:
        kwargs = {"test_zone": args.test_zone, "target_zone": args.target_zone}
        if spec.startswith("sim:"):
            kwargs.update(seed=args.seed, tap=args.tap, reboot=args.reboot)
        try:
            target = parse_target(spec, **kwargs)
        except (ValueError, KeyError) as e:
            raise UsageError(str(e)) from None
        reports.append(Scanner(target, seed=args.seed, timeout=args.timeout).scan())
    print(render_table(reports))
    if args.report:
        data = [r.to_json() for r in reports]
        Path(args.report).write_text(json.dumps(data[0] if len(data) == 1 else data, indent=2, sort_keys=True) + "\n")
    return max(r.exit_code() for r in reports)


def cmd_ttl_survey(args) -> int:
    from .harness import simulated_ttl_survey, ttl_survey
    from .scanner import LiveTarget

    names = list(args.names)
    if args.names_file:
        names += [l.strip() for l in Path(args.names_file).read_text().splitlines() if l.strip()]
    if args.sim:
        ttls = {}
        for item in args.sim:
            name, _, ttl = item.partition("=")
            if not ttl.isdigit():
                raise UsageError(f"--sim expects name=ttl, got {item!r}")
            ttls[name] = int(ttl)
        survey = simulated_ttl_survey(ttls, names, seed=args.seed)
    else:
        if not args.resolver:
            raise UsageError("give --resolver host[:port] or --sim name=ttl")
        host, port = _address(args.resolver)
        target = LiveTarget(host, port)
        survey = ttl_survey(names, _LiveEndpoint(target), timeout=args.timeout)
    if args.json:
        print(json.dumps({"buckets": survey.buckets, "failures": survey.failures, "ttls": survey.ttls}, indent=2))
    else:
        print(survey.render())
    return 0


class _LiveEndpoint:
    def __init__(self, target):
        self.target = target

    def exchange(self, payload, timeout=2.0):
        return self.target.exchange(payload, timeout=timeout)


def cmd_serve_ns(args) -> int:
    from .authns import ParseError, incomplete_cname_zone_text, injection_zone_text, load_zone_script
    from .live import authoritative_service

    texts = []
    for path in args.zone:
        try:
            texts.append(Path(path).read_text())
        except OSError as e:
            raise UsageError(str(e)) from None
    if args.builtin == "injection":
        texts.append(injection_zone_text(args.test_zone, args.target_zone))
    elif args.builtin == "incomplete-cname":
        texts.append(incomplete_cname_zone_text())
    if not texts:
        raise UsageError("give --zone FILE or --builtin")
    try:
        zones = [load_zone_script(t) for t in texts]
    except ParseError as e:
        raise UsageError(str(e)) from None
    service = authoritative_service(zones, _address(args.listen))
    print(f"serving {', '.join(str(z.apex) for z in zones)} on {service.address[0]}:{service.address[1]}", flush=True)
    service.serve_forever()
    return 0


def cmd_serve_forwarder(args) -> int:
    from .lab import NAT_RULE
    from .live import forwarder_service

    profile = _load_profile(args)
    if profile == NAT_RULE:
        raise UsageError("the nat-rule pseudo-profile has no live mode")
    service = forwarder_service(profile, _address(args.upstream), _address(args.listen), seed=args.seed)
    print(f"{profile.name} forwarding {service.address[0]}:{service.address[1]} -> {args.upstream}", flush=True)
    service.serve_forever()
    return 0


def build_parser() -> argparse.ArgumentParser:
    from .harness import DEFAULT_RACE_WINDOW, SCENARIOS

    p = _Parser(prog="fwdlab", description="DNS forwarder cache-poisoning laboratory")
    p.add_argument("--version", action="version", version=f"fwdlab {__version__}")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    def scenario_args(sp):
        sp.add_argument("--profile", default="dproxy-like", help="built-in profile name or nat-rule")
        sp.add_argument("--profile-file", help="profile in key = value form")
        sp.add_argument("--scenario", choices=SCENARIOS)
        sp.add_argument("--scenario-file", help="scenario in key = value form")
        sp.add_argument("--seed", type=int, default=0)
        sp.add_argument("--budget", type=int, default=65536, help="spoofed packets the attacker may send")
        sp.add_argument("--race-window", type=int, default=DEFAULT_RACE_WINDOW,
                        help="spoofed packets that fit before the genuine answer")
        sp.add_argument("--no-chase", dest="chase", action="store_false", help="stub does not chase CNAMEs")
        sp.add_argument("--max-chase-depth", type=int, default=4)
        sp.add_argument("--malicious-client", action="store_true", help="attacker also controls a LAN host")
        sp.add_argument("--json", action="store_true")

    sim = sub.add_parser("sim", help="run a scenario and print its full transcript")
    scenario_args(sim)
    attack = sub.add_parser("attack", help="run a scenario and print the outcome")
    scenario_args(attack)

    scan = sub.add_parser("scan", help="scan a simulated or live forwarder")
    scan.add_argument("--target", action="append", required=True, help="sim:<profile> or host[:port]; repeatable")
    scan.add_argument("--tap", dest="tap", action="store_true", default=True, help="observe upstream traffic (sim only)")
    scan.add_argument("--no-tap", dest="tap", action="store_false")
    scan.add_argument("--no-reboot", dest="reboot", action="store_false", help="do not power-cycle the simulated router")
    scan.add_argument("--report", help="write the JSON report here")
    scan.add_argument("--seed", type=int, default=0)
    scan.add_argument("--timeout", type=float, default=3.0)
    scan.add_argument("--test-zone", default="test.com")
    scan.add_argument("--target-zone", default="target.com")

    ttl = sub.add_parser("ttl-survey", help="bucket A-record TTLs")
    ttl.add_argument("names", nargs="*")
    ttl.add_argument("--names-file")
    ttl.add_argument("--resolver", help="host[:port] of a live resolver")
    ttl.add_argument("--sim", action="append", metavar="NAME=TTL", help="simulated zone record; repeatable")
    ttl.add_argument("--seed", type=int, default=0)
    ttl.add_argument("--timeout", type=float, default=2.0)
    ttl.add_argument("--json", action="store_true")

    ns = sub.add_parser("serve-ns", help="serve zone scripts on real sockets")
    ns.add_argument("--zone", action="append", default=[], help="zone script file; repeatable")
    ns.add_argument("--builtin", choices=("injection", "incomplete-cname"))
    ns.add_argument("--test-zone", default="test.com")
    ns.add_argument("--target-zone", default="target.com")
    ns.add_argument("--listen", default="127.0.0.1:5353")

    fw = sub.add_parser("serve-forwarder", help="run a forwarder profile on real sockets")
    fw.add_argument("--profile", default="dnsmasq-like")
    fw.add_argument("--profile-file")
    fw.add_argument("--upstream", required=True, help="host[:port] of the upstream resolver")
    fw.add_argument("--listen", default="127.0.0.1:5300")
    fw.add_argument("--seed", type=int, default=0)
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            raise UsageError(parser.format_usage().strip())
        handlers = {
            "sim": lambda a: _run_attack(a, show_transcript=True),
            "attack": lambda a: _run_attack(a, show_transcript=False),
            "scan": cmd_scan,
            "ttl-survey": cmd_ttl_survey,
            "serve-ns": cmd_serve_ns,
            "serve-forwarder": cmd_serve_forwarder,
        }
        return handlers[args.command](args)
    except UsageError as e:
        print(str(e), file=sys.stderr)
        return EX_USAGE


if __name__ == "__main__":
    sys.exit(main())
