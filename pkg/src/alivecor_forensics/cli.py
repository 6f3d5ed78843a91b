"""Command-line front end.

Exit codes: 0 ok, 2 usage or ground-truth spec error, 3 app not found,
4 unreadable input or output, 5 verification mismatch.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from collections import Counter
from datetime import datetime, timezone
from pathlib import Path

from . import __version__, android, ios
from . import fixtures as fx
from . import report as rp
from ._scan import categorize, walk_files
from .errors import AppNotFound, ForensicError, OutDirNotEmpty, TruthSpecError, UnparseableRaw, UnwritableTarget
from .evidence import Encoding, ForensicTimestamp, sha256_file

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_NOT_FOUND = 3
EXIT_IO = 4
EXIT_MISMATCH = 5

log = logging.getLogger("alivecor_forensics")

EXTRACTORS = (("Android", android), ("Ios", ios))


class CliError(Exception):
    def __init__(self, message: str, code: int):
        super().__init__(message)
        self.code = code


def _err(msg: str) -> None:
    print(f"kardia-forensics: {msg}", file=sys.stderr)


def _dump_dir(path: str) -> Path:
    p = Path(path)
    if not p.is_dir():
        raise CliError(f"{path}: not a readable directory", EXIT_IO)
    return p


def _emit(text: str, out: str | None) -> None:
    if out is None or out == "-":
        sys.stdout.write(text)
        return
    try:
        Path(out).write_text(text, encoding="utf-8", newline="")
    except OSError as exc:
        raise CliError(f"cannot write {out}: {exc}", EXIT_IO) from None


def _pin_time(text: str | None) -> datetime:
    if text is None:
        return datetime.now(timezone.utc)
    try:
        return ForensicTimestamp(text, Encoding.ISO8601_WITH_OFFSET).utc
    except UnparseableRaw as exc:
        raise CliError(f"--pin-time: {exc}", EXIT_USAGE) from None


def _tree_digests(root: Path) -> dict[str, str]:
    return {p.relative_to(root).as_posix(): sha256_file(p) for p in walk_files(root) if p.is_file()}


def _extract_all(dump: Path) -> list:
    cases = []
    for name, mod in EXTRACTORS:
        try:
            mod.locate_app_root(dump)
        except AppNotFound:
            continue
        log.info("extracting %s layout", name)
        cases.append(mod.extract(dump))
    if not cases:
        raise CliError(f"no Kardia application data found under {dump}", EXIT_NOT_FOUND)
    for c in cases:
        for w in c.warnings:
            _err(f"warning: {w.code}: {w.message}")
    return cases


def _report(args) -> rp.CaseReport:
    dump = _dump_dir(args.dump)
    before = _tree_digests(dump) if args.paranoid else None
    try:
        cases = _extract_all(dump)
    except OSError as exc:
        raise CliError(str(exc), EXIT_IO) from None
    if before is not None:
        after = _tree_digests(dump)
        changed = sorted(k for k in before.keys() | after.keys() if before.get(k) != after.get(k))
        if changed:
            for path in changed:
                _err(f"input changed during extraction: {path}")
            raise CliError("paranoid digest check failed", EXIT_MISMATCH)
    return rp.build_report(cases, _pin_time(args.pin_time))


# --------------------------------------------------------------------------
# commands

def cmd_scan(args) -> int:
    dump = _dump_dir(args.dump)
    found = []
    for name, mod in EXTRACTORS:
        try:
            layout = mod.locate_app_root(dump)
        except AppNotFound:
            continue
        root = layout.path()
        census = Counter(categorize(p).value for p in walk_files(root))
        found.append({"platform": name, "app_root": layout.app_root, "files": dict(sorted(census.items()))})
    if args.format == "json":
        _emit(json.dumps({"dump": str(dump), "found": found}, indent=2) + "\n", args.out)
    else:
        lines = []
        for f in found:
            lines.append(f"{f['platform']}: {f['app_root']}")
            lines += [f"  {k}: {v}" for k, v in f["files"].items()]
        if not found:
            lines.append("no Kardia application data found")
        _emit("\n".join(lines) + "\n", args.out)
    return EXIT_OK if found else EXIT_NOT_FOUND


def cmd_extract(args) -> int:
    r = _report(args)
    render = {"json": rp.render_json, "text": rp.render_text, "csv": rp.render_csv}[args.format]
    _emit(render(r), args.out)
    return EXIT_OK


def cmd_timeline(args) -> int:
    r = _report(args)
    if args.format == "json":
        doc = rp.report_dict(r)["timeline"]
        _emit(json.dumps(doc, indent=2, ensure_ascii=False) + "\n", args.out)
    elif args.format == "csv":
        _emit(rp.render_csv(r), args.out)
    else:
        text = rp.render_text(r)
        start = text.index("Timeline (")
        _emit(text[start:text.index("\nFindings (")] + "\n", args.out)
    return EXIT_OK


def cmd_verify(args) -> int:
    dump = _dump_dir(args.dump)
    try:
        entries = rp.parse_manifest(Path(args.manifest).read_text(encoding="utf-8"))
    except OSError as exc:
        raise CliError(f"cannot read {args.manifest}: {exc}", EXIT_IO) from None
    except (ValueError, KeyError) as exc:
        raise CliError(f"{args.manifest}: {exc}", EXIT_USAGE) from None
    problems = []
    for digest, size, rel in entries:
        path = dump / rel
        if not path.is_file():
            problems.append(f"ABSENT    {rel}")
            continue
        try:
            actual = sha256_file(path)
        except OSError:
            problems.append(f"UNREADABLE {rel}")
            continue
        if actual != digest or path.stat().st_size != size:
            problems.append(f"MODIFIED  {rel}")
    if problems:
        _emit("\n".join(problems) + "\n", args.out)
        _err(f"{len(problems)} of {len(entries)} item(s) failed verification")
        return EXIT_MISMATCH
    _emit(f"ok: {len(entries)} item(s) verified\n", args.out)
    return EXIT_OK


def cmd_gen_fixture(args) -> int:
    if args.spec:
        try:
            text = Path(args.spec).read_text(encoding="utf-8")
        except OSError as exc:
            raise CliError(f"cannot read {args.spec}: {exc}", EXIT_IO) from None
        try:
            truth = fx.load_truth(text)
        except TruthSpecError as exc:
            raise CliError(f"{args.spec}: {exc}", EXIT_USAGE) from None
        if args.seed is not None:
            truth.seed = args.seed
    else:
        truth = fx.default_truth(args.seed or 0)
    platforms = ["android", "ios"] if args.platform == "both" else [args.platform]
    try:
        rows = []
        for i, platform in enumerate(platforms):
            gen = fx.gen_android_dump if platform == "android" else fx.gen_ios_dump
            rows += gen(truth, args.out_dir, exist_ok=i > 0)
        if args.mutate and args.mutate != "none":
            for platform in platforms:
                _err(fx.mutate_dump(args.out_dir, args.mutate, platform))
    except OutDirNotEmpty as exc:
        raise CliError(str(exc), EXIT_IO) from None
    except (UnwritableTarget, OSError) as exc:
        raise CliError(str(exc), EXIT_IO) from None
    except ValueError as exc:
        raise CliError(str(exc), EXIT_USAGE) from None
    # the manifest describes the dump as generated, so a mutated dump fails verify
    sys.stdout.write("".join(f"{d}  {s}  {p}\n" for d, s, p in rows))
    return EXIT_OK


# --------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="kardia-forensics", description="Kardia ECG app artifact extraction")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, formats, default):
        p.add_argument("--format", choices=formats, default=default)
        p.add_argument("--out", help="output file (default: stdout)")

    p = sub.add_parser("scan", help="detect Android and iOS app layouts in a dump")
    p.add_argument("dump")
    common(p, ["text", "json"], "text")
    p.set_defaults(func=cmd_scan)

    for name, func, default, helptext in (
        ("extract", cmd_extract, "json", "run the full pipeline and write a case report"),
        ("timeline", cmd_timeline, "text", "print the merged event timeline"),
    ):
        p = sub.add_parser(name, help=helptext)
        p.add_argument("dump")
        common(p, ["json", "text", "csv"], default)
        p.add_argument("--paranoid", action="store_true", help="hash every input file before and after extraction")
        p.add_argument("--pin-time", metavar="ISO8601", help="fixed generated_at for reproducible reports")
        p.set_defaults(func=func)

    p = sub.add_parser("verify", help="re-check evidence digests against a report or manifest")
    p.add_argument("manifest", help="JSON report or 'digest  size  path' manifest")
    p.add_argument("dump")
    p.add_argument("--out")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("gen-fixture", help="write a synthetic dump from a ground-truth spec")
    p.add_argument("spec", nargs="?", help="YAML ground-truth document (default: built-in scenario)")
    p.add_argument("--out", dest="out_dir", required=True, help="empty output directory")
    p.add_argument("--platform", choices=["android", "ios", "both"], default="android")
    p.add_argument("--seed", type=int)
    p.add_argument("--mutate", choices=[m.value for m in fx.Mutation])
    p.set_defaults(func=cmd_gen_fixture)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, stream=sys.stderr,
                        format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except CliError as exc:
        _err(str(exc))
        return exc.code
    except ForensicError as exc:
        _err(str(exc))
        return EXIT_IO
    except OSError as exc:
        _err(str(exc))
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
