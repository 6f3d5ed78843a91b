"""Shared test utilities: read-only extraction guard and dump builders."""

import hashlib
from pathlib import Path

from alivecor_forensics import android, ios
from alivecor_forensics import fixtures as fx

ACCEPTANCE_LINES: list[str] = []
READONLY_LOG = {"extractions": 0, "violations": []}


def tree_digests(root) -> dict[str, str]:
    root = Path(root)
    out = {}
    for p in sorted(root.rglob("*")):
        if p.is_file() and not p.is_symlink():
            out[p.relative_to(root).as_posix()] = hashlib.sha256(p.read_bytes()).hexdigest()
    return out


def guarded(fn, dump, *args, **kwargs):
    """Run ``fn`` and fail if any file under ``dump`` was created, changed or removed."""
    before = tree_digests(dump)
    try:
        return fn(*args, **kwargs)
    finally:
        after = tree_digests(dump)
        READONLY_LOG["extractions"] += 1
        if before != after:
            changed = sorted(k for k in before.keys() | after.keys() if before.get(k) != after.get(k))
            READONLY_LOG["violations"].append((str(dump), changed))
            raise AssertionError(f"extraction modified input: {changed}")


def extract(platform: str, dump):
    mod = android if platform == "android" else ios
    return guarded(mod.extract, dump, dump)


def make_dump(tmp_path, platform: str, truth=None, mutation=None, name=None):
    truth = truth if truth is not None else fx.default_truth(0)
    out = tmp_path / (name or f"{platform}-dump")
    gen = fx.gen_android_dump if platform == "android" else fx.gen_ios_dump
    gen(truth, out)
    if mutation is not None:
        fx.mutate_dump(out, mutation)
    return out
