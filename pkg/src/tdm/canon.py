"""Canonical JSON and hashing helpers used for snapshots, logs and reports."""

import hashlib
import json


def dumps(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=False)


def dump_bytes(obj) -> bytes:
    return dumps(obj).encode("utf-8")


def digest(obj) -> str:
    return hashlib.sha256(dump_bytes(obj)).hexdigest()


def derive_seed(master_seed: int, *path) -> int:
    """64-bit child seed from a master seed and a path of labels/indices."""
    material = ":".join([str(master_seed), *map(str, path)]).encode()
    return int.from_bytes(hashlib.sha256(material).digest()[:8], "big")
