"""Content-addressed blob store with a seeded fault model and liveness proofs."""

from __future__ import annotations

import hashlib
import random
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path
from typing import Dict, Optional

from .errors import EmptyPayload

EPOCH_TICKS = 24


def content_hash(payload: bytes) -> bytes:
    return hashlib.sha256(payload).digest()


def proof_response(payload: bytes, nonce: bytes) -> bytes:
    return hashlib.sha256(payload + nonce).digest()


@dataclass(frozen=True)
class LivenessProof:
    digest: bytes
    nonce: bytes
    response: bytes


class ContentStore:
    """Blobs keyed by SHA-256 digest.

    ``drop_probability`` is applied independently to every stored blob at each
    :meth:`advance_epoch` call, drawing from a private ``random.Random`` seeded
    with ``rng_seed``; blobs are visited in digest order so a given seed and
    epoch sequence always drops the same set.
    """

    def __init__(self, drop_probability=0, rng_seed: int = 0):
        p = Fraction(str(drop_probability))
        if not 0 <= p <= 1:
            raise ValueError("drop_probability must lie in [0, 1]")
        self.drop_probability = p
        self.rng_seed = rng_seed
        self._rng = random.Random(rng_seed)
        self.blobs: Dict[bytes, bytes] = {}
        self.epoch = 0

    def put(self, payload: bytes) -> bytes:
        if not payload:
            raise EmptyPayload("cannot store an empty payload")
        h = content_hash(payload)
        self.blobs[h] = bytes(payload)
        return h

    def get(self, digest: bytes) -> Optional[bytes]:
        return self.blobs.get(digest)

    def __contains__(self, digest: bytes) -> bool:
        return digest in self.blobs

    def drop(self, digest: bytes) -> None:
        self.blobs.pop(digest, None)

    def advance_epoch(self) -> list:
        """Apply one epoch of faults; returns the digests dropped."""
        self.epoch += 1
        if self.drop_probability == 0:
            return []
        threshold = float(self.drop_probability)
        dropped = [h for h in sorted(self.blobs) if self._rng.random() < threshold]
        for h in dropped:
            del self.blobs[h]
        return dropped

    def prove(self, digest: bytes, nonce: bytes) -> Optional[LivenessProof]:
        """Answer a liveness probe, or ``None`` when the blob is gone."""
        payload = self.blobs.get(digest)
        if payload is None:
            return None
        return LivenessProof(digest, bytes(nonce), proof_response(payload, nonce))

    # -- directory persistence ------------------------------------------

    def save_dir(self, path) -> None:
        root = Path(path)
        root.mkdir(parents=True, exist_ok=True)
        for h, payload in sorted(self.blobs.items()):
            (root / h.hex()).write_bytes(payload)

    @classmethod
    def load_dir(cls, path, **kwargs) -> "ContentStore":
        store = cls(**kwargs)
        for f in sorted(Path(path).iterdir()):
            payload = f.read_bytes()
            if content_hash(payload).hex() != f.name:
                raise ValueError(f"{f.name}: content does not match its digest")
            store.blobs[bytes.fromhex(f.name)] = payload
        return store


def verify(payload: bytes, proof: Optional[LivenessProof]) -> bool:
    """Check a proof against the ground-truth payload held by the verifier."""
    if proof is None:
        return False
    return (
        proof.digest == content_hash(payload)
        and proof.response == proof_response(payload, proof.nonce)
    )
