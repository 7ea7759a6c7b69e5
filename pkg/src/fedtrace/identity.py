"""Identity-bound trigger assignment.

Each participant's signing key signs its identity message (with the
registration timestamp folded in), and the signature is hashed down to a
vocabulary index. The index doubles as the participant's trigger token, so
trigger ownership is cryptographically tied to an identity and disputes can
be settled by registration timestamp.

Signatures use Ed25519: key generation is deterministic given seed bytes and
the scheme itself is deterministic, so a fixed seed reproduces the whole
registry. Hash-to-index uses SHA-256 over ``signature || counter`` with the
digest read as a big-endian integer reduced modulo the vocabulary size; the
counter (minimal big-endian bytes, so counter 0 is one zero byte) increments
past occupied or reserved indices.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field

from cryptography.exceptions import InvalidSignature
from cryptography.hazmat.primitives.asymmetric.ed25519 import (
    Ed25519PrivateKey,
    Ed25519PublicKey,
)

from .errors import CapacityError, IntegrityError
from .model import Vocab

SIGNATURE_ALGORITHM = "ed25519"
_MAX_REHASH = 100_000


@dataclass(frozen=True)
class ClientIdentity:
    """A participant's signing identity: key pair, message and timestamp."""

    client_id: int
    algorithm: str
    private_key: bytes
    public_key: bytes
    message: bytes
    timestamp: int


@dataclass(frozen=True)
class TriggerAssignment:
    """A signed, hash-derived trigger index registered to one client.

    ``vocab_size`` records the modulus the index was derived against; it is
    needed to re-derive the index during verification (0 = unknown, e.g. for
    registries reloaded from the on-disk CA format, which stores only the
    dispute-relevant fields).
    """

    client_id: int
    public_key: bytes
    signature: bytes
    timestamp: int
    trigger_index: int
    rehash_counter: int
    vocab_size: int = 0
    trigger_token: str = ""


@dataclass
class TriggerRegistry:
    """Plays the certification-authority role: ordered trigger registrations.

    Single-writer: only ``sign_and_assign`` mutates it. Assignments are kept
    in registration (timestamp) order.
    """

    assignments: list[TriggerAssignment] = field(default_factory=list)
    universal: TriggerAssignment | None = None
    reserved_indices: frozenset[int] = frozenset()

    def occupied_indices(self) -> set[int]:
        taken = {a.trigger_index for a in self.assignments}
        if self.universal is not None:
            taken.add(self.universal.trigger_index)
        return taken

    def client_triggers(self) -> dict[int, int]:
        """client_id -> trigger index, in registration order."""
        return {a.client_id: a.trigger_index for a in self.assignments}


def _key_seed_bytes(seed: int) -> bytes:
    return hashlib.sha256(b"ed25519-key/" + str(seed).encode("ascii")).digest()


def _signed_payload(message: bytes, timestamp: int) -> bytes:
    # Timestamp is bound into the signature so registration time is disputable
    # evidence, not mutable metadata.
    return message + timestamp.to_bytes(8, "big", signed=False)


def _counter_bytes(counter: int) -> bytes:
    return counter.to_bytes(max(1, (counter.bit_length() + 7) // 8), "big")


def _index_from_signature(signature: bytes, counter: int, vocab_size: int) -> int:
    digest = hashlib.sha256(signature + _counter_bytes(counter)).digest()
    return int.from_bytes(digest, "big") % vocab_size


def generate_identity(
    client_id: int, message: bytes, timestamp: int, seed: int
) -> ClientIdentity:
    """Deterministic Ed25519 key pair for ``seed``, bound to the message."""
    if not message:
        raise ValueError("identity message must be non-empty")
    private = Ed25519PrivateKey.from_private_bytes(_key_seed_bytes(seed))
    return ClientIdentity(
        client_id=client_id,
        algorithm=SIGNATURE_ALGORITHM,
        private_key=private.private_bytes_raw(),
        public_key=private.public_key().public_bytes_raw(),
        message=bytes(message),
        timestamp=int(timestamp),
    )


def sign_and_assign(
    identity: ClientIdentity,
    vocab_size: int,
    registry: TriggerRegistry,
    *,
    universal: bool = False,
    vocab: Vocab | None = None,
) -> TriggerAssignment:
    """Sign the identity and derive a collision-free trigger index.

    The signature covers ``message || timestamp``; the index is rehashed with
    an incrementing counter until it avoids already-registered and reserved
    indices. The assignment is recorded in the registry (as the universal
    server trigger when ``universal=True``).
    """
    occupied = registry.occupied_indices()
    if vocab_size <= len(occupied) + len(registry.reserved_indices):
        raise CapacityError(
            f"vocabulary of {vocab_size} cannot fit another trigger "
            f"({len(occupied)} assigned, {len(registry.reserved_indices)} reserved)"
        )

    private = Ed25519PrivateKey.from_private_bytes(identity.private_key)
    payload = _signed_payload(identity.message, identity.timestamp)
    signature = private.sign(payload)
    try:
        Ed25519PublicKey.from_public_bytes(identity.public_key).verify(
            signature, payload
        )
    except InvalidSignature as exc:
        raise IntegrityError("fresh signature failed verification") from exc

    blocked = occupied | set(registry.reserved_indices)
    counter = 0
    index = _index_from_signature(signature, counter, vocab_size)
    while index in blocked:
        counter += 1
        if counter > _MAX_REHASH:
            raise CapacityError("rehash counter exhausted without a free index")
        index = _index_from_signature(signature, counter, vocab_size)

    assignment = TriggerAssignment(
        client_id=identity.client_id,
        public_key=identity.public_key,
        signature=signature,
        timestamp=identity.timestamp,
        trigger_index=index,
        rehash_counter=counter,
        vocab_size=vocab_size,
        trigger_token=vocab.tokens[index] if vocab is not None else f"<{index}>",
    )
    if universal:
        registry.universal = assignment
    else:
        registry.assignments.append(assignment)
        registry.assignments.sort(key=lambda a: a.timestamp)
    return assignment


def verify_assignment(
    assignment: TriggerAssignment, identity_public_key: bytes, message: bytes
) -> bool:
    """True iff the signature verifies and the index re-derives exactly."""
    if assignment.vocab_size <= 0:
        return False
    payload = _signed_payload(message, assignment.timestamp)
    try:
        Ed25519PublicKey.from_public_bytes(identity_public_key).verify(
            assignment.signature, payload
        )
    except (InvalidSignature, ValueError):
        return False
    derived = _index_from_signature(
        assignment.signature, assignment.rehash_counter, assignment.vocab_size
    )
    return derived == assignment.trigger_index


def resolve_dispute(
    registry: TriggerRegistry, responding_triggers: list[int] | set[int]
) -> int | None:
    """Earliest-registered client among those whose trigger responded."""
    responding = set(responding_triggers)
    matches = [a for a in registry.assignments if a.trigger_index in responding]
    if not matches:
        return None
    return min(matches, key=lambda a: a.timestamp).client_id


def save_registry(registry: TriggerRegistry, path) -> None:
    """JSON array of assignment records, in registration order."""
    records = [
        {
            "client_id": a.client_id,
            "public_key_hex": a.public_key.hex(),
            "signature_hex": a.signature.hex(),
            "timestamp": a.timestamp,
            "trigger_index": a.trigger_index,
            "rehash_counter": a.rehash_counter,
        }
        for a in registry.assignments
    ]
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(records, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_registry(path) -> TriggerRegistry:
    """Rebuild a registry adequate for tracing and dispute resolution."""
    with open(path, encoding="utf-8") as fh:
        records = json.load(fh)
    assignments = [
        TriggerAssignment(
            client_id=r["client_id"],
            public_key=bytes.fromhex(r["public_key_hex"]),
            signature=bytes.fromhex(r["signature_hex"]),
            timestamp=r["timestamp"],
            trigger_index=r["trigger_index"],
            rehash_counter=r["rehash_counter"],
        )
        for r in records
    ]
    assignments.sort(key=lambda a: a.timestamp)
    return TriggerRegistry(assignments=assignments)
