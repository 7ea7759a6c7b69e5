"""Deterministic seed derivation.

Every random draw in the system flows from one master seed. Component seeds
are derived by hashing the master seed together with a component name, so
independent subsystems get independent streams and reruns are reproducible.
"""

import hashlib


def derive_seed(master_seed: int, *names: object) -> int:
    """Derive a 63-bit sub-seed from a master seed and a component path.

    The rule is fixed: SHA-256 over ``"<master>/<name>/<name>/..."`` and the
    first 8 bytes interpreted big-endian (top bit cleared so the value fits a
    signed 64-bit int everywhere).
    """
    path = "/".join(str(n) for n in (master_seed, *names))
    digest = hashlib.sha256(path.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big") & 0x7FFF_FFFF_FFFF_FFFF
