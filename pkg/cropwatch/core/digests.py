# core/digests.py
import json


FNV_OFFSET = 0xCBF29CE484222325
FNV_PRIME = 0x100000001B3
MASK64 = (1 << 64) - 1


def fnv1a_64(data: bytes) -> str:
    """FNV-1a 64-bit digest as 16 lowercase hex characters."""
    value = FNV_OFFSET
    for byte in data:
        value = ((value ^ byte) * FNV_PRIME) & MASK64
    return f"{value:016x}"


def canonical_json(payload) -> str:
    return json.dumps(payload, sort_keys=True, indent=2) + "\n"


def digest_json(payload) -> str:
    return fnv1a_64(canonical_json(payload).encode('utf-8'))


def digest_file(path) -> str:
    with open(path, 'rb') as handle:
        return fnv1a_64(handle.read())
