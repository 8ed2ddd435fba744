"""Writes golden.ckpt with struct packing, independent of the C++ writer."""
import json
import struct
from pathlib import Path

FNV_OFFSET = 0xCBF29CE484222325
FNV_PRIME = 0x100000001B3


def fnv1a64(data: bytes) -> int:
    h = FNV_OFFSET
    for byte in data:
        h ^= byte
        h = (h * FNV_PRIME) & 0xFFFFFFFFFFFFFFFF
    return h


def checkpoint(metadata, tensors) -> bytes:
    meta = json.dumps(metadata, separators=(",", ":"), sort_keys=True).encode()
    out = b"RLVCKPT\0" + struct.pack("<I", 1) + struct.pack("<Q", len(meta)) + meta
    out += struct.pack("<I", len(tensors))
    for name, shape, values in tensors:
        out += struct.pack("<I", len(name)) + name.encode()
        out += struct.pack("<I", len(shape))
        out += b"".join(struct.pack("<Q", e) for e in shape)
        out += b"".join(struct.pack("<d", v) for v in values)
    return out + struct.pack("<Q", fnv1a64(out))


if __name__ == "__main__":
    data = checkpoint(
        {"kind": "golden", "n": 2},
        [
            ("w", [2, 3], [0.5, -1.25, 3.0, 0.0, 1e-3, -7.75]),
            ("b", [3], [1.0, 2.0, -0.5]),
        ],
    )
    Path(__file__).with_name("golden.ckpt").write_bytes(data)
