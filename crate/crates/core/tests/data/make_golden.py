"""Writes the RFCZ golden blobs straight from the format description.

Header (little-endian): magic "RFCZ", u16 version, 16-byte model id, u8 level,
u16 n_c, u16 latent channels, u32 width, u32 frame length. Payload: width
indices of ceil(log2 n_c) bits, MSB first, zero-padded to a whole byte.

Run from this directory: python3 make_golden.py
"""
import hashlib
import math
import struct

MODEL_ID = hashlib.sha256(b"hqarf golden vector").digest()[:16]


def pack(indices, bits):
    acc = 0
    for v in indices:
        assert 0 <= v < (1 << bits)
        acc = (acc << bits) | v
    total = len(indices) * bits
    nbytes = (total + 7) // 8
    acc <<= nbytes * 8 - total
    return acc.to_bytes(nbytes, "big")


def blob(level, n_c, latent, frame_len, indices):
    width = frame_len >> (level + 1)
    assert len(indices) == width
    bits = math.ceil(math.log2(n_c))
    header = struct.pack("<4sH16sBHHII", b"RFCZ", 1, MODEL_ID, level, n_c, latent, width, frame_len)
    return header + pack(indices, bits)


def main():
    l0 = [(37 * i + 5) % 64 for i in range(512)]
    l4 = [63 - (11 * i) % 64 for i in range(32)]
    for name, data in [
        ("golden_l0.rfcz", blob(0, 64, 64, 1024, l0)),
        ("golden_l4.rfcz", blob(4, 64, 64, 1024, l4)),
    ]:
        with open(name, "wb") as f:
            f.write(data)
        print(name, len(data), "bytes")


if __name__ == "__main__":
    main()
