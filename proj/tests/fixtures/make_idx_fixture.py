"""Writes a 4-image IDX fixture (4x4 grayscale) plus labels.

Pixel (i, r, c) = (17*i + 3*r + 5*c) % 256; labels 0, 1, 2, 1.
Also writes a label file containing an out-of-range label (7) at index 2.
"""
import os
import struct

here = os.path.dirname(os.path.abspath(__file__))
n, rows, cols = 4, 4, 4

with open(os.path.join(here, "tiny-images.idx3"), "wb") as f:
    f.write(struct.pack(">IIII", 0x803, n, rows, cols))
    f.write(bytes((17 * i + 3 * r + 5 * c) % 256 for i in range(n) for r in range(rows) for c in range(cols)))

with open(os.path.join(here, "tiny-labels.idx1"), "wb") as f:
    f.write(struct.pack(">II", 0x801, n))
    f.write(bytes([0, 1, 2, 1]))

with open(os.path.join(here, "bad-labels.idx1"), "wb") as f:
    f.write(struct.pack(">II", 0x801, n))
    f.write(bytes([0, 1, 7, 1]))

with open(os.path.join(here, "truncated-images.idx3"), "wb") as f:
    f.write(struct.pack(">IIII", 0x803, n, rows, cols))
    f.write(bytes(10))

open(os.path.join(here, "empty.idx3"), "wb").close()
