"""Cantilever beam used by external_beam.json: reads designs as CSV rows on
stdin and writes area, tip deflection and stress margin as CSV on stdout."""

import sys

LENGTH = 100.0
MODULUS = 2.0e4
ALLOWED_STRESS = 300.0

for line in sys.stdin:
    if not line.strip():
        continue
    b, h, p = (float(v) for v in line.split(","))
    inertia = b * h**3 / 12.0
    deflection = p * LENGTH**3 / (3.0 * MODULUS * inertia)
    stress = p * LENGTH * (h / 2.0) / inertia
    print(f"{b * h!r},{deflection!r},{ALLOWED_STRESS - stress!r}")
