"""Write the bundled composition/splitting coefficient files (40 digits).

Usage: python3 scripts/make_coefficients.py
"""

import json
from pathlib import Path

import mpmath as mp

mp.mp.dps = 50
OUT = Path(__file__).resolve().parents[1] / "src/fcirk/data"


def fmt(x):
    return mp.nstr(x, 40, min_fixed=1, max_fixed=0)


def write(name, kind, order, coefficients, label):
    doc = {"kind": kind, "order": order, "label": label, "coefficients": {k: [fmt(x) for x in v] for k, v in coefficients.items()}}
    (OUT / f"{name}.json").write_text(json.dumps(doc, indent=2) + "\n")


cbrt2 = mp.cbrt(2)
g1 = 1 / (2 - cbrt2)
g0 = 1 - 2 * g1
write("triple_jump", "composition", 4, {"gamma": [g1, g0, g1]}, "symmetric triple jump, order 4")

p = 1 / (4 - mp.cbrt(4))
write("suzuki5", "composition", 4, {"gamma": [p, p, 1 - 4 * p, p, p]}, "Suzuki 5-stage fractal, order 4")

write("strang_aba", "aba", 2, {"a": [mp.mpf(1) / 2, mp.mpf(1) / 2], "b": [mp.mpf(1)]}, "ABA leapfrog, order 2")

write(
    "triple_jump_aba",
    "aba",
    4,
    {"a": [g1 / 2, (g0 + g1) / 2, (g0 + g1) / 2, g1 / 2], "b": [g1, g0, g1]},
    "triple jump written as an ABA splitting, order 4",
)
print("ok")
