"""Writes exact flow-encoding pairs: x -> round_half_away((clamp(x) + 40) * 255 / 80)."""
import math
import random
import sys
from fractions import Fraction


def encode(x):
    c = min(max(Fraction(x), Fraction(-40)), Fraction(40))
    return math.floor((c + 40) * Fraction(255, 80) + Fraction(1, 2))


def main(path):
    rng = random.Random(11)
    xs = [-1e9, -40.5, -40.0, 0.0, -0.0, 40.0, 41.0, 1e9, 5e-324, -5e-324]
    # half-way points p = n + 1/2 and their float neighbours
    for n in (0, 63, 127, 128, 200, 254):
        x = float(Fraction(2 * n + 1, 2) * Fraction(80, 255) - 40)
        xs += [x, math.nextafter(x, -math.inf), math.nextafter(x, math.inf)]
    while len(xs) < 64:
        xs.append(rng.uniform(-45.0, 45.0))
    with open(path, "w") as f:
        f.write("# x encoded\n")
        for x in xs:
            f.write(f"{x.hex()} {encode(x)}\n")


if __name__ == "__main__":
    main(sys.argv[1])
