"""Generate the bundled solar-system initial conditions.

Positions and velocities at J2000 (JD 2451545.0, ecliptic and equinox of
J2000) are computed from the JPL "Approximate Positions of the Major
Planets" mean Keplerian elements (valid 1800-2050) and the IAU planetary
mass ratios.  Velocities are the osculating two-body velocities for
``k_i = G (m_sun + m_i)``.  Units: AU, day, solar mass.

Usage: python3 scripts/make_solar_system.py [output.json]
"""

import json
import math
import sys
from pathlib import Path

G = 0.01720209895**2

# a [AU], e, I [deg], L [deg], long. perihelion [deg], long. ascending node [deg]
ELEMENTS = {
    "Mercury": (0.38709927, 0.20563593, 7.00497902, 252.25032350, 77.45779628, 48.33076593),
    "Venus": (0.72333566, 0.00677672, 3.39467605, 181.97909950, 131.60246718, 76.67984255),
    "EM Bary": (1.00000261, 0.01671123, -0.00001531, 100.46457166, 102.93768193, 0.0),
    "Mars": (1.52371034, 0.09339410, 1.84969142, -4.55343205, -23.94362959, 49.55953891),
    "Jupiter": (5.20288700, 0.04838624, 1.30439695, 34.39644051, 14.72847983, 100.47390909),
    "Saturn": (9.53667594, 0.05386179, 2.48599187, 49.95424423, 92.59887831, 113.66242448),
    "Uranus": (19.18916464, 0.04725744, 0.77263783, 313.23810451, 170.95427630, 74.01692503),
    "Neptune": (30.06992276, 0.00859048, 1.77004347, -55.12002969, 44.96476227, 131.78422574),
    "Pluto": (39.48211675, 0.24882730, 17.14001206, 238.92903833, 224.06891629, 110.30393684),
}

# sun mass / body mass
INVERSE_MASS = {
    "Mercury": 6023600.0,
    "Venus": 408523.71,
    "EM Bary": 328900.56,
    "Mars": 3098708.0,
    "Jupiter": 1047.3486,
    "Saturn": 3497.898,
    "Uranus": 22902.98,
    "Neptune": 19412.24,
    "Pluto": 1.35e8,
}


def solve_kepler(M, e):
    E = M + e * math.sin(M)
    for _ in range(50):
        dE = (E - e * math.sin(E) - M) / (1 - e * math.cos(E))
        E -= dE
        if abs(dE) < 1e-16:
            break
    return E


def state_from_elements(a, e, inc, L, varpi, node, k):
    inc, L, varpi, node = (math.radians(x) for x in (inc, L, varpi, node))
    omega = varpi - node
    M = math.remainder(L - varpi, 2 * math.pi)
    E = solve_kepler(M, e)
    n = math.sqrt(k / a**3)
    Edot = n / (1 - e * math.cos(E))
    b = a * math.sqrt(1 - e * e)
    xp, yp = a * (math.cos(E) - e), b * math.sin(E)
    vxp, vyp = -a * math.sin(E) * Edot, b * math.cos(E) * Edot

    co, so = math.cos(omega), math.sin(omega)
    cn, sn = math.cos(node), math.sin(node)
    ci, si = math.cos(inc), math.sin(inc)
    rot = (
        (co * cn - so * sn * ci, -so * cn - co * sn * ci),
        (co * sn + so * cn * ci, -so * sn + co * cn * ci),
        (so * si, co * si),
    )
    pos = [r[0] * xp + r[1] * yp for r in rot]
    vel = [r[0] * vxp + r[1] * vyp for r in rot]
    return pos, vel


def build():
    bodies = [{"name": "Sun", "mass": 1.0, "position": [0.0, 0.0, 0.0], "velocity": [0.0, 0.0, 0.0]}]
    for name, el in ELEMENTS.items():
        m = 1.0 / INVERSE_MASS[name]
        pos, vel = state_from_elements(*el, k=G * (1.0 + m))
        bodies.append({"name": name, "mass": m, "position": pos, "velocity": vel})
    return {
        "G": G,
        "epoch": "J2000 (JD 2451545.0 TDB)",
        "units": {"length": "au", "time": "day", "mass": "solar"},
        "frame": "heliocentric ecliptic J2000",
        "source": (
            "JPL Solar System Dynamics, 'Approximate Positions of the Major Planets', "
            "mean elements valid 1800-2050, evaluated at J2000; IAU planetary mass ratios. "
            "Generated by scripts/make_solar_system.py."
        ),
        "bodies": bodies,
    }


def main(argv):
    out = Path(argv[1]) if len(argv) > 1 else Path(__file__).resolve().parents[1] / "src/fcirk/data/solar_system_j2000.json"
    out.write_text(json.dumps(build(), indent=2) + "\n")
    print(f"wrote {out}")


if __name__ == "__main__":
    main(sys.argv)
