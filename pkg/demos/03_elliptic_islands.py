"""Elliptic period-two points of the return map and their invariant eggs.

A period-2 point whose linearization rotates (eigenvalues on the unit
circle) is surrounded by invariant curves.  We locate it, measure the
largest ellipse on which the two-step itinerary stays constant and check
that a long orbit started inside never leaves.
"""
from pathlib import Path

import numpy as np

from pwflow import io
from pwflow.flow import make_spec
from pwflow.game import shapley_matrix
from pwflow.level import hexagon_itinerary, periodic_orbit_solve
from pwflow.section import (build_section, egg_containment, egg_region, find_periodic_points,
                            iterate_return)

OUT = Path(__file__).parent / "out"

spec = make_spec(shapley_matrix(0.618, exact=False))
gamma = periodic_orbit_solve(hexagon_itinerary(spec, 1.0), spec, 1.0)
S = build_section(gamma, spec)

guess = np.array([-2.5733, 2.0788])
pp = find_periodic_points(2, ((guess[0] - .05, guess[0] + .05), (guess[1] - .05, guess[1] + .05)),
                          S, spec, samples=5)[0]
print("period-2 point:", np.round(pp.point, 5), pp.kind)
print("eigenvalues:", np.round(pp.eigenvalues, 6), "moduli:", np.round(np.abs(pp.eigenvalues), 9))

egg = egg_region(pp, S, spec)
print(f"egg radius {egg.radius:.3f}")
start = egg.center + 0.6 * (egg.boundary(4)[0] - egg.center)
ok, first_exit = egg_containment(egg, S, spec, start, n=1000)
print("1000 returns stay inside the eggs:", ok)

orb = iterate_return(start, S, spec, 400)
OUT.mkdir(exist_ok=True)
io.svg_plot([egg.boundary(200), egg.boundary(200, partner=True),
             np.array([np.asarray(u, dtype=float) for u in orb.samples])],
            OUT / "eggs.svg", title="elliptic islands")
print("wrote", OUT / "eggs.svg")
