"""The cyclic game B near the golden mean.

On the level set H = 1 the flow has a hexagonal periodic orbit.  It bounds
a disc S of four triangles, and the first return to S is piecewise affine
and area preserving.  We compute the hexagon, build S and scatter a few
return-map orbits: near the boundary points barely move, while inside we
see the two elliptic islands.
"""
from fractions import Fraction
from pathlib import Path

import numpy as np

from pwflow import io
from pwflow.flow import make_spec
from pwflow.game import shapley_matrix
from pwflow.level import hexagon_itinerary, periodic_orbit_solve
from pwflow.section import build_section, iterate_return

OUT = Path(__file__).parent / "out"

spec = make_spec(shapley_matrix(Fraction(618, 1000), exact=True))
gamma = periodic_orbit_solve(hexagon_itinerary(spec, 1), spec, 1)
S = build_section(gamma, spec)
print("hexagon period (exact):", gamma.period_s, "~", float(gamma.period_s))
print("area of S (exact):", S.area())

spec_f = make_spec(shapley_matrix(0.618, exact=False))
gamma_f = periodic_orbit_solve(hexagon_itinerary(spec_f, 1.0), spec_f, 1.0)
S_f = build_section(gamma_f, spec_f)
series = [np.array([[float(a), float(b)] for a, b in S_f.chart_polygon() + S_f.chart_polygon()[:1]])]
for start in ([0.5, 1.5], [-2.3, 2.0], [1.0, 0.2], [-1.0, 1.0]):
    orb = iterate_return(np.array(start), S_f, spec_f, 300)
    series.append(np.array([np.asarray(u, dtype=float) for u in orb.samples]))
    print(f"orbit from {start}: mean return time {np.mean(orb.return_times):.3f}")

OUT.mkdir(exist_ok=True)
io.svg_plot(series[:1], OUT / "section_outline.svg", kind="polyline", title="chart of S")
io.svg_plot(series[1:], OUT / "section_orbits.svg", title="return-map orbits on S")
print("wrote", OUT / "section_orbits.svg")
