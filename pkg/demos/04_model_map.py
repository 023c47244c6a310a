"""The planar model of the random walk near the hexagon.

F(z) = S R_{1/|z|}(z): rotate along the l1 circle by an angle that grows
as z approaches the origin, then apply the saddle diag(2, 1/2).  Images of
a circle wind into ever tighter spirals, fixed points accumulate at the
origin, and any itinerary of annuli (moving at most one band per step) is
realized by some orbit.
"""
from pathlib import Path

import numpy as np

from pwflow import io
from pwflow.annulus import (RefinementFailure, alternating_itinerary, constant_itinerary,
                            monotone_itinerary)
from pwflow.modelmap import (all_fixed_points, circle_images, model_map_inverse, model_map_step,
                             realize_model_itinerary, verify_model_witness)

OUT = Path(__file__).parent / "out"

imgs = circle_images(0.5, 4, 3000)
for k, im in enumerate(imgs):
    print(f"image {k} of the l1 circle of radius 1/2: radii in "
          f"[{np.abs(im).sum(axis=1).min():.3f}, {np.abs(im).sum(axis=1).max():.3f}]")

z = np.array([0.3, -0.1])
print("inverse round trip error:", np.max(np.abs(model_map_inverse(model_map_step(z)).array() - z)))

fps = all_fixed_points((1e-3, 1.0))
print(f"{len(fps)} fixed points with radius in [1e-3, 1]; smallest radii:",
      np.round(sorted(np.abs(fps).sum(axis=1))[:4], 5))

for name, it in (("constant", constant_itinerary(2, 20, 0.5)),
                 ("alternating", alternating_itinerary(0, 20, 0.5)),
                 ("monotone", monotone_itinerary(2, 6, 0.5))):
    L = len(it.indices) - 1
    try:
        w = realize_model_itinerary(it, L, digits=30)
    except RefinementFailure as exc:
        print(f"{name:11s} L={L}: search stopped at depth {exc.depth}")
        continue
    print(f"{name:11s} L={L}: witness {w[0][:12]}, {w[1][:12]}  verified:",
          verify_model_witness(w, it, L, digits=60))

OUT.mkdir(exist_ok=True)
io.svg_plot(imgs, OUT / "spirals.svg", title="images of an l1 circle")
print("wrote", OUT / "spirals.svg")
