"""Best-response dynamics on a random 3x3 zero-sum game.

The duality gap H falls exactly like exp(-t) along every orbit, even though
the orbit switches strategy supports many times.  We integrate one orbit in
floats and one in rational arithmetic, then plot log H against t.
"""
from pathlib import Path

import numpy as np

from pwflow import io
from pwflow.cli import random_simplex_point
from pwflow.flow import FlowState, flow, make_spec
from pwflow.game import random_transversal_game

OUT = Path(__file__).parent / "out"

rng = np.random.default_rng(2024)
M = random_transversal_game(rng, 3)
spec = make_spec(M)
print("equilibrium p:", np.round(spec.equilibrium.p_bar, 4), "q:", np.round(spec.equilibrium.q_bar, 4))

start = FlowState(random_simplex_point(rng, 3, False), random_simplex_point(rng, 3, False))
tr = flow(start, spec, 12.0)
H = np.asarray(tr.hamiltonian(), dtype=float)
print(f"float run: {len(tr)} segments, max |H/H0 - exp(-t)| = "
      f"{np.max(np.abs(H / H[0] - np.exp(-tr.t))):.2e}")

# the same kind of run with exact fractions: H/H0 equals the recorded decay factor
Mx = random_transversal_game(rng, 3, exact=True)
spec_x = make_spec(Mx)
p0, q0 = random_simplex_point(rng, 3, True), random_simplex_point(rng, 3, True)
tx = flow(FlowState(p0, q0), spec_x, 4.0)
Hx = tx.hamiltonian()
print("exact run: H/H0 == decay at every event:",
      all(h / Hx[0] == d for h, d in zip(Hx, tx.decay)))

OUT.mkdir(exist_ok=True)
io.svg_plot([np.column_stack([tr.t, np.log(H)])], OUT / "lyapunov.svg",
            kind="polyline", title="log H along a best-response orbit")
print("wrote", OUT / "lyapunov.svg")
