"""Glue two steady states, then run one convex-integration step on top.

The step resolves pipes of width 1/(32 * 8) on a 1024^2 grid and takes a few
minutes; pass --skip-step to stop after the gluing part.
"""

import sys
from fractions import Fraction

import numpy as np

from eulalpha import engine
from eulalpha import spectral as sp

n = 512
g = sp.Grid(2, n)
model = sp.AlphaModel(0.5)
u1 = sp.StationaryTrajectory(g, sp.taylor_green(g))
u2 = sp.StationaryTrajectory(g, 2 * sp.taylor_green(g, shift=(0.7, 0.3)))
state = engine.glue_initial(u1, u2, 1.0, model)

rep = engine.verify_glue(state, 1.0, np.linspace(0, 1, 11))
print("\n".join(rep.lines()))

if "--skip-step" in sys.argv:
    sys.exit(0)

p = engine.ToyParameters(lam_next=32, r=Fraction(1, 8))
t = 0.5 + 0.3 * p.tau
nxt, reports, eng = engine.iterate_step(state, p, [t])
print("\n".join(reports[0].lines()))

# with R_q = 0 the perturbation still moves the Hamiltonian
wit = engine.nonconservation_witness(u1, model, p, t=t)
print("relative H change with zero stress:", wit.H_change)
