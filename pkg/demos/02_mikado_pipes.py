"""Pipe flows: stationary, divergence free, with a known average of W (x) W."""

from fractions import Fraction

import numpy as np

from eulalpha import geometry, mikado
from eulalpha.spectral import AlphaModel, Grid, div

dset = geometry.build_direction_sets(0, 3)[0]
model = AlphaModel(1.0)

# axis direction e3 at lambda = 8, r = 1/2: strands are 2 pi / 4 apart
fam = mikado.family_from_set(dset, 2, 8, Fraction(1, 2), 2)
g = Grid(3, 32)
pf = mikado.realize_pipe(fam, g)
print("max |div W| on 32^3:", np.abs(div(g, pf.W)).max())

# stationarity is checked on the 2-D cross-section
rep = mikado.verify_stationarity(fam, model, 256)
print("div(W x W):", rep.euler_residual, " Euler-alpha residual:", rep.alpha_residual)

# rotated directions would overlap at r = 1/2, so r is halved until they separate
r = mikado.separated_r(dset, 3, 8, Fraction(1, 2))
print("r for direction 3:", r)

# average of W (x) W against the closed form for every direction
for i, xi in enumerate(dset.vectors):
    f = mikado.family_from_set(dset, i, 8, mikado.separated_r(dset, i, 8, Fraction(1, 2)), 2)
    avg, C = mikado.pipe_average_quadrature(f, 256)
    target = geometry.pipe_average_identity(f.xi_np, C)
    print(i, "relative error", np.abs(avg - target).max() / np.abs(target).max())

# L^p norms versus r
for row in mikado.lp_scaling_table(16, [Fraction(1, 2), Fraction(1, 4)], 2)[:6]:
    print(row)
