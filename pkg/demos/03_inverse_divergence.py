"""Two inverse divergences: the Fourier multiplier and one differentiation by parts."""

from fractions import Fraction

import numpy as np

from eulalpha import geometry, mikado
from eulalpha import inverse_div as idv
from eulalpha.spectral import Grid, random_band_limited, tensor_div
from eulalpha.transport import ShearMap

g = Grid(3, 32)
v = random_band_limited(g, 10, np.random.default_rng(1))
R = idv.fourier_inverse_div(g, v)
vbar = g.mean(v).reshape((3, 1, 1, 1))
print("Div R v - (v - mean):", np.abs(tensor_div(g, R) - (v - vbar)).max())
print("trace:", np.abs(R.trace()).max())

# slow field G against a fast sheared pipe potential, at two resolutions
ds = geometry.build_direction_sets(0, 2)[0]
fam = mikado.PipeFamily(ds.vectors[2], ds.frames[2], 2, Fraction(1, 2), 2, dim=2)
theta = idv.ScaledFast(idv.PipeFast(fam), 2.0**-4, 1)
for n in (64, 128):
    g2 = Grid(2, n)
    G = np.array([1 + 0.5 * np.cos(g2.x[1]), 0.3 * np.sin(g2.x[0])])
    flow = ShearMap(2, 0.05).sample(g2)
    out = idv.iterative_div_step(g2, G, theta, flow)
    res, scale = idv.step_residual(g2, G, theta, flow, out)
    print(f"{n}^2: relative residual {res / scale:.3e}")
