"""Back-to-labels maps, the temporal partition, and how two pipe families intersect."""

from fractions import Fraction

import numpy as np

from eulalpha import geometry, mikado
from eulalpha import transport as tr
from eulalpha.spectral import Grid, StationaryTrajectory

g = Grid(2, 32)
traj = StationaryTrajectory(g, tr.shear_velocity(g))
fm = tr.solve_flow(traj, 0.5, [0.45, 0.55], window=0.05)
for t in fm.times:
    print(t, "det error", fm.volume_error(t), "composition error", fm.composition_error(t))
print("|grad Phi - I| peak:", tr.verify_deformation(fm, ell=0.06).max_phi)

# squares of the cutoffs sum to one on the support
part = tr.build_time_partition(0.01, (0.4, 0.6))
t = np.linspace(0.4, 0.6, 201)
print("sum of squares deviation:", np.abs(part.sum_squares(t) - 1).max())

# two orthogonal pipe families: L1 of W1 (x) W2 scales like r
s = geometry.build_direction_sets(0, 3)[0]
for r in (Fraction(1, 2), Fraction(1, 4)):
    a = mikado.family_from_set(s, 0, 64, r, 2)
    b = mikado.family_from_set(s, 1, 64, r, 2)
    st = tr.measure_intersection(a, b)
    print(f"r = {r}: L1 / r = {st.l1_over_r:.5f}, lambda^3 ball volume {st.scaled_ball_volume:.4f}")
