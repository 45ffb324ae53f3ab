"""Writing a small traceless stress as a positive sum over nine pipe directions."""

from fractions import Fraction

import numpy as np

from eulalpha import geometry

# the first direction set in 3-D: three axes plus six rational rotations
dset = geometry.build_direction_sets(0, 3)[0]
for k in dset.vectors:
    print("k =", tuple(str(c) for c in k))
print("radius of the admissible ball:", dset.epsilon)

# f(k) = 3 k (x) k - Id, exact in rationals
print(geometry.f_matrix((Fraction(3, 5), Fraction(4, 5), Fraction(0))))

# a batch of random stresses inside the ball
rng = np.random.default_rng(0)
R = rng.uniform(-1, 1, size=(3, 3, 500))
R = 0.5 * (R + R.transpose(1, 0, 2))
R -= np.eye(3)[:, :, None] * np.trace(R)[None, None] / 3
R *= 0.9 * dset.epsilon / geometry.max_entry_norm(R)[None, None]

sol = geometry.decompose_stress(R, dset)
print("smallest coefficient square:", sol.squares.min())
print("reconstruction error:", np.abs(sol.reconstruct() - R).max())
print("sum of squares is the same for every sample:", np.ptp(sol.squares.sum(0)))

# leaving the ball raises
try:
    geometry.decompose_stress(3 * dset.epsilon * np.diag([1.0, -0.5, -0.5])[:, :, None], dset)
except geometry.OutOfBall as e:
    print("rejected:", e)
