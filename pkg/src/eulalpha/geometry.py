"""Rational direction sets and the positive decomposition of traceless stresses.

In 3-D every symmetric traceless R in a small ball is written as
sum_i c_i(R)^2 (3 k_i k_i^T - Id) over nine rational unit vectors, with the
sum of the squares independent of R.  The 2-D analogue uses four directions and
f(k) = 2 k k^T - Id.

The coefficients are affine in R (their square roots are the smooth c_i), so
everything here is a handful of exact linear formulas.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from fractions import Fraction
from functools import lru_cache

import numpy as np

F = Fraction


def f_matrix(k, dim: int | None = None):
    """n k k^T - Id with exact Fractions when k is rational."""
    n = len(k) if dim is None else dim
    return [[n * k[i] * k[j] - (1 if i == j else 0) for j in range(n)] for i in range(n)]


def _vec(*c):
    return tuple(F(x) for x in c)


def _norm2(v):
    return sum(x * x for x in v)


def _cross(a, b):
    return (a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0])


def _matvec(M, v):
    return tuple(sum(M[i][j] * v[j] for j in range(len(v))) for i in range(len(M)))


def _matmul(A, B):
    n = len(A)
    return [[sum(A[i][k] * B[k][j] for k in range(n)) for j in range(n)] for i in range(n)]


def _transpose(A):
    return [list(r) for r in zip(*A)]


def _identity(n):
    return [[F(int(i == j)) for j in range(n)] for i in range(n)]


K0_3D = (
    _vec(1, 0, 0), _vec(0, 1, 0), _vec(0, 0, 1),
    _vec(F(3, 5), F(4, 5), 0), _vec(F(3, 5), 0, F(4, 5)), _vec(0, F(3, 5), F(4, 5)),
    _vec(F(3, 5), F(-4, 5), 0), _vec(F(3, 5), 0, F(-4, 5)), _vec(0, F(3, 5), F(-4, 5)),
)

K0_2D = (_vec(1, 0), _vec(0, 1), _vec(F(3, 5), F(4, 5)), _vec(F(3, 5), F(-4, 5)))

# Cayley rotation of the quaternion (7, 1, 1, 1); e1 -> (12, 4, -3)/13
O1_3D = [[F(12, 13), F(-3, 13), F(4, 13)],
         [F(4, 13), F(12, 13), F(-3, 13)],
         [F(-3, 13), F(4, 13), F(12, 13)]]

# 5-12-13 rotation of the plane
O1_2D = [[F(12, 13), F(-5, 13)], [F(5, 13), F(12, 13)]]

# balancing constant for the off-diagonal pairs
C0 = F(25, 36)
MU_2D = F(25, 24)


def _frame_3d(k):
    """Rational right-handed (xi1, xi2, k) with xi1 a coordinate axis orthogonal to k."""
    for i in (2, 0, 1):
        if k[i] == 0:
            e = [F(0)] * 3
            e[i] = F(1)
            xi1 = tuple(e)
            return xi1, _cross(k, xi1)
    raise ValueError("k has no zero component")


def _frame_2d(k):
    """Normal nu with (-nu_2, nu_1) = k, so perp-grad of a function of nu.x points along k."""
    return ((k[1], -k[0]),)


@dataclass(frozen=True)
class DirectionSet:
    index: int
    dim: int
    vectors: tuple
    frames: tuple  # per vector: cross-section unit vectors (2 in 3-D, 1 in 2-D)
    rotation: tuple  # O_n as nested tuples of Fractions
    epsilon: float

    def as_array(self) -> np.ndarray:
        return np.array([[float(c) for c in k] for k in self.vectors])

    def frame_arrays(self):
        return [np.array([[float(c) for c in e] for e in fr]) for fr in self.frames]

    def rotation_array(self) -> np.ndarray:
        return np.array([[float(c) for c in r] for r in self.rotation])

    def __len__(self):
        return len(self.vectors)


def rotation_power(dim: int, n: int):
    O = _identity(dim)
    base = O1_3D if dim == 3 else O1_2D
    for _ in range(n):
        O = _matmul(base, O)
    return O


def kappa(O) -> Fraction:
    """max_ij sum_kl |O_ki||O_lj|: entrywise growth of R -> O^T R O."""
    n = len(O)
    return max(sum(abs(O[k][i]) * abs(O[l][j]) for k in range(n) for l in range(n))
               for i in range(n) for j in range(n))


def build_direction_sets(N: int, dim: int = 3) -> list:
    """N + 1 sets; set n is O1^n applied to the base set."""
    if N < 0:
        raise ValueError("N must be non-negative")
    base = K0_3D if dim == 3 else K0_2D
    frame = _frame_3d if dim == 3 else _frame_2d
    out = []
    for n in range(N + 1):
        O = rotation_power(dim, n)
        vecs = tuple(_matvec(O, k) for k in base)
        frames = tuple(tuple(_matvec(O, e) for e in frame(k)) for k in base)
        eps = 0.5 * min(1.0, 1.0 / float(kappa(O)))
        out.append(DirectionSet(n, dim, vecs, frames, tuple(tuple(r) for r in O), eps))
    for s in out:
        for k in s.vectors:
            assert _norm2(k) == 1
        assert len(set(s.vectors)) == len(s.vectors)
    return out


def sets_disjoint(sets) -> bool:
    seen = set()
    for s in sets:
        for k in s.vectors:
            if k in seen:
                return False
            seen.add(k)
    return True


def minimal_orthogonality(set_a: DirectionSet, set_b: DirectionSet) -> Fraction:
    """epsilon_0 = 1 - max |<k, k'>| over cross pairs, exact."""
    m = max(abs(sum(a * b for a, b in zip(k, kp))) for k in set_a.vectors for kp in set_b.vectors)
    return 1 - m


# 3-D decomposition

def _f_np(k):
    k = np.asarray(k, dtype=float)
    return len(k) * np.outer(k, k) - np.eye(len(k))


@lru_cache(maxsize=None)
def _base_tables_3d():
    fk = np.array([_f_np([float(c) for c in k]) for k in K0_3D])
    return fk


def _unit_ball_vertices_3d():
    hexagon = [(1, 0), (0, 1), (-1, 1), (-1, 0), (0, -1), (1, -1)]
    for (a, b), (c, d, e) in itertools.product(hexagon, itertools.product((-1, 1), repeat=3)):
        yield F(a), F(b), F(c), F(d), F(e)


def _linear_parts_3d(a, b, c, d, e):
    """Coefficients before balancing: (dot1, dot2, c4..c9) and L = partial sum."""
    t4, t5, t6 = F(25, 36) * c, F(25, 36) * d, F(25, 36) * e
    sq = [t4 + 2 * C0, t5 + 2 * C0, t6 + 2 * C0, 2 * C0, 2 * C0, 2 * C0]
    # diagonal of sum_{i>=4} c_i^2 f(k_i), first two entries
    fd = [(2, 23), (2, -25), (-25, 2), (2, 23), (2, -25), (-25, 2)]
    off1 = sum(s * F(x, 25) for s, (x, _) in zip(sq, fd))
    off2 = sum(s * F(y, 25) for s, (_, y) in zip(sq, fd))
    D1, D2 = a - off1, b - off2
    dot1, dot2 = (2 * D1 + D2) / 3, (D1 + 2 * D2) / 3
    L = dot1 + dot2 + sum(sq)
    return dot1, dot2, sq, L


@lru_cache(maxsize=None)
def coefficient_sum_3d() -> Fraction:
    """The constant C_sum: worst case over the unit max-norm ball plus a 3*c0 margin."""
    worst = max(L + 3 * max(F(0), -d1, -d2)
                for d1, d2, _, L in (_linear_parts_3d(*v) for v in _unit_ball_vertices_3d()))
    return worst + 3 * C0


@lru_cache(maxsize=None)
def coefficient_sum_2d() -> Fraction:
    return 2 * MU_2D + 1 + F(14, 25) * MU_2D + 1


def _affine_tables(dim: int):
    """Represent c^2(R) = c0 + sum_j M[:, j] * entry_j exactly, entries in sym_index order."""
    if dim == 3:
        def coeffs(a, b, c, d, e):
            S = coefficient_sum_3d()
            d1, d2, sq, L = _linear_parts_3d(a, b, c, d, e)
            cp = (S - L) / 3
            return [d1 + cp, d2 + cp, cp] + sq
        # entries: R00=a, R01=c, R02=d, R11=b, R12=e
        basis = {"const": (0, 0, 0, 0, 0), 0: (1, 0, 0, 0, 0), 1: (0, 0, 1, 0, 0), 2: (0, 0, 0, 1, 0),
                 3: (0, 1, 0, 0, 0), 4: (0, 0, 0, 0, 1)}
        ncomp = 5
    else:
        def coeffs(a, c):
            S = coefficient_sum_2d()
            c3 = F(25, 48) * c + MU_2D
            c4 = -F(25, 48) * c + MU_2D
            diff = a + F(14, 25) * MU_2D
            tot = S - 2 * MU_2D
            return [(tot + diff) / 2, (tot - diff) / 2, c3, c4]
        basis = {"const": (0, 0), 0: (1, 0), 1: (0, 1)}
        ncomp = 2
    const = coeffs(*[F(x) for x in basis["const"]])
    cols = []
    for j in range(ncomp):
        v = coeffs(*[F(x) for x in basis[j]])
        cols.append([vi - ci for vi, ci in zip(v, const)])
    return const, cols


@lru_cache(maxsize=None)
def _affine_np(dim: int):
    const, cols = _affine_tables(dim)
    return np.array([float(c) for c in const]), np.array([[float(x) for x in col] for col in cols]).T


def decompose_exact(R, dim: int = 3):
    """Exact squares c_i^2 for the base set, R given as a nested list of Fractions."""
    R = [[F(x) for x in row] for row in R]
    if dim == 3:
        a, b, c, d, e = R[0][0], R[1][1], R[0][1], R[0][2], R[1][2]
        const, cols = _affine_tables(3)
        ent = [a, c, d, b, e]
    else:
        const, cols = _affine_tables(2)
        ent = [R[0][0], R[0][1]]
    return [const[i] + sum(cols[j][i] * ent[j] for j in range(len(ent))) for i in range(len(const))]


class OutOfBall(ValueError):
    pass


@dataclass
class CoefficientSolution:
    squares: np.ndarray  # shape (nvec, ...)
    c_sum: float
    direction_set: DirectionSet = field(repr=False)

    @property
    def coefficients(self) -> np.ndarray:
        return np.sqrt(self.squares)

    def reconstruct(self) -> np.ndarray:
        fk = np.array([_f_np(k) for k in self.direction_set.as_array()])
        return np.einsum("i...,iab->ab...", self.squares, fk)


def max_entry_norm(R: np.ndarray) -> np.ndarray:
    """Pointwise max |R_ij| for R of shape (dim, dim, ...)."""
    return np.abs(R).max(axis=(0, 1))


def decompose_stress(R: np.ndarray, dset: DirectionSet, check_ball: bool = True) -> CoefficientSolution:
    """Squares c_i(R)^2 with sum_i c_i^2 f(k_i) = R, vectorized over trailing axes.

    R has shape (dim, dim, ...) and must be symmetric and traceless.
    """
    R = np.asarray(R, dtype=float)
    dim = dset.dim
    if R.shape[:2] != (dim, dim):
        raise ValueError("R must have leading shape (dim, dim)")
    if check_ball:
        nrm = max_entry_norm(R)
        if np.any(nrm > dset.epsilon * (1 + 1e-12)):
            raise OutOfBall(f"|R| = {float(np.max(nrm)):.6g} exceeds epsilon = {dset.epsilon:.6g}")
    O = dset.rotation_array()
    Rb = np.einsum("ki,kl...,lj->ij...", O, R, O)  # O^T R O
    const, M = _affine_np(dim)
    if dim == 3:
        ent = np.array([Rb[0, 0], Rb[0, 1], Rb[0, 2], Rb[1, 1], Rb[1, 2]])
        c_sum = float(coefficient_sum_3d())
    else:
        ent = np.array([Rb[0, 0], Rb[0, 1]])
        c_sum = float(coefficient_sum_2d())
    sq = const.reshape((-1,) + (1,) * (R.ndim - 2)) + np.tensordot(M, ent, axes=(1, 0))
    return CoefficientSolution(sq, c_sum, dset)


def certify_epsilon(dset: DirectionSet, samples: int = 20000, seed: int = 0) -> dict:
    """Sample the boundary of the epsilon ball; report the smallest coefficient seen.

    Also returns the Lipschitz margin: min coefficient minus Lip * max gap to the
    nearest sample is a lower bound on the ball's interior when positive.
    """
    rng = np.random.default_rng(seed)
    dim = dset.dim
    m = dim * (dim + 1) // 2 - 1
    X = rng.uniform(-1, 1, size=(samples, m))
    Rs = np.zeros((dim, dim, samples))
    if dim == 3:
        a, b, c, d, e = X.T
        Rs[0, 0], Rs[1, 1], Rs[2, 2] = a, b, -a - b
        Rs[0, 1] = Rs[1, 0] = c
        Rs[0, 2] = Rs[2, 0] = d
        Rs[1, 2] = Rs[2, 1] = e
    else:
        a, c = X.T
        Rs[0, 0], Rs[1, 1] = a, -a
        Rs[0, 1] = Rs[1, 0] = c
    Rs *= dset.epsilon / max_entry_norm(Rs)
    sol = decompose_stress(Rs, dset)
    const, M = _affine_np(dim)
    O = dset.rotation_array()
    lip = float(np.abs(M).sum(axis=1).max()) * float(kappa([[F(x) for x in r] for r in dset.rotation]))
    return {
        "epsilon": dset.epsilon,
        "min_square": float(sol.squares.min()),
        "lipschitz": lip,
        "max_residual": float(np.abs(sol.reconstruct() - Rs).max()),
        "sum_spread": float(np.ptp(sol.squares.sum(axis=0))),
    }


def pipe_average_identity(xi, C: float) -> np.ndarray:
    """(C/(n-1)) (Id - n xi xi^T): the fast average of W dW-type products."""
    xi = np.asarray(xi, dtype=float)
    n = len(xi)
    return C / (n - 1) * (np.eye(n) - n * np.outer(xi, xi))
