"""Back-to-labels flow maps, temporal cutoffs and decoupling measurements.

Conventions: Phi(x, t) is the label at the anchor time t_i of the particle
found at x at time t, so (d_t + u . grad) Phi = 0 and Phi(., t_i) = id.  The
forward map X(., t) carries labels to positions and inverts Phi(., t).
Jacobians are stored as J[l, p] = d_p Phi^l.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import qmc

from .spectral import TWO_PI, Grid, Trajectory, grad, interpolate_at


def _inv(J: np.ndarray) -> np.ndarray:
    return np.moveaxis(np.linalg.inv(np.moveaxis(J, (0, 1), (-2, -1))), (-2, -1), (0, 1))


def _det(J: np.ndarray) -> np.ndarray:
    return np.linalg.det(np.moveaxis(J, (0, 1), (-2, -1)))


def _opnorm(M: np.ndarray) -> np.ndarray:
    return np.linalg.norm(np.moveaxis(M, (0, 1), (-2, -1)), ord=2, axis=(-2, -1))


@dataclass
class MapSample:
    """A map of the torus sampled on a grid: positions and Jacobian."""

    grid: Grid
    phi: np.ndarray
    jacobian: np.ndarray
    t: float = 0.0

    @classmethod
    def identity(cls, grid: Grid, t: float = 0.0) -> "MapSample":
        eye = np.eye(grid.dim).reshape((grid.dim, grid.dim) + (1,) * grid.dim)
        return cls(grid, grid.x.copy(), np.broadcast_to(eye, (grid.dim, grid.dim) + grid.shape).copy(), t)

    @classmethod
    def from_positions(cls, grid: Grid, phi: np.ndarray, t: float = 0.0) -> "MapSample":
        """Jacobian by spectral differentiation of the periodic displacement."""
        disp = phi - grid.x
        G = grad(grid, disp)  # G[p, l] = d_p disp^l
        eye = np.eye(grid.dim).reshape((grid.dim, grid.dim) + (1,) * grid.dim)
        return cls(grid, phi, eye + np.swapaxes(G, 0, 1), t)

    @property
    def displacement(self) -> np.ndarray:
        return self.phi - self.grid.x

    @property
    def A(self) -> np.ndarray:
        """(grad Phi)^-1 with A[m, l] the inverse of J[l, m]."""
        return _inv(self.jacobian)

    @property
    def det(self) -> np.ndarray:
        return _det(self.jacobian)

    def deviation(self) -> float:
        eye = np.eye(self.grid.dim).reshape((self.grid.dim, self.grid.dim) + (1,) * self.grid.dim)
        return float(_opnorm(self.jacobian - eye).max())


class ShearMap:
    """Closed-form maps of the steady shear v = amp (sin x_2, 0, ...).

    back-to-labels: Phi_1 = x_1 - amp (t - t_i) sin x_2;  forward: X_1 = x_1 + amp (t - t_i) sin x_2.
    ``axis``/``across`` select which coordinate is sheared and which one drives it.
    """

    def __init__(self, dim: int, s: float, amplitude: float = 1.0, axis: int = 0, across: int = 1):
        self.dim, self.s, self.amp, self.axis, self.across = dim, s, amplitude, axis, across

    def __call__(self, x, inverse: bool = False):
        x = np.asarray(x, dtype=float)
        out = x.copy()
        sgn = 1.0 if inverse else -1.0
        out[self.axis] = x[self.axis] + sgn * self.amp * self.s * np.sin(x[self.across])
        return out

    def jacobian(self, x, inverse: bool = False):
        x = np.asarray(x, dtype=float)
        sgn = 1.0 if inverse else -1.0
        J = np.zeros((self.dim, self.dim) + x.shape[1:])
        for i in range(self.dim):
            J[i, i] = 1.0
        J[self.axis, self.across] = sgn * self.amp * self.s * np.cos(x[self.across])
        return J

    def sample(self, grid: Grid, inverse: bool = False) -> MapSample:
        return MapSample(grid, self(grid.x, inverse), self.jacobian(grid.x, inverse), self.s)


def shear_velocity(grid: Grid, amplitude: float = 1.0) -> np.ndarray:
    u = np.zeros((grid.dim,) + grid.shape)
    u[0] = amplitude * np.sin(grid.x[1])
    return u


class FlowWindowWarning(UserWarning):
    pass


@dataclass
class FlowMap:
    """Phi and X for one anchor time, sampled at a list of query times."""

    grid: Grid
    t_anchor: float
    phi: dict = field(default_factory=dict)
    X: dict = field(default_factory=dict)
    velocity: Trajectory | None = None
    window: float | None = None
    flagged: list = field(default_factory=list)

    @property
    def times(self) -> list:
        return sorted(self.phi)

    def at(self, t: float) -> MapSample:
        return self.phi[self._key(t)]

    def inverse_at(self, t: float) -> MapSample:
        return self.X[self._key(t)]

    def _key(self, t):
        for s in self.phi:
            if abs(s - t) <= 1e-12 * max(1.0, abs(t)):
                return s
        raise KeyError(f"time {t} not sampled")

    def composition_error(self, t: float) -> float:
        """max |Phi(X(x)) - x| using Fourier interpolation of the displacement of Phi."""
        P, Xs = self.at(t), self.inverse_at(t)
        back = Xs.phi + interpolate_at(self.grid, P.displacement, Xs.phi)
        return float(np.abs(back - self.grid.x).max())

    def volume_error(self, t: float) -> float:
        return float(max(np.abs(self.at(t).det - 1).max(), np.abs(self.inverse_at(t).det - 1).max()))


def _rk4_characteristics(grid: Grid, velocity: Trajectory, y0: np.ndarray, t0: float, t1: float,
                         h: float) -> np.ndarray:
    n = max(1, int(math.ceil(abs(t1 - t0) / h - 1e-12)))
    dt = (t1 - t0) / n
    y = y0.copy()
    t = t0

    def vel(p, s):
        return interpolate_at(grid, velocity.at(s), p)

    for _ in range(n):
        k1 = vel(y, t)
        k2 = vel(y + 0.5 * dt * k1, t + 0.5 * dt)
        k3 = vel(y + 0.5 * dt * k2, t + 0.5 * dt)
        k4 = vel(y + dt * k3, t + dt)
        y = y + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
        t += dt
    return y


def solve_flow(velocity: Trajectory, t_anchor: float, t_query, grid: Grid | None = None,
               step: float | None = None, window: float | None = None) -> FlowMap:
    """Integrate characteristics of ``velocity`` by RK4 with Fourier-interpolated velocity.

    Phi(x, t): backward from (x, t) to t_anchor.  X(x, t): forward from (x, t_anchor) to t.
    ``window`` (usually tau_q) flags query times with |t - t_anchor| > window;
    the default step is window/64 when a window is given.
    """
    grid = grid or velocity.grid
    times = np.atleast_1d(np.asarray(t_query, dtype=float))
    fm = FlowMap(grid, float(t_anchor), velocity=velocity, window=window)
    for t in times:
        span = abs(t - t_anchor)
        if window is not None and span > window * (1 + 1e-12):
            fm.flagged.append(float(t))
            warnings.warn(f"|t - t_i| = {span:.3g} exceeds the window {window:.3g}", FlowWindowWarning)
        if span == 0:
            fm.phi[float(t)] = MapSample.identity(grid, float(t))
            fm.X[float(t)] = MapSample.identity(grid, float(t))
            continue
        h = step or (window / 64 if window else span / 64)
        x0 = grid.x
        phi = _rk4_characteristics(grid, velocity, x0, float(t), float(t_anchor), h)
        Xf = _rk4_characteristics(grid, velocity, x0, float(t_anchor), float(t), h)
        fm.phi[float(t)] = MapSample.from_positions(grid, phi, float(t))
        fm.X[float(t)] = MapSample.from_positions(grid, Xf, float(t))
    return fm


def phi_time_derivative(sample: MapSample, u: np.ndarray) -> np.ndarray:
    """d_t Phi = -(u . grad) Phi, from the transport equation."""
    return -np.einsum("p...,lp...->l...", u, sample.jacobian)


@dataclass
class DeformationReport:
    ell: float
    rows: list  # (t, |grad Phi - I|, |grad X - I|, |grad^2 Phi| ell, |d_t Phi| ell^3)

    @property
    def max_phi(self) -> float:
        return max(r[1] for r in self.rows)

    @property
    def max_x(self) -> float:
        return max(r[2] for r in self.rows)

    @property
    def passed(self) -> bool:
        return self.max_phi <= self.ell and self.max_x <= self.ell

    def lines(self) -> list:
        out = [f"t={t:.17g} grad_phi_dev={a:.17g} grad_x_dev={b:.17g} "
               f"hess_phi*ell={c:.17g} dt_phi*ell^3={d:.17g}" for t, a, b, c, d in self.rows]
        out.append(f"bound ell={self.ell:.17g} {'PASS' if self.passed else 'FAIL'}")
        return out


def verify_deformation(flow: FlowMap, ell: float, velocity: Trajectory | None = None) -> DeformationReport:
    """Deviation of grad Phi and grad X from the identity against ell, plus scaled higher bounds."""
    velocity = velocity or flow.velocity
    rows = []
    g = flow.grid
    for t in flow.times:
        P, Xs = flow.at(t), flow.inverse_at(t)
        H = grad(g, P.jacobian)  # d_q d_p Phi^l
        hess = float(np.sqrt((H**2).sum(axis=(0, 1, 2))).max())
        dtp = 0.0
        if velocity is not None:
            dtp = float(np.abs(phi_time_derivative(P, velocity.at(t))).max())
        rows.append((t, P.deviation(), Xs.deviation(), hess * ell, dtp * ell**3))
    return DeformationReport(ell, rows)


def verify_deformation_samples(samples, ell: float) -> DeformationReport:
    """Same report for closed-form pairs [(t, Phi sample, X sample)]."""
    rows = [(t, P.deviation(), X.deviation(), float("nan"), float("nan")) for t, P, X in samples]
    return DeformationReport(ell, rows)


# temporal partition of unity

def bump(s):
    s = np.asarray(s, dtype=float)
    out = np.zeros_like(s)
    inside = np.abs(s) < 1
    out[inside] = np.exp(-1.0 / (1.0 - s[inside] ** 2))
    return out


def bump_prime(s):
    s = np.asarray(s, dtype=float)
    out = np.zeros_like(s)
    inside = np.abs(s) < 1
    si = s[inside]
    out[inside] = np.exp(-1.0 / (1.0 - si**2)) * (-2 * si / (1.0 - si**2) ** 2)
    return out


@dataclass
class TimePartition:
    """eta_i(t) = bump(t/tau - i) / sqrt(sum_j bump(t/tau - j)^2), active near the support."""

    tau: float
    support: tuple
    active: list

    def _norm2(self, t):
        c = np.floor(t / self.tau)
        return sum(bump(t / self.tau - (c + off)) ** 2 for off in (-1, 0, 1, 2))

    def eta(self, i: int, t) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        if i not in self.active:
            return np.zeros_like(t)
        b = bump(t / self.tau - i)
        den = self._norm2(t)
        return np.where(b > 0, b / np.sqrt(np.where(den > 0, den, 1.0)), 0.0)

    def eta_derivative(self, i: int, t, m: int = 1) -> np.ndarray:
        """m-th time derivative; exact for m = 1, central differences at step tau/200 above."""
        t = np.asarray(t, dtype=float)
        if m == 1:
            return self._eta_prime(i, t)
        h = self.tau / 200.0
        stencil = {1: ([-1, 1], [-0.5, 0.5]), 2: ([-1, 0, 1], [1, -2, 1]),
                   3: ([-2, -1, 1, 2], [-0.5, 1, -1, 0.5])}[m]
        return sum(w * self.eta(i, t + k * h) for k, w in zip(*stencil)) / h**m

    def _eta_prime(self, i: int, t: np.ndarray) -> np.ndarray:
        if i not in self.active:
            return np.zeros_like(t)
        c = np.floor(t / self.tau)
        S = np.zeros_like(t)
        dS = np.zeros_like(t)
        for off in (-1, 0, 1, 2):
            b, db = bump(t / self.tau - (c + off)), bump_prime(t / self.tau - (c + off))
            S += b**2
            dS += 2 * b * db
        b, db = bump(t / self.tau - i), bump_prime(t / self.tau - i)
        S = np.where(S > 0, S, 1.0)
        return np.where(b > 0, (db / np.sqrt(S) - 0.5 * b * dS / S**1.5) / self.tau, 0.0)

    def sum_squares(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        return sum(self.eta(i, t) ** 2 for i in self.active)

    def active_at(self, t: float) -> list:
        return [i for i in self.active if self.eta(i, np.array([t]))[0] > 0]

    def overlap_pairs(self, times) -> set:
        pairs = set()
        for t in np.atleast_1d(times):
            act = self.active_at(float(t))
            for a in act:
                for b in act:
                    if a < b:
                        pairs.add((a, b))
        return pairs

    def centers(self) -> dict:
        return {i: i * self.tau for i in self.active}


def build_time_partition(tau_q: float, support) -> TimePartition:
    if not tau_q > 0:
        raise ValueError("tau_q must be positive")
    a, b = float(support[0]), float(support[1])
    if b < a:
        raise ValueError("empty support interval")
    lo = int(math.floor((a - tau_q) / tau_q)) - 1
    hi = int(math.ceil((b + tau_q) / tau_q)) + 1
    active = [i for i in range(lo, hi + 1) if i * tau_q - tau_q <= b and i * tau_q + tau_q >= a]
    return TimePartition(tau_q, (a, b), active)


# decoupling measurements

@dataclass
class IntersectionStats:
    lam: int
    r: float
    l1: float
    support_volume: float
    n_balls: int | None
    per_ball_volume: float | None
    method: str

    @property
    def l1_over_r(self) -> float:
        return self.l1 / self.r

    @property
    def scaled_ball_volume(self) -> float | None:
        return None if self.per_ball_volume is None else self.per_ball_volume * self.lam**3


def _support_radius(family, threshold: float) -> float:
    """Largest |z| where |rho| exceeds threshold * max |rho| (unit-frequency radius)."""
    s = np.linspace(0, (math.pi / 2) ** 2, 20001)
    v = np.abs(family.profile.value(family.d, s))
    keep = np.nonzero(v >= threshold * v.max())[0]
    return float(math.sqrt(s[keep[-1]]))


def _coordinate_pair(f1, f2) -> bool:
    x1, x2 = f1.xi_np, f2.xi_np
    return (np.count_nonzero(x1) == 1 and np.count_nonzero(x2) == 1 and abs(x1 @ x2) < 1e-15
            and f1.dim == 3 and float(f1.r) == float(f2.r) and f1.lam == f2.lam)


def _weighted_mag(family, x, m: int, mapping=None):
    """|grad^m W| at x for the pipe composed with ``mapping`` (leading order for m > 0)."""
    if mapping is not None:
        pts = mapping(x)
        J = mapping.jacobian(x)
    else:
        pts, J = x, None
    if m == 0:
        val = np.abs(family.rho(pts))
        if J is not None:
            A = _inv(J)
            val = val * np.sqrt((np.einsum("ij...,j->i...", A, family.xi_np) ** 2).sum(0))
        return val
    from itertools import product
    tot = 0.0
    for axes in product(range(family.dim), repeat=m):
        tot = tot + family.scalar(family.d, pts, axes) ** 2
    return np.sqrt(tot)


def measure_intersection(family1, family2, map1=None, map2=None, weight=None, m=(0, 0),
                         n_samples: int = 2**20, threshold: float = 0.01, seed: int = 0,
                         chunk: int = 2**16, method: str = "auto") -> IntersectionStats:
    """L1 norm of f grad^m1 W1 (x) grad^m2 W2 on T^3 and the measure of the joint support.

    Straight coordinate pairs with f = 1 use exact marginals; everything else uses
    scrambled Sobol points.  Joint support: both magnitudes above ``threshold``
    times their maxima.  Ball counts are only defined for coordinate pairs.
    """
    x1, x2 = family1.xi_np, family2.xi_np
    if abs(abs(x1 @ x2) - 1) < 1e-12:
        raise ValueError("parallel directions")
    if family1.lam * family1.r != family2.lam * family2.r:
        raise ValueError("pipes must share their periodicity")
    dim = family1.dim
    coord = _coordinate_pair(family1, family2)
    if method == "auto":
        method = "marginal" if (coord and map1 is None and map2 is None and weight is None and m == (0, 0)) else "qmc"
    lam, r = family1.lam, float(family1.r)
    cells = family1.period
    n_balls = cells**3 if coord else None
    if method == "marginal":
        if not coord:
            raise ValueError("marginal quadrature needs a coordinate pair")
        a1, a2 = int(np.argmax(np.abs(x1))), int(np.argmax(np.abs(x2)))
        shared = 3 - a1 - a2
        L = TWO_PI / cells
        n = 2 ** int(math.ceil(math.log2(256 / r)))  # about 128 points across a pipe
        y = (np.arange(n) + 0.5) / n * L - L / 2
        Y, S = np.meshgrid(y, y, indexing="ij")

        def marginal(fam, free_axis):
            pts = np.zeros((3,) + Y.shape)
            pts[free_axis] = Y
            pts[shared] = S
            v = np.abs(fam.rho(pts))
            thr = v >= threshold * v.max()
            return v.sum(0) * (L / n) * cells, thr.sum(0) * (L / n) * cells

        free1 = 3 - a1 - shared
        free2 = 3 - a2 - shared
        m1, s1 = marginal(family1, free1)
        m2, s2 = marginal(family2, free2)
        l1 = float((m1 * m2).sum() * (L / n) * cells)
        vol = float((s1 * s2).sum() * (L / n) * cells)
    else:
        sob = qmc.Sobol(d=dim, scramble=True, seed=seed)
        total = 0.0
        hits = 0
        done = 0
        max1 = np.abs(family1.profile.value(family1.d, np.array([0.0])))[0] * family1.r_power
        max2 = np.abs(family2.profile.value(family2.d, np.array([0.0])))[0] * family2.r_power
        while done < n_samples:
            k = min(chunk, n_samples - done)
            pts = sob.random(k).T * TWO_PI
            a = _weighted_mag(family1, pts, m[0], map1)
            b = _weighted_mag(family2, pts, m[1], map2)
            w = np.abs(weight(pts)) if weight is not None else 1.0
            total += float((w * a * b).sum())
            if m == (0, 0):
                hits += int(((a >= threshold * max1) & (b >= threshold * max2)).sum())
            done += k
        l1 = total / n_samples * TWO_PI**dim
        vol = hits / n_samples * TWO_PI**dim if m == (0, 0) else float("nan")
    per_ball = vol / n_balls if n_balls else None
    return IntersectionStats(lam, r, l1, vol, n_balls, per_ball, method)


def steinmetz_volume(radius: float) -> float:
    """Volume common to two perpendicular cylinders of equal radius with crossing axes."""
    return 16.0 * radius**3 / 3.0


def ball_volume_scale(family, threshold: float = 0.01) -> float:
    """lam^3 times the Steinmetz volume of the thresholded cross-section radius."""
    R = _support_radius(family, threshold) / family.lam
    return steinmetz_volume(R) * family.lam**3


@dataclass
class DecouplingResult:
    ratio: float
    C_f: float
    norm_fg: float
    norm_g: float
    gap_ok: bool


def lp_decoupling_check(f: np.ndarray, g: np.ndarray, grid: Grid, lam: float, mu: float, p: float = 1,
                        N_dec: int = 1) -> DecouplingResult:
    """||f g||_p / (C_f ||g||_p) with averaged norms; C_f = max_N lam^-N ||D^N f||_p, N <= N_dec + 4."""
    def avg_norm(a):
        lead = a.ndim - grid.dim
        mag = np.sqrt((a**2).reshape((-1,) + grid.shape).sum(0)) if lead else np.abs(a)
        return float((mag**p).mean()) ** (1.0 / p)

    gap_ok = lam ** (N_dec + 4) <= (mu / (2 * math.pi * math.sqrt(grid.dim))) ** N_dec
    if not gap_ok:
        warnings.warn("parameter gap between lam and mu violated", UserWarning)
    C = avg_norm(f)
    D = f
    for N in range(1, N_dec + 5):
        D = grad(grid, D)
        C = max(C, avg_norm(D) / lam**N)
    nfg = avg_norm(f * g)
    ng = avg_norm(g)
    return DecouplingResult(nfg / (C * ng), C, nfg, ng, gap_ok)
