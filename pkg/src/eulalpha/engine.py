"""One convex-integration step at desk scale.

The pipeline is: glue two smooth solutions into a relaxed pair (u0, R0), mollify
in space and time, build the amplitude rho, assemble the pipe perturbation w
along the flow maps of u_ell, and split the new error into oscillation,
transport, Nash and commutator stresses.  Everything is evaluated at chosen
time slices; trajectories are objects with ``at(t)`` and ``dt_at(t)``.

Slow fields live on a "slow" grid, the perturbation on a finer "fast" grid and
the characteristics on a small "flow" grid; band-limited slow data move between
them by exact spectral resampling.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from functools import lru_cache

import numpy as np
from scipy.special import j0, roots_legendre

from .geometry import build_direction_sets, decompose_stress
from .inverse_div import fourier_inverse_div
from .mikado import family_from_set, pipe_average_quadrature
from .spectral import (AlphaModel, Grid, SampledTrajectory, StationaryTrajectory, StressField, Trajectory,
                       divergence_norm, evolve_hamiltonian_series, grad, hamiltonian, helmholtz, laplacian,
                       perp_grad, pressure_free_residual, tensor_div)
from .transport import MapSample, TimePartition, bump, build_time_partition, solve_flow

DIAGNOSTIC = "diagnostic - asymptotic bounds not expected to hold at toy parameters"


# spectral resampling

def resample(f: np.ndarray, src: Grid, dst: Grid) -> np.ndarray:
    """Move a periodic field between grids by truncating or zero-padding its spectrum.

    Modes at or beyond the smaller grid's Nyquist frequency are dropped, so a
    field band-limited below both Nyquist limits is transferred exactly.
    """
    f = np.asarray(f, dtype=float)
    if src == dst:
        return f.copy()
    if src.dim != dst.dim:
        raise ValueError("grids differ in dimension")
    lead = f.shape[: f.ndim - src.dim]
    flat = f.reshape((-1,) + src.shape)
    m = min(src.n, dst.n) // 2
    fh = src.fft(flat)
    out = np.zeros((flat.shape[0],) + dst.k2.shape, dtype=complex)
    full = [np.r_[0:m, -(m - 1):0]] * (src.dim - 1)
    idx_s = [slice(None)] + [np.r_[0:m, src.n - m + 1:src.n]] * (src.dim - 1) + [np.arange(m)]
    idx_d = [slice(None)] + [np.r_[0:m, dst.n - m + 1:dst.n]] * (src.dim - 1) + [np.arange(m)]
    del full
    out[np.ix_(*[np.arange(out.shape[0])] + idx_d[1:])] = fh[np.ix_(*[np.arange(fh.shape[0])] + idx_s[1:])]
    scale = np.prod(dst.shape) / np.prod(src.shape)
    res = np.array([dst.ifft(c * scale) for c in out])
    return res.reshape(lead + dst.shape)


def restrict_trajectory(traj: Trajectory, grid: Grid) -> Trajectory:
    if traj.grid == grid:
        return traj
    if isinstance(traj, StationaryTrajectory):
        return StationaryTrajectory(grid, resample(traj.u, traj.grid, grid))
    if isinstance(traj, SampledTrajectory):
        return SampledTrajectory(grid, traj.times, resample(traj.states, traj.grid, grid),
                                 resample(traj.rates, traj.grid, grid))
    if isinstance(traj, GluedTrajectory):
        return GluedTrajectory(restrict_trajectory(traj.u1, grid), restrict_trajectory(traj.u2, grid),
                               traj.cutoff)
    return _ResampledTrajectory(traj, grid)


class _ResampledTrajectory(Trajectory):
    def __init__(self, base: Trajectory, grid: Grid):
        self.base, self.grid = base, grid

    def at(self, t):
        return resample(self.base.at(t), self.base.grid, self.grid)

    def dt_at(self, t):
        return resample(self.base.dt_at(t), self.base.grid, self.grid)


# gluing

def _h(s):
    s = np.asarray(s, dtype=float)
    out = np.zeros_like(s)
    pos = s > 0
    out[pos] = np.exp(-1.0 / s[pos])
    return out


def smoothstep(s):
    """C-infinity step: 0 for s <= 0, 1 for s >= 1."""
    a, b = _h(s), _h(1.0 - np.asarray(s, dtype=float))
    return a / (a + b)


def smoothstep_prime(s):
    s = np.asarray(s, dtype=float)
    a, b = _h(s), _h(1.0 - s)
    with np.errstate(divide="ignore", invalid="ignore"):
        da = np.where(s > 0, a / np.where(s > 0, s, 1.0) ** 2, 0.0)
        db = np.where(s < 1, b / np.where(s < 1, 1.0 - s, 1.0) ** 2, 0.0)
    return (da * b + a * db) / (a + b) ** 2


@dataclass(frozen=True)
class GlueCutoff:
    """eta = 1 on [0, 2T/5], 0 on [3T/5, T], smooth in between."""

    T: float

    def _s(self, t):
        return (np.asarray(t, dtype=float) - 0.4 * self.T) / (0.2 * self.T)

    def value(self, t):
        return 1.0 - smoothstep(self._s(t))

    def derivative(self, t):
        return -smoothstep_prime(self._s(t)) / (0.2 * self.T)


class GluedTrajectory(Trajectory):
    """u0 = eta u1 + (1 - eta) u2."""

    def __init__(self, u1: Trajectory, u2: Trajectory, cutoff: GlueCutoff):
        if u1.grid != u2.grid:
            raise ValueError("trajectories must share a grid")
        self.u1, self.u2, self.cutoff = u1, u2, cutoff
        self.grid = u1.grid

    def at(self, t):
        e = float(self.cutoff.value(t))
        if e == 1.0:
            return self.u1.at(t)
        if e == 0.0:
            return self.u2.at(t)
        return e * self.u1.at(t) + (1 - e) * self.u2.at(t)

    def dt_at(self, t):
        e, de = float(self.cutoff.value(t)), float(self.cutoff.derivative(t))
        return de * (self.u1.at(t) - self.u2.at(t)) + e * self.u1.dt_at(t) + (1 - e) * self.u2.dt_at(t)


def bilinear_flux(grid: Grid, x: np.ndarray, y: np.ndarray, alpha: float) -> np.ndarray:
    """B(x, y)[k, l] = x^k (y - alpha^2 Lap y)^l - alpha^2 d_k x^j d_l y^j; B(u, u) is the flux."""
    return (np.einsum("k...,l...->kl...", x, helmholtz(grid, y, alpha))
            - alpha**2 * np.einsum("kj...,lj...->kl...", grad(grid, x), grad(grid, y)))


class ZeroStress:
    def __init__(self, grid: Grid):
        self.grid = grid

    def at(self, t) -> StressField:
        return StressField.zeros(self.grid)


class GluedStress:
    """R0(t) = R[eta' (v1 - v2) - eta (1 - eta) Div B(u1 - u2, u1 - u2)]."""

    def __init__(self, traj: GluedTrajectory, model: AlphaModel):
        self.traj, self.model = traj, model
        self.grid = traj.grid

    def at(self, t) -> StressField:
        c = self.traj.cutoff
        e, de = float(c.value(t)), float(c.derivative(t))
        g, a = self.grid, self.model.alpha
        if de == 0.0 and e * (1 - e) == 0.0:
            return StressField.zeros(g)
        u1, u2 = self.traj.u1.at(t), self.traj.u2.at(t)
        dlt = u1 - u2
        f = de * helmholtz(g, dlt, a)
        if e * (1 - e) != 0.0:
            f = f - e * (1 - e) * tensor_div(g, bilinear_flux(g, dlt, dlt, a))
        return fourier_inverse_div(g, f)


@dataclass
class IterationState:
    """(u_q, R_q) as trajectories with the time support of R_q."""

    q: int
    grid: Grid
    model: AlphaModel
    u: Trajectory
    R: object
    supp_t: tuple
    params: object = None

    def invariants(self, t: float) -> dict:
        u = self.u.at(t)
        R = self.R.at(t)
        scale = max(float(np.abs(R.components).max()), 1e-300)
        return {
            "divergence": divergence_norm(self.grid, u) if np.abs(u).max() > 0 else 0.0,
            "mean": float(np.abs(self.grid.mean(u)).max()),
            "trace": float(np.abs(R.trace()).max() / scale),
        }


def _check_mean_zero(grid: Grid, u: np.ndarray, name: str, tol: float = 1e-10):
    scale = max(float(np.abs(u).max()), 1.0)
    if np.abs(grid.mean(u)).max() > tol * scale:
        raise ValueError(f"{name} is not mean-zero")


def glue_initial(u1: Trajectory, u2: Trajectory, T: float, model: AlphaModel) -> IterationState:
    """q = 0 pair glued from two smooth solutions on [0, T]."""
    if not T > 0:
        raise ValueError("T must be positive")
    g = u1.grid
    for name, tr in (("u1", u1), ("u2", u2)):
        for t in (0.0, T):
            _check_mean_zero(g, tr.at(t), name)
    traj = GluedTrajectory(u1, u2, GlueCutoff(T))
    return IterationState(0, g, model, traj, GluedStress(traj, model), (0.4 * T, 0.6 * T))


@dataclass
class GlueReport:
    times: np.ndarray
    residual: np.ndarray  # Leray-projected relaxed residual, relative
    stress_norm: np.ndarray  # max |R0(t)|
    hamiltonian: np.ndarray
    H1: float
    H2: float
    exact_left: bool
    exact_right: bool

    @property
    def support_ok(self) -> bool:
        T = self.T
        outside = (self.times < 0.4 * T) | (self.times > 0.6 * T)
        return bool(np.all(self.stress_norm[outside] == 0.0))

    T: float = 1.0

    def lines(self) -> list:
        return [
            f"max relaxed residual {self.residual.max():.3e}",
            f"stress vanishes outside [2T/5, 3T/5]: {self.support_ok}",
            f"u0 = u1 on [0, 2T/5]: {self.exact_left}; u0 = u2 on [3T/5, T]: {self.exact_right}",
            f"H(u0) from {self.hamiltonian[0]:.12g} to {self.hamiltonian[-1]:.12g} "
            f"(H1 = {self.H1:.12g}, H2 = {self.H2:.12g})",
        ]


def verify_glue(state: IterationState, T: float, times=None) -> GlueReport:
    traj = state.u
    g, model = state.grid, state.model
    times = np.linspace(0.0, T, 21) if times is None else np.asarray(times, dtype=float)
    res, sn, H = [], [], []
    left = right = True
    for t in times:
        u, du = traj.at(t), traj.dt_at(t)
        R = state.R.at(t)
        r, scale = pressure_free_residual(g, u, du, R, model)
        res.append(float(np.abs(r).max() / max(scale, 1e-300)))
        sn.append(float(np.abs(R.components).max()))
        H.append(hamiltonian(u, model, g))
        if t <= 0.4 * T:
            left &= bool(np.array_equal(u, traj.u1.at(t)))
        if t >= 0.6 * T:
            right &= bool(np.array_equal(u, traj.u2.at(t)))
    return GlueReport(times, np.array(res), np.array(sn), np.array(H),
                      hamiltonian(traj.u1.at(0.0), model, g), hamiltonian(traj.u2.at(T), model, g),
                      left, right, T)


# mollification

@lru_cache(maxsize=16)
def _radial_symbol(dim: int, n: int, ell: float, nodes: int = 256) -> np.ndarray:
    g = Grid(dim, n)
    kk = np.sqrt(g.k2)
    uniq, inv = np.unique(kk, return_inverse=True)
    x, w = roots_legendre(nodes)
    r = 0.5 * (x + 1.0)
    w = 0.5 * w * bump(r)
    if dim == 2:
        wr = w * r
        vals = j0(np.outer(uniq * ell, r)) @ wr / wr.sum()
    else:
        wr = w * r**2
        vals = np.sinc(np.outer(uniq * ell, r) / np.pi) @ wr / wr.sum()
    return vals[inv].reshape(kk.shape)


def mollifier_symbol(grid: Grid, ell: float) -> np.ndarray:
    """Fourier multiplier of the radial bump exp(-1/(1-|x/ell|^2)) normalised to unit mass."""
    return _radial_symbol(grid.dim, grid.n, float(ell))


def space_mollify(grid: Grid, f: np.ndarray, ell: float) -> np.ndarray:
    m = mollifier_symbol(grid, ell)
    f = np.asarray(f, dtype=float)
    flat = f.reshape((-1,) + grid.shape)
    return np.array([grid.ifft(m * grid.fft(c)) for c in flat]).reshape(f.shape)


def time_nodes(ell: float, n: int = 32) -> tuple:
    """Gauss-Legendre offsets in [-ell, ell] with bump weights summing to one."""
    x, w = roots_legendre(n)
    w = w * bump(x)
    return ell * x, w / w.sum()


class MollifiedState:
    """(u_ell, R_ell, R_comm) at any time, with space-time mollification at scale ell."""

    def __init__(self, state: IterationState, ell: float, n_time: int = 32):
        g = state.grid
        if not 0 < ell < 1:
            raise ValueError("ell must lie in (0, 1)")
        if ell <= g.dx:
            raise ValueError(f"ell = {ell:.3g} is below the grid spacing {g.dx:.3g}")
        self.state, self.ell, self.grid = state, ell, g
        self.model = state.model
        self.offsets, self.weights = time_nodes(ell, n_time)
        self._cache: dict = {}

    @property
    def supp_t(self) -> tuple:
        a, b = self.state.supp_t
        return (a - self.ell, b + self.ell)

    def _velocity(self, t):
        key = ("u", float(t))
        if key not in self._cache:
            tr = self.state.u
            u = sum(w * tr.at(t - s) for s, w in zip(self.offsets, self.weights))
            du = sum(w * tr.dt_at(t - s) for s, w in zip(self.offsets, self.weights))
            self._cache[key] = (space_mollify(self.grid, u, self.ell), space_mollify(self.grid, du, self.ell))
        return self._cache[key]

    def R_at(self, t) -> StressField:
        """R_ell alone (cheaper than ``at``)."""
        key = ("R", float(t))
        if key not in self._cache:
            Rm = sum(w * self.state.R.at(t - s).components for s, w in zip(self.offsets, self.weights))
            self._cache[key] = StressField(self.grid, space_mollify(self.grid, Rm, self.ell))
        return self._cache[key]

    def u_at(self, t):
        return self._velocity(t)[0]

    def dt_u_at(self, t):
        return self._velocity(t)[1]

    def at(self, t) -> tuple:
        """(u_ell, d_t u_ell, R_ell, R_comm, p_comm) with R_comm traceless and p_comm its trace/n."""
        key = ("all", float(t))
        if key in self._cache:
            return self._cache[key]
        g, a2 = self.grid, self.model.alpha**2
        tr = self.state.u
        n = g.dim
        uu = np.zeros((n, n) + g.shape)
        gg = np.zeros_like(uu)
        ul = np.zeros_like(uu)
        for s, w in zip(self.offsets, self.weights):
            u = tr.at(t - s)
            G = grad(g, u)
            lap = np.array([laplacian(g, c) for c in u])
            uu += w * np.einsum("k...,l...->kl...", u, u)
            gg += w * np.einsum("kj...,lj...->kl...", G, G)
            ul += w * np.einsum("k...,l...->kl...", u, lap)
        sm = lambda f: space_mollify(g, f, self.ell)  # noqa: E731
        uu, gg, ul = sm(uu), sm(gg), sm(ul)
        R_ell = self.R_at(t)
        u_l, du_l = self._velocity(t)
        G = grad(g, u_l)
        lap = np.array([laplacian(g, c) for c in u_l])
        sym = (np.einsum("k...,l...->kl...", u_l, u_l) - uu
               - a2 * (np.einsum("kj...,lj...->kl...", G, G) - gg))
        nonsym = np.einsum("k...,l...->kl...", u_l, lap) - ul
        comm = StressField.from_full(g, sym) - a2 * fourier_inverse_div(g, tensor_div(g, nonsym))
        comm, p_comm = comm.traceless()
        out = (u_l, du_l, R_ell, comm, p_comm)
        self._cache[key] = out
        return out

    def residual(self, t) -> float:
        """Leray-projected residual of the mollified system, relative."""
        u_l, du_l, R_ell, comm, _ = self.at(t)
        r, scale = pressure_free_residual(self.grid, u_l, du_l, R_ell + comm, self.model)
        return float(np.abs(r).max() / max(scale, 1e-300))

    def velocity_trajectory(self, grid: Grid | None = None) -> Trajectory:
        """u_ell as a trajectory, optionally on a coarser grid (for characteristics)."""
        if grid is None or grid == self.grid:
            return _MollifiedVelocity(self)
        st = self.state
        coarse = IterationState(st.q, grid, st.model, restrict_trajectory(st.u, grid), ZeroStress(grid), st.supp_t)
        if self.ell <= grid.dx:
            m = MollifiedState.__new__(MollifiedState)
            m.state, m.ell, m.grid, m.model = coarse, self.ell, grid, self.model
            m.offsets, m.weights, m._cache = self.offsets, self.weights, {}
        else:
            m = MollifiedState(coarse, self.ell, len(self.offsets))
        return _MollifiedVelocity(m)


class _MollifiedVelocity(Trajectory):
    def __init__(self, m: MollifiedState):
        self.m, self.grid = m, m.grid

    def at(self, t):
        return self.m.u_at(t)

    def dt_at(self, t):
        return self.m.dt_u_at(t)


def mollify_pair(state: IterationState, ell: float, n_time: int = 32) -> MollifiedState:
    return MollifiedState(state, ell, n_time)


def comm_l1(moll: MollifiedState, t: float) -> float:
    return float(moll.grid.integral(moll.at(t)[3].pointwise_norm()))


# amplitude

def chi(z):
    """1 on [0, 1], z on [2, oo), a smooth convex combination in between."""
    z = np.asarray(z, dtype=float)
    s = smoothstep(z - 1.0)
    return (1.0 - s) + s * z


@dataclass
class AmplitudeField:
    rho: np.ndarray
    normalized: np.ndarray  # -R_ell / (alpha^2 rho), full tensor
    z: np.ndarray
    epsilon: float
    floor: float
    lp_report: dict = field(default_factory=dict)

    @property
    def ratio(self) -> float:
        """max |alpha^-2 R_ell| / rho (Frobenius)."""
        return float(np.sqrt((self.normalized**2).sum(axis=(0, 1))).max())

    def check(self) -> bool:
        return bool(np.all(self.rho > 0) and self.ratio <= self.epsilon * (1 + 1e-12))


def build_amplitude(R_ell: StressField, delta_next: float, lambda_next: float, epsilon: float, C_R: float,
                    model: AlphaModel) -> AmplitudeField:
    g = R_ell.grid
    a2 = model.alpha**2
    base = C_R * delta_next * lambda_next**2
    nrm = R_ell.pointwise_norm()
    z = nrm / (base * a2)
    floor = 2 * base / epsilon
    rho = floor * chi(z)
    normalized = -R_ell.full() / (a2 * rho)
    rep = {}
    for p in (1, 2, 4):
        lhs = float(g.integral(rho**p) ** (1 / p))
        rhs = 3 / epsilon * (base * g.volume ** (1 / p) + float(g.integral((nrm / a2) ** p) ** (1 / p)))
        rep[p] = (lhs, rhs, lhs <= rhs)
    return AmplitudeField(rho, normalized, z, epsilon, floor, rep)


# toy parameters and pipes

@dataclass
class ToyParameters:
    """Directly chosen scales for one resolvable step (the rigorous block lives in the ledger)."""

    lam_q: float = 1.0
    lam_next: int = 32
    r: Fraction = Fraction(1, 8)
    ell: float = 0.02
    tau: float = 0.005
    beta: float = 1.0
    C_R: float = 1.0
    d: int = 2
    delta_next: float | None = None
    n_fast: int = 1024
    n_flow: int = 32
    flow_step: float | None = None
    fd_step: float | None = None

    def __post_init__(self):
        self.r = Fraction(self.r).limit_denominator(10**6)
        if self.delta_next is None:
            self.delta_next = float(self.lam_next) ** (-2 * self.beta)
        for name in ("lam_q", "ell", "tau", "delta_next", "C_R"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")

    @property
    def lam_next2(self) -> float:
        return self.lam_next**2 / self.lam_q

    @property
    def delta_next2(self) -> float:
        return self.lam_next2 ** (-2 * self.beta)


class PipeBank:
    """Pipe families per parity: set K_0 for even cutoffs, K_1 for odd ones."""

    def __init__(self, dim: int, lam: int, r, d: int):
        if dim != 2:
            raise NotImplementedError("the step engine is implemented for 2-D line pipes")
        self.sets = build_direction_sets(1, dim)
        self.families = {p: [family_from_set(s, k, lam, r, d) for k in range(len(s))]
                         for p, s in enumerate(self.sets)}
        self.epsilon = min(s.epsilon for s in self.sets)
        self.lam = lam
        self._avg: dict = {}

    def average(self, parity: int, k: int) -> np.ndarray:
        if (parity, k) not in self._avg:
            self._avg[(parity, k)] = pipe_average_quadrature(self.families[parity][k], 2048)[0]
        return self._avg[(parity, k)]


# perturbation

@dataclass
class PerturbationFields:
    t: float
    psi: np.ndarray
    w: np.ndarray
    w_p: np.ndarray
    w_c: np.ndarray
    active: list
    curl_gap: float  # |w_p + w_c - curl form|, analytic on both sides
    div_rel: float
    grid_gap: float = 0.0  # spectral perp-grad of Psi against the analytic curl form


def assemble_perturbation(grid: Grid, amplitude: AmplitudeField, coefficients: dict, partition: TimePartition,
                          flows: dict, pipes: PipeBank, lambda_next: float, t: float) -> PerturbationFields:
    """w = perp-grad Psi with Psi = lam^-1 sum_i sum_k c_k eta_i rho^1/2 psi_k o Phi_i.

    ``coefficients[parity]`` holds the CoefficientSolution of that parity's set and
    ``flows[i]`` the MapSample of Phi_i at time t on ``grid``.  w_p and w_c are the
    principal part and the corrector, built independently from the analytic profile.
    """
    psi = np.zeros(grid.shape)
    w_p = np.zeros((2,) + grid.shape)
    w_c = np.zeros_like(w_p)
    w_curl = np.zeros_like(w_p)  # analytic perp-grad of Psi: a R J^T grad psi(Phi) + psi(Phi) perp-grad a
    rot = np.array([[0.0, -1.0], [1.0, 0.0]])
    sq_rho = np.sqrt(amplitude.rho)
    active = partition.active_at(t)
    for i in active:
        eta = float(partition.eta(i, np.array([t]))[0])
        par = i % 2
        sol = coefficients[par]
        F = flows[i]
        A = F.A
        for k, fam in enumerate(pipes.families[par]):
            a = np.sqrt(sol.squares[k]) * eta * sq_rho
            pot = fam.potential(F.phi)
            psi += a * pot / lambda_next
            W = fam.W(F.phi)
            w_p += a / lambda_next * np.einsum("il...,l...->i...", A, W)
            wc = perp_grad(grid, a) * pot / lambda_next
            w_c += wc
            JtG = np.einsum("li...,l...->i...", F.jacobian, fam.potential_grad(F.phi))
            w_curl += wc + a / lambda_next * np.einsum("ij,j...->i...", rot, JtG)
    w = perp_grad(grid, psi)
    scale = max(float(np.abs(w_curl).max()), 1e-300)
    gap = float(np.abs(w_curl - w_p - w_c).max() / scale)
    dv = divergence_norm(grid, w) if np.abs(w).max() > 0 else 0.0
    res = float(np.abs(w - w_curl).max() / scale)
    return PerturbationFields(t, psi, w, w_p, w_c, active, gap, dv, res)


# new stress

@dataclass
class StressBudget:
    t: float
    R_osc: StressField
    R_transport: StressField
    R_Nash: StressField
    R_comm: StressField
    master_residual: float
    type1_error: float
    type2: list
    norms: dict

    @property
    def total(self) -> StressField:
        return self.R_osc + self.R_transport + self.R_Nash + self.R_comm


def _l1(grid: Grid, R: StressField) -> float:
    return float(grid.integral(R.pointwise_norm()))


def decompose_new_stress(grid: Grid, model: AlphaModel, u_ell, du_ell, R_ell: StressField, R_comm: StressField,
                         w, dw_transport, dw_residual=None) -> tuple:
    """Stresses of u_ell + w grouped as oscillation, transport, Nash and commutator.

    ``dw_transport`` is d_t w used in the transport group; ``dw_residual`` (default
    the same) is the time derivative used when checking the master identity, so
    an independent finite difference can be plugged in.  Returns (budget pieces,
    relative Leray-projected residual).
    """
    a, a2 = model.alpha, model.alpha**2
    vw = helmholtz(grid, w, a)
    Gw = grad(grid, w)
    Gl = grad(grid, u_ell)
    osc = (R_ell.full() + np.einsum("k...,l...->kl...", w, vw) - a2 * np.einsum("kj...,lj...->kl...", Gw, Gw))
    R_osc = fourier_inverse_div(grid, tensor_div(grid, osc))
    trans = helmholtz(grid, dw_transport, a) + tensor_div(grid, np.einsum("k...,l...->kl...", u_ell, vw))
    R_tr = fourier_inverse_div(grid, trans)
    nash = (np.einsum("k...,l...->kl...", w, helmholtz(grid, u_ell, a))
            - a2 * np.einsum("kj...,lj...->kl...", Gl, Gw) - a2 * np.einsum("kj...,lj...->kl...", Gw, Gl))
    R_n = fourier_inverse_div(grid, tensor_div(grid, nash))
    total = R_osc + R_tr + R_n + R_comm
    dw = dw_transport if dw_residual is None else dw_residual
    res, scale = pressure_free_residual(grid, u_ell + w, du_ell + dw, total, model)
    return (R_osc, R_tr, R_n), float(np.abs(res).max() / max(scale, 1e-300))


# the step

def _fd5(vals: list, h: float):
    """Fourth-order central difference from values at t-2h, t-h, t, t+h, t+2h."""
    return (vals[0] - 8 * vals[1] + 8 * vals[3] - vals[4]) / (12 * h)


@dataclass
class StepReport:
    t: float
    divergence: float
    mean: float
    master_residual: float
    mollified_residual: float
    curl_gap: float
    type1_error: float
    H_ell: float
    H_next: float
    amplitude_ok: bool
    stress_l1: dict
    support: dict
    diagnostics: dict

    @property
    def H_change(self) -> float:
        return abs(self.H_next - self.H_ell) / max(abs(self.H_ell), 1e-300)

    def lines(self) -> list:
        out = [
            f"t = {self.t:.6g}",
            f"div u_next (relative) {self.divergence:.3e}",
            f"mean u_next {self.mean:.3e}",
            f"master identity residual (relative) {self.master_residual:.3e}",
            f"mollified identity residual (relative) {self.mollified_residual:.3e}",
            f"w vs w_p + w_c (relative) {self.curl_gap:.3e}",
            f"Type-1 average vs R_ell / alpha^2 (relative) {self.type1_error:.3e}",
            f"H(u_ell) = {self.H_ell:.12g}, H(u_next) = {self.H_next:.12g}",
            f"amplitude bound |R_ell|/(alpha^2 rho) <= epsilon: {self.amplitude_ok}",
        ]
        out += [f"L1 {k} = {v:.6e}" for k, v in self.stress_l1.items()]
        out += [f"support {k}: {v}" for k, v in self.support.items()]
        out += [f"{k}: {v} ({DIAGNOSTIC})" for k, v in self.diagnostics.items()]
        return out


class StepEngine:
    """Evaluates u_{q+1} = u_ell + w and R_{q+1} at time slices."""

    def __init__(self, state: IterationState, params: ToyParameters, n_time: int = 32):
        if state.grid.dim != 2:
            raise NotImplementedError("the step engine is implemented in 2-D")
        self.state, self.p = state, params
        self.model = state.model
        self.slow = state.grid
        self.fast = Grid(2, params.n_fast)
        if self.fast.n < 16 * params.lam_next:
            raise ValueError("fast grid does not resolve lambda_{q+1} (need >= 16 points per wavelength)")
        self.flow_grid = Grid(2, params.n_flow)
        self.moll = mollify_pair(state, params.ell, n_time)
        self.pipes = PipeBank(2, params.lam_next, params.r, params.d)
        self.partition = build_time_partition(params.tau, self.moll.supp_t)
        self.vel_flow = self.moll.velocity_trajectory(self.flow_grid)
        self.h = params.fd_step or params.tau / 100.0
        self._flows: dict = {}
        self._slow: dict = {}
        self._amp: dict = {}

    def time_support(self, samples: int = 40001):
        """Closed hull of {t : sum_i eta_i(t)^2 > 0}, i.e. of supp_t w, by scanning."""
        a, b = self.moll.supp_t
        pad = 3 * self.p.tau
        ts = np.linspace(a - pad, b + pad, samples)
        on = ts[self.partition.sum_squares(ts) > 0]
        if on.size == 0:
            return None
        step = ts[1] - ts[0]
        return (float(on[0] - step), float(on[-1] + step))

    # slow pieces on the fast grid
    def slow_fields(self, t: float) -> tuple:
        if t not in self._slow:
            u, du, R, C, pc = self.moll.at(t)
            f = lambda a: resample(a, self.slow, self.fast)  # noqa: E731
            self._slow[t] = (f(u), f(du), StressField(self.fast, f(R.components)),
                             StressField(self.fast, f(C.components)))
        return self._slow[t]

    def amplitude(self, t: float) -> AmplitudeField:
        if t not in self._amp:
            R = StressField(self.fast, resample(self.moll.R_at(t).components, self.slow, self.fast))
            p = self.p
            amp = build_amplitude(R, p.delta_next, p.lam_next, self.pipes.epsilon, p.C_R, self.model)
            coef = {par: decompose_stress(amp.normalized, s) for par, s in enumerate(self.pipes.sets)}
            self._amp[t] = (amp, coef)
        return self._amp[t][0]

    def coefficients(self, amp: AmplitudeField) -> dict:
        for a, c in self._amp.values():
            if a is amp:
                return c
        return {par: decompose_stress(amp.normalized, s) for par, s in enumerate(self.pipes.sets)}

    def flow(self, i: int, t: float) -> MapSample:
        key = (i, t)
        if key not in self._flows:
            times = [t + m * self.h for m in (-2, -1, 0, 1, 2)]
            step = self.p.flow_step or self.p.tau / 16
            fm = solve_flow(self.vel_flow, i * self.p.tau, times, self.flow_grid, step=step,
                            window=self.p.tau)
            for s in times:
                disp = resample(fm.at(s).displacement, self.flow_grid, self.fast)
                self._flows[(i, s)] = MapSample.from_positions(self.fast, self.fast.x + disp, s)
            self._flows[key] = self._flows[(i, times[2])]
        return self._flows[key]

    def _flows_at(self, t: float, anchor: float | None = None) -> dict:
        anchor = t if anchor is None else anchor
        out = {}
        for i in self.partition.active_at(t):
            if (i, t) not in self._flows:
                self.flow(i, anchor)
            out[i] = self._flows[(i, t)]
        return out

    def perturbation(self, t: float, anchor: float | None = None) -> tuple:
        amp = self.amplitude(t)
        coef = self.coefficients(amp)
        flows = self._flows_at(t, anchor)
        pf = assemble_perturbation(self.fast, amp, coef, self.partition, flows, self.pipes, self.p.lam_next, t)
        return pf, amp, coef, flows

    def _coefficient_fields(self, t: float) -> dict:
        """a_{i,k}(t) = c_k eta_i rho^1/2 on the fast grid for every active (i, k)."""
        amp = self.amplitude(t)
        coef = self.coefficients(amp)
        sq = np.sqrt(amp.rho)
        out = {}
        for i in self.partition.active_at(t):
            eta = float(self.partition.eta(i, np.array([t]))[0])
            sol = coef[i % 2]
            for k in range(len(self.pipes.families[i % 2])):
                out[(i, k)] = np.sqrt(sol.squares[k]) * eta * sq
        return out

    def dt_w(self, t: float) -> np.ndarray:
        """d_t w with the fast factor differentiated along characteristics (d_t Phi = -grad Phi u_ell)."""
        h = self.h
        times = [t + m * h for m in (-2, -1, 0, 1, 2)]
        coeffs = [self._coefficient_fields(s) for s in times]
        keys = set().union(*[c.keys() for c in coeffs])
        u_l = self.slow_fields(t)[0]
        lam = self.p.lam_next
        dpsi = np.zeros(self.fast.shape)
        for (i, k) in keys:
            vals = [c.get((i, k), np.zeros(self.fast.shape)) for c in coeffs]
            if not np.any(vals[2]) and not any(np.any(v) for v in vals):
                continue
            self.flow(i, t)
            F = self._flows[(i, t)]
            fam = self.pipes.families[i % 2][k]
            da = _fd5(vals, h)
            Ju = np.einsum("lp...,p...->l...", F.jacobian, u_l)
            gpsi = fam.potential_grad(F.phi)
            dpsi += (da * fam.potential(F.phi) - vals[2] * (gpsi * Ju).sum(0)) / lam
        return perp_grad(self.fast, dpsi)

    def dt_w_fd(self, t: float) -> np.ndarray:
        """Independent check: fourth-order difference of w itself."""
        h = self.h
        ws = [self.perturbation(t + m * h, anchor=t)[0].w for m in (-2, -1, 0, 1, 2)]
        return _fd5(ws, h)

    def type1_error(self, t: float, amp: AmplitudeField, coef: dict) -> float:
        """|lam^-2 sum c_k^2 eta_i^2 rho <W (x) Lap W + grad W^T grad W> - alpha^-2 R_ell| relative."""
        lam = self.p.lam_next
        L = np.zeros((2, 2) + self.fast.shape)
        size = 0.0  # magnitude of the individual terms, the scale when R_ell = 0
        for i in self.partition.active_at(t):
            eta2 = float(self.partition.eta(i, np.array([t]))[0]) ** 2
            sol = coef[i % 2]
            for k in range(len(self.pipes.families[i % 2])):
                term = (sol.squares[k] * eta2 * amp.rho)[None, None] * self.pipes.average(i % 2, k)[:, :, None, None]
                L += term
                size = max(size, float(np.abs(term).max()))
        L /= lam**2
        target = self.slow_fields(t)[2].full() / self.model.alpha**2
        scale = max(float(np.abs(target).max()), size / lam**2, 1e-300)
        return float(np.abs(L - target).max() / scale)

    def type2(self, flows: dict, amp: AmplitudeField, coef: dict, t: float) -> list:
        """L1 of cross-parity products |a W_k o Phi_i| |a' W_k' o Phi_i'| (neighbouring cutoffs)."""
        act = sorted(flows)
        out = []
        sq = np.sqrt(amp.rho)
        for i, j in zip(act, act[1:]):
            if j - i != 1:
                continue
            ei = float(self.partition.eta(i, np.array([t]))[0])
            ej = float(self.partition.eta(j, np.array([t]))[0])
            for k, f1 in enumerate(self.pipes.families[i % 2]):
                m1 = np.abs(np.sqrt(coef[i % 2].squares[k]) * ei * sq * f1.rho(flows[i].phi))
                for kk, f2 in enumerate(self.pipes.families[j % 2]):
                    m2 = np.abs(np.sqrt(coef[j % 2].squares[kk]) * ej * sq * f2.rho(flows[j].phi))
                    out.append(((i, k), (j, kk), float(self.fast.integral(m1 * m2))))
        return out

    def evaluate(self, t: float, check_fd: bool = True) -> tuple:
        """(u_next, R_next, StepReport) at time t."""
        g, model = self.fast, self.model
        u_l, du_l, R_ell, R_comm = self.slow_fields(t)
        pf, amp, coef, flows = self.perturbation(t)
        w = pf.w
        dw = self.dt_w(t) if np.any(w) else np.zeros_like(w)
        dw_res = self.dt_w_fd(t) if (check_fd and np.any(w)) else dw
        pieces, master = decompose_new_stress(g, model, u_l, du_l, R_ell, R_comm, w, dw, dw_res)
        R_osc, R_tr, R_n = pieces
        u_next = u_l + w
        R_next = R_osc + R_tr + R_n + R_comm
        l1 = {"R_osc": _l1(g, R_osc), "R_transport": _l1(g, R_tr), "R_Nash": _l1(g, R_n),
              "R_comm": _l1(g, R_comm), "R_ell": _l1(g, R_ell)}
        # supports
        p = self.p
        a, b = self.state.supp_t
        w_supp = self.time_support()
        allowed = 1.0 / (30 * p.lam_q)
        supp = {
            "R_q": (a, b),
            "w": w_supp,
            "allowed window": (a - allowed, b + allowed),
            "within window": bool(w_supp is None or (w_supp[0] >= a - allowed and w_supp[1] <= b + allowed)),
        }
        # inductive-bound diagnostics
        diff = u_next - resample(self.state.u.at(t), self.slow, g)
        G1 = grad(g, diff)
        G2 = grad(g, G1)
        inc = (math.sqrt(float(g.integral((diff**2).sum(0))))
               + math.sqrt(float(g.integral((G1**2).sum(axis=(0, 1))))) / p.lam_next
               + math.sqrt(float(g.integral((G2**2).sum(axis=(0, 1, 2))))) / p.lam_next**2)
        bound_R = model.alpha**2 * p.C_R * p.delta_next2 * p.lam_next2**2
        diag = {
            "increment norm vs delta^1/2": f"{inc:.4g} vs {math.sqrt(p.delta_next):.4g} "
                                           f"{'pass' if inc <= math.sqrt(p.delta_next) else 'fail'}",
            "L1 R_next vs alpha^2 C_R delta lam^2": f"{_l1(g, R_next):.4g} vs {bound_R:.4g} "
                                                    f"{'pass' if _l1(g, R_next) <= bound_R else 'fail'}",
            "||w_p||_L2 vs delta^1/2 / 2": f"{math.sqrt(float(g.integral((pf.w_p**2).sum(0)))):.4g} vs "
                                          f"{0.5 * math.sqrt(p.delta_next):.4g}",
        }
        rep = StepReport(
            t=t,
            divergence=divergence_norm(g, u_next),
            mean=float(np.abs(g.mean(u_next)).max()),
            master_residual=master,
            mollified_residual=self.moll.residual(t),
            curl_gap=pf.curl_gap,
            type1_error=self.type1_error(t, amp, coef) if pf.active else 0.0,
            H_ell=hamiltonian(u_l, model, g),
            H_next=hamiltonian(u_next, model, g),
            amplitude_ok=amp.check(),
            stress_l1=l1,
            support=supp,
            diagnostics=diag,
        )
        self.last_type2 = self.type2(flows, amp, coef, t)
        return u_next, R_next, rep


class _NextVelocity(Trajectory):
    def __init__(self, eng: StepEngine):
        self.eng, self.grid = eng, eng.fast

    def at(self, t):
        return self.eng.slow_fields(t)[0] + self.eng.perturbation(t)[0].w

    def dt_at(self, t):
        return self.eng.slow_fields(t)[1] + self.eng.dt_w(t)


class _NextStress:
    def __init__(self, eng: StepEngine):
        self.eng, self.grid = eng, eng.fast

    def at(self, t) -> StressField:
        return self.eng.evaluate(t, check_fd=False)[1]


def iterate_step(state: IterationState, params: ToyParameters, times=None, n_time: int = 32,
                 check_fd: bool = True) -> tuple:
    """Next state (lazy trajectories on the fast grid) and reports at the requested times."""
    eng = StepEngine(state, params, n_time)
    if times is None:
        a, b = state.supp_t
        times = [0.5 * (a + b) + 0.3 * params.tau]  # two cutoffs of opposite parity active
    reports = [eng.evaluate(float(t), check_fd)[2] for t in times]
    a, b = eng.moll.supp_t
    pad = params.tau
    nxt = IterationState(state.q + 1, eng.fast, state.model, _NextVelocity(eng), _NextStress(eng),
                         (a - pad, b + pad), params)
    return nxt, reports, eng


def nonconservation_witness(u: Trajectory, model: AlphaModel, params: ToyParameters, supp_t=(0.4, 0.6),
                            t: float | None = None) -> StepReport:
    """Step from an exact solution with R_q = 0: w sits at the amplitude floor and H moves."""
    st = IterationState(0, u.grid, model, u, ZeroStress(u.grid), tuple(supp_t))
    if t is None:
        t = 0.5 * (supp_t[0] + supp_t[1]) + 0.3 * params.tau
    eng = StepEngine(st, params)
    return eng.evaluate(float(t), check_fd=False)[2]


# conservation

def energy_flux(grid: Grid, u: np.ndarray, eps: float, alpha: float) -> float:
    """Right side of the mollified Hamiltonian balance (half d/dt H of u^eps)."""
    a2 = alpha**2
    m = lambda f: space_mollify(grid, f, eps)  # noqa: E731
    G = grad(grid, u)  # G[k, i] = d_k u^i
    ue = m(u)
    Ge = grad(grid, ue)
    He = np.array([grad(grid, Ge[k]) for k in range(grid.dim)])  # He[k, j, i] = d_j d_k u^i
    t1 = (m(np.einsum("j...,i...->ji...", u, u)) * Ge).sum(axis=(0, 1))
    t2 = np.einsum("jki...,kji...->...", m(np.einsum("j...,ki...->jki...", u, G)), He)
    t3 = np.einsum("ji...,ji...->...", m(np.einsum("kj...,ki...->ji...", G, G)), Ge)
    t4 = np.einsum("ki...,ki...->...", m(np.einsum("kj...,ij...->ki...", G, G)), Ge)
    return float(grid.integral(t1 + a2 * (t2 + t3 - t4)))


@dataclass
class ConservationReport:
    times: np.ndarray
    H: np.ndarray
    flux: list  # (eps, flux)

    @property
    def drift(self) -> float:
        return float(np.abs(self.H - self.H[0]).max() / abs(self.H[0]))

    def flux_ratios(self) -> list:
        return [abs(a[1]) / max(abs(b[1]), 1e-300) for a, b in zip(self.flux, self.flux[1:])]


def conservation_experiment(u0: np.ndarray, model: AlphaModel, dt: float, t_final: float, grid: Grid,
                            eps_sweep=None, every: int = 1) -> ConservationReport:
    ts, hs, _ = evolve_hamiltonian_series(u0, model, dt, t_final, grid, every=every)
    flux = []
    if eps_sweep is not None:
        for e in eps_sweep:
            flux.append((float(e), energy_flux(grid, np.asarray(u0, dtype=float), float(e), model.alpha)))
    return ConservationReport(ts, hs, flux)


def drift_ratio(u0: np.ndarray, model: AlphaModel, dt: float, t_final: float, grid: Grid) -> tuple:
    """(drift at dt, drift at dt/2, ratio)."""
    d1 = conservation_experiment(u0, model, dt, t_final, grid).drift
    d2 = conservation_experiment(u0, model, dt / 2, t_final, grid).drift
    return d1, d2, d1 / d2


__all__ = [
    "resample", "restrict_trajectory", "GlueCutoff", "GluedTrajectory", "GluedStress", "ZeroStress",
    "IterationState", "glue_initial", "verify_glue", "GlueReport", "bilinear_flux", "mollifier_symbol",
    "space_mollify", "mollify_pair", "MollifiedState", "comm_l1", "chi", "AmplitudeField", "build_amplitude",
    "ToyParameters", "PipeBank", "assemble_perturbation", "PerturbationFields", "decompose_new_stress",
    "StressBudget", "StepEngine", "StepReport", "iterate_step", "energy_flux", "conservation_experiment",
    "ConservationReport", "drift_ratio", "nonconservation_witness", "DIAGNOSTIC", "smoothstep",
]
