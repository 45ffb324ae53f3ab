"""Periodic fields on the 2-D and 3-D torus and their spectral calculus.

Arrays are laid out components-first: a vector field on an n^3 grid has shape
(3, n, n, n) and a rank-2 field (3, 3, n, n, n), with M[k, l] the (k, l) entry.
Divergence of a tensor contracts the first index, (Div M)^l = d_k M^{kl}.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from typing import Callable, Sequence

import numpy as np
import scipy.fft as sfft

TWO_PI = 2.0 * np.pi


class SpectralBlowup(RuntimeError):
    """Energy piled up at the edge of the retained band."""


@dataclass(frozen=True)
class Grid:
    """Uniform grid on [0, 2pi)^dim with identical power-of-two resolution."""

    dim: int
    n: int

    def __post_init__(self):
        if self.dim not in (2, 3):
            raise ValueError("dim must be 2 or 3")
        if self.n < 8 or self.n & (self.n - 1):
            raise ValueError(f"resolution must be a power of two >= 8, got {self.n}")

    @property
    def shape(self):
        return (self.n,) * self.dim

    @property
    def axes(self):
        return tuple(range(-self.dim, 0))

    @property
    def dx(self) -> float:
        return TWO_PI / self.n

    @property
    def cell_volume(self) -> float:
        return self.dx**self.dim

    @property
    def volume(self) -> float:
        return TWO_PI**self.dim

    @cached_property
    def x(self) -> np.ndarray:
        """Coordinates, shape (dim, n, ..., n)."""
        g = np.arange(self.n) * self.dx
        return np.array(np.meshgrid(*([g] * self.dim), indexing="ij"))

    @cached_property
    def k(self) -> tuple:
        """Integer wavenumbers broadcastable against the rfft half-spectrum."""
        full = np.fft.fftfreq(self.n, 1.0 / self.n)
        half = np.fft.rfftfreq(self.n, 1.0 / self.n)
        out = []
        for i in range(self.dim):
            v = half if i == self.dim - 1 else full
            s = [1] * self.dim
            s[i] = v.size
            out.append(v.reshape(s))
        return tuple(out)

    @cached_property
    def k2(self) -> np.ndarray:
        return sum(ki**2 for ki in self.k)

    @cached_property
    def inv_k2(self) -> np.ndarray:
        with np.errstate(divide="ignore"):
            out = 1.0 / self.k2
        out[(0,) * self.dim] = 0.0
        return out

    @cached_property
    def nyquist(self) -> np.ndarray:
        """True on modes with some |k_i| = n/2; derivatives there are zeroed."""
        m = np.zeros(self.k2.shape, dtype=bool)
        for ki in self.k:
            m = m | (np.abs(ki) == self.n // 2)
        return m

    def dealias_mask(self, fraction: float = 2.0 / 3.0) -> np.ndarray:
        cut = fraction * self.n / 2.0
        m = np.ones(self.k2.shape, dtype=bool)
        for ki in self.k:
            m = m & (np.abs(ki) < cut)
        return m

    # transforms over the trailing dim axes
    def fft(self, a: np.ndarray) -> np.ndarray:
        return sfft.rfftn(a, axes=self.axes)

    def ifft(self, a_hat: np.ndarray) -> np.ndarray:
        return sfft.irfftn(a_hat, s=self.shape, axes=self.axes)

    def dhat(self, a_hat: np.ndarray, i: int) -> np.ndarray:
        """Spectral d/dx_i; the Nyquist plane is dropped to keep real output exact."""
        return np.where(self.nyquist, 0.0, 1j * self.k[i]) * a_hat

    def mean(self, a: np.ndarray) -> np.ndarray:
        return a.mean(axis=self.axes)

    def integral(self, a: np.ndarray) -> np.ndarray:
        return a.sum(axis=self.axes) * self.cell_volume


@dataclass(frozen=True)
class AlphaModel:
    alpha: float

    def __post_init__(self):
        if not self.alpha > 0:
            raise ValueError("alpha must be positive")

    def helmholtz_symbol(self, grid: Grid) -> np.ndarray:
        return 1.0 + self.alpha**2 * grid.k2


class SpectralField:
    """Real field sampled on a grid; spectral view computed on demand."""

    __slots__ = ("grid", "rank", "_phys", "_spec")

    def __init__(self, grid: Grid, data: np.ndarray, rank: int | None = None, spectral=False):
        self.grid = grid
        if spectral:
            self._spec = np.array(data, dtype=complex)
            self._phys = None
            lead = self._spec.ndim - grid.dim
        else:
            self._phys = np.array(data, dtype=float)
            self._spec = None
            lead = self._phys.ndim - grid.dim
        self.rank = lead if rank is None else rank
        if self.rank not in (0, 1, 2) or self.rank != lead:
            raise ValueError("array shape does not match a rank 0, 1 or 2 field")
        arr = self._phys if self._phys is not None else self._spec
        if any(s != grid.dim for s in arr.shape[:lead]):
            raise ValueError("component axes must have length dim")
        for a in (self._phys, self._spec):
            if a is not None:
                a.flags.writeable = False

    @property
    def physical(self) -> np.ndarray:
        if self._phys is None:
            self._phys = self.grid.ifft(self._spec)
            self._phys.flags.writeable = False
        return self._phys

    @property
    def spectral(self) -> np.ndarray:
        if self._spec is None:
            self._spec = self.grid.fft(self._phys)
            self._spec.flags.writeable = False
        return self._spec

    def __add__(self, other):
        return SpectralField(self.grid, self.physical + other.physical)

    def __sub__(self, other):
        return SpectralField(self.grid, self.physical - other.physical)

    def __mul__(self, c: float):
        return SpectralField(self.grid, self.physical * c)

    __rmul__ = __mul__

    def norm(self, p: float = 2) -> float:
        return lp_norm(self.grid, self.physical, p)

    def __repr__(self):
        return f"SpectralField(dim={self.grid.dim}, n={self.grid.n}, rank={self.rank})"


def transform(field: SpectralField, direction: str = "forward") -> np.ndarray:
    """Forward returns rfft coefficients normalized so a constant c maps to c at k = 0."""
    g = field.grid
    if direction == "forward":
        return field.spectral / np.prod(g.shape)
    if direction == "inverse":
        return field.physical
    raise ValueError("direction must be 'forward' or 'inverse'")


def sym_index(dim: int):
    """Independent entries of a symmetric tensor in storage order."""
    if dim == 2:
        return [(0, 0), (0, 1), (1, 1)]
    return [(0, 0), (0, 1), (0, 2), (1, 1), (1, 2), (2, 2)]


class StressField:
    """Symmetric 2-tensor field stored by its independent entries."""

    __slots__ = ("grid", "components")

    def __init__(self, grid: Grid, components: np.ndarray):
        ncomp = 3 if grid.dim == 2 else 6
        components = np.array(components, dtype=float)
        if components.shape != (ncomp,) + grid.shape:
            raise ValueError(f"expected {ncomp} components on the grid")
        components.flags.writeable = False
        self.grid = grid
        self.components = components

    @classmethod
    def from_full(cls, grid: Grid, M: np.ndarray) -> "StressField":
        """Symmetrize and store; M has shape (dim, dim, *grid)."""
        comps = [0.5 * (M[i, j] + M[j, i]) for i, j in sym_index(grid.dim)]
        return cls(grid, np.array(comps))

    @classmethod
    def zeros(cls, grid: Grid) -> "StressField":
        return cls(grid, np.zeros((3 if grid.dim == 2 else 6,) + grid.shape))

    def full(self) -> np.ndarray:
        d = self.grid.dim
        M = np.empty((d, d) + self.grid.shape)
        for c, (i, j) in enumerate(sym_index(d)):
            M[i, j] = self.components[c]
            M[j, i] = self.components[c]
        return M

    def trace(self) -> np.ndarray:
        return sum(self.components[c] for c, (i, j) in enumerate(sym_index(self.grid.dim)) if i == j)

    def traceless(self) -> tuple:
        """(traceless part, trace/dim) so that self = part + (trace/dim) Id."""
        tr = self.trace() / self.grid.dim
        comps = self.components.copy()
        for c, (i, j) in enumerate(sym_index(self.grid.dim)):
            if i == j:
                comps[c] = comps[c] - tr
        return StressField(self.grid, comps), tr

    def pointwise_norm(self) -> np.ndarray:
        """Frobenius norm at each point."""
        M = self.full()
        return np.sqrt(np.einsum("ij...,ij...->...", M, M))

    def __add__(self, other):
        return StressField(self.grid, self.components + other.components)

    def __sub__(self, other):
        return StressField(self.grid, self.components - other.components)

    def __mul__(self, c):
        return StressField(self.grid, self.components * c)

    __rmul__ = __mul__


# array-level calculus

def _as_array(f):
    return f.physical if isinstance(f, SpectralField) else np.asarray(f)


def grad(grid: Grid, f: np.ndarray) -> np.ndarray:
    """Gradient with the new index first: grad(u)[k, j] = d_k u^j."""
    f = _as_array(f)
    fh = grid.fft(f)
    return np.array([grid.ifft(grid.dhat(fh, i)) for i in range(grid.dim)])


def div(grid: Grid, F: np.ndarray) -> np.ndarray:
    """Contract the first index: (div F)^{...} = d_k F^{k...}."""
    F = _as_array(F)
    if F.ndim == grid.dim:
        raise ValueError("divergence needs rank >= 1")
    if F.shape[0] != grid.dim:
        raise ValueError("rank mismatch")
    acc = sum(grid.dhat(grid.fft(F[i]), i) for i in range(grid.dim))
    return grid.ifft(acc)


def curl(grid: Grid, F: np.ndarray) -> np.ndarray:
    """3-D: vector curl.  2-D: vector -> scalar vorticity, scalar -> perp gradient."""
    F = _as_array(F)
    rank = F.ndim - grid.dim
    if grid.dim == 3:
        if rank != 1:
            raise ValueError("3-D curl needs a vector field")
        h = [grid.fft(F[i]) for i in range(3)]
        d = grid.dhat
        return np.array([
            grid.ifft(d(h[2], 1) - d(h[1], 2)),
            grid.ifft(d(h[0], 2) - d(h[2], 0)),
            grid.ifft(d(h[1], 0) - d(h[0], 1)),
        ])
    if rank == 0:
        h = grid.fft(F)
        return np.array([grid.ifft(-grid.dhat(h, 1)), grid.ifft(grid.dhat(h, 0))])
    if rank == 1:
        return grid.ifft(grid.dhat(grid.fft(F[1]), 0) - grid.dhat(grid.fft(F[0]), 1))
    raise ValueError("2-D curl needs a scalar or vector field")


def perp_grad(grid: Grid, f: np.ndarray) -> np.ndarray:
    """(-d_2 f, d_1 f) in 2-D."""
    if grid.dim != 2:
        raise ValueError("perp gradient is 2-D only")
    return curl(grid, f)


def laplacian(grid: Grid, f: np.ndarray) -> np.ndarray:
    f = _as_array(f)
    return grid.ifft(-grid.k2 * grid.fft(f))


def diff_ops(field: SpectralField, op: str) -> SpectralField:
    g = field.grid
    table = {"grad": grad, "div": div, "curl": curl, "laplacian": laplacian}
    if op not in table:
        raise ValueError(f"unknown operator {op!r}")
    if op == "div" and field.rank == 0:
        raise ValueError("rank mismatch: div of a scalar")
    if op == "curl" and g.dim == 3 and field.rank != 1:
        raise ValueError("rank mismatch: curl needs a vector")
    if op == "curl" and field.rank == 2:
        raise ValueError("rank mismatch: curl of a tensor")
    if op == "grad" and field.rank == 2:
        raise ValueError("rank mismatch: grad of a tensor")
    return SpectralField(g, table[op](g, field.physical))


def leray_hat(grid: Grid, vh: np.ndarray) -> np.ndarray:
    """Leray projection in spectral space, vh of shape (dim, ...)."""
    kdotv = sum(grid.k[i] * vh[i] for i in range(grid.dim))
    return np.array([vh[i] - grid.k[i] * kdotv * grid.inv_k2 for i in range(grid.dim)])


def leray(grid: Grid, v: np.ndarray) -> np.ndarray:
    v = _as_array(v)
    vh = np.array([grid.fft(v[i]) for i in range(grid.dim)])
    return np.array([grid.ifft(c) for c in leray_hat(grid, vh)])


def leray_project(v: SpectralField) -> SpectralField:
    if v.rank != 1:
        raise ValueError("leray_project needs a vector field")
    return SpectralField(v.grid, leray(v.grid, v.physical))


def helmholtz(grid: Grid, u: np.ndarray, alpha: float) -> np.ndarray:
    """v = u - alpha^2 Laplacian(u), componentwise."""
    u = _as_array(u)
    if u.ndim == grid.dim:
        return u - alpha**2 * laplacian(grid, u)
    return np.array([helmholtz(grid, c, alpha) for c in u])


def inv_helmholtz(grid: Grid, v: np.ndarray, alpha: float) -> np.ndarray:
    v = _as_array(v)
    if v.ndim == grid.dim:
        return grid.ifft(grid.fft(v) / (1.0 + alpha**2 * grid.k2))
    return np.array([inv_helmholtz(grid, c, alpha) for c in v])


def lp_norm(grid: Grid, f: np.ndarray, p: float = 2) -> float:
    """L^p norm over the torus (trapezoidal quadrature), pointwise Euclidean on components."""
    f = _as_array(f)
    lead = f.ndim - grid.dim
    mag = np.sqrt((f**2).reshape((-1,) + grid.shape).sum(axis=0)) if lead else np.abs(f)
    if np.isinf(p):
        return float(mag.max())
    return float((mag**p).sum() * grid.cell_volume) ** (1.0 / p)


def besov_norm(grid: Grid, f: np.ndarray, s: float, p: float = 3) -> float:
    """max_j 2^{js} ||Delta_j f||_{L^p} over sharp dyadic shells (diagnostic only)."""
    f = _as_array(f)
    kk = np.sqrt(grid.k2)
    fh = grid.fft(f)
    best = 0.0
    j = 0
    while 2 ** (j - 1) <= kk.max():
        lo, hi = (0.0 if j == 0 else 2 ** (j - 1)), 2**j
        shell = (kk >= lo) & (kk < hi)
        part = grid.ifft(np.where(shell, fh, 0.0))
        best = max(best, 2 ** (j * s) * lp_norm(grid, part, p))
        j += 1
    return best


def hamiltonian(u, model: AlphaModel, grid: Grid | None = None) -> float:
    """||u||^2 + alpha^2 ||grad u||^2 over the torus, via Parseval."""
    if isinstance(u, SpectralField):
        grid = u.grid
        u = u.physical
    if grid is None:
        raise ValueError("grid required for raw arrays")
    N = np.prod(grid.shape)
    total = 0.0
    for c in np.asarray(u).reshape((-1,) + grid.shape):
        ch = grid.fft(c)
        w = np.full(ch.shape, 2.0)
        w[..., 0] = 1.0
        if grid.n % 2 == 0:
            w[..., -1] = 1.0
        total += float((w * (1.0 + model.alpha**2 * grid.k2) * np.abs(ch) ** 2).sum())
    return total * grid.volume / N**2


def hamiltonian_quadrature(u, model: AlphaModel, grid: Grid) -> float:
    u = _as_array(u)
    G = grad(grid, u)
    return float(grid.integral((u**2).sum(axis=0) + model.alpha**2 * (G**2).sum(axis=(0, 1))))


def flux_tensor(grid: Grid, u: np.ndarray, alpha: float, G: np.ndarray | None = None,
                v: np.ndarray | None = None) -> np.ndarray:
    """u^k v^l - alpha^2 d_k u^j d_l u^j, shape (dim, dim, *grid)."""
    if G is None:
        G = grad(grid, u)
    if v is None:
        v = helmholtz(grid, u, alpha)
    return np.einsum("k...,l...->kl...", u, v) - alpha**2 * np.einsum("kj...,lj...->kl...", G, G)


def euler_alpha_tendency_free(grid: Grid, u, du_dt, alpha: float) -> np.ndarray:
    """d_t v + Div(u (x) v - alpha^2 grad u^T grad u), without pressure."""
    u = _as_array(u)
    du_dt = _as_array(du_dt)
    return helmholtz(grid, du_dt, alpha) + div(grid, flux_tensor(grid, u, alpha))


def tensor_div(grid: Grid, M: np.ndarray) -> np.ndarray:
    """(Div M)^l = d_k M^{kl}."""
    M = _as_array(M.full() if isinstance(M, StressField) else M)
    return np.array([div(grid, M[:, l]) for l in range(grid.dim)])


def divergence_norm(grid: Grid, u: np.ndarray) -> float:
    """max |div u| relative to max |grad u|."""
    u = _as_array(u)
    dv = div(grid, u)
    scale = max(np.abs(grad(grid, u)).max(), 1e-300)
    return float(np.abs(dv).max() / scale)


def relaxed_residual(u, p, R, du_dt, model: AlphaModel, grid: Grid | None = None,
                     div_tol: float = 1e-8) -> np.ndarray:
    """d_t v + Div(u (x) v - alpha^2 grad u^T grad u) + grad p - Div R."""
    if isinstance(u, SpectralField):
        grid = u.grid
    u, du_dt = _as_array(u), _as_array(du_dt)
    if divergence_norm(grid, u) > div_tol and np.abs(u).max() > 0:
        raise ValueError("velocity is not divergence free")
    out = euler_alpha_tendency_free(grid, u, du_dt, model.alpha)
    if p is not None:
        out = out + grad(grid, _as_array(p))
    if R is not None:
        out = out - tensor_div(grid, R)
    return out


def pressure_free_residual(grid: Grid, u, du_dt, R, model: AlphaModel) -> tuple:
    """Leray-projected residual and the scale it should be compared to."""
    E = euler_alpha_tendency_free(grid, u, du_dt, model.alpha)
    D = tensor_div(grid, R) if R is not None else 0.0
    res = leray(grid, E - D)
    # unprojected sizes too: a pure-gradient tendency would otherwise give 0/0
    scale = max(np.abs(E).max(), np.abs(D).max() if R is not None else 0.0)
    return res, scale


def curl_to_transport_pressure(grid: Grid, u, p_curl, alpha: float) -> np.ndarray:
    """Pressure of the transport form from the pressure of the curl form."""
    u = _as_array(u)
    G = grad(grid, u)
    lap = np.array([laplacian(grid, c) for c in u])
    return (_as_array(p_curl) - 0.5 * (u**2).sum(0) + alpha**2 * (u * lap).sum(0)
            + 0.5 * alpha**2 * (G**2).sum(axis=(0, 1)))


def weak_pairing(u, phi, model: AlphaModel, grid: Grid | None = None, phi_t=None,
                 form: str = "transport", div_tol: float = 1e-8) -> float:
    """Spatial integrand of the weak formulation at one time slice.

    form="transport" integrates grad phi : (u (x) v - alpha^2 grad u^T grad u);
    form="divergence" uses the equivalent version with Delta u moved by parts.
    """
    if isinstance(u, SpectralField):
        grid = u.grid
    u, phi = _as_array(u), _as_array(phi)
    if np.abs(phi).max() > 0 and divergence_norm(grid, phi) > div_tol:
        raise ValueError("test field is not divergence free")
    a2 = model.alpha**2
    Gu = grad(grid, u)
    Gp = grad(grid, phi)  # Gp[k, l] = d_k phi^l
    val = np.zeros(grid.shape)
    if phi_t is not None:
        phi_t = _as_array(phi_t)
        Gpt = grad(grid, phi_t)
        val = val + (phi_t * u).sum(0) + a2 * (Gpt * Gu).sum(axis=(0, 1))
    if form == "transport":
        M = flux_tensor(grid, u, model.alpha, G=Gu)
        val = val + (Gp * M).sum(axis=(0, 1))
    elif form == "divergence":
        M = (np.einsum("k...,l...->kl...", u, u)
             - a2 * np.einsum("kj...,lj...->kl...", Gu, Gu)
             + a2 * np.einsum("ik...,il...->kl...", Gu, Gu))
        val = val + (Gp * M).sum(axis=(0, 1))
        HH = np.array([grad(grid, Gp[k]) for k in range(grid.dim)])  # HH[k, i, l] = d_i d_k phi^l
        val = val + a2 * np.einsum("k...,kil...,il...->...", u, HH, Gu)
    else:
        raise ValueError("form must be 'transport' or 'divergence'")
    return float(grid.integral(val))


# time integration

class Trajectory:
    """Velocity history: u(t) and d_t u(t) on a fixed grid."""

    grid: Grid

    def at(self, t: float) -> np.ndarray:
        raise NotImplementedError

    def dt_at(self, t: float) -> np.ndarray:
        raise NotImplementedError


class StationaryTrajectory(Trajectory):
    def __init__(self, grid: Grid, u: np.ndarray):
        self.grid = grid
        self.u = np.asarray(u, dtype=float)

    def at(self, t):
        return self.u

    def dt_at(self, t):
        return np.zeros_like(self.u)


class SampledTrajectory(Trajectory):
    """Snapshots with their tendencies; cubic Hermite in between."""

    def __init__(self, grid: Grid, times, states, rates):
        self.grid = grid
        self.times = np.asarray(times, dtype=float)
        self.states = np.asarray(states)
        self.rates = np.asarray(rates)

    def _locate(self, t):
        if t < self.times[0] - 1e-12 or t > self.times[-1] + 1e-12:
            raise ValueError(f"t={t} outside sampled window")
        j = int(np.clip(np.searchsorted(self.times, t) - 1, 0, len(self.times) - 2))
        h = self.times[j + 1] - self.times[j]
        return j, h, (t - self.times[j]) / h

    def at(self, t):
        j, h, s = self._locate(t)
        h00, h10 = 2 * s**3 - 3 * s**2 + 1, s**3 - 2 * s**2 + s
        h01, h11 = -2 * s**3 + 3 * s**2, s**3 - s**2
        return (h00 * self.states[j] + h10 * h * self.rates[j]
                + h01 * self.states[j + 1] + h11 * h * self.rates[j + 1])

    def dt_at(self, t):
        j, h, s = self._locate(t)
        d00, d10 = (6 * s**2 - 6 * s) / h, 3 * s**2 - 4 * s + 1
        d01, d11 = (-6 * s**2 + 6 * s) / h, 3 * s**2 - 2 * s
        return (d00 * self.states[j] + d10 * self.rates[j]
                + d01 * self.states[j + 1] + d11 * self.rates[j + 1])

    def __len__(self):
        return len(self.times)


class EulerAlphaRHS:
    """Right-hand side of the projected transport form for d_t u, on dealiased data."""

    def __init__(self, grid: Grid, model: AlphaModel, dealias: float = 2.0 / 3.0):
        self.grid = grid
        self.model = model
        self.mask = grid.dealias_mask(dealias)
        self.symbol = model.helmholtz_symbol(grid)
        self.inner = grid.dealias_mask(0.8 * dealias)

    def __call__(self, uh: np.ndarray) -> np.ndarray:
        g, a2 = self.grid, self.model.alpha**2
        u = np.array([g.ifft(c) for c in uh])
        v = np.array([g.ifft(self.symbol * c) for c in uh])
        G = np.array([[g.ifft(g.dhat(uh[j], k)) for j in range(g.dim)] for k in range(g.dim)])
        out = []
        for l in range(g.dim):
            acc = 0.0
            for k in range(g.dim):
                m = u[k] * v[l] - a2 * (G[k] * G[l]).sum(0)
                acc = acc + g.dhat(g.fft(m), k)
            out.append(-acc)
        vt = leray_hat(g, np.array(out)) * self.mask
        return vt / self.symbol

    def tail_fraction(self, uh: np.ndarray) -> float:
        e = (np.abs(uh) ** 2).sum(0) * self.symbol
        tot = e[self.mask].sum()
        if tot == 0:
            return 0.0
        return float(e[self.mask & ~self.inner].sum() / tot)


def evolve_smooth(u0, model: AlphaModel, dt: float, t_final: float, dealias: float = 2.0 / 3.0,
                  grid: Grid | None = None, save_every: int = 1, tail_tol: float = 1e-3,
                  callback: Callable | None = None) -> SampledTrajectory:
    """Classical RK4 for the Leray-projected transport form with dealiased products.

    The initial data are projected onto the dealiased, divergence-free subspace
    first.  Returns snapshots (and their tendencies) every ``save_every`` steps.
    """
    if isinstance(u0, SpectralField):
        grid = u0.grid
        u0 = u0.physical
    if grid is None:
        raise ValueError("grid required for raw arrays")
    rhs = EulerAlphaRHS(grid, model, dealias)
    uh = leray_hat(grid, np.array([grid.fft(c) for c in np.asarray(u0, dtype=float)])) * rhs.mask
    nsteps = int(round(t_final / dt))
    if nsteps < 1 or abs(nsteps * dt - t_final) > 1e-9 * max(1.0, t_final):
        raise ValueError("t_final must be a positive multiple of dt")
    times, states, rates = [], [], []
    k1 = rhs(uh)

    def record(t, uh, k):
        times.append(t)
        states.append(np.array([grid.ifft(c) for c in uh]))
        rates.append(np.array([grid.ifft(c) for c in k]))

    record(0.0, uh, k1)
    for n in range(1, nsteps + 1):
        k2 = rhs(uh + 0.5 * dt * k1)
        k3 = rhs(uh + 0.5 * dt * k2)
        k4 = rhs(uh + dt * k3)
        uh = uh + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
        if not np.all(np.isfinite(uh)):
            raise SpectralBlowup(f"non-finite state at step {n}")
        frac = rhs.tail_fraction(uh)
        if frac > tail_tol:
            raise SpectralBlowup(f"band-edge energy fraction {frac:.3e} at t={n * dt:.6g}")
        k1 = rhs(uh)
        if n % save_every == 0 or n == nsteps:
            record(n * dt, uh, k1)
        if callback is not None:
            callback(n * dt, uh)
    return SampledTrajectory(grid, times, states, rates)


def evolve_hamiltonian_series(u0, model: AlphaModel, dt: float, t_final: float, grid: Grid,
                              dealias: float = 2.0 / 3.0, every: int = 1) -> tuple:
    """(t, H) without storing fields; cheap companion to evolve_smooth."""
    rhs = EulerAlphaRHS(grid, model, dealias)
    uh = leray_hat(grid, np.array([grid.fft(c) for c in np.asarray(u0, dtype=float)])) * rhs.mask
    N = np.prod(grid.shape)
    w = np.full(uh.shape[1:], 2.0)
    w[..., 0] = 1.0
    w[..., -1] = 1.0
    sym = rhs.symbol

    def H(uh):
        return float((w * sym * (np.abs(uh) ** 2).sum(0)).sum()) * grid.volume / N**2

    nsteps = int(round(t_final / dt))
    ts, hs = [0.0], [H(uh)]
    for n in range(1, nsteps + 1):
        k1 = rhs(uh)
        k2 = rhs(uh + 0.5 * dt * k1)
        k3 = rhs(uh + 0.5 * dt * k2)
        k4 = rhs(uh + dt * k3)
        uh = uh + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
        if not np.all(np.isfinite(uh)):
            raise SpectralBlowup(f"non-finite state at step {n}")
        if n % every == 0 or n == nsteps:
            ts.append(n * dt)
            hs.append(H(uh))
    return np.array(ts), np.array(hs), np.array([grid.ifft(c) for c in uh])


# sampling helpers

def taylor_green(grid: Grid, amplitude: float = 1.0, shift: Sequence[float] | None = None) -> np.ndarray:
    """(sin x1 cos x2, -cos x1 sin x2) in 2-D; an eigenfield of the Laplacian."""
    if grid.dim != 2:
        raise ValueError("Taylor-Green helper is 2-D")
    x = grid.x.copy()
    if shift is not None:
        x = x - np.asarray(shift, dtype=float).reshape(2, 1, 1)
    return amplitude * np.array([np.sin(x[0]) * np.cos(x[1]), -np.cos(x[0]) * np.sin(x[1])])


def random_solenoidal(grid: Grid, kmax: int, rng: np.random.Generator, amplitude: float = 1.0,
                      spectrum_slope: float = 0.0) -> np.ndarray:
    """Random real, mean-zero, divergence-free field with modes |k_i| <= kmax."""
    shape = (grid.dim,) + grid.shape
    noise = rng.standard_normal(shape)
    nh = np.array([grid.fft(c) for c in noise])
    band = np.ones(grid.k2.shape, dtype=bool)
    for ki in grid.k:
        band = band & (np.abs(ki) <= kmax)
    band[(0,) * grid.dim] = False
    weight = np.where(band, (1.0 + grid.k2) ** (-spectrum_slope / 2.0), 0.0)
    uh = leray_hat(grid, nh * weight)
    u = np.array([grid.ifft(c) for c in uh])
    scale = np.sqrt((u**2).sum(0).mean())
    return amplitude * u / scale


def random_band_limited(grid: Grid, kmax: int, rng: np.random.Generator, rank: int = 1) -> np.ndarray:
    shape = (grid.dim,) * rank + grid.shape
    noise = rng.standard_normal(shape).reshape((-1,) + grid.shape)
    band = np.ones(grid.k2.shape, dtype=bool)
    for ki in grid.k:
        band = band & (np.abs(ki) <= kmax)
    out = np.array([grid.ifft(np.where(band, grid.fft(c), 0.0)) for c in noise])
    return out.reshape(shape)


def _harmonics(x: np.ndarray, ks: np.ndarray) -> np.ndarray:
    """exp(i k x) for the integer list ks, built by repeated multiplication."""
    kmax = int(np.abs(ks).max()) if ks.size else 0
    base = np.exp(1j * x)
    pos = np.empty((kmax + 1, x.size), dtype=complex)
    pos[0] = 1.0
    for m in range(1, kmax + 1):
        pos[m] = pos[m - 1] * base
    return np.where((ks < 0)[:, None], np.conj(pos[np.abs(ks)]), pos[np.abs(ks)])


def interpolate_at(grid: Grid, f: np.ndarray, points: np.ndarray, rel_cut: float = 1e-15) -> np.ndarray:
    """Fourier interpolation of f at arbitrary points (shape (dim, ...)).

    Coefficients are cut to the bounding box of modes above rel_cut * max and
    contracted axis by axis against tables of exp(i k x_d).
    """
    f = _as_array(f)
    lead = f.shape[: f.ndim - grid.dim]
    flat = f.reshape((-1,) + grid.shape)
    pts = np.asarray(points, dtype=float).reshape(grid.dim, -1)
    N = np.prod(grid.shape)
    fh = sfft.fftn(flat, axes=grid.axes) / N
    mag = np.abs(fh).max(axis=0)
    if not mag.max() > 0:
        return np.zeros(lead + np.asarray(points).shape[1:])
    keep = mag > rel_cut * mag.max()
    freqs = np.fft.fftfreq(grid.n, 1.0 / grid.n).astype(int)
    sel = []
    for d in range(grid.dim):
        other = tuple(a for a in range(grid.dim) if a != d)
        used = keep.any(axis=other) if other else keep
        sel.append(np.nonzero(used)[0])
    C = fh[np.ix_(range(fh.shape[0]), *sel)]
    tabs = [_harmonics(pts[d], freqs[sel[d]]) for d in range(grid.dim)]
    out = np.empty((flat.shape[0], pts.shape[1]))
    chunk = 65536
    for s in range(0, pts.shape[1], chunk):
        T = [t[:, s:s + chunk] for t in tabs]
        P = T[0].shape[1]
        for c in range(flat.shape[0]):
            acc = C[c].reshape(-1, len(sel[-1])) @ T[-1]
            for d in range(grid.dim - 2, -1, -1):
                acc = acc.reshape(-1, len(sel[d]), P) * T[d][None]
                acc = acc.sum(axis=1)
            out[c, s:s + chunk] = acc.reshape(P).real
    return out.reshape(lead + np.asarray(points).shape[1:])
