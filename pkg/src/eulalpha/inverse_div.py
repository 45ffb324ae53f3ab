"""Inverse divergence operators.

``fourier_inverse_div`` is the Fourier multiplier R with Div(Rv) = v - mean(v)
and traceless symmetric output in any dimension:

    R v = c1 D^-2 d_i d_j d_k v^k + c2 D^-1 d_k v^k delta_ij + D^-1 (d_i v^j + d_j v^i),
    c2 = -1/(n-1),  c1 = -(n-2)/(n-1)   (both -1/2 in 3-D, c1 = 0 in 2-D).

The differentiate-by-parts step works on G (rho o Phi) with rho = Laplacian(theta).
Fast functions are passed as objects exposing ``partial(k, alpha, points)``,
the derivative d^alpha of Laplacian^k of a base periodic function; the step
and the full iteration only ever evaluate such derivatives at the mapped points.
"""

from __future__ import annotations

from dataclasses import dataclass
import numpy as np

from .spectral import Grid, StressField, grad, interpolate_at, sym_index, tensor_div
from .transport import MapSample


def _coefficients(dim: int) -> tuple:
    return -(dim - 2) / (dim - 1), -1.0 / (dim - 1)


def fourier_inverse_div_hat(grid: Grid, vh: np.ndarray) -> np.ndarray:
    """Symbol applied to spectral data vh (dim, ...); returns the full tensor (dim, dim, ...)."""
    c1, c2 = _coefficients(grid.dim)
    k = [np.where(grid.nyquist, 0.0, ki) for ki in grid.k]
    ik2 = grid.inv_k2
    kv = sum(k[i] * vh[i] for i in range(grid.dim))
    out = np.empty((grid.dim, grid.dim) + vh.shape[1:], dtype=complex)
    for i in range(grid.dim):
        for j in range(grid.dim):
            a = c1 * (-1j) * k[i] * k[j] * kv * ik2**2
            a = a + (-1j) * (k[i] * vh[j] + k[j] * vh[i]) * ik2
            if i == j:
                a = a + c2 * (-1j) * kv * ik2
            out[i, j] = a
    return out


def fourier_inverse_div(grid: Grid, v: np.ndarray) -> StressField:
    """Symmetric traceless R with Div R = v - mean(v) (Nyquist modes of v are discarded)."""
    v = np.asarray(v, dtype=float)
    if v.shape != (grid.dim,) + grid.shape:
        raise ValueError("fourier_inverse_div needs a vector field on the grid")
    vh = np.array([grid.fft(c) for c in v])
    Rh = fourier_inverse_div_hat(grid, vh)
    comps = [grid.ifft(Rh[i, j]) for i, j in sym_index(grid.dim)]
    return StressField(grid, np.array(comps))


# fast periodic functions

class SpectralFast:
    """A grid function treated as fast: derivatives taken spectrally, then interpolated."""

    def __init__(self, grid: Grid, f: np.ndarray, rel_cut: float = 1e-15):
        self.grid = grid
        self.fh = grid.fft(np.asarray(f, dtype=float))
        self.rel_cut = rel_cut

    def field(self, k: int = 0, alpha: tuple = ()) -> np.ndarray:
        h = self.fh * (-self.grid.k2) ** k
        for a in alpha:
            h = self.grid.dhat(h, a)
        return self.grid.ifft(h)

    def partial(self, k: int, alpha: tuple, points) -> np.ndarray:
        f = self.field(k, alpha)
        if points is None:
            return f
        return interpolate_at(self.grid, f, points, self.rel_cut)


class PipeFast:
    """Potential theta of a pipe family: Laplacian^k theta = lam^(2k) G_k(lam y), analytic derivatives."""

    def __init__(self, family):
        self.family = family

    def partial(self, k: int, alpha: tuple, points) -> np.ndarray:
        if k > self.family.d + 1:
            raise ValueError("profile chain too short")
        return self.family.lam ** (2 * k) * self.family.scalar(k, points, tuple(alpha))


class ScaledFast:
    """c * d^beta Laplacian^j0 of a base fast function, again a fast function."""

    def __init__(self, base, scale: float = 1.0, k0: int = 0, beta: tuple = ()):
        self.base, self.scale, self.k0, self.beta = base, scale, k0, tuple(beta)

    def partial(self, k: int, alpha: tuple, points) -> np.ndarray:
        return self.scale * self.base.partial(self.k0 + k, self.beta + tuple(alpha), points)


def _points(flow: MapSample) -> np.ndarray:
    return flow.phi


@dataclass
class DivInverseOutput:
    stress: StressField
    pressure: np.ndarray
    error: np.ndarray | None
    mean: np.ndarray
    S: np.ndarray  # symmetric tensor before trace removal
    error_terms: list | None = None


def _slow_d(grid: Grid, f: np.ndarray) -> np.ndarray:
    return grad(grid, f)


def iterative_div_step(grid: Grid, G: np.ndarray, theta, flow: MapSample, *,
                       check: bool = True, dev_max: float = 0.5) -> DivInverseOutput:
    """One differentiation by parts: G (Lap theta) o Phi = d_m R^{im} + d_i P + E^i.

    S^{im} = (G^i A^m_l + G^m A^i_l - A^i_k A^m_k G^p d_p Phi^l)(d_l theta) o Phi,
    P = tr S / n, R = S - P Id,
    E^i = (d_m(G^p A^i_k A^m_k - G^m A^i_k A^p_k) d_p Phi^l - d_m G^i A^m_l)(d_l theta) o Phi.

    ``theta`` is a fast function object.  E is returned as coefficient fields
    e[i, l] multiplying (d_l theta) o Phi.
    """
    n = grid.dim
    if check and flow.deviation() > dev_max:
        raise ValueError("flow-gradient hypothesis |grad Phi - Id| <= 1/2 violated")
    J = flow.jacobian  # J[l, p] = d_p Phi^l
    A = flow.A  # A[m, l]
    pts = _points(flow)
    T = np.array([theta.partial(0, (l,), pts) for l in range(n)])  # (d_l theta) o Phi
    AA = np.einsum("ik...,mk...->im...", A, A)
    GJ = np.einsum("p...,lp...->l...", G, J)  # G^p d_p Phi^l
    coef = (np.einsum("i...,ml...->iml...", G, A) + np.einsum("m...,il...->iml...", G, A)
            - np.einsum("im...,l...->iml...", AA, GJ))
    S = np.einsum("iml...,l...->im...", coef, T)
    S = 0.5 * (S + np.swapaxes(S, 0, 1))
    P = np.trace(S) / n
    R = S - P * np.eye(n).reshape((n, n) + (1,) * n)
    # error coefficients
    M1 = np.einsum("p...,im...->ipm...", G, AA)  # G^p A^i_k A^m_k
    M2 = np.einsum("m...,ip...->ipm...", G, AA)  # G^m A^i_k A^p_k
    dM = np.zeros((n, n) + grid.shape)  # d_m (M1 - M2)^{ipm}
    for m in range(n):
        dm = np.array([[_slow_d(grid, M1[i, p, m] - M2[i, p, m])[m] for p in range(n)] for i in range(n)])
        dM += dm
    dG = grad(grid, G)  # dG[m, i] = d_m G^i
    e = np.einsum("ip...,lp...->il...", dM, J) - np.einsum("mi...,ml...->il...", dG, A)
    E = np.einsum("il...,l...->i...", e, T)
    return DivInverseOutput(StressField.from_full(grid, R), P, E, np.zeros(n), S,
                            error_terms=[(e[:, l], l) for l in range(n)])


def step_residual(grid: Grid, G: np.ndarray, theta, flow: MapSample, out: DivInverseOutput) -> tuple:
    """(max |G rho o Phi - Div S - E|, max |G rho o Phi|) for a computed step."""
    pts = _points(flow)
    rho = theta.partial(1, (), pts)
    lhs = G * rho
    rhs = tensor_div(grid, out.S) + out.error
    return float(np.abs(lhs - rhs).max()), float(np.abs(lhs).max())


class ExchangeConditionError(ValueError):
    """Raised when (lam/zeta)^d lam^4 <= 1/zeta fails."""


@dataclass
class FullInverseOutput:
    stress: StressField
    pressure: np.ndarray
    mean: np.ndarray
    S_total: np.ndarray
    closing: StressField
    steps: int
    n_terms: int
    l1_ratio: float | None = None


def exchange_condition(lam: float, zeta: float, d: int) -> bool:
    return (lam / zeta) ** d * lam**4 <= 1.0 / zeta


def full_inverse_div(grid: Grid, G: np.ndarray, theta, flow: MapSample, d: int, zeta: float,
                     lam_G: float = 1.0, Lambda: float | None = None, mu: float | None = None,
                     C_G: float | None = None, C_star: float | None = None,
                     enforce: bool = True) -> FullInverseOutput:
    """Iterate the step d times, close with R on the mean-free remainder.

    rho = zeta^(-2d) Laplacian^d theta.  At level j the pending terms are
    g (zeta^(-2j) d^alpha rho_(j)) o Phi with |alpha| = j and
    rho_(j) = (zeta^-2 Laplacian)^(d-j) theta.
    """
    if enforce and not exchange_condition(lam_G, zeta, d):
        raise ExchangeConditionError(
            f"(lam/zeta)^d lam^4 = {(lam_G / zeta) ** d * lam_G**4:.3g} exceeds 1/zeta = {1 / zeta:.3g}")
    n = grid.dim
    pts = _points(flow)
    terms = [(np.asarray(G, dtype=float), ())]
    S_total = np.zeros((n, n) + grid.shape)
    for j in range(d):
        nxt = []
        for g, alpha in terms:
            # fast function at this level: zeta^(-2(j+1)) d^alpha rho_(j+1)
            th = ScaledFast(theta, zeta ** (-2 * d), d - j - 1, alpha)
            out = iterative_div_step(grid, g, th, flow, check=(j == 0))
            S_total += out.S
            for coeff, l in out.error_terms:
                nxt.append((coeff, alpha + (l,)))
        terms = nxt
    E = np.zeros((n,) + grid.shape)
    for g, alpha in terms:
        E += g * (zeta ** (-2 * d) * theta.partial(0, alpha, pts))
    mean = grid.mean(E)
    closing = fourier_inverse_div(grid, E - mean.reshape((n,) + (1,) * n))
    S_sym = 0.5 * (S_total + np.swapaxes(S_total, 0, 1))
    P = np.trace(S_sym) / n
    R_local = StressField.from_full(grid, S_sym - P * np.eye(n).reshape((n, n) + (1,) * n))
    R = R_local + closing
    ratio = None
    if C_G is not None and C_star is not None:
        l1 = float(grid.integral(R.pointwise_norm()) + grid.integral(np.abs(P)))
        ratio = l1 / (C_G * lam_G**4 * C_star / zeta)
    return FullInverseOutput(R, P, mean, S_sym, closing, d, len(terms), ratio)


def reassembly_residual(grid: Grid, G: np.ndarray, theta, flow: MapSample, d: int, zeta: float,
                        out: FullInverseOutput) -> tuple:
    """(max |Div R + grad P + mean - G rho o Phi|, max |G rho o Phi|)."""
    n = grid.dim
    rho = zeta ** (-2 * d) * theta.partial(d, (), _points(flow))
    lhs = np.asarray(G) * rho
    rhs = tensor_div(grid, out.stress) + grad(grid, out.pressure) + out.mean.reshape((n,) + (1,) * n)
    return float(np.abs(lhs - rhs).max()), float(np.abs(lhs).max())


__all__ = [
    "fourier_inverse_div", "fourier_inverse_div_hat", "SpectralFast", "PipeFast", "ScaledFast",
    "iterative_div_step", "step_residual", "full_inverse_div", "reassembly_residual",
    "DivInverseOutput", "FullInverseOutput", "ExchangeConditionError", "exchange_condition",
]
