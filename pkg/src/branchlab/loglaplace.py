"""Deterministic solver for the limiting log-Laplace integral equation.

The unknown u_t(x) satisfies u_t = H_t u_0 - lam * int_0^t H_{t-s}(u_s^2) ds,
where H_t is the heat semigroup with variance lam*psi per unit time and u_0
is the test function averaged over the exponential age marginal.  Time
marching uses trapezoidal Volterra quadrature with the implicit endpoint
resolved by fixed-point sweeps; the history term is folded forward through
the semigroup identity H_{t+dt} = H_dt H_t, so each step costs two Gaussian
convolutions regardless of how long the history is.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.ndimage import gaussian_filter1d
from scipy.special import roots_laguerre


class GridTooCoarse(ValueError):
    pass


class StepTooLarge(ValueError):
    pass


_LAGUERRE_NODES = 80


@dataclass(frozen=True)
class GridSpec:
    x_lo: float
    x_hi: float
    nx: int
    dt: float
    T: float

    def __post_init__(self):
        if not self.x_lo < self.x_hi:
            raise ValueError("need x_lo < x_hi")
        if self.nx < 16:
            raise ValueError("need nx >= 16")
        if self.dt <= 0 or self.T <= 0:
            raise ValueError("dt and T must be positive")
        steps = round(self.T / self.dt)
        if steps < 1 or abs(steps * self.dt - self.T) > 1e-12 * max(1.0, self.T):
            raise ValueError(f"dt={self.dt} does not divide T={self.T}")

    @property
    def xs(self) -> np.ndarray:
        return np.linspace(self.x_lo, self.x_hi, self.nx)

    @property
    def dx(self) -> float:
        return (self.x_hi - self.x_lo) / (self.nx - 1)

    @property
    def n_steps(self) -> int:
        return round(self.T / self.dt)

    def refined(self) -> "GridSpec":
        """Halved time step, doubled spatial resolution (for convergence checks)."""
        return GridSpec(self.x_lo, self.x_hi, 2 * self.nx, self.dt / 2.0, self.T)


def default_grid(lam: float, psi: float, T: float, nx: int = 1024, dt: float = 1e-3) -> GridSpec:
    """Domain wide enough that the Gaussian tail at the boundary is ~1e-22."""
    half = 10.0 * math.sqrt(max(lam * psi * T, 1e-12))
    return GridSpec(-half, half, nx, dt, T)


@dataclass(frozen=True)
class GridSolution:
    times: np.ndarray
    values: np.ndarray  # shape (n_steps + 1, nx)
    lam: float
    psi: float
    grid: GridSpec

    def final(self) -> np.ndarray:
        return self.values[-1]


def age_average(f: Callable, lam: float, grid: GridSpec) -> np.ndarray:
    """Average f(age, x) over the exponential(lam) age marginal, per grid node.

    Gauss-Laguerre quadrature: int_0^inf lam e^{-lam a} f(a, x) da with nodes
    y/lam; exact for smooth f to high order, vectorized over the grid."""
    nodes, weights = roots_laguerre(_LAGUERRE_NODES)
    xs = grid.xs
    vals = np.asarray(f(nodes[:, None] / lam, xs[None, :]), dtype=float)
    if vals.shape != (nodes.size, xs.size):
        vals = np.broadcast_to(vals, (nodes.size, xs.size))
    return weights @ vals


def semigroup_apply(g: np.ndarray, t: float, lam: float, psi: float, grid: GridSpec) -> np.ndarray:
    """Heat-semigroup action on a spatial vector: Gaussian convolution with
    variance lam*psi*t, constant extrapolation at the edges."""
    g = np.asarray(g, dtype=float)
    if g.shape != (grid.nx,):
        raise ValueError(f"expected vector of length {grid.nx}")
    if t < 0:
        raise ValueError("t must be nonnegative")
    if t == 0 or lam * psi == 0:
        return g.copy()
    std = math.sqrt(lam * psi * t)
    if std < grid.dx:
        raise GridTooCoarse(
            f"kernel std {std:.3g} below grid spacing {grid.dx:.3g}; refine nx or increase t"
        )
    return gaussian_filter1d(g, std / grid.dx, mode="nearest", truncate=10.0)


def solve_u(
    f: Callable,
    lam: float,
    psi: float,
    grid: GridSpec,
    max_sweeps: int = 20,
    sweep_tol: float = 1e-14,
) -> GridSolution:
    """March the nonlinear Volterra equation to T on the given grid.

    f maps (age, position) to nonnegative reals (broadcastable).  lam = 0 is
    allowed for solver testing and reduces to pure heat flow.  Raises
    StepTooLarge when lam * dt * max(u_0) >= 1 (fixed point would not
    contract; the maximum principle keeps ||u_t|| <= ||u_0||).
    """
    u0 = age_average(f, lam if lam > 0 else 1.0, grid)
    if np.any(u0 < 0):
        raise ValueError("test function must be nonnegative")
    bound = float(u0.max())
    if lam > 0 and lam * grid.dt * bound >= 1.0:
        raise StepTooLarge(f"lam*dt*||u0|| = {lam * grid.dt * bound:.3g} >= 1")

    n_steps = grid.n_steps
    dt = grid.dt
    times = np.linspace(0.0, grid.T, n_steps + 1)
    values = np.empty((n_steps + 1, grid.nx))
    values[0] = u0

    if lam == 0:
        g = u0.copy()
        for k in range(1, n_steps + 1):
            g = semigroup_apply(g, dt, 1.0, psi, grid)
            values[k] = g
        return GridSolution(times, values, lam, psi, grid)

    heat = lambda v: semigroup_apply(v, dt, lam, psi, grid)
    g = u0.copy()          # H_{t_k} u0, advanced one step per iteration
    hist = np.zeros(grid.nx)  # 0.5*H_{t_k}(u0^2) + sum_{j=1}^{k-1} H_{t_k - t_j}(u_j^2)
    u_prev = u0
    for k in range(1, n_steps + 1):
        g = heat(g)
        hist = heat(hist + (0.5 * u0**2 if k == 1 else u_prev**2))
        base = g - lam * dt * hist
        u = u_prev.copy()
        for _ in range(max_sweeps):
            u_new = np.clip(base - 0.5 * lam * dt * u * u, 0.0, None)
            delta = float(np.max(np.abs(u_new - u)))
            u = u_new
            if delta <= sweep_tol * max(bound, 1.0):
                break
        values[k] = u
        u_prev = u
    return GridSolution(times, values, lam, psi, grid)


def constant_oracle(c: float, lam: float, t: float) -> float:
    """Closed form for constant test functions: u' = -lam u^2, u_0 = c."""
    return c / (1.0 + lam * c * t)


def integrate_against(values_row: np.ndarray, grid: GridSpec, nu) -> float:
    """<u, nu> for the product intensity (age marginal integrates out)."""
    if nu.spatial == "point":
        return float(nu.total_mass * np.interp(0.0, grid.xs, values_row))
    pdf = nu.spatial_pdf(grid.xs)
    return float(nu.total_mass * np.trapezoid(values_row * pdf, grid.xs))


def solution_csv(sol: GridSolution, stride: int = 1) -> str:
    """CSV of (t, x, u) rows, striding time steps to keep files reasonable."""
    lines = ["t,x,u"]
    for k in range(0, sol.times.size, stride):
        t = float(sol.times[k])
        for x, u in zip(sol.grid.xs, sol.values[k]):
            lines.append(f"{t!r},{float(x)!r},{float(u)!r}")
    return "\n".join(lines) + "\n"
