"""Deterministic solution paths for the killed (time-fractional) Cauchy problem.

``u' = A u + g`` is stepped by implicit Euler or evaluated in Duhamel form.
``d^beta v = A v`` (Caputo) is stepped by the L1 scheme or obtained by
subordination, ``v(t) = int_0^inf h(w, t) u(w) dw``, written in the similarity
variable ``s = w t^-beta`` as ``int_0^inf M_beta(s) u(t^beta s) ds``.

All inputs are treated as mild-solution data; nothing checks membership of the
initial function in the generator's domain.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Protocol, Sequence

import numpy as np
from scipy.linalg import eig, eigh, expm, lu_factor, lu_solve

from .fracops import GeneratorMatrix, Grid1D
from .specfun import (
    DomainError,
    check_frac_order,
    inverse_subordinator_cutoff,
    mittag_leffler,
    wright_m,
)

__all__ = [
    "TimeGrid",
    "SolutionField",
    "ForcingField",
    "SolverError",
    "implicit_euler_solve",
    "duhamel_solution",
    "l1_weights",
    "l1_caputo_solve",
    "Semigroup",
    "ExponentialSemigroup",
    "ImplicitEulerSemigroup",
    "ScalarSemigroup",
    "Orbit",
    "subordination_solve",
    "subordination_inhomogeneous",
    "eigen_heat_solution",
]

GL_NODES = 16
_GL_X, _GL_W = np.polynomial.legendre.leggauss(GL_NODES)
MAX_PANEL_BISECTIONS = 40
MAX_ACTIVE_PANELS = 1 << 14
EIGEN_TAIL_TOL = 1e-10


class SolverError(RuntimeError):
    """Numerical failure inside a solver (singular system, no convergence)."""


@dataclass(frozen=True)
class TimeGrid:
    t_end: float
    steps: int

    def __post_init__(self) -> None:
        if not self.t_end > 0.0:
            raise DomainError(f"t_end must be positive, got {self.t_end}")
        if int(self.steps) != self.steps or self.steps < 1:
            raise DomainError(f"steps must be a positive integer, got {self.steps}")

    @classmethod
    def from_dt(cls, t_end: float, dt: float) -> TimeGrid:
        if not dt > 0.0:
            raise DomainError(f"dt must be positive, got {dt}")
        steps = max(1, int(round(t_end / dt)))
        return cls(t_end, steps)

    @property
    def dt(self) -> float:
        return self.t_end / self.steps

    @property
    def times(self) -> np.ndarray:
        return self.dt * np.arange(self.steps + 1)


@dataclass(frozen=True)
class SolutionField:
    """Interior node values at one time; zero at and beyond the boundary."""

    grid: Grid1D
    values: np.ndarray
    time: float = 0.0

    def __post_init__(self) -> None:
        vals = np.array(self.values, dtype=float, copy=True)
        if vals.shape != (self.grid.n,):
            raise DomainError(f"values shape {vals.shape} does not match grid size {self.grid.n}")
        if not np.all(np.isfinite(vals)):
            raise SolverError(f"non-finite values in solution at t={self.time}")
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)

    @classmethod
    def from_function(cls, grid: Grid1D, f, time: float = 0.0) -> SolutionField:
        return cls(grid, grid.sample(f), time)

    @property
    def x(self) -> np.ndarray:
        return self.grid.nodes

    def max_norm(self) -> float:
        return float(np.max(np.abs(self.values)))

    def max_error(self, exact: Callable[[np.ndarray, float], np.ndarray]) -> float:
        return float(np.max(np.abs(self.values - exact(self.x, self.time))))


@dataclass(frozen=True)
class ForcingField:
    """Source term ``g(x, t)`` evaluated on interior nodes."""

    func: Callable[[np.ndarray, float], np.ndarray]

    def sample(self, grid: Grid1D, t: float) -> np.ndarray:
        vals = np.broadcast_to(np.asarray(self.func(grid.nodes, t), dtype=float), (grid.n,))
        if not np.all(np.isfinite(vals)):
            raise SolverError(f"forcing is not finite at t={t}")
        return vals


def _check_grid(gen: GeneratorMatrix, field: SolutionField) -> None:
    if field.grid != gen.grid:
        raise DomainError("initial data and generator live on different grids")


def _factor_shifted(gen: GeneratorMatrix, mu: float):
    """LU of ``I - mu A``; the M-matrix structure makes it nonsingular."""
    system = np.eye(gen.n) - mu * np.asarray(gen.matrix)
    lu, piv = lu_factor(system, check_finite=True)
    if np.any(np.abs(np.diag(lu)) < 1e-14 * np.max(np.abs(system))):
        raise SolverError("implicit step matrix is singular")
    return lu, piv


def implicit_euler_solve(
    gen: GeneratorMatrix,
    f0: SolutionField,
    forcing: ForcingField | None,
    tg: TimeGrid,
) -> list[SolutionField]:
    """Backward Euler snapshots ``(I - dt A) u^{k+1} = u^k + dt g(t_{k+1})``."""
    _check_grid(gen, f0)
    dt = tg.dt
    factor = _factor_shifted(gen, dt)
    u = f0.values.copy()
    out = [SolutionField(gen.grid, u, 0.0)]
    for k in range(1, tg.steps + 1):
        t = k * dt
        rhs = u if forcing is None else u + dt * forcing.sample(gen.grid, t)
        u = lu_solve(factor, rhs)
        out.append(SolutionField(gen.grid, u, t))
    return out


def duhamel_solution(
    gen: GeneratorMatrix,
    f0: SolutionField,
    forcing: ForcingField | None,
    tg: TimeGrid,
    propagator: str = "expm",
) -> SolutionField:
    """Mild solution ``P_t f0 + int_0^t P_s g(t - s) ds`` with trapezoidal quadrature in ``s``.

    ``P_dt`` is ``expm(dt A)`` or, with ``propagator="implicit_euler"``, the
    resolvent ``(I - dt A)^{-1}``.
    """
    _check_grid(gen, f0)
    dt = tg.dt
    if propagator == "expm":
        step_matrix = expm(dt * np.asarray(gen.matrix))

        def step(v):
            return step_matrix @ v

    elif propagator == "implicit_euler":
        factor = _factor_shifted(gen, dt)

        def step(v):
            return lu_solve(factor, v)

    else:
        raise DomainError(f"unknown propagator {propagator!r}")

    K, t = tg.steps, tg.t_end
    # Horner form of S^K f0 + sum_k w_k S^k g(t - k dt)
    v = f0.values.copy()
    if forcing is not None:
        v = v + 0.5 * dt * forcing.sample(gen.grid, 0.0)
    for k in range(K - 1, -1, -1):
        v = step(v)
        if forcing is not None:
            weight = 0.5 * dt if k == 0 else dt
            v = v + weight * forcing.sample(gen.grid, t - k * dt)
    return SolutionField(gen.grid, v, t)


def l1_weights(beta: float, count: int) -> np.ndarray:
    """``a_j = (j+1)^(1-beta) - j^(1-beta)``; the Caputo weights are ``a_j dt^-beta / Gamma(2-beta)``."""
    j = np.arange(count, dtype=float)
    a = (j + 1.0) ** (1.0 - beta) - j ** (1.0 - beta)
    a[:1] = 1.0  # 0**0 = 1 would zero a_0 at beta = 1
    return a


def l1_caputo_solve(
    beta: float,
    gen: GeneratorMatrix,
    f0: SolutionField,
    tg: TimeGrid,
    forcing: ForcingField | None = None,
) -> list[SolutionField]:
    """L1 scheme for ``d^beta u = A u + g`` (Caputo), fully implicit in ``A`` and ``g``.

    Step ``k+1`` solves ``(I - mu A) u^{k+1} = u^k - sum_{j>=1} a_j d^{k+1-j} + mu g``
    with ``mu = dt^beta Gamma(2-beta)`` and increments ``d^m = u^m - u^{m-1}``.
    At ``beta = 1`` all ``a_j`` with ``j >= 1`` vanish and the scheme is implicit Euler.
    """
    beta = check_frac_order(beta)
    _check_grid(gen, f0)
    dt, K = tg.dt, tg.steps
    mu = dt**beta * math.gamma(2.0 - beta)
    factor = _factor_shifted(gen, mu)
    a = l1_weights(beta, K + 1)
    incr = np.zeros((K, gen.n))
    u = f0.values.copy()
    out = [SolutionField(gen.grid, u, 0.0)]
    for k in range(K):
        rhs = u
        if beta < 1.0 and k > 0:
            # sum_{j=1}^{k} a_j d^{k+1-j}; incr[m-1] holds d^m
            rhs = u - a[1 : k + 1] @ incr[k - 1 :: -1][:k]
        if forcing is not None:
            rhs = rhs + mu * forcing.sample(gen.grid, (k + 1) * dt)
        u_next = lu_solve(factor, rhs)
        incr[k] = u_next - u
        u = u_next
        out.append(SolutionField(gen.grid, u, (k + 1) * dt))
    return out


# ---------------------------------------------------------------------------
# Semigroups: (ws, data) -> array of shape (len(ws),) + data.shape


class Semigroup(Protocol):
    grid: Grid1D

    def __call__(self, ws: np.ndarray, data: np.ndarray) -> np.ndarray: ...


class ScalarSemigroup:
    """``P_w = exp(-rate w)`` acting on any data."""

    def __init__(self, rate: float, grid: Grid1D | None = None):
        self.rate = float(rate)
        self.grid = grid if grid is not None else Grid1D(0.0, 1.0, 1)

    def __call__(self, ws, data):
        ws = np.asarray(ws, dtype=float)
        data = np.asarray(data, dtype=float)
        return np.exp(-self.rate * ws)[(...,) + (None,) * data.ndim] * data


class ExponentialSemigroup:
    """``P_w = expm(w A)`` through an eigendecomposition when it is well conditioned.

    Symmetric generators use ``eigh``. Others use ``eig`` if the spectrum is real
    and the eigenvector basis has condition number below ``EIG_COND_LIMIT``;
    otherwise each ``w`` costs one ``expm``.
    """

    EIG_COND_LIMIT = 1e6

    def __init__(self, gen: GeneratorMatrix):
        self.gen = gen
        self.grid = gen.grid
        mat = np.asarray(gen.matrix)
        self._evals = None
        if np.allclose(mat, mat.T, rtol=0.0, atol=1e-13 * np.max(np.abs(mat))):
            self._evals, self._evecs = eigh(0.5 * (mat + mat.T))
            self._inv = self._evecs.T
            return
        evals, evecs = eig(mat)
        if np.all(evals.imag == 0.0) and np.linalg.cond(evecs) < self.EIG_COND_LIMIT:
            self._evals, self._evecs = evals.real, evecs.real
            self._inv = np.linalg.inv(self._evecs)

    def __call__(self, ws, data):
        ws = np.atleast_1d(np.asarray(ws, dtype=float))
        data = np.asarray(data, dtype=float)
        if self._evals is not None:
            coef = self._inv @ data
            scaled = np.exp(np.outer(ws, self._evals))
            return scaled * coef @ self._evecs.T
        mat = np.asarray(self.gen.matrix)
        return np.stack([expm(w * mat) @ data for w in ws])


class ImplicitEulerSemigroup:
    """Backward Euler orbit with step ``dt``, linearly interpolated between steps.

    Orbits are cached per data vector. Marching stops once the orbit falls below
    ``floor`` times its initial size; later times are returned as zero.
    """

    def __init__(self, gen: GeneratorMatrix, dt: float, floor: float = 1e-14):
        if not dt > 0.0:
            raise DomainError("dt must be positive")
        self.gen = gen
        self.grid = gen.grid
        self.dt = float(dt)
        self.floor = floor
        self._factor = _factor_shifted(gen, self.dt)
        self._cache: dict[bytes, list[np.ndarray]] = {}

    def _orbit(self, data: np.ndarray, steps: int) -> list[np.ndarray]:
        key = data.tobytes()
        orbit = self._cache.setdefault(key, [data.copy()])
        scale = max(float(np.max(np.abs(data))), 1e-300)
        while len(orbit) <= steps:
            last = orbit[-1]
            if float(np.max(np.abs(last))) <= self.floor * scale:
                break
            orbit.append(lu_solve(self._factor, last))
        return orbit

    def __call__(self, ws, data):
        ws = np.atleast_1d(np.asarray(ws, dtype=float))
        data = np.asarray(data, dtype=float)
        pos = ws / self.dt
        idx = np.floor(pos).astype(int)
        frac = pos - idx
        orbit = self._orbit(data, int(idx.max()) + 1 if ws.size else 0)
        arr = np.asarray(orbit)
        last = arr.shape[0] - 1
        zero = np.zeros_like(data)
        lo = np.where((idx <= last)[:, None], arr[np.minimum(idx, last)], zero)
        hi = np.where((idx + 1 <= last)[:, None], arr[np.minimum(idx + 1, last)], zero)
        return (1.0 - frac)[:, None] * lo + frac[:, None] * hi


@dataclass(frozen=True)
class Orbit:
    """A fixed-data orbit ``w -> u(w)``: the object subordination integrates."""

    evaluate: Callable[[np.ndarray], np.ndarray]
    grid: Grid1D

    @classmethod
    def from_semigroup(cls, semigroup: Semigroup, data) -> Orbit:
        data = semigroup.grid.sample(data)
        return cls(lambda ws: semigroup(ws, data), semigroup.grid)

    @classmethod
    def from_callable(cls, func: Callable[[float], object], grid: Grid1D) -> Orbit:
        """Wrap ``w -> SolutionField`` or ``w -> array`` evaluated one time at a time."""

        def evaluate(ws):
            rows = []
            for w in np.atleast_1d(ws):
                val = func(float(w))
                rows.append(val.values if isinstance(val, SolutionField) else np.asarray(val, float))
            return np.asarray(rows)

        return cls(evaluate, grid)

    def __call__(self, ws) -> np.ndarray:
        return np.asarray(self.evaluate(np.atleast_1d(np.asarray(ws, dtype=float))), dtype=float)


def _as_orbit(obj, grid: Grid1D | None) -> Orbit:
    if isinstance(obj, Orbit):
        return obj
    if grid is None:
        raise DomainError("a grid is needed to wrap a plain callable as an orbit")
    return Orbit.from_callable(obj, grid)


def _panel_nodes(edges: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    a, b = edges[:-1], edges[1:]
    half = 0.5 * (b - a)
    nodes = (half[:, None] * _GL_X + (0.5 * (a + b))[:, None]).ravel()
    weights = (half[:, None] * _GL_W).ravel()
    return nodes, weights


def _panel_integrals(integrand, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """16-point Gauss-Legendre integral over each panel ``[a_p, b_p]``."""
    half = 0.5 * (b - a)
    nodes = (half[:, None] * _GL_X + (0.5 * (a + b))[:, None]).ravel()
    vals = np.asarray(integrand(nodes))
    vals = vals.reshape((a.size, GL_NODES) + vals.shape[1:])
    return np.einsum("pk,pk...->p...", half[:, None] * _GL_W, vals)


def _adaptive_panels(
    integrand: Callable[[np.ndarray], np.ndarray],
    upper: float,
    tol: float,
    scale: float,
    start_panels: int = 4,
) -> np.ndarray:
    """Adaptive composite Gauss-Legendre on ``[0, upper]``.

    Each panel's error is estimated by comparing it with its two halves.
    Panels within their share ``tol * scale * width / upper`` are frozen; the
    rest are bisected until the summed estimate is below ``tol * scale``.
    Endpoint singularities thus only refine locally.
    """
    budget = tol * scale
    edges = np.linspace(0.0, upper, start_panels + 1)
    a, b = edges[:-1], edges[1:]
    coarse = _panel_integrals(integrand, a, b)
    total = np.zeros(coarse.shape[1:])
    frozen_err = 0.0
    for _ in range(MAX_PANEL_BISECTIONS):
        mid = 0.5 * (a + b)
        left = _panel_integrals(integrand, a, mid)
        right = _panel_integrals(integrand, mid, b)
        fine = left + right
        err = np.abs(fine - coarse).reshape(a.size, -1).max(axis=1)
        ok = err <= budget * (b - a) / upper
        total = total + fine[ok].sum(axis=0)
        frozen_err += float(err[ok].sum())
        bad = ~ok
        if frozen_err + float(err[bad].sum()) <= budget:
            return total + fine[bad].sum(axis=0)
        if 2 * int(bad.sum()) > MAX_ACTIVE_PANELS:
            break
        a, b = np.concatenate([a[bad], mid[bad]]), np.concatenate([mid[bad], b[bad]])
        coarse = np.concatenate([left[bad], right[bad]])
    raise SolverError(f"quadrature did not reach tolerance {tol}; the integrand may be noisier than that")


def _subordinate(beta: float, orbit: Orbit, t: float, tol: float) -> np.ndarray:
    """``int_0^inf M_beta(s) u(t^beta s) ds`` with tail mass and quadrature each below ``tol/2``."""
    upper = inverse_subordinator_cutoff(beta, 0.5 * tol)
    scale = max(float(np.max(np.abs(orbit(0.0)))), 1e-300)
    tb = t**beta

    def integrand(s):
        return wright_m(beta, s)[:, None] * orbit(tb * s)

    return _adaptive_panels(integrand, upper, 0.5 * tol, scale)


def subordination_solve(beta: float, semigroup, t: float, tol: float = 1e-8, grid: Grid1D | None = None) -> SolutionField:
    """``v(t) = int_0^inf h(w, t) u(w) dw`` for an orbit ``u`` of a semigroup.

    ``semigroup`` is an :class:`Orbit` or a callable ``w -> SolutionField``
    (then ``grid`` is required). The error is at most ``tol * ||u(0)||``.
    """
    beta = check_frac_order(beta)
    if not t > 0.0:
        raise DomainError("t must be positive")
    orbit = _as_orbit(semigroup, grid)
    if beta == 1.0:
        return SolutionField(orbit.grid, orbit(t)[0], t)
    return SolutionField(orbit.grid, _subordinate(beta, orbit, t, tol), t)


def subordination_inhomogeneous(
    beta: float,
    semigroup: Semigroup,
    f0,
    forcing: ForcingField | None,
    t: float,
    tol: float = 1e-8,
) -> SolutionField:
    """``int_0^inf P_w f0 h(w,t) dw + int_0^t int_0^inf P_u R(s) h(u, t-s) du ds``.

    The outer variable is ``tau = t - s = t y^(1/beta)``, which keeps the
    integrand smooth where ``h(., tau)`` concentrates at zero. Each term gets
    half of ``tol``. At ``beta = 1`` the time change is the identity and this is
    the Duhamel formula.
    """
    beta = check_frac_order(beta)
    if not t > 0.0:
        raise DomainError("t must be positive")
    grid = semigroup.grid
    data = grid.sample(f0)
    if beta == 1.0:
        homog = semigroup(np.array([t]), data)[0]
    else:
        homog = _subordinate(beta, Orbit.from_semigroup(semigroup, data), t, 0.5 * tol)
    if forcing is None:
        return SolutionField(grid, homog, t)

    probe = np.max(np.abs([forcing.sample(grid, s) for s in np.linspace(0.0, t, 9)]))
    scale = max(float(probe) * t, 1e-300)
    # inner noise must sit well below the outer acceptance threshold
    inner_tol = 0.01 * tol / max(t, 1.0)

    def outer(ys):
        rows = []
        for y in ys:
            tau = t * y ** (1.0 / beta)
            jac = t / beta * y ** (1.0 / beta - 1.0)
            r = forcing.sample(grid, t - tau)
            if beta == 1.0:
                val = semigroup(np.array([tau]), r)[0]
            elif tau == 0.0:
                val = r
            else:
                val = _subordinate(beta, Orbit.from_semigroup(semigroup, r), tau, inner_tol)
            rows.append(jac * val)
        return np.asarray(rows)

    forced = _adaptive_panels(outer, 1.0, 0.25 * tol, scale, start_panels=1)
    return SolutionField(grid, homog + forced, t)


def eigen_heat_solution(
    M: float,
    f,
    t: float,
    beta: float,
    modes: int,
    grid: Grid1D,
) -> SolutionField:
    """Sine series ``sum_n f_n E_beta(-(n pi/M)^2 t^beta) sin(n pi x/M)`` on ``(0, M)``.

    ``f_n = (2/M) int_0^M sin(n pi x/M) f(x) dx``: Gauss-Legendre quadrature for a
    callable ``f``, the discrete sine transform for grid values. Modes are cut
    once the remaining ``sum |f_n| E_beta(...)`` is below ``1e-10``, up to ``modes``.
    """
    beta = check_frac_order(beta)
    if not M > 0.0:
        raise DomainError("M must be positive")
    if abs(grid.left) > 0.0 or abs(grid.right - M) > 1e-12 * M:
        raise DomainError("grid must span (0, M)")
    k = np.arange(1, modes + 1)
    if callable(f):
        pts = max(64, 8 * modes)
        nodes, weights = _panel_nodes(np.linspace(0.0, M, pts // GL_NODES + 2))
        fv = np.asarray(f(nodes), dtype=float)
        coef = 2.0 / M * (np.sin(np.outer(k, nodes) * math.pi / M) @ (weights * fv))
    else:
        fv = grid.sample(f)
        i = np.arange(1, grid.n + 1)
        coef = 2.0 / (grid.n + 1) * (np.sin(np.outer(k, i) * math.pi / (grid.n + 1)) @ fv)
    lam = (k * math.pi / M) ** 2
    decay = np.exp(-lam * t) if beta == 1.0 else np.array([mittag_leffler(beta, -l * t**beta) for l in lam])
    amp = coef * decay
    tail = np.cumsum(np.abs(amp)[::-1])[::-1]
    keep = modes
    below = np.nonzero(tail < EIGEN_TAIL_TOL)[0]
    if below.size:
        keep = max(int(below[0]), 1)
    x = grid.nodes
    vals = np.sin(np.outer(x, k[:keep]) * math.pi / M) @ amp[:keep]
    return SolutionField(grid, vals, t)
