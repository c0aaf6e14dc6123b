"""Grünwald discretisation of Riemann-Liouville operators on a uniform interval mesh.

All operators act on interior node values and see the zero extension of a
function outside ``(L, R)``: boundary nodes are never unknowns.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Literal, Union

import numpy as np
from scipy import io as spio
from scipy.linalg import toeplitz

from .specfun import DomainError, check_stability_index

__all__ = [
    "Grid1D",
    "StableOperatorSpec",
    "GeneratorMatrix",
    "RegularityWarning",
    "grunwald_weights",
    "rl_integral",
    "rl_derivative",
    "grunwald_matrix",
    "assemble_killed_generator",
    "export_matrix_market",
]

Side = Literal["left", "right"]
Coefficient = Union[float, Callable[[np.ndarray], np.ndarray]]


class RegularityWarning(UserWarning):
    """The killed process may not hit the boundary immediately (alpha < 1)."""


@dataclass(frozen=True)
class Grid1D:
    """Uniform interior mesh ``x_i = L + i*dx``, ``i = 1..n``, ``dx = (R - L)/(n + 1)``."""

    left: float
    right: float
    n: int

    def __post_init__(self) -> None:
        if not self.left < self.right:
            raise DomainError(f"grid needs left < right, got ({self.left}, {self.right})")
        if int(self.n) != self.n or self.n < 1:
            raise DomainError(f"grid needs a positive integer node count, got {self.n}")

    @property
    def dx(self) -> float:
        return (self.right - self.left) / (self.n + 1)

    @property
    def nodes(self) -> np.ndarray:
        return self.left + self.dx * np.arange(1, self.n + 1)

    def refined(self) -> Grid1D:
        """Grid with exactly half the spacing; every old node is kept."""
        return Grid1D(self.left, self.right, 2 * self.n + 1)

    def contains(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return (x > self.left) & (x < self.right)

    def sample(self, f) -> np.ndarray:
        """Interior values of ``f``: a callable of ``x`` or an array of length ``n``."""
        if callable(f):
            vals = np.asarray(f(self.nodes), dtype=float)
            return np.broadcast_to(vals, (self.n,)).copy()
        vals = np.asarray(f, dtype=float)
        if vals.shape != (self.n,):
            raise DomainError(f"grid function has shape {vals.shape}, expected ({self.n},)")
        return vals


def _coefficient_values(coef: Coefficient, x: np.ndarray) -> np.ndarray:
    if callable(coef):
        vals = np.asarray(coef(x), dtype=float)
        return np.broadcast_to(vals, x.shape).copy()
    return np.full(x.shape, float(coef))


@dataclass(frozen=True)
class StableOperatorSpec:
    """Coefficients of ``-a d/dx + b(x) D^alpha_[L,x] + c(x) D^alpha_[x,R]``.

    ``b`` weights the left-sided derivative (jumps to the left) and ``c`` the
    right-sided one. For ``alpha < 1`` the derivatives enter with a minus sign,
    so the operator is still dissipative.
    """

    alpha: float
    drift: float = 0.0
    left_weight: Coefficient = 1.0
    right_weight: Coefficient = 0.0

    def __post_init__(self) -> None:
        check_stability_index(self.alpha)
        for name in ("left_weight", "right_weight"):
            coef = getattr(self, name)
            if not callable(coef) and (not math.isfinite(float(coef)) or float(coef) < 0.0):
                raise DomainError(f"{name} must be a nonnegative number, got {coef}")
        if not math.isfinite(self.drift):
            raise DomainError("drift must be finite")

    @property
    def is_constant(self) -> bool:
        return not (callable(self.left_weight) or callable(self.right_weight))

    def b(self, x) -> np.ndarray:
        return _coefficient_values(self.left_weight, np.asarray(x, dtype=float))

    def c(self, x) -> np.ndarray:
        return _coefficient_values(self.right_weight, np.asarray(x, dtype=float))

    def check_regularity(self, grid: Grid1D) -> None:
        if self.alpha >= 1.0:
            return
        x = grid.nodes
        if self.drift != 0.0 or np.any(self.b(x) <= 0.0) or np.any(self.c(x) <= 0.0):
            warnings.warn(
                "alpha < 1 needs b > 0, c > 0 and zero drift for a regular killed process",
                RegularityWarning,
                stacklevel=3,
            )


@dataclass(frozen=True)
class GeneratorMatrix:
    """Dense discretisation of the killed generator, read-only once built."""

    matrix: np.ndarray
    grid: Grid1D
    spec: StableOperatorSpec | None = None
    scheme: str = "shifted-grunwald"

    def __post_init__(self) -> None:
        mat = np.array(self.matrix, dtype=float, copy=True)
        if mat.shape != (self.grid.n, self.grid.n):
            raise DomainError(f"matrix shape {mat.shape} does not match grid size {self.grid.n}")
        mat.setflags(write=False)
        object.__setattr__(self, "matrix", mat)

    @classmethod
    def scalar(cls, rate: float) -> GeneratorMatrix:
        """One-node generator ``A = (-rate)``, a pure relaxation mode."""
        return cls(np.array([[-float(rate)]]), Grid1D(0.0, 1.0, 1), None, "scalar")

    @property
    def n(self) -> int:
        return self.grid.n

    def __matmul__(self, other):
        return self.matrix @ other


def grunwald_weights(alpha: float, count: int) -> np.ndarray:
    """``w_k = (-1)^k binom(alpha, k)`` for ``k < count``."""
    if count < 1:
        raise DomainError("count must be at least 1")
    w = np.empty(count)
    w[0] = 1.0
    for k in range(1, count):
        w[k] = w[k - 1] * (k - 1 - alpha) / k
    return w


def _shift(alpha: float) -> int:
    return 1 if alpha > 1.0 else 0


def grunwald_matrix(alpha: float, grid: Grid1D, side: Side = "left") -> np.ndarray:
    """Matrix of the shifted Grünwald approximation of ``D^alpha`` on the zero extension."""
    alpha = check_stability_index(alpha)
    n, s = grid.n, _shift(alpha)
    w = grunwald_weights(alpha, n + 1) * grid.dx**-alpha
    # G[i, j] = w[i - j + s]; entries with negative index are zero
    col = w[s : s + n] if s + n <= w.size else np.concatenate([w[s:], np.zeros(s + n - w.size)])
    row = np.zeros(n)
    row[0] = w[s]
    if s == 1 and n > 1:
        row[1] = w[0]
    g_left = toeplitz(col, row)
    if side == "left":
        return g_left
    if side == "right":
        return g_left.T.copy()
    raise DomainError(f"side must be 'left' or 'right', got {side!r}")


def rl_derivative(f, alpha: float, side: Side, grid: Grid1D) -> np.ndarray:
    """Shifted Grünwald approximation of ``D^alpha_[L,x] f`` or ``D^alpha_[x,R] f``.

    First order in ``dx`` for smooth ``f`` vanishing at the near boundary.
    """
    vals = grid.sample(f)
    return grunwald_matrix(alpha, grid, side) @ vals


def rl_integral(f, alpha: float, side: Side, grid: Grid1D) -> np.ndarray:
    """Product-rectangle quadrature of ``I^alpha_[L,x] f`` or ``I^alpha_[x,R] f``.

    Each mesh cell carries the value at its endpoint farther from the base point;
    the kernel ``(x - y)^(alpha - 1)`` is integrated exactly over the cell.
    """
    if not alpha > 0.0:
        raise DomainError(f"integration order must be positive, got {alpha}")
    vals = grid.sample(f)
    if side == "right":
        vals = vals[::-1]
    elif side != "left":
        raise DomainError(f"side must be 'left' or 'right', got {side!r}")
    m = np.arange(grid.n)
    v = (m + 1.0) ** alpha - m**alpha
    out = np.convolve(vals, v)[: grid.n] * grid.dx**alpha / math.gamma(alpha + 1.0)
    return out[::-1] if side == "right" else out


def _add_drift(mat: np.ndarray, drift: float, dx: float) -> np.ndarray:
    """Add ``-a d/dx`` by hybrid differencing.

    Rows keep the central difference while every off-diagonal entry stays
    nonnegative and the row sum stays nonpositive; other rows switch to the
    upwind difference. The result is an
    M-matrix whenever the fractional part is one, so backward Euler is a
    max-norm contraction for any step.
    """
    n = mat.shape[0]
    out = mat.copy()
    half = drift / (2.0 * dx)
    idx = np.arange(n)
    central = np.ones(n, dtype=bool)
    central[:-1] &= mat[idx[:-1], idx[:-1] + 1] - half >= 0.0
    central[1:] &= mat[idx[1:], idx[1:] - 1] + half >= 0.0
    # a one-sided neighbour at the outflow end would give a positive row sum
    rows = mat.sum(axis=1)
    central[0] &= rows[0] - half <= 0.0
    central[-1] &= rows[-1] + half <= 0.0
    c = idx[central]
    out[c[c < n - 1], c[c < n - 1] + 1] -= half
    out[c[c > 0], c[c > 0] - 1] += half
    u = idx[~central]
    speed = abs(drift) / dx
    out[u, u] -= speed
    if drift > 0.0:
        u = u[u > 0]
        out[u, u - 1] += speed
    else:
        u = u[u < n - 1]
        out[u, u + 1] += speed
    return out


def assemble_killed_generator(spec: StableOperatorSpec, grid: Grid1D) -> GeneratorMatrix:
    """Dense matrix of the killed generator acting on interior values.

    For ``alpha`` in ``(1, 2]``: ``A = -a D1 + diag(b) G_L + diag(c) G_R`` with a
    central first difference ``D1`` (upwind in rows where central would break
    the M-matrix sign pattern). For ``alpha`` in ``(0, 1)``:
    ``A = -diag(b) G_L - diag(c) G_R`` and drift is not allowed.
    """
    alpha = check_stability_index(spec.alpha)
    if alpha < 1.0 and spec.drift != 0.0:
        raise DomainError("drift is not supported for alpha < 1")
    spec.check_regularity(grid)
    x = grid.nodes
    g_left = grunwald_matrix(alpha, grid, "left")
    sign = 1.0 if alpha > 1.0 else -1.0
    mat = sign * (spec.b(x)[:, None] * g_left + spec.c(x)[:, None] * g_left.T)
    if spec.drift != 0.0:
        mat = _add_drift(mat, spec.drift, grid.dx)
    tag = "shifted-grunwald" if alpha > 1.0 else "grunwald"
    return GeneratorMatrix(mat, grid, spec, tag)


def export_matrix_market(gen: GeneratorMatrix, path: str | Path) -> Path:
    """Write the generator as a dense Matrix Market array file."""
    path = Path(path)
    spio.mmwrite(str(path), np.asarray(gen.matrix), comment=f"scheme={gen.scheme} n={gen.n}")
    if path.suffix != ".mtx" and not path.exists():
        path = path.with_suffix(path.suffix + ".mtx")
    return path
