"""Benchmark problems with closed-form solutions.

Polynomial solutions ``tau(t) P(x)`` are checked against their PDE pointwise:
fractional derivatives of ``P`` come from the power laws
``D^alpha_[L,x] (x-L)^p = Gamma(p+1)/Gamma(p+1-alpha) (x-L)^(p-alpha)`` and the
mirrored right-sided formula, after re-expanding ``P`` about each endpoint.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from numpy.polynomial import Polynomial

from .fracops import GeneratorMatrix, Grid1D, StableOperatorSpec, assemble_killed_generator
from .specfun import DomainError, check_frac_order, gamma_ratio, mittag_leffler

__all__ = [
    "BenchmarkProblem",
    "SeparableSolution",
    "power_law_generator",
    "problem_ex4",
    "problem_ex4_homogeneous",
    "problem_mt2sided",
    "problem_heat_eigen",
    "problem_ml_relaxation",
    "REGISTRY",
    "get_problem",
]


def _expand_about(poly: Polynomial, base: float, sign: float) -> np.ndarray:
    """Coefficients of ``P(base + sign*y)`` in powers of ``y``."""
    return poly(Polynomial([base, sign])).coef


def power_law_generator(poly: Polynomial, spec: StableOperatorSpec, domain: tuple[float, float], x) -> np.ndarray:
    """Exact ``(b D^alpha_[L,x] + c D^alpha_[x,R] - a d/dx) P`` at interior points ``x``."""
    left, right = domain
    x = np.asarray(x, dtype=float)
    alpha = spec.alpha
    sign = 1.0 if alpha > 1.0 else -1.0
    total = np.zeros_like(x)
    for base, direction, weight in ((left, 1.0, spec.b(x)), (right, -1.0, spec.c(x))):
        coef = _expand_about(poly, base, direction)
        dist = direction * (x - base)
        deriv = np.zeros_like(x)
        for p, cp in enumerate(coef):
            if cp == 0.0:
                continue
            deriv += cp * gamma_ratio(float(p), alpha) * dist ** (p - alpha)
        total += sign * weight * deriv
    if spec.drift != 0.0:
        total -= spec.drift * poly.deriv()(x)
    return total


@dataclass(frozen=True)
class SeparableSolution:
    """``u(x, t) = tau(t) P(x)`` with ``P`` a polynomial."""

    profile: Polynomial
    time_factor: Callable[[float], float]
    time_derivative: Callable[[float], float]

    def __call__(self, x, t):
        return self.time_factor(t) * self.profile(np.asarray(x, dtype=float))


@dataclass(frozen=True)
class BenchmarkProblem:
    name: str
    domain: tuple[float, float]
    spec: StableOperatorSpec | None
    beta: float
    initial: Callable[[np.ndarray], np.ndarray]
    forcing: Callable[[np.ndarray, float], np.ndarray] | None = None
    exact: Callable[[np.ndarray, float], np.ndarray] | None = None
    separable: SeparableSolution | None = None
    params: dict = field(default_factory=dict)
    scalar_rate: float | None = None
    description: str = ""

    def grid(self, n: int) -> Grid1D:
        if self.scalar_rate is not None:
            return Grid1D(self.domain[0], self.domain[1], 1)
        return Grid1D(self.domain[0], self.domain[1], n)

    def generator(self, n: int) -> GeneratorMatrix:
        if self.scalar_rate is not None:
            return GeneratorMatrix.scalar(self.scalar_rate)
        return assemble_killed_generator(self.spec, self.grid(n))

    @property
    def alpha(self) -> float | None:
        return None if self.spec is None else self.spec.alpha

    @property
    def has_exact(self) -> bool:
        return self.exact is not None

    def residual(self, x, t) -> np.ndarray:
        """``d_t u - L u - g`` for separable polynomial solutions (first-order in time)."""
        if self.separable is None:
            raise DomainError(f"problem {self.name!r} has no polynomial residual oracle")
        sol = self.separable
        x = np.asarray(x, dtype=float)
        lu = sol.time_factor(t) * power_law_generator(sol.profile, self.spec, self.domain, x)
        g = self.forcing(x, t) if self.forcing is not None else 0.0
        return sol.time_derivative(t) * sol.profile(x) - lu - g


def _ex4_profile() -> Polynomial:
    # x^2 (1 - x)^2
    return Polynomial([0.0, 0.0, 1.0, -2.0, 1.0])


def problem_ex4(alpha: float = 1.8, b: float = 1.0, c: float = 0.5) -> BenchmarkProblem:
    """``u_t = b D_[0,x] u + c D_[x,1] u + g`` on (0,1) with exact ``t x^2 (1-x)^2``.

    The forcing uses ``g_p(x) = b x^p + c (1-x)^p``: its weights are the
    operator's left and right coefficients.
    """
    if not 1.0 < alpha < 2.0:
        raise DomainError("this benchmark needs 1 < alpha < 2")
    spec = StableOperatorSpec(alpha, 0.0, b, c)
    k2, k3, k4 = gamma_ratio(2, alpha), gamma_ratio(3, alpha), gamma_ratio(4, alpha)

    def g_p(x, p):
        return b * x**p + c * (1.0 - x) ** p

    def forcing(x, t):
        x = np.asarray(x, dtype=float)
        bracket = k2 * g_p(x, 2 - alpha) - 2.0 * k3 * g_p(x, 3 - alpha) + k4 * g_p(x, 4 - alpha)
        return x**2 * (1.0 - x) ** 2 - t * bracket

    sol = SeparableSolution(_ex4_profile(), lambda t: t, lambda t: 1.0)
    return BenchmarkProblem(
        name="ex4",
        domain=(0.0, 1.0),
        spec=spec,
        beta=1.0,
        initial=lambda x: np.zeros_like(np.asarray(x, dtype=float)),
        forcing=forcing,
        exact=sol,
        separable=sol,
        params={"alpha": alpha, "b": b, "c": c},
        description="forced two-sided stable problem, exact t x^2 (1-x)^2",
    )


def problem_ex4_homogeneous(
    alpha: float = 1.8, b: float = 1.0, c: float = 0.5, beta: float = 1.0
) -> BenchmarkProblem:
    """ex4 operator with the forcing removed and initial data ``x^2 (1-x)^2``; no closed form."""
    beta = check_frac_order(beta)
    spec = StableOperatorSpec(alpha, 0.0, b, c)
    profile = _ex4_profile()
    return BenchmarkProblem(
        name="ex4_homogeneous",
        domain=(0.0, 1.0),
        spec=spec,
        beta=beta,
        initial=lambda x: profile(np.asarray(x, dtype=float)),
        params={"alpha": alpha, "b": b, "c": c, "beta": beta},
        description="unforced ex4 operator from x^2 (1-x)^2",
    )


def problem_mt2sided() -> BenchmarkProblem:
    """Variable coefficients ``Gamma(1.2) x^1.8`` (left) and ``Gamma(1.2) (2-x)^1.8`` (right) on (0,2).

    Exact solution ``4 e^-t x^2 (2-x)^2``. The forcing is ``-u - L u``, i.e.
    ``-4 e^-t x^2 (2-x)^2 - 32 e^-t [...]``; the bracket alone equals ``-L u``.
    """
    g12 = math.gamma(1.2)
    spec = StableOperatorSpec(1.8, 0.0, lambda x: g12 * np.asarray(x) ** 1.8, lambda x: g12 * (2.0 - np.asarray(x)) ** 1.8)
    profile = 4.0 * Polynomial([0.0, 0.0, 4.0, -4.0, 1.0])

    def forcing(x, t):
        x = np.asarray(x, dtype=float)
        y = 2.0 - x
        bracket = x**2 + y**2 - 2.5 * (x**3 + y**3) + 25.0 / 22.0 * (x**4 + y**4)
        return -math.exp(-t) * profile(x) - 32.0 * math.exp(-t) * bracket

    sol = SeparableSolution(profile, lambda t: math.exp(-t), lambda t: -math.exp(-t))
    return BenchmarkProblem(
        name="mt2sided",
        domain=(0.0, 2.0),
        spec=spec,
        beta=1.0,
        initial=lambda x: profile(np.asarray(x, dtype=float)),
        forcing=forcing,
        exact=sol,
        separable=sol,
        params={},
        description="variable-coefficient two-sided problem, exact 4 e^-t x^2 (2-x)^2",
    )


def problem_heat_eigen(M: float = 1.0, beta: float = 1.0) -> BenchmarkProblem:
    """``d^beta u = u_xx`` on (0, M) from ``sin(pi x / M)``; exact ``E_beta(-(pi/M)^2 t^beta) sin(pi x/M)``."""
    if not M > 0.0:
        raise DomainError("M must be positive")
    beta = check_frac_order(beta)
    lam = (math.pi / M) ** 2

    def initial(x):
        return np.sin(math.pi * np.asarray(x, dtype=float) / M)

    def exact(x, t):
        decay = math.exp(-lam * t) if beta == 1.0 else mittag_leffler(beta, -lam * t**beta)
        return decay * initial(x)

    return BenchmarkProblem(
        name="heat_eigen",
        domain=(0.0, float(M)),
        spec=StableOperatorSpec(2.0, 0.0, 0.5, 0.5),
        beta=beta,
        initial=initial,
        exact=exact,
        params={"M": M, "beta": beta},
        description="first sine mode of the heat operator",
    )


def problem_ml_relaxation(lam: float = 1.0, beta: float = 0.5) -> BenchmarkProblem:
    """One-node problem ``A = (-lam)``, ``v(0) = 1``, exact ``E_beta(-lam t^beta)``."""
    if not lam > 0.0:
        raise DomainError("lambda must be positive")
    beta = check_frac_order(beta)

    def exact(x, t):
        val = math.exp(-lam * t) if beta == 1.0 else mittag_leffler(beta, -lam * t**beta)
        return np.full(np.shape(x), val)

    return BenchmarkProblem(
        name="ml_relaxation",
        domain=(0.0, 1.0),
        spec=None,
        beta=beta,
        initial=lambda x: np.ones_like(np.asarray(x, dtype=float)),
        exact=exact,
        params={"lambda": lam, "beta": beta},
        scalar_rate=float(lam),
        description="scalar relaxation mode",
    )


REGISTRY: dict[str, Callable[..., BenchmarkProblem]] = {
    "ex4": problem_ex4,
    "ex4_homogeneous": problem_ex4_homogeneous,
    "mt2sided": problem_mt2sided,
    "heat_eigen": problem_heat_eigen,
    "ml_relaxation": problem_ml_relaxation,
}


def get_problem(name: str, params: dict | None = None) -> BenchmarkProblem:
    """Build a registered problem; ``params`` are passed as keyword overrides."""
    if name not in REGISTRY:
        raise KeyError(f"unknown problem {name!r}; registered: {', '.join(sorted(REGISTRY))}")
    params = dict(params or {})
    if name == "ml_relaxation" and "lambda" in params:
        params["lam"] = params.pop("lambda")
    return REGISTRY[name](**params)
