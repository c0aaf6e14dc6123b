"""Monte Carlo for ``v(x, t) = E^x[f(X^Omega_{E_t})]``.

Paths of the stable Lévy process with generator
``-a d/dx + b D^alpha_[L,x] + c D^alpha_[x,R]`` are stepped on a fixed ``dt``
and killed at the first step that lands outside ``(L, R)``. The time change
``E_t`` is drawn exactly as ``(t / D_1)^beta``.

The increment law over ``tau`` has characteristic function
``E exp(i k X) = exp(tau psi(k))`` with ``psi(k) = -i a k + b (ik)^alpha + c (-ik)^alpha``.
This is ``-a tau + sigma Z`` with ``Z ~ S_alpha(1, theta, 0)``,
``sigma^alpha = tau (b + c) |cos(pi alpha / 2)|`` and ``theta = (c - b)/(b + c)``:
``b`` weights the left-sided derivative, which corresponds to jumps to the left.

Particles are processed in fixed blocks; block ``j`` draws its time change from
stream ``2j`` and its path increments from stream ``2j + 1``. The particle-to-
stream map never depends on how blocks are spread across workers.
"""

from __future__ import annotations

import csv
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .fracops import Grid1D, StableOperatorSpec
from .specfun import DomainError, check_frac_order, check_stability_index

__all__ = [
    "BLOCK_SIZE",
    "RngStream",
    "MCConfig",
    "MCEstimate",
    "Tally",
    "stable_parameters",
    "sample_standard_stable",
    "sample_subordinator",
    "sample_inverse_subordinator",
    "sample_stable_increment",
    "simulate_killed_path",
    "simulate_killed_paths",
    "mc_solution",
    "mc_solution_with_bias",
    "BiasedEstimate",
    "merge_tallies",
    "block_tallies",
    "write_histogram_csv",
    "mc_relaxation",
    "inverse_subordinator_draws",
]

BLOCK_SIZE = 4096


@dataclass
class RngStream:
    """Reproducible generator keyed by ``(seed, stream_id)``; draws advance its state."""

    seed: int
    stream_id: int = 0
    _gen: np.random.Generator | None = field(default=None, init=False, repr=False, compare=False)

    @property
    def generator(self) -> np.random.Generator:
        if self._gen is None:
            seq = np.random.SeedSequence(int(self.seed), spawn_key=(int(self.stream_id),))
            self._gen = np.random.Generator(np.random.PCG64(seq))
        return self._gen


def _gen(rng) -> np.random.Generator:
    if isinstance(rng, RngStream):
        return rng.generator
    if isinstance(rng, np.random.Generator):
        return rng
    raise TypeError(f"expected RngStream or numpy Generator, got {type(rng).__name__}")


@dataclass(frozen=True)
class MCConfig:
    particles: int
    dt: float
    seed: int = 0
    workers: int = 1
    swap_streams: bool = False

    def __post_init__(self) -> None:
        if int(self.particles) != self.particles or self.particles < 1:
            raise DomainError(f"particles must be a positive integer, got {self.particles}")
        if not self.dt > 0.0:
            raise DomainError(f"path dt must be positive, got {self.dt}")
        if self.workers < 1:
            raise DomainError("workers must be at least 1")


@dataclass(frozen=True)
class MCEstimate:
    mean: float
    stderr: float
    n: int


@dataclass(frozen=True)
class Tally:
    """Count, mean and sum of squared deviations; merged with the pairwise update."""

    n: int = 0
    mean: float = 0.0
    m2: float = 0.0

    @classmethod
    def of(cls, samples: np.ndarray) -> Tally:
        if samples.size == 0:
            return cls()
        mean = float(np.mean(samples))
        return cls(int(samples.size), mean, float(np.sum((samples - mean) ** 2)))

    def merge(self, other: Tally) -> Tally:
        if other.n == 0:
            return self
        if self.n == 0:
            return other
        n = self.n + other.n
        delta = other.mean - self.mean
        mean = self.mean + delta * other.n / n
        m2 = self.m2 + other.m2 + delta * delta * self.n * other.n / n
        return Tally(n, mean, m2)

    def estimate(self) -> MCEstimate:
        if self.n < 2:
            return MCEstimate(self.mean, 0.0, self.n)
        std = math.sqrt(max(self.m2, 0.0) / (self.n - 1))
        return MCEstimate(self.mean, std / math.sqrt(self.n), self.n)


# ---------------------------------------------------------------------------
# Samplers


def stable_parameters(spec: StableOperatorSpec, x=None) -> tuple[np.ndarray, np.ndarray]:
    """Per-unit-time scale ``sigma`` and skewness ``theta`` at ``x`` (or for constant coefficients)."""
    alpha = check_stability_index(spec.alpha)
    pts = np.zeros(1) if x is None else np.asarray(x, dtype=float)
    b, c = spec.b(pts), spec.c(pts)
    total = b + c
    with np.errstate(invalid="ignore", divide="ignore"):
        theta = np.where(total > 0.0, (c - b) / np.where(total > 0.0, total, 1.0), 0.0)
    if alpha == 2.0:
        sigma = np.sqrt(total)
    else:
        sigma = (total * abs(math.cos(math.pi * alpha / 2.0))) ** (1.0 / alpha)
    return sigma, theta


def sample_standard_stable(alpha: float, theta, rng, size=None) -> np.ndarray:
    """``S_alpha(1, theta, 0)`` draws by the Chambers-Mallows-Stuck transform (alpha != 1)."""
    gen = _gen(rng)
    alpha = check_stability_index(alpha)
    theta = np.asarray(theta, dtype=float)
    shape = theta.shape if size is None else size
    if alpha == 2.0:
        return math.sqrt(2.0) * gen.standard_normal(shape)
    v = gen.uniform(-0.5 * math.pi, 0.5 * math.pi, shape)
    w = gen.standard_exponential(shape)
    tan_term = theta * math.tan(math.pi * alpha / 2.0)
    shift = np.arctan(tan_term) / alpha
    amp = (1.0 + tan_term**2) ** (1.0 / (2.0 * alpha))
    arg = alpha * (v + shift)
    return amp * np.sin(arg) / np.cos(v) ** (1.0 / alpha) * (np.cos(v - arg) / w) ** ((1.0 - alpha) / alpha)


def sample_subordinator(beta: float, rng, size=None):
    """``D_1`` with ``E exp(-s D_1) = exp(-s^beta)``, from one uniform and one exponential draw."""
    beta = check_frac_order(beta, allow_one=False)
    gen = _gen(rng)
    u = gen.uniform(0.0, math.pi, size)
    w = gen.standard_exponential(size)
    d = np.sin(beta * u) / np.sin(u) ** (1.0 / beta) * (np.sin((1.0 - beta) * u) / w) ** ((1.0 - beta) / beta)
    return float(d) if size is None else d


def sample_inverse_subordinator(beta: float, t: float, rng, size=None):
    """``E_t = (t / D_1)^beta``; ``beta = 1`` gives ``E_t = t``."""
    beta = check_frac_order(beta)
    if not t > 0.0:
        raise DomainError("t must be positive")
    if beta == 1.0:
        return t if size is None else np.full(size, float(t))
    return (t / sample_subordinator(beta, rng, size)) ** beta


def sample_stable_increment(spec: StableOperatorSpec, dt: float, rng, size=None):
    """Increment over ``dt`` of the process with symbol ``-iak + b(ik)^alpha + c(-ik)^alpha``."""
    if not spec.is_constant:
        raise DomainError("sample_stable_increment needs constant coefficients")
    if spec.alpha < 1.0:
        raise DomainError("path sampling is implemented for alpha in (1, 2]")
    if not dt > 0.0:
        raise DomainError("dt must be positive")
    sigma, theta = stable_parameters(spec)
    z = sample_standard_stable(spec.alpha, theta[0], rng, size=() if size is None else size)
    inc = -spec.drift * dt + sigma[0] * dt ** (1.0 / spec.alpha) * z
    return float(inc) if size is None else inc


# ---------------------------------------------------------------------------
# Killed paths


def simulate_killed_paths(
    x0,
    spec: StableOperatorSpec,
    domain: tuple[float, float],
    horizons,
    dt: float,
    rng,
    coarse: bool = False,
):
    """Vectorised paths from ``x0`` up to per-particle ``horizons``.

    Steps are ``dt`` long except a final partial step. Variable coefficients are
    frozen at the current position over each step. Returns ``(alive, position)``.
    With ``coarse=True`` also returns the survival flags obtained by checking the
    same paths only every second step (and at the horizon), i.e. at ``2 dt``.
    """
    if spec.alpha < 1.0:
        raise DomainError("path sampling is implemented for alpha in (1, 2]")
    left, right = domain
    horizons = np.asarray(horizons, dtype=float)
    pos = np.broadcast_to(np.asarray(x0, dtype=float), horizons.shape).astype(float)
    alive = (pos > left) & (pos < right)
    alive_coarse = alive.copy()
    elapsed = np.zeros_like(horizons)
    steps = np.zeros(horizons.shape, dtype=np.int64)
    gen = _gen(rng)
    inv_alpha = 1.0 / spec.alpha
    if spec.is_constant:
        sigma0, theta0 = stable_parameters(spec)
    while True:
        tracked = (alive | alive_coarse) if coarse else alive
        active = np.nonzero(tracked & (elapsed < horizons))[0]
        if active.size == 0:
            break
        tau = np.minimum(dt, horizons[active] - elapsed[active])
        if spec.is_constant:
            sigma, theta = sigma0[0], np.full(active.size, theta0[0])
        else:
            sigma, theta = stable_parameters(spec, pos[active])
        z = sample_standard_stable(spec.alpha, theta, gen)
        pos[active] += -spec.drift * tau + sigma * tau**inv_alpha * z
        # the last partial step closes the horizon exactly
        done = tau < dt
        elapsed[active] = np.where(done, horizons[active], elapsed[active] + tau)
        steps[active] += 1
        inside = (pos[active] > left) & (pos[active] < right)
        alive[active] &= inside
        if coarse:
            check = done | (steps[active] % 2 == 0) | (elapsed[active] >= horizons[active])
            alive_coarse[active] &= inside | ~check
    if coarse:
        return alive, pos, alive_coarse
    return alive, pos


def simulate_killed_path(
    x0: float,
    spec: StableOperatorSpec,
    domain: tuple[float, float],
    horizon: float,
    mc: MCConfig,
    rng,
) -> tuple[bool, float]:
    """One killed path; returns ``(alive, position at horizon)``."""
    if not horizon >= 0.0:
        raise DomainError("horizon must be nonnegative")
    alive, pos = simulate_killed_paths(np.array([x0]), spec, domain, np.array([horizon]), mc.dt, rng)
    return bool(alive[0]), float(pos[0])


def _payoff(f, domain: tuple[float, float]) -> Callable[[np.ndarray], np.ndarray]:
    if callable(f):
        return lambda x: np.asarray(f(x), dtype=float) * np.ones_like(x)
    vals = np.asarray(f, dtype=float)
    grid = Grid1D(domain[0], domain[1], vals.size)
    xp = np.concatenate([[grid.left], grid.nodes, [grid.right]])
    fp = np.concatenate([[0.0], vals, [0.0]])
    return lambda x: np.interp(x, xp, fp)


@dataclass(frozen=True)
class _BlockTask:
    index: int
    size: int
    x0: float
    f: object
    t: float
    beta: float
    spec: StableOperatorSpec
    domain: tuple[float, float]
    dt: float
    seed: int
    swap: bool


def _run_block(task: _BlockTask) -> Tally:
    time_stream, path_stream = 2 * task.index, 2 * task.index + 1
    if task.swap:
        time_stream, path_stream = path_stream, time_stream
    horizons = sample_inverse_subordinator(task.beta, task.t, RngStream(task.seed, time_stream), size=task.size)
    alive, pos, alive_coarse = simulate_killed_paths(
        task.x0, task.spec, task.domain, horizons, task.dt, RngStream(task.seed, path_stream), coarse=True
    )
    payoff = _payoff(task.f, task.domain)
    fine = np.zeros(task.size)
    if np.any(alive):
        fine[alive] = payoff(pos[alive])
    gap = np.zeros(task.size)
    extra = alive_coarse & ~alive
    if np.any(extra):
        gap[extra] = payoff(pos[extra])
    return BlockResult(Tally.of(fine), Tally.of(gap))


@dataclass(frozen=True)
class BlockResult:
    """Scores of one block and the paired gap ``coarse - fine`` from the ``2 dt`` monitor."""

    fine: Tally
    gap: Tally


def _block_sizes(particles: int) -> list[int]:
    full, rest = divmod(particles, BLOCK_SIZE)
    return [BLOCK_SIZE] * full + ([rest] if rest else [])


def block_tallies(
    x0: float,
    f,
    t: float,
    beta: float,
    spec: StableOperatorSpec,
    mc: MCConfig,
    domain: tuple[float, float],
) -> list[BlockResult]:
    """Per-block results in block order; independent of ``mc.workers``.

    With ``mc.workers > 1`` blocks run in worker processes, so ``f`` and the
    coefficient fields must be picklable (module-level functions, not lambdas).
    """
    tasks = [
        _BlockTask(i, size, float(x0), f, float(t), beta, spec, tuple(domain), mc.dt, mc.seed, mc.swap_streams)
        for i, size in enumerate(_block_sizes(mc.particles))
    ]
    if mc.workers > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=mc.workers) as pool:
            return list(pool.map(_run_block, tasks))
    return [_run_block(task) for task in tasks]


def merge_tallies(tallies: Sequence[Tally], partitions: int = 1) -> Tally:
    """Merge block tallies within ``partitions`` contiguous groups, then merge the groups."""
    groups = np.array_split(np.arange(len(tallies)), max(1, partitions))
    total = Tally()
    for group in groups:
        part = Tally()
        for i in group:
            part = part.merge(tallies[i])
        total = total.merge(part)
    return total


def mc_solution(
    x0: float,
    f,
    t: float,
    beta: float,
    spec: StableOperatorSpec,
    mc: MCConfig,
    domain: tuple[float, float] = (0.0, 1.0),
) -> MCEstimate:
    """Estimate ``E^x0[f(X^Omega_{E_t})]``; killed particles score zero.

    ``f`` is a callable or interior grid values on ``domain`` (linearly
    interpolated, zero at the endpoints).
    """
    beta = check_frac_order(beta)
    left, right = domain
    if not left < x0 < right:
        raise DomainError(f"x0={x0} is outside the domain {domain}")
    if not t > 0.0:
        raise DomainError("t must be positive")
    blocks = block_tallies(x0, f, t, beta, spec, mc, domain)
    return merge_tallies([b.fine for b in blocks]).estimate()


@dataclass(frozen=True)
class BiasedEstimate:
    """MC estimate with a Richardson estimate of its step-monitoring bias.

    ``gap`` is the paired mean of ``coarse - fine`` scores on common paths.
    If the bias scales like ``dt^(1/alpha)`` then ``bias = gap / (2^(1/alpha) - 1)``.
    """

    estimate: MCEstimate
    gap: MCEstimate
    bias: float


def mc_solution_with_bias(
    x0: float,
    f,
    t: float,
    beta: float,
    spec: StableOperatorSpec,
    mc: MCConfig,
    domain: tuple[float, float] = (0.0, 1.0),
) -> BiasedEstimate:
    """Like :func:`mc_solution`, plus a paired estimate of the time-step bias."""
    beta = check_frac_order(beta)
    left, right = domain
    if not left < x0 < right:
        raise DomainError(f"x0={x0} is outside the domain {domain}")
    if not t > 0.0:
        raise DomainError("t must be positive")
    blocks = block_tallies(x0, f, t, beta, spec, mc, domain)
    fine = merge_tallies([b.fine for b in blocks]).estimate()
    gap = merge_tallies([b.gap for b in blocks]).estimate()
    rate = 2.0 ** (1.0 / spec.alpha) - 1.0
    return BiasedEstimate(fine, gap, gap.mean / rate)


def _relaxation_block(args) -> Tally:
    index, size, rate, t, beta, seed = args
    horizons = sample_inverse_subordinator(beta, t, RngStream(seed, 2 * index), size=size)
    return Tally.of(np.exp(-rate * np.asarray(horizons, dtype=float)))


def mc_relaxation(rate: float, t: float, beta: float, mc: MCConfig) -> MCEstimate:
    """Estimate ``E exp(-rate E_t)``: a single mode killed at constant ``rate``, time-changed."""
    beta = check_frac_order(beta)
    if not rate >= 0.0:
        raise DomainError("rate must be nonnegative")
    tasks = [(i, size, float(rate), float(t), beta, mc.seed) for i, size in enumerate(_block_sizes(mc.particles))]
    return merge_tallies([_relaxation_block(task) for task in tasks]).estimate()


def inverse_subordinator_draws(beta: float, t: float, mc: MCConfig) -> np.ndarray:
    """The time-change draws of the first block, as used by :func:`mc_solution`."""
    size = _block_sizes(mc.particles)[0]
    stream = 1 if mc.swap_streams else 0
    return np.asarray(sample_inverse_subordinator(beta, t, RngStream(mc.seed, stream), size=size), dtype=float)


def write_histogram_csv(samples, path: str | Path, bins: int = 50) -> Path:
    """Dump a histogram as ``bin_left,bin_right,count`` rows."""
    counts, edges = np.histogram(np.asarray(samples, dtype=float), bins=bins)
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["bin_left", "bin_right", "count"])
        for lo, hi, n in zip(edges[:-1], edges[1:], counts):
            writer.writerow([repr(float(lo)), repr(float(hi)), int(n)])
    return path
