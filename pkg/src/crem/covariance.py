"""Covariance profiles A, their concave hulls, and the analytic thresholds.

A profile is a piecewise-linear distribution function on [0, 1]; its density
``a`` is piecewise constant.  Every integral below is evaluated exactly piece
by piece, so the only floating-point error is rounding.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

LOG2 = math.log(2.0)
SQRT_2LOG2 = math.sqrt(2.0 * LOG2)

__all__ = [
    "LOG2",
    "SQRT_2LOG2",
    "ProfileError",
    "CovarianceProfile",
    "ThresholdReport",
    "PathFunction",
    "VariationalReport",
    "make_profile",
    "sample_profile",
    "builtin_profile",
    "random_profile",
    "evaluate",
    "concave_hull",
    "is_concave",
    "thresholds",
    "energy_functional",
    "energy_profile",
    "natural_speed_path",
    "optimal_path",
    "speed_derivative",
    "optimal_derivative",
    "variational_check",
    "load_profile",
    "save_profile",
    "profile_hash",
]


class ProfileError(ValueError):
    """Raised for breakpoint lists that do not define a distribution function on [0, 1]."""


@dataclass(frozen=True, eq=False)
class CovarianceProfile:
    """Piecewise-linear covariance profile.

    Attributes
    ----------
    t, A : ndarray
        Breakpoints, with ``t[0] = A[0] = 0`` and ``t[-1] = A[-1] = 1``.
    name : str
        Free-form label carried into experiment records.
    """

    t: np.ndarray
    A: np.ndarray
    name: str = ""

    @property
    def slopes(self) -> np.ndarray:
        return np.diff(self.A) / np.diff(self.t)

    @property
    def widths(self) -> np.ndarray:
        return np.diff(self.t)

    @property
    def n_pieces(self) -> int:
        return len(self.t) - 1

    @property
    def sup_density(self) -> float:
        return float(self.slopes.max())

    def breakpoints(self) -> list[tuple[float, float]]:
        return [(float(a), float(b)) for a, b in zip(self.t, self.A)]

    def cdf(self, t):
        """A(t), exact on breakpoints."""
        return evaluate(self, t)[0]

    def density(self, t):
        """Left slope a(t); the first slope at t = 0."""
        return evaluate(self, t)[1]

    def __repr__(self) -> str:
        label = f"{self.name!r}, " if self.name else ""
        return f"CovarianceProfile({label}{self.n_pieces} pieces)"


def make_profile(breakpoints: Iterable[Sequence[float]], name: str = "") -> CovarianceProfile:
    """Build a validated profile from ``(t, A)`` pairs."""
    pts = [tuple(map(float, p)) for p in breakpoints]
    if any(len(p) != 2 for p in pts):
        raise ProfileError("each breakpoint must be a (t, A) pair")
    if len(pts) < 2:
        raise ProfileError("need at least the two endpoints (0, 0) and (1, 1)")
    t = np.array([p[0] for p in pts])
    A = np.array([p[1] for p in pts])
    if not (np.all(np.isfinite(t)) and np.all(np.isfinite(A))):
        raise ProfileError("breakpoints must be finite")
    if t[0] != 0.0 or A[0] != 0.0:
        raise ProfileError(f"first breakpoint must be (0, 0), got ({t[0]}, {A[0]})")
    if t[-1] != 1.0 or A[-1] != 1.0:
        raise ProfileError(f"last breakpoint must be (1, 1), got ({t[-1]}, {A[-1]})")
    dt = np.diff(t)
    if np.any(dt <= 0):
        i = int(np.argmax(dt <= 0))
        raise ProfileError(f"t must be strictly increasing (breakpoint {i + 1})")
    dA = np.diff(A)
    if np.any(dA < 0):
        i = int(np.argmax(dA < 0))
        raise ProfileError(f"A must be non-decreasing (breakpoint {i + 1})")
    if not np.all(np.isfinite(dA / dt)):
        raise ProfileError("slopes must be finite")
    t.setflags(write=False)
    A.setflags(write=False)
    return CovarianceProfile(t, A, name)


def sample_profile(func, grid_size: int = 4096, name: str = "") -> CovarianceProfile:
    """Piecewise-linear interpolation of ``func`` on a uniform grid of ``grid_size`` pieces.

    ``func`` must be non-decreasing with ``func(0) = 0`` and ``func(1) = 1``; the
    endpoints are pinned exactly.
    """
    t = np.linspace(0.0, 1.0, grid_size + 1)
    A = np.asarray(func(t), dtype=float)
    A[0], A[-1] = 0.0, 1.0
    t[0], t[-1] = 0.0, 1.0
    return make_profile(zip(t, A), name=name)


def builtin_profile(spec: str, grid_size: int = 4096) -> CovarianceProfile:
    """Named profiles: ``brw``, ``square``, ``concave_square`` and ``two_slope(c1)``.

    ``two_slope(c1)`` has slope ``c1`` on [0, 1/2] and ``2 - c1`` on [1/2, 1].
    """
    spec = spec.strip()
    if spec == "brw":
        return make_profile([(0.0, 0.0), (1.0, 1.0)], name="brw")
    if spec == "square":
        return sample_profile(lambda t: t * t, grid_size, name="square")
    if spec == "concave_square":
        return sample_profile(lambda t: 2.0 * t - t * t, grid_size, name="concave_square")
    if spec.startswith("two_slope"):
        inner = spec[len("two_slope"):].strip()
        if not (inner.startswith("(") and inner.endswith(")")):
            raise ProfileError(f"expected two_slope(c1), got {spec!r}")
        c1 = float(inner[1:-1])
        if not 0.0 <= c1 <= 2.0:
            raise ProfileError("two_slope needs 0 <= c1 <= 2")
        return make_profile([(0.0, 0.0), (0.5, c1 / 2.0), (1.0, 1.0)], name=spec)
    raise ProfileError(f"unknown builtin profile {spec!r}")


def random_profile(n_pieces: int, rng: np.random.Generator, name: str = "") -> CovarianceProfile:
    """Random profile with ``n_pieces`` pieces; used for fuzzing."""
    cuts = np.sort(rng.uniform(0.02, 0.98, size=n_pieces - 1))
    while n_pieces > 1 and np.min(np.diff(np.r_[0.0, cuts, 1.0])) < 1e-3:
        cuts = np.sort(rng.uniform(0.02, 0.98, size=n_pieces - 1))
    t = np.r_[0.0, cuts, 1.0]
    mass = rng.exponential(size=n_pieces) * (rng.uniform(size=n_pieces) > 0.1)
    if mass.sum() == 0:
        mass[-1] = 1.0
    A = np.r_[0.0, np.cumsum(mass) / mass.sum()]
    A[-1] = 1.0
    return make_profile(zip(t, A), name=name or f"random{n_pieces}")


def evaluate(profile: CovarianceProfile, t):
    """Return ``(A(t), a(t))``, with ``a`` the left slope at breakpoints.

    Accepts scalars or arrays; raises ``ValueError`` for t outside [0, 1].
    """
    arr = np.asarray(t, dtype=float)
    if np.any(arr < 0.0) or np.any(arr > 1.0) or np.any(np.isnan(arr)):
        raise ValueError("t must lie in [0, 1]")
    A = np.interp(arr, profile.t, profile.A)
    idx = np.clip(np.searchsorted(profile.t, arr, side="left") - 1, 0, profile.n_pieces - 1)
    a = profile.slopes[idx]
    if arr.ndim == 0:
        return float(A), float(a)
    return A, a


def concave_hull(profile: CovarianceProfile) -> CovarianceProfile:
    """Least concave majorant of A, on a subset of the breakpoints."""
    t, A = profile.t, profile.A
    hull: list[int] = []
    for i in range(len(t)):
        while len(hull) >= 2:
            o, p = hull[-2], hull[-1]
            cross = (t[p] - t[o]) * (A[i] - A[o]) - (A[p] - A[o]) * (t[i] - t[o])
            if cross >= 0:  # p on or below the chord o -> i
                hull.pop()
            else:
                break
        hull.append(i)
    name = f"hull({profile.name})" if profile.name else ""
    return make_profile(zip(t[hull], A[hull]), name=name)


def is_concave(profile: CovarianceProfile, tol: float = 1e-9, hull: CovarianceProfile | None = None) -> bool:
    """True when the hull agrees with A on every breakpoint within ``tol``."""
    hull = concave_hull(profile) if hull is None else hull
    return bool(np.max(np.abs(hull.cdf(profile.t) - profile.A)) <= tol)


def _hull_slope_per_piece(profile: CovarianceProfile, hull: CovarianceProfile) -> np.ndarray:
    # hull breakpoints are a subset of the profile's, so each profile piece lies in one hull piece
    mids = 0.5 * (profile.t[:-1] + profile.t[1:])
    idx = np.searchsorted(hull.t, mids) - 1
    return hull.slopes[idx]


# ---------------------------------------------------------------------------
# thresholds


@dataclass(frozen=True)
class ThresholdReport:
    x_star: float
    x_s: float
    x_c: float
    beta_c: float
    x_G: float
    beta_G: float
    t_G: float
    hull: CovarianceProfile = field(repr=False)

    @property
    def regime(self) -> str:
        """Which side of the condensation threshold the algorithmic threshold lies on."""
        if math.isclose(self.x_star, self.x_c, rel_tol=0.0, abs_tol=1e-9):
            return "equal"
        return "x*<x_c" if self.x_star < self.x_c else "x*>x_c"

    def as_dict(self) -> dict:
        return {
            "x_star": self.x_star,
            "x_s": self.x_s,
            "x_c": self.x_c,
            "beta_c": self.beta_c,
            "x_G": self.x_G,
            "beta_G": self.beta_G,
            "t_G": self.t_G,
            "regime": self.regime,
        }


def _sqrt_integral(widths: np.ndarray, slopes: np.ndarray) -> np.ndarray:
    """Cumulative integral of sqrt(density) at the breakpoints (length n + 1)."""
    return np.r_[0.0, np.cumsum(widths * np.sqrt(slopes))]


def _contact_end(profile: CovarianceProfile, hull: CovarianceProfile, tol: float) -> float:
    """End of the initial stretch [0, t] on which A coincides with its hull."""
    # both are linear on each profile piece and hull >= A, so a piece lies in the
    # contact set iff both of its endpoints do
    touch = np.abs(hull.cdf(profile.t) - profile.A) <= tol
    on = touch[:-1] & touch[1:]
    if on.all():
        return 1.0
    return float(profile.t[np.argmin(on)])


def _t0(hull: CovarianceProfile, beta: float) -> float:
    """sup{t >= 0 : beta > sqrt(2 log 2) / sqrt(hull density at t)}, or 0 if empty."""
    if beta <= 0:
        return 0.0
    with np.errstate(divide="ignore"):
        crit = np.where(hull.slopes > 0, SQRT_2LOG2 / np.sqrt(hull.slopes), np.inf)
    ok = np.nonzero(beta > crit)[0]
    if len(ok) == 0:
        return 0.0
    # hull slopes are non-increasing, so the admissible set is an initial segment
    return float(hull.t[ok[-1] + 1])


def thresholds(profile: CovarianceProfile, tol: float = 1e-9) -> ThresholdReport:
    """All thresholds of the profile, from exact per-piece integrals."""
    hull = concave_hull(profile)
    x_star = SQRT_2LOG2 * _sqrt_integral(profile.widths, profile.slopes)[-1]
    hull_cum = _sqrt_integral(hull.widths, hull.slopes)
    x_s = SQRT_2LOG2 * hull_cum[-1]
    beta_c = SQRT_2LOG2 / math.sqrt(hull.slopes[0])

    t_G = _contact_end(profile, hull, tol)
    if t_G >= 1.0:
        ess_sup = float(profile.slopes[-1])
    else:
        pieces = profile.t[1:] > t_G
        ess_sup = float(profile.slopes[pieces].max())
    beta_G = SQRT_2LOG2 / math.sqrt(ess_sup) if ess_sup > 0 else math.inf
    t0 = _t0(hull, beta_G)
    A_t0 = float(profile.cdf(t0))
    tail = beta_G * (1.0 - A_t0) if A_t0 < 1.0 else 0.0
    x_G = SQRT_2LOG2 * float(np.interp(t0, hull.t, hull_cum)) + tail
    return ThresholdReport(
        x_star=float(x_star),
        x_s=float(x_s),
        x_c=float(beta_c),
        beta_c=float(beta_c),
        x_G=float(x_G),
        beta_G=float(beta_G),
        t_G=float(t_G),
        hull=hull,
    )


# ---------------------------------------------------------------------------
# paths and the energy functional


@dataclass(frozen=True, eq=False)
class PathFunction:
    """A sampled path on [0, 1].

    ``kind="cumulative"`` paths hold z(t) at every grid point and interpolate
    linearly.  ``kind="derivative"`` paths hold b: with ``interp="step"`` there
    is one value per grid cell (b is constant on ``(grid[j], grid[j+1]]``);
    with ``interp="linear"`` one value per grid point.
    """

    grid: np.ndarray
    values: np.ndarray
    kind: str = "cumulative"
    interp: str = "linear"

    def __post_init__(self):
        g = np.asarray(self.grid, dtype=float)
        v = np.asarray(self.values, dtype=float)
        object.__setattr__(self, "grid", g)
        object.__setattr__(self, "values", v)
        if self.kind not in ("cumulative", "derivative"):
            raise ValueError(f"unknown path kind {self.kind!r}")
        if self.interp not in ("linear", "step"):
            raise ValueError(f"unknown interpolation {self.interp!r}")
        if self.kind == "cumulative" and self.interp != "linear":
            raise ValueError("cumulative paths interpolate linearly")
        if g.ndim != 1 or len(g) < 2 or g[0] != 0.0 or g[-1] != 1.0 or np.any(np.diff(g) <= 0):
            raise ValueError("grid must be strictly increasing from 0 to 1")
        expected = len(g) - 1 if self.interp == "step" else len(g)
        if v.shape != (expected,):
            raise ValueError(f"expected {expected} values, got {v.shape}")
        if self.kind == "cumulative" and v[0] != 0.0:
            raise ValueError("cumulative paths start at 0")

    def __call__(self, t):
        if self.kind == "cumulative" or self.interp == "linear":
            return np.interp(t, self.grid, self.values)
        idx = np.clip(np.searchsorted(self.grid, t, side="left") - 1, 0, len(self.values) - 1)
        return self.values[idx]

    def integral(self) -> float:
        """Integral over [0, 1] of a derivative path."""
        if self.kind != "derivative":
            raise ValueError("integral() is defined for derivative paths")
        h = np.diff(self.grid)
        if self.interp == "step":
            return float(np.sum(h * self.values))
        return float(np.sum(h * 0.5 * (self.values[1:] + self.values[:-1])))

    @property
    def end(self) -> float:
        if self.kind != "cumulative":
            raise ValueError("end is defined for cumulative paths")
        return float(self.values[-1])


def _uniform_grid(profile: CovarianceProfile, grid_size: int) -> np.ndarray:
    return np.union1d(profile.t, np.linspace(0.0, 1.0, grid_size + 1))


def natural_speed_path(profile: CovarianceProfile, grid_size: int = 1024) -> PathFunction:
    """z*(t) = sqrt(2 log 2) * int_0^t sqrt(a)."""
    cum = _sqrt_integral(profile.widths, profile.slopes)
    grid = _uniform_grid(profile, grid_size)
    values = SQRT_2LOG2 * _piecewise_cumulative(profile.t, cum, np.sqrt(profile.slopes), grid)
    return PathFunction(grid, values, "cumulative")


def optimal_path(profile: CovarianceProfile, grid_size: int = 1024) -> PathFunction:
    """z(t) = int_0^t a * sqrt(2 log 2 / hull density), the maximiser of z(1) over admissible paths."""
    rate = _v_over_c(profile, concave_hull(profile))
    cum = np.r_[0.0, np.cumsum(profile.widths * rate)]
    grid = _uniform_grid(profile, grid_size)
    values = SQRT_2LOG2 * _piecewise_cumulative(profile.t, cum, rate, grid)
    return PathFunction(grid, values, "cumulative")


def _v_over_c(profile: CovarianceProfile, hull: CovarianceProfile) -> np.ndarray:
    """a / sqrt(hull density) per profile piece, with 0/0 := 0."""
    ahat = _hull_slope_per_piece(profile, hull)
    safe = np.where(ahat > 0, ahat, 1.0)
    return np.where(ahat > 0, profile.slopes / np.sqrt(safe), 0.0)


def _piecewise_cumulative(t, cum, rate, grid):
    idx = np.clip(np.searchsorted(t, grid, side="right") - 1, 0, len(rate) - 1)
    out = cum[idx] + rate[idx] * (grid - t[idx])
    exact = np.isin(grid, t)
    out[exact] = cum[np.searchsorted(t, grid[exact])]
    return out


def speed_derivative(profile: CovarianceProfile) -> PathFunction:
    """Step derivative of the natural speed path, sqrt(2 log 2 * a)."""
    return PathFunction(profile.t.copy(), SQRT_2LOG2 * np.sqrt(profile.slopes), "derivative", "step")


def optimal_derivative(profile: CovarianceProfile) -> PathFunction:
    """Step function v = a * sqrt(2 log 2 / hull density)."""
    rate = _v_over_c(profile, concave_hull(profile))
    return PathFunction(profile.t.copy(), SQRT_2LOG2 * rate, "derivative", "step")


def energy_profile(profile: CovarianceProfile, b: PathFunction, ts=None):
    """E(b, t) = -(log 2) t + int_0^t b^2 / (2a) at each refinement point (or at ``ts``).

    Integrals are exact on the common refinement of b's grid and the profile
    breakpoints: b is constant (step) or linear there while a is constant.
    Returns ``(points, energies)``; energies are ``inf`` once b is nonzero on a
    piece where a vanishes.
    """
    if b.kind != "derivative":
        raise ValueError("energy needs a derivative path")
    grid = np.union1d(b.grid, profile.t)
    h = np.diff(grid)
    mids = 0.5 * (grid[:-1] + grid[1:])
    a = profile.density(mids)
    if b.interp == "step":
        sq = b(mids) ** 2
    else:
        lo, hi = b(grid[:-1]), b(grid[1:])
        sq = (lo * lo + lo * hi + hi * hi) / 3.0
    with np.errstate(divide="ignore", invalid="ignore"):
        dens = np.where(a > 0, sq / (2.0 * np.where(a > 0, a, 1.0)), np.where(sq > 0, np.inf, 0.0))
    cum = np.r_[0.0, np.cumsum(h * dens)]
    energies = cum - LOG2 * grid
    if ts is None:
        return grid, energies
    ts = np.asarray(ts, dtype=float)
    if np.any(ts < 0) or np.any(ts > 1):
        raise ValueError("t must lie in [0, 1]")
    # piecewise-linear between refinement points except where infinite
    idx = np.clip(np.searchsorted(grid, ts, side="right") - 1, 0, len(h) - 1)
    with np.errstate(invalid="ignore"):
        part = np.where(ts > grid[idx], (ts - grid[idx]) * dens[idx], 0.0)
    return ts, cum[idx] + part - LOG2 * ts


def energy_functional(profile: CovarianceProfile, b: PathFunction, t: float) -> float:
    """E(b, t) for a single t in [0, 1]."""
    if not 0.0 <= t <= 1.0:
        raise ValueError("t must lie in [0, 1]")
    return float(energy_profile(profile, b, [t])[1][0])


# ---------------------------------------------------------------------------
# variational principle


@dataclass(frozen=True)
class VariationalReport:
    max_energy: float
    integral_v: float
    integral_gap: float
    max_trial_excess: float
    trials: int
    tol: float

    @property
    def v_admissible(self) -> bool:
        return self.max_energy <= self.tol

    @property
    def integral_matches(self) -> bool:
        return self.integral_gap <= self.tol

    @property
    def maximal(self) -> bool:
        return self.max_trial_excess <= self.tol

    @property
    def passed(self) -> bool:
        return self.v_admissible and self.integral_matches and self.maximal


def _rescale_into_admissible(profile, grid, values):
    """Largest s <= 1 with E(s b, t) <= 0 on the refinement; returns s * values."""
    b = PathFunction(grid, values, "derivative", "step")
    pts, energies = energy_profile(profile, b)
    quad = energies + LOG2 * pts  # int_0^t b^2/(2a)
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(quad > 0, LOG2 * pts / quad, np.inf)
    s2 = min(1.0, float(np.min(ratio[1:])))
    return values * math.sqrt(s2) * (1.0 - 1e-12)


def variational_check(
    profile: CovarianceProfile,
    grid_size: int = 1024,
    trial_count: int = 1000,
    seed: int = 0,
    tol: float = 1e-6,
) -> VariationalReport:
    """Check numerically that v = a (2 log 2 / hull density)^(1/2) maximises int b over
    admissible b (those with E(b, t) <= 0 for all t).

    The admissible trials multiply v by a random step factor in [0.5, 1.5] (or
    add a random step bump), then shrink globally until admissible.  This is
    heuristic coverage of the admissible set, not an exhaustive search.
    """
    rng = np.random.default_rng(seed)
    v = optimal_derivative(profile)
    _, energies = energy_profile(profile, v, np.linspace(0.0, 1.0, grid_size + 1))
    _, e_ref = energy_profile(profile, v)
    max_energy = float(max(energies.max(), e_ref.max()))
    x_s = thresholds(profile).x_s
    integral_v = v.integral()
    gap = abs(integral_v - x_s)

    grid = _uniform_grid(profile, grid_size)
    base = v(0.5 * (grid[:-1] + grid[1:]))
    speed = speed_derivative(profile)(0.5 * (grid[:-1] + grid[1:]))
    h = np.diff(grid)
    n_cells = len(h)
    worst = -math.inf
    for i in range(trial_count):
        pieces = int(rng.integers(1, 17))
        cuts = np.sort(rng.integers(0, n_cells, size=pieces - 1))
        factors = rng.uniform(0.5, 1.5, size=pieces)
        factor = np.repeat(factors, np.diff(np.r_[0, cuts, n_cells]))
        if i % 3 == 2:
            # mix towards the natural speed path, which is admissible but suboptimal
            w = rng.uniform()
            trial = factor * (w * base + (1 - w) * speed)
        else:
            trial = factor * base
        trial = _rescale_into_admissible(profile, grid, trial)
        worst = max(worst, float(np.sum(h * trial)) - integral_v)
    return VariationalReport(
        max_energy=max_energy,
        integral_v=float(integral_v),
        integral_gap=float(gap),
        max_trial_excess=float(worst) if trial_count else -math.inf,
        trials=trial_count,
        tol=tol,
    )


# ---------------------------------------------------------------------------
# plain-text interchange


def load_profile(path, name: str | None = None) -> CovarianceProfile:
    """Read ``t A`` pairs, one per line; ``#`` starts a comment."""
    pts = []
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) != 2:
            raise ProfileError(f"{path}:{lineno}: expected 't A', got {raw!r}")
        try:
            pts.append((float(parts[0]), float(parts[1])))
        except ValueError:
            raise ProfileError(f"{path}:{lineno}: not a number in {raw!r}") from None
    try:
        return make_profile(pts, name=Path(path).stem if name is None else name)
    except ProfileError as exc:
        raise ProfileError(f"{path}: {exc}") from None


def save_profile(profile: CovarianceProfile, path, comment: str | None = None) -> None:
    lines = [f"# {c}" for c in (comment or "").splitlines()]
    lines += [f"{t!r} {A!r}" for t, A in profile.breakpoints()]
    Path(path).write_text("\n".join(lines) + "\n")


def profile_hash(profile: CovarianceProfile) -> str:
    """Short content hash of the breakpoints, carried in run records."""
    h = hashlib.sha256()
    h.update(np.ascontiguousarray(profile.t).tobytes())
    h.update(np.ascontiguousarray(profile.A).tobytes())
    return h.hexdigest()[:16]
