"""Generator-function norms and the inequality battery built on them.

Two functionals drive every estimate downstream: a velocity-space one,

    G[g](z) = sum_k deta * sum_m e^{2 z <k,eta>^gamma} (|ghat|^2 + |d_eta ghat|^2) <k,eta>^{2 sigma},

and a density one,

    F[rho](t,z) = sup_{k != 0} e^{z <k,kt>^gamma} |rho_k(t)| <k,kt>^sigma,

with the japanese bracket <k,eta> = sqrt(1 + k^2 + eta^2).  The checks in
this module monitor, on computed trajectories, the differential inequality
coupling G and F, the pointwise domination F <= sqrt(G), the shrinking-radius
contraction condition, the Fourier-multiplier comparison against d_z G, and
the propagator bound satisfied by linear density traces.  Inequalities whose
constants the theory leaves unquantified are handled by fitting the smallest
admissible constant, never by asserting a magic number.
"""

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .spectral import SpectralState, eta_derivative, to_eta

# Below this, a fitted-ratio denominator is treated as exactly zero.
RATIO_FLOOR = 1e-300


def _as_float_array(x) -> np.ndarray:
    return np.asarray(x, dtype=float)


@dataclass(frozen=True)
class WeightParams:
    """Exponents and radii for the weights, validated on construction.

    z_grid defaults to 33 evenly spaced points on [0, lam1]; every centered
    z-difference in the checks below uses its spacing.
    """

    gamma: float
    sigma: float
    delta: float
    lam0: float
    lam1: float
    z_grid: np.ndarray = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        problems = []
        if not 1.0 / 3.0 < self.gamma <= 1.0:
            problems.append(f"need 1/3 < gamma <= 1, got gamma = {self.gamma}")
        if not 3.0 * self.gamma > 1.0 + 2.0 * self.delta:
            problems.append(
                f"need 3*gamma > 1 + 2*delta, got 3*{self.gamma} <= 1 + 2*{self.delta}"
            )
        if self.delta <= 0.0:
            problems.append(f"need delta > 0, got delta = {self.delta}")
        if not self.sigma > 3.0 + self.delta:
            problems.append(
                f"need sigma > 3 + delta, got sigma = {self.sigma} <= {3.0 + self.delta}"
            )
        if not self.lam0 > 0.0:
            problems.append(f"need lambda0 > 0, got lambda0 = {self.lam0}")
        if not self.lam0 <= self.lam1 / 4.0:
            problems.append(
                f"need lambda0 <= lambda1/4, got {self.lam0} > {self.lam1 / 4.0}"
            )
        if problems:
            raise ValueError("; ".join(problems))
        if self.z_grid is None:
            grid = np.linspace(0.0, self.lam1, 33)
        else:
            grid = _as_float_array(self.z_grid)
            if grid.ndim != 1 or grid.size < 3:
                raise ValueError("z_grid must hold at least 3 points")
            if grid[0] < 0.0 or np.any(np.diff(grid) <= 0.0):
                raise ValueError("z_grid must be nonnegative and strictly increasing")
        object.__setattr__(self, "z_grid", grid)


def standard_params(lam1: float = 0.2) -> WeightParams:
    """The parameter point every diagnostic defaults to."""
    return WeightParams(gamma=1.0, sigma=3.2, delta=0.1,
                        lam0=min(0.05, lam1 / 4.0), lam1=lam1)


def bracket(k, eta) -> np.ndarray:
    """<k,eta> = sqrt(1 + k^2 + eta^2)."""
    k = _as_float_array(k)
    eta = _as_float_array(eta)
    return np.sqrt(1.0 + k * k + eta * eta)


def weight(k, eta, z: float, params: WeightParams):
    """A_{k,eta} = e^{z <k,eta>^gamma} <k,eta>^sigma for z >= 0."""
    if z < 0.0:
        raise ValueError(f"need z >= 0, got z = {z}")
    b = bracket(k, eta)
    return np.exp(z * b**params.gamma) * b**params.sigma


def _state_tables(state: SpectralState):
    """Per-(k, eta) bracket and transform mass |ghat|^2 + |d_eta ghat|^2."""
    g = state.grid
    b = np.empty((g.n_modes, g.N_v))
    mass = np.empty((g.n_modes, g.N_v))
    eta = g.eta
    for k in g.modes:
        i = g.mode_index(int(k))
        b[i] = bracket(float(k), eta)
        mass[i] = np.abs(to_eta(state, int(k))) ** 2 + np.abs(eta_derivative(state, int(k))) ** 2
    return b, mass


def _guard_overflow(state: SpectralState, z: float, params: WeightParams) -> None:
    eta_max = float(np.max(np.abs(state.grid.eta)))
    if z * eta_max**params.gamma >= 700.0:
        raise ValueError(
            f"overflow guard: need z * eta_max**gamma < 700, got "
            f"{z} * {eta_max:.4g}**{params.gamma} = {z * eta_max**params.gamma:.4g}"
        )


def _G_from_tables(b: np.ndarray, mass: np.ndarray, z: float, deta: float,
                   params: WeightParams) -> float:
    w = np.exp(2.0 * z * b**params.gamma) * b ** (2.0 * params.sigma)
    return float(deta * np.sum(w * mass))


def gen_G(state: SpectralState, z: float, params: WeightParams) -> float:
    """The velocity-side generator functional at analyticity radius z."""
    if z < 0.0:
        raise ValueError(f"need z >= 0, got z = {z}")
    _guard_overflow(state, z, params)
    b, mass = _state_tables(state)
    return _G_from_tables(b, mass, z, state.grid.deta, params)


def eta_tail_fraction(state: SpectralState, z: float, params: WeightParams) -> float:
    """Weighted mass fraction in the outer tenth of the eta-grid.

    The discrete sum sees nothing beyond |eta| = pi/dv; this reports how
    much of the weighted integrand already sits near that edge, i.e. how
    badly the true integral over the line is being under-counted.
    """
    _guard_overflow(state, z, params)
    b, mass = _state_tables(state)
    w = np.exp(2.0 * z * b**params.gamma) * b ** (2.0 * params.sigma) * mass
    total = float(np.sum(w))
    if total == 0.0:
        return 0.0
    eta = state.grid.eta
    outer = np.abs(eta) >= 0.9 * np.max(np.abs(eta))
    return float(np.sum(w[:, outer])) / total


def _density_pairs(rho):
    if hasattr(rho, "items"):
        return [(int(k), complex(val)) for k, val in rho.items()]
    return [(int(k), complex(val)) for k, val in rho]


def gen_F(rho, t: float, z: float, params: WeightParams) -> float:
    """The weighted density sup along the streaming line eta = kt.

    rho maps mode number to coefficient (dict or (k, value) pairs); the
    k = 0 entry never contributes.  Evaluated in log-space so large weights
    cannot overflow intermediate products.
    """
    if z < 0.0:
        raise ValueError(f"need z >= 0, got z = {z}")
    best = None
    for k, val in _density_pairs(rho):
        if k == 0:
            continue
        a = abs(val)
        if a == 0.0:
            continue
        b = float(bracket(k, k * t))
        log_term = z * b**params.gamma + params.sigma * math.log(b) + math.log(a)
        best = log_term if best is None else max(best, log_term)
    if best is None:
        return 0.0
    return math.exp(best) if best < 709.0 else math.inf


def radius(t, params: WeightParams):
    """Shrinking analyticity radius lambda(t) = lam0 + lam0 (1+t)^{-delta}."""
    t = _as_float_array(t)
    return params.lam0 + params.lam0 * (1.0 + t) ** (-params.delta)


def radius_derivative(t, params: WeightParams):
    """d/dt of radius; strictly negative, used by the contraction check."""
    t = _as_float_array(t)
    return -params.delta * params.lam0 * (1.0 + t) ** (-params.delta - 1.0)


@dataclass(frozen=True)
class NormProfile:
    """G, F, and the radius tabulated on (snapshot times) x (z-grid)."""

    times: np.ndarray
    z_grid: np.ndarray
    G: np.ndarray  # shape (n_times, n_z)
    F: np.ndarray  # shape (n_times, n_z)
    lam: np.ndarray  # radius(times)

    def __post_init__(self):
        if np.any(self.G < 0.0) or np.any(self.F < 0.0):
            raise ValueError("G and F must be nonnegative")
        slack = 1e-12
        if np.any(np.diff(self.G, axis=1) < -slack * np.maximum(self.G[:, 1:], 1.0)):
            raise ValueError("G must be nondecreasing in z")
        if np.any(np.diff(self.F, axis=1) < -slack * np.maximum(self.F[:, 1:], 1.0)):
            raise ValueError("F must be nondecreasing in z")


def _snapshot_density(output, t: float):
    """Mode -> coefficient dict from the recorded traces at time t."""
    times = output.times
    i = int(np.searchsorted(times, t))
    for j in (i, i - 1, i + 1):
        if 0 <= j < times.size and abs(times[j] - t) <= 1e-9 * max(1.0, abs(t)):
            return {k: tr.values[j] for k, tr in output.traces.items()}
    raise ValueError(f"traces were not recorded at snapshot time t = {t:g}")


def norm_profile(output, params: WeightParams, z_grid=None) -> NormProfile:
    """Tabulate G and F over the run's snapshots and the z-grid."""
    zs = params.z_grid if z_grid is None else _as_float_array(z_grid)
    grid = output.config.grid
    times = np.array([s.t for s in output.snapshots])
    G = np.empty((times.size, zs.size))
    F = np.empty_like(G)
    for i, snap in enumerate(output.snapshots):
        state = snap.to_state(grid)
        _guard_overflow(state, float(zs[-1]), params)
        b, mass = _state_tables(state)
        rho = _snapshot_density(output, snap.t)
        for j, z in enumerate(zs):
            G[i, j] = _G_from_tables(b, mass, float(z), grid.deta, params)
            F[i, j] = gen_F(rho, snap.t, float(z), params)
    return NormProfile(times=times, z_grid=zs, G=G, F=F,
                       lam=radius(times, params))


@dataclass(frozen=True)
class FG1Report:
    """Smallest constant closing the G-F differential inequality."""

    C0: float
    max_violation: float
    at: tuple  # (t, z) where the fitted ratio is tight
    n_samples: int


def check_FG1(output, params: WeightParams, z_grid=None) -> FG1Report:
    """Fit the smallest C0 with  d_t G <= C0 F G^{1/2} + C0 (1+t) F d_z G.

    Time and z derivatives are centered differences on the snapshot times
    and the z-grid; only interior sample points constrain the fit.
    """
    if len(output.snapshots) < 3:
        raise ValueError("need at least 3 snapshots for centered time differencing")
    prof = norm_profile(output, params, z_grid)
    if prof.z_grid.size < 3:
        raise ValueError("need at least 3 z-grid points for centered z differencing")
    dG_dt = np.gradient(prof.G, prof.times, axis=0)
    dG_dz = np.gradient(prof.G, prof.z_grid, axis=1)

    C0 = 0.0
    at = (float(prof.times[0]), float(prof.z_grid[0]))
    violation = 0.0
    n = 0
    for i in range(1, prof.times.size - 1):
        t = float(prof.times[i])
        for j in range(1, prof.z_grid.size - 1):
            lhs = dG_dt[i, j]
            rhs = prof.F[i, j] * math.sqrt(prof.G[i, j]) \
                + (1.0 + t) * prof.F[i, j] * dG_dz[i, j]
            n += 1
            if lhs <= 0.0:
                continue
            if rhs <= RATIO_FLOOR:
                violation = max(violation, lhs)
                continue
            if lhs / rhs > C0:
                C0 = lhs / rhs
                at = (t, float(prof.z_grid[j]))
    return FG1Report(C0=C0, max_violation=violation, at=at, n_samples=n)


@dataclass(frozen=True)
class SqrtGMargin:
    """G^{1/2} - F at one (state, density, z) sample."""

    margin: float
    floor: float
    ok: bool


def check_F_le_sqrtG(state: SpectralState, rho, z: float,
                     params: WeightParams) -> SqrtGMargin:
    """Pointwise domination of the density norm by the generator functional.

    The margin may dip below zero only by the quadrature floor: the discrete
    G under-counts eta-tail mass the continuous integral would include.
    """
    sq = math.sqrt(gen_G(state, z, params))
    f = gen_F(rho, state.t, z, params)
    floor = 1e-8 * max(1.0, sq)
    margin = sq - f
    return SqrtGMargin(margin=margin, floor=floor, ok=margin >= -floor)


@dataclass(frozen=True)
class ContractionReport:
    """Per-time status of  lambda'(t) + C0 (1+t) F(t, lambda(t)) <= 0."""

    times: np.ndarray
    satisfied: np.ndarray  # booleans
    first_failure: Optional[float]


def check_contraction(output, params: WeightParams, C0: float,
                      f_scale: float = 1.0) -> ContractionReport:
    """Check the radius schedule absorbs the density forcing at every time.

    f_scale multiplies F and exists for negative controls; physical use
    leaves it at 1.
    """
    times = output.times
    ok = np.empty(times.size, dtype=bool)
    for i, t in enumerate(times):
        lam = float(radius(t, params))
        rho = {k: tr.values[i] for k, tr in output.traces.items()}
        f = f_scale * gen_F(rho, float(t), lam, params)
        ok[i] = float(radius_derivative(t, params)) + C0 * (1.0 + float(t)) * f <= 0.0
    bad = np.flatnonzero(~ok)
    first = float(times[bad[0]]) if bad.size else None
    return ContractionReport(times=times, satisfied=ok, first_failure=first)


@dataclass(frozen=True)
class MultiplierReport:
    """Margins of d_z G over G of the half-derivative-weighted state."""

    x_margin: float
    v_margin: float
    h: float
    floor: float
    ok: bool


def _multiplier_G(state: SpectralState, z: float, params: WeightParams,
                  symbol: str) -> float:
    """G with the integrand multiplied by |k|^gamma or |eta|^gamma."""
    _guard_overflow(state, z, params)
    g = state.grid
    b, mass = _state_tables(state)
    if symbol == "k":
        factor = np.abs(g.modes.astype(float))[:, None] ** params.gamma
    else:
        factor = np.abs(g.eta)[None, :] ** params.gamma
    return _G_from_tables(b, factor * mass, z, g.deta, params)


def check_multiplier(state: SpectralState, z: float, params: WeightParams,
                     h: Optional[float] = None) -> MultiplierReport:
    """Compare G of the half-derivative of the state against d_z G.

    Both the x-multiplier |k|^{gamma/2} and the v-multiplier |eta|^{gamma/2}
    versions must sit below the centered z-difference of G; z has to be
    interior to the difference stencil.
    """
    zg = params.z_grid
    if h is None:
        h = float(np.min(np.diff(zg)))
    if z - h < zg[0] - 1e-12 or z + h > zg[-1] + 1e-12:
        raise ValueError(
            f"z = {z} with step h = {h} is not interior to the z-grid "
            f"[{zg[0]}, {zg[-1]}]"
        )
    dG = (gen_G(state, z + h, params) - gen_G(state, max(z - h, 0.0), params)) / (2.0 * h)
    x_margin = dG - _multiplier_G(state, z, params, "k")
    v_margin = dG - _multiplier_G(state, z, params, "eta")
    floor = 1e-8 * max(1.0, abs(dG))
    return MultiplierReport(x_margin=x_margin, v_margin=v_margin, h=h, floor=floor,
                            ok=x_margin >= -floor and v_margin >= -floor)


@dataclass(frozen=True)
class PropagatorFit:
    """Smallest constant closing the linear-trace propagator bound."""

    C: float
    at: tuple  # (t, z) of the tight sample
    n_samples: int


def check_propagator(k: int, times: np.ndarray, rho_values: np.ndarray,
                     source_values: np.ndarray, theta1: float,
                     params: WeightParams, z_grid=None) -> PropagatorFit:
    """Fit the smallest C with
    F[rho](t,z) <= F[S](t,z) + C int_0^t e^{-theta1 (t-s)/4} F[S](s,z) ds
    over the trace grid and every z in the grid not exceeding theta1/2.
    """
    times = _as_float_array(times)
    rho_values = np.asarray(rho_values)
    source_values = np.asarray(source_values)
    if times.ndim != 1 or rho_values.shape != times.shape or \
            source_values.shape != times.shape:
        raise ValueError("times, rho_values, source_values need matching shapes")
    zs = params.z_grid if z_grid is None else _as_float_array(z_grid)
    zs = zs[zs <= theta1 / 2.0 + 1e-15]
    if zs.size == 0:
        raise ValueError(f"no z-grid points inside [0, theta1/2] = [0, {theta1 / 2:g}]")
    if times.size < 2:
        raise ValueError("need at least 2 time samples")
    dt = np.diff(times)
    if np.max(np.abs(dt - dt[0])) > 1e-9 * dt[0]:
        raise ValueError("trace must be on a uniform time grid")

    b = bracket(k, k * times)
    log_w = np.log(b) * params.sigma
    C = 0.0
    at = (float(times[0]), float(zs[0]))
    n = 0
    for z in zs:
        A = np.exp(z * b**params.gamma + log_w)
        F_rho = A * np.abs(rho_values)
        F_S = A * np.abs(source_values)
        # trapezoid of e^{-theta1 (t-s)/4} F_S(s) ds, one pass per z
        decay = np.exp(-theta1 * times / 4.0)
        grow = np.exp(theta1 * times / 4.0)
        integrand = grow * F_S
        cum = np.concatenate(([0.0], np.cumsum(
            0.5 * dt * (integrand[:-1] + integrand[1:]))))
        integral = decay * cum
        for i in range(times.size):
            n += 1
            num = F_rho[i] - F_S[i]
            if num <= 0.0:
                continue
            if integral[i] <= RATIO_FLOOR:
                continue
            if num / integral[i] > C:
                C = num / integral[i]
                at = (float(times[i]), float(z))
    return PropagatorFit(C=C, at=at, n_samples=n)
