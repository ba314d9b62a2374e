"""Fourier conventions, grids, and transforms shared by the whole package.

Space is the torus x in [0, 2*pi) with integer wavenumbers k; x-Fourier
coefficients follow the convention

    g_k(v) = (2*pi)**-1 * integral e^{-i k x} g(x, v) dx,

so a unit-mean profile has coefficient 1 at k = 0.  Velocity space is the
truncated interval [-V, V) sampled uniformly at v_j = -V + j*dv,
dv = 2V/N_v.  The velocity transform uses the continuous convention

    g_{k,eta} = integral e^{-i eta v} g_k(v) dv,

discretized as the dv-weighted DFT; the dual grid has spacing
deta = pi/V and covers eta in [-pi/dv, pi/dv).  With these weights the
discrete Parseval identity

    dv * sum_j |g_k(v_j)|^2 = (2*pi)**-1 * deta * sum_m |g_{k,eta_m}|^2

holds to rounding.  Truncating velocity space is only legitimate while the
state has decayed at |v| = V; every transform here checks that and refuses
to run on states that touch the boundary, since the error is otherwise
silent aliasing.

Resolution rule: extracting the density at time t requires the phase
e^{-i k t v} to be resolved on the v-grid, i.e. |k t| * dv < pi.  A run up
to time T with modes |k| <= k_max therefore needs

    N_v >= (2 V / pi) * k_max * T.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

BOUNDARY_DECAY_TOL = 1e-12


class BoundaryDecayError(ValueError):
    """State has not decayed at the edge of the velocity domain."""


class ResolutionError(ValueError):
    """Oscillatory phase too fast for the velocity grid."""


def required_nv(V: float, k_max: int, t_final: float) -> int:
    """Smallest velocity-grid size resolving density phases up to t_final."""
    return int(np.ceil(2.0 * V / np.pi * k_max * t_final)) + 1


@dataclass(frozen=True)
class Grid:
    """Uniform phase-space grid: modes k in {-k_max..k_max}, v in [-V, V).

    Parameters
    ----------
    k_max : int
        Largest retained spatial mode, k_max >= 1.
    V : float
        Half-width of the truncated velocity domain.
    N_v : int
        Number of velocity points (even, >= 2).
    """

    k_max: int
    V: float
    N_v: int

    def __post_init__(self):
        if self.k_max < 1:
            raise ValueError(f"k_max must be >= 1, got {self.k_max}")
        if self.V <= 0:
            raise ValueError(f"V must be positive, got {self.V}")
        if self.N_v < 2 or self.N_v % 2 != 0:
            raise ValueError(f"N_v must be even and >= 2, got {self.N_v}")

    @property
    def dv(self) -> float:
        return 2.0 * self.V / self.N_v

    @property
    def v(self) -> np.ndarray:
        """Velocity nodes v_j = -V + j*dv."""
        return -self.V + self.dv * np.arange(self.N_v)

    @property
    def deta(self) -> float:
        return np.pi / self.V

    @property
    def eta(self) -> np.ndarray:
        """Dual grid, ascending: eta_m = m*deta for m = -N_v/2 .. N_v/2 - 1."""
        return self.deta * (np.arange(self.N_v) - self.N_v // 2)

    @property
    def modes(self) -> np.ndarray:
        return np.arange(-self.k_max, self.k_max + 1)

    @property
    def n_modes(self) -> int:
        return 2 * self.k_max + 1

    def mode_index(self, k: int) -> int:
        if abs(k) > self.k_max:
            raise ValueError(f"mode {k} outside grid (k_max={self.k_max})")
        return k + self.k_max


@dataclass
class SpectralState:
    """Mode coefficients g_k(v_j) on a Grid, at a frame time t.

    data[k + k_max, j] holds g_k(v_j).  Physical states satisfy the
    reality constraint g_{-k} = conj(g_k); it is not enforced on write
    (diagnostic states legitimately break it) but can be measured with
    reality_error() and is maintained by the evolution code.
    """

    grid: Grid
    data: np.ndarray
    t: float = 0.0

    def __post_init__(self):
        want = (self.grid.n_modes, self.grid.N_v)
        if self.data.shape != want:
            raise ValueError(f"data shape {self.data.shape}, expected {want}")
        self.data = np.ascontiguousarray(self.data, dtype=np.complex128)

    @classmethod
    def zeros(cls, grid: Grid, t: float = 0.0) -> "SpectralState":
        return cls(grid, np.zeros((grid.n_modes, grid.N_v), dtype=np.complex128), t)

    def mode(self, k: int) -> np.ndarray:
        return self.data[self.grid.mode_index(k)]

    def copy(self) -> "SpectralState":
        return SpectralState(self.grid, self.data.copy(), self.t)

    def reality_error(self) -> float:
        """Max |g_k - conj(g_{-k})| relative to the state magnitude."""
        scale = np.max(np.abs(self.data))
        if scale == 0.0:
            return 0.0
        flipped = np.conj(self.data[::-1])
        return float(np.max(np.abs(self.data - flipped)) / scale)

    def boundary_floor(self) -> float:
        """Spectral floor: worst edge magnitude relative to the state max.

        The discrete eta-representation is only trustworthy down to about
        this level; report it alongside any eta-space diagnostic.
        """
        scale = np.max(np.abs(self.data))
        if scale == 0.0:
            return 0.0
        edges = np.abs(self.data[:, [0, -1]])
        return float(np.max(edges) / scale)


def state_from_modes(grid: Grid, modes: dict[int, np.ndarray], t: float = 0.0) -> SpectralState:
    """Build a state from coefficients for k >= 0, filling k < 0 by reality."""
    st = SpectralState.zeros(grid, t)
    for k, vals in modes.items():
        if k < 0:
            raise ValueError("give nonnegative k only; negatives follow by reality")
        st.data[grid.mode_index(k)] = vals
        if k > 0:
            st.data[grid.mode_index(-k)] = np.conj(vals)
    if 0 in modes:
        st.data[grid.mode_index(0)] = np.real(modes[0])
    return st


def _check_boundary(state: SpectralState, k: int, tol: float = BOUNDARY_DECAY_TOL) -> None:
    scale = np.max(np.abs(state.data))
    if scale == 0.0:
        return
    row = state.mode(k)
    edge = max(abs(row[0]), abs(row[-1]))
    if edge > tol * scale:
        raise BoundaryDecayError(
            f"mode k={k} has |g_k| = {edge:.3e} at |v| = V "
            f"(= {edge / scale:.3e} of the state max, tolerance {tol:.0e}); "
            f"enlarge V"
        )


def _alternating_signs(n: int) -> np.ndarray:
    # (-1)**m for m = -n/2 .. n/2 - 1 in ascending order; exact integers.
    # Entry i has m = i - n/2, negative where i + n/2 is odd.
    s = np.ones(n)
    s[(n // 2 + 1) % 2 :: 2] = -1.0
    return s


def to_eta(state: SpectralState, k: int) -> np.ndarray:
    """Velocity transform of mode k on the ascending eta-grid.

    Returns g_{k,eta_m} = dv * sum_j e^{-i eta_m v_j} g_k(v_j).  Because
    deta*V = pi the phase correction for the grid offset is exactly
    (-1)**m, so the transform is an FFT with sign flips and carries no
    extra trigonometric rounding.
    """
    _check_boundary(state, k)
    g = state.grid
    spec = np.fft.fftshift(np.fft.fft(state.mode(k)))
    return g.dv * _alternating_signs(g.N_v) * spec


def from_eta(grid: Grid, values: np.ndarray) -> np.ndarray:
    """Inverse of to_eta: recover g_k(v_j) from ascending eta samples."""
    spec = np.fft.ifftshift(values * _alternating_signs(grid.N_v))
    return np.fft.ifft(spec) / grid.dv


def eta_derivative(state: SpectralState, k: int) -> np.ndarray:
    """d/deta of the velocity transform: the transform of (-i v) g_k(v)."""
    _check_boundary(state, k)
    g = state.grid
    weighted = (-1j * g.v) * state.mode(k)
    spec = np.fft.fftshift(np.fft.fft(weighted))
    return g.dv * _alternating_signs(g.N_v) * spec


def oscillatory_moment(state: SpectralState, k: int, phase_rate: float) -> complex:
    """Weighted velocity integral of mode k: dv-trapezoid of g_k(v) e^{-i a v}.

    With a = k*t this is the density coefficient rho_k(t) of the pulled-back
    distribution.  On decayed periodic data the trapezoid and the plain
    dv-weighted sum coincide, and the result equals the band-limited
    interpolation of to_eta at eta = a.

    Raises ResolutionError if |a|*dv >= pi: the phase would alias, and the
    error names the N_v that resolves it.
    """
    g = state.grid
    a = float(phase_rate)
    if abs(a) * g.dv >= np.pi:
        need = required_nv(g.V, 1, abs(a))
        raise ResolutionError(
            f"phase rate |a| = {abs(a):.6g} needs dv < {np.pi / abs(a):.3e} "
            f"(N_v >= {need}), grid has dv = {g.dv:.3e} (N_v = {g.N_v})"
        )
    _check_boundary(state, k)
    return _moment_nocheck(state.mode(k), g.v, g.dv, a)


def _moment_nocheck(row: np.ndarray, v: np.ndarray, dv: float, a: float) -> complex:
    return complex(dv * np.sum(row * np.exp(-1j * a * v)))
