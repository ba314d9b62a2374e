"""Stability certification for the linearized electric response.

The memory kernel of spatial mode k has Laplace symbol
L(k, lambda) = integral_0^inf e^{-lambda t} t mu_hat(k t) dt and the
dispersion function D = 1 + L decides the linear behaviour: a stable
equilibrium keeps |D| bounded away from zero on the closed right
half-plane (the Penrose condition), and the width of a zero-free strip
to the left of the imaginary axis sets the exponential decay rate of
the resolvent kernel.

Everything here is numerical but deterministic.  Quadrature windows
come from the declared transform envelopes, zero-freeness is certified
by winding numbers on rectangles, and the half-plane infimum is reduced
to a boundary scan plus envelope tail bounds once the winding numbers
rule out interior zeros (an analytic function tending to 1 at infinity
with no zeros attains its modulus infimum on the boundary or in the
limit).  The reported margin is a certified scan value, not a claimed
rigorous global infimum; the certification parameters travel with it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .equilibria import Equilibrium

TAIL_TOL = 1e-15
ROOT_RESIDUAL_TOL = 1e-10
CONTOUR_CLEARANCE = 1e-8


class DomainError(ValueError):
    """Laplace symbol evaluated outside its convergence region."""


class ContourError(RuntimeError):
    """Winding-number contour too close to a zero, or not stabilizing."""


class RootConvergenceError(RuntimeError):
    """Newton iteration failed to locate a dispersion zero."""


class NoStableStripError(RuntimeError):
    """Equilibrium has no zero-free strip (vanishing stability margin)."""


_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(32)


def _log_integrand_bound(eq: Equilibrium, ak: float, rho: float, t: float) -> float:
    """log of the certified bound on |t mu_hat(k t) e^{-lambda t}|."""
    if eq.hat_log_envelope is not None:
        le = float(eq.hat_log_envelope(ak * t))
    else:
        le = math.log(eq.C0) - eq.theta0 * ak * t
    return math.log(t) + rho * t + le


def _cutoff(eq: Equilibrium, k: int, rho: float) -> float:
    """Truncation time T with certified Laplace tail below TAIL_TOL.

    rho is the worst exponential growth over the batch, max(-Re lambda).
    The bound's local decay rate is nondecreasing in t for both envelope
    families (linear and quadratic exponents), so the tail integral
    beyond T is at most bound(T) / rate(T).
    """
    ak = abs(k)
    if eq.hat_log_envelope is None and rho >= eq.theta0 * ak:
        raise DomainError(
            f"Re lambda <= {-eq.theta0 * ak:g} is outside the convergence "
            f"region of the k={k} symbol (envelope rate theta0*|k| = {eq.theta0 * ak:g})"
        )
    h = 1e-3
    t = 2.0
    while t <= 1200.0:
        rate = -(
            _log_integrand_bound(eq, ak, rho, t + h) - _log_integrand_bound(eq, ak, rho, t - h)
        ) / (2.0 * h)
        if rate > 1e-9:
            tail = math.exp(_log_integrand_bound(eq, ak, rho, t)) / rate
            if tail < TAIL_TOL:
                return t
        t += 0.5
    raise DomainError(
        f"could not certify a quadrature cutoff for k={k} with max(-Re lambda) = {rho:g}"
    )


def _quad_nodes(eq: Equilibrium, k: int, lam_arr: np.ndarray, extra: float = 0.0):
    """Composite Gauss-Legendre nodes and weights on [0, T] for a lambda batch.

    T comes from the certified envelope tail; panel width shrinks with
    the largest |Im lambda| (oscillation) and |Re lambda| (boundary
    layer) in the batch so 32 nodes per panel stay spectrally accurate.
    """
    rho = float(np.max(-lam_arr.real))
    T = _cutoff(eq, k, rho) + extra
    omega_max = float(np.max(np.abs(lam_arr.imag)))
    re_max = float(np.max(np.abs(lam_arr.real)))
    width = min(1.0, 20.0 / max(omega_max, 20.0), 16.0 / max(re_max, 16.0))
    n_panels = int(math.ceil(T / width))
    edges = np.linspace(0.0, T, n_panels + 1)
    half = 0.5 * (edges[1:] - edges[:-1])
    mid = 0.5 * (edges[1:] + edges[:-1])
    nodes = (mid[:, None] + half[:, None] * _GL_NODES[None, :]).ravel()
    weights = (half[:, None] * _GL_WEIGHTS[None, :]).ravel()
    return nodes, weights


def _transform_batch(lam_arr: np.ndarray, nodes: np.ndarray, f: np.ndarray) -> np.ndarray:
    out = np.empty(lam_arr.shape, dtype=complex)
    block = 256
    for s in range(0, lam_arr.size, block):
        out[s : s + block] = np.exp(-np.outer(lam_arr[s : s + block], nodes)) @ f
    return out


def laplace_symbol(eq: Equilibrium, k: int, lam):
    """Laplace transform of t mu_hat(k t) at lambda (scalar or array).

    Composite 32-node Gauss-Legendre on [0, T] with T chosen so the
    certified envelope tail is below 1e-15.  Raises DomainError outside
    the convergence region; for equilibria with a declared
    super-exponential envelope the symbol is entire and any lambda is
    accepted.
    """
    if k == 0:
        raise ValueError("k must be a nonzero integer")
    lam_arr = np.atleast_1d(np.asarray(lam, dtype=complex))
    nodes, weights = _quad_nodes(eq, k, lam_arr)
    f = weights * nodes * np.asarray(eq.mu_hat(k * nodes), dtype=float)
    out = _transform_batch(lam_arr, nodes, f)
    return complex(out[0]) if np.ndim(lam) == 0 else out


def _symbol_derivative(eq: Equilibrium, k: int, lam):
    """d/dlambda of laplace_symbol: transform of -t^2 mu_hat(k t).

    Differentiation under the integral; the integrand stays analytic in
    lambda, and the extra factor t costs two units of cutoff slack.
    """
    if k == 0:
        raise ValueError("k must be a nonzero integer")
    lam_arr = np.atleast_1d(np.asarray(lam, dtype=complex))
    nodes, weights = _quad_nodes(eq, k, lam_arr, extra=2.0)
    f = -weights * nodes**2 * np.asarray(eq.mu_hat(k * nodes), dtype=float)
    out = _transform_batch(lam_arr, nodes, f)
    return complex(out[0]) if np.ndim(lam) == 0 else out


def dispersion(eq: Equilibrium, k: int, lam):
    """Dispersion function D(k, lambda) = 1 + L[t mu_hat(kt)](lambda)."""
    return 1.0 + laplace_symbol(eq, k, lam)


def k_tail_threshold(eq: Equilibrium) -> int:
    """Smallest k0 with |L| <= 1/2 for all |k| >= k0 on Re lambda >= -theta0|k|/2.

    From |L| <= C0 / (theta0 |k| + Re lambda)^2 and Re lambda >= -theta0|k|/2:
    |L| <= 4 C0 / (theta0 k)^2, which is <= 1/2 once k >= sqrt(8 C0) / theta0.
    """
    return int(math.ceil(math.sqrt(8.0 * eq.C0) / eq.theta0))


def count_zeros(eq: Equilibrium, k: int, rect) -> int:
    """Number of dispersion zeros inside a rectangle, by winding number.

    rect = (re_min, re_max, im_max) describes Re in [re_min, re_max],
    Im in [-im_max, im_max].  The contour is sampled counterclockwise
    and refined (density doubling) until two consecutive refinements
    agree on the same integer with all phase increments below pi/2.
    Raises ContourError if |D| dips under 1e-8 on the contour.
    """
    a, b, om = rect
    if not (a < b and om > 0):
        raise ValueError(f"degenerate rectangle {rect}")
    if eq.hat_log_envelope is None and a <= -eq.theta0 * abs(k):
        raise DomainError(
            f"rectangle reaches Re lambda = {a:g}, outside the k={k} convergence region"
        )

    density = 8.0
    previous: Optional[int] = None
    for _ in range(9):
        pts = _rectangle_points(a, b, om, density)
        vals = 1.0 + laplace_symbol(eq, k, pts)
        clearance = float(np.min(np.abs(vals)))
        if clearance < CONTOUR_CLEARANCE:
            raise ContourError(
                f"|D| = {clearance:.3e} on the k={k} contour {rect}; "
                f"perturb the rectangle away from the zero"
            )
        steps = np.angle(vals[1:] / vals[:-1])
        raw = float(np.sum(steps) / (2.0 * np.pi))
        if np.max(np.abs(steps)) < 0.5 * np.pi and abs(raw - round(raw)) < 0.1:
            current = int(round(raw))
            if previous == current:
                return current
            previous = current
        else:
            previous = None
        density *= 2.0
    raise ContourError(
        f"winding number on {rect} did not stabilize for k={k}; a zero may "
        f"sit on or near the contour; perturb the rectangle"
    )


def _rectangle_points(a: float, b: float, om: float, density: float) -> np.ndarray:
    def edge(z0: complex, z1: complex) -> np.ndarray:
        n = max(16, int(math.ceil(abs(z1 - z0) * density)))
        s = np.linspace(0.0, 1.0, n, endpoint=False)
        return z0 + (z1 - z0) * s

    corners = [a - 1j * om, b - 1j * om, b + 1j * om, a + 1j * om]
    pts = np.concatenate(
        [edge(corners[i], corners[(i + 1) % 4]) for i in range(4)] + [[corners[0]]]
    )
    return pts


@dataclass(frozen=True)
class MarginResult:
    """Certified lower bound on |D| over the closed right half-plane.

    kappa0 is the minimum of the boundary scan and the two envelope tail
    bounds; offenders is nonempty (and kappa0 = 0) when a winding number
    found zeros with Re lambda >= 0.
    """

    kappa0: float
    k_at_min: int
    omega_at_min: float
    boundary_min: float
    omega_tail_bound: float
    k_tail_bound: float
    C1_fit: float
    windings: tuple = ()
    offenders: tuple = ()


def margin(eq: Equilibrium, k_max_scan: int = 4, omega_max: float = 50.0,
           n_omega: int = 10001) -> MarginResult:
    """Scan min_k inf_{Re lambda >= 0} |D(k, lambda)|.

    Winding numbers on [0, b] x [-omega_max, omega_max] first certify
    that D is zero-free in the right half-plane for each scanned k (the
    envelope bound |L| <= C0/(theta0 k + Re lambda)^2 confines any zero
    to Re lambda < b); the infimum then lives on the boundary Re = 0 or
    at infinity, so a refined scan over lambda = i omega plus tail
    bounds (fitted C1 for large omega, certified envelope for large k)
    yields the margin.  If a winding is nonzero the result carries the
    offending roots and kappa0 = 0.
    """
    if k_max_scan < 1:
        raise ValueError("k_max_scan must be >= 1")
    b = math.sqrt(2.0 * eq.C0) / eq.theta0 + 1.0

    windings = []
    offenders = []
    for k in range(1, k_max_scan + 1):
        w = count_zeros(eq, k, (0.0, b, omega_max))
        windings.append((k, (0.0, b, omega_max), w))
        if w != 0:
            lam, res = find_root(eq, k, _coarse_seed(eq, k, (0.0, b, 0.1, omega_max)))
            offenders.append((k, lam, res))
    if offenders:
        k0, lam0, _ = offenders[0]
        return MarginResult(
            kappa0=0.0, k_at_min=k0, omega_at_min=float(lam0.imag), boundary_min=0.0,
            omega_tail_bound=0.0, k_tail_bound=0.0, C1_fit=float("nan"),
            windings=tuple(windings), offenders=tuple(offenders),
        )

    omega = np.linspace(0.0, omega_max, n_omega)
    best = math.inf
    k_at, om_at = 1, 0.0
    C1 = 0.0
    for k in range(1, k_max_scan + 1):
        vals = 1.0 + laplace_symbol(eq, k, 1j * omega)
        absD = np.abs(vals)
        C1 = max(C1, float(np.max(np.abs(vals - 1.0) * (1.0 + k**2 + omega**2))))
        i0 = int(np.argmin(absD))
        lo = omega[max(i0 - 1, 0)]
        hi = omega[min(i0 + 1, n_omega - 1)]
        kmin, omin_at = float(absD[i0]), float(omega[i0])
        for _ in range(3):
            sub = np.linspace(lo, hi, 41)
            sv = np.abs(1.0 + laplace_symbol(eq, k, 1j * sub))
            j = int(np.argmin(sv))
            if sv[j] < kmin:
                kmin, omin_at = float(sv[j]), float(sub[j])
            lo, hi = sub[max(j - 1, 0)], sub[min(j + 1, 40)]
        if kmin < best:
            best, k_at, om_at = kmin, k, omin_at

    om_tail = 1.0 - C1 / (2.0 + omega_max**2)
    k_next = k_max_scan + 1
    k_tail = 1.0 - eq.C0 / (eq.theta0 * k_next) ** 2
    if k_tail <= 0.0:
        raise ValueError(
            f"k_max_scan = {k_max_scan} too small: envelope tail bound covers only "
            f"k >= {math.sqrt(eq.C0) / eq.theta0:.2f}"
        )
    kappa0 = min(best, om_tail, k_tail)
    return MarginResult(
        kappa0=kappa0, k_at_min=k_at, omega_at_min=om_at, boundary_min=best,
        omega_tail_bound=om_tail, k_tail_bound=k_tail, C1_fit=C1,
        windings=tuple(windings),
    )


def strip_width(eq: Equilibrium, k_max_scan: int = 4) -> float:
    """Largest theta <= theta0/2 with D zero-free on Re lambda in [-theta |k|, 0].

    Bisection to tolerance 1e-3, each probe certified by winding numbers
    over k up to max(k_max_scan, k_tail_threshold - 1); beyond that the
    envelope keeps |L| <= 1/2 throughout the strip so no zeros exist.
    Raises NoStableStripError when the stability margin vanishes.
    """
    m = margin(eq, k_max_scan=k_max_scan, omega_max=30.0, n_omega=2001)
    if m.kappa0 <= 0.0:
        raise NoStableStripError(
            f"{eq.name} has zeros in the closed right half-plane "
            f"(first at k = {m.k_at_min}); no stable strip exists"
        )
    ks = range(1, max(k_max_scan, k_tail_threshold(eq) - 1) + 1)
    b = math.sqrt(2.0 * eq.C0) / eq.theta0 + 1.0

    def zero_free(theta: float) -> bool:
        for k in ks:
            if count_zeros(eq, k, (-theta * k, b, 40.0)) != 0:
                return False
        return True

    hi = 0.5 * eq.theta0
    if zero_free(hi):
        return hi
    lo = 0.0
    while hi - lo > 1e-3:
        mid = 0.5 * (lo + hi)
        if zero_free(mid):
            lo = mid
        else:
            hi = mid
    if lo == 0.0:
        raise NoStableStripError(f"no zero-free strip found for {eq.name}")
    return lo


def find_root(eq: Equilibrium, k: int, seed: complex):
    """Newton iteration for a dispersion zero from the given seed.

    Returns (lambda_star, residual) with |D| < 1e-10, or raises
    RootConvergenceError after 50 iterations (also when an iterate
    leaves the analyticity region).  The derivative is the transform of
    -t^2 mu_hat(kt), obtained by differentiating under the integral.
    """
    lam = complex(seed)
    for _ in range(50):
        d = dispersion(eq, k, lam)
        if abs(d) < ROOT_RESIDUAL_TOL:
            return lam, abs(d)
        dp = _symbol_derivative(eq, k, lam)
        if abs(dp) < 1e-14:
            raise RootConvergenceError(
                f"vanishing dispersion derivative at {lam:.6g} (k={k}); "
                f"no zero nearby (|D| = {abs(d):.3e})"
            )
        step = d / dp
        lam = lam - step
        if eq.hat_log_envelope is None and lam.real <= -eq.theta0 * abs(k):
            raise RootConvergenceError(
                f"iterate {lam:.6g} left the k={k} analyticity region"
            )
    raise RootConvergenceError(
        f"no convergence after 50 iterations from seed {complex(seed):.6g} "
        f"(k={k}, last |D| = {abs(d):.3e})"
    )


def _coarse_seed(eq: Equilibrium, k: int, rect) -> complex:
    """Seed for find_root: argmin of |D| on a coarse grid over a rectangle."""
    a, b, i0, i1 = rect
    re = np.linspace(a, b, 48)
    im = np.linspace(i0, i1, 48)
    lam = (re[:, None] + 1j * im[None, :]).ravel()
    vals = np.abs(1.0 + laplace_symbol(eq, k, lam))
    return complex(lam[int(np.argmin(vals))])


def landau_root(eq: Equilibrium, k: int):
    """Dominant dispersion zero for mode k, seeded from a coarse grid scan.

    Searches the upper half of a rectangle sized from the equilibrium
    envelope: damped roots have -theta0 |k| < Re < 0 for generic
    envelopes, deeper for super-exponential ones; unstable roots sit at
    Re > 0 and are found by the same scan.
    """
    if eq.hat_log_envelope is not None:
        re0 = -2.95 * abs(k)
    else:
        re0 = -0.95 * eq.theta0 * abs(k)
    seed = _coarse_seed(eq, k, (re0, 1.0, 0.2, 2.5 * abs(k) + 3.0))
    return find_root(eq, k, seed)


@dataclass(frozen=True)
class DispersionReport:
    """Summary of the stability certification for one equilibrium.

    kappa0: half-plane margin (0 when unstable); theta1: zero-free strip
    width per |k|; k_tail: mode threshold beyond which the envelope tail
    bound applies; roots: (k, lambda, |D|) triples for located zeros;
    windings: (k, rect, integer) of every contour used.
    """

    equilibrium: str
    kappa0: float
    theta1: float
    k_tail: int
    roots: tuple = ()
    windings: tuple = ()
    scan: dict = field(default_factory=dict)


def full_report(eq: Equilibrium, k_max_scan: int = 4, omega_max: float = 50.0,
                n_omega: int = 10001, root_modes=(1, 2)) -> DispersionReport:
    """Run margin, strip width, and root location; collect one report."""
    m = margin(eq, k_max_scan=k_max_scan, omega_max=omega_max, n_omega=n_omega)
    roots = list(m.offenders)
    if m.kappa0 > 0.0:
        theta1 = strip_width(eq, k_max_scan=k_max_scan)
        for k in root_modes:
            try:
                lam, res = landau_root(eq, k)
            except (RootConvergenceError, DomainError):
                continue
            roots.append((k, lam, res))
    else:
        theta1 = 0.0
    return DispersionReport(
        equilibrium=eq.name,
        kappa0=m.kappa0,
        theta1=theta1,
        k_tail=k_tail_threshold(eq),
        roots=tuple(roots),
        windings=m.windings,
        scan={
            "k_max_scan": k_max_scan,
            "omega_max": omega_max,
            "n_omega": n_omega,
            "boundary_min": m.boundary_min,
            "omega_tail_bound": m.omega_tail_bound,
            "k_tail_bound": m.k_tail_bound,
            "C1_fit": m.C1_fit,
            "k_at_min": m.k_at_min,
            "omega_at_min": m.omega_at_min,
        },
    )
