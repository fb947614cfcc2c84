"""Symmetry-reduced Fano backgrounds: grids, reference measure, volume ratio.

Two backends are provided, both reduced to one dimension by symmetry:

* ``sphere``  -- circle-invariant metrics on the Riemann sphere (n = 1).
  Fields live on a colatitude grid; the reduced coordinate is theta in
  [0, pi].  The grid is the Chebyshev extreme-point grid in x = cos(theta)
  (uniform in theta), differentiation is spectral collocation, and
  integration is Clenshaw-Curtis.  The volume ratio is
  R(phi) = 1 + Lap(phi) with Lap = d/dx[(1 - x^2) d/dx].

* ``radial``  -- rotation-invariant metrics on the projective plane (n = 2).
  Fields live on a logarithmic-radius grid s in [s_min, s_max]; internally
  everything is parametrised by the reference moment coordinate
  xi = sigma(s) in (0, 1), on a Chebyshev grid.  With the full convex
  potential U = u0 + phi, u0(s) = 3*lambda*log(1 + e^s), the volume ratio is
  R = (U' dU'/dxi) / (u0' du0'/dxi), a ratio of Monge-Ampere densities.

Both discretisations are chosen so that the structural identities of the
flow hold to machine precision on resolved fields: the ratio R integrates
to the class volume V, its linearisation is self-adjoint for the quadrature
weights, and the reference state phi = 0 gives R identically 1.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Literal

import numpy as np

__all__ = [
    "AdmissibilityError",
    "GeometryError",
    "Grid",
    "Geometry",
    "build_sphere_geometry",
    "build_radial_geometry",
    "volume_ratio",
    "trace_ratio",
    "integrate",
    "dirichlet_form",
    "is_admissible",
    "validate_potential",
]

MIN_NODES = 16


class GeometryError(ValueError):
    """Invalid backend configuration (bad lambda, node count, window)."""


class AdmissibilityError(ValueError):
    """The potential does not define a positive metric (min R <= 0)."""

    def __init__(self, message, min_value=None, node_index=None):
        super().__init__(message)
        self.min_value = min_value
        self.node_index = node_index


# ----------------------------------------------------------------------
# Chebyshev collocation primitives
# ----------------------------------------------------------------------

def chebyshev_nodes(M: int) -> np.ndarray:
    """Extreme points cos(j*pi/M), j = 0..M, returned in increasing order."""
    return np.cos(np.pi * np.arange(M, -1, -1) / M)


def chebyshev_diff_matrix(M: int) -> np.ndarray:
    """Differentiation matrix on the increasing extreme-point grid."""
    j = np.arange(M + 1)
    x = np.cos(j * np.pi / M)
    c = np.ones(M + 1)
    c[0] = 2.0
    c[-1] = 2.0
    c *= (-1.0) ** j
    dx = x[:, None] - x[None, :] + np.eye(M + 1)
    D = np.outer(c, 1.0 / c) / dx
    D -= np.diag(D.sum(axis=1))
    return D[::-1, ::-1].copy()


def clenshaw_curtis_weights(M: int) -> np.ndarray:
    """Clenshaw-Curtis weights for int_{-1}^{1} f dx on the increasing grid."""
    theta = np.pi * np.arange(M + 1) / M
    w = np.zeros(M + 1)
    v = np.ones(M - 1)
    if M % 2 == 0:
        w[0] = w[M] = 1.0 / (M * M - 1)
        for k in range(1, M // 2):
            v -= 2.0 * np.cos(2.0 * k * theta[1:M]) / (4 * k * k - 1)
        v -= np.cos(M * theta[1:M]) / (M * M - 1)
    else:
        w[0] = w[M] = 1.0 / (M * M)
        for k in range(1, (M - 1) // 2 + 1):
            v -= 2.0 * np.cos(2.0 * k * theta[1:M]) / (4 * k * k - 1)
    w[1:M] = 2.0 * v / M
    return w[::-1].copy()


def legendre_projector(x: np.ndarray, w: np.ndarray, degree: int) -> np.ndarray:
    """L2(dx)-orthogonal projector onto polynomials of degree <= degree.

    Uses the Legendre basis; w must be quadrature weights for dx exact on
    the products involved (Clenshaw-Curtis on the same grid).
    """
    P = np.polynomial.legendre.legvander(x, degree)
    inv_norms = (2.0 * np.arange(degree + 1) + 1.0) / 2.0
    return (P * inv_norms) @ (P.T * w)


def _sigmoid(s: np.ndarray) -> np.ndarray:
    out = np.empty_like(s)
    pos = s >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-s[pos]))
    es = np.exp(s[~pos])
    out[~pos] = es / (1.0 + es)
    return out


# ----------------------------------------------------------------------
# Data types
# ----------------------------------------------------------------------

@dataclass(frozen=True)
class Grid:
    """Reduced-coordinate nodes and quadrature weights for mu0 = omega0^n."""

    nodes: np.ndarray
    weights: np.ndarray

    @property
    def size(self) -> int:
        return self.nodes.size

    def __post_init__(self):
        if self.size < MIN_NODES:
            raise GeometryError(f"grid needs at least {MIN_NODES} nodes, got {self.size}")
        if not np.all(np.diff(self.nodes) > 0):
            raise GeometryError("grid nodes must be strictly increasing")
        if np.any(self.weights < 0):
            raise GeometryError("quadrature weights must be nonnegative")


@dataclass(frozen=True)
class Geometry:
    """A symmetry-reduced Fano background.

    Immutable after construction; all operations are pure functions of
    (geometry, potential) and safe to evaluate concurrently.
    """

    backend: Literal["sphere", "radial"]
    n: int
    lam: float
    V: float
    grid: Grid
    # interior log-radius coordinate and reference convex profile (for duality)
    s: np.ndarray = field(repr=False)
    u0: np.ndarray = field(repr=False)
    moment_interval: tuple[float, float] = (0.0, 1.0)
    mode_cap: int | None = None
    # private operator data
    _x: np.ndarray = field(repr=False, default=None)
    _D: np.ndarray = field(repr=False, default=None)
    _L: np.ndarray = field(repr=False, default=None)
    _proj: np.ndarray = field(repr=False, default=None)
    _xi: np.ndarray = field(repr=False, default=None)
    _u0p: np.ndarray = field(repr=False, default=None)
    _DP: np.ndarray = field(repr=False, default=None)

    @property
    def N(self) -> int:
        return self.grid.size

    @property
    def weights(self) -> np.ndarray:
        return self.grid.weights

    @property
    def log_weights(self) -> np.ndarray:
        return self._logw

    def __post_init__(self):
        object.__setattr__(self, "_logw", np.log(self.grid.weights))

    def project_modes(self, phi: np.ndarray) -> np.ndarray:
        """Project a field onto the resolved modal subspace (mode_cap)."""
        if self._proj is None:
            return phi
        return self._proj @ phi


# ----------------------------------------------------------------------
# Builders
# ----------------------------------------------------------------------

def _check_common(lam: float, N: int) -> None:
    if not (0.0 < lam <= 1.0):
        raise GeometryError(f"lambda must lie in (0, 1], got {lam}")
    if N < MIN_NODES:
        raise GeometryError(f"node count must be >= {MIN_NODES}, got {N}")


def build_sphere_geometry(lam: float, N: int, mode_cap: int | None = None) -> Geometry:
    """Circle-invariant background on the sphere, [omega0] = lam * c1.

    Total volume V = 4*pi*lam.  Nodes are colatitudes theta_j = j*pi/(N-1).
    """
    _check_common(lam, N)
    M = N - 1
    x = chebyshev_nodes(M)                      # increasing in x
    D = chebyshev_diff_matrix(M)
    cc = clenshaw_curtis_weights(M)
    L = D @ (np.diag(1.0 - x * x) @ D)
    proj = None
    if mode_cap is not None:
        if not (0 < mode_cap < N):
            raise GeometryError(f"mode_cap must lie in (0, N), got {mode_cap}")
        proj = legendre_projector(x, cc, mode_cap)
        L = L @ proj
    # theta decreasing in x; store fields in theta-increasing order
    theta = np.arccos(x)[::-1].copy()
    V = 4.0 * np.pi * lam
    w = (cc * (2.0 * np.pi * lam))[::-1].copy()
    w *= V / w.sum()
    # all operator data kept in theta-order: flip L, D, x accordingly
    flip = slice(None, None, -1)
    Lf = np.ascontiguousarray(L[flip, flip])
    Df = np.ascontiguousarray(D[flip, flip])
    xf = x[flip].copy()
    projf = None if proj is None else np.ascontiguousarray(proj[flip, flip])
    # interior log-radius coordinate s = 2 log tan(theta/2); poles at +-inf
    xi_int = xf[1:-1]
    s_int = np.log1p(-xi_int) - np.log1p(xi_int)    # log((1-x)/(1+x))
    u0_int = np.log(2.0) - np.log1p(xi_int)         # log(2/(1+x))
    grid = Grid(nodes=theta, weights=w)
    return Geometry(
        backend="sphere", n=1, lam=lam, V=V, grid=grid,
        s=s_int, u0=u0_int, moment_interval=(0.0, 1.0), mode_cap=mode_cap,
        _x=xf, _D=Df, _L=Lf, _proj=projf,
    )


def build_radial_geometry(
    lam: float,
    N: int,
    s_min: float = -24.0,
    s_max: float = 24.0,
    mode_cap: int | None = None,
) -> Geometry:
    """Rotation-invariant background on the projective plane (n = 2)."""
    _check_common(lam, N)
    if not (s_min < 0.0 < s_max):
        raise GeometryError("s window must contain 0")
    if abs(s_min) < 12.0 or s_max < 12.0:
        raise GeometryError("s window too small: need |s_min|, s_max >= 12")
    xi_min = float(_sigmoid(np.array([s_min]))[0])
    xi_max = float(_sigmoid(np.array([s_max]))[0])
    # mu0 mass outside the window, relative to V: xi_min^2 + (1 - xi_max^2)
    trunc = xi_min ** 2 + (1.0 - xi_max ** 2)
    if trunc > 1e-8:
        raise GeometryError(
            f"s window truncates {trunc:.2e} of the reference mass (> 1e-8)"
        )
    M = N - 1
    x = chebyshev_nodes(M)
    D = chebyshev_diff_matrix(M) * (2.0 / (xi_max - xi_min))
    cc = clenshaw_curtis_weights(M) * 0.5 * (xi_max - xi_min)
    xi = xi_min + 0.5 * (x + 1.0) * (xi_max - xi_min)
    proj = None
    if mode_cap is not None:
        if not (0 < mode_cap < N):
            raise GeometryError(f"mode_cap must lie in (0, N), got {mode_cap}")
        proj = legendre_projector(x, clenshaw_curtis_weights(M), mode_cap)
    V = (6.0 * np.pi * lam) ** 2
    dens = (2.0 * np.pi) ** 2 * 18.0 * lam ** 2 * xi   # d(mu0)/d(xi)
    w = cc * dens
    w *= V / w.sum()
    s = np.log(xi) - np.log1p(-xi)
    # u0 = 3 lam log(1 + e^s), evaluated stably for large |s|
    u0 = 3.0 * lam * (np.maximum(s, 0.0) + np.log1p(np.exp(-np.abs(s))))
    grid = Grid(nodes=s, weights=w)
    DP = D if proj is None else D @ proj   # fused derivative of capped fields
    return Geometry(
        backend="radial", n=2, lam=lam, V=V, grid=grid,
        s=s, u0=u0, moment_interval=(3.0 * lam * xi_min, 3.0 * lam * xi_max),
        mode_cap=mode_cap,
        _D=np.ascontiguousarray(D), _proj=proj, _xi=xi, _u0p=3.0 * lam * xi,
        _DP=np.ascontiguousarray(DP),
    )


# ----------------------------------------------------------------------
# Core operations
# ----------------------------------------------------------------------

def _sphere_R(geom: Geometry, phi: np.ndarray) -> np.ndarray:
    # subtracting phi[0] removes the constant mode exactly in floats
    return 1.0 + geom._L @ (phi - phi[0])


def _radial_Uprime(geom: Geometry, phi: np.ndarray) -> np.ndarray:
    xi = geom._xi
    return geom._u0p + xi * (1.0 - xi) * (geom._DP @ (phi - phi[0]))


def _radial_eigs(geom: Geometry, phi: np.ndarray):
    """Relative eigenvalues (U'/u0', dU'/du0') of omega_phi wrt omega_0."""
    Up = _radial_Uprime(geom, phi)
    dUp = geom._D @ Up
    lam3 = 3.0 * geom.lam
    return Up / geom._u0p, dUp / lam3


def volume_ratio(geom: Geometry, phi: np.ndarray) -> np.ndarray:
    """Pointwise ratio R = omega_phi^n / omega_0^n; raises if not positive."""
    phi = np.asarray(phi, dtype=float)
    if phi.shape != (geom.N,):
        raise ValueError(f"field has shape {phi.shape}, expected ({geom.N},)")
    if geom.backend == "sphere":
        R = _sphere_R(geom, phi)
    else:
        e1, e2 = _radial_eigs(geom, phi)
        R = e1 * e2
        if not np.all(np.isfinite(e1)) or np.min(e1) <= 0.0:
            k = int(np.argmin(e1))
            raise AdmissibilityError(
                f"potential not admissible: U' <= 0 at node {k}",
                min_value=float(np.min(e1)), node_index=k,
            )
    if not np.all(np.isfinite(R)) or np.min(R) <= 0.0:
        k = int(np.argmin(R))
        raise AdmissibilityError(
            f"potential not admissible: min volume ratio {np.min(R):.3e} at node {k}",
            min_value=float(np.min(R)), node_index=k,
        )
    return R


def is_admissible(geom: Geometry, phi: np.ndarray) -> bool:
    try:
        volume_ratio(geom, phi)
    except (AdmissibilityError, ValueError):
        return False
    return True


def trace_ratio(geom: Geometry, phi: np.ndarray) -> np.ndarray:
    """Trace of omega_phi with respect to omega_0 (sum of relative eigenvalues)."""
    if geom.backend == "sphere":
        return volume_ratio(geom, phi)
    volume_ratio(geom, phi)  # admissibility gate
    e1, e2 = _radial_eigs(geom, phi)
    return e1 + e2


def relative_eigenvalues(geom: Geometry, phi: np.ndarray):
    """Relative eigenvalues of omega_phi wrt omega_0; product equals volume_ratio."""
    if geom.backend == "sphere":
        return (volume_ratio(geom, phi),)
    volume_ratio(geom, phi)
    return _radial_eigs(geom, phi)


def integrate(
    geom: Geometry,
    f: np.ndarray,
    against: Literal["reference", "phi"] = "reference",
    R: np.ndarray | None = None,
    phi: np.ndarray | None = None,
) -> float:
    """Integral of f against mu0 (reference) or mu_phi (phi measure)."""
    f = np.asarray(f, dtype=float)
    if f.shape != (geom.N,):
        raise ValueError(f"field has shape {f.shape}, expected ({geom.N},)")
    if against == "reference":
        return float(f @ geom.weights)
    if against == "phi":
        if R is None:
            if phi is None:
                raise ValueError("phi-measure integration needs R or phi")
            R = volume_ratio(geom, phi)
        return float((f * R) @ geom.weights)
    raise ValueError(f"unknown measure {against!r}")


def dirichlet_form(geom: Geometry, phi: np.ndarray, f: np.ndarray, g: np.ndarray) -> float:
    """Dirichlet pairing int <grad f, grad g>_{omega_phi} dmu_phi.

    Defined through the linearisation of the volume ratio at phi so that the
    discrete Mabuchi dissipation identity is exact:
    int f * DR[phi](g) dmu0 = -dirichlet_form(phi, f, g).
    """
    w = geom.weights
    if geom.backend == "sphere":
        # conformal invariance in (real) dimension two: form independent of phi
        return float(-(f * w) @ (geom._L @ (g - g[0])))
    xi = geom._xi
    m_g = xi * (1.0 - xi) * (geom._DP @ (g - g[0]))
    Up = _radial_Uprime(geom, phi)
    lam3 = 3.0 * geom.lam
    # DR[g] = (m_g * dU'/dxi + U' * d m_g/dxi) / (3 lam * u0')
    dUp = geom._D @ Up
    dm = geom._D @ m_g
    DRg = (m_g * dUp + Up * dm) / (lam3 * geom._u0p)
    return float(-(f * w) @ DRg)


def validate_potential(geom: Geometry, phi: np.ndarray, tol: float = 1e-6) -> None:
    """Check admissibility and endpoint smoothness of a potential field."""
    R = volume_ratio(geom, phi)
    del R
    if geom.backend == "radial":
        # one-sided derivative in s at the window ends must vanish
        xi = geom._xi
        dphi = geom._D @ (phi - phi[0])
        ends = xi * (1.0 - xi) * dphi
        scale = max(1.0, float(np.max(np.abs(phi - phi[0]))))
        worst = max(abs(float(ends[0])), abs(float(ends[-1])))
        if worst > tol * scale:
            raise ValueError(
                f"endpoint derivative {worst:.2e} exceeds smoothness tolerance"
            )
    # sphere: smooth fields on the Chebyshev grid have d(phi)/d(theta) -> 0
    # at the poles automatically (phi is a function of cos(theta)).
