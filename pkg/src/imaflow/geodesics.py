"""Mabuchi geodesics, d_p distances, and asymptotic rays via Legendre duality.

For symmetric potentials the full convex profile U(s) = u0(s) + phi has a
Legendre dual U*(tau) on the moment interval P, and Mabuchi geodesics are
linear segments in the dual variable.  Here duals are kept as exact convex
piecewise-linear functions (knots at the face slopes of the sampled U plus
the interval endpoints), so duality round-trips, convex combinations and
L^p distances of duals are computed without resampling error:

    d_p(phi_0, phi_1)^p = (1/|P|) int_P |U0* - U1*|^p dtau.

On the sphere backend the reduction coordinate is s = 2 log tan(theta/2);
the poles sit at s = -inf / +inf and enter the dual as the exact endpoint
values U*(tau_lo) = -U(-inf), U*(tau_hi) = lim (tau_hi * s - U).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .geometry import AdmissibilityError, Geometry
from .functionals import energy_E, functional_F, normalizing_constant

__all__ = [
    "DualProfile",
    "GeodesicSegment",
    "legendre_dual",
    "inverse_legendre",
    "geodesic_segment",
    "geodesic_point",
    "dp_distance",
    "RayReport",
    "asymptotic_ray",
    "ray_limit_integrability",
]


@dataclass(frozen=True)
class DualProfile:
    """Convex piecewise-linear Legendre dual on the moment interval."""

    tau: np.ndarray   # strictly increasing knots, spanning [tau_lo, tau_hi]
    val: np.ndarray

    def __post_init__(self):
        if self.tau.size != self.val.size or self.tau.size < 2:
            raise ValueError("dual profile needs matching knot/value arrays")

    @property
    def domain(self) -> tuple[float, float]:
        return float(self.tau[0]), float(self.tau[-1])

    @property
    def endpoint_slopes(self) -> tuple[float, float]:
        t, v = self.tau, self.val
        return (float((v[1] - v[0]) / (t[1] - t[0])),
                float((v[-1] - v[-2]) / (t[-1] - t[-2])))

    def __call__(self, tau: np.ndarray) -> np.ndarray:
        return np.interp(tau, self.tau, self.val)

    def convexity_defect(self) -> float:
        """Most negative discrete second difference (0 for convex)."""
        t, v = self.tau, self.val
        slopes = np.diff(v) / np.diff(t)
        if slopes.size < 2:
            return 0.0
        return min(0.0, float(np.min(np.diff(slopes))))


def _full_profile(geom: Geometry, phi: np.ndarray):
    """(s, U) samples on the finite part of the reduction coordinate."""
    if geom.backend == "sphere":
        return geom.s, geom.u0 + phi[1:-1]
    return geom.s, geom.u0 + phi


def legendre_dual(geom: Geometry, phi: np.ndarray) -> DualProfile:
    """Exact dual of the piecewise-linear extension of U = u0 + phi."""
    phi = np.asarray(phi, dtype=float)
    s, U = _full_profile(geom, phi)
    tau_lo, tau_hi = geom.moment_interval
    faces = np.diff(U) / np.diff(s)
    if np.any(~np.isfinite(faces)) or np.any(np.diff(faces) <= 0):
        raise AdmissibilityError("potential is not strictly convex in s")
    if faces[0] <= tau_lo or faces[-1] >= tau_hi:
        raise AdmissibilityError("face slopes leave the moment interval")
    # corner values: at tau = faces[k] the argmax switches from s_k to s_{k+1}
    corner = faces * s[:-1] - U[:-1]
    if geom.backend == "sphere":
        v_lo = -float(phi[0])        # -U(-inf); u0 -> 0 at the theta=0 pole
        v_hi = -float(phi[-1])       # lim tau_hi*s - U = -phi at theta=pi
    else:
        v_lo = tau_lo * s[0] - float(U[0])
        v_hi = tau_hi * s[-1] - float(U[-1])
    tau = np.concatenate(([tau_lo], faces, [tau_hi]))
    val = np.concatenate(([v_lo], corner, [v_hi]))
    return DualProfile(tau=tau, val=val)


def inverse_legendre(geom: Geometry, dual: DualProfile) -> np.ndarray:
    """Potential phi on the grid with dual-of-dual equal to `dual`."""
    t, v = dual.tau, dual.val
    # thresholds between consecutive knots: argmax switches where
    # s equals the dual chord slope
    thresholds = np.diff(v) / np.diff(t)
    s, _ = _full_profile(geom, np.zeros(geom.N))
    idx = np.searchsorted(thresholds, s, side="right")
    U_rec = t[idx] * s - v[idx]
    if geom.backend == "sphere":
        phi = np.empty(geom.N)
        phi[1:-1] = U_rec - geom.u0
        phi[0] = -v[0]
        phi[-1] = -v[-1]
        return phi
    return U_rec - geom.u0


def _merge(*duals: DualProfile) -> np.ndarray:
    return np.unique(np.concatenate([d.tau for d in duals]))


def _combine(d0: DualProfile, d1: DualProfile, a0: float, a1: float) -> DualProfile:
    tau = _merge(d0, d1)
    return DualProfile(tau=tau, val=a0 * d0(tau) + a1 * d1(tau))


def _lp_integral(tau: np.ndarray, delta: np.ndarray, p: float) -> float:
    """Exact integral of |delta|^p for a piecewise-linear delta on knots tau."""
    a = delta[:-1]
    b = delta[1:]
    dt = np.diff(tau)
    slope = (b - a) / dt
    flat = np.abs(slope) * dt <= 1e-14 * (np.abs(a) + np.abs(b) + 1e-300)
    out = np.empty_like(a)
    # antiderivative of |x|^p is |x|^(p+1) sign(x) / (p+1)
    G = lambda x: np.abs(x) ** (p + 1.0) * np.sign(x)
    nz = ~flat
    out[nz] = (G(b[nz]) - G(a[nz])) / (slope[nz] * (p + 1.0))
    out[flat] = (0.5 * (np.abs(a[flat]) + np.abs(b[flat]))) ** p * dt[flat]
    return float(np.sum(out))


def _dp_of_delta(tau: np.ndarray, delta: np.ndarray, p: float) -> float:
    length = tau[-1] - tau[0]
    return (_lp_integral(tau, delta, p) / length) ** (1.0 / p)


def dp_distance(geom: Geometry, phi0: np.ndarray, phi1: np.ndarray, p: float = 2.0,
                dual0: DualProfile | None = None,
                dual1: DualProfile | None = None) -> float:
    """Exact d_p distance: normalized L^p norm of the dual difference."""
    if p < 1.0:
        raise ValueError(f"d_p needs p >= 1, got {p}")
    if dual0 is None:
        dual0 = legendre_dual(geom, phi0)
    if dual1 is None:
        dual1 = legendre_dual(geom, phi1)
    tau = _merge(dual0, dual1)
    return _dp_of_delta(tau, dual0(tau) - dual1(tau), p)


@dataclass(frozen=True)
class GeodesicSegment:
    """Mabuchi geodesic between two admissible potentials, s in [0, 1]."""

    geom: Geometry
    phi0: np.ndarray
    phi1: np.ndarray
    dual0: DualProfile
    dual1: DualProfile

    def length(self, p: float = 2.0) -> float:
        return dp_distance(self.geom, self.phi0, self.phi1, p,
                           dual0=self.dual0, dual1=self.dual1)


def geodesic_segment(geom: Geometry, phi0: np.ndarray, phi1: np.ndarray) -> GeodesicSegment:
    return GeodesicSegment(geom=geom, phi0=np.asarray(phi0, float),
                           phi1=np.asarray(phi1, float),
                           dual0=legendre_dual(geom, phi0),
                           dual1=legendre_dual(geom, phi1))


def geodesic_point(seg: GeodesicSegment, s: float) -> np.ndarray:
    """Potential at parameter s of the segment (endpoints reproduced)."""
    if not (0.0 <= s <= 1.0):
        raise ValueError(f"segment parameter must lie in [0, 1], got {s}")
    dual = _combine(seg.dual0, seg.dual1, 1.0 - s, s)
    return inverse_legendre(seg.geom, dual)


# ----------------------------------------------------------------------
# Asymptotic rays
# ----------------------------------------------------------------------

@dataclass
class RayReport:
    """Geodesic-segment family from flow snapshots plus the limit candidate."""

    times: list[float]
    lengths_d2: list[float]
    trivial: bool
    reason: str = ""
    cauchy_defects: dict[float, list[float]] = field(default_factory=dict)
    slope_sup: list[float] = field(default_factory=list)
    slope_inf: list[float] = field(default_factory=list)
    F_samples: list[list[float]] = field(default_factory=list)
    F_ray_samples: list[float] = field(default_factory=list)
    ray_params: np.ndarray | None = None
    ray_potentials: np.ndarray | None = None      # rows: potentials along the ray
    limit_sup_normalized: np.ndarray | None = None
    limit_E_normalized: np.ndarray | None = None
    speed_defect: float = 0.0


def asymptotic_ray(
    geom: Geometry,
    h: np.ndarray,
    base_phi: np.ndarray,
    snapshots: list[tuple[float, np.ndarray]],
    p_list: tuple[float, ...] = (1.0, 2.0),
    n_ray_samples: int = 17,
    trivial_length: float = 1e-2,
) -> RayReport:
    """Unit-speed geodesic segments from base to flow snapshots.

    The trajectory is E-normalised first (all potentials shifted by
    -E(base_phi)), segments are reparametrised by d_2 arc length, and the
    pointwise limit candidate is taken from the sup-normalised family at the
    largest common parameter.
    """
    if len(snapshots) < 3:
        raise ValueError("need at least 3 snapshot times for a ray")
    E0 = energy_E(geom, base_phi)
    base = base_phi - E0
    dual_base = legendre_dual(geom, base)
    times = [t for t, _ in snapshots]
    duals = [legendre_dual(geom, phi - E0) for _, phi in snapshots]
    lengths = []
    for d in duals:
        tau = _merge(dual_base, d)
        lengths.append(_dp_of_delta(tau, d(tau) - dual_base(tau), 2.0))
    report = RayReport(times=times, lengths_d2=lengths, trivial=False)
    L_max = max(lengths)
    if L_max < trivial_length or lengths[-1] <= lengths[0]:
        report.trivial = True
        report.reason = (
            f"bounded trajectory: d2 lengths {lengths[0]:.3g} -> {lengths[-1]:.3g} "
            "give no diverging ray"
        )
        return report

    # unit-speed dual directions for each segment family
    tau_all = np.unique(np.concatenate([dual_base.tau] + [d.tau for d in duals]))
    base_vals = dual_base(tau_all)
    directions = [(d(tau_all) - base_vals) / L for d, L in zip(duals, lengths)]

    # d_p Cauchy defects between consecutive families on the common window
    for p in p_list:
        defects = []
        for j in range(len(duals) - 1):
            t_common = min(lengths[j], lengths[j + 1])
            diff = directions[j] - directions[j + 1]
            defects.append(t_common * _dp_of_delta(tau_all, diff, p))
        report.cauchy_defects[p] = defects

    # slope bounds between consecutive segments of each family (unit params)
    t_common_all = min(lengths)
    for j, dirj in enumerate(directions):
        a, b = t_common_all, 0.5 * t_common_all
        pa = inverse_legendre(geom, DualProfile(tau_all, base_vals + a * dirj))
        pb = inverse_legendre(geom, DualProfile(tau_all, base_vals + b * dirj))
        sl = (pa - pb) / (a - b)
        report.slope_sup.append(float(np.max(sl)))
        report.slope_inf.append(float(np.min(sl)))

    # F along each segment family (11 samples each)
    for dirj, L in zip(directions, lengths):
        Fs = []
        for t in np.linspace(0.0, L, 11):
            phi_t = inverse_legendre(geom, DualProfile(tau_all, base_vals + t * dirj))
            Fs.append(functional_F(geom, phi_t, h))
        report.F_samples.append(Fs)

    # the ray: last (longest-time) direction, sampled on [0, L_last]
    dir_ray = directions[-1]
    L_ray = lengths[-1]
    params = np.linspace(0.0, L_ray, n_ray_samples)
    pots = np.empty((n_ray_samples, geom.N))
    Fs = []
    for i, t in enumerate(params):
        pots[i] = inverse_legendre(geom, DualProfile(tau_all, base_vals + t * dir_ray))
        Fs.append(functional_F(geom, pots[i], h))
    report.ray_params = params
    report.ray_potentials = pots
    report.F_ray_samples = Fs

    # exact constant-speed check of the ray parametrisation
    mid = inverse_legendre(geom, DualProfile(tau_all, base_vals + 0.5 * L_ray * dir_ray))
    d_half = dp_distance(geom, pots[0], mid, 2.0)
    report.speed_defect = abs(d_half / (0.5 * L_ray) - 1.0)

    # limit candidates at the largest parameter, both normalisations
    last = pots[-1]
    report.limit_sup_normalized = last - float(np.max(last - base))
    report.limit_E_normalized = last - energy_E(geom, last)
    return report


def ray_limit_integrability(
    geom: Geometry,
    report: RayReport,
    alpha_grid: tuple[float, ...],
    base_phi: np.ndarray | None = None,
    growth_tol: float = 1e-3,
) -> dict:
    """Growth classification of (1/V) int e^{-alpha psi_t} dmu0 along the ray.

    psi_t is the sup-normalised ray potential phi^t - sup(phi^t - phi^0).
    Classes: 'bounded', 'log-linear' (log of the integral grows linearly in
    the ray parameter), 'super-linear'.
    """
    out = {"classes": {}, "log_series": {}, "params": None, "crossover": None}
    if report.trivial or report.ray_potentials is None:
        out["reason"] = report.reason or "trivial ray"
        for a in alpha_grid:
            out["classes"][a] = "bounded"
        return out
    params = report.ray_params
    base = base_phi if base_phi is not None else report.ray_potentials[0]
    logw = geom.log_weights
    logV = np.log(geom.V)
    out["params"] = params.tolist()
    for a in alpha_grid:
        series = []
        for pot in report.ray_potentials:
            psi = pot - float(np.max(pot - base))
            z = -a * psi + logw
            m = float(np.max(z))
            series.append(m + np.log(np.sum(np.exp(z - m))) - logV)
        series = np.asarray(series)
        out["log_series"][a] = series.tolist()
        half = len(series) // 2
        x = params[half:]
        y = series[half:]
        slope = float(np.polyfit(x, y, 1)[0]) if x.size > 2 else 0.0
        scale = max(1.0, abs(float(series[0])))
        if slope <= growth_tol * scale / max(params[-1], 1.0):
            out["classes"][a] = "bounded"
        else:
            # curvature of log-integral in the ray parameter
            quad = float(np.polyfit(x, y, 2)[0]) if x.size > 3 else 0.0
            sup_lin = quad * (x[-1] - x[0]) ** 2 > 0.1 * slope * (x[-1] - x[0])
            out["classes"][a] = "super-linear" if sup_lin else "log-linear"
    growing = [a for a in alpha_grid if out["classes"][a] != "bounded"]
    out["crossover"] = min(growing) if growing else None
    return out
