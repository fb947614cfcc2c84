"""Machine-checkable monitors for the a priori bounds along trajectories.

Every monitor is a pure function of the sampled scalar table (the trajectory
CSV) plus a few run constants, so re-running a monitor on a saved run
reproduces its report exactly.  Fitted constants are reported, never
hard-coded; exact constants are used where the proofs provide them
(A1 = sup phi_0, A2 = min rho_0, the Lemma constant -(n+1) E(phi_0), and
cdot(0) from the F-dissipation formula).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "MonitorReport",
    "ClassifierThresholds",
    "sustained_growth",
    "apriori_monitor",
    "alpha_monitor",
    "linear_growth_monitor",
    "trace_monitor",
    "convergence_classifier",
    "blowup_detector",
]

HOLDS = "holds"
HOLDS_FITTED = "holds-with-fitted-constant"
VIOLATED = "violated"


@dataclass
class MonitorReport:
    name: str
    verdict: str
    constants: dict = field(default_factory=dict)
    slacks: dict = field(default_factory=dict)      # name -> worst slack
    details: dict = field(default_factory=dict)
    classification: str = ""

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "verdict": self.verdict,
            "classification": self.classification,
            "constants": self.constants,
            "slacks": self.slacks,
            "details": self.details,
        }

    def to_text(self) -> str:
        lines = [f"monitor: {self.name}", f"verdict: {self.verdict}"]
        if self.classification:
            lines.append(f"classification: {self.classification}")
        for k in sorted(self.constants):
            lines.append(f"constant {k} = {self.constants[k]!r}")
        for k in sorted(self.slacks):
            lines.append(f"slack {k} = {self.slacks[k]!r}")
        for k in sorted(self.details):
            lines.append(f"{k}: {self.details[k]!r}")
        return "\n".join(lines) + "\n"


def _col(table: dict, name: str) -> np.ndarray:
    if name not in table:
        raise KeyError(f"trajectory table is missing column {name!r}")
    return np.asarray(table[name], dtype=float)


def _alpha_columns(table: dict) -> dict[float, np.ndarray]:
    out = {}
    for k in table:
        if k.startswith("ialpha_"):
            out[float(k[len("ialpha_"):])] = np.asarray(table[k], dtype=float)
    return dict(sorted(out.items()))


def _h_mean_phi(table: dict) -> np.ndarray:
    """(1/V) int h dmu_phi, reconstructed from M = entropy - h_term - (I-J)."""
    ent = _col(table, "entropy")
    I, J, M = _col(table, "I"), _col(table, "J"), _col(table, "M")
    return ent - (I - J) - M


def sustained_growth(t: np.ndarray, y: np.ndarray, tail_fraction: float = 1.0 / 3.0,
                     sigma: float = 3.0, abs_tol: float = 1e-8) -> dict:
    """Tail-slope test: positive fitted slope exceeding sigma * stderr."""
    t = np.asarray(t, float)
    y = np.asarray(y, float)
    n = max(3, int(np.ceil(t.size * tail_fraction)))
    tt, yy = t[-n:], y[-n:]
    if np.any(~np.isfinite(yy)):
        return {"slope": np.inf, "stderr": 0.0, "growing": True}
    A = np.vstack([tt - tt[0], np.ones_like(tt)]).T
    coef, res, *_ = np.linalg.lstsq(A, yy, rcond=None)
    slope = float(coef[0])
    dof = max(1, tt.size - 2)
    rss = float(res[0]) if res.size else float(np.sum((yy - A @ coef) ** 2))
    denom = float(np.sum((tt - tt.mean()) ** 2))
    stderr = np.sqrt(rss / dof / denom) if denom > 0 else np.inf
    scale = max(abs_tol, 1e-3 * max(1.0, float(np.max(np.abs(yy)))) / max(tt[-1] - tt[0], 1e-30))
    growing = slope > sigma * stderr and slope > scale
    return {"slope": slope, "stderr": float(stderr), "growing": bool(growing)}


@dataclass(frozen=True)
class ClassifierThresholds:
    tail_fraction: float = 1.0 / 3.0
    sigma: float = 3.0
    residual_drop: float = 0.5       # residual must end below drop * start
    blowup_threshold: float = 1e6


# ----------------------------------------------------------------------
# monitors
# ----------------------------------------------------------------------

def apriori_monitor(table: dict, meta: dict, tol: float = 1e-6) -> MonitorReport:
    """sup bound, rho lower bound, and the c(t) sandwich, exact constants."""
    t = _col(table, "t")
    if t.size < 2:
        raise ValueError("apriori monitor needs at least 2 samples")
    sup = _col(table, "sup")
    c = _col(table, "c")
    min_rho = _col(table, "min_rho")
    fdot = _col(table, "fdot")
    A1 = float(sup[0])
    A2 = float(min_rho[0])
    cdot0 = float(fdot[0])           # dc/dt = dF/dt along the flow (E const)
    inf_h = float(meta.get("inf_h", 0.0))
    s_sup = (t + A1) - sup
    s_rho = min_rho - (-t + c + A2)
    s_c_low = c - (c[0] + t * cdot0)
    s_c_up = (sup - inf_h) - c
    slacks = {
        "sup_bound": float(np.min(s_sup)),
        "rho_lower": float(np.min(s_rho)),
        "c_lower": float(np.min(s_c_low)),
        "c_upper": float(np.min(s_c_up)),
    }
    parts = {k: v >= -tol for k, v in slacks.items()}
    verdict = HOLDS if all(parts.values()) else VIOLATED
    return MonitorReport(
        name="apriori", verdict=verdict,
        constants={"A1": A1, "A2": A2, "cdot0": cdot0, "inf_h": inf_h},
        slacks=slacks, details={"parts": parts},
    )


def alpha_monitor(table: dict, meta: dict, alpha_list: tuple[float, ...],
                  tol: float = 1e-6) -> MonitorReport:
    """Assembled alpha inequality with exact constants, per sample.

    ((n+1)a - n) sup + (n+1)(1-a) E_0
        <= log I_a + (M_0 - F) + (1/V) int h dmu_phi + c
    for every 0 < a <= 1, with I_a the sup-normalised integrability value.
    """
    if any(a <= 0 for a in alpha_list):
        raise ValueError("alpha values must be positive")
    n = int(meta["n"])
    t = _col(table, "t")
    sup = _col(table, "sup")
    c = _col(table, "c")
    F = _col(table, "F")
    E0 = float(_col(table, "E")[0])
    M0 = float(_col(table, "M")[0])
    h_phi = _h_mean_phi(table)
    cols = _alpha_columns(table)
    slacks = {}
    ceilings = {}
    for a in alpha_list:
        if a > 1.0 + 1e-12:
            continue
        if a not in cols:
            raise KeyError(f"trajectory lacks integrability column for alpha={a:g}")
        with np.errstate(divide="ignore"):
            logI = np.log(cols[a])
        lhs = ((n + 1) * a - n) * sup + (n + 1) * (1.0 - a) * E0
        rhs = logI + (M0 - F) + h_phi + c
        slacks[a] = float(np.min(rhs - lhs))
        if (n + 1) * a - n > 1e-12:
            ceil = (logI + (M0 - F) + h_phi + c - (n + 1) * (1.0 - a) * E0)
            ceil /= (n + 1) * a - n
            ceilings[a] = {"implied_sup_ceiling": float(np.max(ceil)),
                           "observed_sup_max": float(np.max(sup))}
    verdict = HOLDS if all(v >= -tol for v in slacks.values()) else VIOLATED
    return MonitorReport(
        name="alpha", verdict=verdict,
        constants={"n": n, "E0": E0, "M0": M0},
        slacks={f"alpha_{a:g}": v for a, v in slacks.items()},
        details={"sup_ceilings": ceilings, "t_range": [float(t[0]), float(t[-1])]},
    )


def linear_growth_monitor(table: dict, meta: dict,
                          thresholds: ClassifierThresholds | None = None) -> MonitorReport:
    """Fit ||phi||_C0 <= M (t + 1) and test boundedness of the ratio."""
    th = thresholds or ClassifierThresholds()
    t = _col(table, "t")
    if t.size < 10:
        raise ValueError("linear growth monitor needs at least 10 samples")
    sup = _col(table, "sup")
    inf_ = _col(table, "inf")
    c0 = np.maximum(np.abs(sup), np.abs(inf_))
    tp1 = t + 1.0
    M_fit = float(np.sum(c0 * tp1) / np.sum(tp1 * tp1))
    ratio = c0 / tp1
    n_tail = max(3, int(np.ceil(t.size * th.tail_fraction)))
    tail = ratio[-n_tail:]
    tail_growth = sustained_growth(t, ratio, th.tail_fraction, th.sigma)
    bounded = not tail_growth["growing"]
    verdict = HOLDS_FITTED if bounded else "undecided"
    return MonitorReport(
        name="linear_growth", verdict=verdict,
        constants={"M": M_fit},
        slacks={"max_ratio": float(np.max(ratio))},
        details={
            "tail_ratio_first": float(tail[0]),
            "tail_ratio_last": float(tail[-1]),
            "tail_nonincreasing": bool(tail[-1] <= tail[0] + 1e-12),
            "tail_fit": tail_growth,
        },
    )


def trace_monitor(table: dict, meta: dict, tol: float = 1e-6) -> MonitorReport:
    """log Tr <= C + A osc(phi) + t - inf phi, with fitted A >= 1 and C."""
    t = _col(table, "t")
    osc = _col(table, "osc")
    inf_ = _col(table, "inf")
    mlt = _col(table, "max_log_trace")
    y = mlt - t + inf_
    # least-squares slope of y against osc, clamped to A >= 1
    var = float(np.sum((osc - osc.mean()) ** 2))
    A = 1.0 if var < 1e-20 else max(1.0, float(
        np.sum((osc - osc.mean()) * (y - y.mean())) / var))
    C = float(np.max(y - A * osc))
    slack = float(np.min(C + A * osc + t - inf_ - mlt))
    verdict = HOLDS_FITTED if slack >= -tol else VIOLATED
    return MonitorReport(
        name="trace", verdict=verdict,
        constants={"A": A, "C": C},
        slacks={"bound": slack},
        details={"max_log_trace_end": float(mlt[-1])},
    )


_INDICATOR_NAMES = (
    "sup_phi", "mean_phi_mu0", "J_d1proxy", "I_abs", "p_integral_log",
    "alpha_threshold_log", "osc", "neg_inf_phi", "dp_distance",
)


def convergence_classifier(
    table: dict,
    meta: dict,
    thresholds: ClassifierThresholds | None = None,
    dp_series: np.ndarray | None = None,
) -> MonitorReport:
    """Nine boundedness indicators over the tail of the run.

    All bounded with decreasing residual -> 'converging'; any sustained
    growth -> 'diverging'; otherwise 'undecided'.  `dp_series` optionally
    supplies exact d_p(0, phi_t) values computed from checkpoints; the
    J surrogate is used otherwise.
    """
    th = thresholds or ClassifierThresholds()
    n = int(meta["n"])
    t = _col(table, "t")
    E, I, J = _col(table, "E"), _col(table, "I"), _col(table, "J")
    sup, inf_, osc = _col(table, "sup"), _col(table, "inf"), _col(table, "osc")
    residual = _col(table, "residual")
    cols = _alpha_columns(table)
    if not cols:
        raise KeyError("trajectory has no integrability columns")
    p_star = meta.get("p_star")
    if p_star is None:
        above = [a for a in cols if a > 1.0 + 1e-12]
        p_star = min(above) if above else max(cols)
    if p_star not in cols:
        raise KeyError(f"integrability column for p*={p_star:g} missing")
    thresh_alpha = meta.get("alpha_threshold")
    if thresh_alpha is None:
        above = [a for a in cols if a > n / (n + 1.0) + 1e-9]
        thresh_alpha = min(above) if above else max(cols)
    with np.errstate(divide="ignore"):
        log_p_raw = np.log(cols[p_star]) - p_star * sup
        log_alpha = np.log(cols[thresh_alpha])
    dp = dp_series if dp_series is not None else J
    series = {
        "sup_phi": sup,
        "mean_phi_mu0": E + J,
        "J_d1proxy": J,
        "I_abs": np.abs(I),
        "p_integral_log": log_p_raw,
        "alpha_threshold_log": log_alpha,
        "osc": osc,
        "neg_inf_phi": -inf_,
        "dp_distance": dp,
    }
    fits = {}
    verdicts = {}
    for name in _INDICATOR_NAMES:
        g = sustained_growth(t, series[name], th.tail_fraction, th.sigma)
        fits[name] = g
        verdicts[name] = "growing" if g["growing"] else "bounded"
    n_grow = sum(1 for v in verdicts.values() if v == "growing")
    residual_drops = bool(residual[-1] <= th.residual_drop * max(residual[0], 1e-300)
                          or residual[-1] < 1e-6)
    if n_grow == 0 and residual_drops:
        cls = "converging"
    elif n_grow > 0:
        cls = "diverging"
    else:
        cls = "undecided"
    agreement = n_grow == 0 or n_grow == len(_INDICATOR_NAMES)
    return MonitorReport(
        name="classifier",
        verdict=HOLDS if cls != "undecided" else "undecided",
        classification=cls,
        constants={"p_star": float(p_star), "alpha_threshold": float(thresh_alpha)},
        slacks={},
        details={
            "indicators": verdicts,
            "fits": {k: v for k, v in fits.items()},
            "indicators_growing": n_grow,
            "agreement": agreement,
            "residual_start": float(residual[0]),
            "residual_end": float(residual[-1]),
            "dp_source": "exact" if dp_series is not None else "J-surrogate",
        },
    )


def blowup_detector(
    table: dict,
    meta: dict,
    alpha_grid: tuple[float, ...] | None = None,
    norm: str = "mean0",
    classification: str | None = None,
    checkpoints: list | None = None,
    geom=None,
    thresholds: ClassifierThresholds | None = None,
) -> MonitorReport:
    """Integrability blow-up tracker for diverging runs.

    Tracks (1/V) int e^{-alpha psi_t} dmu0 for psi_t = phi_t - mean(phi_t)
    in both normalisations, classifies per-alpha growth, estimates the
    critical exponent trend against n/(n+1), and (when checkpoint potentials
    are available) reports the concentration locus with a local log-slope.
    """
    th = thresholds or ClassifierThresholds()
    n = int(meta["n"])
    if classification is not None and classification != "diverging":
        return MonitorReport(
            name="blowup", verdict=HOLDS, classification=classification,
            details={"reason": "run not classified as diverging; no blow-up analysis"},
        )
    t = _col(table, "t")
    sup = _col(table, "sup")
    E, I, J = _col(table, "E"), _col(table, "I"), _col(table, "J")
    means = {"mean0": E + J, "meanphi": E - (I - J)}
    if norm not in means:
        raise ValueError(f"unknown normalisation {norm!r}")
    cols = _alpha_columns(table)
    grid = tuple(sorted(alpha_grid or cols))
    log_series = {}
    classes = {}
    for a in grid:
        if a not in cols:
            raise KeyError(f"missing integrability column alpha={a:g}")
        with np.errstate(divide="ignore"):
            base = np.log(cols[a])
        log_series[a] = {
            nm: base + a * (mean - sup) for nm, mean in means.items()
        }
        g = sustained_growth(t, log_series[a][norm], th.tail_fraction, th.sigma)
        classes[a] = "growing" if g["growing"] else "bounded"
    # empirical critical exponent per sample: least alpha whose integral
    # exceeds the configured threshold
    log_thr = np.log(th.blowup_threshold)
    acrit = np.full(t.size, np.nan)
    for i in range(t.size):
        over = [a for a in grid if log_series[a][norm][i] >= log_thr]
        if over:
            acrit[i] = min(over)
    have = np.isfinite(acrit)
    acrit_trend = None
    nonincreasing = None
    if np.any(have):
        vals = acrit[have]
        acrit_trend = {"first": float(vals[0]), "last": float(vals[-1])}
        nonincreasing = bool(np.all(np.diff(vals) <= 1e-12))
    conc = None
    if checkpoints and geom is not None:
        conc = []
        w = geom.weights
        s_coord = geom.grid.nodes
        for st in checkpoints:
            phi = st.phi
            mean0 = float(phi @ w) / geom.V
            psi = phi - mean0
            k = int(np.argmin(psi))
            lo, hi = max(0, k - 3), min(geom.N, k + 4)
            ds = np.abs(s_coord[lo:hi] - s_coord[k]) + 1e-30
            dpsi = psi[lo:hi] - psi[k]
            mask = ds > 1e-12
            slope = float(np.median(dpsi[mask] / ds[mask])) if np.any(mask) else 0.0
            conc.append({"t": float(st.t), "node": k,
                         "coordinate": float(s_coord[k]), "log_slope": slope})
    growing = [a for a in grid if classes[a] == "growing"]
    return MonitorReport(
        name="blowup", verdict=HOLDS_FITTED, classification="diverging",
        constants={"n_over_n_plus_1": n / (n + 1.0),
                   "threshold": th.blowup_threshold},
        details={
            "norm": norm,
            "classes": {f"{a:g}": classes[a] for a in grid},
            "alpha_crit_trend": acrit_trend,
            "alpha_crit_nonincreasing": nonincreasing,
            "alpha_crit_series": [None if not np.isfinite(v) else float(v) for v in acrit],
            "least_growing_alpha": min(growing) if growing else None,
            "log_series": {f"{a:g}": {nm: v.tolist() for nm, v in log_series[a].items()}
                           for a in grid},
            "concentration": conc,
        },
    )
