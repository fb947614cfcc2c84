"""Time integration of the inverse Monge-Ampere flow  d(phi)/dt = 1 - e^rho.

The normalizing constant c(t) is recomputed from the stage potential inside
every Runge-Kutta stage, so each stage evaluates exactly the right-hand side
1 - e^{h - phi + c(phi) - log R(phi)}.  Steps whose stage fields lose
admissibility (min R <= 0 or non-finite values) are rejected and retried at
half the step until a configured floor; every attempt starts again from the
configured dt, which keeps the integrator stateless and resume-exact.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .geometry import AdmissibilityError, Geometry, volume_ratio
from .functionals import (
    FunctionalRecord,
    energy_E,
    entropy,
    functional_record,
    mean_phi_measure,
    normalizing_constant,
)

__all__ = [
    "FlowState",
    "FlowParams",
    "Trajectory",
    "MonotonicityLedger",
    "IntegrationFailure",
    "make_state",
    "flow_rhs",
    "ricci_potential",
    "fixed_point_residual",
    "step",
    "run_flow",
]


class IntegrationFailure(RuntimeError):
    """Raised when the step size underflows the floor; carries diagnostics."""

    def __init__(self, message, t, min_ratio, node_index):
        super().__init__(message)
        self.t = t
        self.min_ratio = min_ratio
        self.node_index = node_index


@dataclass
class FlowState:
    """One accepted point of the flow: time, potential, derived fields."""

    t: float
    phi: np.ndarray
    c: float
    rho: np.ndarray
    R: np.ndarray
    steps_taken: int = 0
    rejected_steps: int = 0

    @property
    def residual(self) -> float:
        return float(np.max(np.abs(1.0 - np.exp(self.rho))))


@dataclass
class MonotonicityLedger:
    """Running extremes of the per-step identities over a whole run.

    Anchors (E0, sup_phi0) are set once at the true start of the run and
    persisted through checkpoints so a resumed run keeps accumulating the
    same quantities.
    """

    E0: float = 0.0
    sup_phi0: float = 0.0
    max_dF: float = -np.inf
    max_dM: float = -np.inf
    max_dc: float = -np.inf
    max_E_drift: float = 0.0         # max |E(t) - E0|
    max_norm_defect: float = 0.0     # |(1/V) int e^rho dmu_phi - 1|
    max_sup_slack: float = -np.inf   # sup phi(t) - sup phi(0) - t
    min_MF_gap: float = np.inf       # min over steps of M - F

    def as_dict(self) -> dict:
        return {k: float(v) for k, v in self.__dict__.items()}

    @classmethod
    def from_dict(cls, d: dict) -> "MonotonicityLedger":
        led = cls()
        for k, v in d.items():
            setattr(led, k, float(v))
        return led


@dataclass
class Trajectory:
    times: list[float] = field(default_factory=list)
    records: list[FunctionalRecord] = field(default_factory=list)
    checkpoints: list[FlowState] = field(default_factory=list)
    cause: str = ""
    ledger: MonotonicityLedger = field(default_factory=MonotonicityLedger)
    steps_taken: int = 0
    rejected_steps: int = 0
    failure: IntegrationFailure | None = None


@dataclass(frozen=True)
class FlowParams:
    dt: float = 1e-2
    t_max: float = 1.0
    dt_floor: float = 1e-9
    residual_threshold: float = 1e-6     # <= 0 disables the residual stop
    scheme: str = "explicit-rk4"         # or "explicit-euler"
    sample_every: int = 100              # accepted steps between records
    checkpoint_every: int = 0            # accepted steps between checkpoints
    alpha_grid: tuple[float, ...] = ()

    def __post_init__(self):
        if self.dt <= 0:
            raise ValueError("dt must be positive")
        if self.scheme not in ("explicit-rk4", "explicit-euler"):
            raise ValueError(f"unknown scheme {self.scheme!r}")


def ricci_potential(geom: Geometry, phi: np.ndarray, h: np.ndarray):
    """rho = h - phi + c - log R, with (1/V) int e^rho dmu_phi = 1 exactly."""
    R = volume_ratio(geom, phi)
    c = normalizing_constant(geom, phi, h)
    return h - phi + c - np.log(R), c, R


def flow_rhs(geom: Geometry, phi: np.ndarray, h: np.ndarray) -> np.ndarray:
    rho, _, _ = ricci_potential(geom, phi, h)
    return 1.0 - np.exp(rho)


def fixed_point_residual(geom: Geometry, phi: np.ndarray, h: np.ndarray) -> float:
    rho, _, _ = ricci_potential(geom, phi, h)
    return float(np.max(np.abs(1.0 - np.exp(rho))))


def make_state(geom: Geometry, phi: np.ndarray, h: np.ndarray, t: float = 0.0,
               steps_taken: int = 0, rejected_steps: int = 0) -> FlowState:
    phi = np.asarray(phi, dtype=float).copy()
    rho, c, R = ricci_potential(geom, phi, h)
    return FlowState(t=t, phi=phi, c=c, rho=rho, R=R,
                     steps_taken=steps_taken, rejected_steps=rejected_steps)


class _Engine:
    """Hot-path evaluation of R, c, rho, rhs with arrays pre-bound.

    Identical arithmetic to volume_ratio / normalizing_constant / flow_rhs;
    skips the per-call validation of the public operations.
    """

    def __init__(self, geom: Geometry, h: np.ndarray):
        self.geom = geom
        self.h = h
        self.logw = geom.log_weights
        self.logV = float(np.log(geom.V))
        self.sphere = geom.backend == "sphere"
        if self.sphere:
            self.L = geom._L
        else:
            self.D = geom._D
            self.xi1m = geom._xi * (1.0 - geom._xi)
            self.u0p = geom._u0p
            self.inv_u0p = 1.0 / geom._u0p
            self.inv_3lam = 1.0 / (3.0 * geom.lam)
            self.DP = geom._DP

    def ratio(self, phi):
        """Volume ratio or None when inadmissible / non-finite."""
        if self.sphere:
            R = 1.0 + self.L @ (phi - phi[0])
            m = R.min()
            if not (m > 0.0) or not np.isfinite(m):
                return None
            return R
        Up = self.u0p + self.xi1m * (self.DP @ (phi - phi[0]))
        m = Up.min()
        if not (m > 0.0):
            return None
        R = (Up * self.inv_u0p) * ((self.D @ Up) * self.inv_3lam)
        m = R.min()
        if not (m > 0.0) or not np.isfinite(m):
            return None
        return R

    def c_of(self, phi):
        z = self.h - phi + self.logw
        m = z.max()
        return -(m + np.log(np.exp(z - m).sum()) - self.logV)

    def rhs(self, phi):
        R = self.ratio(phi)
        if R is None:
            return None
        c = self.c_of(phi)
        rho = self.h - phi + c - np.log(R)
        return 1.0 - np.exp(rho)

    def refresh(self, phi, t, steps, rejected):
        R = self.ratio(phi)
        if R is None:
            return None
        c = self.c_of(phi)
        rho = self.h - phi + c - np.log(R)
        return FlowState(t=t, phi=phi, c=c, rho=rho, R=R,
                         steps_taken=steps, rejected_steps=rejected)


def _try_rhs(geom: Geometry, phi: np.ndarray, h: np.ndarray):
    """rhs or None when the field is inadmissible / non-finite."""
    try:
        R = volume_ratio(geom, phi)
    except (AdmissibilityError, ValueError):
        return None
    c = normalizing_constant(geom, phi, h)
    rho = h - phi + c - np.log(R)
    return 1.0 - np.exp(rho)


def _attempt(eng: _Engine, phi, dt, scheme):
    k1 = eng.rhs(phi)
    if k1 is None:
        return None
    if scheme == "explicit-euler":
        return phi + dt * k1
    k2 = eng.rhs(phi + (0.5 * dt) * k1)
    if k2 is None:
        return None
    k3 = eng.rhs(phi + (0.5 * dt) * k2)
    if k3 is None:
        return None
    k4 = eng.rhs(phi + dt * k3)
    if k4 is None:
        return None
    return phi + (dt / 6.0) * (k1 + 2.0 * (k2 + k3) + k4)


def _step_engine(eng: _Engine, state: FlowState, dt: float, scheme: str,
                 dt_floor: float) -> FlowState:
    geom = eng.geom
    phi = state.phi
    rejected = 0
    dtc = dt
    while True:
        new = _attempt(eng, phi, dtc, scheme)
        if new is not None:
            if geom.mode_cap is not None:
                new = geom.project_modes(new)
            st = eng.refresh(new, state.t + dtc, state.steps_taken + 1,
                             state.rejected_steps + rejected)
            if st is not None:
                return st
        rejected += 1
        dtc *= 0.5
        if dtc < dt_floor:
            try:
                R = volume_ratio(geom, phi)
                min_ratio, node = float(np.min(R)), int(np.argmin(R))
            except AdmissibilityError as exc:
                min_ratio, node = exc.min_value, exc.node_index
            raise IntegrationFailure(
                f"step size underflow below {dt_floor:g} at t={state.t:.6g}",
                t=state.t, min_ratio=min_ratio, node_index=node,
            )


def step(geom: Geometry, state: FlowState, h: np.ndarray, dt: float,
         scheme: str = "explicit-rk4", dt_floor: float = 1e-9) -> FlowState:
    """Advance one accepted step; halves dt on admissibility failure."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    return _step_engine(_Engine(geom, h), state, dt, scheme, dt_floor)


def _cheap_scalars(geom: Geometry, st: FlowState, h: np.ndarray):
    """Per-step E, F, M and the normalization defect (no integrability)."""
    w = geom.weights
    E = energy_E(geom, st.phi, R=st.R)
    F = st.c - E
    ent = entropy(geom, st.phi, R=st.R)
    h_term = float((h * st.R) @ w) / geom.V
    i_minus_j = E - mean_phi_measure(geom, st.phi, R=st.R)
    M = ent - h_term - i_minus_j
    norm_defect = abs(float((np.exp(st.rho) * st.R) @ w) / geom.V - 1.0)
    return E, F, M, norm_defect


def run_flow(
    geom: Geometry,
    h: np.ndarray,
    phi0: np.ndarray,
    params: FlowParams,
    start_state: FlowState | None = None,
    ledger: MonotonicityLedger | None = None,
    track_step_monotonicity: bool = True,
) -> Trajectory:
    """Integrate the flow; returns sampled records, checkpoints, cause.

    `start_state` (with its `ledger`) resumes from a checkpoint; phi0 is
    ignored in that case and the tail of the run reproduces an
    uninterrupted integration bit for bit.
    """
    fresh = start_state is None
    if fresh:
        st = make_state(geom, phi0, h)  # raises on inadmissible phi0
    else:
        st = start_state
    traj = Trajectory()
    if ledger is not None:
        traj.ledger = ledger
    led = traj.ledger
    if fresh:
        led.E0 = energy_E(geom, st.phi)
        led.sup_phi0 = float(np.max(st.phi))
    prev = _cheap_scalars(geom, st, h) if track_step_monotonicity else None

    def sample(state: FlowState):
        rec = functional_record(geom, state.phi, h, t=state.t,
                                alpha_grid=params.alpha_grid,
                                rho=state.rho, R=state.R, c=state.c)
        traj.times.append(state.t)
        traj.records.append(rec)

    if st.steps_taken == 0:
        sample(st)
        traj.checkpoints.append(st)

    eng = _Engine(geom, h)
    while True:
        if st.t >= params.t_max - 1e-12:
            traj.cause = "t_max"
            break
        if params.residual_threshold > 0 and st.residual < params.residual_threshold:
            traj.cause = "residual"
            break
        try:
            new = _step_engine(eng, st, params.dt, params.scheme, params.dt_floor)
        except IntegrationFailure as exc:
            traj.cause = "failure"
            traj.failure = exc
            break
        if track_step_monotonicity:
            cur = _cheap_scalars(geom, new, h)
            led.max_dF = max(led.max_dF, cur[1] - prev[1])
            led.max_dM = max(led.max_dM, cur[2] - prev[2])
            led.max_dc = max(led.max_dc, new.c - st.c)
            led.max_E_drift = max(led.max_E_drift, abs(cur[0] - led.E0))
            led.max_norm_defect = max(led.max_norm_defect, cur[3])
            led.min_MF_gap = min(led.min_MF_gap, cur[2] - cur[1])
            prev = cur
        led.max_sup_slack = max(
            led.max_sup_slack, float(np.max(new.phi)) - led.sup_phi0 - new.t)
        st = new
        if params.sample_every and st.steps_taken % params.sample_every == 0:
            sample(st)
        if params.checkpoint_every and st.steps_taken % params.checkpoint_every == 0:
            traj.checkpoints.append(st)

    if not traj.times or traj.times[-1] != st.t:
        sample(st)
    if not traj.checkpoints or traj.checkpoints[-1].steps_taken != st.steps_taken:
        traj.checkpoints.append(st)
    traj.steps_taken = st.steps_taken
    traj.rejected_steps = st.rejected_steps
    return traj
