"""Two-link planar arm driven by four stimulated muscles.

The arm moves horizontally on a support, so gravity is absent and the only
passive load is viscous joint damping. Each muscle receives an excitation in
[0, 1], lags it through first-order activation dynamics, and contributes a
constant-moment-arm torque scaled by a hidden fatigue capacity factor. The
fatigue factor falls with activation and recovers at rest, which makes the
observation (angles and velocities only) non-Markovian: two states that look
identical can respond differently to the same stimulation.

Muscle order everywhere: [brachialis, triceps_medial, deltoid_posterior,
pectoralis_major]. Brachialis/triceps act on the elbow (+/-), deltoid and
pectoralis on the shoulder (-/+).

Units: radians, seconds, newton-meters, kilograms. Degrees appear only in
reporting code.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionError, InputError, SimulationError

DEG = math.pi / 180.0

MUSCLE_NAMES = ("brachialis", "triceps_medial", "deltoid_posterior",
                "pectoralis_major")
# joint index (0 = shoulder, 1 = elbow) and torque sign per muscle
MUSCLE_JOINT = (1, 1, 0, 0)
MUSCLE_SIGN = (1.0, -1.0, -1.0, 1.0)


@dataclass
class ArmConfig:
    l1: float = 0.30            # upper-arm length, m
    l2: float = 0.33            # forearm length, m
    m1: float = 2.0             # kg, support mass lumped in
    m2: float = 1.5
    damping: float = 0.3        # N*m*s/rad per joint
    shoulder_limits: tuple = (-60.0 * DEG, 150.0 * DEG)
    elbow_limits: tuple = (0.0 * DEG, 150.0 * DEG)
    substeps: int = 10          # inner integration steps per control step
    dt: float = 0.1             # control step, s
    episode_steps: int = 100
    retarget_step: int = 50
    f_max: tuple = (10.0, 10.0, 15.0, 15.0)   # N*m at full fresh activation
    tau_act: float = 0.1        # s
    tau_fat: float = 30.0       # s
    tau_rec: float = 60.0       # s
    phi_floor: float = 0.2
    reset_phi_range: tuple = (0.4, 1.0)

    def __post_init__(self):
        if min(self.l1, self.l2, self.m1, self.m2, self.tau_act) <= 0:
            raise InputError("physical constants must be positive")
        if self.shoulder_limits[0] >= self.shoulder_limits[1]:
            raise InputError("shoulder limits out of order")
        if self.elbow_limits[0] >= self.elbow_limits[1]:
            raise InputError("elbow limits out of order")
        # uniform-rod inertias about the proximal joint
        self.i1 = self.m1 * self.l1 * self.l1 / 3.0
        self.i2 = self.m2 * self.l2 * self.l2 / 3.0
        self.r1 = self.l1 / 2.0
        self.r2 = self.l2 / 2.0


@dataclass
class ArmState:
    theta: list                 # [shoulder, elbow] rad
    omega: list                 # [shoulder, elbow] rad/s
    act: list                   # activation per muscle, [0, 1]
    fatigue: list               # capacity factor per muscle, (phi_floor, 1]

    def copy(self) -> "ArmState":
        return ArmState(list(self.theta), list(self.omega),
                        list(self.act), list(self.fatigue))

    def observation(self) -> np.ndarray:
        return np.array([self.theta[0], self.theta[1],
                         self.omega[0], self.omega[1]])


@dataclass
class Target:
    shoulder: float
    elbow: float

    def as_array(self) -> np.ndarray:
        return np.array([self.shoulder, self.elbow])


def activation_step(a: float, e: float, tau: float, dt: float) -> float:
    """Exact solution of da/dt = (e - a)/tau over one interval."""
    if not 0.0 <= e <= 1.0:
        raise InputError(f"excitation {e} outside [0, 1]")
    a_next = e + (a - e) * math.exp(-dt / tau)
    return min(1.0, max(0.0, a_next))


def fatigue_step(phi: float, a: float, tau_fat: float, tau_rec: float,
                 dt: float, phi_floor: float = 0.2) -> float:
    """Forward-Euler step of dphi/dt = -a*phi/tau_fat + (1 - phi)/tau_rec."""
    dphi = -a * phi / tau_fat + (1.0 - phi) / tau_rec
    return min(1.0, max(phi_floor, phi + dt * dphi))


def fatigue_equilibrium(a: float, tau_fat: float, tau_rec: float) -> float:
    """Fixed point of the fatigue ODE under constant activation."""
    return (1.0 / tau_rec) / (a / tau_fat + 1.0 / tau_rec)


def muscle_torques(act, fatigue, cfg: ArmConfig) -> tuple:
    """Joint torques from constant moment arms: sum of sign*F_max*a*phi."""
    tau_s = tau_e = 0.0
    for m in range(4):
        t = MUSCLE_SIGN[m] * cfg.f_max[m] * act[m] * fatigue[m]
        if MUSCLE_JOINT[m] == 0:
            tau_s += t
        else:
            tau_e += t
    return tau_s, tau_e


def arm_dynamics(theta, omega, tau_s, tau_e, cfg: ArmConfig) -> tuple:
    """Joint accelerations of the planar two-link chain (no gravity)."""
    c2 = math.cos(theta[1])
    s2 = math.sin(theta[1])
    # standard manipulator inertia matrix for rod links
    h = cfg.m2 * cfg.l1 * cfg.r2
    m11 = cfg.i1 + cfg.i2 + cfg.m2 * cfg.l1 * cfg.l1 + 2.0 * h * c2
    m12 = cfg.i2 + h * c2
    m22 = cfg.i2
    # Coriolis/centrifugal terms
    c1 = -h * s2 * (2.0 * omega[0] * omega[1] + omega[1] * omega[1])
    c2v = h * s2 * omega[0] * omega[0]
    rhs1 = tau_s - c1 - cfg.damping * omega[0]
    rhs2 = tau_e - c2v - cfg.damping * omega[1]
    det = m11 * m22 - m12 * m12
    alpha_s = (m22 * rhs1 - m12 * rhs2) / det
    alpha_e = (m11 * rhs2 - m12 * rhs1) / det
    return alpha_s, alpha_e


def kinetic_energy(theta, omega, cfg: ArmConfig) -> float:
    c2 = math.cos(theta[1])
    h = cfg.m2 * cfg.l1 * cfg.r2
    m11 = cfg.i1 + cfg.i2 + cfg.m2 * cfg.l1 * cfg.l1 + 2.0 * h * c2
    m12 = cfg.i2 + h * c2
    m22 = cfg.i2
    return 0.5 * (m11 * omega[0] ** 2 + 2.0 * m12 * omega[0] * omega[1]
                  + m22 * omega[1] ** 2)


def reward(theta, target: Target, excitations, n_muscles: int = 4) -> float:
    """Squared joint error plus mean-excitation penalty; never positive."""
    err = ((theta[0] - target.shoulder) ** 2
           + (theta[1] - target.elbow) ** 2)
    return -err - sum(excitations) / n_muscles


def _clamp_joint(theta, omega, limits):
    if theta < limits[0]:
        return limits[0], 0.0 if omega < 0.0 else omega
    if theta > limits[1]:
        return limits[1], 0.0 if omega > 0.0 else omega
    return theta, omega


def env_step(state: ArmState, excitations, target: Target, cfg: ArmConfig,
             step_index: int = 0):
    """Advance one control step (cfg.dt split into cfg.substeps inner steps).

    Semi-implicit Euler for the rigid body, exact exponential update for
    activations, forward Euler for fatigue. Returns (next state, observation,
    reward, done). Reward is evaluated at the post-step pose against the
    current target.
    """
    e = [float(v) for v in excitations]
    if len(e) != 4:
        raise InputError(f"need 4 excitations, got {len(e)}")
    for v in e:
        if not 0.0 <= v <= 1.0 or not math.isfinite(v):
            raise InputError(f"excitation {v} outside [0, 1]")
    s = state.copy()
    h = cfg.dt / cfg.substeps
    # hot loop: locals only, activation decay factor hoisted
    k_act = math.exp(-h / cfg.tau_act)
    tau_fat, tau_rec = cfg.tau_fat, cfg.tau_rec
    floor = cfg.phi_floor
    act, fat = s.act, s.fatigue
    th, om = s.theta, s.omega
    fm = cfg.f_max
    damping, hmass = cfg.damping, cfg.m2 * cfg.l1 * cfg.r2
    i1, i2, m2l1sq = cfg.i1, cfg.i2, cfg.m2 * cfg.l1 * cfg.l1
    s_lo, s_hi = cfg.shoulder_limits
    e_lo, e_hi = cfg.elbow_limits
    for _ in range(cfg.substeps):
        for m in range(4):
            a = e[m] + (act[m] - e[m]) * k_act
            act[m] = 0.0 if a < 0.0 else (1.0 if a > 1.0 else a)
            dphi = -act[m] * fat[m] / tau_fat + (1.0 - fat[m]) / tau_rec
            p = fat[m] + h * dphi
            fat[m] = floor if p < floor else (1.0 if p > 1.0 else p)
        tau_e = fm[0] * act[0] * fat[0] - fm[1] * act[1] * fat[1]
        tau_s = fm[3] * act[3] * fat[3] - fm[2] * act[2] * fat[2]
        c2 = math.cos(th[1])
        s2 = math.sin(th[1])
        hb = hmass
        m11 = i1 + i2 + m2l1sq + 2.0 * hb * c2
        m12 = i2 + hb * c2
        rhs1 = tau_s + hb * s2 * (2.0 * om[0] * om[1] + om[1] * om[1]) \
            - damping * om[0]
        rhs2 = tau_e - hb * s2 * om[0] * om[0] - damping * om[1]
        det = m11 * i2 - m12 * m12
        alpha_s = (i2 * rhs1 - m12 * rhs2) / det
        alpha_e = (m11 * rhs2 - m12 * rhs1) / det
        om[0] += h * alpha_s
        om[1] += h * alpha_e
        th[0] += h * om[0]
        th[1] += h * om[1]
        if th[0] < s_lo:
            th[0] = s_lo
            if om[0] < 0.0:
                om[0] = 0.0
        elif th[0] > s_hi:
            th[0] = s_hi
            if om[0] > 0.0:
                om[0] = 0.0
        if th[1] < e_lo:
            th[1] = e_lo
            if om[1] < 0.0:
                om[1] = 0.0
        elif th[1] > e_hi:
            th[1] = e_hi
            if om[1] > 0.0:
                om[1] = 0.0
    for v in (*s.theta, *s.omega, *s.act, *s.fatigue):
        if not math.isfinite(v):
            raise SimulationError(f"non-finite state after integration: {s}")
    r = reward(s.theta, target, e)
    done = step_index + 1 >= cfg.episode_steps
    return s, s.observation(), r, done


@dataclass
class BatchArmState:
    """Stacked arm states for vectorized stepping of B independent arms."""

    theta: np.ndarray    # [B, 2]
    omega: np.ndarray    # [B, 2]
    act: np.ndarray      # [B, 4]
    fatigue: np.ndarray  # [B, 4]

    def __post_init__(self):
        n = self.theta.shape[0]
        if (self.theta.shape != (n, 2) or self.omega.shape != (n, 2)
                or self.act.shape != (n, 4) or self.fatigue.shape != (n, 4)):
            raise DimensionError(
                f"inconsistent batch state shapes: theta {self.theta.shape}, "
                f"omega {self.omega.shape}, act {self.act.shape}, "
                f"fatigue {self.fatigue.shape}")

    def __len__(self) -> int:
        return self.theta.shape[0]

    def copy(self) -> "BatchArmState":
        return BatchArmState(self.theta.copy(), self.omega.copy(),
                             self.act.copy(), self.fatigue.copy())

    def observation(self) -> np.ndarray:
        return np.concatenate([self.theta, self.omega], axis=1)

    def row(self, i: int) -> ArmState:
        return ArmState(theta=[float(v) for v in self.theta[i]],
                        omega=[float(v) for v in self.omega[i]],
                        act=[float(v) for v in self.act[i]],
                        fatigue=[float(v) for v in self.fatigue[i]])


def batch_env_reset(rng: np.random.Generator, cfg: ArmConfig, n: int):
    """Reset n arms at once. Returns (state, observations [n,4], targets [n,2])."""
    if n < 1:
        raise InputError(f"need at least one arm, got {n}")
    theta = np.stack([
        rng.uniform(cfg.shoulder_limits[0], cfg.shoulder_limits[1], size=n),
        rng.uniform(cfg.elbow_limits[0], cfg.elbow_limits[1], size=n),
    ], axis=1)
    omega = np.zeros((n, 2))
    act = np.zeros((n, 4))
    lo, hi = cfg.reset_phi_range
    fatigue = rng.uniform(lo, hi, size=(n, 4))
    targets = np.stack([
        rng.uniform(cfg.shoulder_limits[0], cfg.shoulder_limits[1], size=n),
        rng.uniform(cfg.elbow_limits[0], cfg.elbow_limits[1], size=n),
    ], axis=1)
    state = BatchArmState(theta, omega, act, fatigue)
    return state, state.observation(), targets


def batch_reward(theta: np.ndarray, targets: np.ndarray,
                 excitations: np.ndarray) -> np.ndarray:
    err = ((theta[:, 0] - targets[:, 0]) ** 2
           + (theta[:, 1] - targets[:, 1]) ** 2)
    return -err - excitations.mean(axis=1)


def batch_env_step(state: BatchArmState, excitations: np.ndarray,
                   targets: np.ndarray, cfg: ArmConfig):
    """Vectorized env_step over a batch of arms sharing one step clock.

    Same update equations and ordering as env_step; agreement is float64
    elementwise, so batched and scalar rollouts match to roundoff. Returns
    (next state, observations [B,4], rewards [B]).
    """
    e = np.asarray(excitations, dtype=float)
    b = len(state)
    if e.shape != (b, 4):
        raise InputError(f"excitations shape {e.shape}, expected {(b, 4)}")
    if not np.all(np.isfinite(e)) or np.any(e < 0.0) or np.any(e > 1.0):
        raise InputError("excitations must be finite and inside [0, 1]")
    th = state.theta.copy()
    om = state.omega.copy()
    act = state.act.copy()
    fat = state.fatigue.copy()
    h = cfg.dt / cfg.substeps
    k_act = math.exp(-h / cfg.tau_act)
    fm = cfg.f_max
    hb = cfg.m2 * cfg.l1 * cfg.r2
    m2l1sq = cfg.m2 * cfg.l1 * cfg.l1
    s_lo, s_hi = cfg.shoulder_limits
    e_lo, e_hi = cfg.elbow_limits
    for _ in range(cfg.substeps):
        act = e + (act - e) * k_act
        np.clip(act, 0.0, 1.0, out=act)
        dphi = -act * fat / cfg.tau_fat + (1.0 - fat) / cfg.tau_rec
        fat = fat + h * dphi
        np.clip(fat, cfg.phi_floor, 1.0, out=fat)
        tau_e = fm[0] * act[:, 0] * fat[:, 0] - fm[1] * act[:, 1] * fat[:, 1]
        tau_s = fm[3] * act[:, 3] * fat[:, 3] - fm[2] * act[:, 2] * fat[:, 2]
        c2 = np.cos(th[:, 1])
        s2 = np.sin(th[:, 1])
        m11 = cfg.i1 + cfg.i2 + m2l1sq + 2.0 * hb * c2
        m12 = cfg.i2 + hb * c2
        rhs1 = tau_s + hb * s2 * (2.0 * om[:, 0] * om[:, 1]
                                  + om[:, 1] * om[:, 1]) - cfg.damping * om[:, 0]
        rhs2 = tau_e - hb * s2 * om[:, 0] * om[:, 0] - cfg.damping * om[:, 1]
        det = m11 * cfg.i2 - m12 * m12
        om[:, 0] += h * ((cfg.i2 * rhs1 - m12 * rhs2) / det)
        om[:, 1] += h * ((m11 * rhs2 - m12 * rhs1) / det)
        th += h * om
        low = th[:, 0] < s_lo
        high = th[:, 0] > s_hi
        th[:, 0] = np.clip(th[:, 0], s_lo, s_hi)
        om[:, 0] = np.where(low & (om[:, 0] < 0.0), 0.0, om[:, 0])
        om[:, 0] = np.where(high & (om[:, 0] > 0.0), 0.0, om[:, 0])
        low = th[:, 1] < e_lo
        high = th[:, 1] > e_hi
        th[:, 1] = np.clip(th[:, 1], e_lo, e_hi)
        om[:, 1] = np.where(low & (om[:, 1] < 0.0), 0.0, om[:, 1])
        om[:, 1] = np.where(high & (om[:, 1] > 0.0), 0.0, om[:, 1])
    nxt = BatchArmState(th, om, act, fat)
    if not (np.all(np.isfinite(th)) and np.all(np.isfinite(om))):
        raise SimulationError("non-finite state after batched integration")
    return nxt, nxt.observation(), batch_reward(th, targets, e)


def random_target(rng: np.random.Generator, cfg: ArmConfig) -> Target:
    return Target(
        shoulder=rng.uniform(*cfg.shoulder_limits),
        elbow=rng.uniform(*cfg.elbow_limits),
    )


def env_reset(rng: np.random.Generator, cfg: ArmConfig):
    """Random pose and fatigue, zero velocity and activation, random target."""
    lo, hi = cfg.reset_phi_range
    state = ArmState(
        theta=[rng.uniform(*cfg.shoulder_limits), rng.uniform(*cfg.elbow_limits)],
        omega=[0.0, 0.0],
        act=[0.0, 0.0, 0.0, 0.0],
        fatigue=[rng.uniform(lo, hi) for _ in range(4)],
    )
    return state, state.observation(), random_target(rng, cfg)


def mid_episode_retarget(step_index: int, rng: np.random.Generator,
                         cfg: ArmConfig):
    """A fresh random target exactly at the retarget step, else None."""
    if step_index == cfg.retarget_step:
        return random_target(rng, cfg)
    return None
