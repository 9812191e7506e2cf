"""Typed views over the flat kernel state and the four observation channels."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .._kernels import layout as LY

P_DIM = 17   # theta, theta rate, 4 limbs, 4 limb rates, z, 6 last actions
E_DIM = 2    # velocity, friction
I_DIM = 4    # contact forces
C_DIM = 2    # velocity command, gait flag

P_NAMES = (["theta", "theta_rate"] + [f"limb{k}" for k in range(4)] + [f"limb_vel{k}" for k in range(4)]
           + ["z_base"] + [f"last_action{k}" for k in range(6)])


@dataclass
class EnvState:
    x: float = 0.0
    v: float = 0.0
    z_base: float = 0.30
    limbs: np.ndarray = field(default_factory=lambda: np.full(4, 0.5))
    limb_vel: np.ndarray = field(default_factory=lambda: np.zeros(4))
    limb_acc: np.ndarray = field(default_factory=lambda: np.zeros(4))
    theta: float = 0.0
    theta_rate: float = 0.0
    contact: np.ndarray = field(default_factory=lambda: np.full(4, 0.5))
    friction: float = 1.0
    t: float = 0.0
    gait: int = 0
    fell: bool = False
    amplitude: float = 0.0
    motor: float = 1.0
    velocity_gain: float = 1.0
    v_cmd: float = 0.5
    done: bool = False
    prev_action: np.ndarray = field(default_factory=lambda: np.zeros(6))
    blocked: bool = False
    suppress_limb: int = -1
    timeout: bool = False
    steps: int = 0

    def to_vector(self) -> np.ndarray:
        s = np.zeros(LY.STATE_DIM)
        s[LY.X], s[LY.V], s[LY.Z] = self.x, self.v, self.z_base
        s[LY.L:LY.L + 4] = self.limbs
        s[LY.LV:LY.LV + 4] = self.limb_vel
        s[LY.LA:LY.LA + 4] = self.limb_acc
        s[LY.TH], s[LY.THR] = self.theta, self.theta_rate
        s[LY.F:LY.F + 4] = self.contact
        s[LY.MU], s[LY.T], s[LY.G] = self.friction, self.t, float(self.gait)
        s[LY.FELL], s[LY.AMP] = float(self.fell), self.amplitude
        s[LY.MOTOR], s[LY.VGAIN], s[LY.VCMD] = self.motor, self.velocity_gain, self.v_cmd
        s[LY.DONE] = float(self.done)
        s[LY.PA:LY.PA + 6] = self.prev_action
        s[LY.BLOCKED], s[LY.SUPP] = float(self.blocked), float(self.suppress_limb)
        s[LY.TIMEOUT], s[LY.STEPS] = float(self.timeout), float(self.steps)
        return s

    @classmethod
    def from_vector(cls, s) -> "EnvState":
        s = np.asarray(s, dtype=np.float64)
        return cls(
            x=float(s[LY.X]), v=float(s[LY.V]), z_base=float(s[LY.Z]),
            limbs=s[LY.L:LY.L + 4].copy(), limb_vel=s[LY.LV:LY.LV + 4].copy(),
            limb_acc=s[LY.LA:LY.LA + 4].copy(), theta=float(s[LY.TH]), theta_rate=float(s[LY.THR]),
            contact=s[LY.F:LY.F + 4].copy(), friction=float(s[LY.MU]), t=float(s[LY.T]),
            gait=int(s[LY.G]), fell=bool(s[LY.FELL] > 0.5), amplitude=float(s[LY.AMP]),
            motor=float(s[LY.MOTOR]), velocity_gain=float(s[LY.VGAIN]), v_cmd=float(s[LY.VCMD]),
            done=bool(s[LY.DONE] > 0.5), prev_action=s[LY.PA:LY.PA + 6].copy(),
            blocked=bool(s[LY.BLOCKED] > 0.5), suppress_limb=int(s[LY.SUPP]),
            timeout=bool(s[LY.TIMEOUT] > 0.5), steps=int(s[LY.STEPS]),
        )

    def record(self) -> dict:
        """JSON-friendly field dump for trajectory files."""
        out = {}
        for k, v in self.__dict__.items():
            out[k] = v.tolist() if isinstance(v, np.ndarray) else v
        return out


@dataclass(frozen=True)
class Command:
    v_cmd: float
    gait: int

    def __post_init__(self):
        if self.gait not in (0, 1):
            raise ValueError("gait must be 0 or 1")

    def vector(self) -> np.ndarray:
        return np.array([self.v_cmd, float(self.gait)])


@dataclass
class ObservationBundle:
    """Proprioception p, explicit privileged e, implicit privileged i, command c.

    Arrays are batched ``(n, dim)`` for vector envs and 1-D for single envs.
    """

    p: np.ndarray
    e: np.ndarray
    i: np.ndarray
    c: np.ndarray

    def row(self, k) -> "ObservationBundle":
        return ObservationBundle(self.p[k], self.e[k], self.i[k], self.c[k])


def proprio_truth(states: np.ndarray) -> np.ndarray:
    """Noise-free proprioception from ``(n, STATE_DIM)`` states."""
    return np.concatenate([
        states[:, [LY.TH, LY.THR]],
        states[:, LY.L:LY.L + 4],
        states[:, LY.LV:LY.LV + 4],
        states[:, [LY.Z]],
        states[:, LY.PA:LY.PA + 6],
    ], axis=1)


def privileged(states: np.ndarray):
    e = states[:, [LY.V, LY.MU]].copy()
    i = states[:, LY.F:LY.F + 4].copy()
    c = states[:, [LY.VCMD, LY.G]].copy()
    return e, i, c
