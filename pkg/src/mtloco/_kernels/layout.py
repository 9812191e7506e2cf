"""Flat array layout shared by the compiled and pure-Python step kernels.

Keep in sync with ``_native.pyx`` (it hardcodes the same offsets).
"""

# state vector offsets
X, V, Z = 0, 1, 2
L = 3          # limb extensions, 4 entries
LV = 7         # limb rates, 4 entries
TH, THR = 11, 12
F = 13         # contact forces, 4 entries
MU, T, G, FELL, AMP, MOTOR, VGAIN, VCMD, DONE = 17, 18, 19, 20, 21, 22, 23, 24, 25
PA = 26        # previous (clipped) action, 6 entries
LA = 32        # limb accelerations, 4 entries
BLOCKED, SUPP, TIMEOUT, STEPS = 36, 37, 38, 39
STATE_DIM = 40

ACTION_DIM = 6

# segment record: [start, kind, param, direction]
SEG_WIDTH = 4
FLAT, BAR, PIT, BAFFLE, STAIR, SLOPE = 0, 1, 2, 3, 4, 5
KIND_CODES = {"flat": FLAT, "bar": BAR, "pit": PIT, "baffle": BAFFLE, "stair": STAIR, "slope": SLOPE}

PARAM_NAMES = [
    "dt", "kappa_limb", "kappa_z", "kappa_v", "drive_gain", "lift_max",
    "z_nominal", "z_range", "z_lo", "z_hi",
    "kp_quad", "kp_bip", "k_u", "k_asym",
    "contact_load", "k_contact", "pit_k", "stand_progress", "upright_cos", "stride",
    "theta_quad", "theta_bip", "z_floor", "stand_min", "grace", "max_episode_steps",
    "sigma", "t_min", "t_max", "s_low", "s_high", "z_target_quad", "cos_gate",
    "w_track_q", "w_track_b", "w_alive", "w_term", "w_action", "w_action_rate",
    "w_limb_vel_q", "w_limb_acc_q", "w_limb_vel_b", "w_limb_acc_b", "w_ang_vel",
    "w_height_q", "w_orient", "w_stand", "w_suppress", "grid_res",
]
P = {name: i for i, name in enumerate(PARAM_NAMES)}
N_PARAMS = len(PARAM_NAMES)

TERM_NAMES = [
    "tracking", "alive", "termination", "action", "action_rate", "limb_vel",
    "limb_acc", "ang_vel", "height", "orientation", "stand_height", "limb_suppress",
]
N_TERMS = len(TERM_NAMES)
