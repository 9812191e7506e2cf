"""Pure-Python step and GAE kernels.

Every arithmetic operation is written in the same order as ``_native.pyx``
and uses libm through :mod:`math`, so the two backends agree bit for bit.
"""
from __future__ import annotations

import math

import numpy as np

from .layout import (AMP, BAFFLE, BAR, BLOCKED, DONE, FELL, G, L, LA, LV, MOTOR, MU, N_TERMS, PA,
                     PIT, SLOPE, STAIR, STATE_DIM, STEPS, SUPP, TH, THR, TIMEOUT, VCMD, VGAIN, F,
                     T, V, X, Z, P)

_dt, _kl, _kz, _kv = P["dt"], P["kappa_limb"], P["kappa_z"], P["kappa_v"]


def _clip(x, lo, hi):
    if x < lo:
        return lo
    if x > hi:
        return hi
    return x


def terminated(th, z, g, t, fell, p):
    """Gait-dependent termination; bipedal falls are ignored during the grace period."""
    if fell > 0.5:
        return True
    if g < 0.5:
        return abs(th) > p[P["theta_quad"]] or z < p[P["z_floor"]]
    if t > p[P["grace"]]:
        return abs(th) > p[P["theta_bip"]] or z < p[P["stand_min"]]
    return False


def reward_terms(g, v, vcmd, a, pa, lv, la, thr, th, z, lsupp, supp, done, p):
    """Reward breakdown in ``TERM_NAMES`` order (unused terms are 0.0)."""
    out = [0.0] * N_TERMS
    dv = vcmd - v
    track = math.exp(-(dv * dv) / p[P["sigma"]])
    sv = 0.0
    sa = 0.0
    for k in range(4):
        sv += lv[k] * lv[k]
        sa += la[k] * la[k]
    nv = math.sqrt(sv)
    na = math.sqrt(sa)
    if done:
        out[2] = p[P["w_term"]]
    else:
        out[1] = p[P["w_alive"]]
    if g < 0.5:
        out[0] = p[P["w_track_q"]] * track
        s = 0.0
        for k in range(6):
            s += a[k] * a[k]
        out[3] = p[P["w_action"]] * s
        out[5] = p[P["w_limb_vel_q"]] * nv
        out[6] = p[P["w_limb_acc_q"]] * na
        out[7] = p[P["w_ang_vel"]] * (thr * thr)
        dz = z - p[P["z_target_quad"]]
        out[8] = p[P["w_height_q"]] * (dz * dz)
    else:
        c = math.cos(th)
        o = 0.5 * c + 0.5
        out[9] = p[P["w_orient"]] * (o * o)
        out[10] = p[P["w_stand"]] * _clip((z - p[P["t_min"]]) / (p[P["t_max"]] - p[P["t_min"]]), 0.0, 1.0)
        if c > p[P["cos_gate"]]:
            scale = _clip((z - p[P["s_low"]]) / (p[P["s_high"]] - p[P["s_low"]]), 0.0, 1.0)
            out[0] = p[P["w_track_b"]] * track * scale
        s = 0.0
        for k in range(6):
            d = pa[k] - a[k]
            s += d * d
        out[4] = p[P["w_action_rate"]] * math.sqrt(s)
        out[5] = p[P["w_limb_vel_b"]] * nv
        out[6] = p[P["w_limb_acc_b"]] * na
    if supp >= 0:
        d = 1.0 - lsupp
        out[11] = p[P["w_suppress"]] * (d * d)
    return out


def _segment(segs, nseg, x):
    k = 0
    while k + 1 < nseg and segs[k + 1][0] <= x:
        k += 1
    return segs[k]


def step_one(s, act, noise, segs, nseg, hgrid, ngrid, p):
    """Advance one instance.  Returns ``(new_state, terms, reward, done, timeout)``."""
    ns = list(s)
    if s[DONE] > 0.5:
        return ns, [0.0] * N_TERMS, 0.0, True, s[TIMEOUT] > 0.5

    dt = p[_dt]
    a = [_clip(act[k], -1.0, 1.0) for k in range(6)]
    g = s[G]
    supp = int(s[SUPP])
    mu, motor, vgain = s[MU], s[MOTOR], s[VGAIN]

    lnew = [0.0] * 4
    rate = [0.0] * 4
    acc = [0.0] * 4
    for k in range(4):
        tgt = 0.5 + 0.5 * a[k]
        lo = s[L + k]
        ln = _clip(lo + dt * p[_kl] * (tgt - lo), 0.0, 1.0)
        lnew[k] = ln
        rate[k] = (ln - lo) / dt
        acc[k] = (rate[k] - s[LV + k]) / dt

    first = 0 if g < 0.5 else 2
    cnt = 0
    amp_sum = 0.0
    lift_sum = 0.0
    for k in range(first, 4):
        if k == supp:
            continue
        cnt += 1
        amp_sum += abs(rate[k])
        lift_sum += lnew[k]
    amp = amp_sum / cnt if cnt > 0 else 0.0
    lift = p[P["lift_max"]] * (lift_sum / cnt) if cnt > 0 else 0.0

    zt = _clip(p[P["z_nominal"]] + p[P["z_range"]] * a[4], p[P["z_lo"]], p[P["z_hi"]])
    z = s[Z]
    znew = z + dt * p[_kz] * (zt - z)

    x = s[X]
    drive = mu * motor * p[P["drive_gain"]] * amp
    seg = _segment(segs, nseg, x)
    kind = int(seg[1])
    par = seg[2]
    sdir = seg[3]
    factor = 1.0
    if kind == SLOPE:
        factor = math.cos(par) - sdir * mu * math.sin(par)
        if factor < 0.0:
            factor = 0.0
    elif kind == STAIR:
        if sdir > 0.0:
            factor = lift / (2.0 * par)
            if factor > 1.0:
                factor = 1.0
    res = p[P["grid_res"]]
    i0 = int(x / res)
    i1 = int((x + p[P["stride"]]) / res)
    i0 = 0 if i0 < 0 else (ngrid - 1 if i0 > ngrid - 1 else i0)
    i1 = 0 if i1 < 0 else (ngrid - 1 if i1 > ngrid - 1 else i1)
    bump = hgrid[i1] - hgrid[i0]
    if bump > lift:
        factor = factor * (lift / bump)
    drive = drive * factor

    th = s[TH]
    if g > 0.5:
        if znew <= p[P["stand_progress"]]:
            drive = 0.0
        up = _clip((math.cos(th) - p[P["upright_cos"]]) / (1.0 - p[P["upright_cos"]]), 0.0, 1.0)
        drive = drive * up

    v = s[V]
    vnew = v + dt * p[_kv] * (vgain * drive - v)

    load = p[P["contact_load"]]
    f = [0.0] * 4
    for k in range(4):
        if g < 0.5:
            f[k] = load * (1.0 - lnew[k])
        elif k >= 2:
            f[k] = 2.0 * load * (1.0 - lnew[k])
    blocked = 0.0
    fell = s[FELL]
    if kind == BAR:
        if lift < par:
            vnew = 0.0
            blocked = 1.0
            for k in range(4):
                pen = par - p[P["lift_max"]] * lnew[k]
                if pen > 0.0:
                    f[k] = f[k] + p[P["k_contact"]] * pen
    elif kind == BAFFLE:
        if znew > par:
            vnew = 0.0
            blocked = 1.0
            for k in range(4):
                f[k] = f[k] + p[P["k_contact"]] * (znew - par)
    elif kind == PIT:
        if amp < p[P["pit_k"]] * par:
            fell = 1.0

    if g < 0.5:
        asym = 0.5 * (lnew[0] + lnew[1]) - 0.5 * (lnew[2] + lnew[3])
        dth = p[P["kp_quad"]] * math.sin(th) + p[P["k_u"]] * a[5] + p[P["k_asym"]] * asym + noise
    else:
        dth = p[P["kp_bip"]] * math.sin(th) + p[P["k_u"]] * a[5] + noise
    thnew = th + dt * dth
    thr = (thnew - th) / dt

    tnew = s[T] + dt
    steps = s[STEPS] + 1.0
    done = terminated(thnew, znew, g, tnew, fell, p)
    timeout = (not done) and steps >= p[P["max_episode_steps"]]

    ns[X] = x + dt * vnew
    ns[V] = vnew
    ns[Z] = znew
    for k in range(4):
        ns[L + k] = lnew[k]
        ns[LV + k] = rate[k]
        ns[LA + k] = acc[k]
        ns[F + k] = f[k]
    ns[TH] = thnew
    ns[THR] = thr
    ns[T] = tnew
    ns[FELL] = fell
    ns[AMP] = amp
    ns[BLOCKED] = blocked
    ns[STEPS] = steps
    for k in range(6):
        ns[PA + k] = a[k]
    ns[DONE] = 1.0 if (done or timeout) else 0.0
    ns[TIMEOUT] = 1.0 if timeout else 0.0

    lsupp = lnew[supp] if supp >= 0 else 0.0
    terms = reward_terms(g, vnew, s[VCMD], a, [s[PA + k] for k in range(6)], rate, acc, thr,
                         thnew, znew, lsupp, supp, done, p)
    total = 0.0
    for tv in terms:
        total += tv
    return ns, terms, total, done, timeout


def step_batch(state, action, noise, segs, nseg, hgrid, ngrid, params,
               out_state, out_terms, out_reward, out_done, out_timeout):
    p = params.tolist()
    n = state.shape[0]
    for i in range(n):
        ns, terms, total, done, timeout = step_one(
            state[i].tolist(), action[i].tolist(), float(noise[i]), segs[i].tolist(),
            int(nseg[i]), hgrid[i].tolist(), int(ngrid[i]), p)
        out_state[i] = ns
        out_terms[i] = terms
        out_reward[i] = total
        out_done[i] = done
        out_timeout[i] = timeout


def gae(rewards, values, dones, last_values, gamma, lam, out_adv):
    """Backward GAE recursion over a ``(T, n)`` buffer."""
    nt, n = rewards.shape
    for i in range(n):
        acc = 0.0
        nv = float(last_values[i])
        for t in range(nt - 1, -1, -1):
            notdone = 1.0 - float(dones[t, i])
            delta = float(rewards[t, i]) + gamma * notdone * nv - float(values[t, i])
            acc = delta + gamma * lam * notdone * acc
            out_adv[t, i] = acc
            nv = float(values[t, i])


__all__ = ["STATE_DIM", "gae", "reward_terms", "step_batch", "step_one", "terminated"]
