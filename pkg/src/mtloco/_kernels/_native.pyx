# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled step and GAE kernels; mirrors _fallback.py operation for operation."""

from libc.math cimport exp, sqrt, cos, sin, fabs

# state offsets (see layout.py)
DEF X = 0
DEF V = 1
DEF Z = 2
DEF L = 3
DEF LV = 7
DEF TH = 11
DEF THR = 12
DEF F = 13
DEF MU = 17
DEF T = 18
DEF G = 19
DEF FELL = 20
DEF AMP = 21
DEF MOTOR = 22
DEF VGAIN = 23
DEF VCMD = 24
DEF DONE = 25
DEF PA = 26
DEF LA = 32
DEF BLOCKED = 36
DEF SUPP = 37
DEF TIMEOUT = 38
DEF STEPS = 39
DEF STATE_DIM = 40
DEF N_TERMS = 12

DEF BAR = 1
DEF PIT = 2
DEF BAFFLE = 3
DEF STAIR = 4
DEF SLOPE = 5

# parameter offsets
DEF P_dt = 0
DEF P_kappa_limb = 1
DEF P_kappa_z = 2
DEF P_kappa_v = 3
DEF P_drive_gain = 4
DEF P_lift_max = 5
DEF P_z_nominal = 6
DEF P_z_range = 7
DEF P_z_lo = 8
DEF P_z_hi = 9
DEF P_kp_quad = 10
DEF P_kp_bip = 11
DEF P_k_u = 12
DEF P_k_asym = 13
DEF P_contact_load = 14
DEF P_k_contact = 15
DEF P_pit_k = 16
DEF P_stand_progress = 17
DEF P_upright_cos = 18
DEF P_stride = 19
DEF P_theta_quad = 20
DEF P_theta_bip = 21
DEF P_z_floor = 22
DEF P_stand_min = 23
DEF P_grace = 24
DEF P_max_episode_steps = 25
DEF P_sigma = 26
DEF P_t_min = 27
DEF P_t_max = 28
DEF P_s_low = 29
DEF P_s_high = 30
DEF P_z_target_quad = 31
DEF P_cos_gate = 32
DEF P_w_track_q = 33
DEF P_w_track_b = 34
DEF P_w_alive = 35
DEF P_w_term = 36
DEF P_w_action = 37
DEF P_w_action_rate = 38
DEF P_w_limb_vel_q = 39
DEF P_w_limb_acc_q = 40
DEF P_w_limb_vel_b = 41
DEF P_w_limb_acc_b = 42
DEF P_w_ang_vel = 43
DEF P_w_height_q = 44
DEF P_w_orient = 45
DEF P_w_stand = 46
DEF P_w_suppress = 47
DEF P_grid_res = 48

KERNEL_N_PARAMS = 49
KERNEL_STATE_DIM = STATE_DIM


cdef inline double _clip(double x, double lo, double hi) nogil:
    if x < lo:
        return lo
    if x > hi:
        return hi
    return x


cdef inline bint _terminated(double th, double z, double g, double t, double fell, const double[::1] p) nogil:
    if fell > 0.5:
        return True
    if g < 0.5:
        return fabs(th) > p[P_theta_quad] or z < p[P_z_floor]
    if t > p[P_grace]:
        return fabs(th) > p[P_theta_bip] or z < p[P_stand_min]
    return False


cdef void _reward_terms(double g, double v, double vcmd, double* a, double* pa, double* lv, double* la,
                        double thr, double th, double z, double lsupp, long supp, bint done,
                        const double[::1] p, double* out) nogil:
    cdef int k
    cdef double dv, track, sv, sa, nv, na, s, dz, c, o, scale, d
    for k in range(N_TERMS):
        out[k] = 0.0
    dv = vcmd - v
    track = exp(-(dv * dv) / p[P_sigma])
    sv = 0.0
    sa = 0.0
    for k in range(4):
        sv += lv[k] * lv[k]
        sa += la[k] * la[k]
    nv = sqrt(sv)
    na = sqrt(sa)
    if done:
        out[2] = p[P_w_term]
    else:
        out[1] = p[P_w_alive]
    if g < 0.5:
        out[0] = p[P_w_track_q] * track
        s = 0.0
        for k in range(6):
            s += a[k] * a[k]
        out[3] = p[P_w_action] * s
        out[5] = p[P_w_limb_vel_q] * nv
        out[6] = p[P_w_limb_acc_q] * na
        out[7] = p[P_w_ang_vel] * (thr * thr)
        dz = z - p[P_z_target_quad]
        out[8] = p[P_w_height_q] * (dz * dz)
    else:
        c = cos(th)
        o = 0.5 * c + 0.5
        out[9] = p[P_w_orient] * (o * o)
        out[10] = p[P_w_stand] * _clip((z - p[P_t_min]) / (p[P_t_max] - p[P_t_min]), 0.0, 1.0)
        if c > p[P_cos_gate]:
            scale = _clip((z - p[P_s_low]) / (p[P_s_high] - p[P_s_low]), 0.0, 1.0)
            out[0] = p[P_w_track_b] * track * scale
        s = 0.0
        for k in range(6):
            d = pa[k] - a[k]
            s += d * d
        out[4] = p[P_w_action_rate] * sqrt(s)
        out[5] = p[P_w_limb_vel_b] * nv
        out[6] = p[P_w_limb_acc_b] * na
    if supp >= 0:
        d = 1.0 - lsupp
        out[11] = p[P_w_suppress] * (d * d)


def step_batch(const double[:, ::1] state, const double[:, ::1] action, const double[::1] noise,
               const double[:, :, ::1] segs, const long[::1] nseg, const double[:, ::1] hgrid,
               const long[::1] ngrid, const double[::1] p,
               double[:, ::1] out_state, double[:, ::1] out_terms, double[::1] out_reward,
               signed char[::1] out_done, signed char[::1] out_timeout):
    cdef Py_ssize_t n = state.shape[0]
    cdef Py_ssize_t i
    cdef int k, kind, cnt, first
    cdef long supp, i0, i1, ng, ns_, sk
    cdef double a[6]
    cdef double pa[6]
    cdef double lnew[4]
    cdef double rate[4]
    cdef double acc[4]
    cdef double f[4]
    cdef double terms[N_TERMS]
    cdef double dt, g, mu, motor, vgain, tgt, lo, ln, amp_sum, lift_sum, amp, lift, zt, z, znew
    cdef double x, drive, par, sdir, factor, res, bump, th, up, v, vnew, load, blocked, fell
    cdef double pen, asym, dth, thnew, thr, tnew, steps, lsupp, total
    cdef bint done, timeout

    with nogil:
        for i in range(n):
            for k in range(STATE_DIM):
                out_state[i, k] = state[i, k]
            if state[i, DONE] > 0.5:
                for k in range(N_TERMS):
                    out_terms[i, k] = 0.0
                out_reward[i] = 0.0
                out_done[i] = 1
                out_timeout[i] = 1 if state[i, TIMEOUT] > 0.5 else 0
                continue

            dt = p[P_dt]
            for k in range(6):
                a[k] = _clip(action[i, k], -1.0, 1.0)
                pa[k] = state[i, PA + k]
            g = state[i, G]
            supp = <long>state[i, SUPP]
            mu = state[i, MU]
            motor = state[i, MOTOR]
            vgain = state[i, VGAIN]

            for k in range(4):
                tgt = 0.5 + 0.5 * a[k]
                lo = state[i, L + k]
                ln = _clip(lo + dt * p[P_kappa_limb] * (tgt - lo), 0.0, 1.0)
                lnew[k] = ln
                rate[k] = (ln - lo) / dt
                acc[k] = (rate[k] - state[i, LV + k]) / dt

            first = 0 if g < 0.5 else 2
            cnt = 0
            amp_sum = 0.0
            lift_sum = 0.0
            for k in range(first, 4):
                if k == supp:
                    continue
                cnt += 1
                amp_sum += fabs(rate[k])
                lift_sum += lnew[k]
            if cnt > 0:
                amp = amp_sum / cnt
                lift = p[P_lift_max] * (lift_sum / cnt)
            else:
                amp = 0.0
                lift = 0.0

            zt = _clip(p[P_z_nominal] + p[P_z_range] * a[4], p[P_z_lo], p[P_z_hi])
            z = state[i, Z]
            znew = z + dt * p[P_kappa_z] * (zt - z)

            x = state[i, X]
            drive = mu * motor * p[P_drive_gain] * amp
            ns_ = nseg[i]
            sk = 0
            while sk + 1 < ns_ and segs[i, sk + 1, 0] <= x:
                sk += 1
            kind = <int>segs[i, sk, 1]
            par = segs[i, sk, 2]
            sdir = segs[i, sk, 3]
            factor = 1.0
            if kind == SLOPE:
                factor = cos(par) - sdir * mu * sin(par)
                if factor < 0.0:
                    factor = 0.0
            elif kind == STAIR:
                if sdir > 0.0:
                    factor = lift / (2.0 * par)
                    if factor > 1.0:
                        factor = 1.0
            res = p[P_grid_res]
            ng = ngrid[i]
            i0 = <long>(x / res)
            i1 = <long>((x + p[P_stride]) / res)
            if i0 < 0:
                i0 = 0
            elif i0 > ng - 1:
                i0 = ng - 1
            if i1 < 0:
                i1 = 0
            elif i1 > ng - 1:
                i1 = ng - 1
            bump = hgrid[i, i1] - hgrid[i, i0]
            if bump > lift:
                factor = factor * (lift / bump)
            drive = drive * factor

            th = state[i, TH]
            if g > 0.5:
                if znew <= p[P_stand_progress]:
                    drive = 0.0
                up = _clip((cos(th) - p[P_upright_cos]) / (1.0 - p[P_upright_cos]), 0.0, 1.0)
                drive = drive * up

            v = state[i, V]
            vnew = v + dt * p[P_kappa_v] * (vgain * drive - v)

            load = p[P_contact_load]
            for k in range(4):
                if g < 0.5:
                    f[k] = load * (1.0 - lnew[k])
                elif k >= 2:
                    f[k] = 2.0 * load * (1.0 - lnew[k])
                else:
                    f[k] = 0.0
            blocked = 0.0
            fell = state[i, FELL]
            if kind == BAR:
                if lift < par:
                    vnew = 0.0
                    blocked = 1.0
                    for k in range(4):
                        pen = par - p[P_lift_max] * lnew[k]
                        if pen > 0.0:
                            f[k] = f[k] + p[P_k_contact] * pen
            elif kind == BAFFLE:
                if znew > par:
                    vnew = 0.0
                    blocked = 1.0
                    for k in range(4):
                        f[k] = f[k] + p[P_k_contact] * (znew - par)
            elif kind == PIT:
                if amp < p[P_pit_k] * par:
                    fell = 1.0

            if g < 0.5:
                asym = 0.5 * (lnew[0] + lnew[1]) - 0.5 * (lnew[2] + lnew[3])
                dth = p[P_kp_quad] * sin(th) + p[P_k_u] * a[5] + p[P_k_asym] * asym + noise[i]
            else:
                dth = p[P_kp_bip] * sin(th) + p[P_k_u] * a[5] + noise[i]
            thnew = th + dt * dth
            thr = (thnew - th) / dt

            tnew = state[i, T] + dt
            steps = state[i, STEPS] + 1.0
            done = _terminated(thnew, znew, g, tnew, fell, p)
            timeout = (not done) and steps >= p[P_max_episode_steps]

            out_state[i, X] = x + dt * vnew
            out_state[i, V] = vnew
            out_state[i, Z] = znew
            for k in range(4):
                out_state[i, L + k] = lnew[k]
                out_state[i, LV + k] = rate[k]
                out_state[i, LA + k] = acc[k]
                out_state[i, F + k] = f[k]
            out_state[i, TH] = thnew
            out_state[i, THR] = thr
            out_state[i, T] = tnew
            out_state[i, FELL] = fell
            out_state[i, AMP] = amp
            out_state[i, BLOCKED] = blocked
            out_state[i, STEPS] = steps
            for k in range(6):
                out_state[i, PA + k] = a[k]
            out_state[i, DONE] = 1.0 if (done or timeout) else 0.0
            out_state[i, TIMEOUT] = 1.0 if timeout else 0.0

            lsupp = lnew[supp] if supp >= 0 else 0.0
            _reward_terms(g, vnew, state[i, VCMD], a, pa, rate, acc, thr, thnew, znew, lsupp, supp,
                          done, p, terms)
            total = 0.0
            for k in range(N_TERMS):
                out_terms[i, k] = terms[k]
                total += terms[k]
            out_reward[i] = total
            out_done[i] = 1 if done else 0
            out_timeout[i] = 1 if timeout else 0


def gae(const double[:, ::1] rewards, const double[:, ::1] values, const double[:, ::1] dones,
        const double[::1] last_values, double gamma, double lam, double[:, ::1] out_adv):
    cdef Py_ssize_t nt = rewards.shape[0]
    cdef Py_ssize_t n = rewards.shape[1]
    cdef Py_ssize_t i, t
    cdef double acc, nv, notdone, delta
    with nogil:
        for i in range(n):
            acc = 0.0
            nv = last_values[i]
            for t in range(nt - 1, -1, -1):
                notdone = 1.0 - dones[t, i]
                delta = rewards[t, i] + gamma * notdone * nv - values[t, i]
                acc = delta + gamma * lam * notdone * acc
                out_adv[t, i] = acc
                nv = values[t, i]
