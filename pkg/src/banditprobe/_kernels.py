"""Hot loops of the Rescorla-Wagner model.

Every kernel exists twice: a scalar-loop version compiled with numba and a
numpy version that vectorises across runs and loops over trials. The public
names at the bottom dispatch on :data:`banditprobe._accel.NUMBA_ENABLED`.

Array conventions: ``choices`` is int8 (0 = X, 1 = Y), ``rewards`` float64 in
{0, 1}, ``valid`` bool; all shaped ``(n_runs, n_trials)``. Masked trials carry
no likelihood and no value update.
"""

import math

import numpy as np

from ._accel import NUMBA_ENABLED, njit


@njit(cache=True)
def _log_sigmoid(x):
    if x >= 0.0:
        return -math.log1p(math.exp(-x))
    return x - math.log1p(math.exp(x))


@njit(cache=True)
def _sigmoid(x):
    if x >= 0.0:
        return 1.0 / (1.0 + math.exp(-x))
    e = math.exp(x)
    return e / (1.0 + e)


@njit(cache=True)
def loglik_grad_loop(a, tau, choices, rewards, valid):
    n_runs, n_trials = choices.shape
    ll = np.zeros(n_runs)
    d_a = np.zeros(n_runs)
    d_tau = np.zeros(n_runs)
    for i in range(n_runs):
        ai = a[i]
        ti = tau[i]
        vx = 0.0
        vy = 0.0
        # forward sensitivities dV/da
        sx = 0.0
        sy = 0.0
        acc = 0.0
        acc_a = 0.0
        acc_t = 0.0
        for t in range(n_trials):
            if not valid[i, t]:
                continue
            dv = vy - vx
            sign = 1.0 if choices[i, t] == 1 else -1.0
            z = sign * ti * dv
            # one exp/log1p pair yields both log sigmoid(z) and 1 - sigmoid(z)
            e = math.exp(-abs(z))
            if z >= 0.0:
                acc -= math.log1p(e)
                w = sign * e / (1.0 + e)
            else:
                acc += z - math.log1p(e)
                w = sign / (1.0 + e)
            acc_t += w * dv
            acc_a += w * ti * (sy - sx)
            r = rewards[i, t]
            if choices[i, t] == 1:
                sy = (1.0 - ai) * sy + (r - vy)
                vy = vy + ai * (r - vy)
            else:
                sx = (1.0 - ai) * sx + (r - vx)
                vx = vx + ai * (r - vx)
        ll[i] = acc
        d_a[i] = acc_a
        d_tau[i] = acc_t
    return ll, d_a, d_tau


@njit(cache=True)
def loglik_loop(a, tau, choices, rewards, valid):
    n_runs, n_trials = choices.shape
    ll = np.zeros(n_runs)
    for i in range(n_runs):
        ai = a[i]
        ti = tau[i]
        vx = 0.0
        vy = 0.0
        acc = 0.0
        for t in range(n_trials):
            if not valid[i, t]:
                continue
            sign = 1.0 if choices[i, t] == 1 else -1.0
            acc += _log_sigmoid(sign * ti * (vy - vx))
            r = rewards[i, t]
            if choices[i, t] == 1:
                vy = vy + ai * (r - vy)
            else:
                vx = vx + ai * (r - vx)
        ll[i] = acc
    return ll


@njit(cache=True)
def simulate_loop(a, tau, p_x, p_y, choice_u, reward_u, first_x):
    n_runs, n_trials = choice_u.shape
    choices = np.zeros((n_runs, n_trials), dtype=np.int8)
    rewards = np.zeros((n_runs, n_trials))
    for i in range(n_runs):
        vx = 0.0
        vy = 0.0
        for t in range(n_trials):
            p_choose_y = _sigmoid(tau[i] * (vy - vx))
            c = 1 if choice_u[i, t] < p_choose_y else 0
            if t == 0 and first_x:
                c = 0
            p = p_y if c == 1 else p_x
            r = 1.0 if reward_u[i, t] < p else 0.0
            choices[i, t] = c
            rewards[i, t] = r
            if c == 1:
                vy = vy + a[i] * (r - vy)
            else:
                vx = vx + a[i] * (r - vx)
    return choices, rewards


_SQRT1_2 = 0.7071067811865476
_LOG_SQRT_2PI = 0.9189385332046728
_A_LO = 2.2250738585072014e-308
_A_HI = 0.9999999999999999
_TAU_MAX = 5.0
_TAU_HI = 4.999999999999999
_SIGMA_SCALE = 0.2
_HALF_NORMAL_CONST = 0.6931471805599453 - math.log(0.2) - _LOG_SQRT_2PI


@njit(cache=True)
def _probit_params(mu_a, s_a, mu_t, s_t, z_a, z_t):
    n = z_a.shape[0]
    a = np.empty(n)
    tau = np.empty(n)
    da = np.empty(n)
    dt = np.empty(n)
    for i in range(n):
        ea = mu_a + s_a * z_a[i]
        et = mu_t + s_t * z_t[i]
        pa = 0.5 * math.erfc(-ea * _SQRT1_2)
        pt = 0.5 * math.erfc(-et * _SQRT1_2)
        a[i] = min(max(pa, _A_LO), _A_HI)
        tau[i] = min(_TAU_MAX * min(max(pt, _A_LO), _A_HI), _TAU_HI)
        da[i] = math.exp(-0.5 * ea * ea - _LOG_SQRT_2PI)
        dt[i] = _TAU_MAX * math.exp(-0.5 * et * et - _LOG_SQRT_2PI)
    return a, tau, da, dt


@njit(cache=True)
def log_prob_grad_loop(theta, choices, rewards, valid):
    """Joint log posterior and gradient on the unconstrained hierarchy vector."""
    n = choices.shape[0]
    mu_a = theta[0]
    ls_a = theta[1]
    mu_t = theta[2]
    ls_t = theta[3]
    s_a = math.exp(ls_a)
    s_t = math.exp(ls_t)
    z_a = theta[4:4 + n]
    z_t = theta[4 + n:4 + 2 * n]
    grad = np.empty(theta.shape[0])
    lp = -0.5 * mu_a * mu_a - 0.5 * mu_t * mu_t - 2.0 * _LOG_SQRT_2PI
    lp += 2.0 * _HALF_NORMAL_CONST + ls_a + ls_t
    lp -= 0.5 * (s_a / _SIGMA_SCALE) ** 2 + 0.5 * (s_t / _SIGMA_SCALE) ** 2
    grad[0] = -mu_a
    grad[1] = 1.0 - (s_a / _SIGMA_SCALE) ** 2
    grad[2] = -mu_t
    grad[3] = 1.0 - (s_t / _SIGMA_SCALE) ** 2
    for i in range(n):
        lp -= 0.5 * (z_a[i] * z_a[i] + z_t[i] * z_t[i]) + 2.0 * _LOG_SQRT_2PI
    if n == 0:
        return lp, grad
    a, tau, da, dt = _probit_params(mu_a, s_a, mu_t, s_t, z_a, z_t)
    ll, g_a, g_t = loglik_grad_loop(a, tau, choices, rewards, valid)
    for i in range(n):
        lp += ll[i]
        h_a = g_a[i] * da[i]
        h_t = g_t[i] * dt[i]
        grad[0] += h_a
        grad[1] += h_a * s_a * z_a[i]
        grad[2] += h_t
        grad[3] += h_t * s_t * z_t[i]
        grad[4 + i] = -z_a[i] + h_a * s_a
        grad[4 + n + i] = -z_t[i] + h_t * s_t
    return lp, grad


def _np_log_sigmoid(x):
    return -np.logaddexp(0.0, -x)


def loglik_grad_numpy(a, tau, choices, rewards, valid):
    n_runs, n_trials = choices.shape
    a = np.asarray(a, dtype=float)
    tau = np.asarray(tau, dtype=float)
    vx = np.zeros(n_runs)
    vy = np.zeros(n_runs)
    sx = np.zeros(n_runs)
    sy = np.zeros(n_runs)
    ll = np.zeros(n_runs)
    d_a = np.zeros(n_runs)
    d_tau = np.zeros(n_runs)
    for t in range(n_trials):
        m = valid[:, t]
        is_y = choices[:, t] == 1
        sign = np.where(is_y, 1.0, -1.0)
        dv = vy - vx
        z = sign * tau * dv
        w = np.where(m, sign * (1.0 - 1.0 / (1.0 + np.exp(-z))), 0.0)
        ll += np.where(m, _np_log_sigmoid(z), 0.0)
        d_tau += w * dv
        d_a += w * tau * (sy - sx)
        r = rewards[:, t]
        upd_y = m & is_y
        upd_x = m & ~is_y
        sy = np.where(upd_y, (1.0 - a) * sy + (r - vy), sy)
        vy = np.where(upd_y, vy + a * (r - vy), vy)
        sx = np.where(upd_x, (1.0 - a) * sx + (r - vx), sx)
        vx = np.where(upd_x, vx + a * (r - vx), vx)
    return ll, d_a, d_tau


def loglik_numpy(a, tau, choices, rewards, valid):
    n_runs, n_trials = choices.shape
    a = np.asarray(a, dtype=float)
    tau = np.asarray(tau, dtype=float)
    vx = np.zeros(n_runs)
    vy = np.zeros(n_runs)
    ll = np.zeros(n_runs)
    for t in range(n_trials):
        m = valid[:, t]
        is_y = choices[:, t] == 1
        sign = np.where(is_y, 1.0, -1.0)
        ll += np.where(m, _np_log_sigmoid(sign * tau * (vy - vx)), 0.0)
        r = rewards[:, t]
        vy = np.where(m & is_y, vy + a * (r - vy), vy)
        vx = np.where(m & ~is_y, vx + a * (r - vx), vx)
    return ll


def simulate_numpy(a, tau, p_x, p_y, choice_u, reward_u, first_x):
    n_runs, n_trials = choice_u.shape
    a = np.asarray(a, dtype=float)
    tau = np.asarray(tau, dtype=float)
    choices = np.zeros((n_runs, n_trials), dtype=np.int8)
    rewards = np.zeros((n_runs, n_trials))
    vx = np.zeros(n_runs)
    vy = np.zeros(n_runs)
    for t in range(n_trials):
        z = tau * (vy - vx)
        p_choose_y = np.where(z >= 0, 1.0 / (1.0 + np.exp(-np.abs(z))), np.exp(-np.abs(z)) / (1.0 + np.exp(-np.abs(z))))
        is_y = choice_u[:, t] < p_choose_y
        if t == 0 and first_x:
            is_y[:] = False
        r = np.where(reward_u[:, t] < np.where(is_y, p_y, p_x), 1.0, 0.0)
        choices[:, t] = is_y
        rewards[:, t] = r
        vy = np.where(is_y, vy + a * (r - vy), vy)
        vx = np.where(is_y, vx, vx + a * (r - vx))
    return choices, rewards


if NUMBA_ENABLED:
    loglik_grad = loglik_grad_loop
    loglik = loglik_loop
    simulate = simulate_loop
else:
    loglik_grad = loglik_grad_numpy
    loglik = loglik_numpy
    simulate = simulate_numpy
