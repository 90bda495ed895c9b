"""Compiled inner loop for long runs.

Mirrors ``dynamics._Engine.advance`` stage for stage: same uniforms, same
sampling rule (first cumulative weight strictly above ``u * total``), same
update form.  Only the summation order inside the kernel product may differ
from numpy, so Q-tables agree with the reference path to rounding.
"""

import numpy as np
from numba import njit


@njit(cache=True)
def run_block(q, profiles, s, betas, uniforms, dev, dev_len, n, tau,
              reward, kernel, gamma, kernel_cdf, q_star, greedy, has_star,
              t0, stride, log_t, log_s, log_a, log_err, log_opt, j):
    S, A = q.shape
    cont = np.empty(S)
    z = np.empty(dev.shape[2])
    for k in range(betas.shape[0]):
        t = t0 + k
        logged = t % stride == 0
        if logged and has_star:
            m = 0.0
            for x in range(S):
                for y in range(A):
                    d = abs(q[x, y] - q_star[x, y])
                    if d > m:
                        m = d
            log_err[j] = m
        # stage-game revision
        i = int(uniforms[k, 0] * n)
        if i > n - 1:
            i = n - 1
        a_cur = profiles[s]
        m_i = dev_len[i]
        zmax = -np.inf
        for c in range(m_i):
            z[c] = q[s, dev[i, a_cur, c]] / tau
            if z[c] > zmax:
                zmax = z[c]
        total = 0.0
        for c in range(m_i):
            total += np.exp(z[c] - zmax)
            z[c] = total
        thr = uniforms[k, 1] * total
        pick = m_i - 1
        for c in range(m_i):
            if z[c] > thr:
                pick = c
                break
        a = dev[i, a_cur, pick]
        profiles[s] = a
        # synchronous Q update
        beta = betas[k]
        if beta != 0.0:
            for x in range(S):
                cont[x] = q[x, profiles[x]]
            for x in range(S):
                for y in range(A):
                    acc = 0.0
                    for x2 in range(S):
                        acc += kernel[x, y, x2] * cont[x2]
                    target = reward[x, y] + gamma * acc
                    q[x, y] += beta * (target - q[x, y])
        # transition
        thr = uniforms[k, 2] * kernel_cdf[s, a, S - 1]
        s_next = S - 1
        for x2 in range(S):
            if kernel_cdf[s, a, x2] > thr:
                s_next = x2
                break
        if logged:
            log_t[j] = t
            log_s[j] = s
            log_a[j] = a
            if has_star:
                log_opt[j] = a == greedy[s]
            j += 1
        s = s_next
    return s, j
