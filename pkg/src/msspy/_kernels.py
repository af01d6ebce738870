"""Compiled sweeps for the marginal samplers.

Parameter arrays are indexed with 0 for the root (hierarchical) or shared
(additive) process and ``j + 1`` for group ``j``. Randomness comes from
numba's internal generator, seeded from the caller's numpy Generator.
"""

import math

import numpy as np
from numba import njit

TARGET_ACCEPT = 0.44


@njit(cache=True)
def seed(s):
    np.random.seed(s)


@njit(cache=True)
def py_loglik(sizes, sigma, alpha):
    K = sizes.size
    if K == 0:
        return 0.0
    out = 0.0
    n = 0
    for k in range(1, K):
        out += math.log(alpha + k * sigma)
    for k in range(K):
        n += sizes[k]
        out += math.lgamma(sizes[k] - sigma)
    out -= K * math.lgamma(1.0 - sigma)
    out -= math.lgamma(alpha + n) - math.lgamma(alpha + 1.0)
    return out


@njit(cache=True)
def add_block(m, K, n, sigma, alpha):
    """Log-ratio of EPPFs when a block of size ``m`` joins ``K`` blocks of ``n`` items."""
    out = math.lgamma(m - sigma) - math.lgamma(1.0 - sigma)
    if K > 0:
        out += math.log(alpha + K * sigma) - (math.lgamma(alpha + n + m) - math.lgamma(alpha + n))
    else:
        out -= math.lgamma(alpha + m) - math.lgamma(alpha + 1.0)
    return out


@njit(cache=True)
def escobar_west(alpha, K, n, a, b):
    """Auxiliary-variable update of a DP concentration with Gamma(a, rate b) prior."""
    if n == 0:
        return np.random.gamma(a, 1.0 / b)
    eta = np.random.beta(alpha + 1.0, n)
    rate = b - math.log(eta)
    odds = (a + K - 1.0) / (n * rate)
    if np.random.random() * (1.0 + odds) < odds:
        shape = a + K
    else:
        shape = a + K - 1.0
    return np.random.gamma(shape, 1.0 / rate)


@njit(cache=True)
def _py_target(sizes, sigma, alpha, a_s, b_s, a_a, b_a):
    # density on (logit sigma, log alpha): priors times Jacobians
    lp = a_s * math.log(sigma) + b_s * math.log(1.0 - sigma)
    lp += a_a * math.log(alpha) - b_a * alpha
    return lp + py_loglik(sizes, sigma, alpha)


@njit(cache=True)
def py_mh(sizes, i, alpha, sigma, a_alpha, b_alpha, a_sigma, b_sigma, pin_alpha, pin_sigma,
          log_scale, acc, tries, gain, n_sub):
    """Adaptive random-walk Metropolis on (logit sigma, log alpha), one coordinate at a time."""
    s, a = sigma[i], alpha[i]
    cur = _py_target(sizes, s, a, a_sigma[i], b_sigma[i], a_alpha[i], b_alpha[i])
    for _ in range(n_sub):
        if not pin_sigma[i]:
            u = math.log(s) - math.log(1.0 - s) + math.exp(log_scale[0, i]) * np.random.standard_normal()
            s_new = 1.0 / (1.0 + math.exp(-u))
            ok = 0.0
            if 0.0 < s_new < 1.0:
                prop = _py_target(sizes, s_new, a, a_sigma[i], b_sigma[i], a_alpha[i], b_alpha[i])
                if math.log(np.random.random()) < prop - cur:
                    s, cur, ok = s_new, prop, 1.0
            acc[0, i] += ok
            tries[0, i] += 1.0
            log_scale[0, i] += gain * (ok - TARGET_ACCEPT)
        if not pin_alpha[i]:
            a_new = a * math.exp(math.exp(log_scale[1, i]) * np.random.standard_normal())
            ok = 0.0
            if 0.0 < a_new < 1e12:
                prop = _py_target(sizes, s, a_new, a_sigma[i], b_sigma[i], a_alpha[i], b_alpha[i])
                if math.log(np.random.random()) < prop - cur:
                    a, cur, ok = a_new, prop, 1.0
            acc[1, i] += ok
            tries[1, i] += 1.0
            log_scale[1, i] += gain * (ok - TARGET_ACCEPT)
    sigma[i], alpha[i] = s, a


@njit(cache=True)
def update_component(sizes, i, is_py, alpha, sigma, a_alpha, b_alpha, a_sigma, b_sigma,
                     pin_alpha, pin_sigma, log_scale, acc, tries, gain, n_sub):
    if is_py:
        py_mh(sizes, i, alpha, sigma, a_alpha, b_alpha, a_sigma, b_sigma, pin_alpha, pin_sigma,
              log_scale, acc, tries, gain, n_sub)
    elif not pin_alpha[i]:
        n = 0
        for k in range(sizes.size):
            n += sizes[k]
        alpha[i] = escobar_west(alpha[i], sizes.size, n, a_alpha[i], b_alpha[i])


@njit(cache=True)
def new_mass(alpha, sigma, K, n):
    if n == 0:
        return 1.0
    return (alpha + sigma * K) / (alpha + n)


@njit(cache=True)
def adapt_gain(t):
    return min(0.5, 10.0 / (t + 20.0))


# --- independent ------------------------------------------------------------


@njit(cache=True)
def sweeps_independent(freq, is_py, alpha, sigma, a_alpha, b_alpha, a_sigma, b_sigma,
                       pin_alpha, pin_sigma, log_scale, acc, tries, t0, n_iter, n_sub,
                       trace_alpha, trace_sigma, trace_disc):
    J = freq.shape[0]
    for it in range(n_iter):
        gain = adapt_gain(t0 + it)
        for j in range(J):
            row = freq[j]
            sizes = row[row > 0]
            update_component(sizes, j + 1, is_py, alpha, sigma, a_alpha, b_alpha, a_sigma, b_sigma,
                             pin_alpha, pin_sigma, log_scale, acc, tries, gain, n_sub)
            trace_disc[it, j] = new_mass(alpha[j + 1], sigma[j + 1], sizes.size, row.sum())
        trace_alpha[it] = alpha
        trace_sigma[it] = sigma


# --- hierarchical -----------------------------------------------------------


@njit(cache=True)
def crf_sweep(cell_group, cell_dish, table_sizes, n_slots, group_T, dish_l, alpha, sigma):
    """Reseat every customer once given the current tables (species fixed)."""
    C = cell_group.size
    cap = table_sizes.shape[1]
    buf = np.empty(cap, np.int64)
    w = np.empty(cap)
    L = 0
    Dp = 0
    for d in range(dish_l.size):
        L += dish_l[d]
        if dish_l[d] > 0:
            Dp += 1
    for c in range(C):
        j = cell_group[c]
        d = cell_dish[c]
        aj = alpha[j + 1]
        sj = sigma[j + 1]
        m = 0
        for t in range(n_slots[c]):
            for _ in range(table_sizes[c, t]):
                buf[m] = t
                m += 1
        for i in range(m):
            t = buf[i]
            table_sizes[c, t] -= 1
            if table_sizes[c, t] == 0:
                group_T[j] -= 1
                dish_l[d] -= 1
                L -= 1
                if dish_l[d] == 0:
                    Dp -= 1
            tot = 0.0
            free = -1
            for s in range(n_slots[c]):
                q = table_sizes[c, s]
                if q > 0:
                    w[s] = q - sj
                    tot += w[s]
                else:
                    w[s] = 0.0
                    if free < 0:
                        free = s
            if dish_l[d] > 0:
                rw = (dish_l[d] - sigma[0]) / (alpha[0] + L)
            else:
                rw = (alpha[0] + sigma[0] * Dp) / (alpha[0] + L)
            wn = (aj + sj * group_T[j]) * rw
            u = np.random.random() * (tot + wn)
            chosen = -1
            acc_w = 0.0
            for s in range(n_slots[c]):
                acc_w += w[s]
                if w[s] > 0 and u < acc_w:
                    chosen = s
                    break
            if chosen >= 0:
                table_sizes[c, chosen] += 1
            else:
                if free < 0:
                    free = n_slots[c]
                    n_slots[c] += 1
                table_sizes[c, free] = 1
                group_T[j] += 1
                if dish_l[d] == 0:
                    Dp += 1
                dish_l[d] += 1
                L += 1


@njit(cache=True)
def _group_table_sizes(cell_group, table_sizes, n_slots, j):
    total = 0
    for c in range(cell_group.size):
        if cell_group[c] == j:
            for s in range(n_slots[c]):
                if table_sizes[c, s] > 0:
                    total += 1
    out = np.empty(total, np.int64)
    k = 0
    for c in range(cell_group.size):
        if cell_group[c] == j:
            for s in range(n_slots[c]):
                if table_sizes[c, s] > 0:
                    out[k] = table_sizes[c, s]
                    k += 1
    return out


@njit(cache=True)
def sweeps_hierarchical(cell_group, cell_dish, table_sizes, n_slots, group_T, group_n, dish_l,
                        is_py, alpha, sigma, a_alpha, b_alpha, a_sigma, b_sigma, pin_alpha, pin_sigma,
                        log_scale, acc, tries, t0, n_iter, n_sub, trace_alpha, trace_sigma, trace_disc):
    J = group_T.size
    for it in range(n_iter):
        gain = adapt_gain(t0 + it)
        crf_sweep(cell_group, cell_dish, table_sizes, n_slots, group_T, dish_l, alpha, sigma)
        root_sizes = dish_l[dish_l > 0]
        update_component(root_sizes, 0, is_py, alpha, sigma, a_alpha, b_alpha, a_sigma, b_sigma,
                         pin_alpha, pin_sigma, log_scale, acc, tries, gain, n_sub)
        for j in range(J):
            sizes = _group_table_sizes(cell_group, table_sizes, n_slots, j)
            update_component(sizes, j + 1, is_py, alpha, sigma, a_alpha, b_alpha, a_sigma, b_sigma,
                             pin_alpha, pin_sigma, log_scale, acc, tries, gain, n_sub)
        L = root_sizes.sum()
        root_new = new_mass(alpha[0], sigma[0], root_sizes.size, L)
        for j in range(J):
            trace_disc[it, j] = new_mass(alpha[j + 1], sigma[j + 1], group_T[j], group_n[j]) * root_new
        trace_alpha[it] = alpha
        trace_sigma[it] = sigma


# --- additive ---------------------------------------------------------------


@njit(cache=True)
def _xlog(m, p):
    if m == 0:
        return 0.0
    if p <= 0.0:
        return -np.inf
    return m * math.log(p)


@njit(cache=True)
def sweeps_additive(freq, owner, comp, is_py, alpha, sigma, eps, a_alpha, b_alpha, a_sigma, b_sigma,
                    pin_alpha, pin_sigma, pin_eps, eps_w, log_scale, acc, tries, t0, n_iter, n_sub,
                    trace_alpha, trace_sigma, trace_eps, trace_disc):
    """``owner[d]`` is the only group holding species ``d`` or -1 when several do;
    ``comp[d]`` is -1 for the shared component or the owning group."""
    J, D = freq.shape
    tot = np.zeros(D, np.int64)
    for d in range(D):
        for j in range(J):
            tot[d] += freq[j, d]
    # block counts and observation counts per component (index 0 = shared)
    K = np.zeros(J + 1, np.int64)
    n = np.zeros(J + 1, np.int64)
    for d in range(D):
        i = comp[d] + 1
        K[i] += 1
        n[i] += tot[d]
    for it in range(n_iter):
        gain = adapt_gain(t0 + it)
        for d in range(D):
            j = owner[d]
            if j < 0:
                continue
            m = tot[d]
            i = comp[d] + 1
            K[i] -= 1
            n[i] -= m
            ls = _xlog(m, eps[j]) + add_block(m, K[0], n[0], sigma[0], alpha[0])
            li = _xlog(m, 1.0 - eps[j]) + add_block(m, K[j + 1], n[j + 1], sigma[j + 1], alpha[j + 1])
            if ls == -np.inf and li == -np.inf:
                new = i
            elif li == -np.inf:
                new = 0
            elif ls == -np.inf:
                new = j + 1
            else:
                p_shared = 1.0 / (1.0 + math.exp(li - ls))
                new = 0 if np.random.random() < p_shared else j + 1
            comp[d] = new - 1
            K[new] += 1
            n[new] += m
        # component sizes
        for i in range(J + 1):
            sizes = np.empty(K[i], np.int64)
            k = 0
            for d in range(D):
                if comp[d] + 1 == i:
                    sizes[k] = tot[d] if i == 0 else freq[i - 1, d]
                    k += 1
            update_component(sizes, i, is_py, alpha, sigma, a_alpha, b_alpha, a_sigma, b_sigma,
                             pin_alpha, pin_sigma, log_scale, acc, tries, gain, n_sub)
        for j in range(J):
            l0 = 0
            lj = 0
            for d in range(D):
                if comp[d] == -1:
                    l0 += freq[j, d]
                else:
                    lj += freq[j, d]
            if not pin_eps[j]:
                eps[j] = spike_slab_draw(l0, lj, eps_w)
            shared_new = new_mass(alpha[0], sigma[0], K[0], n[0])
            idio_new = new_mass(alpha[j + 1], sigma[j + 1], K[j + 1], n[j + 1])
            trace_disc[it, j] = eps[j] * shared_new + (1.0 - eps[j]) * idio_new
        trace_alpha[it] = alpha
        trace_sigma[it] = sigma
        trace_eps[it] = eps


@njit(cache=True)
def spike_slab_draw(l0, l1, w):
    """Draw eps given ``l0`` shared and ``l1`` idiosyncratic observations.

    Prior: ``w[0]`` point mass at 0, ``w[1]`` at 1, ``w[2]`` Uniform(0, 1).
    """
    lw0 = math.log(w[0]) if (l0 == 0 and w[0] > 0) else -np.inf
    lw1 = math.log(w[1]) if (l1 == 0 and w[1] > 0) else -np.inf
    lwu = (math.log(w[2]) + math.lgamma(l0 + 1.0) + math.lgamma(l1 + 1.0) - math.lgamma(l0 + l1 + 2.0)
           if w[2] > 0 else -np.inf)
    top = max(lw0, max(lw1, lwu))
    p0 = math.exp(lw0 - top)
    p1 = math.exp(lw1 - top)
    pu = math.exp(lwu - top)
    u = np.random.random() * (p0 + p1 + pu)
    if u < p0:
        return 0.0
    if u < p0 + p1:
        return 1.0
    return np.random.beta(l0 + 1.0, l1 + 1.0)
