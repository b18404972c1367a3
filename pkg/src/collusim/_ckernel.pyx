# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled trial loop.

A line-for-line port of ``_pykernel``/``learners``: same arithmetic in the same
order and the same ``Generator`` draws, so both backends agree bit for bit.
"""

import numpy as np

from cpython.pycapsule cimport PyCapsule_GetPointer
from libc.math cimport exp, log, pow, sqrt
from numpy.random cimport bitgen_t

from .kernel import ALGORITHM_CODES, allocate_output
from .market import TIE_BREAKS as TIE_MODES


cdef extern from "numpy/random/distributions.h":
    double random_beta(bitgen_t *bitgen_state, double a, double b) nogil


DEF MAXN = 64
DEF EXP3_RESCALE = 1e150

cdef enum Algo:
    QLEARNING = 0
    SARSA = 1
    GRADIENT_BANDIT = 2
    UCB = 3
    THOMPSON = 4
    ACTOR_CRITIC = 5
    REINFORCE = 6
    EXP3 = 7

cdef double[4] BID_WEIGHTS = [0.0, 1.0 / 3.0, 2.0 / 3.0, 1.0]


cdef inline double uniform(bitgen_t *bg) noexcept nogil:
    return bg.next_double(bg.state)


cdef inline int uniform_index(double u, int n) noexcept nogil:
    cdef int a = <int>(u * n)
    return a if a < n else n - 1


cdef inline int argmax(double *row, int k) noexcept nogil:
    cdef int best = 0, a
    cdef double top = row[0]
    for a in range(1, k):
        if row[a] > top:
            top = row[a]
            best = a
    return best


cdef inline int sample_weights(double *w, int k, double total, double u) noexcept nogil:
    cdef double target = u * total
    cdef double cum = 0.0
    cdef int last = 0, a
    for a in range(k):
        if w[a] > 0.0:
            last = a
            cum += w[a]
            if cum > target:
                return a
    return last


cdef inline double softmax_weights(double *row, int k, double scale, double *z) noexcept nogil:
    cdef double top = row[0], total = 0.0
    cdef int a
    for a in range(1, k):
        if row[a] > top:
            top = row[a]
    for a in range(k):
        z[a] = exp((row[a] - top) / scale)
    for a in range(k):
        total += z[a]
    return total


cdef class Agent:
    cdef int algo, n_states, n_actions, pending, ep_len, ep_cap
    cdef double alpha, gamma, eps0, eps_decay, eps_min, ucb_c
    cdef double ac_alpha_v, ac_alpha_theta, ac_tau, reinforce_alpha, exp3_gamma
    cdef double r_bar
    cdef long n_seen
    cdef double[:, ::1] main      # Q / H / mu / alpha pseudo-counts / theta / exp3 weights
    cdef double[:, ::1] aux       # UCB counts / beta pseudo-counts
    cdef double[::1] V
    cdef double[::1] scratch
    cdef int[::1] ep_s, ep_a
    cdef double[::1] ep_r, ep_g

    def __init__(self, int algo, int n_states, int n_actions, cfg, object rng):
        cdef bitgen_t *bg
        cdef int s, a
        cdef double lo
        self.algo = algo
        self.n_states = n_states
        self.n_actions = n_actions
        self.pending = -1
        self.alpha = cfg.alpha
        self.gamma = cfg.gamma
        self.eps0 = cfg.eps0
        self.eps_decay = cfg.eps_decay
        self.eps_min = cfg.eps_min
        self.ucb_c = cfg.ucb_c
        self.ac_alpha_v = cfg.ac_alpha_v
        self.ac_alpha_theta = cfg.ac_alpha_theta
        self.ac_tau = cfg.ac_tau
        self.reinforce_alpha = cfg.reinforce_alpha
        self.exp3_gamma = cfg.exp3_gamma
        self.r_bar = 0.0
        self.n_seen = 0
        self.main = np.zeros((n_states, n_actions))
        self.aux = np.zeros((n_states, n_actions))
        self.V = np.zeros(n_states)
        self.scratch = np.zeros(n_actions)
        self.ep_cap = cfg.reinforce_episode
        self.ep_len = 0
        self.ep_s = np.zeros(self.ep_cap, dtype=np.intc)
        self.ep_a = np.zeros(self.ep_cap, dtype=np.intc)
        self.ep_r = np.zeros(self.ep_cap)
        self.ep_g = np.zeros(self.ep_cap)
        if algo == QLEARNING or algo == SARSA:
            bg = <bitgen_t *>PyCapsule_GetPointer(rng.bit_generator.capsule, "BitGenerator")
            lo = cfg.q_init_range
            for s in range(n_states):
                for a in range(n_actions):
                    self.main[s, a] = -lo + 2.0 * lo * uniform(bg)
        elif algo == THOMPSON:
            self.main[:, :] = 1.0
            self.aux[:, :] = 1.0
        elif algo == EXP3:
            self.main[:, :] = 1.0

    cdef inline double epsilon(self, long t) noexcept nogil:
        cdef double e = self.eps0 * pow(self.eps_decay, <double>t)
        return e if e > self.eps_min else self.eps_min

    cdef inline int eps_greedy(self, int s, double eps, bitgen_t *bg) noexcept nogil:
        if uniform(bg) < eps:
            return uniform_index(uniform(bg), self.n_actions)
        return argmax(&self.main[s, 0], self.n_actions)

    cdef inline double exp3_pi(self, int s, int a) noexcept nogil:
        cdef int j, k = self.n_actions
        cdef double total = 0.0
        for j in range(k):
            total += self.main[s, j]
        return (1.0 - self.exp3_gamma) * self.main[s, a] / total + self.exp3_gamma / k

    cdef int select(self, int s, long t, bitgen_t *bg) noexcept nogil:
        cdef int a, k = self.n_actions
        cdef double total, log_t, score, top
        cdef double *z = &self.scratch[0]
        if self.algo == QLEARNING or self.algo == SARSA:
            if self.pending >= 0:
                a = self.pending
                self.pending = -1
                return a
            return self.eps_greedy(s, self.epsilon(t), bg)
        if self.algo == GRADIENT_BANDIT:
            total = softmax_weights(&self.main[0, 0], k, 1.0, z)
            return sample_weights(z, k, total, uniform(bg))
        if self.algo == UCB:
            for a in range(k):
                if self.aux[0, a] == 0.0:
                    return a
            log_t = log(<double>(t + 1))
            for a in range(k):
                z[a] = self.main[0, a] + self.ucb_c * sqrt(log_t / self.aux[0, a])
            return argmax(z, k)
        if self.algo == THOMPSON:
            for a in range(k):
                z[a] = random_beta(bg, self.main[0, a], self.aux[0, a])
            return argmax(z, k)
        if self.algo == ACTOR_CRITIC or self.algo == REINFORCE:
            total = softmax_weights(&self.main[s, 0], k, self.ac_tau if self.algo == ACTOR_CRITIC else 1.0, z)
            return sample_weights(z, k, total, uniform(bg))
        # exp3
        total = 0.0
        for a in range(k):
            total += self.main[s, a]
        for a in range(k):
            z[a] = (1.0 - self.exp3_gamma) * self.main[s, a] / total + self.exp3_gamma / k
        return sample_weights(z, k, 1.0, uniform(bg))

    cdef void flush(self) noexcept nogil:
        cdef int j
        cdef double g = 0.0
        for j in range(self.ep_len - 1, -1, -1):
            g = self.ep_r[j] + self.gamma * g
            self.ep_g[j] = g
        for j in range(self.ep_len):
            self.main[self.ep_s[j], self.ep_a[j]] += self.reinforce_alpha * self.ep_g[j]
        self.ep_len = 0

    cdef void update(self, int s, int a, double r, int s_next, long t, bitgen_t *bg) noexcept nogil:
        cdef int j, k = self.n_actions, a_next
        cdef double mx, step, total, delta, pi, r_norm, top
        cdef double *z = &self.scratch[0]
        if self.algo == QLEARNING:
            mx = self.main[s_next, argmax(&self.main[s_next, 0], k)]
            self.main[s, a] += self.alpha * (r + self.gamma * mx - self.main[s, a])
        elif self.algo == SARSA:
            a_next = self.eps_greedy(s_next, self.epsilon(t + 1), bg)
            self.main[s, a] += self.alpha * (r + self.gamma * self.main[s_next, a_next] - self.main[s, a])
            self.pending = a_next
        elif self.algo == GRADIENT_BANDIT:
            total = softmax_weights(&self.main[0, 0], k, 1.0, z)
            step = self.alpha * (r - self.r_bar)
            for j in range(k):
                self.main[0, j] -= step * (z[j] / total)
            self.main[0, a] += step
            self.r_bar = self.r_bar + (r - self.r_bar) / (self.n_seen + 1)
            self.n_seen += 1
        elif self.algo == UCB:
            self.aux[0, a] += 1.0
            self.main[0, a] += (r - self.main[0, a]) / self.aux[0, a]
        elif self.algo == THOMPSON:
            pi = (r + 1.0) / 2.0
            pi = 0.0 if pi < 0.0 else pi
            pi = 1.0 if pi > 1.0 else pi
            self.main[0, a] += pi
            self.aux[0, a] += 1.0 - pi
        elif self.algo == ACTOR_CRITIC:
            delta = r + self.gamma * self.V[s_next] - self.V[s]
            self.V[s] += self.ac_alpha_v * delta
            self.main[s, a] += self.ac_alpha_theta * delta
        elif self.algo == REINFORCE:
            self.ep_s[self.ep_len] = s
            self.ep_a[self.ep_len] = a
            self.ep_r[self.ep_len] = r
            self.ep_len += 1
            if self.ep_len >= self.ep_cap:
                self.flush()
        else:
            pi = self.exp3_pi(s, a)
            r_norm = (r + 1.0) / 3.0
            r_norm = 0.0 if r_norm < 0.0 else r_norm
            r_norm = 1.0 if r_norm > 1.0 else r_norm
            self.main[s, a] *= exp(self.exp3_gamma * (r_norm / pi) / k)
            if self.main[s, a] > EXP3_RESCALE:
                top = self.main[s, a]
                for j in range(k):
                    self.main[s, j] /= top

    def snapshot(self):
        main = np.asarray(self.main)
        if self.algo == THOMPSON:
            aux = np.asarray(self.aux)
            return (main / (main + aux)).ravel()
        if self.algo == EXP3:
            k = self.n_actions
            total = np.array([sum_row(main[s]) for s in range(self.n_states)])
            return ((1.0 - self.exp3_gamma) * main / total[:, None] + self.exp3_gamma / k).ravel()
        return main.ravel().copy()


def sum_row(row):
    total = 0.0
    for x in row:
        total += x
    return total


cdef inline double visibility(int r, int n) noexcept nogil:
    if r == 1:
        return 1.0
    if r == 2:
        return 0.75
    if r == 3 or r == n:
        return 0.55
    return 0.30


cdef inline int pick(int *cand, int m, int mode, bitgen_t *bg) noexcept nogil:
    # mode: 0 quality (first candidate), 1 inverse (last), 2 random
    if mode == 2 and m > 1:
        return cand[<int>(uniform(bg) * m)]
    if mode == 1:
        return cand[m - 1]
    return cand[0]


cdef int argmax_bidders(int *bids, int n, double *quality, int hybrid, int *pool) noexcept nogil:
    cdef int i, top = -1, m = 0
    for i in range(n):
        if hybrid and not quality[i] >= 0.5:
            continue
        if bids[i] > top:
            top = bids[i]
    for i in range(n):
        if hybrid and not quality[i] >= 0.5:
            continue
        if bids[i] == top:
            pool[m] = i
            m += 1
    return m


def simulate(plan, rng):
    if plan.catalog.n > MAXN:
        raise ValueError(f"compiled kernel supports at most {MAXN} sellers")
    cdef bitgen_t *bg = <bitgen_t *>PyCapsule_GetPointer(rng.bit_generator.capsule, "BitGenerator")
    cdef int n = plan.catalog.n
    cdef long T = plan.rounds
    cdef int algo = ALGORITHM_CODES[plan.learner.algorithm]
    cdef int stateful = plan.learner.algorithm in ("qlearning", "sarsa", "actor_critic", "reinforce", "exp3")
    cdef int n_states = plan.codec.n_states if stateful else 1

    # learners are created in the same order as the Python backend: platform, then sellers
    platform = Agent(algo, n_states, 32, plan.learner, rng) if plan.platform_learns else None
    sellers = [Agent(algo, n_states, 12, plan.learner, rng) if f < 0 else None for f in plan.seller_fixed]
    learners = [x for x in [platform, *sellers] if x is not None]
    table_size = sum(x.snapshot().size for x in learners)
    out = allocate_output(plan, table_size)

    cdef double[::1] quality = np.ascontiguousarray(plan.catalog.quality, dtype=np.float64)
    cdef double[::1] cost = np.ascontiguousarray(plan.catalog.cost, dtype=np.float64)
    cdef double[::1] price = np.ascontiguousarray(plan.catalog.price, dtype=np.float64)
    cdef double[:, ::1] bias = np.ascontiguousarray(plan.bias_matrix())
    cdef double[::1] class_cum = np.ascontiguousarray(plan.class_cumulative())
    cdef int n_classes = len(plan.classes)
    cdef int additive = plan.additive
    cdef int[::1] seller_fixed = np.asarray(plan.seller_fixed, dtype=np.intc)
    cdef int platform_learns = plan.platform_learns
    cdef double fixed_w = plan.fixed_w
    cdef int fixed_e = plan.fixed_e, fixed_d = plan.fixed_d
    cdef double override_p = plan.override_p
    cdef int true_random = plan.true_random
    cdef int rank_mode = TIE_MODES.index(plan.rank_ties)
    cdef int badge_mode = TIE_MODES.index(plan.badge_ties)
    cdef int decoy_mode = TIE_MODES.index(plan.decoy_ties)
    cdef long measure_start = plan.measure_start
    cdef double kappa = plan.payoff.kappa, phi_w = plan.payoff.phi_w
    cdef double phi_l = plan.payoff.phi_l, tau = plan.payoff.take_rate
    cdef int window = plan.codec.history_window
    cdef int bins_m = plan.codec.bins_m, bins_b = plan.codec.bins_b
    cdef double max_manip = plan.codec.max_manip, max_bid = plan.codec.max_bid

    cdef double[::1] o_cs = out.cs, o_pp = out.platform_profit, o_sp = out.seller_profit
    cdef short[::1] o_win = out.winner
    cdef signed char[::1] o_pa = out.platform_action
    cdef int[::1] o_m = out.manip_sum, o_b = out.bid_sum
    cdef long long[::1] o_wins = out.window_wins
    cdef double[::1] o_wp = out.window_profit

    snap_at = {r: j for j, r in enumerate(plan.snapshot_rounds)}
    cdef char[::1] snap_flag = np.zeros(T + 2, dtype=np.int8)
    for r in plan.snapshot_rounds:
        if 0 <= r <= T:
            snap_flag[r] = 1

    cdef int[::1] hist_m = np.zeros(window, dtype=np.intc)
    cdef int[::1] hist_b = np.zeros(window, dtype=np.intc)
    cdef long sum_m = 0, sum_b = 0

    cdef Agent p_agent = platform
    cdef list seller_agents = sellers
    cdef Agent ag
    cdef int[MAXN] a_s, bids, manip, rank, order, pool
    cdef bint[MAXN] endorsed, decoy
    cdef double[MAXN] score, util, z, profit
    cdef int i, j, k, g, m, a_p, s, s_next, winner, e_rule, d_flag, pos, slot, km, kb, m_round, b_round
    cdef long t
    cdef double w, u, top, total, b_term, nu, cs, r_p, mean_m, mean_b, q_w, p_w
    cdef double *par
    cdef int tmp

    s = 0
    for t in range(T):
        # 1. selections
        if platform_learns:
            a_p = p_agent.select(s, t, bg)
            d_flag = a_p % 2
            e_rule = (a_p // 2) % 4
            w = BID_WEIGHTS[a_p // 8]
        else:
            a_p = -1
            d_flag = fixed_d
            e_rule = fixed_e
            w = fixed_w
        for i in range(n):
            if seller_fixed[i] >= 0:
                a_s[i] = seller_fixed[i]
            else:
                ag = seller_agents[i]
                a_s[i] = ag.select(s, t, bg)
            bids[i] = a_s[i] % 3
            manip[i] = a_s[i] // 3

        # 2. consumer class
        k = 0
        if n_classes > 1:
            u = uniform(bg)
            while k < n_classes - 1 and not u < class_cum[k]:
                k += 1
        par = &bias[k, 0]

        # 3. ranking: insertion sort on (-score, index), or (-score, -index) for inverse ties,
        # then shuffle equal-score runs for random ties
        for i in range(n):
            score[i] = (1.0 - w) * quality[i] + w * (bids[i] / 2.0)
            j = i
            while j > 0 and (score[order[j - 1]] < score[i]
                             or (rank_mode == 1 and score[order[j - 1]] == score[i])):
                order[j] = order[j - 1]
                j -= 1
            order[j] = i
        if rank_mode == 2:
            pos = 0
            while pos < n:
                g = pos
                while g + 1 < n and score[order[g + 1]] == score[order[pos]]:
                    g += 1
                # partial Fisher-Yates over order[pos..g], preserving the remaining order
                m = g - pos + 1
                for j in range(pos, g + 1):
                    for i in range(m):
                        pool[i] = order[j + i]
                    if m > 1:
                        i = <int>(uniform(bg) * m)
                    else:
                        i = 0
                    tmp = pool[i]
                    for k in range(i, 0, -1):
                        pool[k] = pool[k - 1]
                    pool[0] = tmp
                    for i in range(m):
                        order[j + i] = pool[i]
                    m -= 1
                pos = g + 1
        for i in range(n):
            rank[order[i]] = i + 1

        # 4-5. badge and decoy
        for i in range(n):
            endorsed[i] = 0
            decoy[i] = 0
        if e_rule == 0:
            endorsed[0] = 1
        elif e_rule == 1 or e_rule == 2:
            m = argmax_bidders(bids, n, &quality[0], e_rule == 2, pool)
            if m > 0:
                endorsed[pick(pool, m, badge_mode, bg)] = 1
        if d_flag:
            m = argmax_bidders(bids, n, &quality[0], 0, pool)
            decoy[pick(pool, m, decoy_mode, bg)] = 1

        # 6. consumer choice
        if true_random:
            winner = uniform_index(uniform(bg), n)
        else:
            for i in range(n):
                b_term = 0.0
                if rank[i] <= 3:
                    b_term += par[3]
                if rank[i] == 1:
                    b_term += par[2]
                if rank[i] == n:
                    b_term += par[4]
                if endorsed[i]:
                    b_term += par[5]
                if bids[i] >= 1:
                    b_term += par[6]
                nu = visibility(rank[i], n)
                if additive:
                    b_term += par[7] * manip[i] + par[8] * nu
                else:
                    b_term += par[7] * manip[i] * ((1.0 - par[8]) + par[8] * nu)
                if decoy[i]:
                    b_term += par[9]
                util[i] = par[0] * quality[i] - par[1] * price[i] + b_term
            top = util[0]
            for i in range(1, n):
                if util[i] > top:
                    top = util[i]
            for i in range(n):
                z[i] = exp((util[i] - top) / par[10])
            total = 0.0
            for i in range(n):
                total += z[i]
            winner = sample_weights(z, n, total, uniform(bg))
        # 7. override
        if override_p > 0.0 and uniform(bg) < override_p:
            winner = 0

        # 8. payoffs
        q_w = quality[winner]
        p_w = price[winner]
        cs = q_w - p_w
        r_p = bids[winner] * phi_w * kappa + tau * p_w
        for i in range(n):
            profit[i] = (-bids[i]) * phi_l
        profit[winner] = (p_w - cost[winner]) * (1.0 - tau) - bids[winner] * phi_w

        # 9. state
        m_round = 0
        b_round = 0
        for i in range(n):
            m_round += manip[i]
            b_round += bids[i]
        slot = t % window
        sum_m += m_round - hist_m[slot]
        sum_b += b_round - hist_b[slot]
        hist_m[slot] = m_round
        hist_b[slot] = b_round
        if t + 1 < window:
            s_next = 0
        else:
            mean_m = <double>sum_m / <double>(window * n)
            mean_b = <double>sum_b / <double>(window * n)
            km = 0
            for j in range(1, bins_m):
                if mean_m >= max_manip * j / bins_m:
                    km = j
            kb = 0
            for j in range(1, bins_b):
                if mean_b >= max_bid * j / bins_b:
                    kb = j
            s_next = km * bins_b + kb

        # 10. learning
        if platform_learns:
            p_agent.update(s, a_p, r_p, s_next, t, bg)
        for i in range(n):
            if seller_fixed[i] < 0:
                ag = seller_agents[i]
                ag.update(s, a_s[i], profit[i], s_next, t, bg)
        s = s_next

        # records
        o_cs[t] = cs
        o_pp[t] = r_p
        total = 0.0
        for i in range(n):
            total += profit[i]
        o_sp[t] = total
        o_win[t] = winner
        o_pa[t] = a_p
        o_m[t] = m_round
        o_b[t] = b_round
        if t >= measure_start:
            o_wins[winner] += 1
            for i in range(n):
                o_wp[i] += profit[i]
        if snap_flag[t + 1] and table_size:
            out.snapshots[snap_at[t + 1]] = np.concatenate([x.snapshot() for x in learners])

    for x in learners:
        ag = x
        if ag.algo == REINFORCE:
            ag.flush()
    return out
