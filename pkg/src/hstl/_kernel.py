"""Compiled training loop.

Mirrors :func:`hstl.options.execute_option` and :func:`hstl.learning.hstl_update`
operation for operation, including the order in which uniforms are consumed,
so that a seeded run gives identical tables on either path.
"""

from __future__ import annotations

import numpy as np
from numba import njit

from .stl import Always, And, Eventually, Not, Or, Predicate, Until, children, truncate_horizon

PRED, NOT, AND, OR, ALWAYS, EVENTUALLY, UNTIL = range(7)
_KIND = {Predicate: PRED, Not: NOT, And: AND, Or: OR, Always: ALWAYS, Eventually: EVENTUALLY, Until: UNTIL}


def _postfix(phi):
    out = []

    def visit(node):
        for c in children(node):
            visit(c)
        out.append(node)

    visit(phi)
    return out


class CompiledFormula:
    """Formula flattened to arrays, children before parents, root last.

    ``lo[L]`` and ``hi[L]`` hold every node's window after clipping the
    formula to ``L`` samples; ``pred_table[leaf, state]`` holds predicate
    robustness for every state index of the environment.
    """

    def __init__(self, phi, env, max_length: int):
        nodes = _postfix(phi)
        position = {}
        n = len(nodes)
        self.kind = np.empty(n, dtype=np.int64)
        self.left = np.full(n, -1, dtype=np.int64)
        self.right = np.full(n, -1, dtype=np.int64)
        self.leaf = np.full(n, -1, dtype=np.int64)
        leaves = []
        for i, node in enumerate(nodes):
            position[id(node)] = i
            self.kind[i] = _KIND[type(node)]
            kids = children(node)
            if kids:
                self.left[i] = position[id(kids[0])]
            if len(kids) == 2:
                self.right[i] = position[id(kids[1])]
            if isinstance(node, Predicate):
                self.leaf[i] = len(leaves)
                leaves.append(node)

        from .stl import predicate_robustness

        states = list(env.states())
        self.pred_table = np.array(
            [[float(predicate_robustness(s, p, env.state_variables)) for s in states] for p in leaves]
        ).reshape(len(leaves), len(states))

        self.lo = np.zeros((max_length + 1, n), dtype=np.int64)
        self.hi = np.zeros((max_length + 1, n), dtype=np.int64)
        for length in range(1, max_length + 1):
            clipped = _postfix(truncate_horizon(phi, length))
            for i, node in enumerate(clipped):
                if isinstance(node, (Always, Eventually, Until)):
                    self.lo[length, i] = node.lo
                    self.hi[length, i] = int(node.hi)
        self.n_nodes = n


@njit(cache=True)
def evaluate(kind, left, right, leaf, lo, hi, pred_table, traj, t0, sig, need_lo, need_hi):
    """Robustness at index ``t0`` of the trajectory of state indices ``traj``."""
    n = kind.shape[0]
    for v in range(n):
        need_lo[v] = 1 << 62
        need_hi[v] = -1
    need_lo[n - 1] = t0
    need_hi[n - 1] = t0 + 1
    for v in range(n - 1, -1, -1):
        a = need_lo[v]
        b = need_hi[v]
        if b <= a:
            continue
        kd = kind[v]
        if kd == PRED:
            continue
        if kd == NOT or kd == AND or kd == OR:
            ca, cb, da, db = a, b, a, b
        elif kd == UNTIL:
            ca, cb = a, b - 1 + hi[v] - 1
            da, db = a + lo[v], b - 1 + hi[v]
        else:
            ca, cb = a + lo[v], b - 1 + hi[v]
            da, db = ca, cb
        c = left[v]
        if ca < need_lo[c]:
            need_lo[c] = ca
        if cb > need_hi[c]:
            need_hi[c] = cb
        c = right[v]
        if c >= 0:
            if da < need_lo[c]:
                need_lo[c] = da
            if db > need_hi[c]:
                need_hi[c] = db

    for v in range(n):
        kd = kind[v]
        for t in range(need_lo[v], need_hi[v]):
            if kd == PRED:
                sig[v, t] = pred_table[leaf[v], traj[t]]
            elif kd == NOT:
                sig[v, t] = -sig[left[v], t]
            elif kd == AND:
                sig[v, t] = min(sig[left[v], t], sig[right[v], t])
            elif kd == OR:
                sig[v, t] = max(sig[left[v], t], sig[right[v], t])
            elif kd == ALWAYS:
                acc = np.inf
                for u in range(t + lo[v], t + hi[v]):
                    acc = min(acc, sig[left[v], u])
                sig[v, t] = acc
            elif kd == EVENTUALLY:
                acc = -np.inf
                for u in range(t + lo[v], t + hi[v]):
                    acc = max(acc, sig[left[v], u])
                sig[v, t] = acc
            else:
                best = -np.inf
                running = np.inf
                for u in range(t, t + hi[v]):
                    if u >= t + lo[v]:
                        best = max(best, min(sig[right[v], u], running))
                    running = min(running, sig[left[v], u])
                sig[v, t] = best
    return sig[n - 1, t0]


@njit(cache=True)
def choose(qrow, mask, eps, u, v):
    """Epsilon-greedy over the masked entries of ``qrow`` (see ``epsilon_greedy``)."""
    nc = 0
    for i in range(qrow.shape[0]):
        if mask[i]:
            nc += 1
    if u < eps:
        target = int(v * nc)
        for i in range(qrow.shape[0]):
            if mask[i]:
                if target == 0:
                    return i
                target -= 1
    best = -np.inf
    for i in range(qrow.shape[0]):
        if mask[i] and qrow[i] > best:
            best = qrow[i]
    nt = 0
    for i in range(qrow.shape[0]):
        if mask[i] and qrow[i] == best:
            nt += 1
    target = int(v * nt)
    for i in range(qrow.shape[0]):
        if mask[i] and qrow[i] == best:
            if target == 0:
                return i
            target -= 1
    return -1


@njit(cache=True)
def _masked_max(row, mask):
    best = -np.inf
    for i in range(row.shape[0]):
        if mask[i] and row[i] > best:
            best = row[i]
    return best


@njit(cache=True)
def run_episode(
    s,
    n_choices,
    step_cap,
    flat_q,
    option_q,
    available,
    opt_seq,
    opt_len,
    term,
    min_steps,
    psi_table,
    succ,
    out_actions,
    out_cdf,
    kind,
    left,
    right,
    leaf,
    lo_tab,
    hi_tab,
    pred_table,
    flat_alpha,
    flat_gamma,
    option_alpha,
    option_gamma_pow,
    exponent_total,
    eps0_f,
    decay_f,
    floor_f,
    eps0_o,
    decay_o,
    floor_o,
    steps,
    choices,
    u_explore,
    pe,
    u_env,
    pv,
    counts,
    traj,
    acts,
    sig,
    need_lo,
    need_hi,
):
    n_flat = flat_q.shape[0]
    n_actions = flat_q.shape[2]
    all_actions = np.ones(n_actions, dtype=np.bool_)
    last_outcome = out_cdf.shape[1] - 1
    cumulative = 0.0
    episode_steps = 0
    for _ in range(n_choices):
        eps_o = max(floor_o, eps0_o - decay_o * choices)
        o = choose(option_q[s], available[s], eps_o, u_explore[pe], u_explore[pe + 1])
        pe += 2
        choices += 1
        counts[o] += 1

        k = 0
        traj[0] = s
        cur = s
        capped = False
        for ci in range(opt_len[o]):
            j = opt_seq[o, ci]
            eps_j = max(floor_f[j], eps0_f[j] - decay_f[j] * steps)
            taken = 0
            while taken < min_steps[j] or not term[j, cur]:
                if k >= step_cap:
                    capped = True
                    break
                a = choose(flat_q[j, cur], all_actions, eps_j, u_explore[pe], u_explore[pe + 1])
                pe += 2
                u = u_env[pv]
                pv += 1
                jj = 0
                while jj < last_outcome and u >= out_cdf[a, jj]:
                    jj += 1
                cur = succ[cur, out_actions[a, jj]]
                k += 1
                traj[k] = cur
                acts[k - 1] = a
                taken += 1
            if capped:
                break

        end = traj[k]
        if k == 0:
            r_o = evaluate(kind, left, right, leaf, lo_tab[1], hi_tab[1], pred_table, traj, 0, sig, need_lo, need_hi)
            best = _masked_max(option_q[end], available[end])
            option_q[s, o] = option_q[s, o] + option_alpha * (r_o + option_gamma_pow[0] * best - option_q[s, o])
            cumulative += r_o
        for i in range(k):
            si = traj[i]
            a = acts[i]
            sn = traj[i + 1]
            for j in range(n_flat):
                r_j = psi_table[j, sn]
                m = -np.inf
                for b in range(n_actions):
                    if flat_q[j, sn, b] > m:
                        m = flat_q[j, sn, b]
                flat_q[j, si, a] = flat_q[j, si, a] + flat_alpha[j] * (r_j + flat_gamma[j] * m - flat_q[j, si, a])
            length = k + 1 - i
            r_o = evaluate(
                kind, left, right, leaf, lo_tab[length], hi_tab[length], pred_table, traj, i, sig, need_lo, need_hi
            )
            if i == 0:
                cumulative += r_o
            e = k if exponent_total else k - i
            best = _masked_max(option_q[end], available[end])
            option_q[si, o] = option_q[si, o] + option_alpha * (r_o + option_gamma_pow[e] * best - option_q[si, o])
        steps += k
        episode_steps += k
        s = cur
    return s, cumulative, episode_steps, steps, choices, pe, pv
