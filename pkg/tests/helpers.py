"""Finite-difference and brute-force oracles shared by the tests."""

import math

import numpy as np


def central_diff(f, arrays, h=1e-5):
    """Central differences of scalar ``f()`` with respect to every entry of ``arrays`` (mutated in place)."""
    out = {}
    for key, a in arrays.items():
        g = np.zeros_like(a)
        flat = a.reshape(-1)
        gf = g.reshape(-1)
        for j in range(flat.size):
            old = flat[j]
            flat[j] = old + h
            fp = f()
            flat[j] = old - h
            fm = f()
            flat[j] = old
            gf[j] = (fp - fm) / (2 * h)
        out[key] = g
    return out


def max_rel_err(analytic: dict, numeric: dict, floor=1e-3):
    """max |a - n| / max(|a|, |n|, floor) over all entries."""
    worst = 0.0
    for key in analytic:
        a, n = analytic[key], numeric[key]
        err = np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
        worst = max(worst, float(err.max()) if err.size else 0.0)
    return worst


def km_censoring_oracle(T, E, t):
    """Product-limit G(t) by direct loop over distinct censoring times <= t."""
    g = 1.0
    for s in sorted(set(T[i] for i in range(len(T)) if E[i] == 0)):
        if s > t:
            break
        at_risk = sum(1 for x in T if x >= s)
        d = sum(1 for i in range(len(T)) if T[i] == s and E[i] == 0)
        g *= 1.0 - d / at_risk
    return g


def km_censoring_left_oracle(T, E, t):
    g = 1.0
    for s in sorted(set(T[i] for i in range(len(T)) if E[i] == 0)):
        if s >= t:
            break
        at_risk = sum(1 for x in T if x >= s)
        d = sum(1 for i in range(len(T)) if T[i] == s and E[i] == 0)
        g *= 1.0 - d / at_risk
    return g


def cox_nll_oracle(eta, T, E):
    """Breslow Cox negative log partial likelihood by double loop (E > 0 is an event)."""
    total = 0.0
    for i in range(len(T)):
        if E[i] > 0:
            s = sum(math.exp(eta[j]) for j in range(len(T)) if T[j] >= T[i])
            total -= eta[i] - math.log(s)
    return total


def cox_grad_oracle(eta, T, E):
    n = len(T)
    g = [0.0] * n
    for i in range(n):
        if E[i] > 0:
            risk = [j for j in range(n) if T[j] >= T[i]]
            s = sum(math.exp(eta[j]) for j in risk)
            g[i] -= 1.0
            for j in risk:
                g[j] += math.exp(eta[j]) / s
    return np.array(g)


def _inv(g, g_min=1e-4):
    return 1.0 / max(g, g_min)


def td_auc_oracle(scores, T, E, k, G, t):
    """Pairwise enumeration of the IPCW cumulative/dynamic AUC."""
    num = den = 0.0
    n = len(T)
    for i in range(n):
        if not (E[i] == k and T[i] <= t):
            continue
        wi = _inv(float(G.left(T[i])))
        for j in range(n):
            if T[j] > t:
                wj = _inv(float(G(t)))
            elif E[j] != 0 and E[j] != k:
                wj = _inv(float(G.left(T[j])))
            else:
                continue
            credit = 1.0 if scores[i] > scores[j] else 0.5 if scores[i] == scores[j] else 0.0
            num += wi * wj * credit
            den += wi * wj
    return num / den if den > 0 else float("nan")


def td_ci_oracle(cif, T, E, k, G, horizon=math.inf):
    """Pairwise enumeration of the IPCW concordance; ``cif[j, i]`` is F_k(T_i | x_j)."""
    num = den = 0.0
    n = len(T)
    for i in range(n):
        if E[i] != k or T[i] > horizon:
            continue
        w = _inv(float(G.left(T[i]))) ** 2
        for j in range(n):
            if j == i:
                continue
            competing = E[j] != 0 and E[j] != k
            if T[i] < T[j] or (T[i] <= T[j] and competing):
                a, b = cif[i, i], cif[j, i]
                num += w * (1.0 if a > b else 0.5 if a == b else 0.0)
                den += w
    return num / den if den > 0 else float("nan")


def brier_oracle(pred, T, E, k, G, t):
    total = 0.0
    for i in range(len(T)):
        if T[i] <= t and E[i] > 0:
            w = _inv(float(G.left(T[i])))
        elif T[i] > t:
            w = _inv(float(G(t)))
        else:
            w = 0.0
        y = 1.0 if (E[i] == k and T[i] <= t) else 0.0
        total += w * (y - pred[i]) ** 2
    return total / len(T)
