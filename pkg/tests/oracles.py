"""Brute-force reference implementations used only by the tests."""
import math

import numpy as np


def cox_loglik_loop(risk, times, events):
    total = 0.0
    for i in range(len(times)):
        if events[i]:
            denom = sum(math.exp(risk[j]) for j in range(len(times)) if times[j] >= times[i])
            total += risk[i] - math.log(denom)
    return total


def cox_grad_loop(risk, times, events):
    n = len(times)
    g = np.zeros(n)
    for k in range(n):
        g[k] = float(events[k])
        for i in range(n):
            if events[i] and times[i] <= times[k]:
                denom = sum(math.exp(risk[j]) for j in range(n) if times[j] >= times[i])
                g[k] -= math.exp(risk[k]) / denom
    return g


def step_value(grid, values, t):
    """Right-continuous step function, 1 before the first grid point."""
    s = 1.0
    for g, v in zip(grid, values):
        if g <= t:
            s = v
    return s


def concordance_pairs(grid, S, times, events):
    conc = comp = 0.0
    n = len(times)
    for i in range(n):
        if not events[i]:
            continue
        for j in range(n):
            if times[i] < times[j]:
                comp += 1
                si = step_value(grid, S[i], times[i])
                sj = step_value(grid, S[j], times[i])
                conc += 1.0 if si < sj else (0.5 if si == sj else 0.0)
    return conc, comp


def km_loop(times, events):
    """Product-limit estimate as a list of (time, survival)."""
    s = 1.0
    out = []
    for t in sorted(set(times)):
        at_risk = sum(1 for x in times if x >= t)
        d = sum(1 for x, e in zip(times, events) if x == t and e)
        s *= 1.0 - d / at_risk
        out.append((t, s))
    return out


def rmst_loop(times, events, tau):
    """Integral of the Kaplan-Meier curve from 0 to tau."""
    area, prev_t, s = 0.0, 0.0, 1.0
    for t, v in km_loop(times, events):
        if t > tau:
            break
        area += s * (t - prev_t)
        prev_t, s = t, v
    return area + s * (tau - prev_t)


def pseudo_value_loop(times, events, i):
    n = len(times)
    tau = max(times)
    theta = rmst_loop(times, events, tau)
    rest_t = [t for k, t in enumerate(times) if k != i]
    rest_e = [e for k, e in enumerate(events) if k != i]
    return n * theta - (n - 1) * rmst_loop(rest_t, rest_e, tau)


def brier_loop(grid, S, times, events, eval_times):
    scores = []
    for t in eval_times:
        num, cnt = 0.0, 0
        for i in range(len(times)):
            if times[i] <= t and not events[i]:
                continue
            y = 1.0 if times[i] > t else 0.0
            num += (step_value(grid, S[i], t) - y) ** 2
            cnt += 1
        if cnt:
            scores.append(num / cnt)
    return sum(scores) / len(scores)


def ici_loop(probs, times, events, t_star):
    probs = list(probs)
    edges = np.quantile(probs, [k / 10 for k in range(1, 10)])
    groups = {}
    for i, p in enumerate(probs):
        g = sum(1 for e in edges if e < p)
        groups.setdefault(g, []).append(i)
    total = 0.0
    for members in groups.values():
        km = km_loop([times[i] for i in members], [events[i] for i in members])
        s = 1.0
        for t, v in km:
            if t <= t_star:
                s = v
        pred = sum(probs[i] for i in members) / len(members)
        total += len(members) / len(probs) * abs(pred - (1.0 - s))
    return total
