"""Pure numpy versions of the compiled kernels (same signatures, same step order)."""
from itertools import combinations

import numpy as np

PERT_NONE, PERT_SAM, PERT_MOMENTUM = 0, 1, 2


def quad_local_steps(x_r, mom, a, b, noise, shift, steps, eta, alpha, rho,
                     pert, blend, use_shift, eps_zero):
    x = np.array(x_r, dtype=np.float64)
    noisy = noise.shape[0] > 0
    loss = np.empty(steps)
    pnorm = np.full(steps, np.nan)
    dnorm = np.full(steps, np.nan)
    for s in range(steps):
        if pert == PERT_MOMENTUM:
            e = (x_r + float(s) * mom) - x
        elif pert == PERT_SAM:
            e = a * (x - b)
            if noisy:
                e = e + noise[s]
        if pert != PERT_NONE:
            nd = np.sqrt(np.dot(e, e))
            dnorm[s] = nd
        if pert != PERT_NONE and nd >= eps_zero:
            e = e * (rho / nd)
            pnorm[s] = np.sqrt(np.dot(e, e))
            z = x + e
        else:
            z = x
        r = z - b
        g = a * r
        loss[s] = 0.5 * np.dot(g, r)
        if noisy:
            g = g + noise[s]
        if use_shift:
            g = g + shift
        v = alpha * g + (1.0 - alpha) * mom if blend else g
        x = x - eta * v
    return x, loss, pnorm, dnorm


def subset_mean_sq(V, s):
    V = np.asarray(V, dtype=np.float64)
    N = V.shape[0]
    if not 1 <= s <= N:
        raise ValueError("need 1 <= s <= N")
    idx = np.array(list(combinations(range(N), s)), dtype=np.intp)
    means = V[idx].sum(axis=1) / s
    return float(np.mean(np.einsum("ij,ij->i", means, means)))
