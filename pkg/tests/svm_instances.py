import numpy as np


def separable(seed, n, d, margin=0.1):
    """Points uniform in [-1, 1]^d labelled by a random hyperplane, none closer than ``margin``."""
    r = np.random.default_rng(seed)
    w = r.standard_normal(d)
    w /= np.linalg.norm(w)
    b = r.uniform(-0.3, 0.3)
    X = []
    while len(X) < n:
        x = r.uniform(-1, 1, d)
        if abs(w @ x + b) >= margin:
            X.append(x)
    X = np.array(X)
    s = X @ w + b
    return X[s > 0], X[s < 0]


def separating_cost(P, N, seed, d, margin=0.1):
    """A cost C at which the soft-margin optimum provably separates ``(P, N)``.

    The generating hyperplane scaled by ``1/margin`` has every functional
    margin >= 1, so its objective is ``(|w|^2 + c^2) / (2 C margin^2 n)`` with
    ``c`` the offset on centred data.  Once that is below ``1/n`` (the least
    hinge any misclassified point pays) the optimum cannot misclassify.
    """
    r = np.random.default_rng(seed)
    w = r.standard_normal(d)
    w /= np.linalg.norm(w)
    b = r.uniform(-0.3, 0.3)
    c = b + w @ np.vstack([P, N]).mean(axis=0)
    return 1.01 * (1.0 + c * c) / (2.0 * margin * margin)
