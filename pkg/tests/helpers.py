import numpy as np

from subnet_init.linear_id import LinearSS


def random_stable_ss(n_x, n_u, n_y, rng, rmin=0.3, rmax=0.9):
    """Random stable system with pole magnitudes in [rmin, rmax], orthogonally rotated."""
    blocks = []
    k = n_x
    while k > 0:
        r = rng.uniform(rmin, rmax)
        if k >= 2 and rng.random() < 0.5:
            th = rng.uniform(0.1, np.pi - 0.1)
            blocks.append(r * np.array([[np.cos(th), -np.sin(th)], [np.sin(th), np.cos(th)]]))
            k -= 2
        else:
            blocks.append(np.array([[r * rng.choice([-1.0, 1.0])]]))
            k -= 1
    D = np.zeros((n_x, n_x))
    i = 0
    for b in blocks:
        s = b.shape[0]
        D[i:i + s, i:i + s] = b
        i += s
    Q, _ = np.linalg.qr(rng.standard_normal((n_x, n_x)))
    return LinearSS(Q @ D @ Q.T, rng.standard_normal((n_x, n_u)), rng.standard_normal((n_y, n_x)))
