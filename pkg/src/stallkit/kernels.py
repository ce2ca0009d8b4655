"""Hot loops shared by the ROM and SINDy modules.

Everything here is written in the numpy subset numba understands.  With
numba enabled the functions are compiled on first use; with
``STALLKIT_DISABLE_NUMBA=1`` the same source runs in the interpreter.
"""
import numpy as np

from ._accel import jit


# --------------------------------------------------------------------------
# LASSO coordinate descent
# --------------------------------------------------------------------------

@jit
def lasso_cd(gram, corr, alpha, xi0, tol, max_sweeps):
    """Cyclic coordinate descent for ``xi^T G xi - 2 c^T xi + alpha |xi|_1``.

    ``gram = Theta^T Theta / N`` and ``corr = Theta^T y / N``, which makes
    the objective equal to ``(1/N)|y - Theta xi|^2 + alpha |xi|_1`` up to a
    constant.  Returns ``(xi, sweeps, converged)``.
    """
    p = gram.shape[0]
    xi = xi0.copy()
    half = 0.5 * alpha
    sweeps = 0
    converged = False
    while sweeps < max_sweeps:
        sweeps += 1
        delta = 0.0
        for j in range(p):
            gjj = gram[j, j]
            if gjj <= 0.0:
                if xi[j] != 0.0:
                    delta = max(delta, abs(xi[j]))
                    xi[j] = 0.0
                continue
            rho = corr[j]
            for k in range(p):
                if k != j:
                    rho -= gram[j, k] * xi[k]
            if rho > half:
                new = (rho - half) / gjj
            elif rho < -half:
                new = (rho + half) / gjj
            else:
                new = 0.0
            d = abs(new - xi[j])
            if d > delta:
                delta = d
            xi[j] = new
        if delta <= tol:
            converged = True
            break
    return xi, sweeps, converged


# --------------------------------------------------------------------------
# forward Euler on the cubic library
# --------------------------------------------------------------------------

@jit
def cubic_features(x1, x2, out):
    out[0] = 1.0
    out[1] = x1
    out[2] = x2
    out[3] = x1 * x1
    out[4] = x1 * x2
    out[5] = x2 * x2
    out[6] = x1 * x1 * x1
    out[7] = x1 * x1 * x2
    out[8] = x1 * x2 * x2
    out[9] = x2 * x2 * x2


@jit
def euler_rollout(xi, x0, dt, steps, limit):
    """Forward Euler for ``x' = Theta(x) xi``.

    Returns the ``(steps + 1, 2)`` trajectory and the index of the first row
    whose magnitude exceeded ``limit`` (or -1).  Rows after a blow-up are
    left as zero.
    """
    traj = np.zeros((steps + 1, 2))
    feat = np.empty(10)
    traj[0, 0] = x0[0]
    traj[0, 1] = x0[1]
    x1 = x0[0]
    x2 = x0[1]
    for i in range(steps):
        cubic_features(x1, x2, feat)
        f1 = 0.0
        f2 = 0.0
        for k in range(10):
            f1 += feat[k] * xi[k, 0]
            f2 += feat[k] * xi[k, 1]
        x1 = x1 + dt * f1
        x2 = x2 + dt * f2
        if not (abs(x1) <= limit and abs(x2) <= limit):
            return traj, i + 1
        traj[i + 1, 0] = x1
        traj[i + 1, 1] = x2
    return traj, -1


# --------------------------------------------------------------------------
# Adam and the two autoencoders
# --------------------------------------------------------------------------
# Written with whole-array operations so the interpreted path is still usable;
# under numba the matrix products go through BLAS.

@jit
def adam_update(param, grad, m, v, lr, b1, b2, eps, t):
    """In-place Adam step on flat arrays; ``t`` is the 1-based step count."""
    c1 = 1.0 - b1 ** t
    c2 = 1.0 - b2 ** t
    m *= b1
    m += (1.0 - b1) * grad
    v *= b2
    v += (1.0 - b2) * grad * grad
    param -= lr * (m / c1) / (np.sqrt(v / c2) + eps)


# Linear autoencoder, flat layout  W1 (m, n) | b1 (m) | W2 (n, m) | b2 (n)

@jit
def linear_ae_loss_grad(theta, Y, m, lam, grad):
    """Mean per-row squared error plus ``lam * (|W1|^2 + |W2|^2)``.

    The gradient is written into ``grad``; the loss is returned.
    """
    N, n = Y.shape
    k = m * n
    W1 = theta[:k].reshape((m, n))
    b1 = theta[k:k + m]
    W2 = theta[k + m:2 * k + m].reshape((n, m))
    b2 = theta[2 * k + m:]
    Z = Y @ W1.T + b1
    R = Z @ W2.T + b2 - Y
    G = (2.0 / N) * R
    dZ = G @ W2
    grad[:k] = (dZ.T @ Y).ravel() + 2.0 * lam * theta[:k]
    grad[k:k + m] = dZ.sum(axis=0)
    grad[k + m:2 * k + m] = (G.T @ Z).ravel() + 2.0 * lam * theta[k + m:2 * k + m]
    grad[2 * k + m:] = G.sum(axis=0)
    reg = np.sum(theta[:k] ** 2) + np.sum(theta[k + m:2 * k + m] ** 2)
    return np.sum(R * R) / N + lam * reg


@jit
def linear_ae_full_loss(theta, Y, m, lam):
    N, n = Y.shape
    k = m * n
    W1 = theta[:k].reshape((m, n))
    W2 = theta[k + m:2 * k + m].reshape((n, m))
    R = (Y @ W1.T + theta[k:k + m]) @ W2.T + theta[2 * k + m:] - Y
    reg = np.sum(theta[:k] ** 2) + np.sum(theta[k + m:2 * k + m] ** 2)
    return np.sum(R * R) / N + lam * reg


# NLPCA, flat layout
#   W1 (h, n) | b1 (h) | W2 (m, h) | b2 (m) | W3 (h, m) | b3 (h) | W4 (n, h) | b4 (n)

@jit
def nlpca_offsets(n, h, m):
    o = np.empty(9, dtype=np.int64)
    o[0] = 0
    o[1] = o[0] + h * n
    o[2] = o[1] + h
    o[3] = o[2] + m * h
    o[4] = o[3] + m
    o[5] = o[4] + h * m
    o[6] = o[5] + h
    o[7] = o[6] + n * h
    o[8] = o[7] + n
    return o


@jit
def nlpca_encode(theta, Y, h, m):
    n = Y.shape[1]
    o = nlpca_offsets(n, h, m)
    W1 = theta[o[0]:o[1]].reshape((h, n))
    W2 = theta[o[2]:o[3]].reshape((m, h))
    A1 = np.tanh(Y @ W1.T + theta[o[1]:o[2]])
    return A1 @ W2.T + theta[o[3]:o[4]]


@jit
def nlpca_decode(theta, Z, n, h):
    m = Z.shape[1]
    o = nlpca_offsets(n, h, m)
    W3 = theta[o[4]:o[5]].reshape((h, m))
    W4 = theta[o[6]:o[7]].reshape((n, h))
    A2 = np.tanh(Z @ W3.T + theta[o[5]:o[6]])
    return A2 @ W4.T + theta[o[7]:o[8]]


@jit
def nlpca_loss_grad(theta, Y, h, m, grad):
    """Mean per-row squared reconstruction error and its gradient."""
    N, n = Y.shape
    o = nlpca_offsets(n, h, m)
    W1 = theta[o[0]:o[1]].reshape((h, n))
    W2 = theta[o[2]:o[3]].reshape((m, h))
    W3 = theta[o[4]:o[5]].reshape((h, m))
    W4 = theta[o[6]:o[7]].reshape((n, h))
    A1 = np.tanh(Y @ W1.T + theta[o[1]:o[2]])
    Z = A1 @ W2.T + theta[o[3]:o[4]]
    A2 = np.tanh(Z @ W3.T + theta[o[5]:o[6]])
    R = A2 @ W4.T + theta[o[7]:o[8]] - Y
    G = (2.0 / N) * R
    D2 = (G @ W4) * (1.0 - A2 * A2)
    DZ = D2 @ W3
    D1 = (DZ @ W2) * (1.0 - A1 * A1)
    grad[o[0]:o[1]] = (D1.T @ Y).ravel()
    grad[o[1]:o[2]] = D1.sum(axis=0)
    grad[o[2]:o[3]] = (DZ.T @ A1).ravel()
    grad[o[3]:o[4]] = DZ.sum(axis=0)
    grad[o[4]:o[5]] = (D2.T @ Z).ravel()
    grad[o[5]:o[6]] = D2.sum(axis=0)
    grad[o[6]:o[7]] = (G.T @ A2).ravel()
    grad[o[7]:o[8]] = G.sum(axis=0)
    return np.sum(R * R) / N


@jit
def nlpca_full_loss(theta, Y, h, m):
    R = nlpca_decode(theta, nlpca_encode(theta, Y, h, m), Y.shape[1], h) - Y
    return np.sum(R * R) / Y.shape[0]


@jit
def linear_ae_epoch(theta, Y, order, m, lam, batch, lr, b1, b2, eps, mom, vel, t0):
    """One shuffled pass of mini-batch Adam; returns the updated step count."""
    N = Y.shape[0]
    grad = np.empty_like(theta)
    t = t0
    for start in range(0, N, batch):
        stop = min(start + batch, N)
        B = Y[order[start:stop]]
        linear_ae_loss_grad(theta, B, m, lam, grad)
        t += 1
        adam_update(theta, grad, mom, vel, lr, b1, b2, eps, t)
    return t


@jit
def nlpca_epoch(theta, Y, order, h, m, batch, lr, b1, b2, eps, mom, vel, t0):
    N = Y.shape[0]
    grad = np.empty_like(theta)
    t = t0
    for start in range(0, N, batch):
        stop = min(start + batch, N)
        B = Y[order[start:stop]]
        nlpca_loss_grad(theta, B, h, m, grad)
        t += 1
        adam_update(theta, grad, mom, vel, lr, b1, b2, eps, t)
    return t
