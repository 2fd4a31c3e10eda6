"""Independent reference computations used by several test modules."""

import numpy as np


def dense_matrix(op):
    """Operator as an explicit matrix, built column by column from ``apply``."""
    size = int(np.prod(op.input_shape))
    cols = [op.apply(e.reshape(op.input_shape)).ravel() for e in np.eye(size)]
    return np.array(cols).T


def conjugate_posterior(A, mean, var, y, noise_sigma):
    """Posterior N(mu, Sigma) for x ~ N(mean, diag var), y = A x + N(0, noise_sigma^2 I)."""
    m = np.ravel(mean)
    prec = np.diag(1.0 / np.ravel(var)) + A.T @ A / noise_sigma ** 2
    sigma = np.linalg.inv(prec)
    mu = np.linalg.solve(prec, m / np.ravel(var) + A.T @ np.ravel(y) / noise_sigma ** 2)
    return mu, sigma


def block_srf(k, gain):
    """Disjoint band groups per channel, each column scaled to squared norm ``gain``.

    Then ``Q^T Q = gain * I``, which keeps the scalar likelihood covariance
    used by the guided sampler exact.
    """
    q = np.zeros((k, 3))
    edges = np.linspace(0, k, 4).round().astype(int)
    for c in range(3):
        q[edges[c]:edges[c + 1], 2 - c] = 1.0
    return q / np.linalg.norm(q, axis=0) * np.sqrt(gain)


def linear_gaussian_case(k, m, n, noise_sigma, lam, nu, prior_var=0.25, seed=0):
    """Prior, operator matrix and a synthetic measurement in the matched regime."""
    from hsipost.operators import SRFOperator
    from hsipost.prior import GaussianAnalyticPrior

    rng = np.random.default_rng(seed)
    q = block_srf(k, nu / (2.0 * lam))
    op = SRFOperator(q, (m, n))
    mean = rng.uniform(-0.3, 0.3, (k, m, n))
    prior = GaussianAnalyticPrior(mean, np.full((k, m, n), prior_var))
    x = prior.sample(rng)
    y = op.apply(x) + noise_sigma * rng.standard_normal(op.output_shape)
    return prior, op, y


def finite_difference_gradient(f, x, h=1e-6):
    g = np.zeros(x.size)
    flat = x.ravel()
    for i in range(x.size):
        e = np.zeros(x.size)
        e[i] = h
        g[i] = (f((flat + e).reshape(x.shape)) - f((flat - e).reshape(x.shape))) / (2 * h)
    return g.reshape(x.shape)
