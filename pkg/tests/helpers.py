"""Shared finite-difference oracles for the test suite."""

import numpy as np

from gnireg.network import flatten_params, with_params


def fd_gradient(f, theta, h=1e-5):
    """Central finite-difference gradient of a scalar function of a flat vector."""
    theta = np.asarray(theta, dtype=np.float64)
    g = np.empty_like(theta)
    for i in range(theta.size):
        e = np.zeros_like(theta)
        e[i] = h
        g[i] = (f(theta + e) - f(theta - e)) / (2.0 * h)
    return g


def fd_param_gradient(net, scalar_of_net, h=1e-5):
    """FD gradient of a scalar network functional w.r.t. all parameters."""
    theta = flatten_params(net)
    return fd_gradient(lambda t: scalar_of_net(with_params(net, t)), theta, h)


def rel_err(a, b, floor=1e-6):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    return np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)
