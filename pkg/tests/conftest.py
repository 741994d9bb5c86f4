"""Shared test helpers: independent oracle integrators and tiny fixtures.

The oracles here deliberately avoid the package's solver path: they use
dense linear algebra and their own update formulas, so agreement with the
package is evidence, not tautology.
"""

import numpy as np
import pytest
import scipy.sparse as sp


def reference_trapezoidal(M_gal, K, forcing, d0, theta, dt, n_steps,
                          M_stab=None, v0=None):
    """Dense single-domain integrator of M dc/dt + K c = f.

    The stabilization capacity (when given) is applied at the
    theta-weighted level, matching the coupled scheme's convention:
    M_gal v1 + M_stab((1-theta) v0 + theta v1) + K d1 = f(t1).
    Returns the list of (t, d, v) triples including the initial state.
    """
    Mg = np.asarray(M_gal.todense() if sp.issparse(M_gal) else M_gal, dtype=float)
    Kd = np.asarray(K.todense() if sp.issparse(K) else K, dtype=float)
    S = (np.asarray(M_stab.todense() if sp.issparse(M_stab) else M_stab,
                    dtype=float) if M_stab is not None else np.zeros_like(Mg))
    d = np.asarray(d0, dtype=float).copy()
    if v0 is None:
        v = np.linalg.solve(Mg + S, forcing(0.0) - Kd @ d)
    else:
        v = np.asarray(v0, dtype=float).copy()
    out = [(0.0, d.copy(), v.copy())]
    A = Mg + theta * S + theta * dt * Kd
    for n in range(1, n_steps + 1):
        t = n * dt
        rhs = forcing(t) - Kd @ (d + (1 - theta) * dt * v) - (1 - theta) * (S @ v)
        v_new = np.linalg.solve(A, rhs)
        d = d + dt * ((1 - theta) * v + theta * v_new)
        v = v_new
        out.append((t, d.copy(), v.copy()))
    return out


def dense_constraint_matrix(constraints, sizes):
    """Materialize the signed Boolean map densely (test-only)."""
    C = np.zeros((constraints.n_lambda, sum(sizes)))
    offsets = np.concatenate([[0], np.cumsum(sizes)])
    for sid in range(1, constraints.n_subdomains + 1):
        rows, dofs, signs = constraints.entries[sid]
        for r, dof, sign in zip(rows, dofs, signs):
            C[r, offsets[sid - 1] + dof] = sign
    return C


@pytest.fixture
def rng():
    return np.random.default_rng(20240512)
