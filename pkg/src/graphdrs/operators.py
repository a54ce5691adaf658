"""Catalogue of maximal monotone operators exposed through their resolvents.

Every operator is a :class:`Resolvent`: a map (step tau, input r) -> output,
single-valued, everywhere defined and firmly nonexpansive.  The step is a
call-time argument because the solver uses node-dependent steps.
"""

import numpy as np
from scipy.linalg import cho_factor, cho_solve


class OperatorError(ValueError):
    """Invalid operator construction parameters."""


class Resolvent:
    """A maximal monotone operator accessed solely through (I + tau*A)^(-1)."""

    def __init__(self, dim, fn, name="resolvent"):
        self.dim = dim
        self.name = name
        self._fn = fn

    def __call__(self, tau, r):
        if tau < 0:
            raise OperatorError("step size must be nonnegative")
        return self._fn(tau, np.asarray(r, dtype=float))

    def __repr__(self):
        return f"Resolvent({self.name}, dim={self.dim})"


def _as_blocks(r):
    if r.size % 2:
        raise OperatorError("input length must be even for 2-vector blocks")
    return r.reshape(-1, 2)


def prox_quadratic(k_matrix, weight):
    """Resolvent of tau * weight * x^T K x for symmetric PSD K.

    J_tau(r) = (I + 2 tau weight K)^(-1) r; the Cholesky factor is cached
    per step size (the solver never changes tau mid-run).
    """
    k_matrix = np.asarray(k_matrix, dtype=float)
    if k_matrix.ndim != 2 or k_matrix.shape[0] != k_matrix.shape[1]:
        raise OperatorError("K must be square")
    if not np.allclose(k_matrix, k_matrix.T, atol=1e-10):
        raise OperatorError("K must be symmetric")
    if weight < 0:
        raise OperatorError("weight must be nonnegative")
    n = k_matrix.shape[0]
    eye = np.eye(n)
    cache = {}

    def fn(tau, r):
        if tau == 0.0 or weight == 0.0:
            return r.copy()
        if tau not in cache:
            cache[tau] = cho_factor(eye + 2.0 * tau * weight * k_matrix)
        return cho_solve(cache[tau], r)

    return Resolvent(n, fn, name="quadratic")


def prox_hinge_affine(s, offset=1.0):
    """Resolvent of tau * max(offset - s.r, 0), reduced to one dimension.

    With p = s.r and q = tau*|s|^2 the projection of p is: p itself when the
    hinge is inactive (p >= offset), p + q deep in the active region, and the
    kink value offset in between.
    """
    s = np.asarray(s, dtype=float)
    s_sq = float(s @ s)
    if s_sq == 0.0:
        raise OperatorError("direction vector s must be nonzero")

    def fn(tau, r):
        p = float(s @ r)
        q = tau * s_sq
        if p >= offset:
            pi = p
        elif p <= offset - q:
            pi = p + q
        else:
            pi = offset
        return r + ((pi - p) / s_sq) * s

    return Resolvent(s.size, fn, name="hinge")


def prox_power_three_halves():
    """Blockwise resolvent of tau * |block|^(3/2) over 2-vector blocks.

    Per block the direction is kept and the magnitude m = u^2 where u is the
    nonnegative root of u^2 + (3 tau / 2) u - |r| = 0 (closed form, exact and
    branch-free; the discriminant is always nonnegative).
    """

    def fn(tau, r):
        blocks = _as_blocks(r)
        norms = np.linalg.norm(blocks, axis=1)
        half = 0.75 * tau  # (3 tau / 2) / 2
        u = -half + np.sqrt(half * half + norms)
        scale = np.zeros_like(norms)
        nz = norms > 0
        scale[nz] = (u[nz] ** 2) / norms[nz]
        return (blocks * scale[:, None]).reshape(r.shape)

    return Resolvent(-1, fn, name="power32")


def prox_group_l1():
    """Blockwise resolvent of tau * |block| (group soft-thresholding)."""

    def fn(tau, r):
        blocks = _as_blocks(r)
        norms = np.linalg.norm(blocks, axis=1)
        scale = np.zeros_like(norms)
        nz = norms > tau
        scale[nz] = 1.0 - tau / norms[nz]
        return (blocks * scale[:, None]).reshape(r.shape)

    return Resolvent(-1, fn, name="group_l1")


def project_affine(lam, b, range_tol=1e-6):
    """Euclidean projection onto {x : lam @ x = b}; independent of tau.

    b is recentered to zero mean before projecting (the divergence data of a
    pair of probability densities must sum to zero up to discretization
    error); construction fails if the corrected b is not in the range of lam.
    """
    lam = np.asarray(lam.todense()) if hasattr(lam, "todense") else np.asarray(lam, float)
    b = np.asarray(b, dtype=float)
    m, n = lam.shape
    if b.shape != (m,):
        raise OperatorError(f"b must have length {m}")
    b = b - b.mean()
    gram = lam @ lam.T
    gram_pinv = np.linalg.pinv(gram, rcond=1e-12)
    # range check: project the zero point and verify feasibility
    x0 = lam.T @ (gram_pinv @ b)
    resid = np.linalg.norm(lam @ x0 - b)
    if resid > range_tol * max(np.linalg.norm(b), 1e-30):
        raise OperatorError(
            f"b is not in the range of the constraint matrix (residual {resid:g})"
        )

    def fn(tau, r):
        return r - lam.T @ (gram_pinv @ (lam @ r - b))

    return Resolvent(n, fn, name="affine_projection")


def project_capacity(bridge_idx, water_idx, cap):
    """Blockwise projection: water blocks to zero, bridge blocks into a ball.

    Blocks indexed by water_idx map to zero, blocks indexed by bridge_idx are
    radially clipped to norm cap, all other blocks pass through; tau plays no
    role.
    """
    bridge = np.asarray(bridge_idx, dtype=int)
    water = np.asarray(water_idx, dtype=int)
    if np.intersect1d(bridge, water).size:
        raise OperatorError("bridge and water index sets overlap")
    if cap <= 0:
        raise OperatorError("capacity must be positive")

    def fn(tau, r):
        blocks = _as_blocks(r).copy()
        if water.size:
            blocks[water] = 0.0
        if bridge.size:
            norms = np.linalg.norm(blocks[bridge], axis=1)
            over = norms > cap
            if np.any(over):
                idx = bridge[over]
                blocks[idx] *= (cap / norms[over])[:, None]
        return blocks.reshape(r.shape)

    return Resolvent(-1, fn, name="capacity_projection")


def prox_translated_quadratic(c, mu=1.0):
    """Resolvent of the affine operator x -> mu (x - c); a test workhorse."""
    c = np.asarray(c, dtype=float)
    if mu <= 0:
        raise OperatorError("mu must be positive")

    def fn(tau, r):
        return (r + tau * mu * c) / (1.0 + tau * mu)

    res = Resolvent(c.size, fn, name="translated_quadratic")
    # closed-form parameters, consumed by the lifted verification step
    res.affine_mu = float(mu)
    res.affine_center = c
    return res


def zero_operator(dim):
    """Resolvent of the zero operator: the identity map."""
    return Resolvent(dim, lambda tau, r: r.copy(), name="zero")
