"""Elliptic and hyperbolic relation transforms and their distances.

Hyperbolic points live on the upper sheet of ``<x, x>_q = -beta`` with
``q = (-1, 1, ..., 1)``. Transforms are exactly form preserving up to
rounding, so points are never renormalized after a transform.
"""
from __future__ import annotations

import math

import numpy as np
import torch
import torch.nn.functional as F

from .errors import ContractError, DimensionError, DomainError
from .geometry import as_tensor, decompose_orthogonal, lorentz_weights, orth_apply, orth_matrix

P_FLOOR = 1e-6
BETA_FLOOR = 1e-4
EXP_SMALL = 1e-7
ON_MANIFOLD_TOL = 1e-6


def positive(raw, floor):
    """Softplus reparameterization with a hard floor."""
    return F.softplus(raw) + floor


def raw_for(target: float, floor: float) -> float:
    """Raw value whose reparameterization evaluates to exactly ``target``."""
    y = target - floor
    raw = float(y + math.log(-math.expm1(-y)))

    def val(r):
        return float(positive(torch.tensor(r, dtype=torch.float64), floor))

    # walk a few ulps so the round trip is bit exact
    for _ in range(64):
        v = val(raw)
        if v == target:
            return raw
        raw = float(np.nextafter(raw, np.inf if v < target else -np.inf))
    return raw


def _safe_sqrt(x):
    ok = x > 0
    return torch.where(ok, torch.sqrt(torch.where(ok, x, torch.ones_like(x))), torch.zeros_like(x))


# --- elliptic -------------------------------------------------------------

def elliptic_transform(U, p, e):
    """Orthogonal map of ``e`` in the geometry weighted by ``p``."""
    return orth_apply(U, p, e)


def elliptic_sq_distance(x, y, p):
    d = as_tensor(x) - as_tensor(y)
    p = as_tensor(p)
    if d.shape[-1] != p.shape[-1]:
        raise DimensionError(f"weights of length {p.shape[-1]} for vectors of length {d.shape[-1]}")
    return (p * d * d).sum(-1)


def elliptic_distance(x, y, p):
    """Mahalanobis distance ``sqrt((x-y)^T diag(p) (x-y))``."""
    return _safe_sqrt(elliptic_sq_distance(x, y, p))


# --- hyperbolic -----------------------------------------------------------

def exp_map(x, beta):
    """Map ``x`` in R^(k-1) onto the hyperboloid Q_beta^k through the origin."""
    x = as_tensor(x)
    beta = as_tensor(beta, x.dtype)
    if bool((beta <= 0).any()):
        raise DomainError("curvature radius beta must be positive")
    sq = (x * x).sum(-1) / beta
    small = sq < EXP_SMALL ** 2
    s = torch.sqrt(torch.where(small, torch.ones_like(sq), sq))
    cosh = torch.where(small, 1.0 + sq / 2.0, torch.cosh(s))
    sinhc = torch.where(small, 1.0 + sq / 6.0, torch.sinh(s) / s)
    head = torch.sqrt(beta) * cosh
    return torch.cat([head.unsqueeze(-1), sinhc.unsqueeze(-1) * x], dim=-1)


def hyperboloid_residual(x, beta):
    """Relative membership error ``|<x,x>_q + beta| / (|x|^2 + beta)``.

    Computed after rescaling by the largest coordinate so that points far
    from the origin do not overflow or cancel catastrophically.
    """
    x = as_tensor(x)
    beta = as_tensor(beta, x.dtype)
    m = torch.maximum(x.abs().amax(-1), torch.sqrt(beta))
    y = x / m.unsqueeze(-1)
    b = beta / (m * m)
    q = lorentz_weights(x.shape[-1], x.dtype)
    num = ((q * y * y).sum(-1) + b).abs()
    return num / ((y * y).sum(-1) + b)


def check_on_hyperboloid(x, beta, tol=ON_MANIFOLD_TOL, what="point"):
    x = as_tensor(x)
    res = hyperboloid_residual(x, beta)
    if bool((res > tol).any()) or bool((x[..., 0] <= 0).any()):
        raise ContractError(
            f"{what} is not on the upper sheet of the hyperboloid "
            f"(max residual {float(res.max()):.3e})"
        )


def _boost_gamma(b):
    return torch.sqrt(1.0 + (b * b).sum(-1))


def boost_apply(b, x):
    """Apply the hyperbolic boost with parameter ``b`` to ``x`` in O(k).

    The lower-right block ``sqrt(I + b b^T)`` equals
    ``I + b b^T / (1 + gamma)``, which has no singularity at ``b = 0``.
    """
    b, x = as_tensor(b), as_tensor(x)
    if x.shape[-1] != b.shape[-1] + 1:
        raise DimensionError(f"boost of size {b.shape[-1]} needs vectors of length {b.shape[-1] + 1}")
    gamma = _boost_gamma(b)
    x0, xs = x[..., 0], x[..., 1:]
    bx = (b * xs).sum(-1)
    head = gamma * x0 + bx
    tail = b * x0.unsqueeze(-1) + xs + (bx / (1.0 + gamma)).unsqueeze(-1) * b
    return torch.cat([head.unsqueeze(-1), tail], dim=-1)


def sqrt_boost_block(b):
    """Closed form of the matrix square root of ``I + b b^T``."""
    b = as_tensor(b)
    gamma = _boost_gamma(b)
    eye = torch.eye(b.shape[-1], dtype=b.dtype)
    return eye + (b.unsqueeze(-1) * b.unsqueeze(-2)) / (1.0 + gamma)[..., None, None]


def boost_matrix(b):
    """``[[sqrt(|b|^2 + 1), b^T], [b, sqrt(I + b b^T)]]``."""
    b = as_tensor(b)
    gamma = _boost_gamma(b)
    top = torch.cat([gamma.unsqueeze(-1), b], dim=-1).unsqueeze(-2)
    bottom = torch.cat([b.unsqueeze(-1), sqrt_boost_block(b)], dim=-1)
    return torch.cat([top, bottom], dim=-2)


def boost_matrix_velocity(v):
    """The same boost written with a velocity ``v`` (``|v| < 1``)."""
    v = as_tensor(v)
    gamma = 1.0 / torch.sqrt(1.0 - (v * v).sum(-1))
    eye = torch.eye(v.shape[-1], dtype=v.dtype)
    g = gamma[..., None]
    top = torch.cat([gamma.unsqueeze(-1), -g * v], dim=-1).unsqueeze(-2)
    block = eye + (gamma ** 2 / (1.0 + gamma))[..., None, None] * (v.unsqueeze(-1) * v.unsqueeze(-2))
    bottom = torch.cat([(-g * v).unsqueeze(-1), block], dim=-1)
    return torch.cat([top, bottom], dim=-2)


def hyperbolic_orth_apply(U, b, x, beta=None):
    """Boost ``x`` then rotate its spatial part by ``Orth(U, 1)``.

    When ``beta`` is given the input is checked for membership first.
    """
    U, b, x = as_tensor(U), as_tensor(b), as_tensor(x)
    if beta is not None:
        check_on_hyperboloid(x, beta, what="input")
    y = boost_apply(b, x)
    spatial = orth_apply(U, torch.ones(U.shape[-1], dtype=y.dtype), y[..., 1:])
    return torch.cat([y[..., :1], spatial], dim=-1)


def hyperbolic_orth_matrix(U, b):
    """Materialized ``diag(1, Orth(U, 1)) @ boost_matrix(b)``."""
    U, b = as_tensor(U), as_tensor(b)
    R = orth_matrix(U, torch.ones(U.shape[-1], dtype=U.dtype))
    n = R.shape[-1] + 1
    block = torch.zeros(*R.shape[:-2], n, n, dtype=R.dtype)
    block[..., 0, 0] = 1.0
    block[..., 1:, 1:] = R
    return block @ boost_matrix(b)


def decompose_positive_lorentz(G, tol=1e-8):
    """Recover ``(U, b)`` with ``hyperbolic_orth_matrix(U, b) == G``.

    ``G`` must be Lorentz orthogonal with ``G[0, 0] >= 1``. The boost is read
    off the first row and the rotation is ``A sqrt(I + b b^T)^-1``.
    """
    G = as_tensor(G)
    if G.dim() != 2 or G.shape[0] != G.shape[1]:
        raise DimensionError("expected a square matrix")
    if float(G[0, 0]) < 1.0 - tol:
        raise ContractError("matrix is not in the positive Lorentz subgroup")
    b = G[0, 1:].clone()
    gamma = _boost_gamma(b)
    eye = torch.eye(b.shape[0], dtype=G.dtype)
    # (I + c bb^T)^-1 = I - c/gamma bb^T with c = 1/(1+gamma)
    s_inv = eye - (b.unsqueeze(-1) * b.unsqueeze(-2)) / ((1.0 + gamma) * gamma)
    Q = G[1:, 1:] @ s_inv
    U = decompose_orthogonal(Q, torch.ones(b.shape[0], dtype=G.dtype), tol=tol)
    return U, b


def _acosh1p_sq(t):
    # acosh(1 + t)^2 = 2t - t^2/3 + O(t^3); keeps the gradient finite at t = 0
    t = torch.clamp(t, min=0.0)
    small = t < 1e-8
    big = torch.acosh(1.0 + torch.where(small, torch.ones_like(t), t)) ** 2
    return torch.where(small, 2.0 * t - t * t / 3.0, big)


def hyperbolic_sq_distance(x, y, beta):
    """Squared geodesic distance of points on the same hyperboloid.

    ``-<x, y>_q / beta - 1`` is evaluated as ``<x - y, x - y>_q / (2 beta)``,
    which is exact for identical points and avoids cancellation for close
    ones; negative rounding is clamped to 0.
    """
    x, y = as_tensor(x), as_tensor(y)
    beta = as_tensor(beta, x.dtype)
    q = lorentz_weights(x.shape[-1], x.dtype)
    d = x - y
    return beta * _acosh1p_sq((q * d * d).sum(-1) / (2.0 * beta))


def hyperbolic_distance(x, y, beta, check=True):
    """Geodesic distance ``sqrt(beta) acosh(-<x, y>_q / beta)``."""
    if check:
        check_on_hyperboloid(x, beta, what="first point")
        check_on_hyperboloid(y, beta, what="second point")
    return _safe_sqrt(hyperbolic_sq_distance(x, y, beta))


__all__ = [
    "boost_apply",
    "boost_matrix",
    "boost_matrix_velocity",
    "check_on_hyperboloid",
    "decompose_positive_lorentz",
    "elliptic_distance",
    "elliptic_sq_distance",
    "elliptic_transform",
    "exp_map",
    "hyperbolic_distance",
    "hyperbolic_orth_apply",
    "hyperbolic_orth_matrix",
    "hyperbolic_sq_distance",
    "hyperboloid_residual",
    "positive",
    "raw_for",
    "sqrt_boost_block",
]
