"""Quadratic inner products and generalized Householder reflections.

Everything here works on ``torch.Tensor`` batches: vectors have shape
``(..., k)``, weight vectors broadcast against them, and a reflector set has
shape ``(..., n, k)`` with one reflector per row.

Reflections in a set are applied row by row, ``U[0]`` first and ``U[n-1]``
last, so ``orth_apply(U, w, x) == orth_matrix(U, w) @ x`` with
``orth_matrix(U, w) = H(U[n-1]) ... H(U[0])``. Checkpoints depend on this
order.
"""
from __future__ import annotations

import torch

from .errors import ContractError, DegenerateReflectorError, DimensionError, UnsupportedSignatureError

DTYPE = torch.float64


def as_tensor(x, dtype=None) -> torch.Tensor:
    if isinstance(x, torch.Tensor):
        return x if dtype is None else x.to(dtype)
    return torch.as_tensor(x, dtype=dtype or DTYPE)


def isotropy_threshold(k: int) -> float:
    """Rows with ``|<u, u>_w|`` below this act as the identity."""
    return 1e-12 * k


def euclidean_weights(k: int, dtype=DTYPE) -> torch.Tensor:
    return torch.ones(k, dtype=dtype)


def lorentz_weights(k: int, dtype=DTYPE) -> torch.Tensor:
    """``(-1, 1, ..., 1)`` of length ``k``."""
    w = torch.ones(k, dtype=dtype)
    w[0] = -1.0
    return w


def _check_last(*tensors):
    k = tensors[0].shape[-1]
    for t in tensors[1:]:
        if t.shape[-1] != k:
            raise DimensionError(
                f"dimension mismatch: {tuple(tensors[0].shape)} vs {tuple(t.shape)}"
            )
    return k


def quad_inner(x, y, w) -> torch.Tensor:
    """``sum_i w_i x_i y_i`` over the last axis."""
    x, y, w = as_tensor(x), as_tensor(y), as_tensor(w)
    _check_last(x, y, w)
    return (w * x * y).sum(-1)


def householder_apply(u, w, x) -> torch.Tensor:
    """Reflect ``x`` about the ``w``-orthogonal complement of ``u``.

    Raises DegenerateReflectorError when ``u`` is isotropic. Use
    ``orth_apply`` for the lenient behaviour that treats such rows as the
    identity.
    """
    u, w, x = as_tensor(u), as_tensor(w), as_tensor(x)
    k = _check_last(u, w, x)
    uu = (w * u * u).sum(-1)
    if bool((uu.abs() < isotropy_threshold(k)).any()):
        raise DegenerateReflectorError(
            f"isotropic reflector: <u,u>_w = {uu.min().item():.3e}"
        )
    ux = (w * u * x).sum(-1)
    return x - (2.0 * ux / uu).unsqueeze(-1) * u


def _reflect_masked(u, w, x, tau):
    # isotropic rows reflect by a zero coefficient; the double where keeps
    # gradients finite for those rows
    uu = (w * u * u).sum(-1)
    ok = uu.abs() >= tau
    safe = torch.where(ok, uu, torch.ones_like(uu))
    ux = (w * u * x).sum(-1)
    coef = torch.where(ok, 2.0 * ux / safe, torch.zeros_like(ux))
    return x - coef.unsqueeze(-1) * u


def orth_apply(U, w, x) -> torch.Tensor:
    """Apply ``H(U[n-1]) ... H(U[0])`` to ``x`` with n O(k) reflections."""
    U, w, x = as_tensor(U), as_tensor(w), as_tensor(x)
    k = _check_last(U, w, x)
    tau = isotropy_threshold(k)
    for c in range(U.shape[-2]):
        x = _reflect_masked(U[..., c, :], w, x, tau)
    return x


def householder_matrix(u, w) -> torch.Tensor:
    """``I - 2 u u^T diag(w) / <u, u>_w``; identity when ``u`` is isotropic."""
    u, w = as_tensor(u), as_tensor(w)
    k = _check_last(u, w)
    uu = (w * u * u).sum(-1)
    ok = uu.abs() >= isotropy_threshold(k)
    safe = torch.where(ok, uu, torch.ones_like(uu))
    coef = torch.where(ok, 2.0 / safe, torch.zeros_like(uu))
    eye = torch.eye(k, dtype=u.dtype)
    outer = u.unsqueeze(-1) * (w * u).unsqueeze(-2)
    return eye - coef[..., None, None] * outer


def orth_matrix(U, w) -> torch.Tensor:
    """Materialize the product of reflections as a ``(..., k, k)`` matrix."""
    U, w = as_tensor(U), as_tensor(w)
    k = _check_last(U, w)
    batch = torch.broadcast_shapes(U.shape[:-2], w.shape[:-1])
    G = torch.eye(k, dtype=U.dtype).expand(*batch, k, k)
    for c in range(U.shape[-2]):
        G = householder_matrix(U[..., c, :], w) @ G
    return G


def orthogonality_defect(G, w) -> torch.Tensor:
    """Max-abs entry of ``G^T diag(w) G - diag(w)``."""
    G, w = as_tensor(G), as_tensor(w)
    if G.shape[-1] != G.shape[-2] or G.shape[-1] != w.shape[-1]:
        raise DimensionError(f"matrix {tuple(G.shape)} incompatible with weights {tuple(w.shape)}")
    D = torch.diag_embed(w)
    R = G.transpose(-1, -2) @ D @ G - D
    return R.abs().amax(dim=(-1, -2))


def decompose_orthogonal(G, w, tol: float = 1e-8) -> torch.Tensor:
    """Write ``G`` in ``O_w(k)`` as at most ``k`` reflections.

    Only positive-definite ``w`` is supported. Column by column, the residual
    map ``M`` is corrected by the reflection along ``M e_j - e_j``, which
    sends ``M e_j`` back to ``e_j`` and leaves earlier basis vectors fixed.
    Returns ``k`` rows (unused rows are zero, hence identity-flagged) such
    that ``orth_matrix(rows, w)`` reproduces ``G``.
    """
    G, w = as_tensor(G), as_tensor(w)
    if G.dim() != 2 or G.shape[0] != G.shape[1] or G.shape[0] != w.shape[0]:
        raise DimensionError(f"expected a square matrix matching weights of length {w.shape[0]}")
    if not bool((w > 0).all()):
        raise UnsupportedSignatureError("decomposition needs strictly positive weights")
    k = G.shape[0]
    scale = max(1.0, float(w.abs().max()))
    defect = float(orthogonality_defect(G, w))
    if defect > tol * scale:
        raise ContractError(f"matrix is not w-orthogonal (defect {defect:.3e})")

    M = G.clone()
    found = []
    eye = torch.eye(k, dtype=G.dtype)
    for j in range(k):
        e = eye[j]
        u = M[:, j] - e
        norm = float(torch.sqrt((w * u * u).sum()))
        if norm <= 1e-12 * float(torch.sqrt(w[j])):
            continue
        u = u / norm
        M = householder_matrix(u, w) @ M
        found.append(u)
    # H(u_m)...H(u_1) G = I, so G = H(u_1)...H(u_m): u_m goes first
    rows = torch.zeros(k, k, dtype=G.dtype)
    for i, u in enumerate(reversed(found)):
        rows[i] = u
    return rows
