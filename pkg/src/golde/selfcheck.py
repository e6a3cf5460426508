"""Embedded property suite run by ``golde selfcheck``.

Each property draws ``trials`` random instances and reports the worst
observed error against its tolerance.
"""
from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Callable

import numpy as np
import torch

from . import geometry as geo
from . import manifolds as mf
from .model import ProductManifoldConfig, init_params
from .training import TrainConfig, finite_diff_check, sample_negatives

DEFAULT_TRIALS = 200


@dataclass
class PropertyResult:
    name: str
    worst: float
    tol: float
    trials: int
    seconds: float

    @property
    def passed(self) -> bool:
        return bool(np.isfinite(self.worst)) and self.worst <= self.tol

    def line(self) -> str:
        tag = "PASS" if self.passed else "FAIL"
        return f"{tag}  {self.name:32s} worst={self.worst:.3e} tol={self.tol:.0e} trials={self.trials} ({self.seconds:.1f}s)"


def _dims(rng):
    return int(rng.integers(2, 9))


def _weights(rng, k):
    return torch.from_numpy(rng.uniform(0.2, 3.0, k))


def orthogonality_invariance(rng):
    k = _dims(rng)
    w = _weights(rng, k)
    U = torch.from_numpy(rng.standard_normal((int(rng.integers(1, 2 * k)), k)))
    x, y = (torch.from_numpy(rng.standard_normal(k)) for _ in range(2))
    Gx, Gy = geo.orth_apply(U, w, x), geo.orth_apply(U, w, y)
    ref = float(geo.quad_inner(x, y, w))
    return abs(float(geo.quad_inner(Gx, Gy, w)) - ref) / max(1.0, abs(ref))


def fast_path_equivalence(rng):
    k = _dims(rng)
    w = _weights(rng, k)
    U = torch.from_numpy(rng.standard_normal((k, k)))
    x = torch.from_numpy(rng.standard_normal(k))
    return float((geo.orth_apply(U, w, x) - geo.orth_matrix(U, w) @ x).abs().max())


def decomposition_round_trip(rng):
    k = _dims(rng)
    w = _weights(rng, k)
    G = geo.orth_matrix(torch.from_numpy(rng.standard_normal((k, k))), w)
    U = geo.decompose_orthogonal(G, w)
    return float((geo.orth_matrix(U, w) - G).abs().max())


def mahalanobis_equivalence(rng):
    k = _dims(rng)
    p = _weights(rng, k)
    U = torch.from_numpy(rng.standard_normal((k, k)))
    h, t = (torch.from_numpy(rng.standard_normal(k)) for _ in range(2))
    direct = mf.elliptic_distance(mf.elliptic_transform(U, p, h), t, p)
    s = p.sqrt()
    scaled = torch.linalg.norm(geo.orth_apply(U * s, torch.ones(k, dtype=p.dtype), s * h) - s * t)
    return abs(float(direct - scaled)) / max(1.0, float(scaled))


def lorentz_closure(rng):
    n = _dims(rng)
    U = torch.from_numpy(rng.standard_normal((n, n)))
    b = torch.from_numpy(rng.standard_normal(n))
    G = mf.hyperbolic_orth_matrix(U, b)
    q = geo.lorentz_weights(n + 1)
    scale = float(G.abs().max()) ** 2
    return max(float(geo.orthogonality_defect(G, q)) / scale, max(0.0, 1.0 - float(G[0, 0])))


def lorentz_round_trip(rng):
    n = _dims(rng)
    G = mf.hyperbolic_orth_matrix(
        torch.from_numpy(rng.standard_normal((n, n))), torch.from_numpy(rng.standard_normal(n))
    )
    U, b = mf.decompose_positive_lorentz(G)
    return float((mf.hyperbolic_orth_matrix(U, b) - G).abs().max()) / float(G.abs().max())


def exp_map_membership(rng):
    n = _dims(rng)
    beta = float(10 ** rng.uniform(-3, 3))
    x = torch.from_numpy(rng.standard_normal(n) * 10 ** rng.uniform(-10, 1))
    return float(mf.hyperboloid_residual(mf.exp_map(x, beta), beta))


def transformed_points_stay_on_sheet(rng):
    n = _dims(rng)
    beta = float(10 ** rng.uniform(-2, 2))
    x = mf.exp_map(torch.from_numpy(rng.standard_normal(n)), beta)
    U = torch.from_numpy(rng.standard_normal((n, n)))
    y = mf.hyperbolic_orth_apply(U, torch.from_numpy(rng.standard_normal(n) * 0.5), x)
    return float(mf.hyperboloid_residual(y, beta)) + (0.0 if float(y[0]) > 0 else 1.0)


def gradient_finite_differences(rng):
    seed = int(rng.integers(1 << 31))
    cfg = TrainConfig(neg_size=3, batch_size=3, gamma=2.0, alpha=0.7)
    manifold = ProductManifoldConfig.from_partition(6, 3, 1, 1)
    model = init_params(manifold, 7, 2, seed=seed)
    g = torch.Generator().manual_seed(seed)
    params = {k: v + 0.1 * torch.randn(v.shape, generator=g, dtype=v.dtype) for k, v in model.params.items()}
    model = model.replace(params)
    pos = np.stack([rng.integers(0, 7, 3), rng.integers(0, 2, 3), rng.integers(0, 7, 3)], axis=1)
    negs = sample_negatives(pos, cfg.neg_size, rng, 7)
    return finite_diff_check(model, pos, negs, cfg, max_per_class=12, seed=seed).overall


PROPERTIES: list[tuple[str, Callable, float, float]] = [
    # name, check, tolerance, share of the trial budget
    ("orthogonality invariance", orthogonality_invariance, 1e-10, 1.0),
    ("fast path equals matrix", fast_path_equivalence, 1e-10, 1.0),
    ("decomposition round trip", decomposition_round_trip, 1e-9, 1.0),
    ("mahalanobis equivalence", mahalanobis_equivalence, 1e-10, 1.0),
    ("lorentz closure", lorentz_closure, 1e-12, 1.0),
    ("lorentz round trip", lorentz_round_trip, 1e-9, 1.0),
    ("exp map membership", exp_map_membership, 1e-10, 1.0),
    ("transformed points on sheet", transformed_points_stay_on_sheet, 1e-8, 1.0),
    ("gradient vs finite differences", gradient_finite_differences, 1e-4, 0.05),
]


def run_selfcheck(trials: int = DEFAULT_TRIALS, seed: int = 0, echo=print) -> list[PropertyResult]:
    results = []
    for i, (name, check, tol, share) in enumerate(PROPERTIES):
        rng = np.random.default_rng([seed, i])
        n = max(1, int(round(trials * share)))
        start = time.perf_counter()
        worst = 0.0
        for _ in range(n):
            try:
                err = float(check(rng))
            except Exception:  # a crash is a failure, not an abort
                err = float("inf")
            worst = max(worst, err) if np.isfinite(err) else float("inf")
        res = PropertyResult(name, worst, tol, n, time.perf_counter() - start)
        results.append(res)
        if echo:
            echo(res.line())
    return results
