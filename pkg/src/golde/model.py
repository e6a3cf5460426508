"""Relation-specific orthogonal transforms on a product manifold.

An entity is one real vector of ``stored_dim`` entries, cut into one slice
per component. Elliptic and Euclidean components use their slice directly;
a hyperbolic component of ambient dimension ``k`` stores ``k - 1`` entries
and lifts them onto the relation's hyperboloid with the exponential map.
Tails are lifted the same way but never transformed.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import torch

from .errors import ConfigError, DiagnosticsUnavailableError, DimensionError
from .geometry import lorentz_weights, orth_apply, orth_matrix, orthogonality_defect
from .manifolds import (
    BETA_FLOOR,
    P_FLOOR,
    elliptic_sq_distance,
    exp_map,
    hyperbolic_orth_apply,
    hyperbolic_orth_matrix,
    hyperbolic_sq_distance,
    positive,
    raw_for,
)

ELLIPTIC = "elliptic"
HYPERBOLIC = "hyperbolic"
EUCLIDEAN = "euclidean"
GEOMETRIES = (ELLIPTIC, HYPERBOLIC, EUCLIDEAN)

MAX_DIAGNOSTIC_DIM = 64

PARAM_CLASSES = ("entity", "U", "p_raw", "b", "beta_raw")


@dataclass(frozen=True)
class Component:
    geometry: str
    dim: int  # ambient dimension k_i

    def __post_init__(self):
        if self.geometry not in GEOMETRIES:
            raise ConfigError(f"unknown geometry {self.geometry!r}")
        if self.dim < 2:
            raise ConfigError(f"component dimension must be >= 2, got {self.dim}")

    @property
    def stored_dim(self) -> int:
        return self.dim - 1 if self.geometry == HYPERBOLIC else self.dim


@dataclass(frozen=True)
class ProductManifoldConfig:
    components: tuple[Component, ...]
    norm: int = 2

    def __post_init__(self):
        if not self.components:
            raise ConfigError("a product manifold needs at least one component")
        if self.norm < 1:
            raise ConfigError("norm indicator must be a positive integer")

    @classmethod
    def from_partition(cls, dim: int, kstar: int | None, mp: int, mq: int, norm: int = 2):
        """Split ``dim`` stored entries into ``mp`` elliptic and ``mq`` hyperbolic parts.

        ``kstar`` entries go to the elliptic components (``kstar / mp`` each);
        the rest are shared by the hyperbolic components, each of which
        therefore has ambient dimension ``(dim - kstar) / mq + 1``.
        """
        if dim < 1 or mp < 0 or mq < 0 or mp + mq == 0:
            raise ConfigError("need dim >= 1 and at least one component")
        if kstar is None:
            kstar = dim if mq == 0 else 0 if mp == 0 else dim // 2
        if not 0 <= kstar <= dim:
            raise ConfigError(f"kstar={kstar} outside [0, {dim}]")
        if mp == 0 and kstar != 0:
            raise ConfigError("kstar must be 0 without elliptic components")
        if mq == 0 and kstar != dim:
            raise ConfigError("kstar must equal dim without hyperbolic components")
        if mp and kstar % mp:
            raise ConfigError(f"kstar={kstar} is not divisible by mp={mp}")
        rest = dim - kstar
        if mq and rest % mq:
            raise ConfigError(f"dim - kstar = {rest} is not divisible by mq={mq}")
        comps = [Component(ELLIPTIC, kstar // mp) for _ in range(mp)]
        comps += [Component(HYPERBOLIC, rest // mq + 1) for _ in range(mq)]
        return cls(tuple(comps), norm)

    @property
    def stored_dim(self) -> int:
        return sum(c.stored_dim for c in self.components)

    @property
    def slices(self) -> list[slice]:
        out, pos = [], 0
        for c in self.components:
            out.append(slice(pos, pos + c.stored_dim))
            pos += c.stored_dim
        return out

    def describe(self) -> str:
        parts = [f"{c.geometry[0].upper()}^{c.dim}" for c in self.components]
        return f"{' x '.join(parts)} (stored {self.stored_dim}, l={self.norm})"

    def to_dict(self) -> dict:
        return {"components": [[c.geometry, c.dim] for c in self.components], "norm": self.norm}

    @classmethod
    def from_dict(cls, d: dict):
        return cls(tuple(Component(g, int(k)) for g, k in d["components"]), int(d.get("norm", 2)))


def param_class(name: str) -> str:
    return name.rsplit(".", 1)[-1]


def relation_param_names(config: ProductManifoldConfig) -> list[str]:
    names = []
    for i, c in enumerate(config.components):
        names.append(f"c{i}.U")
        if c.geometry == ELLIPTIC:
            names.append(f"c{i}.p_raw")
        elif c.geometry == HYPERBOLIC:
            names += [f"c{i}.b", f"c{i}.beta_raw"]
    return names


def relation_param_shape(config: ProductManifoldConfig, name: str) -> tuple[int, ...]:
    i = int(name.split(".")[0][1:])
    n = config.components[i].stored_dim
    kind = param_class(name)
    if kind == "U":
        return (n, n)
    if kind == "beta_raw":
        return ()
    return (n,)


class GoldE:
    """Parameter store and scoring for the product-manifold model.

    ``params`` maps names to tensors: ``"entity"`` of shape
    ``(n_entities, stored_dim)`` and per component ``i`` a relation-indexed
    ``"c{i}.U"``, plus ``"c{i}.p_raw"`` (elliptic) or ``"c{i}.b"`` and
    ``"c{i}.beta_raw"`` (hyperbolic).
    """

    def __init__(self, config: ProductManifoldConfig, params: dict[str, torch.Tensor]):
        self.config = config
        self.params = params
        self._validate()

    def _validate(self):
        ent = self.params.get("entity")
        if ent is None or ent.dim() != 2 or ent.shape[1] != self.config.stored_dim:
            raise DimensionError(
                f"entity table must have {self.config.stored_dim} columns"
            )
        expected = relation_param_names(self.config)
        missing = set(expected) - set(self.params)
        extra = set(self.params) - set(expected) - {"entity"}
        if missing or extra:
            raise DimensionError(f"parameter names do not match config: missing {sorted(missing)}, extra {sorted(extra)}")
        n_rel = None
        for name in expected:
            t = self.params[name]
            shape = relation_param_shape(self.config, name)
            if tuple(t.shape[1:]) != shape:
                raise DimensionError(f"{name}: expected (R, {shape}), got {tuple(t.shape)}")
            if n_rel is None:
                n_rel = t.shape[0]
            elif t.shape[0] != n_rel:
                raise DimensionError(f"{name}: relation count {t.shape[0]} != {n_rel}")

    @property
    def n_entities(self) -> int:
        return self.params["entity"].shape[0]

    @property
    def n_relations(self) -> int:
        return self.params["c0.U"].shape[0]

    @property
    def dtype(self):
        return self.params["entity"].dtype

    def replace(self, params: dict[str, torch.Tensor]) -> "GoldE":
        return GoldE(self.config, params)

    def clone(self) -> "GoldE":
        return GoldE(self.config, {k: v.detach().clone() for k, v in self.params.items()})

    # -- relation parameters ----------------------------------------------

    def weights(self, i: int, r):
        c = self.config.components[i]
        if c.geometry == ELLIPTIC:
            return positive(self.params[f"c{i}.p_raw"][r], P_FLOOR)
        if c.geometry == EUCLIDEAN:
            return torch.ones(c.stored_dim, dtype=self.dtype)
        return lorentz_weights(c.dim, self.dtype)

    def beta(self, i: int, r):
        return positive(self.params[f"c{i}.beta_raw"][r], BETA_FLOOR)

    def _check_ids(self, ids, bound, what):
        ids = torch.as_tensor(ids, dtype=torch.long)
        if ids.numel() and (int(ids.min()) < 0 or int(ids.max()) >= bound):
            raise IndexError(f"{what} id out of range [0, {bound})")
        return ids

    # -- transforms -------------------------------------------------------

    def associate(self, e: torch.Tensor, r) -> list[torch.Tensor]:
        """Lift stored vectors onto the relation-specific component spaces."""
        out = []
        for i, (c, sl) in enumerate(zip(self.config.components, self.config.slices)):
            sub = e[..., sl]
            out.append(exp_map(sub, self.beta(i, r)) if c.geometry == HYPERBOLIC else sub)
        return out

    def transform(self, e: torch.Tensor, r) -> list[torch.Tensor]:
        """Associate then apply the relation's per-component orthogonal map."""
        out = []
        for i, (c, sl) in enumerate(zip(self.config.components, self.config.slices)):
            sub = e[..., sl]
            U = self.params[f"c{i}.U"][r]
            if c.geometry == HYPERBOLIC:
                x = exp_map(sub, self.beta(i, r))
                out.append(hyperbolic_orth_apply(U, self.params[f"c{i}.b"][r], x))
            else:
                out.append(orth_apply(U, self.weights(i, r), sub))
        return out

    def transform_head(self, h, r) -> list[torch.Tensor]:
        h = self._check_ids(h, self.n_entities, "entity")
        r = self._check_ids(r, self.n_relations, "relation")
        return self.transform(self.params["entity"][h], r)

    def distance_terms(self, heads: list, tails: list, r) -> list[torch.Tensor]:
        """Per-component ``d^l`` between transformed heads and associated tails."""
        terms = []
        for i, c in enumerate(self.config.components):
            if c.geometry == HYPERBOLIC:
                sq = hyperbolic_sq_distance(heads[i], tails[i], self.beta(i, r))
            else:
                sq = elliptic_sq_distance(heads[i], tails[i], self.weights(i, r))
            terms.append(_power(sq, self.config.norm))
        return terms

    def _score_lists(self, heads, tails, r):
        terms = self.distance_terms(heads, tails, r)
        return -torch.stack(terms, dim=0).sum(0)

    def score(self, h, r, t) -> torch.Tensor:
        """``-sum_i d_i(head_i, tail_i)^l`` for index tensors of equal shape."""
        h = self._check_ids(h, self.n_entities, "entity")
        r = self._check_ids(r, self.n_relations, "relation")
        t = self._check_ids(t, self.n_entities, "entity")
        E = self.params["entity"]
        return self._score_lists(self.transform(E[h], r), self.associate(E[t], r), r)

    def score_all_tails(self, h: int, r: int) -> torch.Tensor:
        """Scores of ``(h, r, t)`` for every entity ``t``."""
        E = self.params["entity"]
        rr = torch.tensor([r])
        heads = self.transform(E[h : h + 1], rr)
        return self._score_lists(heads, self.associate(E, rr), rr)

    def score_all_heads(self, r: int, t: int) -> torch.Tensor:
        """Scores of ``(h, r, t)`` for every entity ``h``."""
        E = self.params["entity"]
        rr = torch.tensor([r])
        tails = self.associate(E[t : t + 1], rr)
        return self._score_lists(self.transform(E, rr), tails, rr)

    # -- materialized matrices --------------------------------------------

    def relation_matrices(self, r: int) -> list[tuple[torch.Tensor, torch.Tensor]]:
        """``(G, w)`` per component, with ``G`` orthogonal for the form ``w``."""
        out = []
        for i, c in enumerate(self.config.components):
            if c.dim > MAX_DIAGNOSTIC_DIM:
                raise DiagnosticsUnavailableError(
                    f"component {i} has dimension {c.dim} > {MAX_DIAGNOSTIC_DIM}"
                )
            with torch.no_grad():
                U = self.params[f"c{i}.U"][r].to(torch.float64)
                if c.geometry == HYPERBOLIC:
                    G = hyperbolic_orth_matrix(U, self.params[f"c{i}.b"][r].to(torch.float64))
                    w = lorentz_weights(c.dim)
                else:
                    w = self.weights(i, r).to(torch.float64)
                    G = orth_matrix(U, w)
            out.append((G, w))
        return out


def _power(sq, norm):
    if norm == 2:
        return sq
    ok = sq > 0
    safe = torch.where(ok, sq, torch.ones_like(sq))
    return torch.where(ok, safe ** (norm / 2.0), torch.zeros_like(sq))


def init_params(
    config: ProductManifoldConfig,
    n_entities: int,
    n_relations: int,
    seed: int = 0,
    dtype=torch.float64,
) -> GoldE:
    """Deterministic initialization for a fixed seed.

    Entities are uniform in ``(-0.5, 0.5) / sqrt(k)``, reflector rows are
    standard normal, elliptic weights start at exactly 1, boosts at 0 and
    curvature radii at exactly 1.
    """
    if n_entities < 1 or n_relations < 1:
        raise ConfigError("vocabulary sizes must be positive")
    gen = torch.Generator().manual_seed(int(seed))
    k = config.stored_dim
    params = {
        "entity": (torch.rand(n_entities, k, generator=gen, dtype=torch.float64) - 0.5) / k ** 0.5
    }
    p0 = raw_for(1.0, P_FLOOR)
    beta0 = raw_for(1.0, BETA_FLOOR)
    for i, c in enumerate(config.components):
        n = c.stored_dim
        params[f"c{i}.U"] = torch.randn(n_relations, n, n, generator=gen, dtype=torch.float64)
        if c.geometry == ELLIPTIC:
            params[f"c{i}.p_raw"] = torch.full((n_relations, n), p0, dtype=torch.float64)
        elif c.geometry == HYPERBOLIC:
            params[f"c{i}.b"] = torch.zeros(n_relations, n, dtype=torch.float64)
            params[f"c{i}.beta_raw"] = torch.full((n_relations,), beta0, dtype=torch.float64)
    return GoldE(config, {name: t.to(dtype) for name, t in params.items()})


@dataclass
class PatternDefects:
    symmetry: float | None = None
    inversion: float | None = None
    composition: float | None = None
    per_component: list[dict] = field(default_factory=list)


def _inverse(G, w):
    # G in O_w  =>  G^-1 = diag(w)^-1 G^T diag(w)
    return (G.transpose(-1, -2) * w.unsqueeze(-2)) / w.unsqueeze(-1)


def pattern_diagnostics(model: GoldE, relations: Sequence[int]) -> PatternDefects:
    """Logical-pattern defects of one, two or three relations.

    One relation gives the symmetry defect ``max|G G - I|``; two give the
    inversion defect ``max|G_1 - G_2^-1|``; three give the composition
    defect ``max|G_1 - G_3 G_2|``. Each is the max over components.
    """
    relations = list(relations)
    if not 1 <= len(relations) <= 3:
        raise ValueError("pass one, two or three relation ids")
    for r in relations:
        model._check_ids([r], model.n_relations, "relation")
    mats = [model.relation_matrices(r) for r in relations]
    out = PatternDefects()
    worst = 0.0
    for i in range(len(model.config.components)):
        (G1, w1) = mats[0][i]
        eye = torch.eye(G1.shape[-1], dtype=G1.dtype)
        if len(relations) == 1:
            d = float((G1 @ G1 - eye).abs().max())
            kind = "symmetry"
        elif len(relations) == 2:
            G2, w2 = mats[1][i]
            d = float((G1 - _inverse(G2, w2)).abs().max())
            kind = "inversion"
        else:
            G2, G3 = mats[1][i][0], mats[2][i][0]
            d = float((G1 - G3 @ G2).abs().max())
            kind = "composition"
        out.per_component.append({"component": i, kind: d})
        worst = max(worst, d)
    setattr(out, kind, worst)
    return out


def orthogonality_report(model: GoldE, r: int) -> list[float]:
    """Orthogonality defect of each component matrix of relation ``r``."""
    return [float(orthogonality_defect(G, w)) for G, w in model.relation_matrices(r)]
