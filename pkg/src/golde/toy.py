"""Synthetic knowledge graph with known logical patterns.

100 entities and 4 relations:

* ``similar_to`` is symmetric and pairs every entity with one partner
  (84 tree nodes plus 16 "peer" entities, so 50 pairs);
* ``parent_of`` is a 3-level forest (4 roots, branching 4, 84 nodes);
* ``child_of`` is its inverse;
* ``grandparent_of`` is the composition ``parent_of . parent_of``.

Held-out facts are always implied by training facts: a held-out symmetric
or inverse fact keeps its partner in train, and a held-out composed fact
keeps both links of its chain.
"""
from __future__ import annotations

import os

import numpy as np

from .data import write_tsv

SYMMETRIC = "similar_to"
PARENT = "parent_of"
CHILD = "child_of"
GRANDPARENT = "grandparent_of"
RELATIONS = (SYMMETRIC, PARENT, CHILD, GRANDPARENT)


def make_toy_kg(
    seed: int = 0,
    n_roots: int = 4,
    branching: int = 4,
    n_peers: int = 16,
    holdout: float = 0.12,
    match_all: bool = True,
):
    """Return ``(train, valid, test)`` lists of name triples.

    ``match_all=False`` restricts ``similar_to`` to the peer entities.
    """
    rng = np.random.default_rng(seed)
    names = []

    def new(prefix):
        names.append(f"{prefix}{len(names)}")
        return names[-1]

    roots = [new("n") for _ in range(n_roots)]
    edges = []
    level1 = []
    for root in roots:
        for _ in range(branching):
            c = new("n")
            level1.append(c)
            edges.append((root, c))
    for mid in level1:
        for _ in range(branching):
            edges.append((mid, new("n")))
    parent = {c: p for p, c in edges}
    peers = [new("p") for _ in range(n_peers)]
    pool = list(names) if match_all else peers
    pool = [pool[i] for i in rng.permutation(len(pool))]
    pairs = list(zip(pool[0::2], pool[1::2]))

    train, held = [], []

    def split_pair(fwd, bwd):
        # hold out at most one direction
        if rng.random() < holdout:
            if rng.random() < 0.5:
                fwd, bwd = bwd, fwd
            train.append(fwd)
            held.append(bwd)
        else:
            train.extend([fwd, bwd])

    for a, b in pairs:
        split_pair((a, SYMMETRIC, b), (b, SYMMETRIC, a))
    for p, c in edges:
        split_pair((p, PARENT, c), (c, CHILD, p))
    train_parent = {(h, t) for h, r, t in train if r == PARENT}
    for c, p in parent.items():
        g = parent.get(p)
        if g is None:
            continue
        fact = (g, GRANDPARENT, c)
        if (g, p) in train_parent and (p, c) in train_parent and rng.random() < holdout:
            held.append(fact)
        else:
            train.append(fact)

    order = rng.permutation(len(held))
    held = [held[i] for i in order]
    half = len(held) // 2
    train = [train[i] for i in rng.permutation(len(train))]
    return train, held[:half], held[half:]


def write_toy(directory, seed: int = 0):
    os.makedirs(directory, exist_ok=True)
    train, valid, test = make_toy_kg(seed)
    for name, triples in (("train", train), ("valid", valid), ("test", test)):
        write_tsv(os.path.join(directory, f"{name}.txt"), triples)
    return directory
