"""Seeded synthetic benchmark graph with a planted hierarchy.

Exactly 200 entities: 168 members in 24 groups of 7, 6 divisions of 4
groups, one root over the divisions, and one world node over everything.
Five relations connect the layers::

    contains        group -> its members; root -> the divisions;
                    world -> root + divisions
    ancestor        member -> {group, root, world}
    division        member -> {division, root, world}
    neighbor        member -> {previous, self, next} on the group's ring
    super_contains  division -> its 4 groups

(~1700 triples).  Every (head, relation) pair has at least 3 tails, so a
perfect ranker can reach precision@3 = 1, and the design keeps uniform
rejection sampling satisfiable for every canonical query shape: the two
upward relations cover most (entity, relation) draws and their answer sets
always share {root, world}, while root and world keep outgoing ``contains``
edges so a translate after an intersection stays non-empty.  Triples are
split 90/5/5 into train/valid/test by the same seed.
"""

from __future__ import annotations

import numpy as np

from .kg import KnowledgeGraph

__all__ = ["make_hierarchy_kg"]

N_GROUPS = 24
GROUP_SIZE = 7
N_SUPERS = 6
GROUPS_PER_SUPER = 4

RELATIONS = ("contains", "ancestor", "division", "neighbor", "super_contains")


def make_hierarchy_kg(seed: int = 0) -> KnowledgeGraph:
    rng = np.random.default_rng(seed)
    members = [f"member_{i:03d}" for i in range(N_GROUPS * GROUP_SIZE)]
    groups = [f"group_{i:02d}" for i in range(N_GROUPS)]
    supers = [f"division_{i}" for i in range(N_SUPERS)]
    entities = members + groups + supers + ["root", "world"]

    def group_id(g):
        return len(members) + g

    def super_id(s):
        return len(members) + len(groups) + s

    root_id = len(members) + len(groups) + len(supers)
    world_id = root_id + 1

    rel = {name: i for i, name in enumerate(RELATIONS)}
    triples = []

    for g in range(N_GROUPS):
        s = g // GROUPS_PER_SUPER
        group_members = list(range(g * GROUP_SIZE, (g + 1) * GROUP_SIZE))
        for pos, m in enumerate(group_members):
            triples.append((group_id(g), rel["contains"], m))
            for up in (group_id(g), root_id, world_id):
                triples.append((m, rel["ancestor"], up))
            for up in (super_id(s), root_id, world_id):
                triples.append((m, rel["division"], up))
            for shift in (-1, 0, 1):
                triples.append((m, rel["neighbor"],
                                group_members[(pos + shift) % GROUP_SIZE]))
    for s in range(N_SUPERS):
        triples.append((root_id, rel["contains"], super_id(s)))
        triples.append((world_id, rel["contains"], super_id(s)))
        for g in range(s * GROUPS_PER_SUPER, (s + 1) * GROUPS_PER_SUPER):
            triples.append((super_id(s), rel["super_contains"], group_id(g)))
    triples.append((world_id, rel["contains"], root_id))

    arr = np.array(sorted(set(triples)), dtype=np.int64)
    draw = rng.random(arr.shape[0])
    split_arrays = {
        "train": arr[draw < 0.90],
        "valid": arr[(draw >= 0.90) & (draw < 0.95)],
        "test": arr[draw >= 0.95],
    }
    return KnowledgeGraph(entities, list(RELATIONS), split_arrays)
