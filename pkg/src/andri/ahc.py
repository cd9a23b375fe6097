"""Adjacent hierarchical clustering with merge reversion.

Clusters temporally ordered subsequences bottom-up, restricting merge
candidates to pairs whose members lie within k tiling positions of each
other.  Because the candidate set is constrained, the minimum linkage is not
monotone across levels; when it drops, earlier merges are rolled back and a
temporally close (but not necessarily adjacent) pair is merged instead.  The
roll-backs are kept in the dendrogram as flagged levels so the whole run is
auditable.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .core import DistanceKind, Subsequence, normalize_rows
from .errors import BadParam, EmptyInput, InvalidLevel, OverlapError

__all__ = [
    "Cluster",
    "AhcConfig",
    "DendrogramLevel",
    "Dendrogram",
    "linkage_distance",
    "knn_adjacent_pairs",
    "run_ahc",
    "find_cutoff",
    "format_dendrogram",
]


@dataclass(frozen=True)
class Cluster:
    """A set of tiling positions plus the temporally central one."""

    members: tuple[int, ...]
    representative_time: int
    anomaly_candidate: bool = False

    def __post_init__(self):
        if not self.members:
            raise EmptyInput("a cluster needs at least one member")
        if list(self.members) != sorted(set(self.members)):
            raise BadParam("members must be sorted and unique")

    @property
    def size(self) -> int:
        return len(self.members)


def _make_cluster(members, anomaly_candidate=False) -> Cluster:
    members = tuple(sorted(members))
    return Cluster(members, members[len(members) // 2], anomaly_candidate)


@dataclass(frozen=True)
class AhcConfig:
    """Knobs for one clustering run.

    k is the adjacency radius in tiling positions (1 = strictly adjacent),
    r_min the minimum cluster size as a fraction of the tile count below
    which a cluster is only an anomaly candidate.  Ward is the only linkage.
    """

    k: int = 1
    r_min: float = 0.01
    linkage: str = "ward"
    cutoff_spread: str = "mean_std"  # or "legacy_var" for the printed formula

    def __post_init__(self):
        if self.k < 1:
            raise BadParam("k must be >= 1")
        if not 0.0 < self.r_min < 1.0:
            raise BadParam("r_min must be in (0, 1)")
        if self.linkage != "ward":
            raise BadParam("only ward linkage is supported")
        if self.cutoff_spread not in ("mean_std", "legacy_var"):
            raise BadParam("cutoff_spread must be 'mean_std' or 'legacy_var'")


@dataclass
class DendrogramLevel:
    """One step of the run: a merge, possibly later flagged as reverted.

    `linkage` is the minimum candidate distance that drove the step; for a
    merge performed by a reversion it can differ from `pair_linkage`, the
    Ward cost of the pair actually merged.  A level flagged `reverted` was
    undone by the level at index `undone_by`; `undid` lists the levels this
    one rolled back.
    """

    index: int
    left: tuple[int, ...]
    right: tuple[int, ...]
    linkage: float
    pair_linkage: float
    n_clusters: int
    reverted: bool = False
    undone_by: int | None = None
    undid: tuple[int, ...] = ()


@dataclass
class Dendrogram:
    """Append-only audit log of merges and reversions over `n_leaves` tiles."""

    n_leaves: int
    levels: list[DendrogramLevel] = field(default_factory=list)

    def merge_levels(self) -> list[DendrogramLevel]:
        """The surviving merges, in the order they were performed."""
        return [lvl for lvl in self.levels if not lvl.reverted]


class _Node:
    """Live cluster during a run; reverted parents hand their nodes back."""

    __slots__ = (
        "id",
        "members",
        "centroid",
        "size",
        "form_link",
        "children",
        "level_index",
        "max_spread",
    )

    def __init__(self, id_, members, centroid, size, form_link, children, level_index, max_spread):
        self.id = id_
        self.members = members
        self.centroid = centroid
        self.size = size
        self.form_link = form_link
        self.children = children
        self.level_index = level_index
        self.max_spread = max_spread


def _ward(a: _Node, b: _Node) -> float:
    diff = a.centroid - b.centroid
    return float(a.size * b.size / (a.size + b.size) * np.dot(diff, diff))


def linkage_distance(a: Cluster, b: Cluster, data: list[Subsequence], kind: DistanceKind) -> float:
    """Ward increase in within-cluster variance between two disjoint clusters."""
    if set(a.members) & set(b.members):
        raise OverlapError("clusters share members")
    rows = normalize_rows(np.stack([np.asarray(s.values, dtype=np.float64) for s in data]), kind)
    ca = rows[list(a.members)].mean(axis=0)
    cb = rows[list(b.members)].mean(axis=0)
    diff = ca - cb
    return float(a.size * b.size / (a.size + b.size) * np.dot(diff, diff))


def knn_adjacent_pairs(clusters: list[Cluster], k: int) -> list[tuple[int, int]]:
    """Index pairs of clusters whose nearest members are within k positions."""
    if k < 1:
        raise BadParam("k must be >= 1")
    pos_to_cluster: dict[int, int] = {}
    for idx, cluster in enumerate(clusters):
        for m in cluster.members:
            pos_to_cluster[m] = idx
    pairs: set[tuple[int, int]] = set()
    for p, ci in pos_to_cluster.items():
        for q in range(p + 1, p + k + 1):
            cj = pos_to_cluster.get(q)
            if cj is not None and cj != ci:
                pairs.add((min(ci, cj), max(ci, cj)))
    return sorted(pairs)


class _AhcRun:
    # Safety valve: with reversions a step can leave the cluster count
    # unchanged, so cap the number of levels to force termination.
    MAX_LEVEL_FACTOR = 8

    def __init__(self, data: list[Subsequence], config: AhcConfig, kind: DistanceKind):
        if not data:
            raise EmptyInput("no subsequences to cluster")
        self.config = config
        self.rows = normalize_rows(
            np.stack([np.asarray(s.values, dtype=np.float64) for s in data]), kind
        )
        self.n = len(data)
        self.nodes: dict[int, _Node] = {}
        self.alive: set[int] = set()
        self.next_id = self.n
        self.dendro = Dendrogram(self.n)
        for i in range(self.n):
            self.nodes[i] = _Node(i, (i,), self.rows[i], 1, -math.inf, None, -1, 0.0)
            self.alive.add(i)

    # -- candidate enumeration -------------------------------------------------

    def _candidate_pairs(self) -> list[tuple[int, int]]:
        pos_to_node = {}
        for nid in self.alive:
            for m in self.nodes[nid].members:
                pos_to_node[m] = nid
        k = self.config.k
        pairs = set()
        for p, ni in pos_to_node.items():
            for q in range(p + 1, p + k + 1):
                nj = pos_to_node.get(q)
                if nj is not None and nj != ni:
                    pairs.add((ni, nj) if min(self.nodes[ni].members) <= min(self.nodes[nj].members) else (nj, ni))
        return list(pairs)

    def _argmin_pair(self, pairs) -> tuple[float, int, int] | None:
        best = None
        for a, b in pairs:
            na, nb = self.nodes[a], self.nodes[b]
            if min(na.members) > min(nb.members):
                na, nb = nb, na
            d = _ward(na, nb)
            key = (d, min(na.members), min(nb.members))
            if best is None or key < best[0]:
                best = (key, na.id, nb.id)
        if best is None:
            return None
        return best[0][0], best[1], best[2]

    # -- merging ----------------------------------------------------------------

    def _merge(self, a: int, b: int, level_linkage: float, pair_linkage: float, undid=()) -> int:
        na, nb = self.nodes[a], self.nodes[b]
        members = tuple(sorted(na.members + nb.members))
        size = na.size + nb.size
        centroid = (na.centroid * na.size + nb.centroid * nb.size) / size
        spread = float(
            np.sqrt(np.sum((self.rows[list(members)] - centroid) ** 2, axis=1)).max()
        )
        level = DendrogramLevel(
            index=len(self.dendro.levels),
            left=na.members,
            right=nb.members,
            linkage=level_linkage,
            pair_linkage=pair_linkage,
            n_clusters=len(self.alive) - 1,
            undid=tuple(undid),
        )
        self.dendro.levels.append(level)
        node = _Node(self.next_id, members, centroid, size, pair_linkage, (a, b), level.index, spread)
        self.next_id += 1
        self.nodes[node.id] = node
        self.alive.discard(a)
        self.alive.discard(b)
        self.alive.add(node.id)
        return node.id

    def _revert(self, nid: int) -> tuple[int, int]:
        node = self.nodes[nid]
        level = self.dendro.levels[node.level_index]
        level.reverted = True  # undone_by is filled in once the replacing merge exists
        self.alive.discard(nid)
        a, b = node.children
        self.alive.add(a)
        self.alive.add(b)
        return a, b

    # -- reversion --------------------------------------------------------------

    def _gap(self, a: int, b: int) -> int:
        ma = np.asarray(self.nodes[a].members)
        mb = np.asarray(self.nodes[b].members)
        return int(np.abs(ma[:, None] - mb[None, :]).min())

    def _halt_keep_whole(self, target: int, composite: int) -> bool:
        """Second halt test: keep `composite` intact when its temporally
        nearer child is also the closer one by linkage; merging whole and
        splitting would reach the same contents."""
        ca, cb = self.nodes[composite].children
        if self._gap(target, ca) <= self._gap(target, cb):
            near, far = ca, cb
        else:
            near, far = cb, ca
        nt = self.nodes[target]
        return _ward(nt, self.nodes[near]) < _ward(nt, self.nodes[far])

    def _revise(self, a: int, b: int, trigger: float) -> float:
        """Roll back suspect merges and perform the now-minimal one.

        Entered when the level's minimum candidate linkage `trigger` fell
        below the previous merge cost.  Operands formed at a higher cost than
        the pair under consideration are unwound (most recent first) unless
        the keep-whole halt test protects them; the pair that finally wins is
        merged and recorded at the triggering level distance.
        """
        working = {a, b}
        forbidden: set[frozenset[int]] = set()
        undid: list[int] = []
        while True:
            best = None
            ids = sorted(working)
            for i, x in enumerate(ids):
                for y in ids[i + 1 :]:
                    if frozenset((x, y)) in forbidden:
                        continue
                    nx, ny = self.nodes[x], self.nodes[y]
                    if min(nx.members) > min(ny.members):
                        nx, ny = ny, nx
                    d = _ward(nx, ny)
                    key = (d, min(nx.members), min(ny.members))
                    if best is None or key < best[0]:
                        best = (key, nx.id, ny.id)
            d_ab, x, y = best[0][0], best[1], best[2]
            to_unwind = []
            for ck, ci in ((x, y), (y, x)):
                node = self.nodes[ck]
                if node.size > 1 and node.form_link > d_ab and not self._halt_keep_whole(ci, ck):
                    to_unwind.append(ck)
            if not to_unwind:
                self._merge(x, y, trigger, d_ab, undid=tuple(undid))
                return d_ab
            ck = max(to_unwind, key=lambda c: self.nodes[c].level_index)
            undid.append(self.nodes[ck].level_index)
            ca, cb = self._revert(ck)
            working.discard(ck)
            working.add(ca)
            working.add(cb)
            forbidden.add(frozenset((ca, cb)))

    # -- main loop ---------------------------------------------------------------

    def run(self) -> Dendrogram:
        d_prev = -math.inf
        max_levels = self.MAX_LEVEL_FACTOR * max(self.n, 2)
        allow_revision = True
        while len(self.alive) > 1:
            if len(self.dendro.levels) >= max_levels:
                allow_revision = False
            found = self._argmin_pair(self._candidate_pairs())
            if found is None:
                break  # no admissible pair left
            d_min, a, b = found
            if d_min >= d_prev or not allow_revision:
                self._merge(a, b, d_min, d_min)
                d_prev = d_min
            else:
                d_prev = self._revise(a, b, d_min)
        # fix undone_by back-references to the level that performed the merge
        for lvl in self.dendro.levels:
            for idx in lvl.undid:
                self.dendro.levels[idx].undone_by = lvl.index
        return self.dendro


def run_ahc(
    data: list[Subsequence],
    config: AhcConfig | None = None,
    kind: DistanceKind = DistanceKind.ZERO_MEAN,
) -> tuple[list[Cluster], Dendrogram]:
    """Cluster temporally ordered subsequences; returns the cutoff clustering
    and the full dendrogram audit log."""
    config = config or AhcConfig()
    dendro = _AhcRun(data, config, kind).run()
    return find_cutoff(dendro, r_min=config.r_min, spread=config.cutoff_spread), dendro


# -- cutoff ---------------------------------------------------------------------


def _walk_cuts_mean_std(heights: list[float]) -> int | None:
    """Index into `heights` of the first jump exceeding the running spread.

    The jump list seeds with the first merge height; a test needs at least
    two prior jumps so the spread estimate is defined.
    """
    jumps: list[float] = []
    total = 0.0
    total_sq = 0.0
    prev = None
    for t, h in enumerate(heights):
        if prev is None:
            delta = h
        else:
            delta = h - prev
            if len(jumps) >= 2:
                mean = total / len(jumps)
                std = math.sqrt(max(total_sq / len(jumps) - mean * mean, 0.0))
                if delta > mean + std:
                    return t
        jumps.append(delta)
        total += delta
        total_sq += delta * delta
        prev = h
    return None


def _walk_cuts_legacy(heights: list[float]) -> int | None:
    # Printed-variant threshold: (sum of level distances - mean jump) / level.
    jumps: list[float] = []
    prev = None
    height_sum = 0.0
    for t, h in enumerate(heights):
        height_sum += h
        if prev is not None:
            delta = h - prev
            if jumps:
                threshold = (height_sum - sum(jumps) / len(jumps)) / (t + 1)
                if delta > threshold:
                    return t
            jumps.append(delta)
        prev = h
    return None


def find_cutoff(dendrogram: Dendrogram, r_min: float = 0.01, spread: str = "mean_std") -> list[Cluster]:
    """Cut the dendrogram into clusters by walking every leaf's merge path.

    Each leaf ascends through the surviving merges; a merge whose linkage
    jump exceeds the running spread of the jumps seen so far is severed.
    Clusters are the maximal subtrees containing no severed merge, so every
    leaf lands in exactly one cluster.  Clusters smaller than r_min times the
    leaf count are tagged as anomaly candidates.
    """
    n = dendrogram.n_leaves
    merges = dendrogram.merge_levels()
    walk = _walk_cuts_mean_std if spread == "mean_std" else _walk_cuts_legacy

    # Rebuild the surviving tree: node ids are n + merge ordinal.
    root_of: dict[int, int] = {i: i for i in range(n)}
    parent: dict[int, int] = {}
    children: dict[int, tuple[int, int]] = {}
    height: dict[int, float] = {}
    members: dict[int, tuple[int, ...]] = {i: (i,) for i in range(n)}
    for t, lvl in enumerate(merges):
        node = n + t
        la, lb = root_of[lvl.left[0]], root_of[lvl.right[0]]
        children[node] = (la, lb)
        height[node] = lvl.linkage
        parent[la] = node
        parent[lb] = node
        members[node] = tuple(sorted(lvl.left + lvl.right))
        for m in members[node]:
            root_of[m] = node

    cut: set[int] = set()
    for leaf in range(n):
        path: list[int] = []
        node = leaf
        while node in parent:
            node = parent[node]
            path.append(node)
        if not path:
            continue
        hit = walk([height[p] for p in path])
        if hit is not None:
            cut.add(path[hit])

    # A node is impure when any merge in its subtree was severed.
    impure: set[int] = set()
    for t in range(len(merges)):
        node = n + t
        la, lb = children[node]
        if node in cut or la in impure or lb in impure:
            impure.add(node)

    clusters: dict[int, tuple[int, ...]] = {}
    for leaf in range(n):
        node = leaf
        while node in parent and parent[node] not in impure:
            node = parent[node]
        clusters[node] = members[node]

    threshold = r_min * n
    out = [
        _make_cluster(m, anomaly_candidate=len(m) < threshold)
        for m in sorted(clusters.values(), key=lambda m: m[0])
    ]
    return out


def format_dendrogram(dendrogram: Dendrogram) -> str:
    """Line-oriented dump: `level,left,right,linkage,reverted` per level."""
    lines = []
    for lvl in dendrogram.levels:
        left = ";".join(str(m) for m in lvl.left)
        right = ";".join(str(m) for m in lvl.right)
        lines.append(f"{lvl.index},{left},{right},{lvl.linkage:.10g},{int(lvl.reverted)}")
    return "\n".join(lines) + ("\n" if lines else "")


def revise_clusters(dendrogram: Dendrogram, level: int) -> Dendrogram:
    """Return a copy of the audit log with `level` flagged as reverted.

    The in-run reversion happens inside `run_ahc`; this entry point exists to
    replay or annotate a recorded log and enforces the same preconditions.
    """
    if level < 1 or level >= len(dendrogram.levels):
        raise InvalidLevel(f"level {level} out of range")
    if dendrogram.levels[level].linkage >= dendrogram.levels[level - 1].linkage:
        raise InvalidLevel("level does not violate monotonicity")
    levels = [replace(lvl) for lvl in dendrogram.levels]
    levels[level].reverted = True
    return Dendrogram(dendrogram.n_leaves, levels)
