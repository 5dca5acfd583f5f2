"""Slow, obviously-correct reference implementations used as test oracles.

Nothing here imports the package's algorithms; only plain Python and numpy.
"""

from __future__ import annotations

import math

import numpy as np


class UnionFind:
    def __init__(self, n):
        self.parent = list(range(n))

    def find(self, x):
        while self.parent[x] != x:
            self.parent[x] = self.parent[self.parent[x]]
            x = self.parent[x]
        return x

    def union(self, a, b):
        ra, rb = self.find(a), self.find(b)
        if ra != rb:
            self.parent[max(ra, rb)] = min(ra, rb)


def _dist(p, q):
    return math.sqrt(sum((float(a) - float(b)) ** 2 for a, b in zip(p, q)))


def brute_rounds(coords, labels, radii, ignored=()):
    """Per round, the set of groups as (class, frozenset of indices)."""
    n = len(coords)
    active = [i for i in range(n) if int(labels[i]) not in ignored]
    uf = UnionFind(n)
    for a in range(len(active)):
        for b in range(a + 1, len(active)):
            i, j = active[a], active[b]
            if labels[i] == labels[j] and _dist(coords[i], coords[j]) < radii[0]:
                uf.union(i, j)
    groups = {}
    for i in active:
        groups.setdefault(uf.find(i), set()).add(i)
    current = [(int(labels[min(s)]), frozenset(s)) for s in groups.values()]
    rounds = [set(current)]
    for r in radii[1:]:
        guf = UnionFind(len(current))
        for a in range(len(current)):
            for b in range(a + 1, len(current)):
                if current[a][0] != current[b][0]:
                    continue
                d = min(_dist(coords[i], coords[j]) for i in current[a][1] for j in current[b][1])
                if d < r:
                    guf.union(a, b)
        merged = {}
        for k, (c, s) in enumerate(current):
            merged.setdefault(guf.find(k), (c, set()))[1].update(s)
        current = [(c, frozenset(s)) for c, s in merged.values()]
        rounds.append(set(current))
    return rounds


def brute_rounds_matrix(coords, labels, radii, ignored=()):
    """Same contract as brute_rounds, using a full distance matrix for speed."""
    coords = np.asarray(coords, dtype=np.float64)
    labels = np.asarray(labels)
    n = len(coords)
    dist = np.sqrt(((coords[:, None, :] - coords[None, :, :]) ** 2).sum(axis=2))
    same = labels[:, None] == labels[None, :]
    active = np.array([int(c) not in ignored for c in labels], dtype=bool)
    uf = UnionFind(n)
    ii, jj = np.nonzero(np.triu((dist < radii[0]) & same & active[:, None] & active[None, :], k=1))
    for i, j in zip(ii.tolist(), jj.tolist()):
        uf.union(i, j)
    groups = {}
    for i in np.flatnonzero(active).tolist():
        groups.setdefault(uf.find(i), []).append(i)
    current = [(int(labels[s[0]]), s) for s in groups.values()]
    rounds = [{(c, frozenset(s)) for c, s in current}]
    for r in radii[1:]:
        guf = UnionFind(len(current))
        for a in range(len(current)):
            for b in range(a + 1, len(current)):
                if current[a][0] == current[b][0] and dist[np.ix_(current[a][1], current[b][1])].min() < r:
                    guf.union(a, b)
        merged = {}
        for k, (c, s) in enumerate(current):
            merged.setdefault(guf.find(k), (c, []))[1].extend(s)
        current = list(merged.values())
        rounds.append({(c, frozenset(s)) for c, s in current})
    return rounds


def brute_neighbors(points, q, r):
    return [i for i, p in enumerate(points) if _dist(p, q) < r]


def iou(a, b):
    a, b = set(map(int, a)), set(map(int, b))
    if not a and not b:
        return 0.0
    return len(a & b) / len(a | b)


def best_gt(members, gts):
    """gts: list of (id, indices). Highest IoU, lowest id on ties."""
    best = None
    for gid, idx in gts:
        v = iou(members, idx)
        if best is None or v > best[1] or (v == best[1] and gid < best[0]):
            best = (gid, v)
    return best


def greedy_nms(items, thr):
    """items: list of (score, sorted index tuple). Returns kept positions."""
    live = [k for k, (_, idx) in enumerate(items) if idx]
    live.sort(key=lambda k: (-items[k][0], -len(items[k][1]), items[k][1][0]))
    kept = []
    for k in live:
        if all(iou(items[k][1], items[j][1]) < thr for j in kept):
            kept.append(k)
    return kept


def ap_all_point(flags, num_gt):
    """Textbook all-point interpolation, written as an explicit loop."""
    if num_gt == 0:
        return 1.0 if not flags else 0.0
    tp = 0
    prec, rec = [], []
    for k, f in enumerate(flags, start=1):
        tp += bool(f)
        prec.append(tp / k)
        rec.append(tp / num_gt)
    mrec = [0.0] + rec + [1.0]
    mpre = [0.0] + prec + [0.0]
    for i in range(len(mpre) - 2, -1, -1):
        mpre[i] = max(mpre[i], mpre[i + 1])
    return sum((mrec[i + 1] - mrec[i]) * mpre[i + 1] for i in range(len(mrec) - 1))


def reference_eval(preds, gts, thr):
    """preds: (class, conf, indices); gts: (id, class, indices). Per-class AP at one threshold."""
    classes = {p[0] for p in preds} | {g[1] for g in gts}
    out = {}
    for c in classes:
        ps = sorted([p for p in preds if p[0] == c], key=lambda p: -p[1])
        gs = sorted([g for g in gts if g[1] == c], key=lambda g: g[0])
        used = set()
        flags = []
        for _, _, idx in ps:
            cand = [(iou(idx, g[2]), -g[0], g[0]) for g in gs if g[0] not in used]
            cand = [t for t in cand if t[0] >= thr]
            if cand:
                used.add(max(cand)[2])
                flags.append(True)
            else:
                flags.append(False)
        out[c] = ap_all_point(flags, len(gs))
    return out


def random_scene(rng, n, num_labels=3, extent=0.1):
    """Small clustered cloud; clusters make multi-round merges likely."""
    k = int(rng.integers(1, 6))
    centers = rng.uniform(0, extent, size=(k, 3))
    which = rng.integers(0, k, size=n)
    pts = centers[which] + rng.normal(0, extent * rng.uniform(0.02, 0.2), size=(n, 3))
    labels = rng.integers(0, num_labels, size=n)
    return pts, labels


def grid_check_sample(points, index_fn, rng, radius, count=50):
    """Count random query points where ``index_fn`` disagrees with a full scan."""
    mismatches = 0
    for q in points[rng.choice(len(points), size=min(count, len(points)), replace=False)]:
        d = np.sqrt(((points - q) ** 2).sum(axis=1))
        if sorted(index_fn(q)) != np.flatnonzero(d < radius).tolist():
            mismatches += 1
    return mismatches


def as_sets(groups):
    return {(g.semantic_class, frozenset(int(i) for i in g.point_indices)) for g in groups}


ACCEPTANCE_LOG: list = []
