"""Dense re-derivation of the schedule constraints by literal summation.

Deliberately shares no code with the production checkers: every constraint is
evaluated by building a dense 0/1 tensor over (tile, slot, engine) or
(link, slot) and summing it, exactly as the constraint inequalities read.
"""
import numpy as np


def _profile_value(bw, BW, offset):
    R = -(-bw // BW) - 1  # full-bandwidth slots before the last one
    if offset < 0 or offset > R:
        return 0
    return BW if offset < R else bw - R * BW


def brute_violations(tiles, entries, deps, tasks, transfers, demand, P, BW, n_engines):
    """tiles: {key: (length, (S, L))}; entries: [(d, i, n, t, p)];
    tasks: {d: (arrival, deadline, finals)}; transfers: [(d, i, k, t, link_str)]."""
    keys = sorted(tiles)
    index = {k: j for j, k in enumerate(keys)}
    horizon = 2 + max([t for *_, t, _ in entries] + [t for *_, t, _ in transfers] + [0]) \
        + max([length for length, _ in tiles.values()] + [1])
    X = np.zeros((len(keys), horizon, n_engines), dtype=np.int64)
    for d, i, n, t, p in entries:
        if (d, i, n) in index:
            X[index[(d, i, n)], t, p] += 1
    slots = np.arange(horizon)
    out = set()

    win = np.zeros((len(keys), horizon), dtype=np.int64)
    for k, j in index.items():
        S, L = tiles[k][1]
        win[j, S:min(L, horizon - 1) + 1] = 1
    placed = (X.sum(axis=2) * win).sum(axis=1)
    start = (X.sum(axis=2) * win * slots).sum(axis=1)
    for k, j in index.items():
        if placed[j] != 1:
            out.add(("TileCompute", k, None))

    for a, b in deps:
        ja, jb = index[a], index[b]
        if placed[ja] == 1 and placed[jb] == 1 and start[ja] - start[jb] > -tiles[a][0]:
            out.add(("TileOrder", (a, b), int(start[jb])))

    for d, (arr, ddl, finals) in tasks.items():
        if all(placed[index[f]] == 1 for f in finals):
            finish = max(int(start[index[f]]) + tiles[f][0] for f in finals)
            if finish - arr >= ddl:
                out.add(("Deadline", (d,), finish))

    # busy[j, t, p] = sum_{r < len} X[j, t - r, p]
    busy = np.zeros_like(X)
    for k, j in index.items():
        for r in range(tiles[k][0]):
            busy[j, r:, :] += X[j, :horizon - r, :]
    raw = np.zeros((len(keys), horizon, n_engines), dtype=np.int64)
    for d, i, n, t, p in entries:
        length = tiles[(d, i, n)][0]
        raw[index[(d, i, n)], t:t + length, p] += 1
    total = raw.sum(axis=(0, 2))
    for t in range(horizon):
        if total[t] > P:
            out.add(("EngineCapacity", (), t))
        for p in range(n_engines):
            if raw[:, t, p].sum() > 1:
                out.add(("EngineOverlap", (p,), t))

    links = sorted({tr[4] for tr in transfers})
    lidx = {l: j for j, l in enumerate(links)}
    Y = np.zeros((len(links), horizon), dtype=np.int64)
    first = {}
    for d, i, k, t, link in transfers:
        key = (d, i, k, link)
        first[key] = min(first.get(key, t), t)
    for d, i, k, t, link in transfers:
        Y[lidx[link], t] += _profile_value(demand[(d, k)], BW, t - first[(d, i, k, link)])
    for link, j in lidx.items():
        for t in range(horizon):
            if Y[j, t] > BW:
                out.add(("LinkBandwidth", (link,), t))
    return out
