"""Time-ordered intersection sweep over tube segments.

Segments of all sausages are processed in global time order, grouped into
short windows, and registered in a uniform spatial hash of window pieces.
When a new piece lands near resident pieces of other sausages, exact
segment-pair distances resolve the earliest touching step, so each pair's
first connection time is discovered exactly when the later of its two
segments is inserted.  A live union-find turns the event stream into the
left-right bottleneck crossing step with optional early exit; run to the
horizon without early exit, the registered pairs are exactly the timed
intersection graph.

The kernel is numba-jitted and dtype-generic: float64 for exact graph
construction on pre-sampled configurations, float32 for the streaming
critical-time sweep where memory dominates.
"""
from __future__ import annotations

import numpy as np
from numba import njit

EMPTY_KEY = np.int64(-(2**62))

# status codes returned by the batch kernel
OK = 0
CROSSED = 1
GROW_PIECES = 2
GROW_ENTRIES = 3
GROW_GRID = 4
GROW_PAIRS = 5
FATAL_EVENTS = 6
FATAL_PAIRS = 7


@njit(cache=True, inline="always")
def _mix64(x):
    x = (x ^ (x >> 33)) * np.int64(-49064778989728563)
    x = (x ^ (x >> 29)) * np.int64(-4265267296055464877)
    return x ^ (x >> 32)


@njit(cache=True, inline="always")
def _cell_key(c, dim):
    h = np.int64(-3750763034362895579)
    for k in range(dim):
        h = _mix64(h ^ (np.int64(c[k]) + np.int64(0x9E3779B9) * np.int64(k + 1)))
    return h if h != EMPTY_KEY else h + 1


@njit(cache=True, inline="always")
def _table_find(keys, key):
    mask = keys.shape[0] - 1
    slot = np.int64(key) & np.int64(mask)
    while True:
        k = keys[slot]
        if k == key:
            return slot, True
        if k == EMPTY_KEY:
            return slot, False
        slot = (slot + 1) & mask


@njit(cache=True, inline="always")
def _mix_pair(a, b):
    k = _mix64((np.int64(a) << 32) | np.int64(b))
    return k if k != EMPTY_KEY else k + 1


@njit(cache=True, inline="always")
def _uf_find(parent, i):
    root = i
    while parent[root] != root:
        root = parent[root]
    while parent[i] != root:
        nxt = parent[i]
        parent[i] = root
        i = nxt
    return root


@njit(cache=True)
def rehash_grid(old_keys, old_vals, new_keys, new_vals):
    for s in range(old_keys.shape[0]):
        key = old_keys[s]
        if key != EMPTY_KEY:
            slot, _ = _table_find(new_keys, key)
            new_keys[slot] = key
            new_vals[slot] = old_vals[s]


@njit(cache=True, inline="always")
def _seg_seg_dist2(ax, bx, ay, by, dim):
    # squared min distance between segments [ax,bx] and [ay,by]
    A = 0.0
    E = 0.0
    F = 0.0
    C = 0.0
    B = 0.0
    for k in range(dim):
        d1 = float(bx[k]) - float(ax[k])
        d2 = float(by[k]) - float(ay[k])
        rr = float(ax[k]) - float(ay[k])
        A += d1 * d1
        E += d2 * d2
        F += d2 * rr
        C += d1 * rr
        B += d1 * d2
    eps = 1e-30
    if A <= eps and E <= eps:
        s = 0.0
        t = 0.0
    elif A <= eps:
        s = 0.0
        t = F / E
    elif E <= eps:
        t = 0.0
        s = -C / A
    else:
        denom = A * E - B * B
        if denom > eps:
            s = (B * F - C * E) / denom
            if s < 0.0:
                s = 0.0
            elif s > 1.0:
                s = 1.0
        else:
            s = 0.0
        t = (B * s + F) / E
        if t < 0.0:
            t = 0.0
            s = -C / A
        elif t > 1.0:
            t = 1.0
            s = (B - C) / A
    if s < 0.0:
        s = 0.0
    elif s > 1.0:
        s = 1.0
    if t < 0.0:
        t = 0.0
    elif t > 1.0:
        t = 1.0
    out = 0.0
    for k in range(dim):
        d1 = float(bx[k]) - float(ax[k])
        d2 = float(by[k]) - float(ay[k])
        diff = (float(ax[k]) + s * d1) - (float(ay[k]) + t * d2)
        out += diff * diff
    return out


@njit(cache=True)
def _pair_min_touch_step(
    pts_new, n_new, step0_new, atom_new,
    pts_res, n_res, step0_res, atom_res,
    dim, thr2,
):
    """Earliest max(end step) over touching segment pairs of two pieces; -1 if none.

    Segment j >= 1 of a piece spans points (j-1, j) and ends at step
    step0 + j; when the piece opens the path (atom flag) point 0 also acts
    as a zero-length segment ending at step 0.
    """
    best = -1
    lo1 = 0 if atom_new else 1
    lo2 = 0 if atom_res else 1
    for j1 in range(lo1, n_new):
        e1 = step0_new + j1
        a1 = j1 - 1 if j1 > 0 else 0
        for j2 in range(lo2, n_res):
            e2 = step0_res + j2
            tau = e1 if e1 > e2 else e2
            if best >= 0 and tau >= best:
                continue
            a2 = j2 - 1 if j2 > 0 else 0
            d2 = _seg_seg_dist2(pts_new[a1], pts_new[j1], pts_res[a2], pts_res[j2], dim)
            if d2 <= thr2:
                best = tau
    return best


@njit(cache=True)
def sweep_batch(
    pos,            # (N, K+1, dim) block positions; point j is global step step0+j
    step0,          # global step of block point 0
    n_steps,        # number of new steps in this block
    window,         # window length W in steps
    radii,          # (N,) sausage radii
    h,              # grid cell size
    lo1, hi1, use_faces,
    crossing_only,  # skip intra-component pairs and exit at first LR connection
    grid_keys, grid_heads, n_cells,
    ent_piece, ent_next, n_entries,
    pc_pts, pc_lo, pc_hi, pc_sid, pc_npts, pc_step0, pc_atom, pc_stamp,
    n_pieces, stamp_counter,
    pair_keys, pair_i, pair_j, pair_step, n_pairs,
    uf_parent,      # N + 2 nodes; LEFT = N, RIGHT = N + 1
    face_step,      # (N, 2) first-touch step per face, -1 when untouched
    ev_i, ev_j, ev_step, n_ev,
    resume_w, resume_i,
    out_state,      # int64[3]: resume window, resume sausage, crossing step
):
    N = pos.shape[0]
    dim = pos.shape[2]
    left = N
    right = N + 1
    n_windows = (n_steps + window - 1) // window
    ent_cap = ent_piece.shape[0]
    pc_cap = pc_sid.shape[0]
    grid_cap = grid_keys.shape[0]
    pair_cap = pair_keys.shape[0]
    ev_cap = ev_i.shape[0]
    cr = np.empty(dim, dtype=np.int64)
    c0 = np.empty(dim, dtype=np.int64)
    c1 = np.empty(dim, dtype=np.int64)

    for w in range(resume_w, n_windows):
        k_lo = w * window
        k_hi = min(k_lo + window, n_steps)
        i_start = resume_i if w == resume_w else 0
        for i in range(i_start, N):
            pid = n_pieces[0]
            if pid >= pc_cap:
                out_state[0] = w
                out_state[1] = i
                return GROW_PIECES
            npts = k_hi - k_lo + 1
            atom = 1 if (step0 + k_lo) == 0 else 0
            ri = radii[i]
            for k in range(dim):
                v = float(pos[i, k_lo, k])
                pc_lo[pid, k] = v
                pc_hi[pid, k] = v
            for j in range(k_lo + 1, k_hi + 1):
                for k in range(dim):
                    v = float(pos[i, j, k])
                    if v < pc_lo[pid, k]:
                        pc_lo[pid, k] = v
                    if v > pc_hi[pid, k]:
                        pc_hi[pid, k] = v
            ncells = 1
            for k in range(dim):
                pc_lo[pid, k] -= ri
                pc_hi[pid, k] += ri
                c0[k] = np.int64(np.floor(pc_lo[pid, k] / h))
                c1[k] = np.int64(np.floor(pc_hi[pid, k] / h))
                ncells *= int(c1[k] - c0[k] + 1)
            if n_entries[0] + ncells > ent_cap:
                out_state[0] = w
                out_state[1] = i
                return GROW_ENTRIES
            if 2 * (n_cells[0] + ncells) > grid_cap:
                out_state[0] = w
                out_state[1] = i
                return GROW_GRID
            if 2 * (n_pairs[0] + 4096) > pair_cap:
                out_state[0] = w
                out_state[1] = i
                return GROW_PAIRS
            if n_ev[0] + 2048 > ev_cap:
                out_state[0] = w
                out_state[1] = i
                return FATAL_EVENTS

            n_pieces[0] += 1
            pc_sid[pid] = i
            pc_npts[pid] = npts
            pc_step0[pid] = step0 + k_lo
            pc_atom[pid] = atom
            for j in range(npts):
                for k in range(dim):
                    pc_pts[pid, j, k] = pos[i, k_lo + j, k]

            # face touches: earliest segment whose x1-extent reaches a plane
            if use_faces and (face_step[i, 0] < 0 or face_step[i, 1] < 0):
                jj0 = 0 if atom == 1 else 1
                for j in range(jj0, npts):
                    a = j - 1 if j > 0 else 0
                    x1a = float(pc_pts[pid, a, 0])
                    x1b = float(pc_pts[pid, j, 0])
                    mn = x1a if x1a < x1b else x1b
                    mx = x1a if x1a > x1b else x1b
                    estep = step0 + k_lo + j
                    if face_step[i, 0] < 0 and mn - ri <= lo1:
                        face_step[i, 0] = estep
                        ev_i[n_ev[0]] = i
                        ev_j[n_ev[0]] = left
                        ev_step[n_ev[0]] = estep
                        n_ev[0] += 1
                    if face_step[i, 1] < 0 and mx + ri >= hi1:
                        face_step[i, 1] = estep
                        ev_i[n_ev[0]] = i
                        ev_j[n_ev[0]] = right
                        ev_step[n_ev[0]] = estep
                        n_ev[0] += 1
                    if face_step[i, 0] >= 0 and face_step[i, 1] >= 0:
                        break

            # query resident pieces through the covered cells, then insert
            stamp_counter[0] += 1
            stamp = stamp_counter[0]
            root_i = _uf_find(uf_parent, i) if crossing_only else -1
            for k in range(dim):
                cr[k] = c0[k]
            while True:
                key = _cell_key(cr, dim)
                slot, found = _table_find(grid_keys, key)
                q = grid_heads[slot] if found else -1
                while q >= 0:
                    rpid = ent_piece[q]
                    q = ent_next[q]
                    sj = pc_sid[rpid]
                    if sj == i or pc_stamp[rpid] == stamp:
                        continue
                    pc_stamp[rpid] = stamp
                    if crossing_only and _uf_find(uf_parent, sj) == root_i:
                        continue
                    a = i if i < sj else sj
                    b = sj if i < sj else i
                    pkey = _mix_pair(a, b)
                    pslot, pfound = _table_find(pair_keys, pkey)
                    if pfound and pair_step[pslot] <= step0 + k_lo:
                        continue
                    # box gap precheck (boxes already carry each radius)
                    gap = 0.0
                    for k in range(dim):
                        g1 = pc_lo[rpid, k] - pc_hi[pid, k]
                        g2 = pc_lo[pid, k] - pc_hi[rpid, k]
                        g = g1 if g1 > g2 else g2
                        if g > gap:
                            gap = g
                    if gap > 0.0:
                        continue
                    thr = float(ri + radii[sj])
                    tau = _pair_min_touch_step(
                        pc_pts[pid], npts, pc_step0[pid], pc_atom[pid] == 1,
                        pc_pts[rpid], pc_npts[rpid], pc_step0[rpid], pc_atom[rpid] == 1,
                        dim, thr * thr,
                    )
                    if tau < 0:
                        continue
                    if pfound:
                        if tau < pair_step[pslot]:
                            pair_step[pslot] = tau
                    else:
                        if 2 * (n_pairs[0] + 1) >= pair_cap:
                            return FATAL_PAIRS
                        pair_keys[pslot] = pkey
                        pair_i[pslot] = a
                        pair_j[pslot] = b
                        pair_step[pslot] = tau
                        n_pairs[0] += 1
                    if n_ev[0] >= ev_cap - 2:
                        return FATAL_EVENTS
                    ev_i[n_ev[0]] = a
                    ev_j[n_ev[0]] = b
                    ev_step[n_ev[0]] = tau
                    n_ev[0] += 1
                if not found:
                    grid_keys[slot] = key
                    grid_heads[slot] = -1
                    n_cells[0] += 1
                e = n_entries[0]
                ent_piece[e] = pid
                ent_next[e] = grid_heads[slot]
                grid_heads[slot] = e
                n_entries[0] += 1
                k = 0
                while k < dim:
                    cr[k] += 1
                    if cr[k] <= c1[k]:
                        break
                    cr[k] = c0[k]
                    k += 1
                if k == dim:
                    break

        # window complete: apply buffered events in time order
        m = n_ev[0]
        if m > 0:
            order = np.argsort(
                ev_step[:m].astype(np.int64) * np.int64(4) * np.int64(N + 2) * np.int64(N + 2)
                + ev_i[:m].astype(np.int64) * np.int64(N + 2)
                + ev_j[:m].astype(np.int64)
            )
            for oi in range(m):
                e = order[oi]
                ra = _uf_find(uf_parent, ev_i[e])
                rb = _uf_find(uf_parent, ev_j[e])
                if ra != rb:
                    uf_parent[ra] = rb
                    if out_state[2] < 0 and _uf_find(uf_parent, left) == _uf_find(
                        uf_parent, right
                    ):
                        out_state[2] = ev_step[e]
                        if crossing_only:
                            n_ev[0] = 0
                            out_state[0] = w + 1
                            out_state[1] = 0
                            return CROSSED
            n_ev[0] = 0
    out_state[0] = n_windows
    out_state[1] = 0
    return OK
