"""JIT kernels: event generation, sequential replay and batched replicates.

Events are identified by a stream id ``site * nslot + slot`` where the slots
of a site are the ``2d`` arrow directions followed by death, block and
unblock. Streams are emitted in id order and then stably sorted by time, so
simultaneous events fall back to (site, kind, direction) order.

Every batch kernel regenerates replicate ``r`` exactly as
``tableau.generate(..., seed, replicate=r)`` would, window by window; the
windows only bound memory and allow stopping early once the outcome is fixed.
"""

import math

import numpy as np
from numba import njit

from ._rng import DOMAIN_INIT, DOMAIN_STREAM, DOMAIN_THIN, make_key, uniform

BLOCKED = -1
VACANT = 0
OCCUPIED = 1

_WINDOW_EVENTS = 4096.0


@njit(cache=True)
def sample_state(seed, rep, template, use_nu, a_mask, rho):
    n = template.shape[0]
    state = template.copy()
    if use_nu:
        for i in range(n):
            u = uniform(make_key(seed, rep, DOMAIN_INIT, i), 0)
            if u < rho:
                state[i] = BLOCKED
            elif a_mask[i]:
                state[i] = OCCUPIED
            else:
                state[i] = VACANT
    return state


@njit(cache=True)
def gen_start(seed, rep, n_streams, nslot, rates):
    keys = np.empty(n_streams, np.uint64)
    nxt = np.full(n_streams, np.inf)
    ctr = np.zeros(n_streams, np.int64)
    for s in range(n_streams):
        keys[s] = make_key(seed, rep, DOMAIN_STREAM, s)
        rate = rates[s % nslot]
        if rate > 0.0:
            nxt[s] = -math.log1p(-uniform(keys[s], 0)) / rate
            ctr[s] = 1
    return keys, nxt, ctr


@njit(cache=True)
def gen_window(keys, nxt, ctr, nslot, rates, t_end, buf_t, buf_s, buf_o):
    """Emit every pending event with time < t_end, in stream order."""
    n = 0
    for s in range(keys.shape[0]):
        t = nxt[s]
        if t >= t_end:
            continue
        rate = rates[s % nslot]
        c = ctr[s]
        key = keys[s]
        while t < t_end:
            if n == buf_t.shape[0]:
                m = 2 * n + 64
                nt = np.empty(m)
                ns = np.empty(m, np.int64)
                no = np.empty(m, np.int64)
                nt[:n] = buf_t[:n]
                ns[:n] = buf_s[:n]
                no[:n] = buf_o[:n]
                buf_t, buf_s, buf_o = nt, ns, no
            buf_t[n] = t
            buf_s[n] = s
            buf_o[n] = c - 1
            n += 1
            t += -math.log1p(-uniform(key, c)) / rate
            c += 1
        nxt[s] = t
        ctr[s] = c
    return n, buf_t, buf_s, buf_o


@njit(cache=True)
def bucket_argsort(times, n, t0, t1):
    """Stable argsort of ``times[:n]`` (all in [t0, t1)); O(n) for near-uniform times."""
    nb = max(1, n // 2)
    order = np.empty(n, np.int64)
    if n == 0:
        return order
    width = t1 - t0
    scale = nb / width if width > 0 else 0.0
    bucket = np.empty(n, np.int64)
    bounds = np.zeros(nb + 1, np.int64)
    for i in range(n):
        k = int((times[i] - t0) * scale)
        if k >= nb:
            k = nb - 1
        elif k < 0:
            k = 0
        bucket[i] = k
        bounds[k + 1] += 1
    for k in range(nb):
        bounds[k + 1] += bounds[k]
    for i in range(n):
        k = bucket[i]
        order[bounds[k]] = i
        bounds[k] += 1
    start = 0
    for k in range(nb):
        end = bounds[k]
        for i in range(start + 1, end):
            v = order[i]
            tv = times[v]
            j = i - 1
            while j >= start and times[order[j]] > tv:
                order[j + 1] = order[j]
                j -= 1
            order[j + 1] = v
        start = end
    return order


@njit(cache=True)
def window_length(total_rate, horizon):
    if total_rate * horizon <= 4.0 * _WINDOW_EVENTS:
        return horizon
    return _WINDOW_EVENTS / total_rate


@njit(cache=True)
def generate_events(seed, rep, n_sites, nslot, rates, horizon):
    keys, nxt, ctr = gen_start(seed, rep, n_sites * nslot, nslot, rates)
    cap = int(n_sites * rates.sum() * horizon * 1.1) + 64
    n, bt, bs, bo = gen_window(keys, nxt, ctr, nslot, rates, horizon,
                               np.empty(cap), np.empty(cap, np.int64), np.empty(cap, np.int64))
    order = bucket_argsort(bt, n, 0.0, horizon)
    return bt[order], bs[order], bo[order]


@njit(cache=True)
def thin_marks(seed, rep, streams, ordinals):
    out = np.empty(streams.shape[0])
    for i in range(streams.shape[0]):
        out[i] = uniform(make_key(seed, rep, DOMAIN_THIN, streams[i]), ordinals[i])
    return out


@njit(inline="always", cache=True)
def apply_event(state, site, slot, nd, nbr, birth_ok, env_only):
    """Apply one event in place; returns ``(changed_site, old_state)`` or ``(-1, 0)``."""
    if slot < nd:
        if env_only:
            return -1, 0
        y = nbr[site, slot]
        if y >= 0 and state[site] == OCCUPIED and state[y] == VACANT and birth_ok[y]:
            state[y] = OCCUPIED
            return y, VACANT
        return -1, 0
    k = slot - nd
    if k == 0:
        if not env_only and state[site] == OCCUPIED:
            state[site] = VACANT
            return site, OCCUPIED
    elif k == 1:
        old = state[site]
        if old != BLOCKED:
            state[site] = BLOCKED
            return site, old
    else:
        if state[site] == BLOCKED:
            state[site] = VACANT
            return site, BLOCKED
    return -1, 0


@njit(cache=True)
def _count_occupied(state):
    c = 0
    for i in range(state.shape[0]):
        if state[i] == OCCUPIED:
            c += 1
    return c


@njit(cache=True)
def _touches(state, boundary):
    for i in range(state.shape[0]):
        if boundary[i] and state[i] == OCCUPIED:
            return True
    return False


@njit(cache=True)
def replay_log(times, streams, nslot, nd, nbr, birth_ok, boundary, state0, horizon, env_only):
    """Replay a materialized event list, logging only effective changes."""
    state = state0.copy()
    n = times.shape[0]
    log_t = np.empty(n)
    log_site = np.empty(n, np.int64)
    log_old = np.empty(n, np.int8)
    log_new = np.empty(n, np.int8)
    m = 0
    nocc = _count_occupied(state)
    tau = 0.0 if nocc == 0 else np.inf
    censored = _touches(state, boundary)
    for i in range(n):
        te = times[i]
        if te > horizon:
            break
        s = streams[i]
        site, old = apply_event(state, s // nslot, s % nslot, nd, nbr, birth_ok, env_only)
        if site >= 0:
            new = state[site]
            log_t[m] = te
            log_site[m] = site
            log_old[m] = old
            log_new[m] = new
            m += 1
            if old == OCCUPIED:
                nocc -= 1
                if nocc == 0:
                    tau = te
            if new == OCCUPIED:
                nocc += 1
                if boundary[site]:
                    censored = True
    return log_t[:m], log_site[:m], log_old[:m], log_new[:m], tau, censored


@njit(cache=True, nogil=True)
def forward_batch(seed, rep0, nrep, rates, nslot, nd, nbr, birth_ok, boundary,
                  template, use_nu, a_mask, rho, horizon, qtimes, stop_when_extinct):
    """Independent forward replicates; snapshots at ``qtimes`` plus extinction time and censoring."""
    n_sites = nbr.shape[0]
    nq = qtimes.shape[0]
    snaps = np.empty((nrep, nq, n_sites), np.int8)
    tau = np.empty(nrep)
    cens = np.zeros(nrep, np.bool_)
    window = window_length(n_sites * rates.sum(), horizon)
    cap = int(n_sites * rates.sum() * window * 1.2) + 64
    bt = np.empty(cap)
    bs = np.empty(cap, np.int64)
    bo = np.empty(cap, np.int64)
    for r in range(nrep):
        rep = rep0 + r
        state = sample_state(seed, rep, template, use_nu, a_mask, rho)
        nocc = _count_occupied(state)
        tr = 0.0 if nocc == 0 else np.inf
        censored = _touches(state, boundary)
        keys, nxt, ctr = gen_start(seed, rep, n_sites * nslot, nslot, rates)
        qi = 0
        t0 = 0.0
        while t0 < horizon:
            if stop_when_extinct and nocc == 0:
                break
            t1 = min(t0 + window, horizon)
            n, bt, bs, bo = gen_window(keys, nxt, ctr, nslot, rates, t1, bt, bs, bo)
            order = bucket_argsort(bt, n, t0, t1)
            for j in range(n):
                i = order[j]
                te = bt[i]
                while qi < nq and qtimes[qi] < te:
                    snaps[r, qi, :] = state
                    qi += 1
                s = bs[i]
                site, old = apply_event(state, s // nslot, s % nslot, nd, nbr, birth_ok, False)
                if site >= 0:
                    new = state[site]
                    if old == OCCUPIED:
                        nocc -= 1
                        if nocc == 0:
                            tr = te
                    if new == OCCUPIED:
                        nocc += 1
                        if boundary[site]:
                            censored = True
            t0 = t1
        while qi < nq:
            snaps[r, qi, :] = state
            qi += 1
        tau[r] = tr
        cens[r] = censored
    return snaps, tau, cens


@njit(cache=True, nogil=True)
def sweep_batch(seed, thin_seed, rep0, nrep, rates, nslot, nd, nbr, birth_ok, boundary,
                template, use_nu, a_mask, rho, horizon, keep):
    """Forward replicates for several birth rates on one tableau via coupled thinning.

    ``rates`` carry the largest birth rate; value ``v`` keeps an arrow iff its
    thinning mark is below ``keep[v]``.
    """
    n_sites = nbr.shape[0]
    nv = keep.shape[0]
    tau = np.empty((nrep, nv))
    cens = np.zeros((nrep, nv), np.bool_)
    window = window_length(n_sites * rates.sum(), horizon)
    cap = int(n_sites * rates.sum() * window * 1.2) + 64
    bt = np.empty(cap)
    bs = np.empty(cap, np.int64)
    bo = np.empty(cap, np.int64)
    for r in range(nrep):
        rep = rep0 + r
        base = sample_state(seed, rep, template, use_nu, a_mask, rho)
        states = np.empty((nv, n_sites), np.int8)
        nocc = np.empty(nv, np.int64)
        alive = 0
        for v in range(nv):
            states[v] = base
            nocc[v] = _count_occupied(base)
            tau[r, v] = 0.0 if nocc[v] == 0 else np.inf
            cens[r, v] = _touches(base, boundary)
            if nocc[v] > 0:
                alive += 1
        keys, nxt, ctr = gen_start(seed, rep, n_sites * nslot, nslot, rates)
        t0 = 0.0
        while t0 < horizon and alive > 0:
            t1 = min(t0 + window, horizon)
            n, bt, bs, bo = gen_window(keys, nxt, ctr, nslot, rates, t1, bt, bs, bo)
            order = bucket_argsort(bt, n, t0, t1)
            for j in range(n):
                i = order[j]
                s = bs[i]
                site0 = s // nslot
                slot = s % nslot
                u = 0.0
                if slot < nd:
                    u = uniform(make_key(thin_seed, rep, DOMAIN_THIN, s), bo[i])
                for v in range(nv):
                    if nocc[v] == 0 and slot < nd + 1:
                        continue
                    if slot < nd and not u < keep[v]:
                        continue
                    site, old = apply_event(states[v], site0, slot, nd, nbr, birth_ok, False)
                    if site >= 0:
                        new = states[v, site]
                        if old == OCCUPIED:
                            nocc[v] -= 1
                            if nocc[v] == 0:
                                tau[r, v] = bt[i]
                                alive -= 1
                        if new == OCCUPIED:
                            nocc[v] += 1
                            if boundary[site]:
                                cens[r, v] = True
            t0 = t1
    return tau, cens


@njit(cache=True)
def _any_full(state, cubes):
    for c in range(cubes.shape[0]):
        full = True
        for k in range(cubes.shape[1]):
            if state[cubes[c, k]] != OCCUPIED:
                full = False
                break
        if full:
            return True
    return False


@njit(cache=True)
def _site_full(state, cubes, ptr, members, site):
    for p in range(ptr[site], ptr[site + 1]):
        c = members[p]
        full = True
        for k in range(cubes.shape[1]):
            if state[cubes[c, k]] != OCCUPIED:
                full = False
                break
        if full:
            return True
    return False


@njit(cache=True, nogil=True)
def block_batch(seed, rep0, nrep, rates, nslot, nd, nbr, birth_ok, template, T,
                cubes1, cubes2, ptr2, members2):
    """Indicators of the two block events on ``[0, T + 1]``.

    First: some cube of ``cubes1`` fully occupied at ``T + 1``. Second: some
    cube of ``cubes2`` fully occupied at a time in ``[1, T + 1]``.
    """
    n_sites = nbr.shape[0]
    horizon = T + 1.0
    ev1 = np.zeros(nrep, np.bool_)
    ev2 = np.zeros(nrep, np.bool_)
    window = window_length(n_sites * rates.sum(), horizon)
    cap = int(n_sites * rates.sum() * window * 1.2) + 64
    bt = np.empty(cap)
    bs = np.empty(cap, np.int64)
    bo = np.empty(cap, np.int64)
    dummy = np.zeros(n_sites, np.bool_)
    for r in range(nrep):
        rep = rep0 + r
        state = sample_state(seed, rep, template, False, dummy, 0.0)
        nocc = _count_occupied(state)
        keys, nxt, ctr = gen_start(seed, rep, n_sites * nslot, nslot, rates)
        hit2 = False
        checked_start = False
        t0 = 0.0
        while t0 < horizon and nocc > 0:
            t1 = min(t0 + window, horizon)
            n, bt, bs, bo = gen_window(keys, nxt, ctr, nslot, rates, t1, bt, bs, bo)
            order = bucket_argsort(bt, n, t0, t1)
            for j in range(n):
                i = order[j]
                te = bt[i]
                if not checked_start and te > 1.0:
                    checked_start = True
                    if not hit2:
                        hit2 = _any_full(state, cubes2)
                s = bs[i]
                site, old = apply_event(state, s // nslot, s % nslot, nd, nbr, birth_ok, False)
                if site >= 0:
                    new = state[site]
                    if old == OCCUPIED:
                        nocc -= 1
                    if new == OCCUPIED:
                        nocc += 1
                        if checked_start and not hit2:
                            hit2 = _site_full(state, cubes2, ptr2, members2, site)
            t0 = t1
        if not checked_start and nocc > 0:
            hit2 = hit2 or _any_full(state, cubes2)
        ev2[r] = hit2
        ev1[r] = nocc > 0 and _any_full(state, cubes1)
    return ev1, ev2


@njit(inline="always", cache=True)
def _pack(a, b, next_allowed):
    """Greedy count of points in [a, b] with gaps >= 1, none before next_allowed."""
    first = a if a > next_allowed else next_allowed
    if first > b:
        return 0, next_allowed
    k = int(math.floor(b - first)) + 1
    while first + k <= b:
        k += 1
    while first + (k - 1) > b:
        k -= 1
    return k, first + k


@njit(cache=True, nogil=True)
def occupancy_crossing_batch(seed, rep0, nrep, rates, nslot, nd, nbr, birth_ok, template, T, orthant, face_index):
    """Occupied count inside ``orthant`` at ``T`` and the face packing count on ``[0, T]``.

    ``face_index[x]`` is the face slot of site ``x`` or -1.
    """
    n_sites = nbr.shape[0]
    n_face = 0
    for x in range(n_sites):
        if face_index[x] >= 0:
            n_face += 1
    count = np.zeros(nrep, np.int64)
    nplus = np.zeros(nrep, np.int64)
    window = window_length(n_sites * rates.sum(), T)
    cap = int(n_sites * rates.sum() * window * 1.2) + 64
    bt = np.empty(cap)
    bs = np.empty(cap, np.int64)
    bo = np.empty(cap, np.int64)
    dummy = np.zeros(n_sites, np.bool_)
    since = np.empty(n_face)
    allowed = np.empty(n_face)
    for r in range(nrep):
        rep = rep0 + r
        state = sample_state(seed, rep, template, False, dummy, 0.0)
        nocc = _count_occupied(state)
        packed = 0
        for x in range(n_sites):
            f = face_index[x]
            if f >= 0:
                allowed[f] = -np.inf
                since[f] = 0.0 if state[x] == OCCUPIED else -1.0
        keys, nxt, ctr = gen_start(seed, rep, n_sites * nslot, nslot, rates)
        t0 = 0.0
        while t0 < T and nocc > 0:
            t1 = min(t0 + window, T)
            n, bt, bs, bo = gen_window(keys, nxt, ctr, nslot, rates, t1, bt, bs, bo)
            order = bucket_argsort(bt, n, t0, t1)
            for j in range(n):
                i = order[j]
                te = bt[i]
                s = bs[i]
                site, old = apply_event(state, s // nslot, s % nslot, nd, nbr, birth_ok, False)
                if site >= 0:
                    new = state[site]
                    f = face_index[site]
                    if old == OCCUPIED:
                        nocc -= 1
                        if f >= 0:
                            k, allowed[f] = _pack(since[f], te, allowed[f])
                            packed += k
                            since[f] = -1.0
                    if new == OCCUPIED:
                        nocc += 1
                        if f >= 0:
                            since[f] = te
            t0 = t1
        inside = 0
        for x in range(n_sites):
            f = face_index[x]
            if f >= 0 and since[f] >= 0.0:
                k, allowed[f] = _pack(since[f], T, allowed[f])
                packed += k
            if orthant[x] and state[x] == OCCUPIED:
                inside += 1
        count[r] = inside
        nplus[r] = packed
    return count, nplus


@njit(cache=True)
def env_effective(times, streams, nslot, nd, blocked0, t):
    """Forward environment replay: per-event effectiveness flags and the blocked set at ``t``."""
    blocked = blocked0.copy()
    n = times.shape[0]
    eff = np.zeros(n, np.bool_)
    for i in range(n):
        if times[i] > t:
            break
        s = streams[i]
        site = s // nslot
        slot = s % nslot
        if slot == nd + 1:
            if not blocked[site]:
                blocked[site] = True
                eff[i] = True
        elif slot == nd + 2:
            if blocked[site]:
                blocked[site] = False
                eff[i] = True
    return eff, blocked


@njit(cache=True)
def dual_replay(times, streams, nslot, nd, nbr, eff, blocked_t, cmask, t, want_log):
    """Dual occupied set run backwards from ``t`` with reversed arrows.

    Returns the dual set at dual time ``t`` (forward time 0), the dual
    environment at that point, and optionally a log ``(s, site, new)``.
    """
    n_sites = nbr.shape[0]
    dual = cmask & ~blocked_t
    env = blocked_t.copy()
    n = times.shape[0]
    cap = n if want_log else 0
    log_s = np.empty(cap)
    log_site = np.empty(cap, np.int64)
    log_new = np.empty(cap, np.int8)
    m = 0
    last = n - 1
    while last >= 0 and times[last] > t:
        last -= 1
    for i in range(last, -1, -1):
        s = streams[i]
        x = s // nslot
        slot = s % nslot
        changed = -1
        newv = 0
        if slot < nd:
            y = nbr[x, slot]
            if y >= 0 and dual[y] and not dual[x] and not env[x]:
                dual[x] = True
                changed = x
                newv = 1
        elif slot == nd:
            if dual[x]:
                dual[x] = False
                changed = x
        elif slot == nd + 1:
            if eff[i]:
                env[x] = False
        else:
            if eff[i]:
                env[x] = True
                if dual[x]:
                    dual[x] = False
                    changed = x
        if changed >= 0 and want_log:
            log_s[m] = t - times[i]
            log_site[m] = changed
            log_new[m] = newv
            m += 1
    return dual, env, log_s[:m], log_site[:m], log_new[:m]


@njit(cache=True)
def _hits(state, mask, value):
    for i in range(state.shape[0]):
        if mask[i] and state[i] == value:
            return True
    return False


@njit(cache=True, nogil=True)
def dual_batch(seed, self_seed, rep0, nrep, rates, nslot, nd, nbr, rho, amask, cmask, dmask, t):
    """Per-replicate indicators of the two sides of the coupled duality identity
    and of the self-duality right side (independent forward run from ``nu_C``)."""
    n_sites = nbr.shape[0]
    birth_ok = np.ones(n_sites, np.bool_)
    left = np.zeros(nrep, np.bool_)
    right = np.zeros(nrep, np.bool_)
    selfd = np.zeros(nrep, np.bool_)
    zeros = np.zeros(n_sites, np.int8)
    for r in range(nrep):
        rep = rep0 + r
        state = sample_state(seed, rep, zeros, True, amask, rho)
        blocked0 = state == BLOCKED
        times, streams, _ = generate_events(seed, rep, n_sites, nslot, rates, t)
        for i in range(times.shape[0]):
            s = streams[i]
            apply_event(state, s // nslot, s % nslot, nd, nbr, birth_ok, False)
        left[r] = _hits(state, cmask, OCCUPIED) and _hits(state, dmask, BLOCKED)
        eff, blocked_t = env_effective(times, streams, nslot, nd, blocked0, t)
        dual, _, _, _, _ = dual_replay(times, streams, nslot, nd, nbr, eff, blocked_t, cmask, t, False)
        hit = False
        for i in range(n_sites):
            if dual[i] and amask[i]:
                hit = True
                break
        dhit = False
        for i in range(n_sites):
            if dmask[i] and blocked_t[i]:
                dhit = True
                break
        right[r] = hit and dhit
        # independent forward run from nu_C
        state2 = sample_state(self_seed, rep, zeros, True, cmask, rho)
        b0 = _hits(state2, dmask, BLOCKED)
        times2, streams2, _ = generate_events(self_seed, rep, n_sites, nslot, rates, t)
        for i in range(times2.shape[0]):
            s = streams2[i]
            apply_event(state2, s // nslot, s % nslot, nd, nbr, birth_ok, False)
        selfd[r] = b0 and _hits(state2, amask, OCCUPIED)
    return left, right, selfd
