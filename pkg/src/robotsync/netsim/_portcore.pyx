# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled egress-port kernel; behaviour mirrors ``_portcore_py.PortCore``."""

import numpy as np
cimport numpy as cnp
from libc.stdint cimport int64_t
from libc.stdlib cimport malloc, free

cnp.import_array()

DEF NCLS = 8
DEF MAXWIN = 64
cdef int64_t INF_T = 2**62
INF = 2**62
NUM_CLASSES = 8
PREAMBLE_IPG = 20


cpdef int64_t wire_time(int64_t size, int64_t rate_bps):
    cdef int64_t bits = (size + 20) * 8 * 1000000000
    return (bits + rate_bps - 1) // rate_bps


cdef inline int64_t floormod(int64_t a, int64_t b):
    cdef int64_t r = a % b
    if r < 0:
        r += b
    return r


cdef class PortCore:
    cdef public int64_t rate_bps, capacity, now, busy_until, bg_horizon, gate_shift, busy_ns
    cdef public int64_t fg_queued, gate_violations
    cdef int64_t *sizes
    cdef int64_t *ids
    cdef int64_t *scratch_sizes
    cdef int64_t *scratch_ids
    cdef int64_t head[NCLS]
    cdef int64_t count[NCLS]
    cdef int64_t bg_pcp, bg_size, bg_ser
    cdef object _arr_obj
    cdef int64_t[::1] arr
    cdef Py_ssize_t arr_pos
    cdef bint gated
    cdef int64_t cycle
    cdef int64_t win_s[NCLS][MAXWIN]
    cdef int64_t win_e[NCLS][MAXWIN]
    cdef int nwin[NCLS]
    cdef int64_t maxwin[NCLS]
    cdef int64_t c_bg_arrived[NCLS]
    cdef int64_t c_bg_dropped[NCLS]
    cdef int64_t c_started[NCLS]
    cdef int64_t c_started_bytes[NCLS]

    def __cinit__(self, rate_bps, capacity=256):
        if rate_bps <= 0 or capacity <= 0:
            raise ValueError("rate and capacity must be positive")
        self.rate_bps = rate_bps
        self.capacity = capacity
        self.sizes = <int64_t *> malloc(NCLS * capacity * sizeof(int64_t))
        self.ids = <int64_t *> malloc(NCLS * capacity * sizeof(int64_t))
        self.scratch_sizes = <int64_t *> malloc(NCLS * capacity * sizeof(int64_t))
        self.scratch_ids = <int64_t *> malloc(NCLS * capacity * sizeof(int64_t))
        if (self.sizes == NULL or self.ids == NULL or self.scratch_sizes == NULL
                or self.scratch_ids == NULL):
            raise MemoryError()
        cdef int c
        for c in range(NCLS):
            self.head[c] = 0
            self.count[c] = 0
            self.nwin[c] = 0
            self.maxwin[c] = INF_T
            self.c_bg_arrived[c] = 0
            self.c_bg_dropped[c] = 0
            self.c_started[c] = 0
            self.c_started_bytes[c] = 0
        self.now = 0
        self.busy_until = 0
        self.bg_horizon = INF_T
        self.gate_shift = 0
        self.busy_ns = 0
        self.fg_queued = 0
        self.gate_violations = 0
        self.gated = False
        self._arr_obj = np.empty(0, dtype=np.int64)
        self.arr = self._arr_obj
        self.arr_pos = 0

    def __dealloc__(self):
        free(self.sizes)
        free(self.ids)
        free(self.scratch_sizes)
        free(self.scratch_ids)

    # -- configuration --------------------------------------------------------

    def set_background(self, pcp, size):
        self.bg_pcp = pcp
        self.bg_size = size
        self.bg_ser = wire_time(size, self.rate_bps)
        self.bg_horizon = self.now

    def feed(self, arrivals, horizon):
        arrivals = np.asarray(arrivals, dtype=np.int64)
        rest = self._arr_obj[self.arr_pos:]
        self._arr_obj = np.ascontiguousarray(np.concatenate([rest, arrivals]) if len(rest) else arrivals)
        self.arr = self._arr_obj
        self.arr_pos = 0
        self.bg_horizon = horizon

    def set_gate(self, cycle, windows):
        cdef int c, i
        self.gated = True
        self.cycle = cycle
        for c in range(NCLS):
            w = [(int(s), int(e)) for s, e in windows[c]]
            if len(w) > MAXWIN:
                raise ValueError("too many gate windows for one class")
            self.nwin[c] = len(w)
            for i in range(len(w)):
                self.win_s[c][i] = w[i][0]
                self.win_e[c][i] = w[i][1]
            if not w:
                self.maxwin[c] = 0
            elif w == [(0, cycle)]:
                self.maxwin[c] = INF_T
            else:
                lens = [e - s for s, e in w]
                if w[0][0] == 0 and w[len(w) - 1][1] == cycle and len(w) > 1:
                    lens.append(w[0][1] + cycle - w[len(w) - 1][0])
                self.maxwin[c] = max(lens)

    def set_gate_shift(self, shift):
        self.gate_shift = shift

    # -- counters (list views matching the Python kernel) ----------------------

    @property
    def bg_arrived(self):
        return [self.c_bg_arrived[c] for c in range(NCLS)]

    @property
    def bg_dropped(self):
        return [self.c_bg_dropped[c] for c in range(NCLS)]

    @property
    def started(self):
        return [self.c_started[c] for c in range(NCLS)]

    @property
    def started_bytes(self):
        return [self.c_started_bytes[c] for c in range(NCLS)]

    def queued(self, int pcp):
        return self.count[pcp]

    # -- gate arithmetic ------------------------------------------------------

    cdef bint _gate(self, int c, int64_t t, int64_t *edge):
        cdef int n = self.nwin[c]
        cdef int i
        cdef int64_t pos, base, s, e
        cdef int64_t cyc = self.cycle
        if not self.gated:
            edge[0] = INF_T
            return True
        if n == 0:
            edge[0] = INF_T
            return False
        if self.maxwin[c] == INF_T:
            edge[0] = INF_T
            return True
        pos = floormod(t + self.gate_shift, cyc)
        base = t - pos
        for i in range(n):
            s = self.win_s[c][i]
            e = self.win_e[c][i]
            if s <= pos < e:
                if e == cyc and self.win_s[c][0] == 0:
                    edge[0] = base + cyc + self.win_e[c][0]
                else:
                    edge[0] = base + e
                return True
            if pos < s:
                edge[0] = base + s
                return False
        edge[0] = base + cyc + self.win_s[c][0]
        return False

    cdef int64_t _opportunity(self, int c, int64_t t, int64_t ser):
        cdef int64_t edge
        cdef bint is_open
        if ser > self.maxwin[c]:
            return INF_T
        while True:
            is_open = self._gate(c, t, &edge)
            if edge >= INF_T and not is_open:
                return INF_T
            if is_open:
                if t + ser <= edge:
                    return t
            t = edge

    # -- queue operations -----------------------------------------------------

    cdef inline void _push_bg(self):
        cdef int c = self.bg_pcp
        cdef int64_t slot
        self.c_bg_arrived[c] += 1
        if self.count[c] >= self.capacity:
            self.c_bg_dropped[c] += 1
            return
        slot = c * self.capacity + (self.head[c] + self.count[c]) % self.capacity
        self.sizes[slot] = self.bg_size
        self.ids[slot] = -1
        self.count[c] += 1

    def enqueue(self, fg_id, size, int pcp):
        cdef int64_t slot
        if self.count[pcp] >= self.capacity:
            return False
        slot = pcp * self.capacity + (self.head[pcp] + self.count[pcp]) % self.capacity
        self.sizes[slot] = size
        self.ids[slot] = fg_id
        self.count[pcp] += 1
        self.fg_queued += 1
        return True

    cdef int _select(self, int64_t t, int64_t *ser_out, int64_t *retry_out):
        cdef int c
        cdef int64_t slot, ser, at
        cdef int64_t retry = INF_T
        for c in range(NCLS - 1, -1, -1):
            if self.count[c] == 0:
                continue
            slot = c * self.capacity + self.head[c]
            if self.ids[slot] >= 0:
                ser = wire_time(self.sizes[slot], self.rate_bps)
            else:
                ser = self.bg_ser
            if self.gated:
                at = self._opportunity(c, t, ser)
            else:
                at = t
            if at == t:
                ser_out[0] = ser
                retry_out[0] = retry
                return c
            if at < retry:
                retry = at
        retry_out[0] = retry
        return -1

    def select_next(self, now):
        cdef int64_t ser, retry
        cdef int c
        if now < self.busy_until:
            return None
        c = self._select(now, &ser, &retry)
        if c < 0:
            return None
        return self.ids[c * self.capacity + self.head[c]]

    cdef int64_t _run(self, int64_t until, bint stop_at_fg, list out):
        cdef Py_ssize_t pos = self.arr_pos
        cdef Py_ssize_t n = self.arr.shape[0]
        cdef int64_t t = self.now
        cdef int64_t free_at, ser, retry, nxt, slot, size, fg_id, edge
        cdef int64_t result = -1
        cdef int c
        cdef bint is_open
        while True:
            free_at = self.busy_until if self.busy_until > t else t
            if free_at > until:
                while pos < n and self.arr[pos] <= until:
                    self._push_bg()
                    pos += 1
                t = until
                break
            while pos < n and self.arr[pos] <= free_at:
                self._push_bg()
                pos += 1
            c = self._select(free_at, &ser, &retry)
            if c >= 0:
                slot = c * self.capacity + self.head[c]
                size = self.sizes[slot]
                fg_id = self.ids[slot]
                self.head[c] = (self.head[c] + 1) % self.capacity
                self.count[c] -= 1
                if self.gated:
                    is_open = self._gate(c, free_at, &edge)
                    if not is_open or free_at + ser > edge:
                        self.gate_violations += 1
                self.busy_until = free_at + ser
                self.busy_ns += ser
                self.c_started[c] += 1
                self.c_started_bytes[c] += size
                t = free_at
                if fg_id >= 0:
                    self.fg_queued -= 1
                    if out is not None:
                        out.append((fg_id, free_at, free_at + ser))
                    if stop_at_fg:
                        result = free_at
                        break
                continue
            nxt = self.arr[pos] if pos < n else INF_T
            if retry < nxt:
                nxt = retry
            if nxt > until:
                t = until
                break
            t = nxt
        self.arr_pos = pos
        self.now = t
        return result

    def advance(self, until):
        if until < self.now:
            raise ValueError(f"advance to {until} < now {self.now}")
        if until > self.bg_horizon:
            raise ValueError(f"background known only up to {self.bg_horizon}, asked {until}")
        out = []
        self._run(until, False, out)
        return out

    def next_fg_start(self, horizon):
        cdef int64_t h[NCLS]
        cdef int64_t k[NCLS]
        cdef int64_t a[NCLS]
        cdef int64_t d[NCLS]
        cdef int64_t s[NCLS]
        cdef int64_t sb[NCLS]
        cdef int c
        cdef int64_t r, j, slot
        if self.fg_queued == 0:
            return -1
        if horizon > self.bg_horizon:
            horizon = self.bg_horizon
        if horizon < self.now:
            return -1
        for c in range(NCLS):
            h[c] = self.head[c]
            k[c] = self.count[c]
            a[c] = self.c_bg_arrived[c]
            d[c] = self.c_bg_dropped[c]
            s[c] = self.c_started[c]
            sb[c] = self.c_started_bytes[c]
            for j in range(k[c]):
                slot = c * self.capacity + (h[c] + j) % self.capacity
                self.scratch_sizes[slot] = self.sizes[slot]
                self.scratch_ids[slot] = self.ids[slot]
        saved = (self.now, self.busy_until, self.arr_pos, self.fg_queued, self.busy_ns,
                 self.gate_violations)
        r = self._run(horizon, True, None)
        for c in range(NCLS):
            self.head[c] = h[c]
            self.count[c] = k[c]
            self.c_bg_arrived[c] = a[c]
            self.c_bg_dropped[c] = d[c]
            self.c_started[c] = s[c]
            self.c_started_bytes[c] = sb[c]
            for j in range(k[c]):
                slot = c * self.capacity + (h[c] + j) % self.capacity
                self.sizes[slot] = self.scratch_sizes[slot]
                self.ids[slot] = self.scratch_ids[slot]
        (self.now, self.busy_until, self.arr_pos, self.fg_queued, self.busy_ns,
         self.gate_violations) = saved
        return r
