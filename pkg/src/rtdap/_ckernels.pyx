# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled twins of the pure kernels in rtdap.kernels.

The frame scanner releases the GIL while splitting frames and parsing
data-record JSON bodies, so ingest worker threads scale across cores.
The parser accepts a strict subset of JSON (flat two-level objects,
scalar fields, no escape sequences); any frame outside that subset is
handed back for the pure slow path, which is authoritative for errors.
"""

import numpy as np

from libc.stdlib cimport strtod

cdef extern from *:
    """
    #define RTDAP_MAX_PAYLOAD (1048576 + 4096)
    """
    const long RTDAP_MAX_PAYLOAD

DEF STOP_END = 0
DEF STOP_SLOW = 1
DEF STOP_BADFLAG = 2
DEF STOP_TOOLARGE = 3

cdef long long I64_MAX = 9223372036854775807
cdef long long U32_MAX = 4294967295

_scan_out_cls = None


cdef inline int _is_ws(unsigned char c) nogil:
    return c == 0x20 or c == 0x09 or c == 0x0a or c == 0x0d


cdef inline int _is_digit(unsigned char c) nogil:
    return 0x30 <= c <= 0x39


cdef Py_ssize_t _skip_ws(const unsigned char* s, Py_ssize_t n, Py_ssize_t pos) nogil:
    while pos < n and _is_ws(s[pos]):
        pos += 1
    return pos


cdef int _scan_string(const unsigned char* s, Py_ssize_t n, Py_ssize_t* pos,
                      Py_ssize_t* start, Py_ssize_t* length) nogil:
    # Plain strings only: a backslash or embedded control byte defers to
    # the slow path.
    cdef Py_ssize_t i = pos[0]
    if i >= n or s[i] != 0x22:
        return 0
    i += 1
    start[0] = i
    while i < n:
        if s[i] == 0x22:
            length[0] = i - start[0]
            pos[0] = i + 1
            return 1
        if s[i] == 0x5c or s[i] < 0x20:
            return 0
        i += 1
    return 0


cdef int _key_is(const unsigned char* s, Py_ssize_t start, Py_ssize_t length,
                 const char* lit, Py_ssize_t litlen) nogil:
    cdef Py_ssize_t i
    if length != litlen:
        return 0
    for i in range(length):
        if s[start + i] != <unsigned char> lit[i]:
            return 0
    return 1


cdef int _parse_number(const unsigned char* s, Py_ssize_t n, Py_ssize_t* pos,
                       double* out_d, long long* out_i, int* out_isint) nogil:
    cdef Py_ssize_t start = pos[0]
    cdef Py_ssize_t i = start
    cdef int neg = 0
    cdef int isfloat = 0
    cdef long long acc = 0
    cdef unsigned char c
    cdef char* endp
    if i < n and s[i] == 0x2d:  # '-'
        neg = 1
        i += 1
    if i >= n or not _is_digit(s[i]):
        return 0
    if s[i] == 0x30:
        i += 1
        if i < n and _is_digit(s[i]):
            return 0  # leading zero
    else:
        while i < n and _is_digit(s[i]):
            i += 1
    if i < n and s[i] == 0x2e:  # '.'
        isfloat = 1
        i += 1
        if i >= n or not _is_digit(s[i]):
            return 0
        while i < n and _is_digit(s[i]):
            i += 1
    if i < n and (s[i] == 0x65 or s[i] == 0x45):  # e/E
        isfloat = 1
        i += 1
        if i < n and (s[i] == 0x2b or s[i] == 0x2d):
            i += 1
        if i >= n or not _is_digit(s[i]):
            return 0
        while i < n and _is_digit(s[i]):
            i += 1
    if i >= n:
        return 0  # number flush at body end cannot be a valid object
    if isfloat:
        out_d[0] = strtod(<const char*> s + start, &endp)
        if endp != <const char*> s + i:
            return 0
        out_isint[0] = 0
        out_i[0] = 0
    else:
        for start in range(start + neg, i):
            c = s[start]
            if acc > (I64_MAX - (c - 0x30)) / 10:
                return 0  # defer huge integers
            acc = acc * 10 + (c - 0x30)
        out_i[0] = -acc if neg else acc
        out_d[0] = <double> out_i[0]
        out_isint[0] = 1
    pos[0] = i
    return 1


cdef int _skip_scalar(const unsigned char* s, Py_ssize_t n, Py_ssize_t* pos) nogil:
    cdef Py_ssize_t a = 0, b = 0
    cdef double d
    cdef long long v
    cdef int ii
    cdef Py_ssize_t i = pos[0]
    if i >= n:
        return 0
    if s[i] == 0x22:
        return _scan_string(s, n, pos, &a, &b)
    if s[i] == 0x74:  # true
        if i + 4 <= n and s[i+1] == 0x72 and s[i+2] == 0x75 and s[i+3] == 0x65:
            pos[0] = i + 4
            return 1
        return 0
    if s[i] == 0x66:  # false
        if i + 5 <= n and s[i+1] == 0x61 and s[i+2] == 0x6c and s[i+3] == 0x73 and s[i+4] == 0x65:
            pos[0] = i + 5
            return 1
        return 0
    if s[i] == 0x6e:  # null
        if i + 4 <= n and s[i+1] == 0x75 and s[i+2] == 0x6c and s[i+3] == 0x6c:
            pos[0] = i + 4
            return 1
        return 0
    return _parse_number(s, n, pos, &d, &v, &ii)


cdef int _parse_parameter(const unsigned char* s, Py_ssize_t n, Py_ssize_t* pos,
                          unsigned int* out_id, unsigned long long* out_time,
                          double* out_val, long long* out_ival, int* out_isint,
                          unsigned char* out_status) nogil:
    cdef Py_ssize_t i = pos[0]
    cdef Py_ssize_t kstart = 0, klen = 0
    cdef int seen_id = 0, seen_time = 0, seen_value = 0, seen_status = 0
    cdef double d
    cdef long long v
    cdef int isint
    if i >= n or s[i] != 0x7b:  # '{'
        return 0
    i += 1
    i = _skip_ws(s, n, i)
    if i < n and s[i] == 0x7d:
        return 0  # empty parameter: required fields missing
    while True:
        i = _skip_ws(s, n, i)
        if not _scan_string(s, n, &i, &kstart, &klen):
            return 0
        i = _skip_ws(s, n, i)
        if i >= n or s[i] != 0x3a:  # ':'
            return 0
        i += 1
        i = _skip_ws(s, n, i)
        if _key_is(s, kstart, klen, b"id", 2):
            if seen_id or not _parse_number(s, n, &i, &d, &v, &isint):
                return 0
            if not isint or v < 0 or v > U32_MAX:
                return 0
            out_id[0] = <unsigned int> v
            seen_id = 1
        elif _key_is(s, kstart, klen, b"time", 4):
            if seen_time or not _parse_number(s, n, &i, &d, &v, &isint):
                return 0
            if not isint or v <= 0:
                return 0
            out_time[0] = <unsigned long long> v
            seen_time = 1
        elif _key_is(s, kstart, klen, b"value", 5):
            if seen_value or not _parse_number(s, n, &i, &d, &v, &isint):
                return 0
            out_val[0] = d
            out_ival[0] = v
            out_isint[0] = isint
            seen_value = 1
        elif _key_is(s, kstart, klen, b"status", 6):
            if seen_status or not _parse_number(s, n, &i, &d, &v, &isint):
                return 0
            if not isint or v < 0 or v > 255:
                return 0
            out_status[0] = <unsigned char> v
            seen_status = 1
        else:
            if not _skip_scalar(s, n, &i):
                return 0
        i = _skip_ws(s, n, i)
        if i >= n:
            return 0
        if s[i] == 0x2c:  # ','
            i += 1
            continue
        if s[i] == 0x7d:  # '}'
            i += 1
            break
        return 0
    if not (seen_id and seen_time and seen_value):
        return 0
    if not seen_status:
        out_status[0] = 0
    pos[0] = i
    return 1


cdef int _parse_record(const unsigned char* s, Py_ssize_t n,
                       unsigned int* out_id, unsigned long long* out_time,
                       double* out_val, long long* out_ival, int* out_isint,
                       unsigned char* out_status) nogil:
    cdef Py_ssize_t i = 0
    cdef Py_ssize_t kstart = 0, klen = 0
    cdef int seen_type = 0, seen_param = 0
    i = _skip_ws(s, n, i)
    if i >= n or s[i] != 0x7b:
        return 0
    i += 1
    while True:
        i = _skip_ws(s, n, i)
        if not _scan_string(s, n, &i, &kstart, &klen):
            return 0
        i = _skip_ws(s, n, i)
        if i >= n or s[i] != 0x3a:
            return 0
        i += 1
        i = _skip_ws(s, n, i)
        if _key_is(s, kstart, klen, b"type", 4):
            # must be exactly "d"
            if seen_type or not _scan_string(s, n, &i, &kstart, &klen):
                return 0
            if klen != 1 or s[kstart] != 0x64:
                return 0
            seen_type = 1
        elif _key_is(s, kstart, klen, b"parameter", 9):
            if seen_param or not _parse_parameter(s, n, &i, out_id, out_time,
                                                  out_val, out_ival, out_isint,
                                                  out_status):
                return 0
            seen_param = 1
        else:
            if not _skip_scalar(s, n, &i):
                return 0
        i = _skip_ws(s, n, i)
        if i >= n:
            return 0
        if s[i] == 0x2c:
            i += 1
            continue
        if s[i] == 0x7d:
            i += 1
            break
        return 0
    if not (seen_type and seen_param):
        return 0
    i = _skip_ws(s, n, i)
    return i == n  # trailing garbage defers to the slow path


cdef Py_ssize_t _scan_run(const unsigned char* p, Py_ssize_t n, Py_ssize_t pos,
                          unsigned int* ids, unsigned long long* times,
                          double* vals, long long* ivals,
                          unsigned char* isint, unsigned char* sts,
                          Py_ssize_t* count, Py_ssize_t cap,
                          Py_ssize_t max_payload, int* reason) nogil:
    cdef Py_ssize_t length
    cdef unsigned char flag
    cdef unsigned int rid
    cdef unsigned long long rtime
    cdef double rval
    cdef long long rival
    cdef int risint
    cdef unsigned char rstatus
    while True:
        if n - pos < 5:
            reason[0] = STOP_END
            return pos
        flag = p[pos]
        if flag > 1:
            reason[0] = STOP_BADFLAG
            return pos
        length = (<Py_ssize_t> p[pos + 1] << 24) | (<Py_ssize_t> p[pos + 2] << 16) \
            | (<Py_ssize_t> p[pos + 3] << 8) | <Py_ssize_t> p[pos + 4]
        if length > max_payload:
            reason[0] = STOP_TOOLARGE
            return pos
        if n - pos - 5 < length:
            reason[0] = STOP_END
            return pos
        if flag != 0 or count[0] >= cap:
            reason[0] = STOP_SLOW
            return pos
        if not _parse_record(p + pos + 5, length, &rid, &rtime, &rval, &rival,
                             &risint, &rstatus):
            reason[0] = STOP_SLOW
            return pos
        ids[count[0]] = rid
        times[count[0]] = rtime
        vals[count[0]] = rval
        ivals[count[0]] = rival
        isint[count[0]] = <unsigned char> risint
        sts[count[0]] = rstatus
        count[0] += 1
        pos += 5 + length


def scan_frames(const unsigned char[::1] data, Py_ssize_t start=0,
                Py_ssize_t max_payload=RTDAP_MAX_PAYLOAD):
    global _scan_out_cls
    if _scan_out_cls is None:
        from rtdap.kernels import ScanOut
        _scan_out_cls = ScanOut
    cdef Py_ssize_t n = data.shape[0]
    cdef Py_ssize_t cap = (n - start) // 40 + 4
    ids_a = np.empty(cap, dtype=np.uint32)
    times_a = np.empty(cap, dtype=np.uint64)
    vals_a = np.empty(cap, dtype=np.float64)
    ivals_a = np.empty(cap, dtype=np.int64)
    isint_a = np.empty(cap, dtype=np.uint8)
    sts_a = np.empty(cap, dtype=np.uint8)
    cdef unsigned int[::1] ids = ids_a
    cdef unsigned long long[::1] times = times_a
    cdef double[::1] vals = vals_a
    cdef long long[::1] ivals = ivals_a
    cdef unsigned char[::1] isint = isint_a
    cdef unsigned char[::1] sts = sts_a
    cdef const unsigned char* p = &data[0] if n > 0 else NULL
    cdef Py_ssize_t pos = start
    cdef Py_ssize_t count = 0
    cdef Py_ssize_t length
    cdef int reason = STOP_END
    cdef int error = 0
    slow = []
    while True:
        if p != NULL:
            with nogil:
                pos = _scan_run(p, n, pos, &ids[0], &times[0], &vals[0],
                                &ivals[0], &isint[0], &sts[0], &count, cap,
                                max_payload, &reason)
        if reason == STOP_SLOW:
            length = (<Py_ssize_t> p[pos + 1] << 24) | (<Py_ssize_t> p[pos + 2] << 16) \
                | (<Py_ssize_t> p[pos + 3] << 8) | <Py_ssize_t> p[pos + 4]
            slow.append((count, p[pos], bytes(data[pos + 5 : pos + 5 + length])))
            pos += 5 + length
            continue
        if reason == STOP_BADFLAG:
            error = 1
        elif reason == STOP_TOOLARGE:
            error = 2
        break
    out = _scan_out_cls()
    out.consumed = pos - start
    out.count = count
    out.slow = slow
    out.error = error
    if count:
        out.ids = ids_a[:count]
        out.times = times_a[:count]
        out.values = vals_a[:count]
        out.ivalues = ivals_a[:count]
        out.is_int = isint_a[:count]
        out.statuses = sts_a[:count]
    return out


def parse_record_body(const unsigned char[::1] body):
    cdef Py_ssize_t n = body.shape[0]
    cdef unsigned int rid
    cdef unsigned long long rtime
    cdef double rval
    cdef long long rival
    cdef int risint
    cdef unsigned char rstatus
    cdef int ok
    if n == 0:
        return None
    with nogil:
        ok = _parse_record(&body[0], n, &rid, &rtime, &rval, &rival, &risint,
                           &rstatus)
    if not ok:
        return None
    return (rid, rtime, rval, rival, risint, rstatus)


def fold_groups(const long long[::1] group_idx, const unsigned long long[::1] times,
                const double[::1] values, Py_ssize_t ngroups):
    cdef Py_ssize_t n = times.shape[0]
    vmin_a = np.full(ngroups, np.inf)
    vmax_a = np.full(ngroups, -np.inf)
    close_a = np.zeros(ngroups)
    close_ts_a = np.zeros(ngroups, dtype=np.uint64)
    count_a = np.zeros(ngroups, dtype=np.int64)
    if n == 0 or ngroups == 0:
        return vmin_a, vmax_a, close_a, close_ts_a, count_a
    cdef double[::1] vmin = vmin_a
    cdef double[::1] vmax = vmax_a
    cdef double[::1] close = close_a
    cdef unsigned long long[::1] close_ts = close_ts_a
    cdef long long[::1] count = count_a
    cdef Py_ssize_t i
    cdef long long g
    cdef double v
    cdef unsigned long long t
    with nogil:
        for i in range(n):
            g = group_idx[i]
            v = values[i]
            t = times[i]
            if count[g] == 0:
                vmin[g] = v
                vmax[g] = v
                close[g] = v
                close_ts[g] = t
            else:
                if v < vmin[g]:
                    vmin[g] = v
                if v > vmax[g]:
                    vmax[g] = v
                if t >= close_ts[g]:
                    close[g] = v
                    close_ts[g] = t
            count[g] += 1
    return vmin_a, vmax_a, close_a, close_ts_a, count_a


def fold_one(const unsigned long long[::1] times, const double[::1] values,
             Py_ssize_t start=0, stop=None):
    cdef Py_ssize_t end = times.shape[0] if stop is None else <Py_ssize_t> stop
    if end - start <= 0:
        raise ValueError("empty fold")
    cdef double vmin, vmax, close
    cdef unsigned long long cts
    cdef Py_ssize_t i
    cdef double v
    with nogil:
        vmin = values[start]
        vmax = vmin
        close = vmin
        cts = times[start]
        for i in range(start + 1, end):
            v = values[i]
            if v < vmin:
                vmin = v
            if v > vmax:
                vmax = v
            if times[i] >= cts:
                close = v
                cts = times[i]
    return vmin, vmax, close, cts, end - start
