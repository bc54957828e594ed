"""Hot inner loops, each with a numba path and a pure-numpy path.

The numba path is used when numba imports cleanly and the environment
variable ``LBTEST_NUMBA`` is not set to ``0``.  Both paths are always
importable (``NUMPY_IMPL`` / ``NUMBA_IMPL``) so tests and the benchmark
can compare them directly.

Status codes shared with :mod:`lbtest.sprt`: 0 undecided, 1 selected,
2 discarded.
"""
import os

import numpy as np

UNDECIDED, SELECTED, DISCARDED = 0, 1, 2

try:
    import numba
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None


def _numba_requested():
    return os.environ.get("LBTEST_NUMBA", "1").strip().lower() not in ("0", "false", "off", "no")


# ---------------------------------------------------------------------------
# loop implementations (compiled with njit when available)


def _sprt_step_loop(n, z, status, iters, differs, llr_diff, llr_same, log_upper, log_lower, it):
    for i in range(n.shape[0]):
        if status[i] != UNDECIDED:
            continue
        n[i] += 1
        if differs[i]:
            z[i] += 1
        llr = z[i] * llr_diff + (n[i] - z[i]) * llr_same
        if llr >= log_upper:
            status[i] = SELECTED
            iters[i] = it
        elif llr <= log_lower:
            status[i] = DISCARDED
            iters[i] = it


def _sprt_simulate_loop(uniforms, p, llr_diff, llr_same, log_upper, log_lower):
    streams, horizon = uniforms.shape
    status = np.zeros(streams, dtype=np.int8)
    stop = np.zeros(streams, dtype=np.int64)
    for s in range(streams):
        llr = 0.0
        for t in range(horizon):
            if uniforms[s, t] < p:
                llr += llr_diff
            else:
                llr += llr_same
            if llr >= log_upper:
                status[s] = SELECTED
                stop[s] = t + 1
                break
            if llr <= log_lower:
                status[s] = DISCARDED
                stop[s] = t + 1
                break
    return status, stop


def _distinct_prefix_loop(codes, num_codes):
    seen = np.zeros(num_codes, dtype=np.bool_)
    out = np.empty(codes.shape[0], dtype=np.int64)
    count = 0
    for i in range(codes.shape[0]):
        c = codes[i]
        if c >= 0 and not seen[c]:
            seen[c] = True
            count += 1
        out[i] = count
    return out


def _nearest_loop(queries, refs):
    nq, d = queries.shape
    nr = refs.shape[0]
    best = np.empty(nq)
    arg = np.empty(nq, dtype=np.int64)
    for i in range(nq):
        b = np.inf
        bj = -1
        for j in range(nr):
            acc = 0.0
            for k in range(d):
                diff = queries[i, k] - refs[j, k]
                acc += diff * diff
            if acc < b:
                b = acc
                bj = j
        best[i] = b
        arg[i] = bj
    return best, arg


def _gauss_lse_loop(queries, refs, bandwidth):
    nq, d = queries.shape
    nr = refs.shape[0]
    out = np.empty(nq)
    scale = 1.0 / (2.0 * bandwidth * bandwidth)
    tmp = np.empty(nr)
    for i in range(nq):
        m = -np.inf
        for j in range(nr):
            acc = 0.0
            for k in range(d):
                diff = queries[i, k] - refs[j, k]
                acc += diff * diff
            v = -acc * scale
            tmp[j] = v
            if v > m:
                m = v
        s = 0.0
        for j in range(nr):
            s += np.exp(tmp[j] - m)
        out[i] = m + np.log(s)
    return out


# ---------------------------------------------------------------------------
# vectorized numpy implementations


def _sprt_step_np(n, z, status, iters, differs, llr_diff, llr_same, log_upper, log_lower, it):
    live = status == UNDECIDED
    n[live] += 1
    z[live & differs] += 1
    llr = z[live] * llr_diff + (n[live] - z[live]) * llr_same
    idx = np.flatnonzero(live)
    up = llr >= log_upper
    down = ~up & (llr <= log_lower)
    status[idx[up]] = SELECTED
    status[idx[down]] = DISCARDED
    iters[idx[up | down]] = it


def _sprt_simulate_np(uniforms, p, llr_diff, llr_same, log_upper, log_lower):
    steps = np.where(uniforms < p, llr_diff, llr_same)
    path = np.cumsum(steps, axis=1)
    hit_up = path >= log_upper
    hit_down = path <= log_lower
    hit = hit_up | hit_down
    any_hit = hit.any(axis=1)
    first = np.argmax(hit, axis=1)
    rows = np.arange(uniforms.shape[0])
    status = np.zeros(uniforms.shape[0], dtype=np.int8)
    status[any_hit & hit_up[rows, first]] = SELECTED
    status[any_hit & ~hit_up[rows, first]] = DISCARDED
    stop = np.where(any_hit, first + 1, 0).astype(np.int64)
    return status, stop


def _distinct_prefix_np(codes, num_codes):
    codes = np.asarray(codes)
    valid = codes >= 0
    first_seen = np.zeros(codes.shape[0], dtype=np.int64)
    if valid.any():
        _, first_idx = np.unique(codes[valid], return_index=True)
        positions = np.flatnonzero(valid)[first_idx]
        first_seen[positions] = 1
    return np.cumsum(first_seen)


def _chunks(nq, nr, d, budget=1 << 22):
    step = max(1, budget // max(1, nr * d))
    return range(0, nq, step), step


def _sq_dists_block(q, refs):
    diff = q[:, None, :] - refs[None, :, :]
    return np.einsum("ijk,ijk->ij", diff, diff)


def _nearest_np(queries, refs):
    nq = queries.shape[0]
    best = np.empty(nq)
    arg = np.empty(nq, dtype=np.int64)
    starts, step = _chunks(nq, refs.shape[0], queries.shape[1])
    for s in starts:
        d2 = _sq_dists_block(queries[s:s + step], refs)
        a = np.argmin(d2, axis=1)
        arg[s:s + step] = a
        best[s:s + step] = d2[np.arange(a.shape[0]), a]
    return best, arg


def _gauss_lse_np(queries, refs, bandwidth):
    nq = queries.shape[0]
    out = np.empty(nq)
    starts, step = _chunks(nq, refs.shape[0], queries.shape[1])
    for s in starts:
        v = -_sq_dists_block(queries[s:s + step], refs) / (2.0 * bandwidth * bandwidth)
        m = v.max(axis=1)
        out[s:s + step] = m + np.log(np.exp(v - m[:, None]).sum(axis=1))
    return out


NUMPY_IMPL = {
    "sprt_step": _sprt_step_np,
    "sprt_simulate": _sprt_simulate_np,
    "distinct_prefix": _distinct_prefix_np,
    "nearest": _nearest_np,
    "gauss_lse": _gauss_lse_np,
}

_LOOPS = {
    "sprt_step": _sprt_step_loop,
    "sprt_simulate": _sprt_simulate_loop,
    "distinct_prefix": _distinct_prefix_loop,
    "nearest": _nearest_loop,
    "gauss_lse": _gauss_lse_loop,
}

if numba is not None:
    NUMBA_IMPL = {name: numba.njit(cache=True, nogil=True)(fn) for name, fn in _LOOPS.items()}
else:  # pragma: no cover
    NUMBA_IMPL = {}


def backend():
    """Name of the active kernel backend: ``"numba"`` or ``"numpy"``."""
    return "numba" if NUMBA_IMPL and _numba_requested() else "numpy"


def _impl(name):
    return (NUMBA_IMPL if backend() == "numba" else NUMPY_IMPL)[name]


# ---------------------------------------------------------------------------
# public dispatchers


def sprt_step(n, z, status, iters, differs, llr_diff, llr_same, log_upper, log_lower, it):
    """Advance every undecided SPRT accumulator by one trial, in place."""
    _impl("sprt_step")(n, z, status, iters, np.ascontiguousarray(differs, dtype=np.bool_),
                       float(llr_diff), float(llr_same), float(log_upper), float(log_lower), int(it))


def sprt_simulate(uniforms, p, llr_diff, llr_same, log_upper, log_lower):
    """Run Bernoulli(p) streams (driven by pre-drawn uniforms) through the SPRT.

    Returns ``(status, stop)``; streams still undecided at the horizon have
    status 0 and stop 0.
    """
    return _impl("sprt_simulate")(np.ascontiguousarray(uniforms, dtype=np.float64), float(p),
                                  float(llr_diff), float(llr_same), float(log_upper), float(log_lower))


def distinct_prefix(codes, num_codes):
    """Number of distinct non-negative codes in each prefix of ``codes``."""
    codes = np.ascontiguousarray(codes, dtype=np.int64)
    return _impl("distinct_prefix")(codes, int(max(num_codes, 1)))


def nearest(queries, refs):
    """Squared distance to, and index of, the nearest row of ``refs`` per query."""
    return _impl("nearest")(np.ascontiguousarray(queries, dtype=np.float64),
                            np.ascontiguousarray(refs, dtype=np.float64))


def gauss_lse(queries, refs, bandwidth):
    """``log sum_j exp(-|q - r_j|^2 / (2 h^2))`` for every query row."""
    return _impl("gauss_lse")(np.ascontiguousarray(queries, dtype=np.float64),
                              np.ascontiguousarray(refs, dtype=np.float64), float(bandwidth))
