"""Backend selection for the hot kernels.

The compiled extension is used when it imports; otherwise, or when
``HEML_PURE_PYTHON=1`` is set, the numpy fallback takes over. ``BACKEND``
names the active one.
"""

import logging
import os
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from . import _pykernels

log = logging.getLogger(__name__)

STATUS_OK = _pykernels.STATUS_OK
STATUS_NO_POSITIVES = _pykernels.STATUS_NO_POSITIVES
STATUS_NO_NEGATIVES = _pykernels.STATUS_NO_NEGATIVES


def _load_compiled():
    if os.environ.get("HEML_PURE_PYTHON", "") not in ("", "0"):
        return None
    try:
        from . import _ckernels
    except ImportError:
        log.debug("compiled kernels unavailable, using numpy fallback")
        return None
    return _ckernels


_compiled = _load_compiled()
BACKEND = "cython" if _compiled is not None else "python"


def get_backend(name=None):
    """Kernel module by name ('cython' or 'python'); the active one by default."""
    if name is None:
        return _compiled if _compiled is not None else _pykernels
    if name == "python":
        return _pykernels
    if name == "cython":
        if _compiled is None:
            raise RuntimeError("compiled kernels are not available")
        return _compiled
    raise ValueError(f"unknown backend {name!r}")


def available_backends():
    return ["cython", "python"] if _compiled is not None else ["python"]


def worker_threads():
    raw = os.environ.get("HEML_THREADS", "1")
    try:
        return max(1, int(raw))
    except ValueError:
        raise ValueError(f"HEML_THREADS must be an integer, got {raw!r}") from None


def pairwise_euclidean(a, b, backend=None):
    a = np.ascontiguousarray(a, dtype=np.float64)
    b = np.ascontiguousarray(b, dtype=np.float64)
    if a.shape[0] == 0 or b.shape[0] == 0:
        return np.zeros((a.shape[0], b.shape[0]))
    return get_backend(backend).pairwise_euclidean(a, b)


def boundary_walk(pos, neg, backend=None):
    pos = np.ascontiguousarray(pos, dtype=np.float64)
    neg = np.ascontiguousarray(neg, dtype=np.float64)
    return get_backend(backend).boundary_walk(pos, neg)


def he_rows(dist, roles, backend=None, threads=None):
    """HE loss for every row of a (Q, K) distance matrix.

    Returns ``(loss, t_star, hard, status)``. Rows are split across
    ``threads`` workers (``HEML_THREADS`` by default); each writes only its
    own rows, so the result does not depend on the thread count.
    """
    dist = np.ascontiguousarray(dist, dtype=np.float64)
    roles = np.ascontiguousarray(roles, dtype=np.int8)
    if dist.shape != roles.shape:
        raise ValueError("dist and roles must have the same shape")
    n = dist.shape[0]
    order = np.ascontiguousarray(np.argsort(dist, axis=1, kind="stable"), dtype=np.intp)
    loss = np.zeros(n)
    t_star = np.zeros(n)
    hard = np.zeros(dist.shape, dtype=np.int8)
    status = np.zeros(n, dtype=np.int32)
    impl = get_backend(backend)
    threads = threads or worker_threads()
    if threads <= 1 or n < 2:
        impl.he_rows(dist, order, roles, loss, t_star, hard, status, 0, n)
    else:
        bounds = np.linspace(0, n, min(threads, n) + 1).astype(int)
        with ThreadPoolExecutor(max_workers=threads) as pool:
            futures = [
                pool.submit(impl.he_rows, dist, order, roles, loss, t_star, hard, status, int(lo), int(hi))
                for lo, hi in zip(bounds[:-1], bounds[1:])
            ]
            for f in futures:
                f.result()
    return loss, t_star, hard, status
