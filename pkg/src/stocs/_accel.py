"""Hot geometry kernels.

Each kernel has a numba ``@njit`` implementation and a vectorized numpy
implementation.  The numba path is used when numba imports cleanly and the
environment variable ``STOCS_NUMBA`` is not set to ``0``.
"""
import logging
import os

import numpy as np

logger = logging.getLogger(__name__)

try:
    import numba

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover
    numba = None
    HAVE_NUMBA = False


def numba_enabled():
    return HAVE_NUMBA and os.environ.get("STOCS_NUMBA", "1") != "0"


# ---------------------------------------------------------------------------
# signed distance of many points to a union of convex polygons
#
# Polygons are packed as:
#   verts   (V, 2)  CCW vertices of all polygons, concatenated
#   offsets (P+1,)  polygon k owns verts[offsets[k]:offsets[k+1]]
#   enorm   (V, 2)  outward unit normal of edge verts[j] -> verts[j+1]
#
# Outputs per point: distance, unit normal, curvature (1/d for an outside
# vertex feature, else 0).  d normal / d point = curvature * (I - n n^T).
# ---------------------------------------------------------------------------


def _sd_numpy(pts, verts, offsets, enorm):
    m = pts.shape[0]
    best_d = np.full(m, np.inf)
    best_n = np.zeros((m, 2))
    best_k = np.zeros(m)
    for k in range(len(offsets) - 1):
        a = verts[offsets[k]:offsets[k + 1]]
        b = np.roll(a, -1, axis=0)
        en = enorm[offsets[k]:offsets[k + 1]]
        e = b - a
        elen2 = np.einsum("ij,ij->i", e, e)
        rel = pts[:, None, :] - a[None, :, :]  # (m, E, 2)
        side = np.einsum("mej,ej->me", rel, en)  # signed distance to edge lines
        inside = np.all(side <= 0.0, axis=1)
        # inside: nearest edge line (max of negative sides), lowest index on ties
        jin = np.argmax(side, axis=1)
        d_in = side[np.arange(m), jin]
        n_in = en[jin]
        # outside: nearest point on segments
        tpar = np.clip(np.einsum("mej,ej->me", rel, e) / elen2, 0.0, 1.0)
        diff = rel - tpar[..., None] * e[None]
        dist2 = np.einsum("mej,mej->me", diff, diff)
        jout = np.argmin(dist2, axis=1)
        d_out = np.sqrt(dist2[np.arange(m), jout])
        tj = tpar[np.arange(m), jout]
        vertex = (tj <= 0.0) | (tj >= 1.0)
        dvec = diff[np.arange(m), jout]
        with np.errstate(invalid="ignore", divide="ignore"):
            n_vert = dvec / d_out[:, None]
        n_out = np.where(vertex[:, None] & (d_out[:, None] > 0), n_vert, en[jout])
        k_out = np.where(vertex & (d_out > 0), 1.0 / np.where(d_out > 0, d_out, 1.0), 0.0)
        d = np.where(inside, d_in, d_out)
        nrm = np.where(inside[:, None], n_in, n_out)
        kap = np.where(inside, 0.0, k_out)
        better = d < best_d
        best_d = np.where(better, d, best_d)
        best_n = np.where(better[:, None], nrm, best_n)
        best_k = np.where(better, kap, best_k)
    return best_d, best_n, best_k


def _sd_loop(pts, verts, offsets, enorm):
    m = pts.shape[0]
    out_d = np.empty(m)
    out_n = np.empty((m, 2))
    out_k = np.empty(m)
    for i in range(m):
        px = pts[i, 0]
        py = pts[i, 1]
        best_d = np.inf
        bnx = 0.0
        bny = 0.0
        bk = 0.0
        for k in range(offsets.shape[0] - 1):
            lo = offsets[k]
            hi = offsets[k + 1]
            ne = hi - lo
            inside = True
            smax = -np.inf
            jin = lo
            dmin2 = np.inf
            jout = lo
            tout = 0.0
            for j in range(lo, hi):
                jn = lo + (j - lo + 1) % ne
                ax = verts[j, 0]
                ay = verts[j, 1]
                ex = verts[jn, 0] - ax
                ey = verts[jn, 1] - ay
                rx = px - ax
                ry = py - ay
                s = rx * enorm[j, 0] + ry * enorm[j, 1]
                if s > 0.0:
                    inside = False
                if s > smax:
                    smax = s
                    jin = j
                t = (rx * ex + ry * ey) / (ex * ex + ey * ey)
                if t < 0.0:
                    t = 0.0
                elif t > 1.0:
                    t = 1.0
                dx = rx - t * ex
                dy = ry - t * ey
                d2 = dx * dx + dy * dy
                if d2 < dmin2:
                    dmin2 = d2
                    jout = j
                    tout = t
            if inside:
                d = smax
                nx = enorm[jin, 0]
                ny = enorm[jin, 1]
                kap = 0.0
            else:
                d = np.sqrt(dmin2)
                if (tout <= 0.0 or tout >= 1.0) and d > 0.0:
                    jn = lo + (jout - lo + 1) % ne
                    ex = verts[jn, 0] - verts[jout, 0]
                    ey = verts[jn, 1] - verts[jout, 1]
                    nx = (px - verts[jout, 0] - tout * ex) / d
                    ny = (py - verts[jout, 1] - tout * ey) / d
                    kap = 1.0 / d
                else:
                    nx = enorm[jout, 0]
                    ny = enorm[jout, 1]
                    kap = 0.0
            if d < best_d:
                best_d = d
                bnx = nx
                bny = ny
                bk = kap
        out_d[i] = best_d
        out_n[i, 0] = bnx
        out_n[i, 1] = bny
        out_k[i] = bk
    return out_d, out_n, out_k


def _gap_table_numpy(poses, local, verts, offsets, enorm):
    c = np.cos(poses[:, 2])
    s = np.sin(poses[:, 2])
    wx = poses[:, 0:1] + c[:, None] * local[None, :, 0] - s[:, None] * local[None, :, 1]
    wy = poses[:, 1:2] + s[:, None] * local[None, :, 0] + c[:, None] * local[None, :, 1]
    pts = np.stack([wx.ravel(), wy.ravel()], axis=1)
    d, _, _ = _sd_numpy(pts, verts, offsets, enorm)
    return d.reshape(poses.shape[0], local.shape[0])


def _transform_all(poses, local):
    nt = poses.shape[0]
    npt = local.shape[0]
    pts = np.empty((nt * npt, 2))
    for t in range(nt):
        c = np.cos(poses[t, 2])
        s = np.sin(poses[t, 2])
        for i in range(npt):
            pts[t * npt + i, 0] = poses[t, 0] + c * local[i, 0] - s * local[i, 1]
            pts[t * npt + i, 1] = poses[t, 1] + s * local[i, 0] + c * local[i, 1]
    return pts


if HAVE_NUMBA:
    _sd_jit = numba.njit(cache=True)(_sd_loop)
    _transform_jit = numba.njit(cache=True)(_transform_all)

    @numba.njit(cache=True)
    def _gap_table_jit(poses, local, verts, offsets, enorm):
        pts = _transform_jit(poses, local)
        d, _, _ = _sd_jit(pts, verts, offsets, enorm)
        return d.reshape(poses.shape[0], local.shape[0])

else:  # pragma: no cover
    _sd_jit = None
    _gap_table_jit = None


def signed_distance_batch(pts, verts, offsets, enorm, use_numba=None):
    """Signed distance, normal and normal curvature for an (m, 2) point array."""
    pts = np.ascontiguousarray(pts, dtype=float)
    if use_numba is None:
        use_numba = numba_enabled()
    if use_numba:
        return _sd_jit(pts, verts, offsets, enorm)
    return _sd_numpy(pts, verts, offsets, enorm)


def gap_table(poses, local, verts, offsets, enorm, use_numba=None):
    """Gaps of every object-frame point at every pose, shape (n_poses, n_points)."""
    poses = np.ascontiguousarray(poses, dtype=float).reshape(-1, 3)
    local = np.ascontiguousarray(local, dtype=float)
    if use_numba is None:
        use_numba = numba_enabled()
    if use_numba:
        return _gap_table_jit(poses, local, verts, offsets, enorm)
    return _gap_table_numpy(poses, local, verts, offsets, enorm)
