"""Image-to-voxel view transformation kernels.

Coordinate conventions
----------------------
Projected image coordinates use the pixel-edge convention of the projection's
in-view test: pixel ``(row, col)`` spans ``[col, col + 1) x [row, row + 1)`` and its
centre sits at ``(col + 0.5, row + 0.5)``.

Inside a map, node ``(row, col)`` is the interpolation sample at node coordinate
``(v, u) = (row, col)``; each node owns the unit cell centred on it, so a map with
``n`` nodes along an axis covers the extent ``[-0.5, n - 0.5]``.  Queries outside
that extent return zero. Inside it, corners beyond the last node are clamped, which
means a constant map samples to the same constant everywhere in its extent.

A feature level with stride ``s`` maps image coordinate ``u`` to node coordinate
``u / s - 0.5``, so its ``ceil(W / s)`` nodes cover every in-view ``0 <= u < W``.
Depth ``d`` maps to bin coordinate ``(d - d_min) / bin_width - 0.5``.
"""

import numpy as np

from ._validation import as_float_array, check_same_shape
from .exceptions import ShapeError
from .geometry import EPS_DEPTH, project_points

CHUNK = 1 << 16


def _axis_weights(coord, n):
    """Linear interpolation weights along one axis with extent padding.

    Returns ``(i0, i1, w0, w1, dw1, inside)``; ``dw1`` is ``d w1 / d coord``
    (``d w0 / d coord = -dw1``) and vanishes where the corner is clamped.
    """
    coord = np.asarray(coord, dtype=np.float64)
    with np.errstate(invalid="ignore"):
        inside = (coord >= -0.5) & (coord <= n - 0.5)
        c = np.clip(np.where(np.isnan(coord), 0.0, coord), 0.0, n - 1.0)
    if n == 1:
        zeros = np.zeros(coord.shape, dtype=np.int64)
        return zeros, zeros, np.ones_like(c), np.zeros_like(c), np.zeros_like(c), inside
    i0 = np.minimum(np.floor(c).astype(np.int64), n - 2)
    t = c - i0
    with np.errstate(invalid="ignore"):
        dt = ((coord > 0.0) & (coord < n - 1.0)).astype(np.float64)
    return i0, i0 + 1, 1.0 - t, t, dt, inside


def bilinear_sample(featmap, u, v, return_grad=False):
    """Sample an ``H x W x C`` map at column ``u`` and row ``v``.

    ``u`` and ``v`` may be scalars or arrays of a common shape ``S``; the result
    has shape ``S + (C,)``. With ``return_grad`` also returns ``d out / d u`` and
    ``d out / d v`` (same shape as the output).
    """
    fm = np.asarray(featmap, dtype=np.float64)
    if fm.ndim == 2:
        fm = fm[..., None]
    if fm.ndim != 3:
        raise ShapeError(f"feature map must be H x W x C, got {fm.shape}")
    h, w, _ = fm.shape
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    shape = np.broadcast_shapes(u.shape, v.shape)
    u = np.broadcast_to(u, shape).reshape(-1)
    v = np.broadcast_to(v, shape).reshape(-1)

    out = np.empty((len(u), fm.shape[2]))
    gu = np.empty_like(out) if return_grad else None
    gv = np.empty_like(out) if return_grad else None
    for s in range(0, len(u), CHUNK):
        sl = slice(s, s + CHUNK)
        x0, x1, wx0, wx1, dwx, inx = _axis_weights(u[sl], w)
        y0, y1, wy0, wy1, dwy, iny = _axis_weights(v[sl], h)
        m = (inx & iny).astype(np.float64)[:, None]
        f00, f01 = fm[y0, x0], fm[y0, x1]
        f10, f11 = fm[y1, x0], fm[y1, x1]
        wx0, wx1, wy0, wy1 = (a[:, None] for a in (wx0, wx1, wy0, wy1))
        out[sl] = m * (wy0 * (wx0 * f00 + wx1 * f01) + wy1 * (wx0 * f10 + wx1 * f11))
        if return_grad:
            gu[sl] = m * dwx[:, None] * (wy0 * (f01 - f00) + wy1 * (f11 - f10))
            gv[sl] = m * dwy[:, None] * (wx0 * (f10 - f00) + wx1 * (f11 - f01))
    out = out.reshape(shape + (fm.shape[2],))
    if not return_grad:
        return out
    return out, gu.reshape(out.shape), gv.reshape(out.shape)


def bilinear_sample_vjp(featmap_shape, u, v, grad_out):
    """Gradient of ``sum(grad_out * bilinear_sample(F, u, v))`` with respect to ``F``."""
    h, w = featmap_shape[:2]
    c = featmap_shape[2] if len(featmap_shape) == 3 else 1
    u = np.asarray(u, dtype=np.float64).reshape(-1)
    v = np.asarray(v, dtype=np.float64).reshape(-1)
    g = np.asarray(grad_out, dtype=np.float64).reshape(len(u), c)
    x0, x1, wx0, wx1, _, inx = _axis_weights(u, w)
    y0, y1, wy0, wy1, _, iny = _axis_weights(v, h)
    m = (inx & iny).astype(np.float64)
    grad = np.zeros((h * w, c))
    for yi, xi, wt in ((y0, x0, wy0 * wx0), (y0, x1, wy0 * wx1), (y1, x0, wy1 * wx0), (y1, x1, wy1 * wx1)):
        np.add.at(grad, yi * w + xi, (m * wt)[:, None] * g)
    return grad.reshape(featmap_shape)


def trilinear_sample(volume, u, v, b, return_grad=False):
    """Sample a scalar ``H x W x D`` volume at (column ``u``, row ``v``, bin ``b``).

    With ``return_grad`` also returns the partial derivatives along ``u, v, b``.
    """
    vol = np.asarray(volume, dtype=np.float64)
    if vol.ndim != 3:
        raise ShapeError(f"volume must be H x W x D, got {vol.shape}")
    h, w, nd = vol.shape
    u, v, b = (np.asarray(a, dtype=np.float64) for a in (u, v, b))
    shape = np.broadcast_shapes(u.shape, v.shape, b.shape)
    u, v, b = (np.broadcast_to(a, shape).reshape(-1) for a in (u, v, b))
    out = np.empty(len(u))
    grads = [np.empty(len(u)) for _ in range(3)] if return_grad else None
    flat = vol.reshape(-1)
    for s in range(0, len(u), CHUNK):
        sl = slice(s, s + CHUNK)
        x0, x1, wx0, wx1, dwx, inx = _axis_weights(u[sl], w)
        y0, y1, wy0, wy1, dwy, iny = _axis_weights(v[sl], h)
        k0, k1, wk0, wk1, dwk, ink = _axis_weights(b[sl], nd)
        m = (inx & iny & ink).astype(np.float64)
        base = {}
        for yi, yn in ((y0, "0"), (y1, "1")):
            for xi, xn in ((x0, "0"), (x1, "1")):
                row = (yi * w + xi) * nd
                base[yn + xn] = (flat[row + k0], flat[row + k1])
        # interpolate along depth first, then bilinear in the image plane
        along = {key: wk0 * f0 + wk1 * f1 for key, (f0, f1) in base.items()}
        top = wx0 * along["00"] + wx1 * along["01"]
        bot = wx0 * along["10"] + wx1 * along["11"]
        out[sl] = m * (wy0 * top + wy1 * bot)
        if return_grad:
            grads[0][sl] = m * dwx * (wy0 * (along["01"] - along["00"]) + wy1 * (along["11"] - along["10"]))
            grads[1][sl] = m * dwy * (bot - top)
            dk = {key: f1 - f0 for key, (f0, f1) in base.items()}
            grads[2][sl] = m * dwk * (wy0 * (wx0 * dk["00"] + wx1 * dk["01"]) + wy1 * (wx0 * dk["10"] + wx1 * dk["11"]))
    out = out.reshape(shape)
    if not return_grad:
        return out
    return (out, *(g.reshape(shape) for g in grads))


def trilinear_sample_vjp(volume_shape, u, v, b, grad_out):
    """Gradient of ``sum(grad_out * trilinear_sample(V, u, v, b))`` with respect to ``V``."""
    h, w, nd = volume_shape
    u, v, b = (np.asarray(a, dtype=np.float64).reshape(-1) for a in (u, v, b))
    g = np.asarray(grad_out, dtype=np.float64).reshape(-1)
    x0, x1, wx0, wx1, _, inx = _axis_weights(u, w)
    y0, y1, wy0, wy1, _, iny = _axis_weights(v, h)
    k0, k1, wk0, wk1, _, ink = _axis_weights(b, nd)
    m = (inx & iny & ink).astype(np.float64) * g
    grad = np.zeros(h * w * nd)
    for yi, wy in ((y0, wy0), (y1, wy1)):
        for xi, wx in ((x0, wx0), (x1, wx1)):
            for ki, wk in ((k0, wk0), (k1, wk1)):
                np.add.at(grad, (yi * w + xi) * nd + ki, m * wy * wx * wk)
    return grad.reshape(volume_shape)


# -- voxel projection -------------------------------------------------------

def level_coordinate(pixel, stride):
    """Image coordinate (pixel-edge convention) to the node coordinate of a strided level."""
    return np.asarray(pixel, dtype=np.float64) / stride - 0.5


def pixel_coordinate(node, stride):
    """Inverse of :func:`level_coordinate`: the image coordinate of a node centre."""
    return (np.asarray(node, dtype=np.float64) + 0.5) * stride


def level_shape(image_size, stride):
    """``(H_l, W_l)`` of a level covering a ``W x H`` image (ceil division)."""
    w, h = image_size
    return -(-h // stride), -(-w // stride)


def project_voxels(centers, calib):
    """Project ``X x Y x Z x 3`` centres; returns ``(u, v, d, in_view)`` grids."""
    centers = as_float_array(centers, "centers", last_dim=3)
    proj = project_points(centers.reshape(-1, 3), calib)
    shp = centers.shape[:-1]
    return proj.u.reshape(shp), proj.v.reshape(shp), proj.d.reshape(shp), proj.valid.reshape(shp)


def _check_strides(maps, strides):
    if len(maps) != len(strides):
        raise ShapeError(f"{len(maps)} maps but {len(strides)} strides")


def sample_lift(featmaps, strides, centers, calib):
    """Bilinearly sample every level at each projected voxel centre.

    Returns an ``N_lvl x X x Y x Z x C`` tensor; out-of-view voxels are zero.
    """
    _check_strides(featmaps, strides)
    u, v, _, view = project_voxels(centers, calib)
    idx = np.flatnonzero(view.reshape(-1))
    uu, vv = u.reshape(-1)[idx], v.reshape(-1)[idx]
    levels = []
    for fm, s in zip(featmaps, strides):
        fm = np.asarray(fm, dtype=np.float64)
        out = np.zeros((view.size, fm.shape[-1]))
        out[idx] = bilinear_sample(fm, level_coordinate(uu, s), level_coordinate(vv, s))
        levels.append(out.reshape(view.shape + (fm.shape[-1],)))
    return np.stack(levels)


def trilinear_sample_depth(depth_maps, strides, centers, calib, bins):
    """Sample each level's ``H_l x W_l x D`` depth distribution at the voxel centres.

    Returns ``N_lvl x X x Y x Z`` probabilities (zero out of view or out of depth range).
    """
    _check_strides(depth_maps, strides)
    u, v, d, view = project_voxels(centers, calib)
    idx = np.flatnonzero(view.reshape(-1))
    uu, vv = u.reshape(-1)[idx], v.reshape(-1)[idx]
    bb = bins.coordinate(d.reshape(-1)[idx])
    levels = []
    for dm, s in zip(depth_maps, strides):
        dm = np.asarray(dm, dtype=np.float64)
        if dm.ndim != 3 or dm.shape[2] != bins.D:
            raise ShapeError(f"depth map must be H x W x {bins.D}, got {dm.shape}")
        out = np.zeros(view.size)
        out[idx] = trilinear_sample(dm, level_coordinate(uu, s), level_coordinate(vv, s), bb)
        levels.append(out.reshape(view.shape))
    return np.stack(levels)


# -- weighting and compression ---------------------------------------------

def depth_weight(features, depth_probs):
    """``F'[l, x, y, z, c] = F[l, x, y, z, c] * Ds[l, x, y, z]``."""
    f = np.asarray(features, dtype=np.float64)
    ds = np.asarray(depth_probs, dtype=np.float64)
    check_same_shape(f[..., 0], ds, ("features", "depth"))
    return f * ds[..., None]


def occupancy_weight(features, occupancy):
    """``F''[l, x, y, z, c] = F[l, x, y, z, c] * O[x, y, z]``."""
    f = np.asarray(features, dtype=np.float64)
    occ = np.asarray(occupancy, dtype=np.float64)
    check_same_shape(f[0, ..., 0], occ, ("features", "occupancy"))
    return f * occ[None, ..., None]


def height_compress(f_depth, f_occ, weights):
    """Concatenate on channels, sum levels, fold ``Z`` into channels, apply ``weights``.

    Output is ``X x Y x C_out``; the folded channel index is ``z * 2C + c``.
    """
    a = np.asarray(f_depth, dtype=np.float64)
    b = np.asarray(f_occ, dtype=np.float64)
    check_same_shape(a, b, ("F'", "F''"))
    if a.ndim != 5:
        raise ShapeError(f"voxel features must be N_lvl x X x Y x Z x C, got {a.shape}")
    cat = np.concatenate([a, b], axis=-1).sum(axis=0)
    nx, ny, nz, c2 = cat.shape
    return weights(cat.reshape(nx, ny, nz * c2))


# -- splatting baseline -----------------------------------------------------

def splat_lift(featmaps, depth_maps, strides, calib, spec, bins):
    """Outer-product splatting: each pixel emits one point per depth bin.

    Point features are ``pixel feature * bin probability``; points are pooled into
    the voxel grid by summation. Returns ``(X x Y x Z x C grid, X x Y x Z hit mask)``.
    """
    _check_strides(featmaps, strides)
    if len(depth_maps) != len(featmaps):
        raise ShapeError("one depth map per feature level is required")
    nx, ny, nz = spec.shape
    nvox = nx * ny * nz
    c = np.asarray(featmaps[0]).shape[-1]
    acc = np.zeros((nvox, c))
    hits = np.zeros(nvox, dtype=np.int64)
    m = calib.intrinsics.matrix
    k_inv = np.linalg.inv(m[:, :3])
    offset = k_inv @ m[:, 3]
    rot = calib.radar_to_camera.rotation
    trans = calib.radar_to_camera.translation
    depths = bins.centers()
    for fm, dm, s in zip(featmaps, depth_maps, strides):
        fm = np.asarray(fm, dtype=np.float64)
        dm = np.asarray(dm, dtype=np.float64)
        if fm.shape[:2] != dm.shape[:2] or dm.shape[2] != bins.D:
            raise ShapeError(f"feature map {fm.shape} and depth map {dm.shape} disagree")
        h, w = fm.shape[:2]
        rows, cols = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
        pix = np.stack([pixel_coordinate(cols, s), pixel_coordinate(rows, s), np.ones((h, w))], -1).reshape(-1, 3)
        rays = pix @ k_inv.T
        feats = fm.reshape(-1, c)
        probs = dm.reshape(-1, bins.D)
        for k, depth in enumerate(depths):
            # camera point = d * K^-1 [u, v, 1] - K^-1 t_I; radar = R^T (cam - t)
            radar = (depth * rays - offset - trans) @ rot
            idx = np.floor((radar - spec.lower) / spec.cell).astype(np.int64)
            ok = np.all((idx >= 0) & (idx < (nx, ny, nz)), axis=1)
            if not ok.any():
                continue
            flat = (idx[ok, 0] * ny + idx[ok, 1]) * nz + idx[ok, 2]
            hits += np.bincount(flat, minlength=nvox)
            vals = feats[ok] * probs[ok, k][:, None]
            for ch in range(c):
                acc[:, ch] += np.bincount(flat, weights=vals[:, ch], minlength=nvox)
    return acc.reshape(nx, ny, nz, c), (hits > 0).reshape(nx, ny, nz)


def band_empty_fraction(mask, covered, centers, bands):
    """Fraction of ``covered`` voxels without a hit, per BEV range band ``[lo, hi)``."""
    rng = np.hypot(centers[..., 0], centers[..., 1])
    out = []
    for lo, hi in bands:
        sel = covered & (rng >= lo) & (rng < hi)
        n = int(sel.sum())
        out.append(float(np.sum(sel & ~mask)) / n if n else float("nan"))
    return out


# -- radar-derived depth supervision and frustum occupancy -------------------

def radar_depth_map(cloud, calib, image_size=None):
    """Sparse ``H x W`` depth target: each point lands in the pixel containing it; collisions averaged."""
    w, h = calib.image_size if image_size is None else image_size
    proj = project_points(cloud.positions, calib)
    keep = proj.d > EPS_DEPTH
    u = np.floor(proj.u[keep]).astype(np.int64)
    v = np.floor(proj.v[keep]).astype(np.int64)
    d = proj.d[keep]
    ok = (u >= 0) & (u < w) & (v >= 0) & (v < h)
    flat = v[ok] * w + u[ok]
    total = np.bincount(flat, weights=d[ok], minlength=h * w)
    count = np.bincount(flat, minlength=h * w)
    out = np.zeros(h * w)
    np.divide(total, count, out=out, where=count > 0)
    return out.reshape(h, w)


def one_hot_depth(depth_map, bins):
    """One-hot bin distribution per pixel and the mask of labelled pixels.

    Pixels with depth 0 (or outside the bin range) get an all-zero row.
    """
    dm = np.asarray(depth_map, dtype=np.float64)
    k = bins.index(dm)
    labelled = (dm > 0) & (k >= 0)
    out = np.zeros(dm.shape + (bins.D,))
    r, c = np.nonzero(labelled)
    out[r, c, k[r, c]] = 1.0
    return out, labelled


def crn_frustum_grid(cloud, calib, frustum_shape, stride, bins):
    """Binary ``H' x W' x D`` occupancy of radar points in the camera frustum."""
    hh, ww = frustum_shape
    grid = np.zeros((hh, ww, bins.D))
    proj = project_points(cloud.positions, calib)
    keep = proj.valid
    col = np.floor(level_coordinate(proj.u[keep], stride) + 0.5).astype(np.int64)
    row = np.floor(level_coordinate(proj.v[keep], stride) + 0.5).astype(np.int64)
    k = bins.index(proj.d[keep])
    ok = (col >= 0) & (col < ww) & (row >= 0) & (row < hh) & (k >= 0)
    grid[row[ok], col[ok], k[ok]] = 1.0
    return grid


def crn_frustum_occupancy(cloud, calib, frustum_shape, stride, centers, bins):
    """Frustum occupancy resampled to the radar-frame voxel grid (``X x Y x Z``)."""
    grid = crn_frustum_grid(cloud, calib, frustum_shape, stride, bins)
    return trilinear_sample_depth([grid], [stride], centers, calib, bins)[0]
