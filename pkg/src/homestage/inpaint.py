"""Classical fills for masked furniture regions.

``diffusion_fill`` solves the discrete Laplace equation inside the mask
without coupling pixels across the wall-floor boundary. ``periodic_fill``
copies texture from whole-period shifts of a near-periodic floor.
A user-supplied external inpainter (e.g. a learned model) can replace both.
"""
from __future__ import annotations

import logging
import math
import os
import shlex
import subprocess
import tempfile
import warnings
from pathlib import Path
from typing import NamedTuple

import numpy as np
from scipy import ndimage, sparse
from scipy.sparse.linalg import cg

from .hdr import RadianceImage, relative_luminance
from .sphere import ViewWindow, equirect_to_perspective, pano_directions, sample_image

log = logging.getLogger(__name__)

INPAINTER_ENV = "HOMESTAGE_INPAINTER"


class InpaintError(ValueError):
    pass


def _pixels(img):
    return img.pixels if isinstance(img, RadianceImage) else np.asarray(img, dtype=np.float64)


def _rewrap(img, pixels):
    return img.with_pixels(pixels) if isinstance(img, RadianceImage) else pixels


def _mask(m, shape) -> np.ndarray:
    d = np.asarray(getattr(m, "data", m), dtype=bool)
    if d.shape != shape:
        raise ValueError(f"mask shape {d.shape} does not match image {shape}")
    return d


def _links(unknown: np.ndarray, region: np.ndarray | None):
    """4-neighbour pairs (p, q) with p unknown, restricted to equal region labels."""
    h, w = unknown.shape
    for dy, dx in ((0, 1), (0, -1), (1, 0), (-1, 0)):
        ys, xs = np.nonzero(unknown)
        ny, nx = ys + dy, xs + dx
        ok = (ny >= 0) & (ny < h) & (nx >= 0) & (nx < w)
        ys, xs, ny, nx = ys[ok], xs[ok], ny[ok], nx[ok]
        if region is not None:
            same = region[ys, xs] == region[ny, nx]
            ys, xs, ny, nx = ys[same], xs[same], ny[same], nx[same]
        yield ys, xs, ny, nx


def laplace_system(unknown: np.ndarray, region: np.ndarray | None):
    """Sparse masked Laplacian and the (Dirichlet) coupling pattern.

    Returns ``(A, index, known_links)`` where ``known_links`` lists
    ``(row, y, x)`` triples of known neighbours feeding each row.
    """
    index = -np.ones(unknown.shape, dtype=np.int64)
    n = int(np.count_nonzero(unknown))
    index[unknown] = np.arange(n)
    rows, cols, vals = [], [], []
    diag = np.zeros(n)
    known_rows, known_y, known_x = [], [], []
    for ys, xs, ny, nx in _links(unknown, region):
        p = index[ys, xs]
        q = index[ny, nx]
        np.add.at(diag, p, 1.0)
        inner = q >= 0
        rows.append(p[inner])
        cols.append(q[inner])
        vals.append(-np.ones(np.count_nonzero(inner)))
        known_rows.append(p[~inner])
        known_y.append(ny[~inner])
        known_x.append(nx[~inner])
    rows.append(np.arange(n))
    cols.append(np.arange(n))
    vals.append(diag)
    A = sparse.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(n, n))
    known = (np.concatenate(known_rows), np.concatenate(known_y), np.concatenate(known_x))
    return A, index, known


def _orphans(unknown: np.ndarray, region: np.ndarray | None) -> np.ndarray:
    """Unknown pixels whose partition cell has no known neighbour."""
    if region is None:
        labels, n = ndimage.label(unknown)
    else:
        # components never cross region labels
        labels = np.zeros(unknown.shape, dtype=np.int64)
        n = 0
        for val in (False, True):
            lab, k = ndimage.label(unknown & (region == val))
            labels[lab > 0] = lab[lab > 0] + n
            n += k
    if n == 0:
        return np.zeros_like(unknown)
    fed = np.zeros(n + 1, dtype=bool)
    _, _, (rows, _, _) = laplace_system(unknown, region)
    pos = np.argwhere(unknown)
    fed[labels[pos[rows, 0], pos[rows, 1]]] = True
    fed[0] = True
    return ~fed[labels]


def diffusion_fill(img, mask, boundary=None, tol: float = 1e-6, maxiter: int = 10_000):
    """Harmonic fill of ``mask`` with Dirichlet data from unmasked pixels.

    Parameters
    ----------
    img : RadianceImage or ndarray
        Image to fill; returned with the same type.
    mask : array_like of bool
        Pixels to replace.
    boundary : array_like of bool, optional
        Floor-region mask. Stencil links between pixels on different sides
        of the wall-floor boundary are cut, so floor pixels are filled from
        floor data only and likewise for walls. A partition cell without
        any unmasked neighbour falls back to unrestricted coupling.
    """
    px = _pixels(img)
    shape = px.shape[:2]
    m = _mask(mask, shape)
    if not m.any():
        return _rewrap(img, px.copy())
    if m.all():
        raise InpaintError("mask covers the whole image; nothing to diffuse from")
    region = None if boundary is None else _mask(boundary, shape)
    out = px.copy()
    if region is not None:
        orphan = _orphans(m, region)
        if orphan.any():
            warnings.warn("masked area has no data on its side of the floor boundary; coupling across it")
            # fill orphans first without the partition, then the rest with it
            out = _solve(out, m & ~orphan, region, tol, maxiter) if (m & ~orphan).any() else out
            out = _solve(out, orphan, None, tol, maxiter)
            return _rewrap(img, out)
    return _rewrap(img, _solve(out, m, region, tol, maxiter))


def _solve(px: np.ndarray, unknown: np.ndarray, region, tol, maxiter) -> np.ndarray:
    A, index, (rows, ky, kx) = laplace_system(unknown, region)
    n = A.shape[0]
    flat = px.reshape(px.shape[0], px.shape[1], -1)
    out = flat.copy()
    inv_diag = 1.0 / A.diagonal()
    M = sparse.diags(inv_diag)
    ys, xs = np.nonzero(unknown)
    for c in range(flat.shape[2]):
        b = np.zeros(n)
        np.add.at(b, rows, flat[ky, kx, c])
        x0 = np.full(n, flat[ky, kx, c].mean() if rows.size else 0.0)
        x, info = cg(A, b, x0=x0, rtol=tol, atol=0.0, maxiter=maxiter, M=M)
        if info > 0:
            log.warning("diffusion solve did not reach tolerance after %d iterations", maxiter)
        out[ys, xs, c] = x
    return out.reshape(px.shape)


# -- periodic fill -----------------------------------------------------

class PeriodicResult(NamedTuple):
    image: object
    period: tuple[int, int]
    confidence: tuple[float, float]
    fallback: bool


def masked_autocorrelation(gray: np.ndarray, known: np.ndarray) -> np.ndarray:
    """Normalized autocorrelation over known pixels for every lag (dy, dx).

    Index ``[dy, dx]`` holds the lag with wrap-around indexing for negative
    lags; lags without enough overlap are NaN.
    """
    h, w = gray.shape
    mean = gray[known].mean()
    f = np.where(known, gray - mean, 0.0)
    k = known.astype(np.float64)
    shape = (2 * h, 2 * w)
    F = np.fft.rfft2(f, shape)
    K = np.fft.rfft2(k, shape)
    num = np.fft.irfft2(F * np.conj(F), shape)
    cnt = np.fft.irfft2(K * np.conj(K), shape)
    var = (f ** 2).sum() / k.sum()
    with np.errstate(divide="ignore", invalid="ignore"):
        corr = num / cnt / var
    corr[cnt < max(16.0, 0.05 * k.sum())] = np.nan
    return corr


def _axis_period(profile: np.ndarray, min_conf: float):
    """Return (period, confidence); period 0 marks an invariant axis, -1 none."""
    p = profile[1:]
    good = np.isfinite(p)
    if not good.any():
        return -1, 0.0
    if np.nanmin(p) >= 0.9:
        return 0, float(np.nanmin(p))
    # first lag where the correlation has dropped below half, then the best peak beyond it
    below = np.flatnonzero(good & (p < 0.5))
    if below.size == 0:
        return -1, 0.0
    start = below[0]
    tail = np.where(good[start:], p[start:], -np.inf)
    k = int(np.argmax(tail)) + start
    conf = float(p[k])
    if conf < min_conf:
        return -1, conf
    return int(k + 1), conf


def estimate_period(gray: np.ndarray, known: np.ndarray, min_conf: float = 0.35, max_fraction: float = 0.5):
    """Dominant horizontal and vertical periods of a texture, in pixels.

    Returns ``((py, px), (conf_y, conf_x))``. A period of 0 means the
    texture is invariant along that axis; -1 means no periodicity found.
    """
    corr = masked_autocorrelation(gray, known)
    ys, xs = np.nonzero(known)
    ext_y = ys.max() - ys.min() + 1
    ext_x = xs.max() - xs.min() + 1
    prof_x = corr[0, : max(2, int(ext_x * max_fraction))]
    prof_y = corr[: max(2, int(ext_y * max_fraction)), 0]
    px, cx = _axis_period(prof_x, min_conf)
    py, cy = _axis_period(prof_y, min_conf)
    return (py, px), (cy, cx)


def _axis_steps(period: int, extent: int) -> list[int]:
    if period < 0:
        return [0]
    if period == 0:
        return list(range(-extent, extent + 1))
    n = extent // period + 1
    return [i * period for i in range(-n, n + 1)]


def periodic_fill(img, mask, region, min_conf: float = 0.35, blend: int = 4) -> PeriodicResult:
    """Fill ``mask`` inside ``region`` by tiling the region's dominant period.

    Each masked pixel averages the ``blend`` nearest whole-period shifts
    that land on known region pixels (weights ``1/|shift|``), which is exact
    on a perfectly periodic texture and softens seams on near-periodic ones.
    Pixels left without a source, or the whole mask when no period is
    detected, are filled by :func:`diffusion_fill`.
    """
    px = _pixels(img)
    shape = px.shape[:2]
    m = _mask(mask, shape)
    reg = _mask(region, shape)
    if (m & ~reg).any():
        raise InpaintError("periodic fill region must contain every masked pixel")
    if not m.any():
        return PeriodicResult(_rewrap(img, px.copy()), (0, 0), (1.0, 1.0), False)
    known = reg & ~m
    if not known.any():
        raise InpaintError("region has no unmasked texture to copy from")
    gray = relative_luminance(px) if px.ndim == 3 else px
    (py, pxp), conf = estimate_period(gray, known, min_conf)
    if py < 0 and pxp < 0:
        log.info("no periodic structure found (confidence %.2f, %.2f); using diffusion", *conf)
        return PeriodicResult(diffusion_fill(img, m, reg), (py, pxp), conf, True)

    ys, xs = np.nonzero(m)
    ext_y = int(ys.max() - ys.min() + 1)
    ext_x = int(xs.max() - xs.min() + 1)
    shifts = [(dy, dx) for dy in _axis_steps(py, ext_y) for dx in _axis_steps(pxp, ext_x) if (dy, dx) != (0, 0)]
    shifts.sort(key=lambda s: (s[0] ** 2 + s[1] ** 2, s))

    h, w = shape
    flat = px.reshape(h, w, -1)
    acc = np.zeros((ys.size, flat.shape[2]))
    wsum = np.zeros(ys.size)
    count = np.zeros(ys.size, dtype=np.int64)
    for dy, dx in shifts:
        need = count < blend
        if not need.any():
            break
        sy, sx = ys + dy, xs + dx
        ok = need & (sy >= 0) & (sy < h) & (sx >= 0) & (sx < w)
        ok[ok] = known[sy[ok], sx[ok]]
        if not ok.any():
            continue
        wt = 1.0 / math.hypot(dy, dx)
        acc[ok] += wt * flat[sy[ok], sx[ok]]
        wsum[ok] += wt
        count[ok] += 1
    out = flat.copy()
    got = count > 0
    out[ys[got], xs[got]] = acc[got] / wsum[got, None]
    out = out.reshape(px.shape)
    leftover = np.zeros(shape, dtype=bool)
    leftover[ys[~got], xs[~got]] = True
    if leftover.any():
        out = diffusion_fill(out, leftover, reg)
    return PeriodicResult(_rewrap(img, out), (py, pxp), conf, False)


# -- panorama-level driver -------------------------------------------------

def _floor_view_fill(px, floor_mask, floor, fov, size):
    # floor tiles are only periodic in a planar view, so fill them in a nadir perspective
    win = ViewWindow(fov, 0.0, -math.pi / 2 + 1e-6, size, size)
    view = equirect_to_perspective(px, win)
    # bilinear view pixels that touch a masked pano pixel carry its value, so they are unknown too
    vmask = equirect_to_perspective(floor_mask.astype(np.float64), win, order=1) > 0
    vregion = equirect_to_perspective(floor.astype(np.uint8), win, order=0).astype(bool) | vmask
    if not vmask.any() or not (vregion & ~vmask).any():
        return px, floor_mask
    filled = periodic_fill(view, vmask, vregion).image
    d = pano_directions(*px.shape[:2])
    sel = floor_mask.copy()
    x, y, inside = win.project(d[sel])
    idx = np.argwhere(sel)
    vi = np.clip(np.floor(y).astype(int), 0, size - 1)
    vj = np.clip(np.floor(x).astype(int), 0, size - 1)
    use = inside & vmask[vi, vj]
    out = px.copy()
    out[idx[use, 0], idx[use, 1]] = sample_image(filled, x[use], y[use])
    rest = floor_mask.copy()
    rest[idx[use, 0], idx[use, 1]] = False
    return out, rest


def inpaint_panorama(img, mask, floor, floor_view_fov: float = math.radians(150), view_size: int = 512,
                     periodic_floor: bool = True):
    """Remove masked regions of a panorama, floor and walls separately.

    Masked floor pixels are filled periodically in a downward-looking
    perspective view; everything else (and floor pixels outside that view)
    by boundary-respecting diffusion.
    """
    px = _pixels(img)
    m = _mask(mask, px.shape[:2])
    fl = _mask(floor, px.shape[:2])
    out = px
    rest = m.copy()
    if periodic_floor and (m & fl).any():
        out, floor_rest = _floor_view_fill(px, m & fl, fl, floor_view_fov, view_size)
        rest = (m & ~fl) | floor_rest
    if rest.any():
        out = diffusion_fill(out, rest, fl)
    return _rewrap(img, out)


def external_inpaint(command: str, img, mask, floor=None, timeout: float | None = None):
    """Run ``command <image> <mask> <output>`` and read the result back.

    Radiance images travel as .hdr files, plain arrays as .npy. On a
    nonzero exit or missing output the built-in fill is used with a warning.
    """
    from . import imageio, rgbe

    with tempfile.TemporaryDirectory() as tmp:
        tmp = Path(tmp)
        is_hdr = isinstance(img, RadianceImage)
        src = tmp / ("input.hdr" if is_hdr else "input.npy")
        dst = tmp / ("output.hdr" if is_hdr else "output.npy")
        if is_hdr:
            rgbe.write_hdr(src, img)
        else:
            np.save(src, np.asarray(img))
        imageio.write_mask(tmp / "mask.png", mask)
        args = shlex.split(command) + [str(src), str(tmp / "mask.png"), str(dst)]
        try:
            proc = subprocess.run(args, capture_output=True, timeout=timeout)
            ok = proc.returncode == 0 and dst.exists()
            detail = proc.stderr.decode(errors="replace").strip()
        except (OSError, subprocess.TimeoutExpired) as exc:
            ok, detail = False, str(exc)
        if ok:
            if is_hdr:
                result = rgbe.read_hdr(dst)
                return img.with_pixels(result.pixels)
            return np.load(dst)
    warnings.warn(f"external inpainter failed ({detail or 'no output'}); using built-in fill")
    fl = floor if floor is not None else np.zeros(np.asarray(getattr(mask, "data", mask)).shape, bool)
    return inpaint_panorama(img, mask, fl)


def inpaint(img, mask, floor, command: str | None = None):
    """Dispatch to the external inpainter when configured, else the built-in fill."""
    command = command or os.environ.get(INPAINTER_ENV)
    if command:
        return external_inpaint(command, img, mask, floor)
    return inpaint_panorama(img, mask, floor)
