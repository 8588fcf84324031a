"""Per-tile compositing kernels.

Every kernel walks a tile's depth-sorted instance list and composites front
to back. The numba versions loop per pixel; the numpy versions evaluate a
whole tile as an (instances x pixels) matrix. Both share the weight model:

    alpha = opacity * exp(-q / 2) * taper(q),   q = d^T conic d

where ``taper`` is 1 for q <= 8 and fades to 0 at q = 9 (the 3-sigma ellipse)
with a C2 quintic, so footprints are compact and weights stay smooth.
"""
import numpy as np

from .._accel import njit, prange

TILE = 16
T_MIN = 1e-4
Q_FADE = 8.0
Q_CUT = 9.0


# --------------------------------------------------------------------------
# weight model


@njit
def _weight_nb(q, o):
    if q >= Q_CUT:
        return 0.0, 0.0
    g = np.exp(-0.5 * q)
    if q <= Q_FADE:
        return o * g, -0.5 * o * g
    t = q - Q_FADE
    s = 1.0 - t * t * t * (10.0 - 15.0 * t + 6.0 * t * t)
    ds = -30.0 * t * t * (1.0 - t) * (1.0 - t)
    return o * g * s, o * g * (ds - 0.5 * s)


def _weight_np(q, o):
    """Return (alpha, d alpha / d q) for arrays ``q`` and broadcastable ``o``."""
    g = np.exp(-0.5 * np.minimum(q, Q_CUT))
    t = np.clip(q - Q_FADE, 0.0, 1.0)
    s = 1.0 - t**3 * (10.0 - 15.0 * t + 6.0 * t * t)
    ds = np.where(q > Q_FADE, -30.0 * t * t * (1.0 - t) ** 2, 0.0)
    keep = q < Q_CUT
    alpha = np.where(keep, o * g * s, 0.0)
    dalpha = np.where(keep, o * g * (ds - 0.5 * s), 0.0)
    return alpha, dalpha


# --------------------------------------------------------------------------
# numba kernels


@njit(parallel=True)
def forward_nb(means2d, conics, opac, rgb, inst_gauss, tile_start, tile_end, tiles_x, width, height, bg):
    image = np.zeros((height, width, 3))
    trans = np.ones((height, width))
    n_tiles = tile_start.shape[0]
    for tile in prange(n_tiles):
        ty = tile // tiles_x
        tx = tile - ty * tiles_x
        s0 = tile_start[tile]
        s1 = tile_end[tile]
        for py in range(ty * TILE, min((ty + 1) * TILE, height)):
            for px in range(tx * TILE, min((tx + 1) * TILE, width)):
                t = 1.0
                c0 = 0.0
                c1 = 0.0
                c2 = 0.0
                for j in range(s0, s1):
                    g = inst_gauss[j]
                    dx = px - means2d[g, 0]
                    dy = py - means2d[g, 1]
                    q = conics[g, 0] * dx * dx + 2.0 * conics[g, 1] * dx * dy + conics[g, 2] * dy * dy
                    alpha, _ = _weight_nb(q, opac[g])
                    if alpha <= 0.0:
                        continue
                    w = alpha * t
                    c0 += rgb[g, 0] * w
                    c1 += rgb[g, 1] * w
                    c2 += rgb[g, 2] * w
                    t *= 1.0 - alpha
                    if t < T_MIN:
                        break
                image[py, px, 0] = c0 + t * bg[0]
                image[py, px, 1] = c1 + t * bg[1]
                image[py, px, 2] = c2 + t * bg[2]
                trans[py, px] = t
    return image, trans


@njit(parallel=True)
def backward_nb(means2d, conics, opac, rgb, inst_gauss, tile_start, tile_end, tiles_x, width, height, bg,
                grad_image):
    """Per-instance gradients: columns (mx, my, conic a, b, c, opacity, r, g, b)."""
    inst_grad = np.zeros((inst_gauss.shape[0], 9))
    n_tiles = tile_start.shape[0]
    for tile in prange(n_tiles):
        ty = tile // tiles_x
        tx = tile - ty * tiles_x
        s0 = tile_start[tile]
        s1 = tile_end[tile]
        n = s1 - s0
        alphas = np.zeros(n)
        dalphas = np.zeros(n)
        tbefore = np.zeros(n)
        dxs = np.zeros(n)
        dys = np.zeros(n)
        for py in range(ty * TILE, min((ty + 1) * TILE, height)):
            for px in range(tx * TILE, min((tx + 1) * TILE, width)):
                # replay the forward pass, recording the contributing prefix
                t = 1.0
                last = 0
                for jj in range(n):
                    g = inst_gauss[s0 + jj]
                    dx = px - means2d[g, 0]
                    dy = py - means2d[g, 1]
                    q = conics[g, 0] * dx * dx + 2.0 * conics[g, 1] * dx * dy + conics[g, 2] * dy * dy
                    alpha, dalpha = _weight_nb(q, opac[g])
                    alphas[jj] = alpha
                    dalphas[jj] = dalpha
                    tbefore[jj] = t
                    dxs[jj] = dx
                    dys[jj] = dy
                    last = jj + 1
                    if alpha <= 0.0:
                        continue
                    t *= 1.0 - alpha
                    if t < T_MIN:
                        break
                gr0 = grad_image[py, px, 0]
                gr1 = grad_image[py, px, 1]
                gr2 = grad_image[py, px, 2]
                a0 = t * bg[0]
                a1 = t * bg[1]
                a2 = t * bg[2]
                for jj in range(last - 1, -1, -1):
                    alpha = alphas[jj]
                    if alpha <= 0.0:
                        continue
                    g = inst_gauss[s0 + jj]
                    tb = tbefore[jj]
                    w = alpha * tb
                    row = s0 + jj
                    inst_grad[row, 6] += gr0 * w
                    inst_grad[row, 7] += gr1 * w
                    inst_grad[row, 8] += gr2 * w
                    inv = 1.0 / (1.0 - alpha)
                    g_alpha = (gr0 * (rgb[g, 0] * tb - a0 * inv)
                               + gr1 * (rgb[g, 1] * tb - a1 * inv)
                               + gr2 * (rgb[g, 2] * tb - a2 * inv))
                    a0 += rgb[g, 0] * w
                    a1 += rgb[g, 1] * w
                    a2 += rgb[g, 2] * w
                    o = opac[g]
                    inst_grad[row, 5] += g_alpha * alpha / o
                    g_q = g_alpha * dalphas[jj]
                    dx = dxs[jj]
                    dy = dys[jj]
                    inst_grad[row, 0] += -2.0 * g_q * (conics[g, 0] * dx + conics[g, 1] * dy)
                    inst_grad[row, 1] += -2.0 * g_q * (conics[g, 1] * dx + conics[g, 2] * dy)
                    inst_grad[row, 2] += g_q * dx * dx
                    inst_grad[row, 3] += 2.0 * g_q * dx * dy
                    inst_grad[row, 4] += g_q * dy * dy
    return inst_grad


# --------------------------------------------------------------------------
# numpy kernels


def _tile_pixels(tile, tiles_x, width, height):
    ty, tx = divmod(tile, tiles_x)
    ys = np.arange(ty * TILE, min((ty + 1) * TILE, height))
    xs = np.arange(tx * TILE, min((tx + 1) * TILE, width))
    py, px = np.meshgrid(ys, xs, indexing="ij")
    return py.ravel(), px.ravel()


def _tile_alphas(means2d, conics, opac, gs, py, px):
    dx = px[None, :] - means2d[gs, 0][:, None]
    dy = py[None, :] - means2d[gs, 1][:, None]
    q = conics[gs, 0][:, None] * dx * dx + 2.0 * conics[gs, 1][:, None] * dx * dy + conics[gs, 2][:, None] * dy * dy
    alpha, dalpha = _weight_np(q, opac[gs][:, None])
    one_minus = 1.0 - alpha
    tafter = np.cumprod(one_minus, axis=0)
    tbefore = np.vstack([np.ones((1, alpha.shape[1])), tafter[:-1]])
    included = tbefore >= T_MIN
    t_final = np.where(included, tafter, np.inf).min(axis=0) if alpha.shape[0] else np.ones(alpha.shape[1])
    # t_final is the transmittance after the last included instance
    return dx, dy, alpha, dalpha, tbefore, included, t_final


def forward_np(means2d, conics, opac, rgb, inst_gauss, tile_start, tile_end, tiles_x, width, height, bg):
    image = np.zeros((height, width, 3))
    trans = np.ones((height, width))
    for tile in range(tile_start.shape[0]):
        py, px = _tile_pixels(tile, tiles_x, width, height)
        gs = inst_gauss[tile_start[tile]:tile_end[tile]]
        if gs.size == 0:
            image[py, px] = bg
            continue
        _, _, alpha, _, tbefore, included, t_final = _tile_alphas(means2d, conics, opac, gs, py, px)
        w = np.where(included, alpha * tbefore, 0.0)
        color = w.T @ rgb[gs]
        image[py, px] = color + t_final[:, None] * bg[None, :]
        trans[py, px] = t_final
    return image, trans


def backward_np(means2d, conics, opac, rgb, inst_gauss, tile_start, tile_end, tiles_x, width, height, bg,
                grad_image):
    inst_grad = np.zeros((inst_gauss.shape[0], 9))
    for tile in range(tile_start.shape[0]):
        s0, s1 = tile_start[tile], tile_end[tile]
        if s1 == s0:
            continue
        py, px = _tile_pixels(tile, tiles_x, width, height)
        gs = inst_gauss[s0:s1]
        dx, dy, alpha, dalpha, tbefore, included, t_final = _tile_alphas(means2d, conics, opac, gs, py, px)
        gimg = grad_image[py, px]                                   # (P, 3)
        w = np.where(included, alpha * tbefore, 0.0)                # (n, P)
        contrib = w[:, :, None] * rgb[gs][:, None, :]               # (n, P, 3)
        # accumulated color behind each instance, background included
        behind = np.cumsum(contrib[::-1], axis=0)[::-1] - contrib
        behind = behind + (t_final[:, None] * bg[None, :])[None]
        g_alpha = np.sum(gimg[None] * (rgb[gs][:, None, :] * tbefore[..., None] - behind / (1.0 - alpha)[..., None]), axis=2)
        g_alpha = np.where(included, g_alpha, 0.0)
        g_q = g_alpha * dalpha
        a, b, c = conics[gs, 0][:, None], conics[gs, 1][:, None], conics[gs, 2][:, None]
        rows = np.empty((s1 - s0, 9))
        rows[:, 0] = np.sum(-2.0 * g_q * (a * dx + b * dy), axis=1)
        rows[:, 1] = np.sum(-2.0 * g_q * (b * dx + c * dy), axis=1)
        rows[:, 2] = np.sum(g_q * dx * dx, axis=1)
        rows[:, 3] = np.sum(2.0 * g_q * dx * dy, axis=1)
        rows[:, 4] = np.sum(g_q * dy * dy, axis=1)
        rows[:, 5] = np.sum(g_alpha * alpha, axis=1) / opac[gs]
        rows[:, 6:9] = w @ gimg
        inst_grad[s0:s1] = rows
    return inst_grad
