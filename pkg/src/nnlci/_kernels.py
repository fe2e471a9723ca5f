"""Compiled residual kernel for the finite-volume solver.

Mirrors the vectorized NumPy path in :mod:`nnlci.euler` loop for loop; the
test suite checks the two against each other.
"""
import numpy as np
from numba import njit

WALL, INFLOW, OUTFLOW = 0, 1, 2


@njit(cache=True, inline="always")
def _minmod3(a, b, c):
    if a > 0.0 and b > 0.0 and c > 0.0:
        return min(a, min(b, c))
    if a < 0.0 and b < 0.0 and c < 0.0:
        return max(a, max(b, c))
    return 0.0


@njit(cache=True)
def _flux(uL, uR, nx, ny, gamma, out):
    rl, rr = uL[0], uR[0]
    ul, vl = uL[1] / rl, uL[2] / rl
    ur, vr = uR[1] / rr, uR[2] / rr
    pl = (gamma - 1.0) * (uL[3] - 0.5 * rl * (ul * ul + vl * vl))
    pr = (gamma - 1.0) * (uR[3] - 0.5 * rr * (ur * ur + vr * vr))
    vnl = ul * nx + vl * ny
    vnr = ur * nx + vr * ny
    s = max(abs(vnl) + np.sqrt(gamma * pl / rl), abs(vnr) + np.sqrt(gamma * pr / rr))
    out[0] = 0.5 * (rl * vnl + rr * vnr) - 0.5 * s * (rr - rl)
    out[1] = 0.5 * (uL[1] * vnl + pl * nx + uR[1] * vnr + pr * nx) - 0.5 * s * (uR[1] - uL[1])
    out[2] = 0.5 * (uL[2] * vnl + pl * ny + uR[2] * vnr + pr * ny) - 0.5 * s * (uR[2] - uL[2])
    out[3] = 0.5 * ((uL[3] + pl) * vnl + (uR[3] + pr) * vnr) - 0.5 * s * (uR[3] - uL[3])


@njit(cache=True)
def _ghost(u, kind, nx, ny, freestream, out):
    if kind == WALL:
        mn = u[1] * nx + u[2] * ny
        out[0] = u[0]
        out[1] = u[1] - 2.0 * mn * nx
        out[2] = u[2] - 2.0 * mn * ny
        out[3] = u[3]
    elif kind == INFLOW:
        for m in range(4):
            out[m] = freestream[m]
    else:
        for m in range(4):
            out[m] = u[m]


@njit(cache=True)
def residual_kernel(U, nbj, nbk, weights, ghost_cell, ghost_kind, ghost_normal,
                    off, face_left, face_right, face_kind, slot, normal, length, area,
                    freestream, gamma, R, bflux):
    """Fill ``R`` with du/dt and ``bflux`` with the net boundary outflow."""
    nc = U.shape[0]
    ng = ghost_cell.shape[0]
    ext = np.empty((nc + ng, 4))
    ext[:nc] = U
    for g in range(ng):
        _ghost(U[ghost_cell[g]], ghost_kind[g], ghost_normal[g, 0], ghost_normal[g, 1],
               freestream, ext[nc + g])

    # limiting acts on primitive variables (rho, u, v, p)
    W = np.empty((nc + ng, 4))
    for i in range(nc + ng):
        r = ext[i, 0]
        u = ext[i, 1] / r
        v = ext[i, 2] / r
        W[i, 0] = r
        W[i, 1] = u
        W[i, 2] = v
        W[i, 3] = (gamma - 1.0) * (ext[i, 3] - 0.5 * r * (u * u + v * v))

    fv = np.empty((nc, 3, 4))
    w = np.empty(4)
    cx = np.empty((3, 4))
    cy = np.empty((3, 4))
    for i in range(nc):
        for t in range(3):
            j, k = nbj[i, t], nbk[i, t]
            for m in range(4):
                dj = W[j, m] - W[i, m]
                dk = W[k, m] - W[i, m]
                cx[t, m] = weights[i, t, 0, 0] * dj + weights[i, t, 0, 1] * dk
                cy[t, m] = weights[i, t, 1, 0] * dj + weights[i, t, 1, 1] * dk
        ok = True
        for s in range(3):
            for m in range(4):
                gx = _minmod3(cx[0, m], cx[1, m], cx[2, m])
                gy = _minmod3(cy[0, m], cy[1, m], cy[2, m])
                w[m] = W[i, m] + off[i, s, 0] * gx + off[i, s, 1] * gy
            if not (w[0] > 0.0 and w[3] > 0.0):
                ok = False
            fv[i, s, 0] = w[0]
            fv[i, s, 1] = w[0] * w[1]
            fv[i, s, 2] = w[0] * w[2]
            fv[i, s, 3] = w[3] / (gamma - 1.0) + 0.5 * w[0] * (w[1] * w[1] + w[2] * w[2])
        if not ok:
            for s in range(3):
                for m in range(4):
                    fv[i, s, m] = U[i, m]

    R[:] = 0.0
    bflux[:] = 0.0
    F = np.empty(4)
    uR = np.empty(4)
    for f in range(face_left.shape[0]):
        a = face_left[f]
        nx, ny = normal[f, 0], normal[f, 1]
        uL = fv[a, slot[f, 0]]
        b = face_right[f]
        if b >= 0:
            _flux(uL, fv[b, slot[f, 1]], nx, ny, gamma, F)
            la, lb = length[f] / area[a], length[f] / area[b]
            for m in range(4):
                R[a, m] -= F[m] * la
                R[b, m] += F[m] * lb
        else:
            _ghost(uL, face_kind[f], nx, ny, freestream, uR)
            _flux(uL, uR, nx, ny, gamma, F)
            la = length[f] / area[a]
            for m in range(4):
                R[a, m] -= F[m] * la
                bflux[m] += F[m] * length[f]
