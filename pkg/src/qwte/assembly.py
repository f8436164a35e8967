"""Semi-analytic assembly of the hinge-tested quadratic form.

For the test function ``psi_z(x) = (z - x)_+`` and ``x > y`` the second
difference is ``w_z(x, y) = (y - |x - z|)_+``.  The bilinear form

    Q_z[i, j] = iint_{x > y} b_i(x) b_j(y) (x y)**-0.5 w_z(x, y) dx dy

is assembled with an outer Gauss rule in ``y`` (panels split wherever the
inner integrand changes its piecewise form) and a closed-form inner integral
in ``x``: on every grid cell the integrand is a power of ``x`` times a linear
polynomial.
"""

from __future__ import annotations

import numpy as np

from .mesh import TailClosure, _basis_exponent, power_integral

OUTER_ORDER = 8
_TAIL_OCTAVES = 64
# relative accuracy of assembled rows (checked against brute-force quadrature)
ASSEMBLY_RTOL = 1e-12


def _panel_rule(lo, hi, order):
    t, w = np.polynomial.legendre.leggauss(order)
    mid = 0.5 * (hi + lo)[:, None]
    half = 0.5 * (hi - lo)[:, None]
    return (mid + half * t[None, :]).ravel(), (half * w[None, :]).ravel()


class HingeAssembler:
    """Evaluate hinge-tested quadratic forms on a fixed grid, basis and tail.

    Parameters
    ----------
    grid : Grid
    basis : {"sqrt", "plain"}
    tail : TailClosure
    order : int
        Gauss-Legendre points per outer panel.
    """

    def __init__(self, grid, basis="sqrt", tail=None, order=OUTER_ORDER):
        self.grid = grid
        self.basis = basis
        self.tail = tail or TailClosure()
        self.order = int(order)
        self.sigma = _basis_exponent(basis)
        x = grid.nodes
        self._edges = np.concatenate([[0.0], x, [np.inf]])
        self._kappa = x[-1] ** self.sigma

    # outer rule -------------------------------------------------------------
    def _outer_points(self, z):
        """Outer nodes, weights and basis loadings ``(j1, w1, j2, w2)``."""
        x = self.grid.nodes
        n = x.size
        xN = x[-1]
        br = np.concatenate([[0.0, 0.5 * z, z], x, np.abs(z - x)])
        br = np.unique(br[(br >= 0.0) & (br <= xN)])
        lo, hi = br[:-1], br[1:]
        keep = hi - lo > 1e-13 * hi
        y, wy = _panel_rule(lo[keep], hi[keep], self.order)
        k = np.searchsorted(x, y, side="right") - 1
        head = k < 0
        kk = np.clip(k, 0, n - 2)
        h = x[kk + 1] - x[kk]
        base = wy * y ** (self.sigma - 0.5)
        j1 = np.where(head, 0, kk)
        w1 = np.where(head, base, base * (x[kk + 1] - y) / h)
        j2 = np.where(head, 0, kk + 1)
        w2 = np.where(head, 0.0, base * (y - x[kk]) / h)
        return y, j1, w1, j2, w2

    def _outer_tail_points(self):
        """Rule on ``(x_N, inf)`` weighting ``kappa tau(y) y**-0.5``."""
        tail = self.tail
        xN = self.grid.nodes[-1]
        if tail.kind == "none":
            return np.zeros(0), np.zeros(0)
        if tail.kind == "exponential":
            t, w = np.polynomial.laguerre.laggauss(40)
            y = xN + t / tail.value
            # exp(-a (y - x_N)) = exp(-t) is absorbed in the Laguerre weight
            return y, self._kappa * w / tail.value * y ** -0.5
        s_lo = np.arange(_TAIL_OCTAVES, dtype=float)
        s, ws = _panel_rule(s_lo, s_lo + 1.0, self.order)
        y = xN * 2.0 ** s
        jac = y * np.log(2.0)
        return y, self._kappa * ws * jac * tail.shape(y, xN) * y ** -0.5

    # inner closed form ---------------------------------------------------------
    def _inner(self, lo, hi, alpha, beta):
        """Closed-form ``int_lo^hi b_i(x) x**-0.5 (alpha + beta x) dx`` for all pieces.

        Returns piece owners and ``(i1, v1, i2, v2)`` loadings.
        """
        E = self._edges
        x = self.grid.nodes
        n = x.size
        clo = np.searchsorted(E, lo, side="right") - 1
        chi = np.searchsorted(E, hi, side="left") - 1
        cnt = np.maximum(chi - clo + 1, 0)
        seg = np.repeat(np.arange(lo.size), cnt)
        start = np.repeat(np.cumsum(cnt) - cnt, cnt)
        cell = clo[seg] + (np.arange(seg.size) - start)
        a = np.maximum(lo[seg], E[cell])
        b = np.minimum(hi[seg], E[cell + 1])
        al, be = alpha[seg], beta[seg]
        q = self.sigma - 0.5
        i1 = np.zeros(seg.size, dtype=np.int64)
        i2 = np.zeros(seg.size, dtype=np.int64)
        v1 = np.zeros(seg.size)
        v2 = np.zeros(seg.size)

        hd = cell == 0
        if np.any(hd):
            v1[hd] = al[hd] * power_integral(q, a[hd], b[hd]) + be[hd] * power_integral(q + 1, a[hd], b[hd])
        mid = (cell >= 1) & (cell <= n - 1)
        if np.any(mid):
            c = cell[mid]
            xl, xr = x[c - 1], x[c]
            aa, bb = a[mid], b[mid]
            J0 = power_integral(q, aa, bb)
            J1 = power_integral(q + 1, aa, bb)
            J2 = power_integral(q + 2, aa, bb)
            P0 = al[mid] * J0 + be[mid] * J1
            P1 = al[mid] * J1 + be[mid] * J2
            hh = xr - xl
            i1[mid], v1[mid] = c - 1, (xr * P0 - P1) / hh
            i2[mid], v2[mid] = c, (P1 - xl * P0) / hh
        tl = cell == n
        if np.any(tl):
            xN = x[-1]
            T0 = self.tail.integral(-0.5, a[tl], b[tl], xN)
            T1 = self.tail.integral(0.5, a[tl], b[tl], xN)
            i1[tl] = n - 1
            v1[tl] = self._kappa * (al[tl] * T0 + be[tl] * T1)
        return seg, i1, v1, i2, v2

    def _segments(self, y, z):
        """Inner x-intervals (x > y) where the weight is ``alpha + beta x``."""
        lo1 = np.maximum(y, z - y)
        hi1 = np.full_like(y, z)
        lo2 = np.maximum(y, z)
        hi2 = z + y
        lo = np.concatenate([lo1, lo2])
        hi = np.concatenate([hi1, hi2])
        alpha = np.concatenate([y - z, y + z])
        beta = np.concatenate([np.ones_like(y), -np.ones_like(y)])
        owner = np.concatenate([np.arange(y.size), np.arange(y.size)])
        ok = hi > lo
        return owner[ok], lo[ok], hi[ok], alpha[ok], beta[ok]

    # public ----------------------------------------------------------------------
    def ordered_form(self, z):
        """``(N, N)`` matrix ``Q[i, j]`` with ``b_i`` on the larger size ``x``."""
        n = len(self.grid)
        y, j1, w1, j2, w2 = self._outer_points(z)
        owner, lo, hi, al, be = self._segments(y, z)
        seg, i1, v1, i2, v2 = self._inner(lo, hi, al, be)
        p = owner[seg]
        acc = np.zeros(n * n)
        for ii, vv in ((i1, v1), (i2, v2)):
            for jj, ww in ((j1, w1), (j2, w2)):
                acc += np.bincount(ii * n + jj[p], weights=vv * ww[p], minlength=n * n)
        # outer tail: both sizes beyond x_N, inner interval [y, y + z]
        yt, wt = self._outer_tail_points()
        if yt.size:
            xN = self.grid.nodes[-1]
            T0 = self.tail.integral(-0.5, yt, yt + z, xN)
            T1 = self.tail.integral(0.5, yt, yt + z, xN)
            acc[(n - 1) * n + (n - 1)] += float(np.sum(wt * self._kappa * ((yt + z) * T0 - T1)))
        return acc.reshape(n, n)

    def symmetric_form(self, z):
        Q = self.ordered_form(z)
        return 0.5 * (Q + Q.T)

    def tensor(self, z_nodes=None):
        """Symmetric ``(P, N, N)`` tensor for the test nodes (default: grid nodes)."""
        z_nodes = self.grid.nodes if z_nodes is None else np.asarray(z_nodes, dtype=float)
        n = len(self.grid)
        out = np.empty((z_nodes.size, n, n))
        for k, z in enumerate(z_nodes):
            out[k] = self.symmetric_form(float(z))
        return out
