"""Resolvent, regularization field, state transform, and Galerkin truncations.

The regularization field u solves the discounted fixed-point equation

    u_s = int_s^T e^{-lam (t-s)} P^0_{s,t} { grad^(2)_{b_t} u_t + b_t } dt

on [0, T], where grad^(2) differentiates along the noisy coordinates.  For
lam large the right-hand side is a contraction with factor <= 1/2 and the
field obeys ||u||_inf + sup||grad^(2) u|| = O(1/sqrt(lam)).

The solver represents u on a tensor grid with multilinear interpolation
(total dimension <= 3) and realizes one Picard application by an exact
backward Markov composition: with s' = s + h,

    int_s^T e^{-lam(t-s)} P^0_{s,t} g_t dt
        = int_s^{s'} e^{-lam(t-s)} P^0_{s,t} g_t dt
          + e^{-lam h} P^0_{s,s'} [ int_{s'}^T e^{-lam(t-s')} P^0_{s',t} g_t dt ],

so each time node costs one single-step expectation of the previous node's
value plus a one-panel discounted integral.  Panel integrals use a
Gauss-Legendre rule in the variable xi = e^{-lam(t-s)}, which integrates
constants exactly and concentrates nodes where the discount has mass; the
expectations are Gauss-Hermite rules under the exact step laws.

The state transform is Theta_s(x, y) = (x, y + u_s(x, y)); it is invertible
whenever sup ||grad^(2) u|| < 1, with the inverse computed by fixed-point
iteration in y.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.interpolate import RegularGridInterpolator

from .errors import (BoundaryExtrapolationWarning, CapabilityError, IterationError,
                     LambdaTooSmallError, NotInvertibleError)
from .linear_flow import _expm, _gauss_hermite_nodes, _van_loan, psd_sqrt, transition_law
from .model import DriftSpec, Modulus, SpectralModel
from .streams import substream

__all__ = [
    "GridSpec",
    "FieldGrid",
    "PicardReport",
    "ResolventValue",
    "GalerkinReport",
    "resolvent_apply",
    "picard_solve",
    "find_contraction_lambda",
    "field_grad2",
    "field_grad_full",
    "theta_forward",
    "theta_inverse",
    "galerkin_compare",
    "holder_envelope_ratio",
]


# ---------------------------------------------------------------------------
# Grids and fields


@dataclass(frozen=True)
class GridSpec:
    """Tensor grid on a box [lo, hi]^dim with n_time time nodes on [0, T]."""

    lo: tuple
    hi: tuple
    shape: tuple
    t_final: float
    n_time: int

    def __post_init__(self):
        if len(self.lo) != len(self.hi) or len(self.lo) != len(self.shape):
            raise ValueError("lo, hi, shape must have equal length")
        if any(n < 2 for n in self.shape):
            raise ValueError("need at least 2 points per axis")
        if self.n_time < 2:
            raise ValueError("need at least 2 time nodes")
        if self.t_final <= 0:
            raise ValueError("t_final must be positive")

    @property
    def dim(self) -> int:
        return len(self.shape)

    def axes(self):
        return tuple(np.linspace(l, h, n)
                     for l, h, n in zip(self.lo, self.hi, self.shape))

    def times(self) -> np.ndarray:
        return np.linspace(0.0, self.t_final, self.n_time)

    def mesh(self) -> np.ndarray:
        """All grid points, shape (prod(shape), dim), C-order."""
        grids = np.meshgrid(*self.axes(), indexing="ij")
        return np.stack([g.ravel() for g in grids], axis=-1)

    @classmethod
    def cube(cls, dim: int, half_width: float = 4.0, points: int = 65,
             t_final: float = 1.0, n_time: int = 33) -> "GridSpec":
        return cls(lo=(-half_width,) * dim, hi=(half_width,) * dim,
                   shape=(points,) * dim, t_final=t_final, n_time=n_time)


def _grid_jacobian_y(values: np.ndarray, axes, m: int, d: int) -> np.ndarray:
    """Per-node y-Jacobian J[..., a, j] = d values_a / d y_j by differences."""
    cols = []
    for j in range(d):
        cols.append(np.gradient(values, axes[m + j], axis=m + j))
    return np.stack(cols, axis=-1)


class FieldGrid:
    """Time-indexed vector field on a box, with multilinear interpolation.

    values has shape (n_time, *shape, d); queries are clamped to the box
    (constant extension), matching the use of cutoff drifts outside it.
    """

    def __init__(self, times: np.ndarray, axes, values: np.ndarray, m: int, d: int,
                 bound: Optional[float] = None):
        self.times = np.asarray(times, dtype=float)
        self.axes = tuple(np.asarray(a, dtype=float) for a in axes)
        self.values = np.asarray(values, dtype=float)
        self.m = m
        self.d = d
        self.bound = bound
        if not np.all(np.isfinite(self.values)):
            raise ValueError("field values must be finite")
        self._interps = {}

    @property
    def dim(self) -> int:
        return len(self.axes)

    @property
    def lo(self) -> np.ndarray:
        return np.array([a[0] for a in self.axes])

    @property
    def hi(self) -> np.ndarray:
        return np.array([a[-1] for a in self.axes])

    def spacing(self) -> np.ndarray:
        return np.array([a[1] - a[0] for a in self.axes])

    def _node_interp(self, i: int) -> RegularGridInterpolator:
        if i not in self._interps:
            self._interps[i] = RegularGridInterpolator(
                self.axes, self.values[i], method="linear",
                bounds_error=False, fill_value=None)
        return self._interps[i]

    def clamp(self, pts: np.ndarray) -> np.ndarray:
        return np.clip(pts, self.lo, self.hi)

    def _bracket(self, s: float):
        ts = self.times
        s = min(max(float(s), ts[0]), ts[-1])
        i = int(np.searchsorted(ts, s, side="right") - 1)
        i = min(max(i, 0), ts.size - 2)
        w = (s - ts[i]) / (ts[i + 1] - ts[i])
        return i, w

    def interp(self, s: float, pts) -> np.ndarray:
        """Field value at time s and points pts (..., dim); linear in time,
        multilinear in space, clamped to the box."""
        pts = self.clamp(np.atleast_2d(np.asarray(pts, dtype=float)))
        i, w = self._bracket(s)
        v0 = self._node_interp(i)(pts)
        if w == 0.0:
            return v0
        v1 = self._node_interp(i + 1)(pts)
        return (1.0 - w) * v0 + w * v1

    def interp_many(self, times_q, pts) -> np.ndarray:
        """Vectorized interp at per-query times: (n,), (n, dim) -> (n, d)."""
        times_q = np.asarray(times_q, dtype=float).reshape(-1)
        pts = self.clamp(np.atleast_2d(np.asarray(pts, dtype=float)))
        ts = self.times
        sq = np.clip(times_q, ts[0], ts[-1])
        idx = np.clip(np.searchsorted(ts, sq, side="right") - 1, 0, ts.size - 2)
        w = (sq - ts[idx]) / (ts[idx + 1] - ts[idx])
        out = np.empty((times_q.size, self.d))
        for i in np.unique(idx):
            mask = idx == i
            v0 = self._node_interp(int(i))(pts[mask])
            v1 = self._node_interp(int(i) + 1)(pts[mask])
            out[mask] = (1.0 - w[mask, None]) * v0 + w[mask, None] * v1
        return out

    def jacobian_y_many(self, times_q, pts) -> np.ndarray:
        """Vectorized y-Jacobians at grid resolution: (n, d, d).

        Stencils clipped at the box collapse to one-sided silently (batch
        mode); use field_grad2 for the warning-carrying pointwise variant.
        """
        pts = self.clamp(np.atleast_2d(np.asarray(pts, dtype=float)))
        n = pts.shape[0]
        h = self.spacing()
        J = np.empty((n, self.d, self.d))
        for j in range(self.d):
            ax = self.m + j
            zp = pts.copy()
            zm = pts.copy()
            zp[:, ax] = np.minimum(zp[:, ax] + h[ax], self.hi[ax])
            zm[:, ax] = np.maximum(zm[:, ax] - h[ax], self.lo[ax])
            denom = (zp[:, ax] - zm[:, ax])[:, None]
            J[:, :, j] = (self.interp_many(times_q, zp)
                          - self.interp_many(times_q, zm)) / denom
        return J

    def sup_value(self) -> float:
        return float(np.max(np.linalg.norm(self.values, axis=-1), initial=0.0))

    def jacobian_y_nodes(self) -> np.ndarray:
        """(n_time, *shape, d, d) y-Jacobians at every node by differences."""
        return np.stack([_grid_jacobian_y(self.values[i], self.axes, self.m, self.d)
                         for i in range(self.times.size)])

    def sup_grad2(self) -> float:
        jac = self.jacobian_y_nodes()
        return float(np.max(np.linalg.norm(jac, ord=2, axis=(-2, -1)), initial=0.0))


class FunctionField:
    """Field backed by a callable u(s, pts) -> (n, d): analytic references.

    Provides the same evaluation surface as FieldGrid (interp, interp_many,
    jacobian_y_many, lo/hi) so residual experiments can run against exact
    fields; the y-Jacobian uses central differences at ``fd_step`` unless an
    analytic ``jac_fn(s, pts) -> (n, d, d)`` is supplied.  The box is
    unbounded by default.
    """

    def __init__(self, fn: Callable, m: int, d: int, jac_fn: Optional[Callable] = None,
                 fd_step: float = 1e-6, lo=None, hi=None):
        self.fn = fn
        self.m = m
        self.d = d
        self.dim = m + d
        self.jac_fn = jac_fn
        self.fd_step = fd_step
        self.lo = np.full(self.dim, -np.inf) if lo is None else np.asarray(lo, dtype=float)
        self.hi = np.full(self.dim, np.inf) if hi is None else np.asarray(hi, dtype=float)

    def interp(self, s: float, pts) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        return np.asarray(self.fn(np.full(pts.shape[0], float(s)), pts), dtype=float)

    def interp_many(self, times_q, pts) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        times_q = np.asarray(times_q, dtype=float).reshape(-1)
        return np.asarray(self.fn(times_q, pts), dtype=float)

    def jacobian_y_many(self, times_q, pts) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        times_q = np.asarray(times_q, dtype=float).reshape(-1)
        if self.jac_fn is not None:
            return np.asarray(self.jac_fn(times_q, pts), dtype=float)
        J = np.empty((pts.shape[0], self.d, self.d))
        for j in range(self.d):
            zp = pts.copy()
            zm = pts.copy()
            zp[:, self.m + j] += self.fd_step
            zm[:, self.m + j] -= self.fd_step
            J[:, :, j] = (self.interp_many(times_q, zp)
                          - self.interp_many(times_q, zm)) / (2.0 * self.fd_step)
        return J


def field_grad2(field: FieldGrid, s: float, z) -> np.ndarray:
    """Central-difference y-Jacobian of the field at (s, z), grid resolution.

    z must lie inside the box; within one cell of a y-boundary the stencil
    falls back to one-sided and a BoundaryExtrapolationWarning is issued.
    """
    z = np.asarray(z, dtype=float).reshape(field.dim)
    h = field.spacing()
    J = np.empty((field.d, field.d))
    for j in range(field.d):
        ax = field.m + j
        hj = h[ax]
        zp = z.copy()
        zm = z.copy()
        if z[ax] + hj > field.hi[ax] or z[ax] - hj < field.lo[ax]:
            warnings.warn(f"one-sided stencil at axis {ax} (within one cell of "
                          "the boundary)", BoundaryExtrapolationWarning)
            if z[ax] + hj > field.hi[ax]:
                zm[ax] -= hj
                J[:, j] = (field.interp(s, z) - field.interp(s, zm))[0] / hj
            else:
                zp[ax] += hj
                J[:, j] = (field.interp(s, zp) - field.interp(s, z))[0] / hj
        else:
            zp[ax] += hj
            zm[ax] -= hj
            J[:, j] = (field.interp(s, zp) - field.interp(s, zm))[0] / (2.0 * hj)
    return J


def field_grad_full(field: FieldGrid, s: float, z) -> np.ndarray:
    """Central-difference full Jacobian (d x dim) at (s, z)."""
    z = np.asarray(z, dtype=float).reshape(field.dim)
    h = field.spacing()
    J = np.empty((field.d, field.dim))
    for ax in range(field.dim):
        hj = h[ax]
        zp = z.copy()
        zm = z.copy()
        zp[ax] = min(zp[ax] + hj, field.hi[ax])
        zm[ax] = max(zm[ax] - hj, field.lo[ax])
        J[:, ax] = (field.interp(s, zp) - field.interp(s, zm))[0] / (zp[ax] - zm[ax])
    return J


# ---------------------------------------------------------------------------
# Resolvent (pointwise)


@dataclass(frozen=True)
class ResolventValue:
    value: np.ndarray
    achieved_tol: float
    converged: bool
    n_nodes: int


def resolvent_apply(model: SpectralModel, lam: float, f: Callable, s: float, z,
                    t_final: float, budget: int = 256,
                    gh_order: int = 8) -> ResolventValue:
    """int_s^T e^{-lam (r-s)} (P^0_{s,r} f_r)(z) dr by layered quadrature.

    f is a time-indexed observable: f(r, pts) -> (n_pts,) or (n_pts, p).
    The substitution r = s + tau^2 absorbs integrable square-root gradient
    singularities at the left endpoint; tau panels are geometric toward 0
    with 8 Gauss-Legendre nodes each, and the inner expectations use
    Gauss-Hermite rules.  ``budget`` caps the total number of tau nodes; if
    it is exhausted before the finest layers, the result carries the
    achieved tolerance and ``converged=False``.
    """
    if lam < 0:
        raise ValueError("lambda must be >= 0")
    if not 0.0 <= s < t_final:
        raise ValueError("need 0 <= s < t_final")
    from .linear_flow import apply_P0

    tau_max = math.sqrt(t_final - s)
    n_gl = 8
    max_levels = 26
    levels = min(max_levels, max(1, budget // n_gl))
    nodes0, weights0 = np.polynomial.legendre.leggauss(n_gl)

    total = None
    n_nodes = 0
    last_level_contrib = 0.0
    tau_lo = 0.0
    edges = [tau_max * 2.0 ** (-j) for j in range(levels)] + [0.0]
    sup_f = 0.0
    for j in range(levels):
        hi, lo = edges[j], edges[j + 1]
        if j == levels - 1:
            lo = 0.0
        taus = 0.5 * (hi - lo) * (nodes0 + 1.0) + lo
        wts = 0.5 * (hi - lo) * weights0
        contrib = None
        for tau, w in zip(taus, wts):
            # floor keeps the gap representable; the law degenerates smoothly
            r = s + max(tau * tau, 1e-13)
            est = apply_P0(model, s, r, lambda pts: f(r, pts), z,
                           method="gauss_hermite", budget=gh_order)
            val = np.asarray(est.value, dtype=float)
            sup_f = max(sup_f, float(np.max(np.abs(val))))
            term = w * 2.0 * tau * math.exp(-lam * tau * tau) * val
            contrib = term if contrib is None else contrib + term
            n_nodes += 1
        total = contrib if total is None else total + contrib
        last_level_contrib = float(np.max(np.abs(contrib)))
        tau_lo = lo
        if j == levels - 1:
            break
    remainder = sup_f * tau_lo ** 2
    achieved = last_level_contrib + remainder if levels < max_levels else remainder
    converged = levels >= max_levels or achieved <= 1e-12 * (1.0 + float(np.max(np.abs(total))))
    return ResolventValue(value=np.asarray(total, dtype=float),
                          achieved_tol=float(achieved), converged=bool(converged),
                          n_nodes=n_nodes)


# ---------------------------------------------------------------------------
# Picard fixed point on a grid


@dataclass(frozen=True)
class PicardReport:
    iterations: int
    residuals: tuple
    factors: tuple
    sup_u: float
    sup_grad2: float
    lam: float
    converged: bool
    tol: float

    @property
    def contraction_factor(self) -> float:
        """Median of the valid factors: a floor-noise-robust rate estimate."""
        valid = self.valid_factors
        return float(np.median(valid)) if valid else 0.0

    @property
    def max_factor(self) -> float:
        valid = self.valid_factors
        return float(max(valid)) if valid else 0.0

    @property
    def valid_factors(self) -> tuple:
        floor = max(10.0 * self.tol, 1e-13)
        out = []
        for k, f in enumerate(self.factors):
            if self.residuals[k] > floor and self.residuals[k + 1] > floor:
                out.append(f)
        return tuple(out)

    @property
    def hnorm(self) -> float:
        """Fixed-point space norm: sup|u| + sup||grad^(2) u||."""
        return self.sup_u + self.sup_grad2


class _Stencil:
    """Precompiled multilinear interpolation at a fixed point set.

    Grid-function evaluations inside the Picard sweep always hit the same
    (clamped) points, so corner indices and weights are computed once; each
    application is then a fancy-indexed gather and a weight contraction
    folded with the Gauss-Hermite weights.
    """

    def __init__(self, axes, pts: np.ndarray, gh_wts: np.ndarray, n_base: int):
        dim = len(axes)
        n = pts.shape[0]
        idx = np.empty((n, dim), dtype=np.int64)
        frac = np.empty((n, dim))
        strides = np.ones(dim, dtype=np.int64)
        sizes = [len(a) for a in axes]
        for j in range(dim - 2, -1, -1):
            strides[j] = strides[j + 1] * sizes[j + 1]
        for j, ax in enumerate(axes):
            i = np.clip(np.searchsorted(ax, pts[:, j], side="right") - 1,
                        0, len(ax) - 2)
            idx[:, j] = i
            frac[:, j] = (pts[:, j] - ax[i]) / (ax[i + 1] - ax[i])
        n_corner = 1 << dim
        flat = np.empty((n, n_corner), dtype=np.int64)
        wts = np.ones((n, n_corner))
        for c in range(n_corner):
            off = np.zeros(n, dtype=np.int64)
            w = np.ones(n)
            for j in range(dim):
                bit = (c >> j) & 1
                off += (idx[:, j] + bit) * strides[j]
                w *= frac[:, j] if bit else (1.0 - frac[:, j])
            flat[:, c] = off
            wts[:, c] = w
        # fold Gauss-Hermite weights into the corner weights
        n_gh = gh_wts.size
        wts = wts.reshape(n_base, n_gh, n_corner) * gh_wts[None, :, None]
        self.flat = flat.reshape(n_base, n_gh * n_corner)
        self.wts = wts.reshape(n_base, n_gh * n_corner)

    def expect(self, values_flat: np.ndarray) -> np.ndarray:
        """(n_base, d) expectation of a grid function given as (n_grid, d)."""
        return np.einsum("nc,ncd->nd", self.wts, values_flat[self.flat])


class _PicardEngine:
    """One Picard application on a tensor grid by backward Markov composition."""

    def __init__(self, model: SpectralModel, lam: float, grid: GridSpec,
                 gh_order: int = 4, n_local: int = 6):
        if grid.dim != model.dim:
            raise ValueError("grid dimension must equal model dimension")
        if not model.sigma_constant:
            raise CapabilityError("the grid solver needs constant-in-time sigma")
        self.model = model
        self.lam = float(lam)
        self.grid = grid
        self.axes = grid.axes()
        self.times = grid.times()
        self.shape = grid.shape
        self.mesh = grid.mesh()
        self.n_pts = self.mesh.shape[0]
        self.delta = float(self.times[1] - self.times[0])
        if not np.allclose(np.diff(self.times), self.delta):
            raise ValueError("time nodes must be uniform")
        self.lo = np.array(grid.lo)
        self.hi = np.array(grid.hi)

        A = model.block_operator()
        gh_pts, gh_wts = _gauss_hermite_nodes(model.dim, gh_order)
        self.gh_wts = gh_wts

        # one-step operator over a full panel
        E1, G1 = _van_loan(A, model.noise_matrix(0.0), self.delta)
        self.step_discount = math.exp(-self.lam * self.delta)
        self.step_stencil = self._stencil(E1, G1, gh_pts)

        # local panel nodes via the xi = e^{-lam u} substitution
        gl_x, gl_w = np.polynomial.legendre.leggauss(n_local)
        if self.lam * self.delta > 1e-8:
            xi_lo = math.exp(-self.lam * self.delta)
            xi = 0.5 * (1.0 - xi_lo) * (gl_x + 1.0) + xi_lo
            wts = 0.5 * (1.0 - xi_lo) * gl_w / self.lam
            us = -np.log(xi) / self.lam
        else:
            us = 0.5 * self.delta * (gl_x + 1.0)
            wts = 0.5 * self.delta * gl_w * np.exp(-self.lam * us)
        order = np.argsort(us)
        self.local_u = us[order]
        self.local_w = wts[order]
        self.local_stencils = []
        for u in self.local_u:
            Eu, Gu = _van_loan(A, model.noise_matrix(0.0), float(u))
            self.local_stencils.append(self._stencil(Eu, Gu, gh_pts))

    def _stencil(self, E: np.ndarray, G: np.ndarray, gh_pts: np.ndarray) -> _Stencil:
        F = psd_sqrt(G)
        shifts = (math.sqrt(2.0) * gh_pts) @ F.T
        base = self.mesh @ E.T
        pts = base[:, None, :] + shifts[None, :, :]
        pts = np.clip(pts.reshape(-1, self.model.dim), self.lo, self.hi)
        return _Stencil(self.axes, pts, self.gh_wts, self.n_pts)

    def apply(self, g_flat: np.ndarray) -> np.ndarray:
        """Gamma applied to the integrand table g (n_time, n_pts, d)."""
        M = self.times.size - 1
        out = np.zeros_like(g_flat)
        w_next = np.zeros((self.n_pts, self.model.d))
        for i in range(M - 1, -1, -1):
            local = np.zeros((self.n_pts, self.model.d))
            for u, wq, st in zip(self.local_u, self.local_w, self.local_stencils):
                theta = u / self.delta
                g_blend = (1.0 - theta) * g_flat[i] + theta * g_flat[i + 1]
                local += wq * st.expect(g_blend)
            w_next = local + self.step_discount * self.step_stencil.expect(w_next)
            out[i] = w_next
        return out


def _integrand_table(engine: _PicardEngine, model: SpectralModel, bvals: np.ndarray,
                     u_flat: np.ndarray) -> np.ndarray:
    """g = grad^(2)_b u + b on the grid, for every time node."""
    n_time = engine.times.size
    g = np.empty_like(bvals)
    for i in range(n_time):
        ui = u_flat[i].reshape(*engine.shape, model.d)
        jac = _grid_jacobian_y(ui, engine.axes, model.m, model.d)
        bi = bvals[i].reshape(*engine.shape, model.d)
        gi = np.einsum("...aj,...j->...a", jac, bi) + bi
        g[i] = gi.reshape(engine.n_pts, model.d)
    return g


def picard_solve(model: SpectralModel, b: DriftSpec, lam: float, grid: GridSpec,
                 tol: float = 1e-8, max_iter: int = 60, gh_order: int = 4,
                 n_local: int = 6):
    """Solve the discounted fixed-point equation on a tensor grid.

    Iterates u^{k+1} = Gamma(u^k) from u^0 = 0, recording sup-norm residuals
    and contraction factors.  Raises LambdaTooSmallError when three
    consecutive factors reach 1 (the discount must be increased).  Returns
    (FieldGrid, PicardReport); total dimension m + d must be <= 3.
    """
    if model.dim > 3:
        raise CapabilityError("picard_solve is limited to total dimension <= 3")
    if lam < 0:
        raise ValueError("lambda must be >= 0")
    engine = _PicardEngine(model, lam, grid, gh_order=gh_order, n_local=n_local)
    mesh = engine.mesh
    x, y = mesh[:, : model.m], mesh[:, model.m:]
    bvals = np.stack([np.asarray(b(float(t), x, y), dtype=float)
                      for t in engine.times])

    u = np.zeros((engine.times.size, engine.n_pts, model.d))
    residuals = []
    factors = []
    converged = False
    for it in range(1, max_iter + 1):
        g = _integrand_table(engine, model, bvals, u)
        u_new = engine.apply(g)
        res = float(np.max(np.linalg.norm(u_new - u, axis=-1), initial=0.0))
        residuals.append(res)
        if len(residuals) >= 2 and residuals[-2] > 0:
            factors.append(res / residuals[-2])
        u = u_new
        if res < tol:
            converged = True
            break
        if len(factors) >= 3 and all(f >= 1.0 for f in factors[-3:]):
            raise LambdaTooSmallError(
                f"Picard iteration not contracting at lambda={lam} "
                f"(last factors {factors[-3:]}); try doubling lambda")

    values = u.reshape(engine.times.size, *engine.shape, model.d)
    field = FieldGrid(times=engine.times, axes=engine.axes, values=values,
                      m=model.m, d=model.d)
    field.bound = field.sup_value()
    report = PicardReport(
        iterations=len(residuals), residuals=tuple(residuals),
        factors=tuple(factors), sup_u=field.sup_value(),
        sup_grad2=field.sup_grad2(), lam=float(lam),
        converged=converged, tol=tol)
    return field, report


def find_contraction_lambda(model: SpectralModel, b: DriftSpec, grid: GridSpec,
                            lam0: float = 16.0, cap: float = 2.0 ** 20,
                            tol: float = 1e-8, max_iter: int = 40,
                            gh_order: int = 4, n_local: int = 6):
    """Doubling search: smallest tried lambda with 3 consecutive factors <= 1/2.

    Immediate convergence (fewer than 3 measurable factors, e.g. constant
    drifts) also accepts.  Returns (lam, field, report).
    """
    lam = float(lam0)
    while lam <= cap:
        try:
            field, report = picard_solve(model, b, lam, grid, tol=tol,
                                         max_iter=max_iter, gh_order=gh_order,
                                         n_local=n_local)
        except LambdaTooSmallError:
            lam *= 2.0
            continue
        valid = report.valid_factors
        ok = False
        if report.converged and len(valid) < 3:
            ok = True
        else:
            for k in range(len(valid) - 2):
                if all(f <= 0.5 for f in valid[k:k + 3]):
                    ok = True
                    break
        if ok:
            return lam, field, report
        lam *= 2.0
    raise IterationError(f"no contracting lambda found up to cap {cap}")


# ---------------------------------------------------------------------------
# The transform Theta


def theta_forward(field: FieldGrid, s: float, z) -> np.ndarray:
    """Theta_s(x, y) = (x, y + u_s(x, y))."""
    z = np.asarray(z, dtype=float).reshape(field.dim)
    u = field.interp(s, z)[0]
    out = z.copy()
    out[field.m:] += u
    return out


def theta_inverse(field: FieldGrid, s: float, w, tol: float = 1e-10,
                  max_iter: int = 200, damping: float = 1.0) -> np.ndarray:
    """Invert Theta_s by damped fixed-point iteration on y = w2 - u_s(x, y).

    Requires sup ||grad^(2) u|| < 1 on the box (the bijectivity condition);
    raises NotInvertibleError otherwise and IterationError on non-convergence.
    """
    g = field.sup_grad2()
    if g >= 1.0:
        raise NotInvertibleError(
            f"transform not invertible: sup y-gradient {g:.3f} >= 1")
    w = np.asarray(w, dtype=float).reshape(field.dim)
    x, w2 = w[: field.m], w[field.m:]
    y = w2.copy()
    z = np.concatenate([x, y])
    for _ in range(max_iter):
        u = field.interp(s, z)[0]
        y_new = y + damping * ((w2 - u) - y)
        if float(np.max(np.abs(y_new - y))) < tol:
            z[field.m:] = y_new
            return z
        y = y_new
        z[field.m:] = y
    raise IterationError("theta_inverse did not converge within the iteration cap")


# ---------------------------------------------------------------------------
# Galerkin truncation comparison


@dataclass(frozen=True)
class GalerkinReport:
    levels: tuple
    value_gaps: tuple
    grad_gaps: tuple
    reference: int
    per_mode_sup: tuple


def _mode_submodel(model: SpectralModel, i: int) -> SpectralModel:
    """Per-mode 2-dimensional slice of a diagonal spectral-family model."""
    for name, M in (("A1", model.A1), ("B", model.B)):
        if not np.allclose(M, np.diag(np.diag(M))):
            raise CapabilityError(f"galerkin_compare needs diagonal {name}")
    sig = model.sigma_at(0.0)
    if not np.allclose(sig, np.diag(np.diag(sig))):
        raise CapabilityError("galerkin_compare needs diagonal sigma")
    a1 = float(model.A1[i, i])
    lam_i = float(model.eigenvalues[i])
    bii = float(model.B[i, i])
    sii = float(sig[i, i])
    return SpectralModel(
        m=1, d=1, A1=[[a1]], A2=[[-lam_i]], B=[[bii]],
        A0=[[-lam_i - a1]], sigma=[[sii]], delta=model.delta,
        eigenvalues=np.array([lam_i]), name=f"{model.name}[mode {i + 1}]")


def galerkin_compare(model: SpectralModel, mode_drifts: Sequence[Callable],
                     lam: float, levels: Optional[Sequence[int]] = None,
                     grid2d: Optional[GridSpec] = None,
                     probes: Optional[np.ndarray] = None, tol: float = 1e-7,
                     seed: int = 0, gh_order: int = 4, n_local: int = 6,
                     max_iter: int = 40, n_small: Optional[int] = None,
                     n_large: Optional[int] = None) -> GalerkinReport:
    """Truncation gaps of the fixed-point field for mode-separable drifts.

    mode_drifts[i] is a scalar callable (t, x_i, y_i) -> drift of mode i+1;
    the drift b(x, y) = sum_i beta_i(x_i, y_i) e_i decouples the fixed point
    into per-mode 2-dimensional problems, which is exact for the projected
    equations (projection zeroes trailing modes).  The reference solution
    uses all len(mode_drifts) modes; gap(n) is the sup over probe points and
    time nodes of the value / y-gradient distance between the level-n and
    reference fields.  Alternatively pass a single truncation pair via
    ``n_small``/``n_large``: the gap is then between those two levels (only
    the first n_large mode drifts are solved).
    """
    if not model.is_spectral_family:
        raise CapabilityError("galerkin_compare needs a spectral-family model")
    if grid2d is None:
        raise ValueError("grid2d is required")
    if n_small is not None or n_large is not None:
        if n_small is None or n_large is None or not n_small < n_large:
            raise ValueError("need n_small < n_large")
        if n_large > len(mode_drifts):
            raise ValueError("n_large exceeds the number of mode drifts")
        mode_drifts = mode_drifts[:n_large]
        levels = [n_small]
    if levels is None:
        raise ValueError("levels (or n_small/n_large) is required")
    n_ref = len(mode_drifts)
    if n_ref > model.d:
        raise ValueError("more mode drifts than model modes")
    levels = tuple(int(n) for n in levels)
    if any(n < 1 or n > n_ref for n in levels):
        raise ValueError("levels must lie in [1, n_ref]")

    fields = []
    sups = []
    for i in range(n_ref):
        beta = mode_drifts[i]
        sub = _mode_submodel(model, i)
        probe = np.abs(np.asarray(
            beta(0.0, np.linspace(grid2d.lo[0], grid2d.hi[0], 7)[:, None],
                 np.linspace(grid2d.lo[1], grid2d.hi[1], 7)[:, None])))
        if float(np.max(probe)) == 0.0:
            fields.append(None)
            sups.append(0.0)
            continue
        drift = DriftSpec(fn=lambda t, x, y, f=beta: np.asarray(f(t, x, y), dtype=float),
                          m=1, d=1, alpha=0.75, phi=Modulus.power(1.0, 0.5), K=1.0,
                          bound=None, name=f"mode{i + 1}")
        field, _ = picard_solve(sub, drift, lam, grid2d, tol=tol,
                                max_iter=max_iter, gh_order=gh_order,
                                n_local=n_local)
        fields.append(field)
        sups.append(field.sup_value())

    if probes is None:
        rng = substream(seed, "regularization", "galerkin-probes")
        probes = rng.uniform(-1.5, 1.5, size=(8, 2 * n_ref))
    probes = np.atleast_2d(np.asarray(probes, dtype=float))

    times = grid2d.times()
    # per (probe, time, mode): value and y-derivative of u_i at (x_i, y_i)
    vals = np.zeros((probes.shape[0], times.size, n_ref))
    ders = np.zeros_like(vals)
    for i, field in enumerate(fields):
        if field is None:
            continue
        for p, zp in enumerate(probes):
            pt = np.array([zp[i], zp[n_ref + i]])
            for k, t in enumerate(times):
                vals[p, k, i] = field.interp(float(t), pt)[0, 0]
                ders[p, k, i] = field_grad2(field, float(t), pt)[0, 0]

    value_gaps = []
    grad_gaps = []
    for n in levels:
        tail_v = np.sqrt(np.sum(vals[:, :, n:] ** 2, axis=-1))
        tail_g = np.max(np.abs(ders[:, :, n:]), axis=-1) if n < n_ref else np.zeros(1)
        value_gaps.append(float(np.max(tail_v)))
        grad_gaps.append(float(np.max(tail_g)))
    return GalerkinReport(levels=levels, value_gaps=tuple(value_gaps),
                          grad_gaps=tuple(grad_gaps), reference=n_ref,
                          per_mode_sup=tuple(sups))


# ---------------------------------------------------------------------------
# Local Holder-envelope diagnostic


def holder_envelope_ratio(field: FieldGrid, phi: Modulus, delta: float,
                          pairs: Sequence, s: float = 0.0,
                          r_grid: Optional[np.ndarray] = None) -> np.ndarray:
    """Ratios ||grad2 u(z) - grad2 u(z')|| / min_r { r + |z-z'| (1 + I(r^delta)) }

    with I(a) = int_a^1 phi(sigma)/sigma dsigma, evaluated over sampled pairs.
    Bounded ratios (no growth as |z - z'| shrinks) are the envelope check; for
    a Dini modulus the plain Lipschitz ratio is the simpler special case.
    """
    from .model import dini_integral
    if r_grid is None:
        r_grid = np.geomspace(1e-6, 0.999, 40)
    dini_tail = np.array([dini_integral(phi, max(float(r) ** delta, 1e-12))
                          for r in r_grid])
    out = []
    for z, zp in pairs:
        g = field_grad2(field, s, z)
        gp = field_grad2(field, s, zp)
        num = float(np.linalg.norm(g - gp, 2))
        dist = float(np.linalg.norm(np.asarray(z) - np.asarray(zp)))
        env = float(np.min(r_grid + dist * (1.0 + dini_tail)))
        out.append(num / env)
    return np.asarray(out)
