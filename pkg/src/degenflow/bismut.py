"""Derivative machinery for the degenerate linear semigroup.

The degenerate direction is steered through the controllability Gramian

    Q_t = int_0^t u (t-u) e^{u A0} B B* e^{u A0*} du,

which is invertible for t > 0 with ||Q_t^{-1}|| = O(t^-3).  For a direction
v = (v1, v2) and a window [s, T] the control pair

    V = Q_{T-s}^{-1} [ v1 + int_s^T ((T-r)/(T-s)) e^{(r-s)A0} B v2 dr ],
    Phi(r) = e^{(r-s)A2} [ v2/(T-s)
             + d/dr{ (r-s)(T-r) B* e^{(r-s)A0*} } V ]

drives a coupled copy of the flow started at z + eps v back onto the
original path at time T.  Girsanov reweighting then yields the directional
derivative of the semigroup as a Monte-Carlo expectation

    grad_v P^0_{s,T} f (z) = E[ f(Z^0_{s,T})
                                int_s^T < sigma*(sigma sigma*)^{-1} Phi(r), dW_r > ],

with a second-order variant obtained by splitting the window at the midpoint
and transporting the outer direction along the linear flow.

The time derivative inside Phi is expanded analytically:
    d/dr{(r-s)(T-r) B* e^{(r-s)A0*}}
      = (T+s-2r) B* e^{(r-s)A0*} + (r-s)(T-r) B* A0* e^{(r-s)A0*}.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np
from scipy import integrate

from .errors import AccuracyWarning, HypothesisViolationError, SingularGramianError
from .linear_flow import _expm, _step_kernels
from .model import SpectralModel
from .streams import substream

__all__ = [
    "GramianResult",
    "ControlPair",
    "GradientEstimate",
    "CouplingReport",
    "VarianceBound",
    "ScalingFit",
    "gramian_Q",
    "perturbation_controls",
    "bismut_gradient",
    "bismut_hessian",
    "verify_coupling",
    "variance_bound_check",
    "scaling_exponent",
    "transported_direction",
]


# ---------------------------------------------------------------------------
# Gramian


@dataclass(frozen=True)
class GramianResult:
    Q: np.ndarray
    Q_inv: np.ndarray
    cond: float
    bound_check: float
    sweep_t: np.ndarray
    sweep_ratio: np.ndarray


def _gramian_matrix(model: SpectralModel, t: float) -> np.ndarray:
    BBt = model.B @ model.B.T

    def integrand(u):
        E = _expm(u * model.A0)
        return u * (t - u) * E @ BBt @ E.T

    Q, _ = integrate.quad_vec(integrand, 0.0, t, epsabs=1e-13, epsrel=1e-12)
    return (Q + Q.T) / 2.0


def gramian_Q(model: SpectralModel, t: float,
              sweep: Sequence[float] = tuple(2.0 ** (-j) for j in range(6, -1, -1))
              ) -> GramianResult:
    """Q_t by adaptive quadrature, its inverse, and the t^3 inverse-norm sweep.

    bound_check = sup over the dyadic sweep of ||Q_t^{-1}|| t^3 (bounded for
    an invertible B B*; equals 6 exactly in the scalar A0 = 0, B = 1 case).
    """
    if t <= 0:
        raise ValueError("t must be positive")
    Q = _gramian_matrix(model, t)
    svals = np.linalg.svd(Q, compute_uv=False)
    cond = float(svals[0] / svals[-1]) if svals[-1] > 0 else math.inf
    if not math.isfinite(cond) or cond > 1e14:
        raise SingularGramianError(
            f"Gramian at t={t} numerically singular (cond={cond:.3e})")
    Q_inv = np.linalg.inv(Q)
    ts = np.asarray(list(sweep), dtype=float)
    ratios = []
    for tj in ts:
        Qj = _gramian_matrix(model, float(tj))
        inv_norm = 1.0 / float(np.linalg.svd(Qj, compute_uv=False)[-1])
        ratios.append(inv_norm * tj ** 3)
    ratios = np.asarray(ratios)
    return GramianResult(Q=Q, Q_inv=Q_inv, cond=cond,
                         bound_check=float(np.max(ratios)),
                         sweep_t=ts, sweep_ratio=ratios)


# ---------------------------------------------------------------------------
# Perturbation controls


@dataclass(frozen=True)
class ControlPair:
    """Steering vector V and control Phi for a window [s, T] and direction v."""

    V: np.ndarray
    s: float
    T: float
    v1: np.ndarray
    v2: np.ndarray
    model: SpectralModel

    def phi(self, r) -> np.ndarray:
        """Phi(r) in R^d; accepts scalar or 1-d array r, returns (..., d)."""
        rs = np.atleast_1d(np.asarray(r, dtype=float))
        out = np.empty((rs.size, self.model.d))
        s, T = self.s, self.T
        Bt = self.model.B.T
        A0t = self.model.A0.T
        for i, ri in enumerate(rs):
            EA0t = _expm((ri - s) * A0t)
            core = self.v2 / (T - s) + (
                (T + s - 2.0 * ri) * Bt @ (EA0t @ self.V)
                + (ri - s) * (T - ri) * Bt @ (A0t @ (EA0t @ self.V)))
            out[i] = _expm((ri - s) * self.model.A2) @ core
        return out[0] if np.isscalar(r) or np.asarray(r).ndim == 0 else out

    def weight_vector(self, r) -> np.ndarray:
        """sigma_r* (sigma_r sigma_r*)^{-1} Phi(r) in R^k."""
        rs = np.atleast_1d(np.asarray(r, dtype=float))
        phis = np.atleast_2d(self.phi(rs))
        out = np.empty((rs.size, self.model.k))
        for i, ri in enumerate(rs):
            sig = self.model.sigma_at(ri)
            gram = sig @ sig.T
            sv = np.linalg.svd(gram, compute_uv=False)
            if sv[-1] < 1e-12 * max(1.0, sv[0]):
                raise HypothesisViolationError(
                    "H1", f"sigma sigma* singular at r={ri}")
            out[i] = sig.T @ np.linalg.solve(gram, phis[i])
        return out[0] if np.isscalar(r) or np.asarray(r).ndim == 0 else out

    def coupled_difference(self, t: float):
        """Deterministic (per unit eps) coupled differences at time t.

        Returns (dX, dY) computed by quadrature of the Duhamel formulas; both
        vanish at t = T (terminal coincidence).
        """
        s, T = self.s, self.T
        model = self.model
        dY = _expm((t - s) * model.A2) @ self.v2 - integrate.quad_vec(
            lambda r: _expm((t - r) * model.A2) @ self.phi(float(r)),
            s, t, epsabs=1e-12, epsrel=1e-11)[0]
        BBt = model.B @ model.B.T

        def x_integrand(r):
            EA0 = _expm((r - s) * model.A0)
            EA0t = _expm((r - s) * model.A0.T)
            return EA0 @ ((T - r) / (T - s) * (model.B @ self.v2)
                          - (r - s) * (T - r) * (BBt @ (EA0t @ self.V)))

        inner = integrate.quad_vec(x_integrand, s, t, epsabs=1e-12, epsrel=1e-11)[0]
        dX = _expm((t - s) * model.A1) @ (self.v1 + inner)
        return dX, dY

    def terminal_gap(self) -> float:
        dX, dY = self.coupled_difference(self.T)
        return float(np.sqrt(np.sum(dX ** 2) + np.sum(dY ** 2)))


def perturbation_controls(model: SpectralModel, s: float, T: float, v) -> ControlPair:
    """Assemble (V, Phi) for direction v = (v1, v2) on the window [s, T]."""
    if T <= s:
        raise ValueError("T must exceed s")
    v = np.asarray(v, dtype=float).reshape(model.dim)
    v1, v2 = v[: model.m], v[model.m:]
    Q = _gramian_matrix(model, T - s)
    sv = np.linalg.svd(Q, compute_uv=False)
    if sv[-1] <= 0 or sv[0] / sv[-1] > 1e14:
        raise SingularGramianError(f"Gramian over gap {T - s} numerically singular")

    def v_integrand(r):
        return (T - r) / (T - s) * (_expm((r - s) * model.A0) @ (model.B @ v2))

    rhs = v1 + integrate.quad_vec(v_integrand, s, T, epsabs=1e-13, epsrel=1e-12)[0]
    V = np.linalg.solve(Q, rhs)
    return ControlPair(V=V, s=s, T=T, v1=v1, v2=v2, model=model)


def transported_direction(model: SpectralModel, s: float, t: float, v) -> np.ndarray:
    """Direction transported by the linear flow: grad_v Z^0_{s,t} = e^{(t-s)A} v."""
    v = np.asarray(v, dtype=float).reshape(model.dim)
    return _expm((t - s) * model.block_operator()) @ v


# ---------------------------------------------------------------------------
# Monte-Carlo derivative estimators


@dataclass(frozen=True)
class GradientEstimate:
    value: float
    stderr: float
    n_paths: int
    v: tuple
    s: float
    T: float
    kind: str = "gradient"


def _weight_table(ctrl: ControlPair, times: np.ndarray) -> np.ndarray:
    """Left-point weight vectors h(r_i) for the Ito sum, shape (N, k)."""
    return np.atleast_2d(ctrl.weight_vector(times[:-1]))


def bismut_gradient(model: SpectralModel, s: float, T: float, f: Callable, z, v,
                    n_paths: int, n_steps: int = 256, seed: int = 0,
                    stream: Sequence[str] = ("bismut", "gradient")) -> GradientEstimate:
    """Monte-Carlo estimate of (grad_v P^0_{s,T} f)(z).

    Paths use exact per-step Gaussian transitions; the stochastic-integral
    weight is the left-point Ito sum of <sigma*(sigma sigma*)^{-1} Phi(r), dW>
    on the same grid, so discretization error enters only through the weight.
    """
    if T <= s:
        raise ValueError("T must exceed s")
    if n_paths < 2 or n_steps < 1:
        raise ValueError("need n_paths >= 2 and n_steps >= 1")
    ctrl = perturbation_controls(model, s, T, v)
    times = np.linspace(s, T, n_steps + 1)
    hvec = _weight_table(ctrl, times)
    rng = substream(seed, *stream)
    kers = _step_kernels(model, s, T, n_steps)
    z0 = np.asarray(z, dtype=float).reshape(model.dim)
    cur = np.broadcast_to(z0, (n_paths, model.dim)).copy()
    weight = np.zeros(n_paths)
    for i, ker in enumerate(kers):
        dw, eta = ker.draw(rng, n_paths)
        weight += dw @ hvec[i]
        cur = cur @ ker.E.T + eta
    vals = np.asarray(f(cur), dtype=float).reshape(n_paths)
    prod = vals * weight
    value = float(prod.mean())
    stderr = float(prod.std(ddof=1) / math.sqrt(n_paths))
    return GradientEstimate(value=value, stderr=stderr, n_paths=n_paths,
                            v=tuple(np.asarray(v, dtype=float)), s=s, T=T)


def bismut_hessian(model: SpectralModel, s: float, T: float, f: Callable, z,
                   v, v_tilde, n_paths: int, n_steps: int = 256, seed: int = 0,
                   stream: Sequence[str] = ("bismut", "hessian")) -> GradientEstimate:
    """Second derivative grad_v grad_vtilde P^0_{s,T} f (z) by the midpoint split.

    The window is split at t = (s+T)/2; the inner weight over [s, t] uses
    v_tilde, the outer weight over [t, T] uses the transported direction
    v_t = e^{(t-s)A} v, and the estimator is the product of the two weights
    times f at the terminal state.
    """
    if T <= s:
        raise ValueError("T must exceed s")
    if n_steps % 2:
        n_steps += 1
    half = n_steps // 2
    t_mid = 0.5 * (s + T)
    ctrl_inner = perturbation_controls(model, s, t_mid, v_tilde)
    v_mid = transported_direction(model, s, t_mid, v)
    ctrl_outer = perturbation_controls(model, t_mid, T, v_mid)

    times1 = np.linspace(s, t_mid, half + 1)
    times2 = np.linspace(t_mid, T, half + 1)
    h1 = _weight_table(ctrl_inner, times1)
    h2 = _weight_table(ctrl_outer, times2)

    rng = substream(seed, *stream)
    z0 = np.asarray(z, dtype=float).reshape(model.dim)
    cur = np.broadcast_to(z0, (n_paths, model.dim)).copy()
    w1 = np.zeros(n_paths)
    for i, ker in enumerate(_step_kernels(model, s, t_mid, half)):
        dw, eta = ker.draw(rng, n_paths)
        w1 += dw @ h1[i]
        cur = cur @ ker.E.T + eta
    w2 = np.zeros(n_paths)
    for i, ker in enumerate(_step_kernels(model, t_mid, T, half)):
        dw, eta = ker.draw(rng, n_paths)
        w2 += dw @ h2[i]
        cur = cur @ ker.E.T + eta
    vals = np.asarray(f(cur), dtype=float).reshape(n_paths)
    prod = vals * w1 * w2
    return GradientEstimate(value=float(prod.mean()),
                            stderr=float(prod.std(ddof=1) / math.sqrt(n_paths)),
                            n_paths=n_paths,
                            v=tuple(np.asarray(v, dtype=float)), s=s, T=T,
                            kind="hessian")


# ---------------------------------------------------------------------------
# Coupling / Girsanov verification


@dataclass(frozen=True)
class CouplingReport:
    terminal_gap: float
    girsanov_mean: float
    girsanov_stderr: float
    eps: float
    n_paths: int


def verify_coupling(model: SpectralModel, s: float, T: float, v, eps: float,
                    n_paths: int, n_steps: int = 256, seed: int = 0) -> CouplingReport:
    """Terminal coincidence of the coupled flow and the Girsanov weight mean.

    terminal_gap is deterministic (noise cancels in the coupled differences)
    and computed by quadrature.  girsanov_mean is the sample mean of

        R_eps = exp(eps S - eps^2/2 Q),  S = sum <h(r_i), dW_i>,
                                         Q = sum |h(r_i)|^2 dt,

    whose expectation is exactly 1 for the discretized pair.
    """
    if not 0.0 <= eps < 1.0:
        raise ValueError("eps must lie in [0, 1)")
    ctrl = perturbation_controls(model, s, T, v)
    gap = ctrl.terminal_gap()
    if eps == 0.0:
        return CouplingReport(terminal_gap=gap, girsanov_mean=1.0,
                              girsanov_stderr=0.0, eps=eps, n_paths=0)
    times = np.linspace(s, T, n_steps + 1)
    hvec = _weight_table(ctrl, times)
    dt = (T - s) / n_steps
    qhat = float(np.sum(hvec ** 2)) * dt
    rng = substream(seed, "bismut", "girsanov")
    k = model.sigma_at(s).shape[1]
    mean_acc = 0.0
    sq_acc = 0.0
    block = max(1, min(n_paths, 200000 // max(1, n_steps)))
    done = 0
    while done < n_paths:
        nb = min(block, n_paths - done)
        dW = math.sqrt(dt) * rng.standard_normal((nb, n_steps, k))
        S = np.einsum("pik,ik->p", dW, hvec)
        R = np.exp(eps * S - 0.5 * eps ** 2 * qhat)
        mean_acc += float(R.sum())
        sq_acc += float((R ** 2).sum())
        done += nb
    mean = mean_acc / n_paths
    var = max(sq_acc / n_paths - mean ** 2, 0.0)
    stderr = math.sqrt(var / n_paths)
    return CouplingReport(terminal_gap=gap, girsanov_mean=mean,
                          girsanov_stderr=stderr, eps=eps, n_paths=n_paths)


# ---------------------------------------------------------------------------
# Variance bound and gradient-scaling diagnostics


@dataclass(frozen=True)
class VarianceBound:
    gaps: np.ndarray
    ratios: np.ndarray

    @property
    def sup(self) -> float:
        return float(np.max(self.ratios))


def variance_bound_check(model: SpectralModel, s: float, T: float, v,
                         n_gaps: int = 7) -> VarianceBound:
    """sup over dyadic gaps of  int |sigma*(..)^{-1}Phi|^2 dr  divided by
    |v1|^2/gap^3 + |v2|^2/gap (the variance envelope of the weight)."""
    if T <= s:
        raise ValueError("T must exceed s")
    v = np.asarray(v, dtype=float).reshape(model.dim)
    v1, v2 = v[: model.m], v[model.m:]
    gaps = (T - s) * 2.0 ** (-np.arange(n_gaps, dtype=float))
    ratios = []
    for g in gaps:
        ctrl = perturbation_controls(model, s, s + g, v)
        val, _ = integrate.quad(
            lambda r: float(np.sum(ctrl.weight_vector(float(r)) ** 2)),
            s, s + g, limit=200, epsabs=1e-12, epsrel=1e-10)
        env = float(np.sum(v1 ** 2)) / g ** 3 + float(np.sum(v2 ** 2)) / g
        ratios.append(val / env)
    return VarianceBound(gaps=gaps, ratios=np.asarray(ratios))


@dataclass(frozen=True)
class ScalingFit:
    slope: float
    slope_stderr: float
    gaps: np.ndarray
    values: np.ndarray
    n_per_point: int
    low_budget: bool


def _default_probes(dim: int, n: int = 8, radius: float = 2.0) -> np.ndarray:
    from scipy.stats import qmc
    pts = qmc.Halton(d=dim, scramble=False).random(n)
    pts = radius * (2.0 * pts - 1.0)
    norms = np.linalg.norm(pts, axis=1, keepdims=True)
    over = norms[:, 0] > radius
    pts[over] *= radius / norms[over]
    return pts


def scaling_exponent(model: SpectralModel, f: Callable, component: str,
                     gaps: Sequence[float], budget: int,
                     probes: Optional[np.ndarray] = None, seed: int = 0,
                     n_steps: int = 128) -> ScalingFit:
    """Fitted slope of log sup_z |grad P^0_{0,gap} f| against log gap.

    The sup is taken over a small probe set (a lower bound of the true
    sup-norm, adequate for slope fitting); each point is estimated with
    bismut_gradient at budget // (n_gaps * n_probes) paths.  A per-point
    budget below 100 paths sets the low-budget flag and warns.
    """
    gaps = np.asarray(list(gaps), dtype=float)
    if gaps.size < 4:
        raise ValueError("need at least 4 gaps for a slope fit")
    if component not in ("x", "y"):
        raise ValueError("component must be 'x' or 'y'")
    v = np.zeros(model.dim)
    v[0 if component == "x" else model.m] = 1.0
    if probes is None:
        probes = _default_probes(model.dim)
    probes = np.atleast_2d(np.asarray(probes, dtype=float))
    n = max(2, int(budget) // (gaps.size * probes.shape[0]))
    low = n < 100
    if low:
        warnings.warn("scaling_exponent budget gives <100 paths per point; "
                      "slope confidence will be wide", AccuracyWarning)
    values = np.empty(gaps.size)
    for gi, g in enumerate(gaps):
        best = 0.0
        for pi, zp in enumerate(probes):
            est = bismut_gradient(model, 0.0, float(g), f, zp, v,
                                  n_paths=n, n_steps=n_steps, seed=seed,
                                  stream=("bismut", "scaling", f"{gi}", f"{pi}"))
            best = max(best, abs(est.value))
        values[gi] = best
    logg = np.log(gaps)
    logv = np.log(np.maximum(values, 1e-300))
    coeffs, cov = np.polyfit(logg, logv, 1, cov=True)
    return ScalingFit(slope=float(coeffs[0]),
                      slope_stderr=float(np.sqrt(cov[0, 0])),
                      gaps=gaps, values=values, n_per_point=n, low_budget=low)
