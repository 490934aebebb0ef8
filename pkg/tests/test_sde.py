"""Mild integration, cutoffs, common-noise experiments, Bihari envelopes."""

import math
import warnings

import numpy as np
import pytest

from conftest import assert_within_se
from degenflow.errors import CoverageError, NonOsgoodWarning
from degenflow.linear_flow import sample_linear, transition_law
from degenflow.model import build_drift, build_example
from degenflow.regularization import FunctionField, GridSpec, picard_solve
from degenflow.sde import (bihari_bound, coarsen_noise, cutoff_drift,
                           dissipation_envelope, integrate_ensemble,
                           integrate_mild, make_noise, representation_residual,
                           uniqueness_experiment)


# ---------------------------------------------------------------------------
# Integrator basics


def test_zero_drift_zero_noise_is_deterministic_flow():
    model, _ = build_example("kinetic", d=1, sigma=np.zeros((1, 1)))
    b = build_drift("zero", 1, 1)
    traj = integrate_mild(model, b, [1.0, 2.0], 1.0, 16, noise=0)
    kinetic, _ = build_example("kinetic", d=1)
    expected = transition_law(kinetic, 0.0, 1.0, [1.0, 2.0]).mean
    np.testing.assert_allclose(traj.Z[-1], expected, rtol=1e-14)
    assert not traj.blew_up


def test_zero_drift_reproduces_linear_bundle_exactly(kinetic):
    # reusing a PathBundle's noise must replay the bundle bit-for-bit
    bundle = sample_linear(kinetic, 0.0, 1.0, [0.3, -0.2], 4, 32, seed=5)
    b = build_drift("zero", 1, 1)
    ens = integrate_ensemble(kinetic, b, [0.3, -0.2], 1.0, 32, noise=bundle)
    np.testing.assert_array_equal(ens.Z, bundle.Z)


def test_zero_drift_terminal_moments_match_law(kinetic):
    b = build_drift("zero", 1, 1)
    n = 20000
    ens = integrate_ensemble(kinetic, b, [0.0, 1.0], 1.0, 8, noise=11, n_paths=n)
    law = transition_law(kinetic, 0.0, 1.0, [0.0, 1.0])
    for j in range(2):
        se = math.sqrt(law.cov[j, j] / n)
        assert_within_se(ens.Z[:, -1, j].mean(), law.mean[j], se)


def test_self_convergence_order_one_for_lipschitz_drift(kinetic):
    b = build_drift("dissipative", 1, 1)
    n_ref = 4096
    noise = make_noise(kinetic, 1.0, n_ref, 16, seed=13)
    ref = integrate_ensemble(kinetic, b, [0.5, 0.5], 1.0, n_ref, noise=noise)
    errors = []
    for n in (128, 256, 512):
        cn = coarsen_noise(kinetic, noise, n_ref // n)
        ens = integrate_ensemble(kinetic, b, [0.5, 0.5], 1.0, n, noise=cn)
        err = np.linalg.norm(ens.Z[:, -1, :] - ref.Z[:, -1, :], axis=1).mean()
        errors.append(err)
    assert errors[0] > errors[1] > errors[2]
    # exponential Euler with frozen Lipschitz drift: first order in the step
    assert errors[0] / errors[1] == pytest.approx(2.0, rel=0.35)
    assert errors[1] / errors[2] == pytest.approx(2.0, rel=0.35)


def test_blowup_recorded_not_raised(kinetic):
    from degenflow.model import DriftSpec, Modulus
    explosive = DriftSpec(fn=lambda t, x, y: y ** 3, m=1, d=1, alpha=0.75,
                          phi=Modulus.power(1.0, 0.5), K=1.0, bound=None)
    traj = integrate_mild(kinetic, explosive, [0.0, 6.0], 4.0, 256, noise=1,
                          threshold=1e6)
    assert traj.blew_up
    assert traj.blowup_time is not None
    # frozen after exit: finite everywhere
    assert np.all(np.isfinite(traj.Z))


def test_coarsen_noise_exact_for_linear_flow(kinetic):
    b = build_drift("zero", 1, 1)
    noise = make_noise(kinetic, 1.0, 64, 3, seed=17)
    fine = integrate_ensemble(kinetic, b, [0.1, 0.4], 1.0, 64, noise=noise)
    for factor in (2, 4, 8):
        cn = coarsen_noise(kinetic, noise, factor)
        coarse = integrate_ensemble(kinetic, b, [0.1, 0.4], 1.0, 64 // factor,
                                    noise=cn)
        np.testing.assert_allclose(coarse.Z[:, -1, :], fine.Z[:, -1, :],
                                   atol=1e-13)


# ---------------------------------------------------------------------------
# Drift cutoff


def test_cutoff_plateau_and_support():
    b = build_drift("constant", 1, 1, value=np.array([1.0]))
    bc = cutoff_drift(b, 2)
    inside = bc(0.0, np.array([[1.0]]), np.array([[0.5]]))
    assert inside[0, 0] == 1.0
    outside = bc(0.0, np.array([[4.0]]), np.array([[3.0]]))
    assert outside[0, 0] == 0.0
    assert bc.bound is not None and np.isfinite(bc.bound)


def test_cutoff_blend_monotone_in_radius():
    b = build_drift("constant", 1, 1, value=np.array([1.0]))
    bc = cutoff_drift(b, 1)
    radii = np.linspace(0.0, 2.5, 60)
    vals = np.array([bc(0.0, np.array([[r]]), np.array([[0.0]]))[0, 0]
                     for r in radii])
    assert np.all(np.diff(vals) <= 1e-12)
    assert vals[0] == 1.0 and vals[-1] == 0.0


def test_cutoff_time_freeze():
    from degenflow.model import DriftSpec, Modulus
    b = DriftSpec(fn=lambda t, x, y: np.asarray(t)[..., None] * np.ones_like(y),
                  m=1, d=1, alpha=0.75, phi=Modulus.power(1.0, 0.5), K=1.0,
                  bound=None)
    bc = cutoff_drift(b, 2)
    v1 = bc(1.5, np.array([[0.0]]), np.array([[0.0]]))
    v2 = bc(5.0, np.array([[0.0]]), np.array([[0.0]]))
    assert v1[0, 0] == 1.5
    assert v2[0, 0] == 2.0  # time frozen at the cutoff level


# ---------------------------------------------------------------------------
# Uniqueness experiment


def test_zero_perturbation_gap_exactly_zero(kinetic):
    b = build_drift("rough_d1", 1, 1)
    table = uniqueness_experiment(kinetic, b, [0.3, 0.4], 0.0, 1.0,
                                  [64, 128, 256], seed=2)
    assert np.all(table.gaps() == 0.0)


def test_lipschitz_gap_within_gronwall_envelope(kinetic):
    b = build_drift("dissipative", 1, 1)
    # drift Lipschitz constant in z: |grad b| <= sqrt(2) on the relevant box
    L = math.sqrt(2.0) + 1.0  # + ||block operator|| margin for the linear part
    p = 1e-3
    table = uniqueness_experiment(kinetic, b, [0.3, 0.4], p, 1.0, [256, 512],
                                  seed=4)
    for row in table.rows:
        assert row.sup_gap <= math.exp(L * 1.0) * p


def test_rough_gap_monotone_in_perturbation(kinetic):
    b = build_drift("rough_d1", 1, 1)
    gaps = []
    for p in (1e-2, 1e-3, 1e-4):
        table = uniqueness_experiment(kinetic, b, [0.3, 0.4], p, 1.0, [512],
                                      seed=6)
        gaps.append(table.rows[0].gap_at_T)
    assert gaps[0] > gaps[1] > gaps[2] > 0.0


# ---------------------------------------------------------------------------
# Representation identity


def test_representation_residual_zero_drift_tiny(kinetic):
    b = build_drift("zero", 1, 1)
    grid = GridSpec.cube(2, half_width=8.0, points=9, t_final=1.0, n_time=9)
    field, _ = picard_solve(kinetic, b, 32.0, grid)
    traj = integrate_mild(kinetic, b, [0.1, 0.2], 1.0, 64, noise=5)
    rep = representation_residual(kinetic, b, traj, field, 32.0)
    assert rep.max_residual <= 1e-8


def test_representation_residual_constant_drift_order(kinetic):
    lam, c, T = 64.0, 0.8, 1.0
    b = build_drift("constant", 1, 1, value=np.array([c]))
    u_fn = lambda ts, pts: (c * (1.0 - np.exp(-lam * (T - ts))) / lam)[:, None]
    field = FunctionField(u_fn, 1, 1,
                          jac_fn=lambda ts, pts: np.zeros((pts.shape[0], 1, 1)))
    noise = make_noise(kinetic, T, 512, 4, seed=7)
    residuals = []
    for n in (128, 256, 512):
        cn = coarsen_noise(kinetic, noise, 512 // n)
        ens = integrate_ensemble(kinetic, b, [0.2, 0.1], T, n, noise=cn)
        res = np.mean([representation_residual(kinetic, b, ens.path(p), field,
                                               lam).max_residual
                       for p in range(4)])
        residuals.append(res)
    # empirical order >= 0.5 means ratios >= sqrt(2); trapezoid gives ~4
    assert residuals[0] / residuals[1] >= math.sqrt(2.0)
    assert residuals[1] / residuals[2] >= math.sqrt(2.0)


def test_representation_coverage_error(kinetic):
    b = build_drift("zero", 1, 1)
    grid = GridSpec.cube(2, half_width=0.5, points=9, t_final=1.0, n_time=5)
    field, _ = picard_solve(kinetic, b, 32.0, grid)
    traj = integrate_mild(kinetic, b, [0.0, 2.0], 1.0, 32, noise=3)
    with pytest.raises(CoverageError):
        representation_residual(kinetic, b, traj, field, 32.0)


# ---------------------------------------------------------------------------
# Bihari bound


def test_bihari_constant_ell_affine():
    L = 1.0
    bb = bihari_bound(lambda s: L + 0.0 * np.asarray(s), None, 2.0, 1.0, 1.5)
    assert abs(bb.curve(0.0) - 2.0) < 1e-8
    # Gamma(s) = (s - 1)/(2L): curve(t) = eta + 2 L t
    for t in (0.25, 0.5, 1.0):
        assert abs(bb.curve(t) - (2.0 + 2.0 * L * t)) < 1e-7


def test_bihari_linear_ell_exponential_type():
    C = 2.0
    bb = bihari_bound(lambda s: np.asarray(s, dtype=float), None, 2.0, 1.0, C)
    # Gamma(s) = log((1+s)/2) / (2C); inverse: 2 e^{2 C u} - 1
    g = bb.gamma(5.0)
    assert abs(g - math.log(3.0) / (2.0 * C)) < 1e-10
    target = bb.gamma(2.0) + 1.0
    expected = 2.0 * math.exp(2.0 * C * target) - 1.0
    assert abs(bb.curve(1.0) - expected) < 1e-6 * expected
    assert np.isfinite(bb.curve(1.0))


def test_bihari_t_zero_identity():
    bb = bihari_bound(lambda s: 1.0 + np.asarray(s, dtype=float), None,
                      3.7, 2.0, 1.2)
    assert abs(bb.curve(0.0) - 3.7) < 1e-8


def test_non_osgood_warning():
    with pytest.warns(NonOsgoodWarning):
        bihari_bound(lambda s: 1.0 + np.asarray(s, dtype=float) ** 2, None,
                     1.0, 1.0, 2.0)


# ---------------------------------------------------------------------------
# Dissipation envelope


def test_dissipative_paths_below_envelope(kinetic):
    b = build_drift("dissipative", 1, 1)
    rep = dissipation_envelope(kinetic, b, [0.5, 1.0], 2.0, 256, 200, seed=21)
    assert rep.n_blowups == 0
    assert rep.all_below
    assert np.all(rep.C_env > 1.0)
    assert np.all(rep.eta_T > 0.0)
