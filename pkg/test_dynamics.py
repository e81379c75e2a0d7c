import math

import numpy as np
import pytest
from hypothesis import given, settings as hyp_settings, strategies as st

from conftest import random_state
from qbesim.dynamics import (DecoherenceTrace, TimeGrid, TwoBodyBaseline, baseline_z_closed_form,
                             baseline_z_simulated, correlation_amplitude, decoherence_trace, default_pairs,
                             evolve, mean_infidelity, purity, qb_fidelity, reduced_q, reduced_qb,
                             residual_z_closed_form, robustness_residual)
from qbesim.errors import ShapeError, UndefinedAmplitudeError, ValidationError
from qbesim.model import (ProductState, assemble, build_model, canonical_model, canonical_state,
                          product_state_vector, rotated_bath_families, with_robust_bath)
from qbesim.spectral import perturbation_records, summarize

PLUS = np.array([1.0, 1.0], dtype=complex) / math.sqrt(2.0)
ZERO = np.array([1.0, 0.0], dtype=complex)


def robust_state(model, i0=0):
    return with_robust_bath(canonical_state(), model, i0)


def test_time_grid_validation():
    assert TimeGrid(0.0, 1.0, 11).spacing == pytest.approx(0.1)
    with pytest.raises(ValidationError):
        TimeGrid(1.0, 1.0, 5)
    with pytest.raises(ValidationError):
        TimeGrid(-1.0, 1.0, 5)
    with pytest.raises(ValidationError):
        TimeGrid(0.0, 1.0, 1)
    with pytest.raises(ValidationError):
        TimeGrid(0.0, math.inf, 5)


def test_evolution_preserves_norm(canonical, rng):
    psi = random_state(rng, 8)
    states = evolve(canonical, psi, TimeGrid(0.0, 500.0, 51))
    np.testing.assert_allclose(np.linalg.norm(states, axis=1), 1.0, atol=1e-12)
    np.testing.assert_allclose(states[0], psi, atol=1e-14)


def test_evolution_rejects_wrong_size(canonical):
    with pytest.raises(ShapeError):
        evolve(canonical, np.ones(4) / 2.0, [0.0, 1.0])


def test_trace_starts_coherent(canonical):
    trace = decoherence_trace(canonical, robust_state(canonical), TimeGrid(0.0, 10.0, 11))
    assert trace.z_abs[(0, 1)][0] == pytest.approx(1.0, abs=1e-12)
    assert trace.qb_fidelity[0] == pytest.approx(1.0, abs=1e-12)
    assert trace.qb_state_distance[0] == pytest.approx(0.0, abs=1e-12)
    assert trace.pairs == ((0, 1),)


def test_reduced_q_offdiagonal_matches_trace(canonical):
    state = robust_state(canonical)
    t = [0.0, 3.0, 40.0]
    trace = decoherence_trace(canonical, state, t)
    states = evolve(canonical, product_state_vector(state, canonical.dims), t)
    for k, psi in enumerate(states):
        assert reduced_q(psi, canonical.dims)[0, 1] == pytest.approx(trace.rho_q_offdiag[(0, 1)][k], abs=1e-12)


def test_reduced_qb_traces_down_to_reduced_q(canonical):
    psi0 = product_state_vector(canonical_state(), canonical.dims)
    psi_t = evolve(canonical, psi0, [0.0, 25.0])
    assert purity(reduced_qb(psi_t[0], canonical.dims)) == pytest.approx(1.0, abs=1e-12)
    for psi in psi_t:
        rho_qb = reduced_qb(psi, canonical.dims)
        assert rho_qb.shape == (4, 4)
        rho_q = np.einsum("abcb->ac", rho_qb.reshape(2, 2, 2, 2))
        np.testing.assert_allclose(rho_q, reduced_q(psi, canonical.dims), atol=1e-12)


@hyp_settings(max_examples=40, deadline=None)
@given(st.integers(2, 3), st.integers(1, 3), st.integers(1, 3), st.integers(0, 2 ** 32 - 1))
def test_reduced_q_purity_is_bounded(d_q, d_b, d_e, seed):
    dims = (d_q, d_b, d_e)
    psi = random_state(np.random.default_rng(seed), d_q * d_b * d_e)
    value = purity(reduced_q(psi, dims))
    assert 1.0 / d_q - 1e-12 <= value <= 1.0 + 1e-12


def test_two_body_baseline_is_cosine():
    baseline = TwoBodyBaseline(gamma=[[0.5, -0.5], [-0.5, 0.5]], c=1.0, bath_weights=[0.5, 0.5])
    grid = TimeGrid(0.0, 4 * math.pi, 64)
    np.testing.assert_allclose(baseline_z_closed_form(baseline, 0, 1, grid), np.cos(grid.times()), atol=1e-12)
    np.testing.assert_allclose(baseline_z_simulated(baseline, 0, 1, grid), np.cos(grid.times()), atol=1e-10)


def test_baseline_simulation_matches_closed_form_on_random_cases(rng):
    for _ in range(20):
        d_b = int(rng.integers(2, 4))
        gamma = rng.uniform(-1.0, 1.0, size=(2, d_b))
        weights = rng.dirichlet(np.ones(d_b))
        baseline = TwoBodyBaseline(gamma=gamma, c=float(rng.uniform(0.1, 2.0)), bath_weights=weights)
        family, _ = rotated_bath_families(d_b, list(rng.uniform(0.0, math.pi, size=d_b - 1)))
        grid = TimeGrid(0.0, 20.0, 64)
        np.testing.assert_allclose(baseline_z_simulated(baseline, 0, 1, grid, family),
                                   baseline_z_closed_form(baseline, 0, 1, grid), atol=1e-10)


def test_baseline_rejects_bad_weights():
    with pytest.raises(ValidationError, match="sum to 1"):
        TwoBodyBaseline(gamma=[[1.0, 0.0], [0.0, 1.0]], c=1.0, bath_weights=[0.5, 0.6])
    with pytest.raises(ValidationError, match="non-negative"):
        TwoBodyBaseline(gamma=[[1.0, 0.0], [0.0, 1.0]], c=1.0, bath_weights=[1.5, -0.5])


def test_residual_dephasing_tracks_exact_coherence(canonical):
    records = perturbation_records(canonical)
    tau = summarize(records, canonical, 0).tau
    grid = TimeGrid(0.0, 5.0 * tau, 101)
    trace = decoherence_trace(canonical, robust_state(canonical), grid, records=records)
    predicted = residual_z_closed_form(records, 0, 0, 1, PLUS, grid)
    assert np.max(np.abs(trace.z_abs[(0, 1)] - np.abs(predicted))) < 0.05


def test_plateau_holds_up_to_tenth_of_tau(canonical):
    records = perturbation_records(canonical)
    tau = summarize(records, canonical, 0).tau
    trace = decoherence_trace(canonical, robust_state(canonical), TimeGrid(0.0, 0.1 * tau, 21), records=records)
    assert trace.min_fidelity() >= 0.99


def test_dephasing_model_loses_fidelity_after_tau(dephasing):
    records = perturbation_records(dephasing)
    summary = summarize(records, dephasing, 1)
    state = robust_state(dephasing, 1)
    trace = decoherence_trace(dephasing, state, TimeGrid(0.0, 20.0 * summary.tau, 401), records=records)
    assert trace.min_fidelity(0.1 * summary.tau) >= 0.99
    assert trace.min_fidelity() < 0.5


def test_decoupled_model_never_decoheres():
    model = canonical_model(c=0.0)
    trace = decoherence_trace(model, robust_state(model), TimeGrid(0.0, 1000.0, 51))
    np.testing.assert_allclose(trace.z_abs[(0, 1)], 1.0, atol=1e-12)
    np.testing.assert_allclose(trace.qb_fidelity, 1.0, atol=1e-12)
    np.testing.assert_allclose(trace.qb_state_distance, 0.0, atol=1e-10)


def test_aligned_families_with_flat_gamma_column_are_exact():
    # θ = 0 makes H_QB commute with H_BE; a constant γ column leaves no relative phase
    model = build_model((2, 2, 2), 0.05, [[1.0, -1.0], [1.0, 1.0]], 0.0, 1.0, [[1.0, 0.0], [0.0, -1.0]])
    records = perturbation_records(model)
    assert all(r.epsilon < 1e-12 for r in records)
    trace = decoherence_trace(model, robust_state(model, 0), TimeGrid(0.0, 500.0, 51), records=records)
    np.testing.assert_allclose(trace.qb_fidelity, 1.0, atol=1e-12)
    np.testing.assert_allclose(trace.z_abs[(0, 1)], 1.0, atol=1e-12)


def test_leading_order_distance_is_of_order_epsilon(canonical):
    records = perturbation_records(canonical)
    eps_max = max(r.epsilon for r in records)
    trace = decoherence_trace(canonical, robust_state(canonical), TimeGrid(0.0, 1000.0, 51), records=records)
    assert np.max(trace.leading_order_distance) <= 4.0 * eps_max


def test_suppression_improves_with_stronger_environment_coupling():
    grid = TimeGrid(0.0, 50.0, 201)
    losses = []
    for C in (1.0, 2.0, 4.0):
        model = canonical_model(c=0.1, C=C)
        losses.append(mean_infidelity(decoherence_trace(model, robust_state(model), grid)))
    assert losses[0] > losses[1] > losses[2]


def test_vanishing_pointer_amplitude_is_reported(canonical):
    state = ProductState(q_amps=ZERO, b_amps=ZERO, e_amps=PLUS)
    with pytest.raises(UndefinedAmplitudeError):
        decoherence_trace(canonical, state, [0.0, 1.0])
    with pytest.raises(UndefinedAmplitudeError):
        correlation_amplitude({(0, 1): np.zeros(2)}, 0, 1, [1.0, 0.0])


def test_default_pairs_depend_on_q_dimension():
    assert default_pairs(1) == ()
    assert default_pairs(2) == ((0, 1),)
    assert default_pairs(3) == ((0, 1),)


def test_tracked_pair_must_be_distinct(canonical):
    with pytest.raises(ValidationError, match="tracked pair"):
        decoherence_trace(canonical, robust_state(canonical), [0.0, 1.0], tracked_pairs=((1, 1),))


def test_qb_fidelity_accepts_vector_or_pure_density(canonical, rng):
    psi = random_state(rng, 8)
    reference = np.kron(PLUS, ZERO)
    as_vector = qb_fidelity(psi, reference, canonical.dims)
    as_density = qb_fidelity(psi, np.outer(reference, reference.conj()), canonical.dims)
    assert as_vector == pytest.approx(as_density, abs=1e-12)
    with pytest.raises(ValidationError, match="pure"):
        qb_fidelity(psi, np.eye(4) / 4, canonical.dims)


def test_robustness_residual(canonical):
    h_be = assemble(canonical.h_be)
    assert robustness_residual(h_be, ZERO, PLUS) == pytest.approx(0.0, abs=1e-15)
    assert robustness_residual(h_be, PLUS, PLUS) == pytest.approx(1 / math.sqrt(2), abs=1e-12)
    assert robustness_residual(np.zeros((4, 4)), PLUS, PLUS) == 0.0
    with pytest.raises(ShapeError):
        robustness_residual(np.zeros((8, 8)), PLUS, PLUS)


def test_trace_min_fidelity_window():
    times = np.array([0.0, 1.0, 2.0])
    trace = DecoherenceTrace(times=times, z_abs={}, rho_q_offdiag={}, qb_fidelity=np.array([1.0, 0.9, 0.5]),
                             qb_state_distance=np.zeros(3))
    assert trace.min_fidelity(1.0) == 0.9
    assert trace.min_fidelity() == 0.5
    assert mean_infidelity(trace) == pytest.approx(0.2)
