import json
import math

import numpy as np
import pytest

from qbesim.errors import CapacityError, ParseError, ShapeError, ValidationError
from qbesim.model import (ProjectorFamily, SeparableInteraction, apply_overrides, assemble, build_model,
                          canonical_model, canonical_state, embedded_h_be, embedded_h_qb, full_hamiltonian, load_model,
                          load_model_file, pointer_amplitudes, product_state_vector, rotated_bath_families,
                          rotation_matrix, serialize_model, standard_family, with_couplings, with_robust_bath)
from qbesim.operators import is_hermitian

SIGMA_X = np.array([[0, 1], [1, 0]], dtype=complex)
SIGMA_Z = np.diag([1.0, -1.0]).astype(complex)


def test_canonical_h_qb_is_sigma_z_sigma_x(canonical):
    np.testing.assert_allclose(assemble(canonical.h_qb), 0.01 * np.kron(SIGMA_Z, SIGMA_X), atol=1e-15)


def test_canonical_h_be_is_diagonal(canonical):
    np.testing.assert_allclose(assemble(canonical.h_be), np.diag([1.0, 0.0, 0.0, -1.0]), atol=1e-15)


def test_full_hamiltonian_shape_and_hermiticity(canonical):
    h = full_hamiltonian(canonical)
    assert h.shape == (8, 8)
    assert is_hermitian(h)


def test_c_zero_full_hamiltonian_is_embedded_h_be():
    model = canonical_model(c=0.0)
    np.testing.assert_array_equal(full_hamiltonian(model), embedded_h_be(model))


def test_theta_zero_families_coincide():
    pi_bath, p_bath = rotated_bath_families(2, 0.0)
    for a, b in zip(pi_bath.projectors, p_bath.projectors):
        np.testing.assert_allclose(a, b, atol=1e-15)


def commutator(a, b):
    return a @ b - b @ a


def test_h_qb_commutes_with_q_pointer_projectors(canonical):
    h_qb = assemble(canonical.h_qb)
    for projector in standard_family(2).projectors:
        np.testing.assert_allclose(commutator(h_qb, np.kron(projector, np.eye(2))), 0.0, atol=1e-15)


def test_theta_zero_interactions_commute():
    aligned = canonical_model(theta=0.0)
    np.testing.assert_allclose(commutator(embedded_h_qb(aligned), embedded_h_be(aligned)), 0.0, atol=1e-15)
    rotated = canonical_model()
    assert np.linalg.norm(commutator(embedded_h_qb(rotated), embedded_h_be(rotated))) > 1e-3


def test_quarter_turn_families_are_maximally_noncommuting():
    pi_bath, p_bath = rotated_bath_families(2, math.pi / 4)
    gap = commutator(pi_bath.projectors[0], p_bath.projectors[0])
    assert np.linalg.norm(gap, 2) == pytest.approx(0.5, abs=1e-14)


def test_half_turn_swaps_the_families():
    pi_bath, p_bath = rotated_bath_families(2, math.pi / 2)
    np.testing.assert_allclose(pi_bath.projectors[0], p_bath.projectors[1], atol=1e-15)
    np.testing.assert_allclose(pi_bath.projectors[1], p_bath.projectors[0], atol=1e-15)


def test_givens_rotation_is_orthogonal_in_three_dimensions():
    r = rotation_matrix(3, [0.3, 1.1])
    np.testing.assert_allclose(r.T @ r, np.eye(3), atol=1e-14)
    pi_bath, _ = rotated_bath_families(3, [0.3, 1.1])
    pi_bath.validate()


def test_wrong_number_of_givens_angles():
    with pytest.raises(ValidationError, match="Givens angles"):
        rotation_matrix(3, [0.3])


def test_family_validation_names_the_invariant():
    p0 = np.diag([1.0, 0.0]).astype(complex)
    plus = np.full((2, 2), 0.5, dtype=complex)
    with pytest.raises(ValidationError, match="not orthogonal"):
        ProjectorFamily(2, (p0, plus), (0, 1)).validate()
    with pytest.raises(ValidationError, match="not complete"):
        ProjectorFamily(2, (p0,), (0,)).validate()
    with pytest.raises(ValidationError, match="not idempotent"):
        ProjectorFamily(2, (2 * p0,), (0,)).validate()


def test_subspace_projector_family_kets():
    family = ProjectorFamily(3, (np.diag([1.0, 1.0, 0.0]).astype(complex), np.diag([0.0, 0.0, 1.0]).astype(complex)),
                             (0, 1))
    family.validate()
    kets = family.kets()
    assert [label for label, _ in kets] == [0, 0, 1]
    assert not family.is_rank_one()


def test_coeff_shape_mismatch():
    interaction = SeparableInteraction(1.0, np.ones((2, 3)), standard_family(2), standard_family(2))
    with pytest.raises(ValidationError, match="coeffs shape"):
        assemble(interaction)


def test_non_positive_C_rejected():
    with pytest.raises(ValidationError, match="C must be positive"):
        canonical_model(C=0.0)


def test_capacity_cap_from_environment(monkeypatch):
    monkeypatch.setenv("QBESIM_MAX_DIM", "4")
    with pytest.raises(CapacityError):
        canonical_model()


def test_with_couplings_keeps_geometry(canonical):
    scaled = with_couplings(canonical, c=0.05)
    assert scaled.c == 0.05 and scaled.C == canonical.C
    assert scaled.bath_angles == canonical.bath_angles
    np.testing.assert_array_equal(scaled.gamma, canonical.gamma)


def test_pointer_amplitudes_of_canonical_state(canonical):
    c_p, alpha, beta = pointer_amplitudes(canonical, canonical_state())
    np.testing.assert_allclose(np.abs(c_p), [1 / math.sqrt(2)] * 2)
    np.testing.assert_allclose(np.abs(alpha), [1.0, 0.0])
    np.testing.assert_allclose(np.abs(beta), [1 / math.sqrt(2)] * 2)


def test_with_robust_bath_sets_pointer_state(canonical):
    state = with_robust_bath(canonical_state(), canonical, 1)
    np.testing.assert_allclose(np.abs(state.b_amps), [0.0, 1.0])
    with pytest.raises(ValidationError):
        with_robust_bath(canonical_state(), canonical, 5)


def test_load_canonical_config(canonical_config_text):
    model, state = load_model(canonical_config_text)
    assert model.dims == (2, 2, 2)
    assert model.c == 0.01 and model.C == 1.0
    assert state.dims == (2, 2, 2)


def test_serialize_load_serialize_is_idempotent(canonical_config_text):
    model, state = load_model(canonical_config_text)
    once = serialize_model(model, state)
    again = serialize_model(*load_model(once))
    assert once == again


def test_unknown_key_is_named(canonical_config_text):
    document = json.loads(canonical_config_text)
    document["h_qb"]["strength"] = 1.0
    with pytest.raises(ValidationError, match="unknown key h_qb.strength"):
        load_model(json.dumps(document))


def test_missing_key_is_named(canonical_config_text):
    document = json.loads(canonical_config_text)
    del document["h_be"]["kappa"]
    with pytest.raises(ValidationError, match="missing key h_be.kappa"):
        load_model(json.dumps(document))


def test_malformed_json_reports_position():
    with pytest.raises(ParseError, match=r"line 1, column \d+"):
        load_model('{"dims": [2, 2, 2],,}')


def test_unnormalized_initial_state(canonical_config_text):
    document = json.loads(canonical_config_text)
    document["initial"]["q_amps"] = [[1.0, 0.0], [1.0, 0.0]]
    with pytest.raises(ValidationError, match="initial.q_amps normalized"):
        load_model(json.dumps(document))


def test_amplitude_length_mismatch(canonical_config_text):
    document = json.loads(canonical_config_text)
    document["initial"]["e_amps"] = [[1.0, 0.0]]
    with pytest.raises(ShapeError):
        load_model(json.dumps(document))


def test_gamma_shape_mismatch(canonical_config_text):
    document = json.loads(canonical_config_text)
    document["h_qb"]["gamma"] = [[1.0, -1.0, 0.0], [-1.0, 1.0, 0.0]]
    with pytest.raises(ValidationError, match="coeffs shape"):
        load_model(json.dumps(document))


def test_overrides_apply_before_validation(canonical_config_text):
    model, _ = load_model(canonical_config_text, ["h_qb.c=0.02", "h_qb.theta=0"])
    assert model.c == 0.02
    assert model.bath_angles == (0.0,)


def test_bad_override_value_fails_validation(canonical_config_text):
    with pytest.raises(ValidationError, match="h_qb.c"):
        load_model(canonical_config_text, ["h_qb.c=strong"])


def test_load_model_file(config_file):
    loaded = load_model_file(config_file())
    assert loaded.protocol["include_sweep"] is False
    assert loaded.model.ratio == pytest.approx(0.01)


def test_theta_list_in_config(canonical_config_text):
    document = json.loads(canonical_config_text)
    document["dims"] = [2, 3, 2]
    document["h_qb"]["gamma"] = [[1.0, 0.0, -1.0], [-1.0, 0.0, 1.0]]
    document["h_qb"]["theta"] = [0.2, 0.4]
    document["h_be"]["kappa"] = [[1.0, 0.0], [0.0, 0.5], [0.0, -1.0]]
    document["initial"]["b_amps"] = [[1.0, 0.0], [0.0, 0.0], [0.0, 0.0]]
    model, _ = load_model(json.dumps(document))
    assert model.bath_angles == (0.2, 0.4)
    assert build_model(model.dims, model.c, model.gamma, [0.2, 0.4], model.C, model.kappa).dim == 12


def test_apply_overrides_creates_nested_paths():
    document = apply_overrides({"h_qb": {"c": 0.01}}, ["h_qb.c=0.02", "protocol.grid.n_points=11", "name=run-a"])
    assert document["h_qb"]["c"] == 0.02
    assert document["protocol"] == {"grid": {"n_points": 11}}
    assert document["name"] == "run-a"


@pytest.mark.parametrize("override", ["h_qb.c", "=1", "h_qb.c.x=1"])
def test_apply_overrides_rejects_malformed(override):
    with pytest.raises(ValidationError, match="override"):
        apply_overrides({"h_qb": {"c": 0.01}}, [override])


def test_product_state_vector_is_normalized_kron():
    state = canonical_state()
    vec = product_state_vector(state, (2, 2, 2))
    expected = np.kron(np.kron(state.q_amps, state.b_amps), state.e_amps)
    np.testing.assert_allclose(vec, expected, atol=1e-15)
    assert np.linalg.norm(vec) == pytest.approx(1.0, abs=1e-15)
    with pytest.raises(ShapeError):
        product_state_vector(state, (2, 3, 2))
