import numpy as np
import pytest
from hypothesis import given, strategies as st
from numpy.testing import assert_allclose

from lambdafmm.system import (
    LambdaState,
    ParticleSystem,
    TitratableSite,
    end_state_charges,
    load_system,
    save_system,
    scale_charges,
    total_scaled_charge,
    validate_system,
    wrap_positions,
)
from lambdafmm.weights import expand_weights


def two_particle_site_system():
    positions = np.array([[0.2, 0.2, 0.2], [0.7, 0.2, 0.2], [0.4, 0.8, 0.1]])
    charges = np.array([0.0, 0.0, -0.25])
    site = TitratableSite(
        particle_indices=np.array([0, 1]),
        form_charges=np.array([[0.3, -0.3], [0.5, -0.1]]),
    )
    return ParticleSystem(box_length=1.0, positions=positions, charges=charges, sites=[site])


def test_scale_charges_single_site_example():
    system = two_particle_site_system()
    w = expand_weights([0.375])
    scaled = scale_charges(system, [w])
    # 0.625*0.3 + 0.375*0.5 and 0.625*(-0.3) + 0.375*(-0.1)
    assert_allclose(scaled[:2], [0.375, -0.225], rtol=0, atol=1e-15)
    assert scaled[2] == -0.25


def test_scale_charges_at_vertex_matches_end_state():
    system = two_particle_site_system()
    w = expand_weights([1.0])
    scaled = scale_charges(system, [w])
    end = end_state_charges(system, [1])
    assert_allclose(scaled, end, rtol=0, atol=0)


def test_end_state_charges_picks_form_rows():
    system = two_particle_site_system()
    q0 = end_state_charges(system, [0])
    q1 = end_state_charges(system, [1])
    assert_allclose(q0[:2], [0.3, -0.3], rtol=0, atol=0)
    assert_allclose(q1[:2], [0.5, -0.1], rtol=0, atol=0)
    assert q0[2] == q1[2] == -0.25


def test_total_scaled_charge_interpolates():
    system = two_particle_site_system()
    w = expand_weights([0.25])
    total = total_scaled_charge(system, [w])
    # form nets are 0.0 and 0.4; environment adds -0.25
    assert_allclose(total, 0.75 * 0.0 + 0.25 * 0.4 - 0.25, rtol=0, atol=1e-15)


@given(st.lists(st.floats(-50, 50), min_size=3, max_size=3))
def test_wrap_positions_in_range(coords):
    wrapped = wrap_positions(np.array([coords]), 2.5)
    assert np.all(wrapped >= 0.0)
    assert np.all(wrapped < 2.5)


def test_wrap_positions_exact_multiple():
    wrapped = wrap_positions(np.array([[5.0, -5.0, -1e-18]]), 2.5)
    assert_allclose(wrapped, [[0.0, 0.0, 0.0]], rtol=0, atol=0)


def test_validate_accepts_good_system():
    system = two_particle_site_system()
    state = LambdaState(values=[[0.5]], velocities=[[0.0]], masses=[5.0])
    assert validate_system(system, state) == []


def test_validate_flags_overlapping_sites():
    system = two_particle_site_system()
    system.sites.append(
        TitratableSite(particle_indices=np.array([1, 2]), form_charges=np.array([[0.0, 0.0]]))
    )
    violations = validate_system(system)
    assert any("overlap" in msg for msg in violations)


def test_scale_charges_ignores_site_placeholders():
    system = two_particle_site_system()
    system.charges[0] = 9.9  # placeholder value, blended row wins
    w = expand_weights([0.375])
    scaled = scale_charges(system, [w])
    assert_allclose(scaled[0], 0.375, rtol=0, atol=1e-15)


def test_validate_flags_bad_form_count():
    system = two_particle_site_system()
    system.sites[0].form_charges = np.zeros((3, 2))
    violations = validate_system(system)
    assert any("power of two" in msg for msg in violations)


def test_validate_flags_out_of_box_positions():
    system = two_particle_site_system()
    system.positions[0, 0] = 1.5
    violations = validate_system(system)
    assert any("wrapped" in msg for msg in violations)


def test_validate_flags_mismatched_lambda_state():
    system = two_particle_site_system()
    state = LambdaState(values=[[0.5, 0.5]], velocities=[[0.0, 0.0]], masses=[5.0])
    violations = validate_system(system, state)
    assert any("lambda" in msg for msg in violations)


def test_lambda_state_copy_is_deep():
    state = LambdaState(values=[[0.5]], velocities=[[0.1]], masses=[5.0])
    dup = state.copy()
    dup.values[0][0] = 0.9
    assert state.values[0][0] == 0.5


def test_site_particle_mask():
    system = two_particle_site_system()
    mask = system.site_particle_mask()
    assert mask.tolist() == [True, True, False]


def test_save_load_round_trip(tmp_path):
    system = two_particle_site_system()
    state = LambdaState(values=[[0.34567891234567]], velocities=[[-0.25]], masses=[5.0])
    path = tmp_path / "sys.json"
    save_system(system, state, path)
    loaded, lstate = load_system(path)
    assert loaded.box_length == system.box_length
    assert_allclose(loaded.positions, system.positions, rtol=0, atol=0)
    assert_allclose(loaded.charges, system.charges, rtol=0, atol=0)
    assert len(loaded.sites) == 1
    assert_allclose(loaded.sites[0].form_charges, system.sites[0].form_charges, rtol=0, atol=0)
    assert lstate.values[0][0] == state.values[0][0]
    assert lstate.velocities[0][0] == -0.25
    assert lstate.masses[0] == 5.0
    # a second save of the loaded pair is byte-identical
    path2 = tmp_path / "sys2.json"
    save_system(loaded, lstate, path2)
    assert path.read_bytes() == path2.read_bytes()


def test_load_reports_missing_field(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text('{"particles": []}\n')
    with pytest.raises(ValueError, match="box_length_nm"):
        load_system(path)


def test_load_rejects_malformed_json(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text("{not json")
    with pytest.raises(ValueError):
        load_system(path)
