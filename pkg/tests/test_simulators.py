import math
import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from bmrsw.errors import PreconditionError, StructuralError
from bmrsw.rsw import SgaConfig, sga_estimate
from bmrsw.simulators import (
    GANDK,
    NORMAL,
    STUDENT_T,
    ContaminationSpec,
    NoiseBank,
    SimulatorSpec,
    derive_seed,
    discretize,
    gandk_transform,
    generate_dataset,
    get_simulator,
    make_rng,
    normal_transform,
    simulate_batch,
    student_t_sample,
)


# -- transforms --------------------------------------------------------------

def test_gandk_at_zero_is_location():
    assert gandk_transform((3, 1, 2, 0.5), 0.0) == 3.0


def test_gandk_reduces_to_normal():
    z = np.linspace(-3, 3, 13)
    np.testing.assert_allclose(gandk_transform((1.5, 2.0, 0.0, 0.0), z), 1.5 + 2.0 * z, rtol=0, atol=1e-15)


def test_gandk_at_one():
    # 3 + (1 + 0.8 tanh 1) sqrt 2, high-precision value
    assert gandk_transform((3, 1, 2, 0.5), 1.0) == pytest.approx(5.27585898987448128, abs=1e-13)


@settings(max_examples=60, deadline=None)
@given(st.floats(-5, 5), st.floats(0.1, 5), st.floats(0, 4), st.floats(0, 2))
def test_gandk_is_increasing_in_z(a, b, g, k):
    # with c = 0.8 the transform is a quantile function for k >= 0
    z = np.linspace(-5, 5, 2001)
    assert np.all(np.diff(gandk_transform((a, b, g, k), z)) > 0)


def test_gandk_can_decrease_for_negative_k():
    z = np.linspace(-5, 5, 2001)
    d = np.diff(gandk_transform((0.0, 1.0, 1.0, -0.25), z))
    assert d.min() < 0
    assert z[np.argmin(d)] == pytest.approx(-2.1, abs=0.05)


def test_normal_transform_examples():
    assert normal_transform((0, 1), 1.3) == 1.3
    assert normal_transform((2.5, 7.0), 0.0) == 2.5
    assert normal_transform((-5, 0.15), 2.0) == pytest.approx(-4.7, abs=1e-15)


def test_student_t_moments():
    x = student_t_sample(22.0, make_rng(1), 10**6)
    assert abs(x.mean()) < 0.01
    assert x.var() == pytest.approx(22 / 20, abs=0.02)


def test_student_t_large_nu_is_normal():
    x = student_t_sample(1e9, make_rng(2), 10**5)
    assert stats.kstest(x, "norm").statistic < 0.01


def test_student_t_rejects_bad_nu():
    with pytest.raises(ValueError):
        student_t_sample(0.0, make_rng(0), 3)


def test_discretize_examples():
    assert discretize(0.10, 0.05) == pytest.approx(0.10)
    assert discretize(0.123, 0.05) == pytest.approx(0.10)
    assert discretize(-0.01, 0.05) == pytest.approx(-0.05)


@given(st.floats(-1e3, 1e3), st.floats(1e-3, 10))
def test_discretize_brackets(x, rho):
    y = discretize(x, rho)
    assert y <= x + 1e-9 * max(1, abs(x))
    assert x < y + rho * (1 + 1e-9)


# -- specs and banks -------------------------------------------------------

def test_spec_validation():
    with pytest.raises(StructuralError):
        SimulatorSpec("bad", 1, (1.0,), (0.0,), transform=normal_transform)
    with pytest.raises(StructuralError):
        SimulatorSpec("bad", 2, (0.0,), (1.0,), transform=normal_transform)
    with pytest.raises(StructuralError):
        SimulatorSpec("bad", 1, (0.0,), (1.0,))


def test_get_simulator():
    assert get_simulator("gandk") is GANDK
    with pytest.raises(StructuralError):
        get_simulator("nope")


def test_simulate_batch_length_and_determinism():
    bank = NoiseBank.generate(7, 500)
    a = simulate_batch(GANDK, (3, 1, 2, 0.5), bank)
    b = simulate_batch(GANDK, (3, 1, 2, 0.5), bank)
    assert a.shape == (500, 1)
    np.testing.assert_array_equal(a, b)


def test_simulate_batch_bounds():
    bank = NoiseBank.generate(7, 10)
    with pytest.raises(PreconditionError):
        simulate_batch(NORMAL, (0.0, 0.0), bank)
    with pytest.raises(StructuralError):
        simulate_batch(NORMAL, (0.0, 1.0, 2.0), bank)


def test_data_only_model_cannot_be_simulated():
    with pytest.raises(PreconditionError):
        simulate_batch(STUDENT_T, (5.0,), NoiseBank.generate(0, 4))


def test_bank_is_read_only_and_reproducible():
    a, b = NoiseBank.generate(42, 1000), NoiseBank.generate(42, 1000)
    np.testing.assert_array_equal(a.draws, b.draws)
    assert len(a) == 1000
    with pytest.raises(ValueError):
        a.draws[0, 0] = 1.0


def test_bank_reproducible_across_processes():
    code = ("from bmrsw.simulators import *;"
            "print(repr(simulate_batch(NORMAL,(0,1),NoiseBank.generate(42,5)).ravel().tolist()))")
    out = [subprocess.run([sys.executable, "-c", code], capture_output=True, text=True, check=True).stdout
           for _ in range(2)]
    assert out[0] == out[1]
    here = simulate_batch(NORMAL, (0, 1), NoiseBank.generate(42, 5)).ravel().tolist()
    assert out[0].strip() == repr(here)


def test_seed_derivation_distinct_tags():
    draws = {tag: make_rng(derive_seed(5, 3, tag)).random() for tag in ("a", "b", "noise")}
    assert len(set(draws.values())) == 3
    assert make_rng(derive_seed(5, 3, "a")).random() == draws["a"]
    assert make_rng(derive_seed(5, 4, "a")).random() != draws["a"]


def test_common_random_numbers_make_objective_deterministic():
    data = generate_dataset(NORMAL, (0, 1), ContaminationSpec(), 50, 3)
    bank = NoiseBank.generate(9, 300)
    cfg = SgaConfig(iterations=300, lam=1.0)
    vals = [sga_estimate(data, simulate_batch(NORMAL, (0.2, 1.1), bank), cfg).estimate for _ in range(2)]
    assert vals[0] == vals[1]


# -- contamination ----------------------------------------------------------

def test_contamination_validation():
    with pytest.raises(ValueError):
        ContaminationSpec(epsilon=1.5, dirac=0.0)
    with pytest.raises(ValueError):
        ContaminationSpec(epsilon=0.1)
    with pytest.raises(ValueError):
        ContaminationSpec(rho=-1.0)


def test_clean_dataset_is_model_draws():
    data = generate_dataset(NORMAL, (1.0, 2.0), ContaminationSpec(), 100, 4)
    rng = make_rng(derive_seed(4, 0, "model"))
    np.testing.assert_array_equal(data.atoms, NORMAL.sample((1.0, 2.0), rng, 100))
    np.testing.assert_allclose(data.weights, 0.01)


def test_pure_contamination():
    data = generate_dataset(NORMAL, (0, 1), ContaminationSpec(epsilon=1.0, dirac=50.0), 200, 0)
    assert np.all(data.atoms == 50.0)


def test_contamination_fraction():
    data = generate_dataset(GANDK, (3, 1, 2, 0.5), ContaminationSpec(0.05, dirac=50.0), 10**5, 1)
    assert 0.045 <= np.mean(data.atoms == 50.0) <= 0.055


def test_discretised_dataset_on_grid():
    data = generate_dataset(GANDK, (3, 1, 2, 0.5), ContaminationSpec(0.05, 0.05, dirac=50.0), 2000, 2)
    cells = data.atoms / 0.05
    assert np.allclose(cells, np.round(cells), atol=1e-6)


def test_nested_contaminant():
    spec = ContaminationSpec(1.0, contaminant=NORMAL, contaminant_theta=(100.0, 0.5))
    data = generate_dataset(NORMAL, (0, 1), spec, 1000, 5)
    assert data.atoms.mean() == pytest.approx(100.0, abs=0.1)


def test_contamination_does_not_shift_model_noise():
    clean = generate_dataset(NORMAL, (0, 1), ContaminationSpec(), 500, 6)
    dirty = generate_dataset(NORMAL, (0, 1), ContaminationSpec(0.2, dirac=9.0), 500, 6)
    keep = dirty.atoms[:, 0] != 9.0
    np.testing.assert_array_equal(dirty.atoms[keep], clean.atoms[keep])


def test_clean_normal_moments():
    data = generate_dataset(NORMAL, (2.0, 3.0), ContaminationSpec(), 10**5, 7)
    x = data.atoms[:, 0]
    # standard errors 0.0095 and about 0.04
    assert x.mean() == pytest.approx(2.0, abs=5 * 3 / math.sqrt(1e5))
    assert x.var() == pytest.approx(9.0, abs=5 * 9 * math.sqrt(2 / 1e5))
