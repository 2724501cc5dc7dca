import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from superres.control_optimizer import (Objective, ObjectiveWeights, gradient_check,
                                        local_optimality_residual, optimize, seed_waveform)
from superres.control_protocols import make_c1, make_cpmg
from superres.filter_functions import ff_continuous_order2
from superres.signal_models import LorentzianNoise

DEFAULT = ObjectiveWeights(mu1=1000.0, mu2=1.0, mu3=2000.0, mu4=1.0, mu5=500.0)


def test_zero_drive_objective_is_free_evolution_curvature():
    obj = Objective(2, 1.0, 64, DEFAULT)
    val, bd = obj.evaluate(np.zeros(64))
    assert val == pytest.approx(-8 * math.pi ** 2 * 4, rel=1e-12)
    assert bd["raw"]["F2_centroid"] == pytest.approx(0.0, abs=1e-20)


def test_weights_validated():
    with pytest.raises(ValueError):
        ObjectiveWeights(mu1=-1.0)
    with pytest.raises(ValueError):
        ObjectiveWeights(mu3=math.nan)


def test_terms_add_up():
    obj = Objective(2, 1.0, 32, DEFAULT, LorentzianNoise(0.5, 0.1))
    c = np.random.default_rng(0).uniform(-1, 1, 32)
    val, bd = obj.evaluate(c)
    assert val == pytest.approx(sum(bd["terms"].values()))
    # amplitude and smoothness penalties are the discretized L2 norms
    assert bd["raw"]["norm_c"] == pytest.approx(np.sum(c * c) * obj.dt)


def test_curvature_term_matches_filter_function():
    obj = Objective(2, 1.0, 48, ObjectiveWeights())
    c = np.random.default_rng(1).uniform(-1, 1, 48)
    F, _, d2F = (v[0] for v in ff_continuous_order2(obj.protocol(c), [1.0]))
    raw = obj.evaluate(c)[1]["raw"]
    assert raw["F2_centroid"] == pytest.approx(F, rel=1e-10)
    assert raw["F2_d2"] == pytest.approx(d2F, rel=1e-10)


@settings(max_examples=5)
@given(st.integers(0, 2 ** 32 - 1))
def test_gradient_agrees_with_differences(seed):
    obj = Objective(2, 1.0, 24, DEFAULT, LorentzianNoise(0.5, 0.1))
    c = np.random.default_rng(seed).uniform(-1, 1, 24)
    assert gradient_check(obj, c, rng=seed, n_checks=8) < 1e-5


def test_projection_restores_superresolution():
    obj = Objective(2, 1.0, 32, DEFAULT)
    c = seed_waveform(32, 0) + 0.1 * np.random.default_rng(2).standard_normal(32)
    assert np.linalg.norm(obj.constraint(c)) > 1e-3
    cp, res = obj.project(c)
    assert res < 1e-11
    # already on the manifold: projection is the identity
    cq, _ = obj.project(cp)
    np.testing.assert_array_equal(cq, cp)


def test_seed_waveform():
    c = seed_waveform(16, 3)
    assert np.sum(c != -0.5) == 1 and -0.5 <= c[8] <= 0.5
    assert seed_waveform(16, v=0.2)[8] == 0.2


def test_short_optimization_improves_and_stays_on_manifold():
    obj = Objective(2, 1.0, 32, DEFAULT, LorentzianNoise(1.0, 0.1))
    seed = seed_waveform(32, 0)
    r1 = optimize(obj, seed, iterations=25, trace=True)
    r2 = optimize(obj, seed, iterations=25)
    assert r1.final_objective < obj.value(obj.project(seed)[0])
    assert r1.constraint_residual < 1e-11
    assert r1.final_objective == r2.final_objective
    assert len(r1.trace) >= 1 and r1.to_dict()["protocol"]["kind"] == "custom"


def test_optimality_residual():
    _, r, m = local_optimality_residual(make_cpmg(2))
    assert m < 1e-12
    _, r, m = local_optimality_residual(make_c1(2))
    assert m > 1e-3 and np.all(np.isfinite(r))
