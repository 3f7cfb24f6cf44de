import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

import helpers
from markovmask import (classify_states, condition_bounds,
                        empirical_perturbation_check, errors, expect,
                        inverse_norm_2, mask_arrivals, mask_explicit,
                        mask_steps_to_absorption, mask_transition_set,
                        point_mass, setup, stability_bounds, validate_chain)
from markovmask.diagnostics import frobenius_T

U = 2.0 ** -53


def _cache(chain, start):
    cl = classify_states(chain)
    return setup(chain, cl, point_mass(chain, start)), cl


# --- inverse norm ---------------------------------------------------------------

def test_inverse_norm_c1(chain_c1):
    cache, _ = _cache(chain_c1, "t1")
    for method in ("svd", "power"):
        assert inverse_norm_2(cache, method) == pytest.approx(2.0, rel=1e-6)


def test_inverse_norm_c5(chain_c5):
    # largest singular value of [[2, 0], [1, 2]]: Gram eigenvalues (9 +- sqrt 17)/2
    cache, _ = _cache(chain_c5, "t1")
    want = (1 + math.sqrt(17)) / 2
    assert inverse_norm_2(cache, "svd") == pytest.approx(want, rel=1e-14)
    assert inverse_norm_2(cache, "power") == pytest.approx(want, rel=1e-6)


def test_inverse_norm_immediate_absorption():
    chain = validate_chain([[0.0, 0.0], [1.0, 1.0]])
    cache, _ = _cache(chain, 0)
    assert inverse_norm_2(cache) == 1.0


def test_inverse_norm_needs_transient_states(chain_cycle2):
    cl = classify_states(chain_cycle2)
    with pytest.raises(errors.NoTransientStates):
        inverse_norm_2(setup(chain_cycle2, cl, [1, 0]))


def test_power_iteration_matches_svd_beyond_exact_limit():
    rng = np.random.default_rng(7)
    t = 90
    T = np.zeros((t + 1, t + 1))
    T[:t, :t] = rng.random((t, t))
    T[t, :t] = 0.3 * T[:t, :t].sum(axis=0)
    T[t, t] = 1.0
    T /= T.sum(axis=0)
    chain = validate_chain(T)
    cache, _ = _cache(chain, 0)
    assert inverse_norm_2(cache, "power", rtol=1e-10, maxiter=2000) == pytest.approx(
        inverse_norm_2(cache, "svd"), rel=1e-6)


# --- condition numbers ----------------------------------------------------------

def test_condition_c1(chain_c1):
    cache, cl = _cache(chain_c1, "t1")
    rep = condition_bounds(chain_c1, mask_steps_to_absorption(cl), cache)
    assert rep.kappa == pytest.approx(math.sqrt(3), abs=1e-10)
    assert rep.kappa_T_bound == pytest.approx(math.sqrt(3) * (1 + 2 * math.sqrt(1.5)), rel=1e-12)
    assert rep.kappa_M_bound == rep.kappa_mu_bound == rep.kappa
    assert rep.expectation == pytest.approx(2.0)
    assert not rep.zero_expectation


def test_zero_expectation_flag(chain_c1):
    cache, _ = _cache(chain_c1, "t1")
    rep = condition_bounds(chain_c1, mask_transition_set(2, transitions=[]), cache)
    assert rep.zero_expectation and rep.kappa == math.inf
    d = rep.to_dict()
    assert d["kappa"] == "inf"
    json.dumps(d)


def test_condition_rejects_other_chain(chain_c1, chain_c5):
    cache, _ = _cache(chain_c5, "t1")
    with pytest.raises(errors.ChainMismatch):
        condition_bounds(chain_c1, mask_transition_set(2, transitions=[]), cache)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(0.01, 100))
def test_condition_properties(seed, alpha):
    rng = np.random.default_rng(seed)
    chain = validate_chain(helpers.random_reducible(rng)[0])
    cl = classify_states(chain)
    cache = setup(chain, cl, point_mass(chain, int(cl.transient_states[0])))
    M = helpers.random_cumulative_mask_matrix(rng, chain, cl)
    M[:, cl.transient_states[0]] += 0.1  # keep the expectation away from zero
    M[np.ix_(cl.ergodic_states, cl.ergodic_states)] = 0.0
    mask = mask_explicit(M, chain.n)
    rep = condition_bounds(chain, mask, cache)
    # assembled independently
    psi = expect(cache, mask).value
    inv = np.linalg.norm(np.linalg.inv(
        np.eye(cl.t) - chain.dense()[np.ix_(cl.transient_states, cl.transient_states)]), 2)
    want = np.linalg.norm(M) * np.linalg.norm(chain.dense()) * inv / abs(psi)
    assert rep.kappa == pytest.approx(want, rel=1e-12)
    assert rep.kappa_T_bound > rep.kappa >= 0
    assert -1 - 1e-12 <= rep.cos_theta <= 1 + 1e-12
    assert rep.frob_T == pytest.approx(frobenius_T(chain))
    scaled = condition_bounds(chain, mask_explicit(alpha * M, chain.n), cache)
    assert scaled.kappa == pytest.approx(rep.kappa, rel=1e-12)


# --- stability bounds -----------------------------------------------------------

def test_exact_arithmetic_gives_zero_bounds():
    rep = stability_bounds(50, precision=0.0)
    assert rep.applicable
    assert rep.gamma_tilde_n2 == rep.deltaT_bound == rep.deltaM_bound == 0.0


def test_stability_n2_c1():
    rep = stability_bounds(2, c=1)
    g4 = 4 * U / (1 - 4 * U)
    assert rep.gamma_tilde_n2 == g4
    assert rep.deltaT_bound == 2 * math.sqrt(2) * g4
    assert rep.gamma_tilde_n2 == pytest.approx(4.4409e-16, rel=1e-4)
    assert rep.deltaT_bound == pytest.approx(1.2561e-15, rel=1e-4)
    want_M = (1 + 2 * math.sqrt(2)) * g4 / math.sqrt(1 - 4 * math.sqrt(2) * g4)
    assert rep.deltaM_bound == want_M


def test_applicable_flag_flips():
    assert stability_bounds(10**4, c=12).applicable
    rep = stability_bounds(10**6, c=12)
    assert not rep.applicable and rep.deltaM_bound == math.inf
    assert not stability_bounds(10, precision="half").applicable
    assert stability_bounds(2, precision="single").applicable


def test_stability_rejects_bad_input():
    with pytest.raises(errors.ValidationError):
        stability_bounds(0)
    with pytest.raises(errors.ValidationError):
        stability_bounds(3, c=0.5)


@settings(max_examples=100, deadline=None)
@given(st.integers(1, 10**5), st.integers(1, 10**5), st.floats(1, 50), st.floats(1, 50))
def test_stability_monotone(n1, n2, c1, c2):
    lo = stability_bounds(min(n1, n2), c=min(c1, c2))
    hi = stability_bounds(max(n1, n2), c=max(c1, c2))
    for f in ("gamma_n2", "gamma_tilde_n2", "deltaT_bound", "deltaM_bound"):
        assert getattr(hi, f) >= getattr(lo, f)
    if lo.applicable and lo.u > 0:
        assert lo.deltaT_bound > 0 and math.isfinite(lo.deltaM_bound)


def test_stability_report_serializes():
    d = stability_bounds(10**6).to_dict()
    assert d["deltaM_bound"] == "inf" and d["c"] == 12
    json.dumps(d)


# --- empirical perturbations -----------------------------------------------------

@pytest.mark.parametrize("name", ["c1", "c5"])
def test_perturbation_ratios_within_bounds(name):
    chain = getattr(helpers, name)()
    cl = classify_states(chain)
    rep = empirical_perturbation_check(chain, mask_steps_to_absorption(cl),
                                       point_mass(chain, 0), delta=1e-8)
    assert rep.within_bounds
    assert rep.ratio_M_aligned == pytest.approx(1.0, rel=1e-5)


def test_zero_delta_gives_zero_ratios(chain_c5):
    cl = classify_states(chain_c5)
    rep = empirical_perturbation_check(chain_c5, mask_arrivals(cl, "t2"),
                                       [1, 0, 0], delta=0.0)
    assert rep.ratio_M == rep.ratio_T == rep.ratio_mu == 0.0


def test_perturbation_preconditions(chain_c5):
    cl = classify_states(chain_c5)
    with pytest.raises(errors.ValidationError):
        empirical_perturbation_check(chain_c5, mask_arrivals(cl, "t2"), [1, 0, 0],
                                     delta=1e-3)
    with pytest.raises(errors.ValidationError):
        empirical_perturbation_check(chain_c5, mask_transition_set(3, transitions=[]),
                                     [1, 0, 0])
