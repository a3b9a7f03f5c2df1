import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from repball.flows import make_system
from repball.measures import (
    C_MASS,
    DiscreteMeasure,
    FrostmanError,
    FrostmanState,
    MeasureError,
    bernoulli_lift,
    builtin_measures_for,
    check_mass_bounds,
    check_state_invariants,
    frostman_construct,
    lebesgue_lift,
    local_entropy_at,
    mass_constant,
    measure_of_ball,
    periodic_orbit,
    upper_local_entropy,
)
from repball.reparam import BallSpec, ball_contains

SHIFT = make_system("shift2")
TORUS = make_system("torus")
CAT = make_system("cat")
T_LIST = [2.0, 3.0, 4.0, 5.0, 6.0]


def test_measure_validation():
    with pytest.raises(MeasureError):
        DiscreteMeasure(np.empty((0, 2)), [])
    with pytest.raises(MeasureError):
        DiscreteMeasure(np.zeros((2, 2)), [1.0])
    with pytest.raises(MeasureError):
        DiscreteMeasure(np.zeros((2, 2)), [1.0, 0.0])


@given(st.lists(st.floats(0.01, 10.0), min_size=1, max_size=20), st.floats(0.05, 0.95))
def test_normalize_and_mix(ws, p):
    a = DiscreteMeasure(np.random.default_rng(0).random((len(ws), 2)), ws)
    assert a.normalized().total_mass == pytest.approx(1.0)
    b = DiscreteMeasure(np.zeros((1, 2)), [3.0])
    c = a.mix(b, p)
    assert c.total_mass == pytest.approx(1.0)
    assert c.weights[-1] == pytest.approx(1 - p)


def test_mix_rejects_bad_inputs():
    a = DiscreteMeasure(np.zeros((1, 2)), [1.0])
    with pytest.raises(MeasureError):
        a.mix(a, 1.0)
    with pytest.raises(MeasureError):
        a.mix(DiscreteMeasure(np.zeros((1, 3)), [1.0]), 0.5)


@pytest.mark.parametrize("name", ["torus", "shift2", "cat"])
def test_json_roundtrip(name):
    s = make_system(name)
    mu = DiscreteMeasure(s.sample(np.random.default_rng(1), 7), np.arange(1, 8) / 3.0, "m")
    back = DiscreteMeasure.from_json(s, mu.to_json(s))
    assert back.name == "m"
    np.testing.assert_array_equal(back.atoms, mu.atoms)
    np.testing.assert_array_equal(back.weights, mu.weights)


def test_builtins():
    assert builtin_measures_for(SHIFT) == ["bernoulli", "periodic"]
    assert builtin_measures_for(CAT) == ["lebesgue", "periodic"]
    assert builtin_measures_for(TORUS) == ["lebesgue"]
    with pytest.raises(MeasureError):
        bernoulli_lift(TORUS, 10, 0)
    with pytest.raises(MeasureError):
        lebesgue_lift(SHIFT, 10, 0)
    with pytest.raises(MeasureError):
        periodic_orbit(TORUS, 10)
    assert bernoulli_lift(SHIFT, 50, 3).total_mass == pytest.approx(1.0)


def test_periodic_atoms_on_one_orbit():
    mu = periodic_orbit(SHIFT, 40)
    # the orbit of ...0101... returns after time 2
    x = mu.atoms[0]
    y = SHIFT.evaluate(x, 2.0)
    assert SHIFT.metric(x, y) < 1e-9


@pytest.mark.parametrize("name", ["torus", "shift2", "cat"])
def test_ball_mass_matches_bruteforce(name):
    s = make_system(name)
    rng = np.random.default_rng(11)
    atoms = s.sample(rng, 40)
    # half the atoms sit near the center so the ball is not trivially empty
    c = atoms[0]
    atoms[20:] = [s.perturb(c, 0.1, rng) for _ in range(20)]
    mu = DiscreteMeasure(atoms, rng.random(40) + 0.1)
    ball = BallSpec(c, 3.0, 0.2)
    dt = 0.05
    want = sum(w for x, w in zip(mu.atoms, mu.weights) if ball_contains(s, ball, x, dt)[0])
    assert measure_of_ball(s, mu, ball, dt) == pytest.approx(want, abs=1e-12)


def test_ball_with_all_or_no_atoms():
    mu = DiscreteMeasure(np.array([[0.1, 0.2], [0.15, 0.2]]), [1.0, 2.0])
    assert measure_of_ball(TORUS, mu, BallSpec(np.array([0.12, 0.2]), 3.0, 0.1)) == pytest.approx(3.0)
    assert measure_of_ball(TORUS, mu, BallSpec(np.array([0.6, 0.7]), 3.0, 0.1)) == 0.0


def test_dirac_has_zero_entropy():
    x = SHIFT.sample(np.random.default_rng(2), 1)
    mu = DiscreteMeasure(x, [1.0])
    assert local_entropy_at(SHIFT, mu, x[0], 0.25, T_LIST) == (0.0, 0.0)


def test_atomless_center_rejected():
    mu = DiscreteMeasure(np.array([[0.1, 0.2]]), [1.0])
    with pytest.raises(MeasureError):
        local_entropy_at(TORUS, mu, np.array([0.6, 0.7]), 0.1, T_LIST)
    with pytest.raises(MeasureError):
        local_entropy_at(TORUS, mu, np.array([0.1, 0.2]), 0.1, [1.0, 2.0])


BERN = bernoulli_lift(SHIFT, 4000, 0)


@given(st.integers(0, 3999))
def test_local_entropy_bounds(i):
    lo, hi = local_entropy_at(SHIFT, BERN, BERN.atoms[i], 0.4, T_LIST)
    assert 0.0 <= lo <= hi


@given(st.integers(0, 3999))
def test_local_entropy_monotone_in_eps(i):
    # larger balls carry more mass, so the tail values can only drop
    x = BERN.atoms[i]
    big = [measure_of_ball(SHIFT, BERN, BallSpec(x, t, 0.5), 0.1) for t in T_LIST]
    small = [measure_of_ball(SHIFT, BERN, BallSpec(x, t, 0.3), 0.1) for t in T_LIST]
    assert all(b >= a for a, b in zip(small, big))


def test_bernoulli_ball_mass_decays():
    # cylinder masses halve per symbol: the fitted decay must be positive and below log 2 + margin
    u = [-math.log(measure_of_ball(SHIFT, BERN, BallSpec(BERN.atoms[0], t, 0.4))) for t in (2.0, 6.0)]
    rate = (u[1] - u[0]) / 4.0
    assert 0.3 < rate < 1.0


def test_upper_local_entropy_deterministic():
    a = upper_local_entropy(SHIFT, BERN, 0.4, T_LIST, 5, seed=3)
    b = upper_local_entropy(SHIFT, BERN, 0.4, T_LIST, 5, seed=3)
    assert a == b
    with pytest.raises(MeasureError):
        upper_local_entropy(SHIFT, BERN, 0.4, T_LIST, 0, seed=3)


def test_periodic_ball_mass_does_not_decay():
    # a closed orbit gives balls of constant mass, so the finite-t value is log(1/mass)/t
    per = periodic_orbit(SHIFT, 4000)
    x = per.atoms[100]
    masses = [measure_of_ball(SHIFT, per, BallSpec(x, t, 0.4)) for t in T_LIST]
    assert min(masses) > 0.1
    assert max(masses) - min(masses) < 0.02


def test_mixture_not_above_components():
    per = periodic_orbit(SHIFT, 4000)
    mix = BERN.mix(per, 0.5)
    h_b = upper_local_entropy(SHIFT, BERN, 0.4, T_LIST, 10, seed=1)
    h_m = upper_local_entropy(SHIFT, mix, 0.4, T_LIST, 20, seed=1)
    assert 0.0 <= h_m <= h_b + 0.1


# -- Frostman ---------------------------------------------------------------------


def test_mass_constant_converged():
    assert abs(mass_constant(40) - mass_constant(80)) < 1e-10
    assert C_MASS == pytest.approx(2.384231029, abs=1e-8)


@pytest.fixture(scope="module")
def frostman2():
    Z = SHIFT.sample(np.random.default_rng(5), 2000)
    return frostman_construct(SHIFT, Z, 0.3, 0.25, p_max=2, seed=0, n1=4.0, separation=0.125, local_draws=300)


def test_frostman_level_one_sum(frostman2):
    _, hist = frostman2
    assert 1.0 < hist[0].mu.total_mass < 2.0
    assert np.all(hist[0].m >= 4.0)


def test_frostman_invariants(frostman2):
    mu, hist = frostman2
    assert mu.total_mass == pytest.approx(1.0)
    assert check_state_invariants(hist) == []
    assert check_mass_bounds(SHIFT, hist) == []
    assert hist[1].gamma < hist[0].gamma / 4
    assert hist[1].m.min() >= hist[0].m.max()


def test_single_level_reports_nothing(frostman2):
    _, hist = frostman2
    assert check_mass_bounds(SHIFT, hist[:1]) == []
    assert check_state_invariants(hist[:1]) == []


def test_corrupted_history_reported(frostman2):
    _, hist = frostman2
    h2 = hist[1]
    w = h2.mu.weights.copy()
    w[h2.parent == 0] *= 3.0
    bad = FrostmanState(2, h2.K, h2.m, h2.gamma, DiscreteMeasure(h2.K, w), h2.s, h2.eps, h2.parent)
    assert check_state_invariants([hist[0], bad])
    assert check_mass_bounds(SHIFT, [hist[0], bad])


def test_frostman_to_dict(frostman2):
    _, hist = frostman2
    d = hist[1].to_dict(SHIFT)
    assert d["level"] == 2 and len(d["K"]) == len(d["weights"]) == len(d["parent"])


def test_frostman_argument_checks():
    Z = SHIFT.sample(np.random.default_rng(0), 10)
    with pytest.raises(ValueError):
        frostman_construct(SHIFT, Z, 0.3, 0.25, p_max=0)
    with pytest.raises(ValueError):
        frostman_construct(SHIFT, Z, 0.0, 0.25)


def test_frostman_insufficient_mass():
    # three samples and a large exponent cannot reach a level-one sum above 1
    Z = SHIFT.sample(np.random.default_rng(0), 3)
    with pytest.raises(FrostmanError) as exc:
        frostman_construct(SHIFT, Z, 2.0, 0.25, p_max=1, n1=4.0)
    assert exc.value.level == 1


def _synthetic_history(rng, s, levels):
    """Random nested history that satisfies the level constraints by construction."""
    n = int(rng.integers(1, 5))
    m = np.full(n, 2.0)
    w = np.exp(-m * s)
    # rescale durations so the level-one sum lands in (1, 2)
    target = rng.uniform(1.1, 1.9)
    m = m + np.log(w.sum() / target) / s
    hist = [FrostmanState(1, np.zeros((n, 2)), m, 0.5, DiscreteMeasure(np.zeros((n, 2)), np.exp(-m * s)), s, 0.25)]
    for lv in range(2, levels + 1):
        prev = hist[-1]
        K, mm, par = [], [], []
        cap = math.exp(-s * prev.m.max())
        for i, wi in enumerate(prev.mu.weights):
            total = wi * (1 + rng.uniform(0.1, 0.9) * 2.0**-lv)
            # equal split into enough children that every duration clears the previous maximum
            k = int(math.ceil(total / cap)) + int(rng.integers(0, 3))
            if k > 200:
                return None
            for _ in range(k):
                K.append(np.zeros(2))
                mm.append(-math.log(total / k) / s)
                par.append(i)
        mm = np.array(mm)
        st_ = FrostmanState(lv, np.array(K), mm, prev.gamma / 5, DiscreteMeasure(np.array(K), np.exp(-mm * s)), s, 0.25,
                            np.array(par))
        hist.append(st_)
    return hist


@given(st.integers(0, 2**32 - 1), st.floats(0.5, 3.0), st.integers(1, 3))
def test_state_invariants_on_synthetic_histories(seed, s, levels):
    rng = np.random.default_rng(seed)
    hist = _synthetic_history(rng, s, levels)
    if hist is None:
        return
    assert check_state_invariants(hist) == []
    if levels > 1:
        # pushing one child's mass above the parent bound is always reported
        bad = hist[-1]
        w = bad.mu.weights.copy()
        w[0] += hist[-2].mu.weights[bad.parent[0]]
        hist[-1] = FrostmanState(bad.level, bad.K, bad.m, bad.gamma, DiscreteMeasure(bad.K, w), s, 0.25, bad.parent)
        assert check_state_invariants(hist)


@given(st.integers(0, 3999), st.integers(0, 2**16))
def test_local_entropy_deterministic(i, seed):
    a = local_entropy_at(SHIFT, BERN, BERN.atoms[i], 0.4, T_LIST)
    assert a == local_entropy_at(SHIFT, BERN, BERN.atoms[i], 0.4, T_LIST)
