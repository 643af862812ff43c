import math

import numpy as np
import pytest

from fedchan import synth
from fedchan.synth import LOS, NLOS, NOLINK


@pytest.fixture
def alpha():
    return synth.DEFAULT_PROFILES["alpha"]


def _cond(d, dz=0.0, gnb="terrestrial"):
    return synth.make_condition(d, 0.0, dz, gnb)


# -- profiles and conditions ---------------------------------------------------

def test_profile_invariants():
    with pytest.raises(ValueError):
        synth.CityProfile("x", 60, 2.5, 2.0, 100, 1, 0.01, 300)
    with pytest.raises(ValueError):
        synth.CityProfile("x", 60, 2.0, 2.5, 100, -1, 0.01, 300)
    for p in synth.DEFAULT_PROFILES.values():
        assert p.slope2 > p.slope1 > 0


def test_fspl_intercept_at_28ghz():
    # 20 log10(4 pi f / c) with f = 28 GHz
    assert synth.fspl_intercept() == pytest.approx(61.39, abs=0.01)


def test_condition_layout():
    c = synth.make_condition(1.0, 2.0, 3.0, "aerial")
    assert c.shape == (5,)
    np.testing.assert_array_equal(c, [1, 2, 3, 0, 1])
    with pytest.raises(ValueError):
        synth.make_condition(0, 0, 0, "satellite")


# -- link states ---------------------------------------------------------------

def test_state_probabilities_sum_to_one(alpha, rng):
    c = np.column_stack([rng.uniform(-900, 900, (500, 2)), rng.choice([5.0, 110.0], 500),
                         np.tile([[1, 0], [0, 1]], (250, 1))])
    p = synth.state_probabilities(alpha, c)
    np.testing.assert_allclose(p.sum(axis=1), 1.0, atol=1e-12)
    assert np.all(p >= 0)


def test_near_zero_distance_is_los(alpha):
    p = synth.state_probabilities(alpha, _cond(1e-6))[0]
    assert p[LOS] > 1 - 1e-6


def test_far_links_are_nolink(alpha):
    # smoothstep saturates at 2 R, so 10 R is NoLink with probability one
    p = synth.state_probabilities(alpha, _cond(10 * alpha.nolink_range))[0]
    assert p[NOLINK] > 0.99
    rng = np.random.default_rng(0)
    draws = [synth.sample_link_state(alpha, _cond(10 * alpha.nolink_range, 50), rng) for _ in range(500)]
    assert np.mean(np.array(draws) == NOLINK) > 0.99


def test_nolink_zero_inside_half_range(alpha):
    p = synth.state_probabilities(alpha, _cond(0.49 * alpha.nolink_range))[0]
    assert p[NOLINK] == 0.0


@pytest.mark.parametrize("dz", [20.0, 110.0])
def test_los_non_increasing_in_distance(alpha, dz):
    d = np.linspace(1, 3 * alpha.nolink_range, 10)
    c = np.column_stack([d, np.zeros(10), np.full(10, dz), np.ones(10), np.zeros(10)])
    p_los = synth.state_probabilities(alpha, c)[:, LOS]
    assert np.all(np.diff(p_los) <= 0)


def test_sample_link_state_rejects_coincident_positions(alpha, rng):
    with pytest.raises(ValueError):
        synth.sample_link_state(alpha, _cond(0.0), rng)


def test_state_sequence_is_seeded(alpha):
    c = _cond(300, 50)
    a = [synth.sample_link_state(alpha, c, np.random.default_rng(5)) for _ in range(3)]
    r1, r2 = np.random.default_rng(9), np.random.default_rng(9)
    s1 = [synth.sample_link_state(alpha, c, r1) for _ in range(50)]
    s2 = [synth.sample_link_state(alpha, c, r2) for _ in range(50)]
    assert s1 == s2 and len(set(a)) == 1


def test_hard_states_pick_most_likely(alpha):
    hard = synth.CityProfile(**{**synth.profile_dict(alpha), "hard_states": True})
    rng = np.random.default_rng(0)
    c = _cond(100, 50)
    p = synth.state_probabilities(hard, c)[0]
    assert {synth.sample_link_state(hard, c, rng) for _ in range(20)} == {int(p.argmax())}


# -- paths ---------------------------------------------------------------------

def test_nolink_paths_raise(alpha, rng):
    with pytest.raises(ValueError):
        synth.sample_paths(alpha, _cond(50), NOLINK, rng)


def test_los_strongest_path_is_exact_without_shadowing(alpha, rng):
    p = synth.CityProfile(**{**synth.profile_dict(alpha), "shadow_sigma": 0.0})
    d = 0.5 * p.d_break
    v = synth.sample_paths(p, _cond(d), LOS, rng)
    assert v[0] == pytest.approx(p.pl0 + 10 * p.slope1 * math.log10(d), abs=1e-9)
    assert v[synth.PL_COLUMNS].min() == v[0]


def test_path_vector_invariants(rng):
    for profile in synth.DEFAULT_PROFILES.values():
        ds = synth.generate_city(profile, 3000, seed=int(rng.integers(1 << 30)))
        v = ds.paths.reshape(-1, synth.N_PATHS, synth.N_PARAMS)
        assert v[..., 0].max() <= 200.0
        assert np.all(v[..., 1] >= 0)
        assert np.all((v[..., 2] >= -180) & (v[..., 2] < 180))
        assert np.all((v[..., 4] >= -180) & (v[..., 4] < 180))
        assert np.all(np.abs(v[..., 3]) <= 90) and np.all(np.abs(v[..., 5]) <= 90)
        # excess losses are ordered behind the strongest path
        assert np.all(np.diff(v[..., 0], axis=1) >= 0)
        nolink = ds.states == NOLINK
        np.testing.assert_array_equal(ds.paths[nolink], np.tile(synth.sentinel_paths(), (nolink.sum(), 1)))


def test_million_path_losses_respect_ceiling():
    # 50k links x 20 slots = 10^6 path losses, with a very lossy profile
    lossy = synth.CityProfile("lossy", pl0=120.0, slope1=2.5, slope2=4.0, d_break=50, shadow_sigma=10,
                              los_decay=0.01, nolink_range=400, seed=3, nlos_offset=25)
    ds = synth.generate_city(lossy, 50_000)
    pl = ds.paths[:, synth.PL_COLUMNS]
    assert pl.size == 1_000_000
    assert pl.max() <= 200.0 and np.any(pl[ds.states != NOLINK] == 200.0)


def test_delays_consistent_with_distance(alpha, rng):
    c = synth.make_condition(300.0, 400.0, 50.0, "aerial")
    v = synth.sample_paths(alpha, c, NLOS, rng).reshape(synth.N_PATHS, synth.N_PARAMS)
    d = math.sqrt(300 ** 2 + 400 ** 2 + 50 ** 2)
    used = v[:, 0] < 200
    assert np.all(v[used, 1] >= d / synth.LIGHT_M_PER_NS)


def test_nlos_dual_slope_mean_difference(alpha):
    rng = np.random.default_rng(42)
    n = 10_000
    near = np.tile(_cond(alpha.d_break / 2), (n, 1))
    far = np.tile(_cond(alpha.d_break * 2), (n, 1))
    nlos = np.full(n, NLOS)
    a = synth._sample_paths_batch(alpha, near, nlos, rng)[:, 0].mean()
    b = synth._sample_paths_batch(alpha, far, nlos, rng)[:, 0].mean()
    expected = 10 * alpha.slope1 * math.log10(4) + 10 * alpha.slope2 * math.log10(2)
    assert abs((b - a) - expected) <= 0.05 * expected


def test_dual_slope_visible_in_regression(alpha):
    # fit slope vs log10(d) separately below and above the break
    rng = np.random.default_rng(7)
    n = 4000
    d_lo = rng.uniform(20, alpha.d_break, n)
    d_hi = rng.uniform(alpha.d_break, 6 * alpha.d_break, n)
    slopes, errs = [], []
    for d in (d_lo, d_hi):
        c = np.column_stack([d, np.zeros(n), np.zeros(n), np.ones(n), np.zeros(n)])
        y = synth._sample_paths_batch(alpha, c, np.full(n, NLOS), rng)[:, 0]
        x = np.log10(d)
        A = np.column_stack([x, np.ones(n)])
        coef, res, *_ = np.linalg.lstsq(A, y, rcond=None)
        sigma2 = res[0] / (n - 2)
        se = math.sqrt(sigma2 / np.sum((x - x.mean()) ** 2))
        slopes.append(coef[0])
        errs.append(se)
    assert slopes[1] - slopes[0] > 2 * math.hypot(*errs)
    assert slopes[0] == pytest.approx(10 * alpha.slope1, rel=0.1)
    assert slopes[1] == pytest.approx(10 * (alpha.slope1 + alpha.slope2), rel=0.1)


# -- city generation -------------------------------------------------------------

def test_generate_city_counts_and_heights(alpha):
    ds = synth.generate_city(alpha, 2500)
    assert len(ds) == 2500 and ds.n_train == 2500
    height = ds.conditions[:, 2] + np.where(ds.conditions[:, 4] > 0.5, 25.0, 10.0)
    assert set(np.round(height, 9)) == {30.0, 60.0, 90.0, 120.0}
    assert ds.conditions[:, 3].sum() > 0 and ds.conditions[:, 4].sum() > 0
    np.testing.assert_array_equal(ds.conditions[:, 3] + ds.conditions[:, 4], 1.0)


def test_paper_scale_record_count():
    ds = synth.generate_city(synth.DEFAULT_PROFILES["alpha"], synth.PAPER_LINKS["alpha"])
    assert len(ds) == 36000


@pytest.mark.parametrize("city", list(synth.DEFAULT_PROFILES))
def test_default_profiles_mix_all_states(city):
    ds = synth.generate_city(synth.DEFAULT_PROFILES[city], 5000)
    frac = np.bincount(ds.states, minlength=3) / len(ds)
    assert 0 < frac[NOLINK] < 1
    assert np.all(frac >= 0.10)


def test_generation_errors(alpha):
    with pytest.raises(ValueError):
        synth.generate_city(alpha, 0)
    with pytest.raises(ValueError):
        synth.generate_city(alpha, 10, heights=())


def test_generation_is_deterministic_and_worker_independent(alpha, tmp_path):
    a = synth.generate_city(alpha, 2300, seed=5)
    b = synth.generate_city(alpha, 2300, seed=5, workers=3)
    synth.write_dataset(a, tmp_path / "a.csv")
    synth.write_dataset(b, tmp_path / "b.csv")
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()
    c = synth.generate_city(alpha, 2300, seed=6)
    assert not np.array_equal(a.states, c.states)


# -- split --------------------------------------------------------------------------

def test_split_counts_and_stratification(alpha):
    ds = synth.generate_city(alpha, 1000)
    train, test = synth.split_train_test(ds, 0.2, np.random.default_rng(0))
    assert (len(train), len(test)) == (800, 200)
    assert train.n_train == 800 and test.n_test == 200
    overall = np.bincount(ds.states, minlength=3)
    in_test = np.bincount(test.states, minlength=3)
    assert np.all(np.abs(in_test - 0.2 * overall) <= 2)
    # disjoint and exhaustive: the rows of both parts recombine to the original multiset
    both = np.vstack([train.paths, test.paths])
    assert np.array_equal(np.sort(both[:, 1]), np.sort(ds.paths[:, 1]))


def test_split_disjoint_indices(alpha):
    ds = synth.generate_city(alpha, 777)
    ds.conditions[:, 0] = np.arange(777)  # tag each record
    train, test = synth.split_train_test(ds, 0.3, np.random.default_rng(1))
    ids = np.concatenate([train.conditions[:, 0], test.conditions[:, 0]])
    assert sorted(ids) == list(range(777))
    assert len(test) == round(0.3 * 777)


def test_split_is_seeded_and_validates(alpha):
    ds = synth.generate_city(alpha, 500)
    a = synth.split_train_test(ds, 0.2, np.random.default_rng(3))[1]
    b = synth.split_train_test(ds, 0.2, np.random.default_rng(3))[1]
    np.testing.assert_array_equal(a.conditions, b.conditions)
    for f in (0.0, 1.0, -0.1):
        with pytest.raises(ValueError):
            synth.split_train_test(ds, f, np.random.default_rng(0))


# -- scaler -------------------------------------------------------------------------

def test_scaler_midpoint_and_constant_dims():
    s = synth.FeatureScaler(np.array([100.0, 5.0]), np.array([200.0, 5.0]))
    np.testing.assert_array_equal(s.apply([150.0, 5.0]), [0.0, 0.0])
    np.testing.assert_array_equal(s.apply([[100.0, 5.0], [200.0, 5.0]]), [[-1, 0], [1, 0]])
    np.testing.assert_array_equal(s.invert([0.0, 0.7]), [150.0, 5.0])
    with pytest.raises(ValueError):
        synth.FeatureScaler(np.array([1.0]), np.array([0.0]))


def test_scaler_round_trip_on_records(alpha):
    ds = synth.generate_city(alpha, 1000)
    s = synth.fit_scaler(ds)
    x = np.hstack([ds.conditions, ds.paths])
    y = s.apply(x)
    assert y.min() >= -1 and y.max() <= 1
    assert np.abs(s.invert(y) - x).max() < 1e-9
    np.testing.assert_allclose(s.unscale_paths(s.scale_paths(ds.paths)), ds.paths, rtol=0, atol=1e-9)
    again = synth.FeatureScaler.from_dict(s.to_dict())
    np.testing.assert_array_equal(again.lo, s.lo)


def test_merge_scalers_covers_both():
    a = synth.FeatureScaler(np.array([0.0, 1.0]), np.array([2.0, 3.0]))
    b = synth.FeatureScaler(np.array([-1.0, 2.0]), np.array([1.0, 5.0]))
    m = synth.merge_scalers([a, b])
    np.testing.assert_array_equal(m.lo, [-1, 1])
    np.testing.assert_array_equal(m.hi, [2, 5])


# -- CSV ------------------------------------------------------------------------------

def test_csv_schema_and_round_trip(alpha, tmp_path):
    ds = synth.generate_city(alpha, 300)
    train, test = synth.split_train_test(ds, 0.2, np.random.default_rng(0))
    path = synth.write_dataset(synth.combine_split(train, test), tmp_path / "alpha.csv", {"seed_note": 1})
    header = path.read_text().splitlines()[0].split(",")
    assert len(header) == 126
    assert header[:8] == ["city", "gnb_type", "dx", "dy", "dz", "state", "p01_pl", "p01_delay"]
    assert header[-1] == "p20_aod_el"
    meta = path.with_suffix(".meta").read_text()
    assert "frequency_ghz=28.0" in meta and "seed=11" in meta
    back = synth.read_dataset(path)
    assert back.profile == alpha
    assert (back.n_train, back.n_test) == (240, 60)
    np.testing.assert_array_equal(back.conditions, np.vstack([train.conditions, test.conditions]))
    np.testing.assert_array_equal(back.paths, np.vstack([train.paths, test.paths]))
    np.testing.assert_array_equal(back.test().states, test.states)


def test_csv_errors_name_the_line(alpha, tmp_path):
    ds = synth.generate_city(alpha, 5)
    path = synth.write_dataset(ds, tmp_path / "a.csv")
    lines = path.read_text().splitlines()
    path.write_text("\n".join(lines[:3] + [lines[3][:40]]) + "\n")
    with pytest.raises(synth.DatasetError, match=r"a\.csv:4"):
        synth.read_dataset(path)
    bad = lines[:2] + [lines[2].replace(",", ",x", 1)]
    path.write_text("\n".join(bad) + "\n")
    with pytest.raises(synth.DatasetError, match=r":3"):
        synth.read_dataset(path)
