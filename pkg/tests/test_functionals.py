import numpy as np
import pytest

from skewdiff.functionals import (
    SimulationError,
    exit_stats_analytic,
    exit_stats_mc,
    first_passage_survival,
    homogeneous_survival,
    interval_occupations_mc,
    natural_local_time,
    natural_local_time_mc,
    natural_occupation_time,
    occupation_above,
    occupation_above_mc,
    occupation_balance_report,
    occupation_density_consistency,
    semimartingale_local_time_jump,
    semimartingale_local_time_jump_mc,
)
from skewdiff.media import InterfaceMedium, MultiMedium, alpha_of_lambda
from skewdiff.paths import PathSample, SimConfig, simulate_skew_diffusion


def test_exit_analytic_away_from_interface():
    m = InterfaceMedium.conservative(4.0, 1.0)
    st = exit_stats_analytic(m, 1.5, 2.0, 2.5)
    assert st.p_exit_left == pytest.approx(0.5, rel=1e-13)
    assert st.mean_exit_time == pytest.approx(0.5**2 / 4.0, rel=1e-13)


def test_exit_analytic_at_interface():
    m = InterfaceMedium.conservative(4.0, 1.0)
    st = exit_stats_analytic(m, -1.0, 0.0, 1.0)
    assert st.p_exit_left == pytest.approx(1.0 / 5.0, rel=1e-12)
    assert st.mean_exit_time == pytest.approx(2.0 / 5.0, rel=1e-12)
    st = exit_stats_analytic(InterfaceMedium.conservative(3.0, 1.0), -1.0, 0.0, 1.0)
    assert st.p_exit_left == pytest.approx(0.25, rel=1e-13)
    assert st.mean_exit_time == pytest.approx(0.5, rel=1e-13)
    assert st.p_exit_left + st.p_exit_right == pytest.approx(1.0, abs=1e-15)


def test_exit_analytic_general_lambda_sign():
    # exit probabilities follow the lam-weighted scale, not the diffusivities
    med = InterfaceMedium(4.0, 1.0, 0.5)
    st = exit_stats_analytic(med, -1.0, 0.0, 1.0)
    # s' ratio (1-lam)/lam = 1: equal one-sided scale lengths
    assert st.p_exit_right == pytest.approx(0.5, rel=1e-13)
    with pytest.raises(ValueError):
        exit_stats_analytic(med, 1.0, 0.0, -1.0)


def test_exit_mc_brackets_analytic_interface_case():
    med = InterfaceMedium.conservative(3.0, 1.0)
    ref = exit_stats_analytic(med, -1.0, 0.0, 1.0)
    cfg = SimConfig(n_paths=30000, dt=1e-3, horizon=12.0, seed=101, block_size=4096)
    st = exit_stats_mc(med, -1.0, 0.0, 1.0, cfg)
    assert abs(st.p_exit_left - ref.p_exit_left) < st.ci_p_left
    assert abs(st.mean_exit_time - ref.mean_exit_time) < st.ci_mean + 2e-3


def test_exit_mc_homogeneous_symmetric():
    med = InterfaceMedium(2.0, 2.0, 0.5)
    cfg = SimConfig(n_paths=20000, dt=1e-3, horizon=15.0, seed=102, block_size=4096)
    st = exit_stats_mc(med, -1.0, 0.0, 1.0, cfg)
    assert abs(st.p_exit_left - 0.5) < st.ci_p_left
    assert abs(st.mean_exit_time - 0.5) < st.ci_mean + 2e-3


def test_exit_mc_multi_medium_vs_analytic():
    mm = MultiMedium((-0.5, 0.5), (1.0, 4.0, 2.0))
    ref = exit_stats_analytic(mm, -1.0, 0.0, 1.0)
    cfg = SimConfig(n_paths=20000, dt=2e-4, horizon=10.0, seed=103, block_size=4096)
    st = exit_stats_mc(mm, -1.0, 0.0, 1.0, cfg)
    assert abs(st.p_exit_left - ref.p_exit_left) < st.ci_p_left
    assert abs(st.mean_exit_time - ref.mean_exit_time) < st.ci_mean + 2e-3


def test_exit_mc_short_horizon_raises():
    med = InterfaceMedium(1.0, 1.0, 0.5)
    cfg = SimConfig(n_paths=200, dt=1e-3, horizon=0.01, seed=104)
    with pytest.raises(SimulationError):
        exit_stats_mc(med, -5.0, 0.0, 5.0, cfg)


def test_survival_matches_homogeneous_reflection_formula():
    med = InterfaceMedium(2.0, 2.0, 0.5)
    t_grid = np.linspace(0.2, 2.0, 7)
    cfg = SimConfig(n_paths=30000, dt=1e-3, horizon=2.0, seed=105, block_size=8192)
    curve = first_passage_survival(med, 0.0, 1.5, t_grid, cfg)
    ref = homogeneous_survival(2.0, 0.0, 1.5, t_grid)
    assert np.all(np.abs(curve.survival - ref) < curve.ci + 0.004)
    assert np.all(np.diff(curve.survival) <= 0)


def test_survival_two_sided_ordering_conservative():
    # fine-to-coarse passage survives less at every t, and the coarse-to-fine
    # survival is bounded by sqrt(D+/D-) times the fine-to-coarse one
    med = InterfaceMedium.conservative(4.0, 1.0)
    t_grid = np.linspace(0.5, 4.0, 8)
    cfg = SimConfig(n_paths=40000, dt=2e-3, horizon=4.0, seed=106, block_size=8192)
    fc = first_passage_survival(med, -1.0, 1.0, t_grid, cfg)
    cf = first_passage_survival(med, 1.0, -1.0, t_grid, cfg)
    assert np.all(fc.survival + fc.ci < cf.survival - cf.ci)
    bound = np.sqrt(4.0) * fc.survival
    assert np.all(cf.survival - cf.ci < bound + fc.ci * 2)


def test_survival_skew_bm_ordering():
    # alpha < 1/2 hinders upward passage: P_y(H_-y > t) <= P_-y(H_y > t)
    # <= ((1-alpha)/alpha) P_y(H_-y > t)
    med = InterfaceMedium(1.0, 1.0, 1.0 / 3.0)  # skew BM with alpha = 1/3
    t_grid = np.linspace(0.5, 3.0, 6)
    cfg = SimConfig(n_paths=40000, dt=2e-3, horizon=3.0, seed=107, block_size=8192)
    up = first_passage_survival(med, -1.0, 1.0, t_grid, cfg)
    dn = first_passage_survival(med, 1.0, -1.0, t_grid, cfg)
    assert np.all(dn.survival - dn.ci < up.survival + up.ci)
    assert np.all(up.survival - up.ci < 2.0 * dn.survival + 2 * dn.ci)


def test_natural_occupation_time_full_line():
    path = PathSample(np.linspace(0, 2.0, 21), np.linspace(-1, 1, 21))
    assert natural_occupation_time(path, (-np.inf, np.inf)) == pytest.approx(2.0)
    # union of intervals
    assert natural_occupation_time(path, [(-np.inf, 0.0), (0.0, np.inf)]) == pytest.approx(2.0)


def test_natural_occupation_time_simple_interval():
    times = np.array([0.0, 1.0, 2.0, 3.0])
    positions = np.array([0.5, 1.5, 0.5, 9.0])
    path = PathSample(times, positions)
    # left endpoints: 0.5 in [0,1)? yes; 1.5 no; 0.5 yes -> 2 units
    assert natural_occupation_time(path, (0.0, 1.0)) == pytest.approx(2.0)


def test_mean_occupation_above_is_alpha_t():
    med = InterfaceMedium(4.0, 1.0, 0.37)
    a = alpha_of_lambda(med)
    t = 1.0
    cfg = SimConfig(n_paths=30000, dt=5e-3, horizon=t, seed=108)
    occ = occupation_above_mc(med, cfg)
    ci = 3 * occ.std(ddof=1) / np.sqrt(occ.size)
    assert abs(occ.mean() - a * t) < ci
    # batch-based estimator agrees with the streaming one
    batch = simulate_skew_diffusion(med, SimConfig(n_paths=4000, dt=5e-3, horizon=t, seed=108))
    occ_b = occupation_above(batch)
    ci_b = 3 * occ_b.std(ddof=1) / np.sqrt(occ_b.size)
    assert abs(occ_b.mean() - a * t) < ci_b


def test_occupation_balance_threshold():
    dp, dm = 4.0, 1.0
    thr = np.sqrt(dp) / (np.sqrt(dp) + np.sqrt(dm))
    media = [InterfaceMedium(dp, dm, lam) for lam in (thr - 0.1, thr, thr + 0.1)]
    cfg = SimConfig(n_paths=40000, dt=2e-3, horizon=1.0, seed=109)
    rows = occupation_balance_report(media, 1.0, cfg)
    assert [r.expected_sign for r in rows] == [-1, 0, 1]
    assert all(r.consistent for r in rows)


def test_occupation_balance_conservative_favors_volatile_side():
    med = InterfaceMedium.conservative(4.0, 1.0)
    cfg = SimConfig(n_paths=30000, dt=2e-3, horizon=1.0, seed=110)
    (row,) = occupation_balance_report([med], 1.0, cfg)
    assert row.expected_sign == 1
    assert row.mean_diff - row.ci > 0


def test_local_time_homogeneous_symmetric():
    med = InterfaceMedium(1.0, 1.0, 0.5)
    cfg = SimConfig(n_paths=30000, dt=1e-3, horizon=1.0, seed=111)
    est2 = natural_local_time_mc(med, 0.0, 0.1, cfg)
    est1 = natural_local_time_mc(med, 0.0, 0.05, cfg)
    assert abs(est2.ratio - 1.0) < est2.ci_ratio
    # occupation density has a unit-slope cusp at 0, so the eps-bin average
    # sits below the point value; Richardson in eps recovers the level
    # E Ltilde one-sided(0) = 2 alpha sqrt(2t/pi)
    level = 2 * 0.5 * np.sqrt(2 / np.pi)
    extrap = 2 * est1.l_plus - est2.l_plus
    assert extrap == pytest.approx(level, rel=0.03)


def test_local_time_conservative_continuous():
    # the one-sided ratio carries an eps-linear bias (one-sided bins sit at
    # offset centers, and the occupation density has nonzero one-sided
    # slopes); continuity at the conservative interface shows up as the
    # eps -> 0 extrapolated ratio being 1
    med = InterfaceMedium.conservative(4.0, 1.0)
    cfg = SimConfig(n_paths=30000, dt=2e-4, horizon=1.0, seed=112, block_size=8192)
    ratios = []
    for eps in (0.2, 0.1, 0.05):
        est = natural_local_time_mc(med, 0.0, eps, cfg)
        ratios.append((est.ratio, est.ci_ratio))
    # deviation from 1 shrinks roughly linearly in eps ...
    devs = np.array([abs(r - 1.0) for r, _ in ratios])
    assert devs[2] < devs[1] < devs[0]
    # ... and the Richardson-extrapolated ratio is 1 within CI
    extrap = 2 * ratios[2][0] - ratios[1][0]
    assert abs(extrap - 1.0) < 2 * ratios[2][1]
    # quadrature oracle for the finite-eps value itself (t=1): 1.015844
    assert ratios[2][0] == pytest.approx(1.015844, abs=ratios[2][1])


def test_local_time_ratio_general_lambda():
    # lam = 1/2 with (4,1): one-sided natural local time ratio tends to
    # sqrt(D-/D+) * alpha/(1-alpha) = 1/4
    med = InterfaceMedium(4.0, 1.0, 0.5)
    cfg = SimConfig(n_paths=40000, dt=2e-4, horizon=1.0, seed=113, block_size=8192)
    est = natural_local_time_mc(med, 0.0, 0.05, cfg)
    assert abs(est.ratio - 0.25) < est.ci_ratio + 0.02
    assert est.ratio + est.ci_ratio < 1.0  # clearly discontinuous


def test_local_time_analytic_level_conservative():
    # E l_plus = 2 alpha* sqrt(2t/pi) / sqrt(D+)
    med = InterfaceMedium.conservative(4.0, 1.0)
    cfg = SimConfig(n_paths=30000, dt=5e-4, horizon=1.0, seed=114, block_size=8192)
    est = natural_local_time_mc(med, 0.0, 0.05, cfg)
    level = 2 * (2.0 / 3.0) * np.sqrt(2 / np.pi) / 2.0
    assert est.l_plus == pytest.approx(level, rel=0.08)


def test_semimartingale_jump_ratio():
    med = InterfaceMedium.conservative(4.0, 1.0)
    cfg = SimConfig(n_paths=30000, dt=5e-4, horizon=1.0, seed=115, block_size=8192)
    r1, ci1 = semimartingale_local_time_jump_mc(med, 0.05, cfg)
    r2, ci2 = semimartingale_local_time_jump_mc(med, 0.1, cfg)
    # quadratic-variation weighting puts the jump at D+/D- (eps -> 0)
    extrap = 2 * r1 - r2
    assert abs(extrap - 4.0) < 2 * ci1 + ci2
    # natural-time ratio simultaneously extrapolates to 1
    e1 = natural_local_time_mc(med, 0.0, 0.05, cfg)
    e2 = natural_local_time_mc(med, 0.0, 0.1, cfg)
    assert abs(2 * e1.ratio - e2.ratio - 1.0) < 2 * e1.ci_ratio + e2.ci_ratio


def test_semimartingale_jump_homogeneous():
    med = InterfaceMedium(1.0, 1.0, 0.5)
    batch = simulate_skew_diffusion(med, SimConfig(n_paths=8000, dt=1e-3, horizon=1.0, seed=116))
    ratio, ci = semimartingale_local_time_jump(batch, med, 0.1)
    assert abs(ratio - 1.0) < ci


def test_occupation_density_consistency_off_interface():
    med = InterfaceMedium(1.0, 1.0, 0.5)
    batch = simulate_skew_diffusion(med, SimConfig(n_paths=6000, dt=1e-3, horizon=1.0, seed=117))
    rep = occupation_density_consistency(batch, (0.3, 1.1), 8)
    assert abs(rep.discrepancy) < rep.ci + 0.02 * rep.occupation


def test_occupation_density_consistency_spanning_interface():
    med = InterfaceMedium.conservative(4.0, 1.0)
    batch = simulate_skew_diffusion(med, SimConfig(n_paths=8000, dt=5e-4, horizon=1.0, seed=118))
    rep = occupation_density_consistency(batch, (-0.4, 0.4), 16)
    assert abs(rep.discrepancy) < rep.ci + 0.02 * rep.occupation


def test_occupation_density_consistency_refinement():
    med = InterfaceMedium(4.0, 1.0, 0.3)
    batch = simulate_skew_diffusion(med, SimConfig(n_paths=8000, dt=5e-4, horizon=1.0, seed=119))
    coarse = occupation_density_consistency(batch, (-0.4, 0.4), 8)
    fine = occupation_density_consistency(batch, (-0.4, 0.4), 16)
    assert abs(fine.discrepancy) <= abs(coarse.discrepancy) + fine.ci


def test_streaming_matches_batch_occupations():
    med = InterfaceMedium(4.0, 1.0, 0.7)
    cfg = SimConfig(n_paths=500, dt=0.01, horizon=1.0, seed=120, block_size=128)
    stream_occ = interval_occupations_mc(med, [(0.0, 0.5)], cfg)[0]
    batch = simulate_skew_diffusion(med, cfg)
    batch_occ = np.array([natural_occupation_time(p, (0.0, 0.5)) for p in batch])
    assert np.allclose(np.sort(stream_occ), np.sort(batch_occ))
