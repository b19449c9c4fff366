import numpy as np
import pytest
from scipy.stats import chisquare

from skewdiff.functionals import exit_stats_analytic
from skewdiff.media import InterfaceMedium
from skewdiff.network import (
    Edge,
    NetworkError,
    NetworkPosition,
    RiverNetwork,
    dispersal_kernel_mc,
    exponential_kernel_oracle,
    format_network,
    junction_frequencies,
    network_marginal_histogram,
    network_pde_crosscheck,
    parse_network,
    simulate_network_path,
)
from skewdiff.paths import ConfigError, SimConfig


def y_network(l=1.0, v=0.0, areas=(1.0, 1.0, 1.0), diffs=(1.0, 1.0, 1.0)):
    return RiverNetwork(
        (
            Edge("e0", None, l, v, areas[0], diffs[0]),
            Edge("e1", "e0", l, v, areas[1], diffs[1]),
            Edge("e2", "e0", l, v, areas[2], diffs[2]),
        )
    )


def test_network_validation():
    with pytest.raises(NetworkError):
        RiverNetwork((Edge("a", None, 1, 0, 1, 1), Edge("b", "a", 1, 0, 1, 1)))
    with pytest.raises(NetworkError):
        RiverNetwork((Edge("a", None, 1, 0, 1, 1), Edge("b", "zzz", 1, 0, 1, 1)))
    with pytest.raises(NetworkError):
        RiverNetwork(())
    net = y_network()
    assert net.root_edge == "e0"
    assert set(net.children("e0")) == {"e1", "e2"}


def test_parse_and_format_roundtrip():
    text = """
    # a three-edge Y
    e0 ROOT 2.0 0.5 1.0 1.0
    e1 e0 1.0 0.25 1.0 0.5
    e2 e0 1.5 0.25 1.0 2.0
    """
    net = parse_network(text)
    assert net.edge("e0").length == 2.0
    assert net.edge("e2").diffusivity == 2.0
    again = parse_network(format_network(net))
    assert again == net
    with pytest.raises(NetworkError):
        parse_network("e0 ROOT 1 0 1")


def test_discharge_imbalance_warn_only():
    net = y_network(v=1.0, areas=(2.0, 1.0, 1.0))
    assert net.discharge_imbalance()["e0"] == pytest.approx(0.0, abs=1e-12)
    net2 = y_network(v=1.0, areas=(1.0, 1.0, 1.0))
    # inflow 2, outflow 1: relative mismatch 0.5
    assert net2.discharge_imbalance()["e0"] == pytest.approx(0.5)


def test_single_edge_absorbed_fraction_matches_pde():
    # degenerate one-edge network: absorbed fraction at fixed t agrees with
    # the interval solver's mass decay
    net = RiverNetwork((Edge("e0", None, 2.0, 0.0, 1.0, 1.0),))
    start = NetworkPosition("e0", 0.8)
    t_end = 2.0
    sol = network_pde_crosscheck(net, start, t_end, h=0.005, dt=1e-3)
    cfg = SimConfig(n_paths=20000, dt=2e-4, horizon=t_end, seed=21, block_size=4096)
    counts, absorbed = network_marginal_histogram(net, start, t_end, cfg, n_bins_per_edge=8)
    expect = 1.0 - sol.mass[-1]
    assert abs(absorbed - expect) < 3 * np.sqrt(expect * (1 - expect) / cfg.n_paths) + 0.005


def test_junction_frequencies_weighted():
    # (A D) weights (1, 1, 2) -> (1/4, 1/4, 1/2)
    net = y_network(diffs=(1.0, 1.0, 2.0))
    cfg = SimConfig(n_paths=3000, dt=1e-3, horizon=2.0, seed=22, block_size=1024)
    stats = junction_frequencies(net, NetworkPosition("e0", 1.0), cfg)
    ids, counts, expected = stats.node_edge["e0"]
    counts = np.asarray(counts, float)
    total = counts.sum()
    assert total > 1e5
    freq = counts / total
    for f, p in zip(freq, expected):
        assert abs(f - p) < 3 * np.sqrt(p * (1 - p) / total)
    assert expected == pytest.approx((0.25, 0.25, 0.5))


def test_junction_frequencies_symmetric():
    net = y_network()
    cfg = SimConfig(n_paths=2000, dt=1e-3, horizon=2.0, seed=23, block_size=1024)
    stats = junction_frequencies(net, NetworkPosition("e0", 1.0), cfg)
    ids, counts, expected = stats.node_edge["e0"]
    counts = np.asarray(counts, float)
    freq = counts / counts.sum()
    for f in freq:
        assert abs(f - 1.0 / 3.0) < 3 * np.sqrt((1 / 3) * (2 / 3) / counts.sum())


def test_single_edge_kernel_matches_exponential():
    # long edge, start mid-edge, settling fast enough that ends are unreachable
    d, sigma = 1.0, 8.0
    net = RiverNetwork((Edge("e0", None, 10.0, 0.0, 1.0, d),))
    y = NetworkPosition("e0", 5.0)
    cfg = SimConfig(n_paths=100000, dt=2e-4, horizon=4.0, seed=24, block_size=20000)
    est = dispersal_kernel_mc(net, y, sigma, cfg, bin_width=0.1)
    assert est.total_mass() == pytest.approx(1.0, abs=1e-12)
    assert est.absorbed_fraction < 1e-4
    centers, mass = est.edges["e0"]
    expected = np.array(
        [
            exponential_kernel_oracle(d, sigma, 5.0, c) * 0.1
            for c in centers
        ]
    )
    keep = expected * cfg.n_paths > 10
    obs = mass[keep] * cfg.n_paths
    exp = expected[keep] * cfg.n_paths
    stat, p = chisquare(np.append(obs, cfg.n_paths - obs.sum()), np.append(exp, cfg.n_paths - exp.sum()))
    assert p > 0.001


def test_kernel_concentrates_for_large_sigma():
    d, sigma = 1.0, 200.0
    net = RiverNetwork((Edge("e0", None, 10.0, 0.0, 1.0, d),))
    y = NetworkPosition("e0", 5.0)
    cfg = SimConfig(n_paths=20000, dt=5e-5, horizon=0.5, seed=25, block_size=5000)
    est = dispersal_kernel_mc(net, y, sigma, cfg, bin_width=0.05)
    centers, mass = est.edges["e0"]
    near = np.abs(centers - 5.0) <= 3 * np.sqrt(d / sigma)
    assert mass[near].sum() > 0.95


def test_y_network_mc_vs_pde_histogram():
    net = y_network(l=1.0, v=0.2, diffs=(1.0, 0.5, 2.0), areas=(2.0, 1.0, 1.0))
    start = NetworkPosition("e0", 0.8)
    t_end = 0.6
    sol = network_pde_crosscheck(net, start, t_end, h=0.005, dt=5e-4)
    cfg = SimConfig(n_paths=100000, dt=2e-4, horizon=t_end, seed=26, block_size=20000)
    counts, absorbed = network_marginal_histogram(net, start, t_end, cfg, n_bins_per_edge=10)
    n = cfg.n_paths
    obs, exp = [], []
    for eid in ("e0", "e1", "e2"):
        obs.extend(counts[eid])
        exp.extend(sol.bin_masses(eid, 10) * n)
    obs.append(absorbed * n)
    exp.append((1.0 - sol.mass[-1]) * n)
    obs, exp = np.asarray(obs), np.asarray(exp)
    keep = exp > 20
    exp = exp * obs[keep].sum() / exp[keep].sum()
    stat, p = chisquare(obs[keep], exp[keep])
    assert p > 0.001


def test_pde_mass_accounting():
    net = y_network(l=1.0, v=0.3, diffs=(1.0, 0.5, 2.0))
    sol = network_pde_crosscheck(net, NetworkPosition("e0", 0.5), 0.5, h=0.01, dt=1e-3)
    # total mass decay equals the absorbed-at-root flux integral
    decay = sol.mass[0] - sol.mass[-1]
    assert abs(decay - sol.absorbed[-1]) < 1e-8
    assert sol.mass[0] == pytest.approx(1.0, abs=1e-9)


def test_pde_single_edge_reduces_to_interval_problem():
    from skewdiff.pde import delta_initial, make_grid, solve_interface_pde

    net = RiverNetwork((Edge("e0", None, 3.0, 0.0, 1.0, 1.5),))
    sol = network_pde_crosscheck(net, NetworkPosition("e0", 1.5), 0.4, h=0.01, dt=1e-3)
    med = InterfaceMedium(1.5, 1.5, 0.5)
    grid = make_grid(0.0, 3.0, 0.01, [1.5])
    ref = solve_interface_pde(
        med,
        grid,
        delta_initial(grid, 1.5),
        0.4,
        1e-3,
        bc=("dirichlet0", "neumann0"),
    )
    u_net = sol.edge_u["e0"]
    u_ref = ref.u[-1]
    assert np.abs(u_net - np.interp(sol.edge_x["e0"], grid.nodes, u_ref)).max() < 5e-3


def test_simulate_network_path_labels():
    net = y_network(l=1.0, v=0.1)
    cfg = SimConfig(n_paths=1, dt=1e-3, horizon=1.0, seed=27)
    path = simulate_network_path(net, NetworkPosition("e0", 0.9), cfg)
    assert path.edges is not None
    assert path.edges.shape == path.times.shape
    assert set(np.unique(path.edges)).issubset({0, 1, 2})


def test_step_size_guard():
    net = y_network(l=0.05)
    cfg = SimConfig(n_paths=10, dt=1e-2, horizon=0.1, seed=1)
    with pytest.raises(ConfigError):
        junction_frequencies(net, NetworkPosition("e0", 0.02), cfg)


def test_symmetric_subtree_exchange():
    # with identical parameters the two upstream edges receive statistically
    # exchangeable mass
    net = y_network(l=1.0, v=0.0, diffs=(1.0, 1.0, 1.0))
    cfg = SimConfig(n_paths=40000, dt=5e-4, horizon=0.5, seed=28, block_size=8192)
    counts, absorbed = network_marginal_histogram(
        net, NetworkPosition("e0", 1.0), 0.5, cfg, n_bins_per_edge=5
    )
    m1, m2 = counts["e1"].sum(), counts["e2"].sum()
    tot = m1 + m2
    assert abs(m1 / tot - 0.5) < 3 * np.sqrt(0.25 / tot)
