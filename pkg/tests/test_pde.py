import numpy as np
import pytest
from scipy.stats import norm

from skewdiff.densities import physical_density
from skewdiff.media import InterfaceMedium, MultiMedium
from skewdiff.pde import (
    Grid,
    PdeError,
    breakthrough_curve,
    delta_initial,
    make_grid,
    mass_series,
    preset_atw,
    preset_heat_conduction,
    solve_interface_pde,
)


def l2_error(grid, u, ref):
    h = np.diff(grid.nodes).mean()
    return np.sqrt(np.sum((u - ref) ** 2) * h)


def test_make_grid_interface_on_node():
    g = make_grid(-6.0, 6.0, 0.04, [0.0])
    assert 0.0 in g.nodes
    assert g.nodes[g.interface_indices[0]] == 0.0
    assert g.index_of(0.0) == g.interface_indices[0]
    with pytest.raises(PdeError):
        g.index_of(0.013)


def test_homogeneous_matches_heat_kernel():
    med = InterfaceMedium(1.0, 1.0, 0.5)
    grid = make_grid(-8.0, 8.0, 0.02, [0.0])
    u0 = delta_initial(grid, 0.0)
    sol = solve_interface_pde(med, grid, u0, t_end=0.5, dt=1e-4)
    ref = norm.pdf(grid.nodes, scale=np.sqrt(0.5))
    assert l2_error(grid, sol.u[-1], ref) < 2e-4


def test_conservative_delta_matches_physical_density_with_order():
    med = InterfaceMedium.conservative(4.0, 1.0)
    x0, t = 0.4, 0.5
    errs = []
    for h in (0.04, 0.02, 0.01):
        grid = make_grid(-8.0, 8.0, h, [0.0])
        sol = solve_interface_pde(med, grid, delta_initial(grid, x0), t_end=t, dt=0.25 * h * h)
        ref = physical_density(med, t, x0, grid.nodes)
        errs.append(l2_error(grid, sol.u[-1], ref))
    orders = np.log2(np.array(errs[:-1]) / np.array(errs[1:]))
    assert np.all(orders >= 1.8)


def test_mass_conserved_at_conservative_lambda():
    med = InterfaceMedium.conservative(4.0, 1.0)
    grid = make_grid(-6.0, 6.0, 0.05, [0.0])
    masses = mass_series(med, grid, delta_initial(grid, 0.25), t_end=0.5, dt=1e-3)
    per_step = np.abs(np.diff(masses)) / masses[0]
    assert per_step.max() < 1e-10


def test_mass_drifts_for_nonconservative_interface():
    med = preset_heat_conduction(2.0, 1.0, 4.0, 1.0)  # lam=2/3 while lam*=1/3
    assert med.lam == pytest.approx(2.0 / 3.0)
    assert med.d_plus == pytest.approx(0.5)
    grid = make_grid(-6.0, 6.0, 0.05, [0.0])
    masses = mass_series(med, grid, delta_initial(grid, 0.25), t_end=0.5, dt=1e-3)
    assert abs(masses[-1] - masses[0]) / masses[0] > 1e-6


def test_general_lambda_forward_sign_split():
    # forward mass on the plus side from a source at 0 approaches alpha(lam)
    from skewdiff.pde import forward_density

    med = InterfaceMedium(4.0, 1.0, 0.5)
    grid = make_grid(-8.0, 8.0, 0.02, [0.0])
    dens, cells, w = forward_density(med, grid, 0.0, t_end=0.5, dt=2e-4)
    plus = cells[grid.nodes > 0].sum()
    assert cells.sum() == pytest.approx(1.0, abs=1e-9)
    assert plus == pytest.approx(1.0 / 3.0, abs=3e-3)


def test_general_lambda_forward_density_matches_closed_form():
    from skewdiff.densities import skew_diffusion_density
    from skewdiff.pde import forward_density

    med = InterfaceMedium(4.0, 1.0, 0.3)
    grid = make_grid(-8.0, 8.0, 0.02, [0.0])
    dens, cells, w = forward_density(med, grid, 0.4, t_end=0.5, dt=1e-4)
    ref = skew_diffusion_density(med, 0.5, 0.4, grid.nodes)
    off_interface = np.abs(grid.nodes) > 0.05
    assert np.abs(dens[off_interface] - ref[off_interface]).max() < 2e-3


def test_breakthrough_symmetric_homogeneous():
    med = InterfaceMedium(1.0, 1.0, 0.5)
    grid = make_grid(-6.0, 6.0, 0.05, [0.0])
    sol_a = solve_interface_pde(med, grid, delta_initial(grid, -1.0), 0.5, 1e-3, n_snapshots=11)
    sol_b = solve_interface_pde(med, grid, delta_initial(grid, 1.0), 0.5, 1e-3, n_snapshots=11)
    t_a, curve_a = breakthrough_curve(sol_a, 1.0)
    t_b, curve_b = breakthrough_curve(sol_b, -1.0)
    assert np.allclose(curve_a, curve_b, rtol=1e-10, atol=1e-14)
    with pytest.raises(PdeError):
        breakthrough_curve(sol_a, 99.0)


def test_breakthrough_mirror_injections_coincide_at_conservative():
    # the symmetric kernel makes u(t, y | src -y) == u(t, -y | src y) exactly
    med = InterfaceMedium.conservative(4.0, 1.0)
    grid = make_grid(-8.0, 8.0, 0.04, [0.0])
    y = 1.0
    sol_fc = solve_interface_pde(med, grid, delta_initial(grid, -y), 2.0, 2e-3, n_snapshots=21)
    sol_cf = solve_interface_pde(med, grid, delta_initial(grid, y), 2.0, 2e-3, n_snapshots=21)
    _, up = breakthrough_curve(sol_fc, y)
    _, dn = breakthrough_curve(sol_cf, -y)
    assert np.allclose(up, dn, rtol=1e-9, atol=1e-13)


def test_breakthrough_interface_injection_leads_on_coarse_side():
    # from a source at the interface the concentration reaches +y (coarse)
    # before -y (fine); the asymmetry direction matches the first-passage
    # ordering of the two traversal directions
    med = InterfaceMedium.conservative(4.0, 1.0)
    grid = make_grid(-8.0, 8.0, 0.04, [0.0])
    y = 1.0
    sol = solve_interface_pde(med, grid, delta_initial(grid, 0.0), 2.0, 2e-3, n_snapshots=21)
    _, coarse = breakthrough_curve(sol, y)
    _, fine = breakthrough_curve(sol, -y)
    assert np.all(coarse[1:] > fine[1:])
    ref = np.array([physical_density(med, t, 0.0, y) for t in sol.t_snapshots[1:]])
    assert np.allclose(coarse[1:], ref, rtol=0.05)


def test_preset_heat_conduction_values():
    med = preset_heat_conduction(1.0, 1.0, 1.0, 1.0)
    assert med.lam == pytest.approx(0.5)
    assert med.d_plus == med.d_minus == pytest.approx(1.0)
    med = preset_heat_conduction(2.0, 1.0, 1.0, 1.0)
    assert med.lam == pytest.approx(2.0 / 3.0)
    assert med.d_plus == pytest.approx(2.0)
    assert med.d_minus == pytest.approx(1.0)
    with pytest.raises(ValueError):
        preset_heat_conduction(0.0, 1.0, 1.0, 1.0)


def test_preset_atw_values():
    med = preset_atw(1.0, -1.0, 2.0, 1.0)
    assert med.d_plus == pytest.approx(0.5)
    assert med.d_minus == pytest.approx(1.0)
    assert med.lam == pytest.approx(0.5)
    with pytest.raises(ValueError):
        preset_atw(1.0, 1.0, 1.0, 1.0)
    # homogeneous slopes give a homogeneous medium
    med = preset_atw(0.5, -2.0, 1.5, 1.5)
    assert med.d_plus == pytest.approx(med.d_minus)


def test_atw_interface_is_derivative_continuity():
    # lam = 1/2 makes u_x continuous: compare one-sided slopes at the node
    med = preset_atw(1.0, -1.0, 2.0, 1.0)
    grid = make_grid(-6.0, 6.0, 0.01, [0.0])
    sol = solve_interface_pde(med, grid, delta_initial(grid, 0.5), t_end=0.3, dt=1e-4)
    u = sol.u[-1]
    i = grid.interface_indices[0]
    h = 0.01
    left = (3 * u[i] - 4 * u[i - 1] + u[i - 2]) / (2 * h)
    right = (-3 * u[i] + 4 * u[i + 1] - u[i + 2]) / (2 * h)
    assert left == pytest.approx(right, abs=5e-3 * max(1.0, abs(left)))


def test_multi_medium_solver_runs_and_conserves():
    mm = MultiMedium((-1.0, 1.0), (1.0, 4.0, 1.0))
    grid = make_grid(-7.0, 7.0, 0.05, mm.interfaces)
    masses = mass_series(mm, grid, delta_initial(grid, 0.0), t_end=0.4, dt=1e-3)
    assert np.abs(np.diff(masses)).max() / masses[0] < 1e-10


def test_explicit_scheme_and_cfl():
    med = InterfaceMedium.conservative(4.0, 1.0)
    grid = make_grid(-5.0, 5.0, 0.1, [0.0])
    with pytest.raises(PdeError):
        solve_interface_pde(med, grid, delta_initial(grid, 0.0), 0.1, 1e-2, scheme="explicit")
    dt = 0.1 * 0.1 / (2 * 4.0) * 0.9
    n = round(0.1 / dt)
    sol = solve_interface_pde(
        med, grid, delta_initial(grid, 0.0), n * dt, dt, scheme="explicit"
    )
    imp = solve_interface_pde(med, grid, delta_initial(grid, 0.0), n * dt, dt)
    assert np.abs(sol.u[-1] - imp.u[-1]).max() < 0.05 * np.abs(imp.u[-1]).max()


def test_max_principle_and_nonnegativity():
    med = InterfaceMedium(4.0, 1.0, 0.3)
    grid = make_grid(-5.0, 5.0, 0.05, [0.0])
    sol = solve_interface_pde(
        med,
        grid,
        delta_initial(grid, 0.2),
        t_end=0.3,
        dt=1e-3,
        check_max_principle=True,
    )
    assert np.all(sol.u[-1] >= -1e-14)


def test_dirichlet_absorbs_mass():
    med = InterfaceMedium.conservative(2.0, 1.0)
    grid = make_grid(-2.0, 2.0, 0.05, [0.0])
    sol = solve_interface_pde(
        med,
        grid,
        delta_initial(grid, 0.0),
        t_end=1.0,
        dt=1e-3,
        bc=("dirichlet0", "dirichlet0"),
    )
    assert sol.mass[-1] < sol.mass[0]
    assert sol.boundary_outflow == pytest.approx(sol.mass[0] - sol.mass[-1], rel=1e-10)


def test_time_grid_validation():
    med = InterfaceMedium(1.0, 1.0, 0.5)
    grid = make_grid(-2.0, 2.0, 0.1, [0.0])
    with pytest.raises(PdeError):
        solve_interface_pde(med, grid, delta_initial(grid, 0.0), 0.35, 0.1)
