import numpy as np
import pytest

from untangled.errors import DataError
from untangled.field import SpatialDomain, TimeGrid, make_field, make_scalar
from untangled.galerkin import (
    apply_adjoint,
    assemble_from_flow,
    assemble_system,
    discrete_inf_sup,
    galerkin_orthogonality_defect,
    l2_norm,
    make_test_space,
    raw_hat_inf_sup,
    residual_norm,
    solve,
    graph_norm,
    trial_to_test,
)
from untangled.select import classical_flow
from untangled.transport import pull_back_data, solve_characteristic_ode


def gauss4_inner(space, coeffs_a, coeffs_b, C_const):
    """Oracle: <B*a, B*b> with a 4-point Gauss rule per cell (exact for the
    polynomial integrand when C is constant)."""
    nodes = np.array([-0.861136311594053, -0.339981043584856,
                      0.339981043584856, 0.861136311594053])
    weights = np.array([0.347854845137454, 0.652145154862546,
                        0.652145154862546, 0.347854845137454])
    total = 0.0
    mesh = space.time_mesh
    for a, b in zip(mesh[:-1], mesh[1:]):
        tq = 0.5 * (a + b) + 0.5 * (b - a) * nodes
        wq = 0.5 * (b - a) * weights
        va = coeffs_a @ space.basis_values(tq) * C_const \
            - coeffs_a @ space.basis_slopes(tq)
        vb = coeffs_b @ space.basis_values(tq) * C_const \
            - coeffs_b @ space.basis_slopes(tq)
        total += float(np.sum(wq * va * vb))
    return total


def test_apply_adjoint_hat_slopes():
    space = make_test_space(0.0, 1.0, 4)
    tq, _ = space.quadrature()
    coeffs = np.zeros(space.n_basis)
    coeffs[2] = 1.0
    got = apply_adjoint(space, coeffs, np.zeros_like(tq))
    # -v' is -4 on the rising cell of the hat and +4 on the falling cell
    rising = (tq > 0.25) & (tq < 0.5)
    falling = (tq > 0.5) & (tq < 0.75)
    assert np.allclose(got[rising], -4.0)
    assert np.allclose(got[falling], 4.0)
    assert np.allclose(got[tq > 0.75], 0.0)


def test_apply_adjoint_one_cell_formula():
    # v(t) = 1 - t/T on a single cell with C = 1: B*v = 1/T + (1 - t/T)
    space = make_test_space(0.0, 1.0, 1)
    tq, _ = space.quadrature()
    got = apply_adjoint(space, np.array([1.0]), np.ones_like(tq))
    assert np.allclose(got, 1.0 + (1.0 - tq), atol=1e-14)


def test_quadrature_matches_four_point_gauss():
    # 2-point Gauss is already exact for the degree <= 2 integrand
    space = make_test_space(0.0, 1.0, 8)
    tq, wq = space.quadrature()
    rng = np.random.default_rng(0)
    a, b = rng.normal(size=(2, space.n_basis))
    for C in (0.0, 1.0):
        sys_ = assemble_system(space, np.full((1, tq.size), C),
                               np.zeros((1, tq.size)), np.array([0.0]))
        two_pt = float(a @ sys_.gram[0] @ b)
        four_pt = gauss4_inner(space, a, b, C)
        assert two_pt == pytest.approx(four_pt, abs=1e-12)


def test_assemble_single_cell_hand_integral():
    # G = [<v', v'>] = [1] for the one-cell mesh on [0, 1] with C = 0
    space = make_test_space(0.0, 1.0, 1)
    tq, _ = space.quadrature()
    sys_ = assemble_system(space, np.zeros((1, tq.size)),
                           np.zeros((1, tq.size)), np.array([1.0]))
    assert sys_.gram[0] == pytest.approx(np.array([[1.0]]))
    # F = 0, U0 = 1: the load is the initial trace v_0(0) = 1
    assert sys_.load[0] == pytest.approx(np.array([1.0]))


def test_assemble_blocks_identical_across_nodes():
    space = make_test_space(0.0, 1.0, 8)
    tq, _ = space.quadrature()
    C = np.tile(1.0 + 0.2 * np.sin(tq), (2, 1))
    F = np.tile(np.cos(tq), (2, 1))
    sys_ = assemble_system(space, C, F, np.array([1.0, 1.0]))
    assert np.allclose(sys_.gram[0], sys_.gram[1])
    assert np.allclose(sys_.load[0], sys_.load[1])


def test_solve_exponential_decay_first_order():
    errs = []
    for M in (16, 32, 64):
        space = make_test_space(0.0, 1.0, M)
        tq, _ = space.quadrature()
        sys_ = assemble_system(space, np.ones((1, tq.size)),
                               np.zeros((1, tq.size)), np.array([1.0]))
        out = solve(sys_)
        errs.append(l2_norm(sys_, out["U_h"] - np.exp(-tq)[None, :]))
    assert errs[0] / errs[1] >= 1.8
    assert errs[1] / errs[2] >= 1.8


def test_solve_exact_recovery_of_trial_element():
    space = make_test_space(0.0, 1.0, 16)
    tq, _ = space.quadrature()
    C = 1.0 + 0.3 * np.sin(2 * np.pi * tq)
    rng = np.random.default_rng(3)
    target = rng.normal(size=space.n_basis)
    sys_ = assemble_system(space, C[None, :], np.zeros((1, tq.size)),
                           np.array([0.0]))
    sys_.load[0] = sys_.gram[0] @ target  # manufactured right-hand side
    out = solve(sys_)
    assert np.max(np.abs(out["coeffs"][0] - target)) <= 1e-10


def test_solve_zero_data_zero_solution():
    space = make_test_space(0.0, 1.0, 8)
    tq, _ = space.quadrature()
    sys_ = assemble_system(space, np.ones((1, tq.size)),
                           np.zeros((1, tq.size)), np.array([0.0]))
    out = solve(sys_)
    assert np.max(np.abs(out["U_h"])) == 0.0


@pytest.fixture
def assembled_system():
    space = make_test_space(0.0, 1.0, 32)
    tq, _ = space.quadrature()
    C = 1.0 + 0.4 * np.cos(3 * tq)
    F = 0.5 + 0.2 * np.sin(2 * tq)
    return assemble_system(space, C[None, :], F[None, :], np.array([1.0]))


def test_residual_norm_at_solution_vanishes(assembled_system):
    out = solve(assembled_system)
    assert residual_norm(assembled_system, out["coeffs"]) <= 1e-12


def test_residual_norm_zero_vector_is_solution_norm(assembled_system):
    out = solve(assembled_system)
    zero = np.zeros_like(out["coeffs"])
    assert residual_norm(assembled_system, zero) == pytest.approx(
        l2_norm(assembled_system, out["U_h"]), abs=1e-10)


def test_residual_identity_random_trial_vectors(assembled_system):
    out = solve(assembled_system)
    rng = np.random.default_rng(9)
    worst = 0.0
    for _ in range(100):
        W = rng.normal(size=out["coeffs"].shape)
        direct = l2_norm(assembled_system, out["U_h"]
                         - (W[0] @ assembled_system.bstar[0])[None, :])
        worst = max(worst, abs(residual_norm(assembled_system, W) - direct))
    assert worst <= 1e-8


def test_inf_sup_is_one_across_meshes():
    for M in (4, 16, 64, 256):
        space = make_test_space(0.0, 1.0, M)
        tq, _ = space.quadrature()
        sys_ = assemble_system(space, np.ones((1, tq.size)),
                               np.zeros((1, tq.size)), np.array([1.0]))
        assert abs(discrete_inf_sup(sys_) - 1.0) <= 1e-10


def test_raw_hat_pairing_loses_stability():
    # one cell, C = 0, T = 1: the mismatched value is
    # (1/2) / (sqrt(1/3) * 1) = sqrt(3)/2
    space = make_test_space(0.0, 1.0, 1)
    tq, _ = space.quadrature()
    sys_ = assemble_system(space, np.zeros((1, tq.size)),
                           np.zeros((1, tq.size)), np.array([0.0]))
    assert raw_hat_inf_sup(sys_) == pytest.approx(np.sqrt(3.0) / 2.0, abs=1e-9)
    assert raw_hat_inf_sup(sys_) < 0.99


def test_trial_to_test_unwinds(assembled_system):
    rng = np.random.default_rng(4)
    u = rng.normal(size=(1, assembled_system.space.n_basis))
    v = trial_to_test(assembled_system, u)
    assert np.max(np.abs(v - u)) <= 1e-10
    # isometry between the graph norm of V_U and the L2 norm of U
    U_samples = (u[0] @ assembled_system.bstar[0])[None, :]
    assert abs(graph_norm(assembled_system, v)
               - l2_norm(assembled_system, U_samples)) <= 1e-10
    # linearity
    w = rng.normal(size=u.shape)
    lhs = trial_to_test(assembled_system, 2.0 * u - 3.0 * w)
    rhs = 2.0 * trial_to_test(assembled_system, u) - 3.0 * trial_to_test(
        assembled_system, w)
    assert np.max(np.abs(lhs - rhs)) <= 1e-12


def test_galerkin_orthogonality(assembled_system):
    out = solve(assembled_system)
    assert galerkin_orthogonality_defect(assembled_system,
                                         out["coeffs"]) <= 1e-12


def test_poincare_bound_on_basis(assembled_system):
    space = assembled_system.space
    tq, wq = space.quadrature()
    phi = space.basis_values(tq)
    for m in range(space.n_basis):
        e = np.zeros(space.n_basis)
        e[m] = 1.0
        lhs = float(np.sqrt(np.sum(wq * (e @ phi) ** 2)))
        rhs = 2.0 * 1.0 * float(np.sqrt(e @ assembled_system.gram[0] @ e))
        assert lhs <= rhs + 1e-12


def test_agreement_with_characteristics_rate():
    dom = SpatialDomain([-1.0], [1.0])
    grid = TimeGrid(0.0, 1.0, 2048)
    zero = make_field("constant", [0.0])
    xs = [-0.5, 0.0, 0.5]
    flow = classical_flow(zero, dom, grid, [(0.0, [x]) for x in xs])
    c = make_scalar("trig", [1.0, 0.5])
    f = make_scalar("trig", [0.5, 0.25, 3.0, 2.0])
    u0 = make_scalar("gauss", [0.3])
    fine = solve_characteristic_ode(pull_back_data(c, f, flow, grid, u0))
    errs = []
    for M in (8, 16, 32, 64):
        space = make_test_space(0.0, 1.0, M)
        system = assemble_from_flow(space, flow, grid, c, f, u0)
        out = solve(system)
        tq, _ = space.quadrature()
        ref = np.stack([np.interp(tq, grid.nodes, fine.U[j])
                        for j in range(len(xs))])
        errs.append(l2_norm(system, out["U_h"] - ref))
    for e0, e1 in zip(errs, errs[1:]):
        assert e0 / e1 >= 1.8


def test_quasi_optimality():
    space = make_test_space(0.0, 1.0, 16)
    tq, wq = space.quadrature()
    C = 1.0 + 0.4 * np.cos(3 * tq)
    F = np.sin(5 * tq)
    system = assemble_system(space, C[None, :], F[None, :], np.array([1.0]))
    out = solve(system)
    beta = discrete_inf_sup(system)
    # reference on a much finer mesh, interpolated to the coarse quad grid
    from untangled.transport import PulledBackProblem

    fine_grid = TimeGrid(0.0, 1.0, 4096)
    p = PulledBackProblem(grid=fine_grid, seeds=np.array([[0.0]]),
                          C=(1.0 + 0.4 * np.cos(3 * fine_grid.nodes))[None, :],
                          F=np.sin(5 * fine_grid.nodes)[None, :],
                          U0=np.array([1.0]))
    ref_sol = solve_characteristic_ode(p)
    ref = np.interp(tq, fine_grid.nodes, ref_sol.U[0])[None, :]
    err = l2_norm(system, out["U_h"] - ref)
    # best approximation: L2 projection onto the trial space
    bs = system.bstar[0]
    G = system.gram[0]
    coeffs = np.linalg.solve(G, (bs * wq[None, :]) @ ref[0])
    best = l2_norm(system, ref - (coeffs @ bs)[None, :])
    assert err <= (1.0 + 1.0 / beta) * best + 1e-10


def test_assemble_shape_validation():
    space = make_test_space(0.0, 1.0, 4)
    with pytest.raises(DataError):
        assemble_system(space, np.ones((1, 3)), np.ones((1, 3)),
                        np.array([1.0]))
