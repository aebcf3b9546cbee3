import math

import numpy as np
import pytest

from lqbundle.dichotomy import GridFunction, dichotomy_split
from lqbundle.errors import EpsilonTooLarge, NotATrajectory, Oscillating
from lqbundle.frequency import QuadraticFormTriple, smith_form_triple
from lqbundle.sampling import bump_control, m0_sample, random_passing_instance
from lqbundle.stationary import (
    assemble_hamiltonian,
    coercivity_check,
    estimate_eps0,
    extract_nonoscillation,
    fit_decay_rate,
    hamiltonian_trajectory,
    integrate_control_trajectory,
    l2_controllability,
    lyapunov_inequality_check,
    pairing_drift,
    riccati_integral_check,
    riccati_residual,
    stable_lagrange_lp,
    stable_lagrange_naive,
    stable_lagrange_schur,
)
from lqbundle.symplectic import (
    LagrangeSubspace,
    grassmann_distance,
    horizontal_subspace,
    intersection_dimension,
    is_lagrange,
    vertical_subspace,
)

SQRT3 = math.sqrt(3.0)


@pytest.fixture
def s1_exact_subspace():
    return LagrangeSubspace(np.array([[1.0], [2.0 - SQRT3]]))


class TestAssembly:
    def test_scalar_blocks(self, s1):
        ham = assemble_hamiltonian(*s1)
        np.testing.assert_allclose(ham.matrix, [[-2.0, 1.0], [-1.0, 2.0]])

    def test_decoupled_when_b_zero(self):
        a = np.diag([-1.0, -2.0])
        b = np.zeros((2, 1))
        form = QuadraticFormTriple(f1=np.zeros((2, 2)), f2=np.zeros((1, 2)), f3=[[1.0]])
        ham = assemble_hamiltonian(a, b, form)
        np.testing.assert_allclose(ham.matrix[:2, :2], a)
        np.testing.assert_allclose(ham.matrix[2:, 2:], -a.T)
        assert np.abs(ham.matrix[:2, 2:]).max() == 0.0

    def test_symplectic_identity_random(self, rng):
        for _ in range(5):
            a, b, form, _ = random_passing_instance(rng, 4, j=1, m=2, min_margin=0.0)
            ham = assemble_hamiltonian(a, b, form)
            assert ham.symplectic_defect() <= 1e-12 * max(
                1.0, np.linalg.norm(ham.matrix, 2)
            )


class TestSchurOracle:
    def test_scalar_eigvector(self, s1, s1_exact_subspace):
        sub = stable_lagrange_schur(assemble_hamiltonian(*s1))
        assert grassmann_distance(sub, s1_exact_subspace) <= 1e-14

    def test_decoupled_stable(self):
        a = np.diag([-1.0, -2.0])
        b = np.zeros((2, 1))
        form = QuadraticFormTriple(f1=np.zeros((2, 2)), f2=np.zeros((1, 2)), f3=[[1.0]])
        sub = stable_lagrange_schur(assemble_hamiltonian(a, b, form))
        assert grassmann_distance(sub, horizontal_subspace(2)) <= 1e-14

    def test_random_is_lagrange(self, rng):
        for _ in range(5):
            a, b, form, _ = random_passing_instance(rng, 5, j=1)
            sub = stable_lagrange_schur(assemble_hamiltonian(a, b, form))
            ok, margin = is_lagrange(sub)
            assert ok and margin <= 1e-9


class TestLPConstruction:
    def test_scalar_matches_exact(self, s1, s1_exact_subspace):
        res = stable_lagrange_lp(*s1, compute_eps0=False)
        assert grassmann_distance(res.l_plus, s1_exact_subspace) <= 1e-7

    def test_trivial_graph_operator(self, s1):
        a, b, _ = s1
        form0 = QuadraticFormTriple(f1=[[0.0]], f2=[[0.0]], f3=[[1.0]])
        res = stable_lagrange_lp(a, b, form0, compute_eps0=False)
        assert np.abs(res.m_plus.matrix).max() <= 1e-12
        assert grassmann_distance(res.l_plus, horizontal_subspace(1)) <= 1e-12

    def test_dense_and_structured_agree(self, s1):
        r1 = stable_lagrange_lp(*s1, solver="structured", richardson=False,
                                compute_eps0=False)
        r2 = stable_lagrange_lp(*s1, solver="dense", richardson=False,
                                compute_eps0=False)
        assert grassmann_distance(r1.l_plus, r2.l_plus) <= 1e-13

    def test_naive_form_agrees(self, s1):
        res = stable_lagrange_lp(*s1, compute_eps0=False, richardson=False)
        naive = stable_lagrange_naive(*s1)
        assert grassmann_distance(res.l_plus, naive) <= 1e-12

    def test_picard_under_smith(self, s1):
        a, b, _ = s1
        form = smith_form_triple([[1.0]], 0.4, 1)
        res = stable_lagrange_lp(a, b, form, picard=True, compute_eps0=False)
        assert res.diagnostics["picard_iterations"] < 60
        oracle = stable_lagrange_schur(assemble_hamiltonian(a, b, form))
        assert grassmann_distance(res.l_plus, oracle) <= 1e-6

    def test_fredholm_bound_j1_smith(self):
        # A = diag(1, -1), transfer-norm form with Lambda = 0.5
        a = np.diag([1.0, -1.0])
        b = np.eye(2)
        form = smith_form_triple(np.eye(2), 0.5, 2)
        res = stable_lagrange_lp(a, b, form, compute_eps0=False)
        dim = intersection_dimension(res.l_plus, vertical_subspace(2))
        assert dim <= 1

    def test_eps_robustness(self, s1):
        res = stable_lagrange_lp(*s1)
        assert res.eps0 > 0.1
        for sign in (+1.0, -1.0):
            shifted = stable_lagrange_naive(*s1, shift=sign * res.eps0 / 2.0)
            assert grassmann_distance(res.l_plus, shifted) <= 1e-6

    def test_decay_certificate(self, s1):
        res = stable_lagrange_lp(*s1)
        ham = assemble_hamiltonian(*s1)
        traj = hamiltonian_trajectory(
            ham, res.l_plus.basis[:, 0], np.linspace(0.0, 6.0, 500)
        )
        rate, _ = fit_decay_rate(traj)
        assert rate >= res.eps0 - 1e-3

    def test_pairing_preserved_along_flow(self, rng):
        a, b, form, margin = random_passing_instance(rng, 4, j=1)
        res = stable_lagrange_lp(a, b, form, margin=margin, compute_eps0=False)
        ham = assemble_hamiltonian(a, b, form)
        times = np.linspace(0.0, 6.0, 300)
        drift, pair0 = pairing_drift(
            ham, res.l_plus.basis[:, 0], res.l_plus.basis[:, -1], times
        )
        assert drift <= 1e-10
        assert abs(pair0) <= 1e-8


class TestNonoscillation:
    def test_scalar_p(self, s1):
        sub = stable_lagrange_schur(assemble_hamiltonian(*s1))
        no = extract_nonoscillation(sub, *s1)
        assert no.p[0, 0] == pytest.approx(SQRT3 - 2.0, abs=1e-12)
        assert no.riccati_residual <= 1e-12
        assert no.feedback[0, 0] == pytest.approx(2.0 - SQRT3, abs=1e-12)

    def test_horizontal_gives_zero(self):
        no = extract_nonoscillation(horizontal_subspace(3))
        assert np.abs(no.p).max() == 0.0

    def test_vertical_oscillates(self):
        with pytest.raises(Oscillating):
            extract_nonoscillation(vertical_subspace(2))


class TestRiccati:
    def test_scalar_residual(self, s1):
        p = np.array([[SQRT3 - 2.0]])
        assert riccati_residual(p, *s1) <= 1e-12

    def test_zero_p_zero_cost(self, s1):
        a, b, _ = s1
        form0 = QuadraticFormTriple(f1=[[0.0]], f2=[[0.0]], f3=[[1.0]])
        assert riccati_residual(np.zeros((1, 1)), a, b, form0) == 0.0

    def test_perturbation_sensitivity(self, s1):
        p = np.array([[SQRT3 - 2.0 + 0.1]])
        assert riccati_residual(p, *s1) > 0.01

    def test_integral_identity_optimal_slice(self, s1):
        a, b, form = s1
        sub = stable_lagrange_schur(assemble_hamiltonian(*s1))
        no = extract_nonoscillation(sub, *s1)
        times = np.linspace(0.0, 10.0, 2001)
        # closed loop v' = (A + B K)v, xi = K v
        closed = a + b @ no.feedback
        v = np.exp(np.outer(times, np.diag(closed))) * 1.0
        v_traj = GridFunction(times, v)
        xi_traj = GridFunction(times, v @ no.feedback.T)
        defect = riccati_integral_check(no.p, a, b, form, v_traj, xi_traj)
        assert defect <= 1e-8

    def test_integral_identity_zero_trajectory(self, s1):
        a, b, form = s1
        times = np.linspace(0.0, 5.0, 501)
        zero = GridFunction(times, np.zeros((501, 1)))
        assert riccati_integral_check(np.array([[0.3]]), a, b, form, zero, zero) == 0.0

    def test_integral_identity_refinement_order(self, s1):
        a, b, form = s1
        p = np.array([[SQRT3 - 2.0]])
        defects = []
        for m in (201, 401, 801):
            times = np.linspace(0.0, 8.0, m)
            xi = GridFunction(times, (np.exp(-times) * np.sin(2 * times))[:, None])
            v = integrate_control_trajectory(a, b, xi, np.array([0.7]))
            defects.append(riccati_integral_check(p, a, b, form, v, xi))
        orders = [math.log2(defects[i] / defects[i + 1]) for i in range(2)]
        assert min(orders) >= 2.0

    def test_not_a_trajectory(self, s1):
        a, b, form = s1
        times = np.linspace(0.0, 5.0, 301)
        xi = GridFunction(times, np.zeros((301, 1)))
        v = GridFunction(times, np.cos(times)[:, None])
        with pytest.raises(NotATrajectory):
            riccati_integral_check(np.array([[0.0]]), a, b, form, v, xi)


class TestControllability:
    def test_stable_always(self, rng):
        a = np.diag([-1.0, -2.0])
        assert l2_controllability(a, np.zeros((2, 1)))

    def test_reachable_unstable(self):
        assert l2_controllability(np.diag([1.0, -1.0]), np.array([[1.0], [0.0]]))

    def test_unreachable_unstable(self):
        assert not l2_controllability(np.diag([1.0, -1.0]), np.array([[0.0], [1.0]]))


class TestCoercivity:
    def test_scalar_bump(self, s1, rng):
        a, b, form = s1
        times = np.linspace(0.0, 16.0, 1601)
        samples = [m0_sample(rng, a, b, times) for _ in range(3)]
        ratio = coercivity_check(a, b, form, samples)
        assert ratio >= 1.0

    def test_sweep(self, rng):
        a, b, form, margin = random_passing_instance(rng, 3, j=0, m=1)
        split = dichotomy_split(a)
        times = np.linspace(0.0, 18.0 / split.eps_rate, 1500)
        samples = [m0_sample(rng, a, b, times) for _ in range(20)]
        ratio = coercivity_check(a, b, form, samples, margin=margin)
        assert ratio >= 1.0 - 1e-6


class TestLyapunovInequality:
    def _trajectories(self, rng, a, b, m, count=10):
        times = np.linspace(0.0, 12.0, 1201)
        out = []
        for _ in range(count):
            xi = bump_control(rng, times, m)
            v = integrate_control_trajectory(a, b, xi, rng.standard_normal(a.shape[0]))
            out.append((v, xi))
        return out

    def test_scalar_holds(self, s1, rng):
        a, b, form = s1
        assert lyapunov_inequality_check(
            a, b, form, 0.05, self._trajectories(rng, a, b, 1, 20)
        )

    def test_degenerate_eps_reduces_to_balance(self, s1, rng):
        a, b, form = s1
        assert lyapunov_inequality_check(
            a, b, form, 0.0, self._trajectories(rng, a, b, 1, 5)
        )

    def test_eps_beyond_margin(self, s1, rng):
        a, b, form = s1
        with pytest.raises(EpsilonTooLarge):
            lyapunov_inequality_check(
                a, b, form, 0.9, self._trajectories(rng, a, b, 1, 2)
            )


class TestEps0:
    def test_scalar_cap(self, s1):
        a, b, form = s1
        eps0 = estimate_eps0(a, b, form)
        # capped below both spectral gaps (2 and sqrt(3))
        assert 0.0 < eps0 <= SQRT3
