import numpy as np
import pytest

from bidomain_bddc.assembly import State, assemble_jacobian, kernel_vector
from bidomain_bddc.schur import SchurOperator, b_gamma_inner, back_substitute, condense, harmonic_extend

from conftest import make_disc, random_state, schur_setup

TAU = 0.05


def deflate(x, k):
    return x - k * (k @ x) / (k @ k)


def dense_oracle(disc, state, rhs):
    """Minimum-norm solution of the full singular Jacobian system, then deflated."""
    J = assemble_jacobian(disc, state, TAU).matrix.toarray()
    x = np.linalg.lstsq(J, rhs, rcond=None)[0]
    return deflate(x, kernel_vector(disc.n_nodes))


def schur_solve(disc, grid, state, rhs):
    dec, part, locals_, S = schur_setup(disc, grid, state=state)
    S, f = condense(part, locals_, rhs)
    u = np.linalg.lstsq(S.dense(), f, rcond=None)[0]
    return deflate(back_substitute(S, u, rhs), kernel_vector(disc.n_nodes))


@pytest.mark.parametrize("grid", [(2, 1, 1), (2, 2, 1)])
def test_condensed_solve_matches_dense(grid, rng):
    disc = make_disc(4, 2, 2)
    state = random_state(disc.n_nodes, rng, 0.3)
    rhs = deflate(rng.standard_normal(3 * disc.n_nodes), kernel_vector(disc.n_nodes))
    ref = dense_oracle(disc, state, rhs)
    x = schur_solve(disc, grid, state, rhs)
    assert np.abs(x - ref).max() <= 1e-10 * np.abs(ref).max()


def test_zero_rhs_condenses_to_zero(disc4):
    _, part, locals_, _ = schur_setup(disc4, (2, 2, 2))
    _, f = condense(part, locals_, np.zeros(3 * disc4.n_nodes))
    assert np.all(f == 0)


def test_back_substitute_zero(disc4):
    *_, S = schur_setup(disc4, (2, 2, 2))
    x = back_substitute(S, np.zeros(S.n), np.zeros(3 * disc4.n_nodes))
    assert np.all(x == 0)


def test_single_subdomain_is_interior_solve(rng):
    disc = make_disc(2, 2, 2)
    _, part, locals_, S = schur_setup(disc, (1, 1, 1))
    assert S.n == 0
    ls = locals_[0]
    assert ls.K_II.shape == (3 * disc.n_nodes,) * 2
    assert harmonic_extend(S, np.zeros(0)).shape == (3 * disc.n_nodes,)


def test_extension_of_zero_and_constant(disc4, rng):
    state = random_state(disc4.n_nodes, rng, 0.3)
    _, part, locals_, S = schur_setup(disc4, (2, 2, 2), state=state)
    assert np.all(harmonic_extend(S, np.zeros(S.n)) == 0)
    ext = harmonic_extend(S, part.kernel())
    np.testing.assert_allclose(ext, kernel_vector(disc4.n_nodes), atol=1e-10)


def test_extension_is_discrete_harmonic(disc4, rng):
    state = random_state(disc4.n_nodes, rng, 0.3)
    _, part, locals_, S = schur_setup(disc4, (2, 2, 2), state=state)
    ext = harmonic_extend(S, rng.standard_normal(S.n))
    J = assemble_jacobian(disc4, state, TAU).matrix
    r = J @ ext
    assert np.abs(r[part.interior_global]).max() <= 1e-10 * np.abs(r).max()


def test_schur_matches_dense_condensation(disc4, rng):
    state = random_state(disc4.n_nodes, rng, 0.3)
    _, part, locals_, S = schur_setup(disc4, (2, 2, 2), state=state)
    J = assemble_jacobian(disc4, state, TAU).matrix.toarray()
    G, I = part.gamma_global_dofs, part.interior_global
    ref = J[np.ix_(G, G)] - J[np.ix_(G, I)] @ np.linalg.solve(J[np.ix_(I, I)], J[np.ix_(I, G)])
    np.testing.assert_allclose(S.dense(), ref, atol=1e-12 * np.abs(ref).max())


def test_schur_inner_two_ways(disc4, rng):
    state = random_state(disc4.n_nodes, rng, 0.3)
    *_, S = schur_setup(disc4, (2, 2, 2), state=state)
    u, v = rng.standard_normal(S.n), rng.standard_normal(S.n)
    via_ext = b_gamma_inner(S, u, v, "S")
    via_schur = v @ S(u)
    assert via_ext == pytest.approx(via_schur, rel=1e-12)


def test_skew_form_vanishes(disc4, rng):
    state = random_state(disc4.n_nodes, rng, 0.3)
    *_, S = schur_setup(disc4, (2, 2, 2), state=state)
    for _ in range(20):
        u = rng.standard_normal(S.n)
        assert abs(S.inner(u, u, "Z")) <= 1e-12 * abs(S.inner(u, u, "B"))


def test_symmetric_form_positive_at_rest(disc4, rng):
    _, part, _, S = schur_setup(disc4, (2, 2, 2))
    k = part.kernel()
    for _ in range(20):
        u = deflate(rng.standard_normal(S.n), k)
        assert S.inner(u, u, "B") > 0


def test_inner_bilinear(disc4, rng):
    *_, S = schur_setup(disc4, (2, 2, 2))
    u, v, w = (rng.standard_normal(S.n) for _ in range(3))
    a = 2.7
    for which in ("B", "Z", "S"):
        lhs = S.inner(a * u + w, v, which)
        rhs = a * S.inner(u, v, which) + S.inner(w, v, which)
        assert lhs == pytest.approx(rhs, rel=1e-12, abs=1e-12 * abs(S.inner(u, u, "B")))


def test_gram_matches_inner(disc4, rng):
    *_, S = schur_setup(disc4, (2, 2, 2))
    u, v = rng.standard_normal(S.n), rng.standard_normal(S.n)
    for which in ("B", "Z", "S"):
        assert v @ S.gram(which) @ u == pytest.approx(S.inner(u, v, which), rel=1e-10, abs=1e-18)


def test_inner_rejects_unknown_form(disc4):
    *_, S = schur_setup(disc4, (2, 2, 2))
    with pytest.raises(ValueError):
        S.inner(np.ones(S.n), np.ones(S.n), "Q")


def test_thread_pool_gives_identical_results(disc4, rng):
    from concurrent.futures import ThreadPoolExecutor

    _, part, locals_, S = schur_setup(disc4, (2, 2, 2))
    x = rng.standard_normal(S.n)
    with ThreadPoolExecutor(4) as pool:
        Sp = SchurOperator(part, locals_, pool)
        assert np.array_equal(Sp(x), S(x))
