import numpy as np
import pytest
from scipy.optimize import nnls

from libsflow import nmf, spectra
from libsflow.errors import AllZeroInput, ChannelMismatch, NegativeLatent, RankMismatch, RankOutOfBounds


def _exact(n, m, rank, seed):
    r = np.random.default_rng(seed)
    return r.uniform(0, 1, (n, rank)) @ r.uniform(0, 1, (rank, m))


def test_factors_nonnegative_and_shapes(tiny_data):
    Y, _ = tiny_data
    model = nmf.fit(Y, 6, max_iter=100, check_nonneg=True)
    assert model.basis.shape == (60, 6) and model.components.shape == (6, 120)
    assert model.basis.min() >= 0 and model.components.min() >= 0
    np.testing.assert_array_equal(model.channel_grid, Y.channel_grid)


def test_objective_history_is_non_increasing(rng):
    Y = rng.uniform(0, 1, (15, 30))
    obj = nmf.fit(Y, 4, max_iter=300, tol=1e-15).objective
    assert np.all(np.diff(obj) <= 1e-12 * obj[:-1])


def test_fit_error_matches_objective():
    Y = _exact(12, 25, 3, 0)
    m = nmf.fit(Y, 3, max_iter=500)
    np.testing.assert_allclose(m.fit_error, np.linalg.norm(Y - m.basis @ m.components) / np.linalg.norm(Y))


def test_same_seed_same_factors():
    Y = _exact(10, 20, 3, 1)
    a, b = nmf.fit(Y, 3, max_iter=50, seed=4), nmf.fit(Y, 3, max_iter=50, seed=4)
    assert np.array_equal(a.components, b.components) and np.array_equal(a.basis, b.basis)


def test_rank_bounds_and_zero_input():
    with pytest.raises(RankOutOfBounds):
        nmf.fit(np.ones((4, 6)), 5)
    with pytest.raises(RankOutOfBounds):
        nmf.fit(np.ones((4, 6)), 0)
    with pytest.raises(AllZeroInput):
        nmf.fit(np.zeros((4, 6)), 2)


def test_transform_matches_nnls_oracle(rng):
    Y = _exact(30, 40, 4, 2)
    model = nmf.fit(Y, 4, max_iter=3000, tol=1e-12)
    new = rng.uniform(0, 1, (5, 40))
    X = nmf.transform(model, new)
    for row, x in zip(new, X):
        ref, _ = nnls(model.components.T, row)
        # both minimize the same strictly convex problem; compare the residual
        r_ours = np.linalg.norm(row - x @ model.components)
        r_ref = np.linalg.norm(row - ref @ model.components)
        assert r_ours <= r_ref * (1 + 1e-6) + 1e-10


def test_transform_of_training_rows_reproduces_basis():
    Y = _exact(20, 30, 3, 5)
    model = nmf.fit(Y, 3, max_iter=5000, tol=1e-14)
    X = nmf.transform(model, Y)
    rel = np.linalg.norm(X @ model.components - Y) / np.linalg.norm(Y)
    assert rel < 5 * model.fit_error + 1e-9


def test_transform_zero_spectrum_and_channel_check():
    model = nmf.fit(_exact(8, 10, 2, 0), 2, max_iter=50)
    np.testing.assert_array_equal(nmf.transform(model, np.zeros((1, 10))), 0.0)
    with pytest.raises(ChannelMismatch):
        nmf.transform(model, np.ones((1, 11)))


def test_inverse_transform_checks():
    model = nmf.fit(_exact(8, 10, 2, 0), 2, max_iter=50)
    out = nmf.inverse_transform(model, np.array([[1.0, 0.5]]))
    assert isinstance(out, spectra.SpectraMatrix) and out.values.shape == (1, 10)
    np.testing.assert_allclose(out.values[0], model.components[0] + 0.5 * model.components[1])
    with pytest.raises(NegativeLatent):
        nmf.inverse_transform(model, np.array([[1.0, -0.5]]))
    with pytest.raises(RankMismatch):
        nmf.inverse_transform(model, np.ones((1, 3)))


def test_cv_errors_match_nnls_oracle():
    Y = _exact(20, 15, 3, 9) + 0.01
    sel = nmf.select_rank(Y, [2, 3], k_folds=4, seed=1, max_iter=400, tol=1e-9)
    folds = nmf.kfold_indices(20, 4, 1)
    r = 1  # rank 3
    for i, test in enumerate(folds):
        train = np.setdiff1d(np.arange(20), test)
        model = nmf.fit(Y[train], 3, max_iter=400, tol=1e-9, seed=1 + i)
        recon = np.array([nnls(model.components.T, y)[0] for y in Y[test]]) @ model.components
        expected = np.linalg.norm(Y[test] - recon) / np.linalg.norm(Y[test])
        np.testing.assert_allclose(sel.fold_errors[r][i], expected, rtol=1e-5)
    assert sel.cv_errors[r] == pytest.approx(np.mean(sel.fold_errors[r]))


def test_select_rank_tie_prefers_smaller():
    Y = _exact(20, 15, 2, 3)
    sel = nmf.select_rank(Y, [2, 3, 4], k_folds=4, max_iter=2000, tol=1e-12, tie_tol=1e-2)
    assert sel.chosen_rank == 2
    d = sel.to_dict()
    assert d["candidate_ranks"] == [2, 3, 4] and len(d["fold_errors"][0]) == 4


def test_select_rank_rejects_oversized_candidates():
    with pytest.raises(RankOutOfBounds):
        nmf.select_rank(np.ones((10, 20)) + 0.1, [9], k_folds=5)


def test_save_load_round_trip(tmp_path, tiny_data):
    Y, _ = tiny_data
    model = nmf.fit(Y, 4, max_iter=30)
    nmf.save(model, tmp_path)
    back = nmf.load(tmp_path)
    for attr in ("basis", "components", "channel_grid", "objective"):
        assert np.array_equal(getattr(back, attr), getattr(model, attr))
    assert (back.fit_error, back.n_iter, back.seed) == (model.fit_error, model.n_iter, model.seed)


def test_exact_rank_one():
    Y = np.outer([1.0, 2.0], [1.0, 0.0, 3.0])
    assert nmf.fit(Y, 1, max_iter=2000, tol=1e-14).fit_error < 1e-6


def test_transform_recovers_training_rows_of_exact_factorization():
    Y = _exact(20, 50, 5, 11)
    model = nmf.fit(Y, 5, max_iter=20000, tol=1e-12)
    X = nmf.transform(model, Y[3:4])
    assert np.linalg.norm(Y[3] - X @ model.components) / np.linalg.norm(Y[3]) < 1e-3


def test_inverse_of_unit_vector_is_component_row():
    model = nmf.fit(_exact(10, 12, 3, 1), 3, max_iter=50)
    e = np.zeros((1, 3))
    e[0, 1] = 1.0
    np.testing.assert_array_equal(nmf.inverse_transform(model, e).values[0], model.components[1])


def test_singleton_candidate_is_chosen():
    sel = nmf.select_rank(_exact(20, 15, 2, 3), [3], k_folds=4, max_iter=50)
    assert sel.chosen_rank == 3 and len(sel.cv_errors) == 1
