import numpy as np
import pytest

from refil.attacks import (
    AttackConfig, GaussianInit, ObservationInit, TvPriorMethod, ZerosInit, attack_target, embedding_id_attack,
    embedding_tables, rank_rows, reconstruct, reconstruct_ids, tv, tv_grad,
)
from refil.autodiff import Concat, Dense, EmbeddingLookup, Flatten, Model, forward
from refil.errors import AttackFailedError, ConfigError, ShapeMismatchError
from refil.privacy import ExactEstimator, RefilConfig, refil_forward


def _identity(shape):
    n = int(np.prod(shape))
    return Model([Dense(np.eye(n), np.zeros(n))], (n,))


# -- total variation ----------------------------------------------------------------

def test_tv_of_constant_image_is_zero():
    assert tv(np.full((2, 4, 4), 0.3)) == 0.0


def test_tv_examples():
    assert tv(np.array([[[0.0, 1.0]]])) == 1.0
    assert tv(np.array([[[0.0, 1.0], [1.0, 0.0]]])) == 4.0


def test_tv_rejects_wrong_rank():
    with pytest.raises(ConfigError):
        tv(np.zeros((4, 4)))


def test_tv_gradient_matches_finite_differences(rng):
    x = rng.random((2, 3, 4))
    grad = tv_grad(x)
    h = 1e-7
    for idx in [(0, 0, 0), (1, 2, 3), (0, 1, 2)]:
        plus, minus = x.copy(), x.copy()
        plus[idx] += h
        minus[idx] -= h
        assert grad[idx] == pytest.approx((tv(plus) - tv(minus)) / (2 * h), abs=1e-5)


# -- reconstruction ------------------------------------------------------------------

def test_identity_client_with_observation_init_is_exact():
    client = _identity((3,))
    x = np.array([0.1, 0.5, 0.9])
    cfg = AttackConfig(init=ObservationInit(), iterations=20)
    result = reconstruct(forward(client, x), client, cfg, x_true=x)
    np.testing.assert_array_equal(result.x_hat, x)
    assert result.objective == 0.0
    assert result.mse == 0.0


def test_invertible_linear_client_without_noise(linear_model):
    x = np.array([0.3, 0.7])
    z = forward(linear_model, x)
    cfg = AttackConfig(init=ZerosInit(), iterations=2000)
    result = reconstruct(z, linear_model, cfg, x_true=x)
    oracle = np.linalg.solve(linear_model.layers[0].weight, z - linear_model.layers[0].bias)
    np.testing.assert_allclose(result.x_hat, oracle, atol=1e-4)
    assert result.mse < 1e-6
    assert len(result.objective_trace) == 2001


def test_unbiased_attack_respects_the_error_bound():
    scales = np.linspace(1.0, 2.0, 8)
    client = Model([Dense(np.diag(scales), np.zeros(8))], (8,))
    inv_dfil = 1.0
    cfg = AttackConfig(init=ZerosInit(), iterations=600)
    refil_cfg = RefilConfig(target_dfil=1.0 / inv_dfil, estimator=ExactEstimator())
    rng = np.random.default_rng(0)
    errors = []
    for _ in range(100):
        x = rng.random(8)
        noisy = refil_forward(client, x, refil_cfg, rng)
        errors.append(reconstruct(noisy.z_noised, client, cfg, x_true=x).mse)
    assert np.mean(errors) >= 0.9 * inv_dfil


def test_tv_prior_smooths_the_reconstruction(rng):
    client = Model([Flatten(), Dense(np.eye(36), np.zeros(36))], (1, 6, 6))
    z = 0.5 + 0.3 * rng.standard_normal(36)
    cfg = AttackConfig(method=TvPriorMethod(lam=0.5), init=ZerosInit(), iterations=800)
    biased = reconstruct(z, client, cfg)
    assert biased.x_hat.shape == (1, 6, 6)
    assert tv(biased.x_hat) < tv(z.reshape(1, 6, 6))


def test_gaussian_restarts_keep_the_best(linear_model):
    z = forward(linear_model, np.array([0.2, 0.4]))
    cfg = AttackConfig(init=GaussianInit(seed=5), iterations=300, restarts=3)
    result = reconstruct(z, linear_model, cfg)
    assert result.restart in (0, 1, 2)
    assert result.objective == min(result.objective_trace)


def test_attack_is_deterministic(linear_model):
    z = forward(linear_model, np.array([0.2, 0.4]))
    cfg = AttackConfig(init=GaussianInit(seed=1), iterations=50, restarts=2)
    a = reconstruct(z, linear_model, cfg)
    b = reconstruct(z, linear_model, cfg)
    np.testing.assert_array_equal(a.x_hat, b.x_hat)


def test_activation_shape_is_checked(linear_model):
    with pytest.raises(ShapeMismatchError):
        reconstruct(np.zeros(3), linear_model, AttackConfig(iterations=1))


def test_non_finite_observation_fails_every_restart(linear_model):
    cfg = AttackConfig(init=GaussianInit(), iterations=5, restarts=2)
    with pytest.raises(AttackFailedError) as excinfo:
        reconstruct(np.array([np.inf, 0.0]), linear_model, cfg)
    assert excinfo.value.restarts == 2


def test_observation_init_needs_matching_sizes():
    client = Model([Dense(np.ones((3, 2)), np.zeros(3))], (2,))
    with pytest.raises(ConfigError):
        reconstruct(np.zeros(3), client, AttackConfig(init=ObservationInit(), iterations=1))


def test_tv_prior_lambda_alias():
    assert TvPriorMethod.model_validate({"kind": "tv_prior", "lambda": 0.2}).lam == 0.2
    assert TvPriorMethod().lam == 0.05


# -- embedding identification -------------------------------------------------------

@pytest.fixture
def table(rng):
    return rng.standard_normal((10, 4))


def test_exact_row_is_identified(table):
    assert embedding_id_attack(table[7], table) == 7


def test_perturbed_row_is_identified(table):
    gaps = [np.linalg.norm(a - b) for i, a in enumerate(table) for b in table[i + 1:]]
    delta = np.full(4, 0.2 * min(gaps) / 2)
    assert embedding_id_attack(table[3] + delta, table) == 3


def test_ties_go_to_the_lowest_index(table):
    table[5] = table[2]
    assert embedding_id_attack(table[2], table) == 2
    assert rank_rows(table[2], table)[:2].tolist() == [2, 5]


def test_empty_table_is_rejected():
    with pytest.raises(ConfigError):
        embedding_id_attack(np.zeros(4), np.zeros((0, 4)))


def test_embedding_width_must_match(table):
    with pytest.raises(ShapeMismatchError):
        embedding_id_attack(np.zeros(3), table)


def _recommender(rng):
    lookup = Concat([
        [EmbeddingLookup(rng.standard_normal((5, 3)), field=0)],
        [EmbeddingLookup(rng.standard_normal((7, 3)), field=1)],
    ], axis=0)
    return Model([lookup, Dense(rng.standard_normal((10, 6)), np.zeros(10))], (2,), integer_input=True)


def test_attack_target_skips_the_embedding_prefix(rng):
    client = _recommender(rng)
    assert attack_target(client).input_shape == (6,)
    assert [t.table.shape for t in embedding_tables(client)] == [(5, 3), (7, 3)]


def test_ids_are_recovered_without_noise(rng):
    client = _recommender(rng)
    ids = [4, 2]
    z = forward(client, np.array(ids))
    report = reconstruct_ids(z, client, AttackConfig(init=ZerosInit(), iterations=1500), true_ids=ids, topk=(1, 5))
    assert [ranking[0] for ranking in report["rankings"]] == ids
    assert report["success"] == {1: [1, 1], 5: [1, 1]}
    assert report["result"].mse < 1e-4


def test_embedding_tables_needs_a_prefix(linear_model):
    with pytest.raises(ConfigError):
        embedding_tables(linear_model)
