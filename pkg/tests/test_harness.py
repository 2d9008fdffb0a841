import csv
import json
from pathlib import Path

import numpy as np
import pytest
from pydantic import ValidationError

from refil.attacks import AttackConfig
from refil.autodiff import forward
from refil.harness import ExperimentSpec, Synthetic, report, run_experiment, trial_rng
from refil.harness.cli import EXIT_DATA, EXIT_OK, EXIT_USAGE, main
from refil.harness.report import (
    PLOT_SVG, RESULTS_CSV, SUMMARY_CSV, UTILITY_CSV, metric_columns, read_results, summarize, write_csv,
)
from refil.networks import AdamConfig, TrainConfig, build_reference_model
from refil.privacy import ExactEstimator, RefilConfig, refil_forward
from refil.service import ActivationPayload
from refil.service.service import ActivationLog


def _bound_spec(tmp_path, **overrides):
    fields = dict(
        name="bound",
        recipe="unbiased_bound",
        model="mlp-1000",
        dataset=Synthetic(generator="images", size=4, shape=(1, 4, 4)),
        inv_dfil_grid=[0.1, 1.0],
        trials=2,
        attack=AttackConfig(iterations=30, restarts=1),
        output_dir=tmp_path,
    )
    fields.update(overrides)
    return ExperimentSpec(**fields)


def _read_csv(path):
    with open(path, newline="") as f:
        return list(csv.DictReader(f))


def test_unbiased_bound_run_writes_results(tmp_path):
    result = run_experiment(_bound_spec(tmp_path))
    assert result.results_csv == tmp_path / "bound" / RESULTS_CSV
    rows = _read_csv(result.results_csv)
    assert len(rows) == 4
    assert {row["status"] for row in rows} == {"ok"}
    assert [float(row["bound"]) for row in rows] == [0.1, 0.1, 1.0, 1.0]
    for row in rows:
        assert float(row["achieved_dfil"]) == pytest.approx(1.0 / float(row["inv_dfil"]), rel=1e-6)
    assert result.plot_svg == tmp_path / "bound" / PLOT_SVG
    assert result.plot_svg.read_text().lstrip().startswith("<?xml")
    assert result.failed_points == []
    assert (tmp_path / "bound" / "spec.json").exists()


def test_summary_matches_recomputation(tmp_path):
    result = run_experiment(_bound_spec(tmp_path))
    fieldnames, rows = read_results(result.results_csv)
    expected = summarize(rows, metric_columns(fieldnames))
    written = _read_csv(result.summary_csv)
    assert len(written) == len(expected) == 2
    for got, want in zip(written, expected):
        assert float(got["inv_dfil"]) == want["inv_dfil"]
        assert int(got["n"]) == want["n"] == 2
        assert float(got["mse_mean"]) == pytest.approx(want["mse_mean"])
        assert float(got["bound_mean"]) == want["inv_dfil"]


def test_reruns_are_byte_identical(tmp_path):
    a = run_experiment(_bound_spec(tmp_path / "a"))
    b = run_experiment(_bound_spec(tmp_path / "b"))
    assert a.results_csv.read_bytes() == b.results_csv.read_bytes()


def test_trial_rng_is_order_independent():
    first = trial_rng(0, 1, 2).random(3)
    trial_rng(0, 0, 0).random(10)
    np.testing.assert_array_equal(trial_rng(0, 1, 2).random(3), first)
    assert not np.array_equal(trial_rng(0, 1, 3).random(3), first)


def test_report_recomputes_summary(tmp_path):
    result = run_experiment(_bound_spec(tmp_path))
    result.summary_csv.unlink()
    table = report(result.results_csv.parent)
    assert "1/dFIL" in table and "mse" in table
    assert result.summary_csv.exists()


def test_report_of_header_only_results(tmp_path):
    write_csv(tmp_path / RESULTS_CSV, [], ["grid", "inv_dfil", "trial", "status", "mse"])
    report(tmp_path)
    rows = _read_csv(tmp_path / SUMMARY_CSV)
    assert rows == []
    assert not (tmp_path / PLOT_SVG).exists()


def test_recommendation_recipe(tmp_path):
    spec = ExperimentSpec(
        name="ncf",
        recipe="recommendation",
        model="ncf",
        model_kwargs={"embedding_dim": 4, "mlp": [8, 4, 1]},
        dataset=Synthetic(generator="ratings", size=10, num_users=4, num_items=5),
        inv_dfil_grid=[0.01],
        trials=3,
        attack=AttackConfig(iterations=40, restarts=1),
        output_dir=tmp_path,
    )
    result = run_experiment(spec)
    rows = _read_csv(result.results_csv)
    assert len(rows) == 3
    assert {"top1_user", "top1_item", "top5_user", "top5_item"} <= set(rows[0])
    for row in rows:
        assert row["status"] == "ok"
        # neither table has more than five rows
        assert row["top5_user"] == row["top5_item"] == "1"


def test_biased_ssim_recipe(tmp_path):
    spec = ExperimentSpec(
        name="ssim",
        recipe="biased_ssim",
        model="cnn-early",
        model_kwargs={"width": 4, "blocks": 4},
        dataset=Synthetic(generator="images", size=2, shape=(3, 16, 16)),
        inv_dfil_grid=[1.0, 100.0],
        trials=1,
        attack={"method": {"kind": "tv_prior", "lambda": 0.05}, "iterations": 10, "restarts": 1},
        output_dir=tmp_path,
    )
    result = run_experiment(spec)
    rows = _read_csv(result.results_csv)
    assert len(rows) == 2
    assert "bound" not in rows[0]
    for row in rows:
        assert -1.0 <= float(row["ssim"]) <= 1.0
    assert sorted(p.name for p in result.images) == ["recon_0_0.ppm", "recon_1_0.ppm"]


def test_replay_recipe(tmp_path):
    kwargs = {"input_shape": [1, 2, 2], "classes": 3}
    split = build_reference_model("mlp-1000", seed=0, **kwargs)
    log = ActivationLog(tmp_path / "activations.splt")
    rng = np.random.default_rng(0)
    x = rng.random((1, 2, 2))
    noisy = refil_forward(split.client, x, RefilConfig(target_dfil=2.0, estimator=ExactEstimator()), rng)
    log.append(ActivationPayload("mlp-1000", np.asarray(noisy.z_noised, dtype=np.float32), sigma=noisy.sigma,
                                 achieved_dfil=noisy.achieved_dfil, request_id=11))
    log.append(ActivationPayload("mlp-1000", forward(split.client, x).astype(np.float32), request_id=12))

    spec = ExperimentSpec(name="replay", recipe="replay", model="mlp-1000", model_kwargs=kwargs,
                          activation_log=log.path, trials=5, attack=AttackConfig(iterations=20, restarts=1),
                          output_dir=tmp_path)
    rows = _read_csv(run_experiment(spec).results_csv)
    assert [row["request_id"] for row in rows] == ["11", "12"]
    assert [row["status"] for row in rows] == ["ok", "ok"]
    assert float(rows[0]["inv_dfil"]) == pytest.approx(0.5)
    assert float(rows[1]["inv_dfil"]) == 0.0
    assert rows[1]["sigma"] == ""


def test_spec_needs_a_dataset_or_a_log(tmp_path):
    with pytest.raises(ValidationError):
        ExperimentSpec(name="x", recipe="unbiased_bound")
    with pytest.raises(ValidationError):
        ExperimentSpec(name="x", recipe="replay")


def test_cli_usage_error():
    with pytest.raises(SystemExit) as excinfo:
        main([])
    assert excinfo.value.code == EXIT_USAGE


def test_cli_report_of_missing_directory(tmp_path):
    assert main(["report", str(tmp_path / "missing")]) == EXIT_DATA


def test_cli_runs_an_experiment(tmp_path, capsys):
    spec = _bound_spec(tmp_path, name="cli", trials=1, inv_dfil_grid=[1.0])
    spec_path = tmp_path / "spec.json"
    spec_path.write_text(json.dumps(spec.model_dump(mode="json")))
    out = tmp_path / "out"
    assert main(["experiment", str(spec_path), "--output-dir", str(out)]) == EXIT_OK
    assert (out / "cli" / RESULTS_CSV).exists()
    assert "1/dFIL" in capsys.readouterr().out


def test_cli_rejects_an_invalid_spec(tmp_path):
    spec_path = tmp_path / "spec.json"
    spec_path.write_text(json.dumps({"name": "x", "recipe": "nope"}))
    assert main(["experiment", str(spec_path)]) == EXIT_USAGE


def _mean_by_grid(rows, column):
    means = {}
    for row in rows:
        means.setdefault(float(row["inv_dfil"]), []).append(float(row[column]))
    return {k: float(np.mean(v)) for k, v in means.items()}


def test_ssim_falls_as_noise_rises(tmp_path):
    spec = ExperimentSpec(
        name="ssim-trend",
        recipe="biased_ssim",
        model="cnn-early",
        model_kwargs={"width": 4, "blocks": 4, "input_shape": [3, 16, 16]},
        dataset=Synthetic(generator="images", size=3, shape=(3, 16, 16)),
        inv_dfil_grid=[0.01, 100.0],
        trials=3,
        attack={"method": {"kind": "tv_prior", "lambda": 0.05}, "iterations": 300, "restarts": 1},
        output_dir=tmp_path,
    )
    rows = _read_csv(run_experiment(spec).results_csv)
    assert {row["status"] for row in rows} == {"ok"}
    ssim = _mean_by_grid(rows, "ssim")
    assert ssim[0.01] > ssim[100.0] + 0.1


def test_embedding_ids_leak_only_under_weak_noise(tmp_path):
    spec = ExperimentSpec(
        name="ids-trend",
        recipe="recommendation",
        model="ncf",
        model_kwargs={"embedding_dim": 8, "mlp": [64, 1]},
        dataset=Synthetic(generator="ratings", size=20, num_users=300, num_items=300),
        inv_dfil_grid=[0.001, 1.0, 100.0],
        trials=20,
        topk=[1],
        attack=AttackConfig(iterations=600, restarts=1),
        output_dir=tmp_path,
    )
    rows = _read_csv(run_experiment(spec).results_csv)
    assert {row["status"] for row in rows} == {"ok"}
    hits = {inv: [] for inv in (0.001, 1.0, 100.0)}
    for row in rows:
        hits[float(row["inv_dfil"])] += [int(row["top1_user"]), int(row["top1_item"])]
    assert np.mean(hits[0.001]) >= 0.9
    assert np.mean(hits[1.0]) <= 0.6
    # 300 rows per table: chance is 1/300
    assert np.mean(hits[100.0]) <= 0.1


def test_utility_recipe_table(tmp_path):
    spec = ExperimentSpec(
        name="utility",
        recipe="utility",
        model="mlp-1000",
        model_kwargs={"input_shape": [4], "classes": 3},
        dataset=Synthetic(generator="separable", size=300, shape=(4,), classes=3),
        inv_dfil_grid=[0.01],
        trials=4,
        train=TrainConfig(optimizer=AdamConfig(lr=1e-2), epochs=6, batch_size=30),
        output_dir=tmp_path,
    )
    result = run_experiment(spec)
    assert result.utility_csv == tmp_path / "utility" / UTILITY_CSV
    with open(result.utility_csv, newline="") as f:
        reader = csv.DictReader(f)
        assert reader.fieldnames == ["inv_dfil", "no_opt", "comp", "comp+snr"]
        (row,) = list(reader)
    assert float(row["inv_dfil"]) == 0.01
    scores = {name: float(row[name]) for name in ("no_opt", "comp", "comp+snr")}
    assert all(0.0 <= v <= 1.0 for v in scores.values())
    assert scores["no_opt"] > 0.8
    assert scores["comp"] >= scores["no_opt"] - 0.05


@pytest.mark.parametrize("path", sorted((Path(__file__).parent.parent / "experiments").glob("*.json")),
                         ids=lambda p: p.stem)
def test_shipped_experiment_specs_validate(path):
    spec = ExperimentSpec.model_validate_json(path.read_text())
    assert spec.inv_dfil_grid == sorted(spec.inv_dfil_grid)
    if spec.recipe == "recommendation":
        assert 0.001 in spec.inv_dfil_grid
