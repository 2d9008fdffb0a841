# refil/harness/cli.py
import argparse
import json
import logging
import sys
from pathlib import Path
from typing import List, Optional

import numpy as np
from pydantic import TypeAdapter, ValidationError

from refil.attacks import AttackConfig, TvPriorMethod, UnbiasedMethod, reconstruct, write_netpbm
from refil.autodiff import checkpoint
from refil.config import LOG_FILE, LOG_LEVEL, SEND_TELEMETRY, SERVER_BIND, TV_LAMBDA
from refil.errors import CheckpointError, DataError, NumericalError, RefilError
from refil.harness.data_service import load_dataset
from refil.harness.models import DatasetSource, ExperimentSpec
from refil.harness.report import RESULTS_CSV, report, write_csv, write_report
from refil.harness.service import run_experiment
from refil.logging_config import configure_logging
from refil.networks import (
    AdamConfig, CompressionSpec, SgdConfig, TrainConfig, build_reference_model, insert_compression, train,
)
from refil.privacy import (
    AutoEstimator, ExactEstimator, HutchinsonEstimator, RefilConfig, calibrate_sigma, reconstruction_error_bound,
)
from refil.service import HonestButCurious, LogOff, ModelCatalog, SplitClient, read_activation_log, serve

logger = logging.getLogger("refil.harness")

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERICAL = 3

_dataset_adapter = TypeAdapter(DatasetSource)


class CliParser(argparse.ArgumentParser):
    """ArgumentParser whose usage errors exit with status 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _json_arg(value: str) -> str:
    """Inline JSON, or the path of a file holding it."""
    if value.lstrip().startswith("{"):
        return value
    try:
        return Path(value).read_text()
    except OSError as e:
        raise DataError(value, "open", str(e)) from e


def _dataset(value: str):
    return _dataset_adapter.validate_json(_json_arg(value))


def _estimator(args):
    if args.estimator == "exact":
        return ExactEstimator()
    if args.estimator == "hutchinson":
        return HutchinsonEstimator(k=args.k)
    return AutoEstimator()


def _load_input(args) -> np.ndarray:
    if args.input is not None:
        return np.load(args.input)
    if args.dataset is None:
        raise RefilError("give --input or --dataset")
    dataset = load_dataset(_dataset(args.dataset))
    return dataset.inputs[args.index]


# -- subcommands ---------------------------------------------------------------------

def cmd_train(args) -> int:
    dataset = load_dataset(_dataset(args.dataset), args.subsample, args.seed)
    kwargs = json.loads(args.model_kwargs) if args.model_kwargs else {}
    if args.model.startswith(("mlp", "cnn")):
        kwargs.setdefault("input_shape", dataset.example_shape)
    if args.model == "ncf":
        kwargs.setdefault("num_users", dataset.meta.get("num_users", 1000))
        kwargs.setdefault("num_items", dataset.meta.get("num_items", 1000))
    split = build_reference_model(args.model, seed=args.seed, **kwargs)
    if args.compress is not None:
        shape = split.split_shape
        spec = CompressionSpec(c1=shape[0], c2=args.compress,
                               kind="conv1x1" if len(shape) == 3 else "fully_connected")
        split = insert_compression(split, spec, seed=args.seed)
    optimizer = AdamConfig(lr=args.lr) if args.optimizer == "adam" else SgdConfig(lr=args.lr)
    cfg = TrainConfig(optimizer=optimizer, epochs=args.epochs, batch_size=args.batch_size,
                      task_loss="binary_cross_entropy" if args.model == "ncf" else "cross_entropy",
                      snr_lambda=args.snr_lambda, noise_dfil=args.noise_dfil, seed=args.seed)
    split, log = train(split, dataset, cfg)
    out = Path(args.out)
    model_id = args.model_id or split.name
    split.save(out, model_id)
    log.to_csv(out / f"{model_id}.training.csv")
    print(f"Saved {model_id} to {out} (final metric {log.records[-1].task_metric:.4f})")
    return EXIT_OK


def cmd_calibrate(args) -> int:
    client = checkpoint.load(args.client)
    x = _load_input(args)
    rng = np.random.default_rng(args.seed)
    calibration = calibrate_sigma(client, x, args.target_dfil, _estimator(args), rng)
    print(json.dumps({
        "sigma": calibration.sigma,
        "trace_jtj": calibration.trace_jtj,
        "input_dim": calibration.input_dim,
        "degenerate": calibration.degenerate,
        "mse_bound": reconstruction_error_bound(args.target_dfil),
    }, indent=2))
    return EXIT_OK


def cmd_attack(args) -> int:
    client = checkpoint.load(args.client)
    method = TvPriorMethod(lam=args.tv_lambda) if args.method == "tv" else UnbiasedMethod()
    cfg = AttackConfig(method=method, iterations=args.iterations, restarts=args.restarts)
    if args.activation_log:
        observations = [(p.request_id, p.tensor, p.achieved_dfil) for p in read_activation_log(args.activation_log)]
    else:
        observations = [(0, np.load(args.z), None)]
    truth = np.load(args.truth) if args.truth else None
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    for trial, (request_id, z, dfil) in enumerate(observations[:args.limit]):
        x_true = None if truth is None else (truth[trial] if truth.ndim > len(client.input_shape) else truth)
        result = reconstruct(z, client, cfg, x_true=x_true)
        rows.append({"grid": 0, "inv_dfil": 1.0 / dfil if dfil else 0.0, "trial": trial, "status": "ok",
                     "request_id": request_id, "objective": result.objective, "mse": result.mse,
                     "ssim": result.ssim})
        if result.x_hat.ndim == 3 and result.x_hat.shape[0] in (1, 3):
            write_netpbm(out / f"recon_{trial}", result.x_hat)
        np.save(out / f"recon_{trial}.npy", result.x_hat)
    fieldnames = ["grid", "inv_dfil", "trial", "status", "request_id", "objective", "mse", "ssim"]
    write_csv(out / RESULTS_CSV, rows, fieldnames)
    write_report(out, fieldnames, rows)
    print(f"Wrote {len(rows)} reconstructions to {out}")
    return EXIT_OK


def cmd_serve(args) -> int:
    catalog = ModelCatalog.from_directory(args.models)
    log_mode = HonestButCurious(path=args.log_activations) if args.log_activations else LogOff()
    serve(catalog, args.bind, log_mode)
    return EXIT_OK


def cmd_infer(args) -> int:
    client_model = checkpoint.load(args.client)
    x = _load_input(args)
    cfg = None
    if args.target_dfil is not None:
        cfg = RefilConfig(target_dfil=args.target_dfil, estimator=_estimator(args), seed=args.seed)
    with SplitClient(args.server, send_telemetry=not args.no_telemetry) as client:
        prediction = client.infer(args.model_id, client_model, x, cfg, np.random.default_rng(args.seed))
    print(json.dumps({"prediction": prediction.tolist()}))
    return EXIT_OK


def cmd_experiment(args) -> int:
    spec = ExperimentSpec.model_validate_json(_json_arg(args.spec))
    if args.output_dir:
        spec = spec.model_copy(update={"output_dir": Path(args.output_dir)})
    result = run_experiment(spec)
    print(report(result.results_csv.parent))
    return EXIT_OK


def cmd_report(args) -> int:
    print(report(args.results_dir))
    return EXIT_OK


# -- parser ------------------------------------------------------------------------------

def _add_input_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--input", help="single input as a .npy file")
    p.add_argument("--dataset", help="DatasetSource JSON (or a .json file) to take the input from")
    p.add_argument("--index", type=int, default=0, help="example index within --dataset")


def _add_estimator_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--estimator", choices=["auto", "exact", "hutchinson"], default="auto")
    p.add_argument("--k", type=int, default=64, help="Hutchinson probe count")


def build_parser() -> CliParser:
    parser = CliParser(prog="refil", description="Split inference privacy: dFIL measurement, ReFIL and attacks")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a reference split model and save both halves")
    p.add_argument("--model", required=True)
    p.add_argument("--model-kwargs", help="JSON object of builder arguments")
    p.add_argument("--model-id")
    p.add_argument("--dataset", required=True, help="DatasetSource JSON (or a .json file)")
    p.add_argument("--subsample", type=int)
    p.add_argument("--optimizer", choices=["sgd", "adam"], default="sgd")
    p.add_argument("--lr", type=float, default=0.1)
    p.add_argument("--epochs", type=int, default=20)
    p.add_argument("--batch-size", type=int, default=64)
    p.add_argument("--snr-lambda", type=float, default=0.0)
    p.add_argument("--noise-dfil", type=float)
    p.add_argument("--compress", type=int, metavar="C2", help="insert a compression layer with C2 channels")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default="models")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("calibrate", help="noise sigma that sets a target dFIL for one input")
    p.add_argument("--client", required=True, help="client checkpoint (.rflm)")
    p.add_argument("--target-dfil", type=float, required=True)
    _add_input_args(p)
    _add_estimator_args(p)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("attack", help="reconstruct inputs from observed activations")
    p.add_argument("--client", required=True, help="client checkpoint (.rflm)")
    source = p.add_mutually_exclusive_group(required=True)
    source.add_argument("--activation-log", help="honest-but-curious server log")
    source.add_argument("--z", help="single activation as a .npy file")
    p.add_argument("--truth", help="true inputs as a .npy file, for MSE/SSIM")
    p.add_argument("--method", choices=["unbiased", "tv"], default="unbiased")
    p.add_argument("--tv-lambda", type=float, default=TV_LAMBDA)
    p.add_argument("--iterations", type=int, default=5000)
    p.add_argument("--restarts", type=int, default=3)
    p.add_argument("--limit", type=int, default=None)
    p.add_argument("--out", default="attack")
    p.set_defaults(func=cmd_attack)

    p = sub.add_parser("serve", help="run the split server")
    p.add_argument("--bind", default=SERVER_BIND)
    p.add_argument("--models", required=True, help="directory of <id>.server.rflm checkpoints")
    p.add_argument("--log-activations", help="append received activations to this file")
    p.set_defaults(func=cmd_serve)

    p = sub.add_parser("infer", help="split inference against a running server")
    p.add_argument("--client", required=True, help="client checkpoint (.rflm)")
    p.add_argument("--model-id", required=True)
    p.add_argument("--server", default=SERVER_BIND)
    p.add_argument("--target-dfil", type=float, help="omit for noise-free inference")
    p.add_argument("--no-telemetry", action="store_true", default=not SEND_TELEMETRY)
    _add_input_args(p)
    _add_estimator_args(p)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("experiment", help="run an experiment spec")
    p.add_argument("spec", help="ExperimentSpec JSON file")
    p.add_argument("--output-dir")
    p.set_defaults(func=cmd_experiment)

    p = sub.add_parser("report", help="summarize a results directory")
    p.add_argument("results_dir")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    configure_logging(LOG_FILE, LOG_LEVEL)
    try:
        return args.func(args)
    except ValidationError as e:
        logger.error(f"Invalid configuration: {e}")
        return EXIT_USAGE
    except (DataError, CheckpointError) as e:
        logger.error(str(e))
        return EXIT_DATA
    except NumericalError as e:
        logger.error(str(e))
        return EXIT_NUMERICAL
    except RefilError as e:
        logger.error(str(e))
        return EXIT_USAGE
