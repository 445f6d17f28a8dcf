"""Command-line entry points.

Subcommands: gen-data, train, eval, quantize, report, experiment-memorization.
Run configurations live in a YAML file; ``--set section.key=value`` overrides
individual entries.  Exit codes: 0 success, 2 config error, 3 data error,
4 numerical divergence.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from pathlib import Path

import numpy as np
import yaml

from . import analysis, datasets, fxp, train
from .model import forward
from .modelfile import ModelBundle, bundle_from_state, load_model, save_model
from .quantizer import model_size_bits, op_count_report

EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_DIVERGED = 4

DATA_DIR_ENV = "ORNNKIT_DATA_DIR"

CONFIG_SCHEMA = {
    "task": {"copy", "smnist", "pmnist"},
    "data": {"K", "L", "n_train", "n_val", "n_test", "seed", "cache",
             "mnist_images", "mnist_labels", "subset", "permutation_seed"},
    "model": {"kind", "k", "q", "unit", "train_col_signs"},
    "train": {"lr0", "decay", "batch_size", "epochs", "uv_bits", "seed",
              "grad_clip", "no_latent_clip"},
    "ptq": {"p_a", "p_i", "alpha_i"},
    "output": {"model", "metrics"},
}


class ConfigError(ValueError):
    pass


def load_config(path: str, overrides: list[str]) -> dict:
    try:
        with open(path) as fh:
            cfg = yaml.safe_load(fh) or {}
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from exc
    if not isinstance(cfg, dict):
        raise ConfigError("config root must be a mapping")
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not key=value")
        key, value = item.split("=", 1)
        parts = key.split(".")
        node = cfg
        for part in parts[:-1]:
            node = node.setdefault(part, {})
        node[parts[-1]] = yaml.safe_load(value)
    validate_config(cfg)
    return cfg


def validate_config(cfg: dict) -> None:
    for key, value in cfg.items():
        if key == "task":
            if value not in CONFIG_SCHEMA["task"]:
                raise ConfigError(f"unknown task {value!r}")
            continue
        if key not in CONFIG_SCHEMA:
            raise ConfigError(f"unknown config section {key!r}")
        if not isinstance(value, dict):
            raise ConfigError(f"section {key!r} must be a mapping")
        unknown = set(value) - CONFIG_SCHEMA[key]
        if unknown:
            raise ConfigError(f"unknown keys in {key!r}: {sorted(unknown)}")
    if "task" not in cfg:
        raise ConfigError("config must set a task")


def _data_path(path: str) -> str:
    base = os.environ.get(DATA_DIR_ENV)
    if base and not os.path.isabs(path):
        return os.path.join(base, path)
    return path


def build_datasets(cfg: dict):
    task = cfg["task"]
    data = cfg.get("data", {})
    if task == "copy":
        spec = datasets.CopySpec(
            K=data.get("K", 10), L=data.get("L", 100),
            n_train=data.get("n_train", 50_000),
            n_val=data.get("n_val", 2_000),
            n_test=data.get("n_test", 2_000),
            seed=data.get("seed", 0))
        cache = data.get("cache")
        if cache and Path(_data_path(cache)).exists():
            return spec, datasets.load_copy_cache(_data_path(cache), spec)
        splits = datasets.gen_copy(spec)
        if cache:
            datasets.save_copy_cache(_data_path(cache), spec, splits)
        return spec, splits
    mode = "permuted" if task == "pmnist" else "sequential"
    spec = datasets.MnistSpec(
        images_path=_data_path(data["mnist_images"]),
        labels_path=_data_path(data["mnist_labels"]),
        mode=mode,
        permutation_seed=data.get("permutation_seed", 92916),
        subset=data.get("subset"))
    full = datasets.load_mnist(spec)
    train_set, val_set = datasets.split_train_val(full, data.get("n_val", 10_000))
    return spec, (train_set, val_set, val_set)


def build_arch(cfg: dict) -> train.Architecture:
    task = cfg["task"]
    model = cfg.get("model", {})
    if task == "copy":
        d_in, d_out, mode = datasets.COPY_ALPHABET, datasets.COPY_CLASSES, "many-to-many"
    else:
        d_in, d_out, mode = 1, 10, "many-to-one"
    return train.Architecture(
        d_in=d_in, d_out=d_out,
        kind=model.get("kind", "binary"),
        k=model.get("k", 6), q=model.get("q", 1),
        unit=model.get("unit", "linear"),
        output_mode=mode, output_activation="softmax",
        train_col_signs=model.get("train_col_signs", False))


def build_train_config(cfg: dict) -> train.TrainConfig:
    t = cfg.get("train", {})
    return train.TrainConfig(
        lr0=t.get("lr0", 1e-3), decay=t.get("decay", 0.98),
        batch_size=t.get("batch_size", 128), epochs=t.get("epochs", 10),
        uv_bits=t.get("uv_bits"), seed=t.get("seed", 0),
        grad_clip=t.get("grad_clip"),
        latent_clip=not t.get("no_latent_clip", False))


def write_metrics(path: str, history: list[dict]) -> None:
    columns = ["epoch", "train_loss", "val_xent", "val_accuracy", "lr", "wall_time"]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(columns)
        for record in history:
            writer.writerow([record.get(c, "") for c in columns])


def cmd_train(args) -> int:
    cfg = load_config(args.config, args.set or [])
    try:
        _, (train_set, val_set, test_set) = build_datasets(cfg)
    except (datasets.DataError, OSError, KeyError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    arch = build_arch(cfg)
    config = build_train_config(cfg)
    state = train.init_state(arch, config.seed)
    result = train.fit(state, arch, train_set, val_set, config)

    out = cfg.get("output", {})
    model_path = out.get("model", "model.hdrn")
    bundle = bundle_from_state(result.best, arch, config)
    save_model(model_path, bundle)
    last_path = str(Path(model_path).with_suffix(".last.hdrn"))
    save_model(last_path, bundle_from_state(result.last, arch, config))
    write_metrics(out.get("metrics", "metrics.csv"), result.history)

    test_metrics = train.eval_metric(bundle.to_model(), test_set)
    print(json.dumps({"test": test_metrics,
                      "best_model": model_path, "last_model": last_path}))
    return EXIT_DIVERGED if result.diverged else 0


def cmd_quantize(args) -> int:
    bundle = load_model(args.model)
    cfg = load_config(args.config, args.set or [])
    try:
        _, (_, val_set, _) = build_datasets(cfg)
    except (datasets.DataError, OSError, KeyError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    if len(val_set) == 0:
        print("data error: empty calibration set", file=sys.stderr)
        return EXIT_DATA
    ptq_cfg = cfg.get("ptq", {})
    model = bundle.to_model()
    uv = bundle.uv_bits
    if not isinstance(uv, int):
        print("config error: PTQ requires a uniformly quantized model",
              file=sys.stderr)
        return EXIT_CONFIG
    calib = val_set.inputs[:args.calib_count]
    plan = fxp.calibrate(model, calib, p_a=ptq_cfg.get("p_a", 12),
                         p_i=ptq_cfg.get("p_i", 2),
                         alpha_i=ptq_cfg.get("alpha_i", 2.0), p=uv)
    save_model(args.output, bundle.with_plan(plan))

    result = fxp.ptq_forward(plan, model, calib)
    _, float_logits = forward(model, calib)
    disagree = float(np.mean(np.argmax(result.outputs, axis=-1)
                             != np.argmax(float_logits, axis=-1)))
    print(json.dumps({
        "alpha_W": plan.alpha_W, "alpha_h": plan.alpha_h, "n_h": plan.n_h,
        "max_h": plan.max_h, "argmax_disagreement": disagree,
        "saturations": result.saturations, "output": args.output}))
    return 0


def cmd_eval(args) -> int:
    bundle = load_model(args.model)
    cfg = load_config(args.config, args.set or [])
    try:
        _, (_, _, test_set) = build_datasets(cfg)
    except (datasets.DataError, OSError, KeyError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    model = bundle.to_model()
    report = {"mode": args.mode}
    if args.mode == "float":
        report.update(train.eval_metric(model, test_set))
    else:
        if bundle.plan is None:
            print("config error: fxp mode requires an embedded plan",
                  file=sys.stderr)
            return EXIT_CONFIG
        result = fxp.ptq_forward(bundle.plan, model, test_set.inputs)
        report["xent"] = train.loss_xent(result.outputs, test_set.targets)
        if model.output_mode == "many-to-one":
            report["accuracy"] = float(np.mean(
                np.argmax(result.outputs, axis=-1) == test_set.targets))
        report["saturations"] = result.saturations
    print(json.dumps(report))
    return 0


def cmd_report(args) -> int:
    bundle = load_model(args.model)
    arch = bundle.arch
    uv = bundle.uv_bits
    p = uv if isinstance(uv, int) else (2 if uv == "ternary" else None)
    size = model_size_bits(arch.d_h, arch.d_in, arch.d_out, p)
    ops = op_count_report(arch.d_h, arch.d_in, arch.d_out, arch.q)
    report = {
        "d_h": arch.d_h, "d_in": arch.d_in, "d_out": arch.d_out,
        "q": arch.q, "uv_bits": uv,
        "size": {"core_bits": size.core_bits, "core_kb": size.core_kb,
                 "bias_bits": size.bias_bits, "scale_bits": size.scale_bits,
                 "total_kb": size.total_kb},
        "ops": {"input_mults": ops.input_mults, "input_adds": ops.input_adds,
                "recurrent_mults": ops.recurrent_mults,
                "recurrent_adds": ops.recurrent_adds,
                "output_mults": ops.output_mults, "output_adds": ops.output_adds},
    }
    if args.json:
        print(json.dumps(report))
    else:
        print(f"model: d_h={arch.d_h} d_in={arch.d_in} d_out={arch.d_out} "
              f"q={arch.q} uv_bits={uv}")
        print(f"size:  core {size.core_kb:.3f} kB ({size.core_bits} bits), "
              f"biases {size.bias_bits} bits, scales {size.scale_bits} bits")
        print(f"ops:   recurrent {ops.recurrent_adds} add / "
              f"{ops.recurrent_mults} mul, input {ops.input_adds} add, "
              f"output {ops.output_adds} add")
    return 0


def cmd_experiment_memorization(args) -> int:
    curves = analysis.memorization_sweep(k=args.k, steps=args.steps,
                                         seed=args.seed)
    curves.write_csv(args.output)
    print(f"wrote {args.output}")
    return 0


def cmd_gen_data(args) -> int:
    cfg = load_config(args.config, args.set or [])
    if cfg["task"] != "copy":
        print("config error: gen-data only generates the copy task",
              file=sys.stderr)
        return EXIT_CONFIG
    if "cache" not in cfg.get("data", {}):
        print("config error: gen-data needs data.cache", file=sys.stderr)
        return EXIT_CONFIG
    spec, _ = build_datasets(cfg)
    print(json.dumps({"cache": cfg["data"]["cache"], "T": spec.T,
                      "baseline_xent": spec.naive_baseline()}))
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="ornnkit")
    parser.add_argument("--threads", type=int, default=1,
                        help="data-parallel width (results are thread-count "
                             "independent; currently single-threaded numpy)")
    sub = parser.add_subparsers(dest="command", required=True)

    def with_config(p):
        p.add_argument("config")
        p.add_argument("--set", action="append", metavar="KEY=VALUE")

    p = sub.add_parser("train", help="train a model from a config file")
    with_config(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a saved model")
    p.add_argument("model")
    with_config(p)
    p.add_argument("--mode", choices=["float", "fxp"], default="float")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("quantize", help="calibrate a fixed-point plan")
    p.add_argument("model")
    with_config(p)
    p.add_argument("--output", default="model.ptq.hdrn")
    p.add_argument("--calib-count", type=int, default=256)
    p.set_defaults(func=cmd_quantize)

    p = sub.add_parser("report", help="size and operation-count report")
    p.add_argument("model")
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("experiment-memorization",
                       help="linear-vs-relu perturbation sweep CSV")
    p.add_argument("--k", type=int, default=7)
    p.add_argument("--steps", type=int, default=200)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--output", default="memorization.csv")
    p.set_defaults(func=cmd_experiment_memorization)

    p = sub.add_parser("gen-data", help="generate and cache a copy-task dataset")
    with_config(p)
    p.set_defaults(func=cmd_gen_data)

    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except datasets.DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
