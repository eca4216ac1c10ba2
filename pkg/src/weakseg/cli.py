"""Command-line entry point: gen, train, segment, eval, grid.

Exit codes: 0 success, 1 usage or config error, 2 data error, 3 numerical failure.
"""

import argparse
import csv
import itertools
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import config as C
from . import dtw
from .evaluation import auroc, format_table, point_metrics
from .inference import segment_dataset
from .model import ScorerModel, load_model, save_model
from .series import (
    SPLITS,
    DataError,
    fit_normalization,
    generate_synthetic,
    load_dataset,
    normalized,
    save_dataset,
    split_dataset,
)
from .training import NumericalError, TrainState, train

log = logging.getLogger("weakseg")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


def sidecar_paths(model_path) -> dict:
    p = Path(model_path)
    stem = p.with_suffix("")
    return {"log": Path(f"{stem}.log.csv"), "threshold": Path(f"{stem}.threshold.json")}


def _require(cfg, *keys):
    for k in keys:
        if not cfg[k]:
            raise C.ConfigError(f"missing required option --{k}")


# -- gen ------------------------------------------------------------------------

def cmd_gen(cfg: dict) -> int:
    _require(cfg, "out")
    sc = C.synth_config(cfg)
    ratio = C.split_ratio(cfg)
    out = Path(cfg["out"])
    ds = generate_synthetic(sc, cfg["seed"])
    parts = split_dataset(ds, ratio, cfg["seed"])
    stats = fit_normalization(parts["train"]) if len(parts["train"]) else None
    for tag in SPLITS:
        save_dataset(parts[tag], out / tag, stats)
    with open(out / "config.json", "w") as f:
        json.dump({k: v for k, v in cfg.items() if k.startswith(("synth.", "split.", "seed"))}, f, indent=2)
    print(" ".join(f"{tag}={len(parts[tag])}" for tag in SPLITS))
    return EXIT_OK


# -- train ----------------------------------------------------------------------

def _load_train_valid(data_dir: Path):
    train_set = load_dataset(data_dir / "train", "train")
    valid_set = load_dataset(data_dir / "valid", "valid")
    stats = train_set.normalization or fit_normalization(train_set)
    return normalized(train_set, stats), normalized(valid_set, stats), stats


def _write_log(path: Path, history) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["epoch", "classification_loss", "alignment_loss", "total_loss", "validation_f1", "tau_star",
                    "best_validation_f1"])
        best = -1.0
        for r in history:
            best = max(best, r.validation_f1)
            w.writerow([r.epoch, repr(r.classification), repr(r.alignment), repr(r.total), repr(r.validation_f1),
                        repr(r.tau_star), repr(best)])


def cmd_train(cfg: dict) -> int:
    _require(cfg, "data", "out")
    tc = C.train_config(cfg)
    mk = C.model_kwargs(cfg)
    data_dir, out = Path(cfg["data"]), Path(cfg["out"])
    train_set, valid_set, stats = _load_train_valid(data_dir)
    if train_set.d_vars is None:
        raise DataError(f"{data_dir / 'train'}: training split is empty")
    state = None
    if cfg["resume"] and out.is_file():
        model, doc = load_model(out)
        if model.d_vars != train_set.d_vars:
            raise DataError(f"checkpoint expects D={model.d_vars}, data has D={train_set.d_vars}")
        state = TrainState.from_dict(doc["training_state"])
        log.info("resuming from epoch %d", state.epoch)
    else:
        model = ScorerModel.create(train_set.d_vars, pooling=tc.pooling, seed=cfg["seed"], **mk)
    model.normalization = stats
    result = train(model, train_set, valid_set, tc, state=state)
    result.model.normalization = stats
    out.parent.mkdir(parents=True, exist_ok=True)
    train_keys = {k: v for k, v in cfg.items() if k.startswith(("train.", "model.")) or k == "seed"}
    save_model(result.model, out, {"config": train_keys, "training_state": result.state.to_dict()})
    side = sidecar_paths(out)
    _write_log(side["log"], result.history)
    with open(side["threshold"], "w") as f:
        json.dump(
            {
                "tau_star": result.threshold.tau_star,
                "validation_f1": result.threshold.validation_f1,
                "warning": result.threshold.warning,
                "best_epoch": result.state.best_epoch,
                "L": tc.L,
                "tau": tc.tau,
                "gamma": tc.gamma,
            },
            f,
            indent=2,
        )
    print(f"best epoch {result.state.best_epoch}: validation F1 {result.threshold.validation_f1:.4f}, "
          f"tau* {result.threshold.tau_star:.6g}")
    return EXIT_OK


# -- segment --------------------------------------------------------------------

def _write_matrix(path: Path, M) -> None:
    np.savetxt(path, M, delimiter=",", fmt="%.17g")


def cmd_segment(cfg: dict) -> int:
    _require(cfg, "model", "data", "out")
    model_path = Path(cfg["model"])
    side = sidecar_paths(model_path)
    if not model_path.is_file():
        raise DataError(f"missing checkpoint: {model_path}")
    if not side["threshold"].is_file():
        raise DataError(f"missing threshold sidecar: {side['threshold']}")
    model, _ = load_model(model_path)
    with open(side["threshold"]) as f:
        thr = json.load(f)
    data = load_dataset(Path(cfg["data"]))
    if data.d_vars is not None and data.d_vars != model.d_vars:
        raise DataError(f"dimension mismatch: checkpoint expects D={model.d_vars}, data has D={data.d_vars}")
    data = normalized(data, model.normalization)
    results, failures = segment_dataset(model, data, thr["L"], thr["tau"], thr["tau_star"])
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "segments.csv", "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["id", "start", "end", "label", "global_score"])
        for r in results:
            for seg in r.segments:
                w.writerow([r.id, seg.start, seg.end, seg.label, repr(r.global_score)])
    with open(out / "instances.csv", "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["id", "global_score", "label", "pseudo_label"])
        for r in results:
            w.writerow([r.id, repr(r.global_score), int(r.global_score >= thr["tau_star"]),
                        "".join(str(int(b)) for b in r.pseudo_label)])
    for r in results:
        with open(out / f"{r.id}.pred.csv", "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["t", "label"])
            w.writerows(enumerate(int(v) for v in r.point_predictions))
    if cfg["dump_dtw"]:
        dump = Path(cfg["dump_dtw"])
        dump.mkdir(parents=True, exist_ok=True)
        for r in results:
            if not r.pseudo_label.any():
                continue
            costs = dtw.build_cost_matrix(r.pseudo_label, r.local_scores, model.clamp_eps)
            _, hard = dtw.sdtw_forward(costs, 0.0)
            _, soft = dtw.sdtw_forward(costs, thr["gamma"])
            L, T = costs.shape
            _write_matrix(dump / f"{r.id}.cost.csv", costs)
            _write_matrix(dump / f"{r.id}.R.csv", hard.R[1 : L + 1, 1 : T + 1])
            _write_matrix(dump / f"{r.id}.E.csv", dtw.sdtw_backward(costs, soft))
    if failures:
        with open(out / "failures.csv", "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["id", "error"])
            w.writerows(failures)
        print(f"{len(failures)} instance(s) failed; see {out / 'failures.csv'}", file=sys.stderr)
        return EXIT_DATA
    print(f"segmented {len(results)} instance(s)")
    return EXIT_OK


# -- eval -----------------------------------------------------------------------

def read_predictions(pred_dir: Path, ids) -> dict:
    preds = {}
    for iid in ids:
        p = pred_dir / f"{iid}.pred.csv"
        if not p.is_file():
            raise DataError(f"missing prediction file: {p}")
        with open(p, newline="") as f:
            rows = list(csv.DictReader(f))
        preds[iid] = np.array([int(r["label"]) for r in rows], dtype=np.int64)
    return preds


def cmd_eval(cfg: dict) -> int:
    _require(cfg, "pred", "data")
    pred_dir = Path(cfg["pred"])
    data = load_dataset(Path(cfg["data"]))
    if not data.has_point_labels() and len(data):
        raise DataError(f"{cfg['data']}: point-level ground truth (point_labels/) is missing")
    ids = [i.id for i in data.instances]
    preds = read_predictions(pred_dir, ids)
    truth = {i.id: pl for i, pl in zip(data.instances, data.point_labels or [])}
    for iid in ids:
        if preds[iid].shape != truth[iid].shape:
            raise DataError(f"{iid}: prediction has {preds[iid].size} points, ground truth has {truth[iid].size}")
    all_pred = np.concatenate([preds[i] for i in ids]) if ids else np.zeros(0, dtype=int)
    all_truth = np.concatenate([truth[i] for i in ids]) if ids else np.zeros(0, dtype=int)
    point = point_metrics(all_pred, all_truth)
    report = {"point": point.to_dict()}
    inst_path = pred_dir / "instances.csv"
    if inst_path.is_file():
        with open(inst_path, newline="") as f:
            rows = {r["id"]: r for r in csv.DictReader(f)}
        missing = [i for i in ids if i not in rows]
        if missing:
            raise DataError(f"{inst_path}: no row for ids {missing[:5]}")
        scores = np.array([float(rows[i]["global_score"]) for i in ids])
        yhat = np.array([int(rows[i]["label"]) for i in ids])
        inst = point_metrics(yhat, data.labels)
        report["instance"] = inst.to_dict()
        try:
            report["instance_auroc"] = auroc(scores, data.labels)
        except ValueError:
            report["instance_auroc"] = None
    out = Path(cfg["out"]) if cfg["out"] else pred_dir / "metrics.json"
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w") as f:
        json.dump(report, f, indent=2)
    rows = {"point_precision": point.precision, "point_recall": point.recall, "point_f1": point.f1,
            "point_iou": point.iou}
    if "instance" in report:
        rows["instance_f1"] = report["instance"]["f1"]
        if report["instance_auroc"] is not None:
            rows["instance_auroc"] = report["instance_auroc"]
    print(format_table(rows))
    return EXIT_OK


# -- grid -----------------------------------------------------------------------

def cmd_grid(cfg: dict) -> int:
    _require(cfg, "data", "out")
    Ls = C.grid_values(cfg, "grid.L", int)
    taus = C.grid_values(cfg, "grid.tau", float)
    betas = C.grid_values(cfg, "grid.beta", float)
    cells = [C.train_config(cfg, L=L, tau=t, beta=b) for L, t, b in itertools.product(Ls, taus, betas)]
    mk = C.model_kwargs(cfg)
    train_set, valid_set, stats = _load_train_valid(Path(cfg["data"]))
    out = Path(cfg["out"])
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["L", "tau", "beta", "validation_f1", "tau_star", "best_epoch"])
        for tc in cells:
            model = ScorerModel.create(train_set.d_vars, pooling=tc.pooling, seed=cfg["seed"], **mk)
            res = train(model, train_set, valid_set, tc)
            w.writerow([tc.L, tc.tau, tc.beta, repr(res.threshold.validation_f1), repr(res.threshold.tau_star),
                        res.state.best_epoch])
            f.flush()
            print(f"L={tc.L} tau={tc.tau} beta={tc.beta}: validation F1 {res.threshold.validation_f1:.4f}")
    return EXIT_OK


COMMANDS = {"gen": cmd_gen, "train": cmd_train, "segment": cmd_segment, "eval": cmd_eval, "grid": cmd_grid}

# flags whose dashed spelling differs from the config key
ALIASES = {"dump-dtw": "dump_dtw", "pred-dir": "pred", "data-dir": "data", "out-dir": "out"}
BOOLEAN_FLAGS = {"resume"}


def parse_overrides(tokens: list) -> dict:
    """Turn ``--key value`` pairs (and bare boolean flags) into a dict."""
    out = {}
    i = 0
    while i < len(tokens):
        tok = tokens[i]
        if not tok.startswith("--"):
            raise C.ConfigError(f"unexpected argument {tok!r}")
        key = tok[2:]
        if "=" in key:
            key, value = key.split("=", 1)
            i += 1
        elif key in BOOLEAN_FLAGS and (i + 1 == len(tokens) or tokens[i + 1].startswith("--")):
            value = True
            i += 1
        else:
            if i + 1 >= len(tokens):
                raise C.ConfigError(f"option {tok} needs a value")
            value = tokens[i + 1]
            i += 2
        out[ALIASES.get(key, key)] = value
    return out


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="weakseg",
        description="Weakly supervised temporal anomaly segmentation.",
        epilog="Any config key can be overridden with --key value, e.g. --train.L 8 --seed 3.",
    )
    p.add_argument("command", choices=sorted(COMMANDS))
    p.add_argument("--config", help="flat JSON file with dotted keys")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    parser = build_parser()
    try:
        args, rest = parser.parse_known_args(argv)
    except SystemExit as e:
        return EXIT_OK if e.code == 0 else EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = C.load_config(args.config, parse_overrides(rest))
        return COMMANDS[args.command](cfg)
    except C.ConfigError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, FileNotFoundError) as e:
        print(f"data error: {e}", file=sys.stderr)
        return EXIT_DATA
    except NumericalError as e:
        print(f"numerical failure: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as e:
        # shape and dimension problems surfaced by the library
        print(f"data error: {e}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
