"""Command-line pipeline: collect -> train-model -> train-controller -> evaluate.

Every run is a pure function of (config, master seed). Each stage writes
into its own subdirectory of --out together with a manifest recording the
resolved-config hash; a stage that finds its manifest refuses to overwrite
(outputs are write-once), and `pipeline` uses the manifests to resume from
the first incomplete stage. Per-stage seeds are derived from the master
seed by fixed labels, so rerunning one stage never shifts another's
randomness.

Exit codes: 0 success, 1 stage failure, 2 configuration error.
"""

import argparse
import dataclasses
import hashlib
import json
import os
import sys

import numpy as np
import yaml

from .odecore import Grid
from .nets import save_checkpoint, load_checkpoint
from .plant import Plant, PlantConfig, write_trial_csv, read_trial_csv
from .siggen import SampledSignal
from .learn import (TrainConfig, Dataset, TrainingDiverged, DataCollectionError,
                    collect_dataset, default_probe_plan, train_model,
                    train_controller, derived_seed)
from .evaluate import (AnodecController, PidController, evaluate_suite,
                       export_report, run_trial, default_disturbance_schedule,
                       SETUP1_COUNTS, SETUP2_COUNTS)

# fixed labels for per-stage seed derivation
_SEED_PLAN = 10
_SEED_COLLECT = 11
_SEED_MODEL = 12
_SEED_CONTROLLER = 13
_SEED_EVAL = 14


class ConfigError(ValueError):
    """Bad config file or flag combination (exit code 2)."""


class StageError(RuntimeError):
    """A pipeline stage failed or would clobber existing outputs (exit 1)."""


@dataclasses.dataclass(frozen=True)
class RunConfig:
    setup: int
    plant: PlantConfig
    train: TrainConfig
    counts: dict
    seed: int
    disturbances: bool = False

    def as_dict(self):
        return {"setup": self.setup,
                "plant": self.plant.as_dict(),
                "train": dataclasses.asdict(self.train),
                "counts": dict(self.counts),
                "seed": self.seed,
                "disturbances": self.disturbances}


def config_hash(run):
    blob = json.dumps(run.as_dict(), sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def _strict_keys(raw, allowed, where):
    unknown = sorted(set(raw) - set(allowed))
    if unknown:
        raise ConfigError(f"unknown {where} keys: {', '.join(unknown)}")


def load_run_config(args):
    """Resolve config file + flags into a RunConfig; flags win."""
    raw = {}
    if args.config:
        try:
            with open(args.config) as fh:
                raw = yaml.safe_load(fh) or {}
        except OSError as err:
            raise ConfigError(f"cannot read config: {err}") from err
        if not isinstance(raw, dict):
            raise ConfigError("config file must be a mapping")
    _strict_keys(raw, ("setup", "seed", "plant", "train", "eval"), "config")

    setup = args.setup if args.setup is not None else int(raw.get("setup", 1))
    if setup not in (1, 2):
        raise ConfigError("setup must be 1 or 2")
    seed = args.seed if args.seed is not None else int(raw.get("seed", 0))

    plant_over = dict(raw.get("plant") or {})
    plant_fields = {f.name for f in dataclasses.fields(PlantConfig)}
    _strict_keys(plant_over, plant_fields, "plant")
    if setup == 2:
        plant_over.setdefault("gravity", True)
        plant_over.setdefault("trial_time", 8.0)
    try:
        plant_cfg = PlantConfig(**plant_over)
    except (TypeError, ValueError) as err:
        raise ConfigError(f"bad plant config: {err}") from err

    train_over = dict(raw.get("train") or {})
    train_fields = {f.name for f in dataclasses.fields(TrainConfig)}
    _strict_keys(train_over, train_fields, "train")
    train_over.pop("seed", None)  # the master seed owns all randomness
    try:
        train_cfg = TrainConfig(seed=seed, **train_over)
    except (TypeError, ValueError) as err:
        raise ConfigError(f"bad train config: {err}") from err
    if args.ci_profile:
        train_cfg = train_cfg.ci_profile()

    eval_over = dict(raw.get("eval") or {})
    _strict_keys(eval_over, ("counts",), "eval")
    counts = dict(SETUP1_COUNTS if setup == 1 else SETUP2_COUNTS)
    over_counts = dict(eval_over.get("counts") or {})
    _strict_keys(over_counts, counts, "eval.counts")
    counts.update({k: int(v) for k, v in over_counts.items()})

    return RunConfig(setup=setup, plant=plant_cfg, train=train_cfg,
                     counts=counts, seed=seed,
                     disturbances=bool(args.disturbances))


def _stage_dir(out, stage):
    return os.path.join(out, stage)


def _manifest_path(out, stage):
    return os.path.join(_stage_dir(out, stage), "manifest.json")


def _stage_status(out, stage, run):
    """'absent' (never completed), 'complete' (same config), or 'mismatch'."""
    path = _manifest_path(out, stage)
    if not os.path.exists(path):
        return "absent"
    with open(path) as fh:
        manifest = json.load(fh)
    return "complete" if manifest.get("config_hash") == config_hash(run) else "mismatch"


def _write_manifest(out, stage, run, extra=None):
    payload = {"stage": stage, "config_hash": config_hash(run),
               "seed": run.seed}
    payload.update(extra or {})
    with open(_manifest_path(out, stage), "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _enter_stage(out, stage, run, resume):
    """Gate a stage: skip when complete under resume, refuse overwrites."""
    status = _stage_status(out, stage, run)
    if status == "complete":
        if resume:
            return False
        raise StageError(
            f"stage '{stage}' already complete in {out}; outputs are "
            "write-once, use a fresh --out")
    if status == "mismatch":
        raise ConfigError(
            f"stage '{stage}' in {out} was produced with a different config; "
            "use a fresh --out")
    os.makedirs(_stage_dir(out, stage), exist_ok=True)
    return True


def _require_stage(out, stage, run, hint):
    """Load an upstream manifest, insisting it came from this same config.

    Without the hash check a stage could silently consume artifacts from a
    different (config, seed), breaking reproducibility of its own outputs.
    """
    path = _manifest_path(out, stage)
    if not os.path.exists(path):
        raise StageError(f"{stage} stage missing; run '{hint}' first")
    with open(path) as fh:
        manifest = json.load(fh)
    if manifest.get("config_hash") != config_hash(run):
        raise ConfigError(
            f"stage '{stage}' in {out} was produced with a different config; "
            "use a fresh --out")
    return manifest


def cmd_collect(run, out, resume=False):
    if not _enter_stage(out, "dataset", run, resume):
        return
    sdir = _stage_dir(out, "dataset")
    plant = Plant(run.plant, seed=derived_seed(run.seed, _SEED_COLLECT))
    plan = default_probe_plan(T=run.plant.trial_time,
                              seed=derived_seed(run.seed, _SEED_PLAN))
    dataset = collect_dataset(plant, plan)
    grid = dataset.grid
    files = []
    for i, (u_sig, phi_sig) in enumerate(dataset.trials):
        name = f"trial_{i:02d}.csv"
        write_trial_csv(os.path.join(sdir, name), grid.times(), u_sig.values,
                        dataset.truth[i], phi_sig.values)
        files.append(name)
    _write_manifest(out, "dataset", run,
                    {"files": files, "T": grid.T, "dt": grid.dt,
                     "n_trials": len(files),
                     "train_indices": list(dataset.train_indices),
                     "val_index": dataset.val_index,
                     "total_interaction_s": grid.T * len(files),
                     "clip_warnings": plant.clip_warnings})
    print(f"collected {len(files)} trials of {grid.T} s into {sdir}")


def _load_dataset(out, manifest):
    grid = Grid(T=manifest["T"], dt=manifest["dt"])
    trials = []
    for name in manifest["files"]:
        _, u, _, phi_meas = read_trial_csv(os.path.join(_stage_dir(out, "dataset"), name))
        trials.append((SampledSignal(grid, u), SampledSignal(grid, phi_meas)))
    return Dataset(trials=tuple(trials),
                   train_indices=tuple(manifest["train_indices"]),
                   val_index=manifest["val_index"])


def _write_curves_csv(path, columns):
    names = list(columns)
    arrays = [np.asarray(columns[k]) for k in names]
    with open(path, "w", newline="") as fh:
        fh.write(",".join(names) + "\n")
        for row in zip(*arrays):
            fh.write(",".join(repr(float(v)) if np.issubdtype(type(v), np.floating)
                              else str(int(v)) for v in row) + "\n")


def cmd_train_model(run, out, resume=False):
    if not _enter_stage(out, "model", run, resume):
        return
    sdir = _stage_dir(out, "model")
    dataset = _load_dataset(out, _require_stage(out, "dataset", run, "collect"))
    cfg = dataclasses.replace(run.train, seed=derived_seed(run.seed, _SEED_MODEL))
    params, report = train_model(dataset, cfg)
    ckpt = os.path.join(sdir, "model.json")
    save_checkpoint(params, ckpt)
    _write_curves_csv(os.path.join(sdir, "train_curve.csv"),
                      {"step": np.arange(len(report.train_curve)),
                       "loss": [float(v) for v in report.train_curve]})
    _write_curves_csv(os.path.join(sdir, "val_curve.csv"),
                      {"step": report.val_steps,
                       "loss": [float(v) for v in report.val_curve]})
    summary = {"best_step": report.best_step,
               "best_val_loss": float(np.min(report.val_curve)),
               "final_train_loss": float(report.train_curve[-1]),
               "initial_train_loss": float(report.train_curve[0]),
               "steps": len(report.train_curve),
               "wall_clock_s": report.wall_clock_s}
    with open(os.path.join(sdir, "report.json"), "w") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")
    _write_manifest(out, "model", run,
                    {"checkpoint": "model.json", "best_step": report.best_step})
    print(f"model trained for {summary['steps']} steps; best validation loss "
          f"{summary['best_val_loss']:.4f} at step {report.best_step}")


def cmd_train_controller(run, out, resume=False):
    if not _enter_stage(out, "controller", run, resume):
        return
    sdir = _stage_dir(out, "controller")
    manifest = _require_stage(out, "model", run, "train-model")
    model_params = load_checkpoint(
        os.path.join(_stage_dir(out, "model"), manifest["checkpoint"]))
    cfg = dataclasses.replace(run.train,
                              seed=derived_seed(run.seed, _SEED_CONTROLLER))
    grid = Grid(T=run.plant.trial_time)
    params, report = train_controller(model_params, cfg, grid=grid)
    save_checkpoint(params, os.path.join(sdir, "controller.json"))
    _write_curves_csv(os.path.join(sdir, "train_curve.csv"),
                      {"step": np.arange(len(report.train_curve)),
                       "objective": [float(v) for v in report.train_curve],
                       "tracking": [float(v) for v in report.components["tracking"]],
                       "regularizer": [float(v) for v in report.components["regularizer"]]})
    summary = {"final_objective": float(report.train_curve[-1]),
               "initial_objective": float(report.train_curve[0]),
               "steps": len(report.train_curve),
               "wall_clock_s": report.wall_clock_s}
    with open(os.path.join(sdir, "report.json"), "w") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")
    _write_manifest(out, "controller", run, {"checkpoint": "controller.json"})
    print(f"controller trained for {summary['steps']} steps; objective "
          f"{summary['initial_objective']:.4f} -> {summary['final_objective']:.4f}")


def cmd_evaluate(run, out, resume=False):
    if not _enter_stage(out, "eval", run, resume):
        return None
    sdir = _stage_dir(out, "eval")
    manifest = _require_stage(out, "controller", run, "train-controller")
    ctrl_params = load_checkpoint(
        os.path.join(_stage_dir(out, "controller"), manifest["checkpoint"]))

    plant = Plant(run.plant)
    controllers = {"anodec": AnodecController(ctrl_params),
                   "pid": PidController()}
    report = evaluate_suite(plant, controllers, counts=run.counts,
                            seed=derived_seed(run.seed, _SEED_EVAL))

    if run.disturbances:
        grid = Grid(T=10.0)
        ref = SampledSignal(grid, np.full(grid.n_samples, 0.3))
        sched = default_disturbance_schedule(T=grid.T)
        for ci, (cid, controller) in enumerate(controllers.items()):
            plant.reseed(derived_seed(run.seed, _SEED_EVAL, 900 + ci))
            report.records.append(
                run_trial(plant, controller, ref, disturbances=sched,
                          controller_id=cid, distribution="disturbed", index=0))

    export_report(report, sdir)
    _write_manifest(out, "eval", run,
                    {"n_records": len(report.records), "partial": report.partial})
    for row in report.summary():
        print(f"{row['controller']:>8} {row['distribution']:<12} n={row['n']:<3} "
              f"rmse {row['mean_rmse_deg']:.2f} +- {row['std_rmse_deg']:.2f} deg")
    if report.partial:
        print("warning: some trials failed; suite is partial", file=sys.stderr)
    return report


def cmd_pipeline(run, out):
    cmd_collect(run, out, resume=True)
    cmd_train_model(run, out, resume=True)
    cmd_train_controller(run, out, resume=True)
    return cmd_evaluate(run, out, resume=True)


def build_parser():
    p = argparse.ArgumentParser(
        prog="anodec",
        description="Automatic controller design on a synthetic pneumatic arm")
    p.add_argument("command",
                   choices=["collect", "train-model", "train-controller",
                            "evaluate", "pipeline"])
    p.add_argument("--config", help="YAML run config (strict schema)")
    p.add_argument("--seed", type=int, default=None, help="master seed")
    p.add_argument("--setup", type=int, choices=(1, 2), default=None,
                   help="1: 5 s trials, no gravity; 2: 8 s trials with gravity")
    p.add_argument("--out", default="anodec_run", help="output directory")
    p.add_argument("--ci-profile", action="store_true",
                   help="reduced training budgets (5000 model / 6000 controller steps)")
    p.add_argument("--disturbances", action="store_true",
                   help="add disturbed trials to the evaluation")
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        run = load_run_config(args)
    except ConfigError as err:
        print(f"config error: {err}", file=sys.stderr)
        return 2
    try:
        os.makedirs(args.out, exist_ok=True)
        if args.command == "collect":
            cmd_collect(run, args.out)
        elif args.command == "train-model":
            cmd_train_model(run, args.out)
        elif args.command == "train-controller":
            cmd_train_controller(run, args.out)
        elif args.command == "evaluate":
            report = cmd_evaluate(run, args.out)
            if report is not None and report.partial:
                return 1
        else:
            report = cmd_pipeline(run, args.out)
            if report is not None and report.partial:
                return 1
    except ConfigError as err:
        print(f"config error: {err}", file=sys.stderr)
        return 2
    except (StageError, TrainingDiverged, DataCollectionError) as err:
        print(f"stage failure: {err}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
