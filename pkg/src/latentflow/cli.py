"""Command-line pipeline driver.

Subcommands cover the whole workflow: ``gen-data`` -> ``train-mld`` ->
``train-agent`` -> ``evaluate``, plus ``baseline-de`` / ``baseline-random``
for simulator-budget comparisons and ``export-plots`` for tidy CSV bundles.
Every command echoes the fully resolved config into its run directory and is
deterministic given config + seeds.

Exit codes: 0 success, 1 usage/config, 2 data, 3 numeric failure.
"""
from __future__ import annotations

import argparse
import csv
import dataclasses
import glob
import json
import os
import sys
import time

import numpy as np

from .baselines import DeConfig, optimize_schedule_de, random_search_schedule
from .config import RunConfig, load_config
from .errors import ConfigError, DataError, LatentflowError, NumericError
from .mld import evaluate, load_mld, train_mld
from .msdrl import LatentEnv, evaluate_policy, train_policy
from .sac import SacAgent
from .scenario import Dataset, generate_dataset, load_dataset

__all__ = ["main"]


class _Parser(argparse.ArgumentParser):
    """argparse that reports usage problems as ConfigError (exit 1, not 2)."""

    def error(self, message):
        raise ConfigError(f"{self.prog}: {message}")


def _echo_config(cfg: RunConfig, out_dir: str):
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "config.json"), "w") as fh:
        json.dump(cfg.to_dict(), fh, indent=1, sort_keys=True)


def _write_csv(path, header, rows):
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)


def _read_csv(path, expected_for_error):
    if not os.path.exists(path):
        raise DataError(f"missing {os.path.basename(path)}; expected files: "
                        f"{expected_for_error}")
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise DataError(f"{path} is empty")
    return rows[0], rows[1:]


def _load_dataset_arg(args, cfg: RunConfig) -> Dataset:
    path = args.dataset or os.path.join(cfg.output_dir, "dataset")
    if not os.path.exists(os.path.join(path, "manifest.json")):
        raise DataError(f"no dataset at {path} (run gen-data first or pass "
                        f"--dataset)")
    return load_dataset(path)


def _check_grid(cfg: RunConfig, ds: Dataset):
    g = ds.grid()
    if (g.nx, g.ny) != (cfg.grid.nx, cfg.grid.ny):
        raise ConfigError(f"dataset grid {g.nx}x{g.ny} does not match config "
                          f"grid {cfg.grid.nx}x{cfg.grid.ny}")
    n_act = ds.n_injectors + (len(ds.wells()) - ds.n_injectors)
    cfg_act = len(cfg.wells)
    if n_act != cfg_act:
        raise ConfigError(f"dataset has {n_act} controlled wells, config has "
                          f"{cfg_act}")


# ------------------------------------------------------------------ commands

def _cmd_gen_data(args) -> int:
    cfg = load_config(args.config, seed=args.seed, output_dir=args.out)
    out = cfg.output_dir
    _echo_config(cfg, out)
    ds = generate_dataset(cfg.dataset_spec(), os.path.join(out, "dataset"),
                          jobs=args.jobs)
    print(f"dataset: {ds.n_episodes} episodes "
          f"({len(ds.train_idx)} train / {len(ds.test_idx)} test), "
          f"{len(ds.failed)} failed, horizon {ds.horizon}, "
          f"grid {ds.grid().nx}x{ds.grid().ny} -> {out}/dataset")
    return 0


def _train_one_mld(cfg: RunConfig, ds: Dataset, out: str, tag: str = ""):
    sub = os.path.join(out, tag) if tag else out
    os.makedirs(sub, exist_ok=True)
    t0 = time.time()
    model, logs = train_mld(ds, cfg.mld, out_path=os.path.join(sub, "mld.ckpt"))
    _write_csv(os.path.join(sub, "train_log.csv"),
               ["epoch", "loss", "mse", "jec", "test_rmse", "test_r2", "lr"],
               [[lg.epoch, lg.loss, lg.mse, lg.jec, lg.test_rmse, lg.test_r2,
                 cfg.mld.epoch_lr(lg.epoch)] for lg in logs])
    rep = evaluate(model, ds, split="test")
    pred_cum = rep["predictions"].sum(axis=(1, 2)) * ds.dt_days
    obs_cum = rep["observations"].sum(axis=(1, 2)) * ds.dt_days
    _write_csv(os.path.join(sub, "mld_eval.csv"),
               ["episode", "r2", "pred_cum_brine_m3", "obs_cum_brine_m3"],
               [[int(ds.test_idx[k]), rep["per_case_r2"][k], pred_cum[k],
                 obs_cum[k]] for k in range(len(ds.test_idx))])
    print(f"{tag or 'mld'}: test R2 {rep['r2']:.4f} rmse {rep['rmse']:.3f} "
          f"({time.time() - t0:.0f}s, {len(logs)} epochs) -> {sub}")
    return rep


def _cmd_train_mld(args) -> int:
    cfg = load_config(args.config, seed=args.seed, output_dir=args.out)
    overrides = {}
    if args.epochs is not None:
        overrides["epochs"] = args.epochs
    if args.unimodal:
        overrides["unimodal"] = True
    if args.lambda_weight is not None:
        overrides["lambda_weight"] = args.lambda_weight
    if overrides:
        cfg = dataclasses.replace(cfg, mld=dataclasses.replace(cfg.mld,
                                                               **overrides))
    ds = load_dataset(args.dataset)
    _check_grid(cfg, ds)
    out = cfg.output_dir
    _echo_config(cfg, out)
    if args.lambda_sweep:
        try:
            lams = [float(s) for s in args.lambda_sweep.split(",") if s]
        except ValueError as exc:
            raise ConfigError(f"--lambda-sweep: {exc}") from exc
        if not lams:
            raise ConfigError("--lambda-sweep: need at least one value")
        rows = []
        for lam in lams:
            sub_cfg = dataclasses.replace(
                cfg, mld=dataclasses.replace(cfg.mld, lambda_weight=lam))
            rep = _train_one_mld(sub_cfg, ds, out, tag=f"lambda_{lam:g}")
            rows.append([lam, rep["r2"], rep["rmse"]])
        _write_csv(os.path.join(out, "lambda_sweep_summary.csv"),
                   ["lambda", "test_r2", "test_rmse"], rows)
        return 0
    _train_one_mld(cfg, ds, out)
    return 0


def _cmd_train_agent(args) -> int:
    cfg = load_config(args.config, seed=args.seed, output_dir=args.out)
    model = load_mld(args.mld_ckpt)
    ds = _load_dataset_arg(args, cfg)
    _check_grid(cfg, ds)
    n_act = ds.n_injectors + (len(ds.wells()) - ds.n_injectors)
    if model.n_actions != n_act:
        raise ConfigError(f"checkpoint expects {model.n_actions} actions, "
                          f"dataset provides {n_act}")
    if (model.ny, model.nx) != (ds.grid().ny, ds.grid().nx):
        raise ConfigError("checkpoint grid does not match dataset grid")
    policy = cfg.policy
    if args.episodes is not None:
        policy = dataclasses.replace(policy, episodes=args.episodes)
    if args.fixed_alpha is not None:
        policy = dataclasses.replace(
            policy, sac=dataclasses.replace(policy.sac,
                                            fixed_alpha=args.fixed_alpha))
    out = cfg.output_dir
    _echo_config(cfg, out)
    t0 = time.time()
    agent, curve = train_policy(model, ds, policy, cfg.econ,
                                eval_scenarios=cfg.eval_scenarios)
    agent.save(os.path.join(out, "agent.ckpt"))
    _write_csv(os.path.join(out, "train_curve.csv"),
               ["episode", "pred_npv", "alpha", "q_loss", "pi_loss",
                "mean_logp"],
               [[r["episode"], r["pred_npv"], r["alpha"], r["q_loss"],
                 r["pi_loss"], r["mean_logp"]] for r in curve])
    best = max((r["pred_npv"] for r in curve), default=float("nan"))
    print(f"agent: {policy.episodes} episodes, best predicted NPV "
          f"{best:.4e} USD ({time.time() - t0:.0f}s) -> {out}")
    return 0


def _eval_indices(args, cfg: RunConfig, ds: Dataset):
    if args.scenarios:
        try:
            return [int(s) for s in args.scenarios.split(",") if s]
        except ValueError as exc:
            raise ConfigError(f"--scenarios: {exc}") from exc
    if cfg.eval_scenarios is not None:
        return list(cfg.eval_scenarios)
    if ds.spec_dict["mode"] == "deterministic":
        return [0]
    return [int(i) for i in ds.test_idx]


def _cmd_evaluate(args) -> int:
    cfg = load_config(args.config, seed=args.seed, output_dir=args.out)
    model = load_mld(args.mld_ckpt)
    ds = _load_dataset_arg(args, cfg)
    _check_grid(cfg, ds)
    env = LatentEnv(model, ds, cfg.econ, cfg.policy.reward_scale)
    agent = SacAgent.load(args.agent_ckpt)
    if (agent.obs_dim, agent.act_dim) != (env.latent_dim, env.n_actions):
        raise ConfigError(
            f"agent checkpoint is ({agent.obs_dim} obs, {agent.act_dim} act) "
            f"but the surrogate environment needs ({env.latent_dim}, "
            f"{env.n_actions})")
    indices = _eval_indices(args, cfg, ds)
    out = cfg.output_dir
    _echo_config(cfg, out)
    backend = "mld" if args.self_test else "simulator"
    rows = []
    if args.simulate or args.self_test:
        recs = evaluate_policy(env, agent, indices, on=backend)
        for rec in recs:
            rows.append([rec["scenario"], rec["npv_predicted"],
                         rec["npv_evaluated"], rec["gap"]])
    else:
        from .msdrl import derive_schedule
        recs = []
        for i in indices:
            sched, npv_pred = derive_schedule(env, agent, int(i))
            recs.append({"scenario": int(i), "schedule": sched})
            rows.append([int(i), npv_pred, "", ""])
    _write_csv(os.path.join(out, "eval_results.csv"),
               ["scenario", "npv_predicted", "npv_simulated", "gap"], rows)
    for rec in recs:
        sched = rec["schedule"]
        mat = sched.as_action_matrix()
        _write_csv(os.path.join(out, "schedules",
                                f"scenario_{rec['scenario']}.csv"),
                   [f"injector_{k}_m3_per_day" for k in range(ds.n_injectors)]
                   + [f"producer_{k}_bhp_bar"
                      for k in range(mat.shape[1] - ds.n_injectors)],
                   mat.tolist())
    npvs = [float(r[1]) for r in rows]
    line = f"evaluated {len(rows)} scenario(s): mean predicted NPV {np.mean(npvs):.4e} USD"
    if args.simulate or args.self_test:
        gaps = [float(r[3]) for r in rows]
        line += (f", mean evaluated NPV "
                 f"{np.mean([float(r[2]) for r in rows]):.4e} USD, "
                 f"max gap {max(gaps) * 100:.2f}%")
    print(line + f" -> {out}/eval_results.csv")
    return 0


def _cmd_baseline_de(args) -> int:
    cfg = load_config(args.config, seed=args.seed, output_dir=args.out)
    ds = _load_dataset_arg(args, cfg)
    _check_grid(cfg, ds)
    de_cfg = cfg.de
    if args.budget is not None:
        de_cfg = dataclasses.replace(de_cfg, max_evals=args.budget)
    if args.seed is not None:
        de_cfg = dataclasses.replace(de_cfg, seed=args.seed)
    out = cfg.output_dir
    _echo_config(cfg, out)
    t0 = time.time()
    sched, npv, history = optimize_schedule_de(ds, args.scenario, cfg.econ,
                                               de_cfg)
    runtime = time.time() - t0
    _write_csv(os.path.join(out, "de_history.csv"),
               ["generation", "best_npv"],
               [[g, h] for g, h in enumerate(history)])
    _write_csv(os.path.join(out, "de_schedule.csv"),
               [f"injector_{k}_m3_per_day" for k in range(ds.n_injectors)]
               + [f"producer_{k}_bhp_bar"
                  for k in range(len(ds.wells()) - ds.n_injectors)],
               sched.as_action_matrix().tolist())
    _write_csv(os.path.join(out, "de_summary.csv"),
               ["evaluations", "runtime_s", "best_npv"],
               [[de_cfg.max_evals, runtime, npv]])
    print(f"DE: scenario {args.scenario}, {de_cfg.max_evals} simulator calls, "
          f"best NPV {npv:.4e} USD ({runtime:.0f}s) -> {out}")
    return 0


def _cmd_baseline_random(args) -> int:
    cfg = load_config(args.config, seed=args.seed, output_dir=args.out)
    ds = _load_dataset_arg(args, cfg)
    _check_grid(cfg, ds)
    n = args.n if args.n is not None else cfg.random_evals
    seed = args.seed if args.seed is not None else cfg.root_seed
    out = cfg.output_dir
    _echo_config(cfg, out)
    _, best, npvs = random_search_schedule(ds, args.scenario, cfg.econ, n,
                                           seed=seed)
    _write_csv(os.path.join(out, "random_npvs.csv"), ["sample", "npv"],
               [[k, v] for k, v in enumerate(npvs)])
    print(f"random: {n} schedules on scenario {args.scenario}, "
          f"mean {npvs.mean():.4e} best {best:.4e} USD -> {out}")
    return 0


_EXPECTED = ("train_log.csv and/or train_curve.csv and/or mld_eval.csv "
             "and/or lambda_*/train_log.csv")


def _cmd_export_plots(args) -> int:
    run = args.run_dir
    if not os.path.isdir(run):
        raise DataError(f"run directory not found: {run}")
    out = args.out or os.path.join(run, "plots")
    made = []

    log_path = os.path.join(run, "train_log.csv")
    if os.path.exists(log_path):
        header, rows = _read_csv(log_path, _EXPECTED)
        _write_csv(os.path.join(out, "loss_curves.csv"), header, rows)
        made.append("loss_curves.csv")

    eval_path = os.path.join(run, "mld_eval.csv")
    if os.path.exists(eval_path):
        header, rows = _read_csv(eval_path, _EXPECTED)
        r2s = np.array([float(r[1]) for r in rows])
        _write_csv(os.path.join(out, "r2_distribution.csv"),
                   ["episode", "r2"], [[r[0], r[1]] for r in rows])
        _write_csv(os.path.join(out, "r2_percentiles.csv"),
                   ["percentile", "r2"],
                   [[p, np.percentile(r2s, p)] for p in (10, 50, 90)])
        _write_csv(os.path.join(out, "crossplot.csv"),
                   ["episode", "predicted_cum_brine_m3", "observed_cum_brine_m3"],
                   [[r[0], r[2], r[3]] for r in rows])
        made += ["r2_distribution.csv", "r2_percentiles.csv", "crossplot.csv"]

    curve_path = os.path.join(run, "train_curve.csv")
    if os.path.exists(curve_path):
        header, rows = _read_csv(curve_path, _EXPECTED)
        _write_csv(os.path.join(out, "npv_curve.csv"),
                   ["episode", "pred_npv"], [[r[0], r[1]] for r in rows])
        _write_csv(os.path.join(out, "alpha_curve.csv"),
                   ["episode", "alpha"], [[r[0], r[2]] for r in rows])
        made += ["npv_curve.csv", "alpha_curve.csv"]

    sweep = sorted(glob.glob(os.path.join(run, "lambda_*", "train_log.csv")))
    if sweep:
        rows = []
        for path in sweep:
            lam = os.path.basename(os.path.dirname(path))[len("lambda_"):]
            _, log_rows = _read_csv(path, _EXPECTED)
            for r in log_rows:
                rows.append([lam] + r)
        _write_csv(os.path.join(out, "lambda_sweep.csv"),
                   ["lambda", "epoch", "loss", "mse", "jec", "test_rmse",
                    "test_r2", "lr"], rows)
        made.append("lambda_sweep.csv")

    if not made:
        raise DataError(f"nothing to export from {run}; expected {_EXPECTED}")
    print(f"exported {', '.join(made)} -> {out}")
    return 0


# --------------------------------------------------------------------- wiring

def _build_parser() -> _Parser:
    p = _Parser(prog="latentflow",
                description="latent-dynamics surrogate well-control pipeline")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, dataset_opt=True):
        sp.add_argument("--seed", type=int, default=None,
                        help="override the config root seed")
        sp.add_argument("--out", default=None,
                        help="override the config output directory")
        if dataset_opt:
            sp.add_argument("--dataset", default=None,
                            help="dataset directory (default: <out>/dataset)")

    sp = sub.add_parser("gen-data", help="simulate the training dataset")
    sp.add_argument("config")
    sp.add_argument("--jobs", type=int, default=1)
    common(sp, dataset_opt=False)
    sp.set_defaults(func=_cmd_gen_data)

    sp = sub.add_parser("train-mld", help="train the latent surrogate")
    sp.add_argument("config")
    sp.add_argument("dataset")
    sp.add_argument("--epochs", type=int, default=None)
    sp.add_argument("--lambda-weight", type=float, default=None,
                    dest="lambda_weight")
    sp.add_argument("--lambda-sweep", default=None, dest="lambda_sweep",
                    help="comma list of loss weights; trains one model per value")
    sp.add_argument("--unimodal", action="store_true",
                    help="drop the static-property and curve input branches")
    common(sp, dataset_opt=False)
    sp.set_defaults(func=_cmd_train_mld)

    sp = sub.add_parser("train-agent", help="optimize controls in latent space")
    sp.add_argument("config")
    sp.add_argument("mld_ckpt")
    sp.add_argument("--episodes", type=int, default=None)
    sp.add_argument("--fixed-alpha", type=float, default=None,
                    dest="fixed_alpha")
    common(sp)
    sp.set_defaults(func=_cmd_train_agent)

    sp = sub.add_parser("evaluate", help="score the trained policy")
    sp.add_argument("config")
    sp.add_argument("agent_ckpt")
    sp.add_argument("mld_ckpt")
    sp.add_argument("--simulate", action="store_true",
                    help="replay derived schedules on the reservoir simulator")
    sp.add_argument("--self-test", action="store_true", dest="self_test",
                    help="replay on the surrogate itself; gaps must be zero")
    sp.add_argument("--scenarios", default=None,
                    help="comma list of scenario indices")
    common(sp)
    sp.set_defaults(func=_cmd_evaluate)

    sp = sub.add_parser("baseline-de",
                        help="differential evolution on the simulator")
    sp.add_argument("config")
    sp.add_argument("--scenario", type=int, default=0)
    sp.add_argument("--budget", type=int, default=None,
                    help="override the configured evaluation budget")
    common(sp)
    sp.set_defaults(func=_cmd_baseline_de)

    sp = sub.add_parser("baseline-random",
                        help="uniform random schedules on the simulator")
    sp.add_argument("config")
    sp.add_argument("--scenario", type=int, default=0)
    sp.add_argument("-n", type=int, default=None, help="number of schedules")
    common(sp)
    sp.set_defaults(func=_cmd_baseline_random)

    sp = sub.add_parser("export-plots", help="emit plot-ready CSV bundles")
    sp.add_argument("run_dir")
    sp.add_argument("--out", default=None,
                    help="destination (default: <run_dir>/plots)")
    sp.set_defaults(func=_cmd_export_plots)
    return p


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except DataError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except NumericError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except LatentflowError as exc:   # pragma: no cover - future subclasses
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
