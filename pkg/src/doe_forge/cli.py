"""Command-line workflow: train, generate, traditional, simulate, identify,
evaluate, compare.

Every command is deterministic for fixed inputs and seeds: outputs carry no
timestamps, manifests reference files by SHA-256, and re-running a command
reproduces its outputs byte for byte.  Exit codes: 0 success, 1 usage or
input errors, 2 numerical/runtime failures.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__, cells, ecm, ident
from .env import BatteryDoeEnv, EnvConfig, save_episode_log
from .metrics import ErrorStats
from .nn import CHECKPOINT_FORMAT_VERSION
from .profiles import drive_cycle_profile, load_profile, save_profile, traditional_suite
from .td3 import CURVE_HEADER, Td3Agent, Td3Config, generate_doe, train

__all__ = ["main", "build_parser"]

EVAL_FORMAT_VERSION = 1
REPORT_FORMAT_VERSION = 1

_VERSION_TEXT = "\n".join(
    [
        f"doe-forge {__version__}",
        f"cell-parameter JSON format: {ecm.PARAMS_FORMAT_VERSION}",
        f"network checkpoint format: {CHECKPOINT_FORMAT_VERSION}",
        f"identification result format: {ident.RESULT_FORMAT_VERSION}",
        f"evaluation format: {EVAL_FORMAT_VERSION}",
        f"comparison report format: {REPORT_FORMAT_VERSION}",
    ]
)


class _Parser(argparse.ArgumentParser):
    """Argument errors are usage errors: exit 1, not argparse's default 2."""

    def error(self, message):
        self.print_usage(sys.stderr)
        raise SystemExit(f"error: {message}")


def _sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _write_json(obj: dict, path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        json.dump(obj, f, indent=2)
        f.write("\n")


def _read_json(path) -> dict:
    with open(path, "r", encoding="utf-8") as f:
        return json.load(f)


def _resolve_cell(ref: str) -> ecm.EcmParams:
    """Cell reference: 'refcell', 'truth', or a path to a parameter JSON."""
    if ref == "refcell":
        return cells.refcell()
    if ref == "truth":
        return cells.truth_cell_2rc()
    return ecm.EcmParams.load(ref)


def _load_params_any(path) -> tuple[ecm.EcmParams, dict | None]:
    """Read either a cell parameter JSON or an identification result JSON;
    for the latter also return its fit metadata."""
    d = _read_json(path)
    if "tables" in d and "spec" in d:
        res = ident.IdentResult.from_dict(d)
        return res.to_params(), d.get("fit")
    return ecm.EcmParams.from_dict(d), None


# --- subcommand: train ---------------------------------------------------------


def _cmd_train(args) -> int:
    cfg_dict = _read_json(args.config) if args.config else {}
    env_dict = cfg_dict.pop("env", {})
    perturb_frac = float(cfg_dict.pop("perturb_frac", 0.2))
    if args.steps is not None:
        cfg_dict["max_env_steps"] = args.steps
    if args.seed is not None:
        cfg_dict["seed"] = args.seed
    try:
        td3_cfg = Td3Config(**cfg_dict)
        env_cfg = EnvConfig(**env_dict)
    except TypeError as e:
        raise ValueError(f"bad training config: {e}") from None

    base = _resolve_cell(args.cell)
    envs = []
    for k in range(td3_cfg.n_envs):
        params_k = base
        if perturb_frac > 0.0:
            rng_k = np.random.default_rng([td3_cfg.seed, 9100 + k])
            params_k = cells.perturbed_cell(base, rng_k, perturb_frac)
        envs.append(BatteryDoeEnv(params_k, env_cfg))
    eval_env = BatteryDoeEnv(base, env_cfg)

    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    curve_path = out_dir / "curve.csv"
    agent_path = out_dir / "agent.npz"

    with open(curve_path, "w", encoding="utf-8", newline="\n") as curve_file:
        curve_file.write(",".join(CURVE_HEADER) + "\n")

        def sink(row):
            curve_file.write(",".join(repr(float(v)) for v in row) + "\n")
            curve_file.flush()
            if not args.quiet:
                print(
                    f"step {int(row[0]):>8d}  eval_return {row[1]:.3f}  "
                    f"critic_loss {row[2]:.5f}  actor_loss {row[3]:.5f}"
                )

        result = train(envs, td3_cfg, eval_env=eval_env, curve_sink=sink)

    # evaluation returns oscillate late in training; keep the best-scoring
    # snapshot as the shipped agent and the final weights alongside it
    saved = result.best_agent if result.best_agent is not None else result.agent
    saved.save(agent_path)
    if result.best_agent is not None:
        result.agent.save(out_dir / "agent_final.npz")
    summary = {
        "env_steps": result.env_steps,
        "critic_updates": result.critic_updates,
        "actor_updates": result.actor_updates,
        "polyak_updates": result.polyak_updates,
        "best_eval_return": result.best_eval_return,
        "stop_reason": result.stop_reason,
        "saved_agent": "best_eval" if result.best_agent is not None else "final",
        "config": {**cfg_dict, "env": env_dict, "perturb_frac": perturb_frac},
        "cell": args.cell,
    }
    _write_json(summary, out_dir / "train_summary.json")
    manifest = {
        "files": {
            p.name: _sha256(p) for p in (agent_path, curve_path, out_dir / "train_summary.json")
        }
    }
    _write_json(manifest, out_dir / "manifest.json")
    if not args.quiet:
        print(f"trained {result.env_steps} steps; best eval return {result.best_eval_return:.3f}")
        print(f"agent -> {agent_path}")
    return 0


# --- subcommand: generate -------------------------------------------------------


def _cmd_generate(args) -> int:
    agent = Td3Agent.load(args.agent)
    env_cfg = EnvConfig(max_episode_steps=args.max_steps) if args.max_steps else EnvConfig()
    env = BatteryDoeEnv(_resolve_cell(args.cell), env_cfg)
    profile, log, summary = generate_doe(agent, env, seed=args.seed, name=args.name)
    save_profile(profile, args.out)
    log_path = str(args.out) + ".log.csv"
    save_episode_log(log, log_path)
    summary = {**summary, "profile": Path(args.out).name, "profile_sha256": _sha256(args.out)}
    _write_json(summary, str(args.out) + ".summary.json")
    print(
        f"{profile.name}: {summary['steps']} steps ({summary['duration_s']:.0f} s), "
        f"coverage {summary['coverage']:.3f}, violations {summary['violations']}"
    )
    return 0


# --- subcommand: traditional ----------------------------------------------------


def _cmd_traditional(args) -> int:
    suite = traditional_suite(
        args.capacity_ah,
        args.i_chg_max,
        args.i_dis_max,
        rate_c=tuple(args.rates),
        pulse_durations_s=tuple(args.pulse_durations),
        ocv_c_rate=None if args.no_ocv else args.ocv_c_rate,
        directions=tuple(args.directions),
    )
    tagged = [(profile, log_every, "fit") for profile, log_every in suite]
    if args.holdout_duration > 0:
        cycle = drive_cycle_profile(
            args.holdout_duration,
            args.i_chg_max,
            args.i_dis_max,
            args.capacity_ah,
            seed=args.holdout_seed,
            name="validation_cycle",
        )
        tagged.append((cycle, 1, "holdout"))
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    entries = []
    fit_s = 0.0
    for profile, log_every, role in tagged:
        path = out_dir / f"{profile.name}.csv"
        save_profile(profile, path)
        entries.append(
            {
                "file": path.name,
                "role": role,
                "log_every": log_every,
                "duration_s": profile.duration,
                "sha256": _sha256(path),
            }
        )
        if role == "fit":
            fit_s += profile.duration
    manifest = {
        "profiles": entries,
        "fit_duration_s": fit_s,
        "total_duration_s": sum(e["duration_s"] for e in entries),
    }
    _write_json(manifest, out_dir / "suite.json")
    print(f"{len(entries)} profiles, {fit_s:.0f} s of fit tests -> {out_dir}")
    return 0


# --- subcommand: simulate -------------------------------------------------------


def _measure_one(params, profile, out_path, dt, noise_mv, seed, soc0, temp_c) -> dict:
    data = ident.synthesize_measurements(
        params, profile, dt=dt, noise_mv=noise_mv, seed=seed, soc0=soc0, temp_c=temp_c
    )
    ident.save_measurements(
        data,
        out_path,
        extra_meta={"profile_name": profile.name, "source": profile.source, "noise_mv": noise_mv, "seed": seed},
    )
    return {
        "file": Path(out_path).name,
        "profile": profile.name,
        "rows": int(data.t_s.shape[0]),
        "duration_s": data.duration_s,
        "sha256": _sha256(out_path),
    }


def _cmd_simulate(args) -> int:
    if bool(args.profile) == bool(args.suite):
        raise ValueError("give exactly one of --profile or --suite")
    params = _resolve_cell(args.cell)
    if args.profile:
        profile = load_profile(args.profile)
        entry = _measure_one(
            params, profile, args.out, args.dt, args.noise_mv, args.seed, args.soc0, args.temp
        )
        print(f"{entry['rows']} rows ({entry['duration_s']:.0f} s) -> {args.out}")
        return 0
    suite = _read_json(args.suite)
    suite_dir = Path(args.suite).parent
    # load (and thereby validate) every input before the first write
    jobs = []
    for k, p in enumerate(suite["profiles"]):
        jobs.append(
            (
                load_profile(suite_dir / p["file"]),
                Path(p["file"]).stem + ".meas.csv",
                p.get("role", "fit"),
                args.dt * p.get("log_every", 1),
                args.seed + k,
            )
        )
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    entries = []
    for profile, out_name, role, dt, seed in jobs:
        entry = _measure_one(
            params, profile, out_dir / out_name, dt, args.noise_mv, seed, args.soc0, args.temp
        )
        entry["role"] = role
        entries.append(entry)
    _write_json({"measurements": entries}, out_dir / "measurements.json")
    print(f"{len(entries)} measurement files -> {out_dir}")
    return 0


# --- subcommand: identify -------------------------------------------------------


def _cmd_identify(args) -> int:
    known = _resolve_cell(args.cell)
    spec = ident.IdentSpec.for_cell(
        known,
        temp_c=args.temp,
        soc_breakpoints=np.round(np.linspace(0.0, 1.0, args.soc_points), 10),
        smoothing=args.smoothing,
    )
    records = [ident.load_measurements(m) for m in args.measurements]
    result = ident.identify(records, spec, max_iter=args.max_iter, name=args.name)
    result.save(args.out)
    result.save_csv(str(args.out) + ".csv")
    taus = result.time_constants()
    print(
        f"status {result.status} after {result.n_iter} iterations; "
        f"fit MAE {result.fit_mae_v * 1e3:.3f} mV over {result.fit_n_samples} samples "
        f"({result.fit_duration_s:.0f} s of data)"
    )
    print(
        f"tau1 {taus['tau1'].min():.1f}-{taus['tau1'].max():.1f} s, "
        f"tau2 {taus['tau2'].min():.1f}-{taus['tau2'].max():.1f} s -> {args.out}"
    )
    return 0


# --- subcommand: evaluate -------------------------------------------------------


def _cmd_evaluate(args) -> int:
    params, fit_meta = _load_params_any(args.params)
    holdouts = []
    merged: ErrorStats | None = None
    for m in args.measurements:
        data = ident.load_measurements(m)
        stats = ident.evaluate(params, data, err_max_v=args.err_max_v)
        holdouts.append(
            {
                "file": Path(m).name,
                "sha256": _sha256(m),
                "n": stats.n,
                "mae_v": stats.mae,
                "rmse_v": stats.rmse,
            }
        )
        merged = stats if merged is None else merged.merge(stats)
    out = {
        "format_version": EVAL_FORMAT_VERSION,
        "params_file": Path(args.params).name,
        "params_sha256": _sha256(args.params),
        "fit": fit_meta,
        "holdouts": holdouts,
        "overall": {
            "n": merged.n,
            "mae_v": merged.mae,
            "rmse_v": merged.rmse,
            "max_abs_err_v": merged.max_abs,
        },
        "stats": merged.to_dict(),
    }
    _write_json(out, args.out)
    print(
        f"holdout MAE {merged.mae * 1e3:.3f} mV, RMSE {merged.rmse * 1e3:.3f} mV, "
        f"max {merged.max_abs * 1e3:.3f} mV over {merged.n} samples -> {args.out}"
    )
    return 0


# --- subcommand: compare --------------------------------------------------------


def _write_hist_csv(hist: dict, path) -> None:
    lo, hi, counts = hist["lo"], hist["hi"], hist["counts"]
    width = (hi - lo) / len(counts)
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write("bin_lo,bin_hi,count\n")
        for k, c in enumerate(counts):
            f.write(f"{lo + k * width!r},{lo + (k + 1) * width!r},{c}\n")


def _write_hist2d_csv(hist: dict, x_name: str, path) -> None:
    (x_lo, x_hi), (y_lo, y_hi) = hist["x_range"], hist["y_range"]
    counts = hist["counts"]
    nx, ny = len(counts), len(counts[0])
    wx, wy = (x_hi - x_lo) / nx, (y_hi - y_lo) / ny
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write(f"{x_name}_lo,{x_name}_hi,err_lo,err_hi,count\n")
        for i in range(nx):
            for j in range(ny):
                f.write(
                    f"{x_lo + i * wx!r},{x_lo + (i + 1) * wx!r},"
                    f"{y_lo + j * wy!r},{y_lo + (j + 1) * wy!r},{counts[i][j]}\n"
                )


def _cmd_compare(args) -> int:
    ai = _read_json(args.ai)
    trad = _read_json(args.trad)
    for name, d in (("ai", ai), ("trad", trad)):
        if d.get("format_version") != EVAL_FORMAT_VERSION:
            raise ValueError(f"{name} evaluation has unsupported format_version")
        if not d.get("fit"):
            raise ValueError(
                f"{name} evaluation lacks fit metadata; evaluate an identification result, "
                "not a raw cell file"
            )
    hashes_ai = sorted(h["sha256"] for h in ai["holdouts"])
    hashes_trad = sorted(h["sha256"] for h in trad["holdouts"])
    if hashes_ai != hashes_trad:
        raise ValueError("evaluations used different holdout data; comparison would be unfair")

    d_ai = float(ai["fit"]["duration_s"])
    d_trad = float(trad["fit"]["duration_s"])
    mae_ai = float(ai["overall"]["mae_v"])
    mae_trad = float(trad["overall"]["mae_v"])
    report = {
        "format_version": REPORT_FORMAT_VERSION,
        "ai": {
            "eval": Path(args.ai).name,
            "fit_duration_h": d_ai / 3600.0,
            "fit_n_samples": ai["fit"].get("n_samples"),
            "uniformity": ai["fit"].get("uniformity"),
            "mae_v": mae_ai,
            "rmse_v": ai["overall"]["rmse_v"],
        },
        "traditional": {
            "eval": Path(args.trad).name,
            "fit_duration_h": d_trad / 3600.0,
            "fit_n_samples": trad["fit"].get("n_samples"),
            "uniformity": trad["fit"].get("uniformity"),
            "mae_v": mae_trad,
            "rmse_v": trad["overall"]["rmse_v"],
        },
        "time_ratio": d_ai / d_trad,
        "time_reduction_pct": 100.0 * (1.0 - d_ai / d_trad),
        "mae_ratio": mae_ai / mae_trad if mae_trad > 0 else float("inf"),
        "checks": {
            "time_reduction_5x": bool(d_ai <= 0.2 * d_trad),
            "accuracy_within_2x": bool(mae_ai <= 2.0 * mae_trad),
            "both_under_15mv": bool(mae_ai < 0.015 and mae_trad < 0.015),
        },
    }
    out = Path(args.out)
    _write_json(report, out)
    # plot-ready error histograms next to the report
    for tag, d in (("ai", ai), ("trad", trad)):
        stats = d.get("stats") or {}
        if "err_hist" in stats:
            _write_hist_csv(stats["err_hist"], out.with_name(f"{out.stem}_err_hist_{tag}.csv"))
        if "err_vs_soc" in stats:
            _write_hist2d_csv(
                stats["err_vs_soc"], "soc", out.with_name(f"{out.stem}_err_vs_soc_{tag}.csv")
            )
        if "err_vs_current" in stats:
            _write_hist2d_csv(
                stats["err_vs_current"],
                "current_a",
                out.with_name(f"{out.stem}_err_vs_current_{tag}.csv"),
            )
    print(
        f"test time: {d_ai:.0f} s (generated) vs {d_trad:.0f} s (traditional), "
        f"{report['time_reduction_pct']:.1f}% reduction"
    )
    print(f"holdout MAE: {mae_ai * 1e3:.3f} mV vs {mae_trad * 1e3:.3f} mV")
    for name, ok in report["checks"].items():
        print(f"  {name}: {'pass' if ok else 'FAIL'}")
    return 0


# --- parser ----------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(
        prog="doe-forge",
        description="Learned battery test profiles vs traditional characterization.",
    )
    parser.add_argument("--version", action="version", version=_VERSION_TEXT)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", parents=[], help="train a profile-generating agent", add_help=True)
    p.add_argument("--config", help="training config JSON (top level: TD3 fields; 'env': env fields)")
    p.add_argument("--out-dir", required=True, help="directory for agent.npz, curve.csv, summaries")
    p.add_argument("--cell", default="refcell", help="cell to train on: refcell|truth|params.json")
    p.add_argument("--steps", type=int, default=None, help="override max environment steps")
    p.add_argument("--seed", type=int, default=None, help="override the config seed")
    p.add_argument("--quiet", action="store_true", help="suppress progress lines")
    p.set_defaults(fn=_cmd_train)

    p = sub.add_parser("generate", help="roll out a trained agent into a test profile")
    p.add_argument("--agent", required=True, help="agent checkpoint (.npz)")
    p.add_argument("--out", required=True, help="profile CSV output path")
    p.add_argument("--cell", default="refcell", help="cell to roll out on")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--max-steps", type=int, default=None, help="episode step limit override")
    p.add_argument("--name", default="ai_doe")
    p.set_defaults(fn=_cmd_generate)

    p = sub.add_parser("traditional", help="write the standard characterization suite")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--capacity-ah", type=float, default=cells.DESK_CAPACITY_AH)
    p.add_argument("--i-chg-max", type=float, default=cells.DESK_I_CHG_MAX_A)
    p.add_argument("--i-dis-max", type=float, default=cells.DESK_I_DIS_MAX_A)
    p.add_argument("--rates", type=float, nargs="*", default=[0.2, 0.5, 1.0, 2.0],
                   help="C-rates for the full charge/discharge tests")
    p.add_argument("--pulse-durations", type=float, nargs="*", default=[1.0, 10.0, 100.0],
                   help="pulse widths in seconds (empty for no pulse trains)")
    p.add_argument("--ocv-c-rate", type=float, default=0.05)
    p.add_argument("--no-ocv", action="store_true", help="skip the slow OCV cycles")
    p.add_argument("--directions", nargs="+", default=["discharge", "charge"],
                   choices=["discharge", "charge"])
    p.add_argument("--holdout-duration", type=float, default=3600.0,
                   help="validation drive-cycle length in seconds (0 to skip)")
    p.add_argument("--holdout-seed", type=int, default=123)
    p.set_defaults(fn=_cmd_traditional)

    p = sub.add_parser("simulate", help="run profiles against a cell and log measurements")
    p.add_argument("--cell", default="truth", help="cell to measure: refcell|truth|params.json")
    p.add_argument("--profile", help="single profile CSV to run")
    p.add_argument("--suite", help="suite.json written by 'traditional' (batch mode)")
    p.add_argument("--out", required=True, help="measurement CSV (single) or directory (suite)")
    p.add_argument("--dt", type=float, default=1.0, help="base log cadence in seconds")
    p.add_argument("--noise-mv", type=float, default=1.0, help="voltage noise sigma in mV")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--soc0", type=float, default=None, help="override starting SoC")
    p.add_argument("--temp", type=float, default=25.0)
    p.set_defaults(fn=_cmd_simulate)

    p = sub.add_parser("identify", help="fit 2-RC cell tables to measurements")
    p.add_argument("--measurements", nargs="+", required=True)
    p.add_argument("--out", required=True, help="identification result JSON")
    p.add_argument("--cell", default="truth", help="source of the known OCV curve and capacity")
    p.add_argument("--temp", type=float, default=25.0)
    p.add_argument("--soc-points", type=int, default=11, help="SoC breakpoints in the fitted grid")
    p.add_argument("--smoothing", type=float, default=0.0, help="Tikhonov weight across breakpoints")
    p.add_argument("--max-iter", type=int, default=60)
    p.add_argument("--name", default="identified")
    p.set_defaults(fn=_cmd_identify)

    p = sub.add_parser("evaluate", help="holdout voltage error of identified parameters")
    p.add_argument("--params", required=True, help="identification result or cell parameter JSON")
    p.add_argument("--measurements", nargs="+", required=True, help="holdout measurement CSVs")
    p.add_argument("--out", required=True, help="evaluation JSON")
    p.add_argument("--err-max-v", type=float, default=0.015, help="error histogram half-range")
    p.set_defaults(fn=_cmd_evaluate)

    p = sub.add_parser("compare", help="compare two evaluations (generated vs traditional)")
    p.add_argument("--ai", required=True, help="evaluation JSON for the generated-profile fit")
    p.add_argument("--trad", required=True, help="evaluation JSON for the traditional fit")
    p.add_argument("--out", required=True, help="comparison report JSON")
    p.set_defaults(fn=_cmd_compare)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.fn(args)
    except SystemExit as e:
        if isinstance(e.code, str):
            print(e.code, file=sys.stderr)
            return 1
        return 0 if e.code in (0, None) else 1
    except (ValueError, KeyError, FileNotFoundError, IsADirectoryError, json.JSONDecodeError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except (RuntimeError, np.linalg.LinAlgError, FloatingPointError) as e:
        print(f"numerical failure: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
