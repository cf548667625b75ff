"""Command-line entry point: ``rlinrl <command> ...``."""
from __future__ import annotations

import os

_threads = os.environ.get("RLINRL_THREADS")
if _threads:
    for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ.setdefault(_var, _threads)

import argparse  # noqa: E402
import sys  # noqa: E402
from pathlib import Path  # noqa: E402
from typing import Any, Callable, Optional  # noqa: E402


from .. import analysis  # noqa: E402
from ..agent.ppo import TrainingError  # noqa: E402
from ..agent.pretrain import arch_for_env, pretrain  # noqa: E402
from ..envsim import make_env  # noqa: E402
from ..interpret import rewards as interp_rewards  # noqa: E402
from ..interpret.masknet import compute_mask  # noqa: E402
from ..interpret.trainer import LOG_COLUMNS, train_interpreter  # noqa: E402
from ..numcore import check_layer_kinds  # noqa: E402
from . import persist  # noqa: E402
from .config import ConfigError, RunConfig, config_hash, format_config, load_file  # noqa: E402

EXIT_OK, EXIT_CONFIG, EXIT_IO, EXIT_INTEGRITY, EXIT_TRAINING = 0, 2, 3, 4, 5
EXIT_CHECK_FAILED = 1

MODE_FLAGS = {"reward": "reward", "rewardK": "reward_K", "actionRL": "action_rl",
              "actionSup": "action_supervised"}


class UsageError(ValueError):
    pass


def _print_config(resolved: dict) -> str:
    sys.stdout.write("# resolved configuration\n" + format_config(resolved))
    sys.stdout.flush()
    return config_hash(resolved)


def _seeds(base: int, n: int) -> list[int]:
    if n <= 0:
        raise UsageError(f"--seeds must be positive, got {n}")
    return [base + i for i in range(n)]


def _report(path: str, command: str, chash: str, inputs: dict, results: Any,
            rows: Optional[list] = None, columns: Optional[list] = None) -> None:
    out = Path(path)
    if out.suffix != ".json":
        out = out.with_suffix(".json")
    persist.write_json(out, {"command": command, "config_hash": chash, "inputs": inputs, "results": results})
    if rows is not None:
        persist.write_csv(out.with_suffix(".csv"), rows, columns or list(rows[0]))
    print(f"wrote {out}")


def _load_policy(path: str):
    net, side, digest = persist.policy_from_checkpoint(path)
    return net, side, digest


def _policy_env(side: dict, **overrides) -> Callable:
    return persist.env_factory(side["env"], **overrides)


# -- commands ---------------------------------------------------------------------
def cmd_pretrain(args) -> int:
    flat = load_file(args.config)
    if args.seed is not None:
        flat["seed"] = args.seed
    rc = RunConfig(flat)
    resolved = rc.resolved
    chash = _print_config(resolved)
    env_kwargs = rc.env_kwargs()
    factory = lambda: make_env(rc.env_kind, **env_kwargs)
    probe = factory()
    arch = arch_for_env(probe, **rc.arch_overrides)
    net, record = pretrain(factory, rc.ppo, rc.seed, arch=arch)
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    sidecar = {
        "type": "policy", "arch": arch.to_dict(), "seed": rc.seed, "config_hash": chash,
        "env": {"kind": rc.env_kind, "config": env_kwargs},
        "env_signature": persist.env_signature(rc.env_kind, probe.obs_shape),
        "training": {"updates": record.updates, "steps": record.steps, "stopped": record.stopped,
                     "final_moving_average": record.moving_average(rc.ppo.ma_window)},
    }
    digest = persist.save_checkpoint(args.out, net.state_dict(), sidecar)
    persist.write_csv(str(args.out) + ".curve.csv", [{"steps": s, "mean_return": r} for s, r in record.curve],
                      ["steps", "mean_return"])
    print(f"wrote {args.out} sha256={digest}")
    return EXIT_OK


def cmd_interpret(args) -> int:
    policy, pside, pdigest = _load_policy(args.policy)
    flat = load_file(args.config) if args.config else {}
    env_over = {k[4:]: v for k, v in flat.items() if k.startswith("env.") and k != "env.kind"}
    if "env.kind" in flat and flat["env.kind"] != pside["env"]["kind"]:
        raise persist.IntegrityError(
            f"policy was trained on {pside['env']['kind']!r} but the config asks for {flat['env.kind']!r}")
    flat = {k: v for k, v in flat.items() if k.startswith("interpret.")}
    for key, val in (("mode", MODE_FLAGS.get(args.mode) if args.mode else None), ("alpha", args.alpha),
                     ("beta", args.beta), ("k", args.k), ("epochs", args.epochs)):
        if val is not None:
            flat[f"interpret.{key}"] = val
    flat["env.kind"] = pside["env"]["kind"]
    for k, v in {**pside["env"]["config"], **env_over}.items():
        flat[f"env.{k}"] = tuple(v) if isinstance(v, list) else v
    seed = args.seed if args.seed is not None else 0
    flat["seed"] = seed
    rc = RunConfig(flat)
    factory = lambda: make_env(rc.env_kind, **rc.env_kwargs())
    probe = factory()
    signature = persist.env_signature(rc.env_kind, probe.obs_shape)
    if signature != pside.get("env_signature") or tuple(pside["arch"]["obs_shape"]) != tuple(probe.obs_shape):
        raise persist.IntegrityError("policy checkpoint does not match the interpretation environment")
    resolved = {k: v for k, v in rc.resolved.items() if k.startswith(("env.", "interpret.", "seed"))}
    resolved["policy.sha256"] = pdigest
    chash = _print_config(resolved)
    cfg = rc.interpret
    result = train_interpreter(policy, factory, cfg, seed)
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    sidecar = {
        "type": "interpreter", "mode": cfg.mode, "alpha": cfg.alpha, "beta": cfg.beta, "k": cfg.k,
        "gamma": cfg.gamma, "distance": cfg.distance, "policy_sha256": pdigest,
        "policy_arch": pside["arch"], "env": {"kind": rc.env_kind, "config": rc.env_kwargs()},
        "env_signature": signature, "config": cfg.to_dict(), "config_hash": chash, "seed": seed,
    }
    digest = persist.save_checkpoint(args.out, result.state_dict(), sidecar)
    log_path = args.log or str(args.out) + ".log.csv"
    persist.write_csv(log_path, result.log, LOG_COLUMNS)
    print(f"wrote {args.out} sha256={digest}")
    return EXIT_OK


def _interp_for(args, pdigest: str, required: bool = True):
    if not args.interpreter:
        if required:
            raise UsageError("--interpreter is required")
        return None, None, None
    mask_net, iside, idigest = persist.interpreter_from_checkpoint(args.interpreter)
    if pdigest is not None and iside.get("policy_sha256") != pdigest:
        raise persist.IntegrityError("interpreter was trained against a different policy checkpoint")
    return mask_net, iside, idigest


def cmd_evaluate(args) -> int:
    policy, pside, pdigest = _load_policy(args.policy)
    seeds = _seeds(args.seed_base, args.seeds)
    over = {"pattern": args.pattern} if args.pattern else {}
    factory = _policy_env(pside, **over)
    inputs = {args.policy: pdigest}
    if args.mask == "identity":
        mask_fn = analysis.identity_masks
    elif args.mask == "none":
        mask_fn = None
    elif args.mask == "zero":
        mask_fn = analysis.zero_masks
    elif args.mask == "interpreter":
        mask_net, _, idigest = _interp_for(args, pdigest)
        inputs[args.interpreter] = idigest
        mask_fn = analysis.interpreter_masks(mask_net)
    else:
        kwargs = {"sigma": args.sigma, "radius": args.radius, "stride": args.stride} \
            if args.mask == "perturbation" else {}
        mask_fn = analysis.saliency_masks(policy, args.mask, q=args.q, **kwargs)
    resolved = {"command": "evaluate", "mask": args.mask, "seeds": args.seeds, "seed_base": args.seed_base,
                "pattern": args.pattern or "", "q": args.q, "sigma": args.sigma, "radius": args.radius,
                "stride": args.stride, **{f"input.{k}": v for k, v in inputs.items()}}
    chash = _print_config(resolved)
    res = analysis.masked_return_eval(policy, factory, mask_fn, seeds)
    rows = [{"seed": s, "return": r} for s, r in zip(seeds, res["returns"])]
    _report(args.out, "evaluate", chash, inputs, res, rows, ["seed", "return"])
    print(f"mean return {res['mean']:.4f} sd {res['sd']:.4f}")
    return EXIT_OK


def cmd_ablate(args) -> int:
    policy, pside, pdigest = _load_policy(args.policy)
    seeds = _seeds(args.seed_base, args.seeds)
    patterns = [p for p in args.patterns.split(",") if p]
    resolved = {"command": "ablate", "patterns": patterns, "seeds": args.seeds, "seed_base": args.seed_base,
                f"input.{args.policy}": pdigest}
    chash = _print_config(resolved)
    rows = analysis.lane_ablation(policy, _policy_env(pside), seeds, patterns)
    _report(args.out, "ablate", chash, {args.policy: pdigest}, rows, rows,
            ["pattern", "mean_return", "percent_of_lane0"])
    return EXIT_OK


def cmd_divergence(args) -> int:
    if args.steps <= 0:
        raise UsageError(f"--steps must be positive, got {args.steps}")
    policy, pside, pdigest = _load_policy(args.policy)
    mask_net, _, idigest = _interp_for(args, pdigest)
    seeds = _seeds(args.seed_base, args.seeds)
    patterns = [p for p in args.patterns.split(",") if p]
    inputs = {args.policy: pdigest, args.interpreter: idigest}
    resolved = {"command": "divergence", "patterns": patterns, "steps": args.steps, "seeds": args.seeds,
                "seed_base": args.seed_base, "bins": args.bins, "smoothing": args.smoothing,
                **{f"input.{k}": v for k, v in inputs.items()}}
    chash = _print_config(resolved)
    rows = analysis.divergence_report(policy, mask_net, _policy_env(pside), patterns, seeds, args.steps,
                                      args.bins, args.smoothing)
    _report(args.out, "divergence", chash, inputs, rows, rows,
            ["pattern", "kl_mean", "kl_sd", "percent_of_lane0"])
    return EXIT_OK


def cmd_regions(args) -> int:
    policy, pside, pdigest = _load_policy(args.policy)
    mask_net, _, idigest = _interp_for(args, pdigest)
    over = {"pattern": args.pattern} if args.pattern else {}
    inputs = {args.policy: pdigest, args.interpreter: idigest}
    resolved = {"command": "regions", "states": args.states, "seed": args.seed, "pattern": args.pattern or "",
                **{f"input.{k}": v for k, v in inputs.items()}}
    chash = _print_config(resolved)
    rep = analysis.region_report_for(mask_net, policy, _policy_env(pside, **over), args.states, args.seed)
    rows = [{"region": k, "mass": v, "visible_states": rep.visible[k]} for k, v in rep.masses.items()]
    _report(args.out, "regions", chash, inputs, {"masses": rep.masses, "visible": rep.visible}, rows,
            ["region", "mass", "visible_states"])
    return EXIT_OK


def cmd_shift(args) -> int:
    policy, pside, pdigest = _load_policy(args.policy)
    mask_net, _, idigest = _interp_for(args, pdigest)
    inputs = {args.policy: pdigest, args.interpreter: idigest}
    resolved = {"command": "shift", "pattern": args.pattern, "seed": args.seed, "steps": args.steps or 0,
                **{f"input.{k}": v for k, v in inputs.items()}}
    chash = _print_config(resolved)
    rows = analysis.attention_shift_report(policy, analysis.interpreter_masks(mask_net),
                                           _policy_env(pside, pattern=args.pattern), args.seed, args.steps)
    flagged = sum(r["grass_exceeds_right"] for r in rows)
    _report(args.out, "shift", chash, inputs, {"steps": len(rows), "flagged": flagged, "series": rows}, rows,
            ["step", "grass", "right_white", "grass_exceeds_right"])
    return EXIT_OK


def cmd_sparse_stats(args) -> int:
    policy, pside, pdigest = _load_policy(args.policy)
    over = {"reward_mode": args.reward_mode} if args.reward_mode else {}
    seeds = _seeds(args.seed_base, args.seeds)
    resolved = {"command": "sparse-stats", "seeds": args.seeds, "seed_base": args.seed_base,
                "reward_mode": args.reward_mode or "", f"input.{args.policy}": pdigest}
    chash = _print_config(resolved)
    res = analysis.sparse_reward_stats(policy, _policy_env(pside, **over), seeds)
    _report(args.out, "sparse-stats", chash, {args.policy: pdigest}, res, [res], list(res))
    return EXIT_OK


def cmd_export_heatmap(args) -> int:
    if args.states <= 0:
        raise UsageError(f"--states must be positive, got {args.states}")
    mask_net, iside, idigest = persist.interpreter_from_checkpoint(args.interpreter)
    resolved = {"command": "export-heatmap", "states": args.states, "seed": args.seed,
                f"input.{args.interpreter}": idigest}
    _print_config(resolved)
    factory = persist.env_factory(iside["env"])
    env = factory()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    for i in range(args.states):
        obs = env.reset(seed=args.seed + i)
        mask = compute_mask(mask_net, obs)[..., 0]
        for c in range(obs.shape[-1]):
            persist.serialize.atomic_write(str(out / f"state{i:03d}_ch{c}.pgm"), persist.pgm_bytes(obs[..., c]))
        render = obs.max(axis=-1)
        persist.serialize.atomic_write(str(out / f"state{i:03d}_render.pgm"), persist.pgm_bytes(render))
        persist.serialize.atomic_write(str(out / f"state{i:03d}_mask.pgm"), persist.pgm_bytes(mask))
        persist.serialize.atomic_write(str(out / f"state{i:03d}_overlay.pgm"), persist.pgm_bytes(render * mask))
        for r in range(mask.shape[0]):
            for c in range(mask.shape[1]):
                rows.append({"state": i, "row": r, "col": c, "mask": float(mask[r, c])})
    persist.write_csv(out / "masks.csv", rows, ["state", "row", "col", "mask"])
    print(f"wrote {args.states} heatmaps to {out}")
    return EXIT_OK


def cmd_grad_check(args) -> int:
    _print_config({"command": "grad-check", "cases": args.cases, "seed": args.seed})
    results = check_layer_kinds(cases=args.cases, seed=args.seed)
    failed = []
    for r in results:
        status = "PASS" if r.passed else "FAIL"
        print(f"{status} {r.kind:<18} max_rel_error={r.max_rel_error:.3e} cases={r.cases} "
              f"non_smooth_skipped={r.non_smooth}")
        if not r.passed:
            failed.append(r.kind)
    if failed:
        print(f"gradient check failed for layer kinds: {', '.join(failed)}", file=sys.stderr)
        return EXIT_CHECK_FAILED
    return EXIT_OK


# -- parser -----------------------------------------------------------------------
def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="rlinrl", description="Pretrain, interpret and analyse small RL agents.")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("pretrain", help="train a policy with PPO")
    s.add_argument("--config", required=True)
    s.add_argument("--seed", type=int)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_pretrain)

    s = sub.add_parser("interpret", help="train a mask interpreter for a policy")
    s.add_argument("--policy", required=True)
    s.add_argument("--config")
    s.add_argument("--mode", choices=sorted(MODE_FLAGS))
    s.add_argument("--alpha", type=float)
    s.add_argument("--beta", type=float)
    s.add_argument("--k", type=int)
    s.add_argument("--epochs", type=int)
    s.add_argument("--seed", type=int)
    s.add_argument("--log")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_interpret)

    def seeds(sp, n=5):
        sp.add_argument("--seeds", type=int, default=n, help="number of evaluation seeds")
        sp.add_argument("--seed-base", type=int, default=10_000)

    s = sub.add_parser("evaluate", help="masked-return evaluation")
    s.add_argument("--policy", required=True)
    s.add_argument("--mask", default="identity",
                   choices=["none", "identity", "zero", "interpreter", "jacobian", "perturbation"])
    s.add_argument("--interpreter")
    s.add_argument("--pattern")
    s.add_argument("--q", type=float, default=0.25)
    s.add_argument("--sigma", type=float, default=1.5)
    s.add_argument("--radius", type=int, default=2)
    s.add_argument("--stride", type=int, default=1)
    seeds(s)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_evaluate)

    s = sub.add_parser("ablate", help="returns under each lane pattern")
    s.add_argument("--policy", required=True)
    s.add_argument("--patterns", default="lane0,lane1,lane2,lane3")
    seeds(s, 100)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_ablate)

    s = sub.add_parser("divergence", help="action-histogram KL between original and masked rollouts")
    s.add_argument("--policy", required=True)
    s.add_argument("--interpreter", required=True)
    s.add_argument("--patterns", default="lane0,lane1,lane4")
    s.add_argument("--steps", type=int, default=500)
    s.add_argument("--bins", type=int, default=21)
    s.add_argument("--smoothing", type=float, default=1e-3)
    seeds(s)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_divergence)

    s = sub.add_parser("regions", help="attention mass per lane region")
    s.add_argument("--policy", required=True)
    s.add_argument("--interpreter", required=True)
    s.add_argument("--pattern")
    s.add_argument("--states", type=int, default=100)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_regions)

    s = sub.add_parser("shift", help="grass versus right-line attention along a rollout")
    s.add_argument("--policy", required=True)
    s.add_argument("--interpreter", required=True)
    s.add_argument("--pattern", default="zigzag")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--steps", type=int)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_shift)

    s = sub.add_parser("sparse-stats", help="nonzero-reward statistics")
    s.add_argument("--policy", required=True)
    s.add_argument("--reward-mode", choices=["dense", "terminal_only"])
    seeds(s, 100)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_sparse_stats)

    s = sub.add_parser("export-heatmap", help="write PGM heatmaps of interpreter masks")
    s.add_argument("--interpreter", required=True)
    s.add_argument("--states", type=int, default=8)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_export_heatmap)

    s = sub.add_parser("grad-check", help="finite-difference check of every layer kind")
    s.add_argument("--cases", type=int, default=50)
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_grad_check)
    return p


def main(argv: Optional[list[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except (ConfigError, UsageError, analysis.AnalysisUsageError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (persist.IntegrityError, interp_rewards.IntegrityError) as exc:
        print(f"integrity error: {exc}", file=sys.stderr)
        return EXIT_INTEGRITY
    except TrainingError as exc:
        print(f"training failed: {exc}", file=sys.stderr)
        for k, v in exc.diagnostics.items():
            print(f"  {k}: {v}", file=sys.stderr)
        return EXIT_TRAINING
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
