"""Command-line entry point: ``aloe <command> [options]``.

Commands: train, eval-mmd, sample, heatmap, gradcheck, oracle-suite.
Settings come from an optional ``--config`` file of ``key = value`` lines;
``--set key=value`` and the named flags override it.

Exit codes: 0 success, 1 usage error, 2 numerical or oracle failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

EXIT_OK, EXIT_USAGE, EXIT_NUMERIC = 0, 1, 2


class UsageError(Exception):
    pass


def _limit_threads(n: int) -> None:
    # Must run before numpy loads its BLAS.
    for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ[var] = str(n)


def read_config_file(path) -> dict[str, str]:
    out = {}
    with open(path) as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise UsageError(f"{path}:{lineno}: expected key = value")
            k, v = line.split("=", 1)
            out[k.strip()] = v.strip()
    return out


def _build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="aloe", description="Discrete energy-based models with learned local search.")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="file of key = value lines")
    common.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override one setting")
    common.add_argument("--seed", type=int)
    common.add_argument("--threads", type=int, default=1, help="BLAS threads (1 keeps runs bit-reproducible)")
    common.add_argument("--outdir", help="artifact directory")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", parents=[common], help="train an energy model")
    t.add_argument("--method")
    t.add_argument("--data")
    t.add_argument("--steps", type=int)
    t.add_argument("--no-eval", action="store_true", help="skip the final MMD evaluation")

    for name, text in (("eval-mmd", "MMD-Hamming of a checkpoint against held-out data"),
                       ("sample", "draw Gibbs samples from a checkpoint"),
                       ("heatmap", "energy heatmap of a checkpoint")):
        s = sub.add_parser(name, parents=[common], help=text)
        s.add_argument("--checkpoint", required=True)
        s.add_argument("--data")
        if name == "sample":
            s.add_argument("-n", type=int, default=1000)
        if name == "heatmap":
            s.add_argument("--resolution", type=int, default=100)

    sub.add_parser("gradcheck", parents=[common], help="finite-difference gradient suites")
    sub.add_parser("oracle-suite", parents=[common], help="exact enumeration oracles")
    return p


def resolve_config(args):
    from .experiment import ConfigError, RunConfig
    items: dict = {}
    if args.config:
        try:
            items.update(read_config_file(args.config))
        except OSError as e:
            raise UsageError(f"cannot read config file: {e}") from None
    for kv in args.set:
        if "=" not in kv:
            raise UsageError(f"--set expects KEY=VALUE, got {kv!r}")
        k, v = kv.split("=", 1)
        items[k.strip()] = v.strip()
    for key in ("seed", "outdir", "method", "data", "steps"):
        val = getattr(args, key, None)
        if val is not None:
            items[key] = str(val)
    try:
        return RunConfig.from_mapping(items)
    except ConfigError as e:
        raise UsageError(str(e)) from None


def write_config_echo(path, cfg) -> None:
    with open(path, "w") as fh:
        for k, v in cfg.to_dict().items():
            if isinstance(v, list):
                v = ",".join(map(str, v))
            fh.write(f"{k} = {v}\n")


def _outdir(cfg) -> str:
    out = cfg.outdir or "."
    os.makedirs(out, exist_ok=True)
    return out


def _load_checkpoint(path):
    from .energy import EnergyModel
    if not os.path.exists(path):
        raise UsageError(f"checkpoint not found: {path}")
    try:
        return EnergyModel.load(path)
    except (ValueError, KeyError) as e:
        raise UsageError(f"unreadable checkpoint {path}: {e}") from None


def cmd_train(args, cfg) -> int:
    from .experiment import evaluate_mmd, train
    from .gibbs import write_samples_csv
    from .evaluation import sample_energy_model
    from .rng import make_rng
    out = _outdir(cfg)
    cfg.outdir = out
    write_config_echo(os.path.join(out, "config.echo"), cfg)
    with open(os.path.join(out, "metrics.jsonl"), "w") as metrics, \
            open(os.path.join(out, "timing.jsonl"), "w") as timing:
        def on_record(r):
            metrics.write(json.dumps(r, sort_keys=True) + "\n")
            metrics.flush()
        res = train(cfg, on_record, lambda r: timing.write(json.dumps(r) + "\n"))
        res.f.save(os.path.join(out, "checkpoint.energy"))
        if res.q is not None:
            res.q.save(os.path.join(out, "checkpoint.sampler"))
        if not args.no_eval:
            mmd = evaluate_mmd(res.f, cfg)
            on_record({"step": cfg.steps, "kind": "eval", "mmd_x1e-3": mmd})
            print(f"mmd_hamming_x1e-3 = {mmd:.6f}")
    samples = sample_energy_model(res.f, make_rng(cfg.seed, "samples"), 1000, cfg.eval_sweeps)
    write_samples_csv(os.path.join(out, "samples.csv"), samples)
    print(f"wrote artifacts to {out}")
    return EXIT_OK


def cmd_eval_mmd(args, cfg) -> int:
    from .experiment import evaluate_mmd
    f = _load_checkpoint(args.checkpoint)
    mmd = evaluate_mmd(f, cfg)
    print(json.dumps({"data": cfg.data, "seed": cfg.seed, "mmd_x1e-3": mmd}, sort_keys=True))
    return EXIT_OK


def cmd_sample(args, cfg) -> int:
    from .evaluation import sample_energy_model
    from .gibbs import write_samples_csv
    from .rng import make_rng
    if args.n < 1:
        raise UsageError("-n must be positive")
    f = _load_checkpoint(args.checkpoint)
    out = _outdir(cfg)
    x = sample_energy_model(f, make_rng(cfg.seed, "samples"), args.n, cfg.eval_sweeps)
    write_samples_csv(os.path.join(out, "samples.csv"), x)
    print(f"wrote {args.n} samples to {os.path.join(out, 'samples.csv')}")
    return EXIT_OK


def cmd_heatmap(args, cfg) -> int:
    from .evaluation import write_heatmap_csv, write_pgm
    from .experiment import heatmap_for
    if args.resolution < 2:
        raise UsageError("--resolution must be >= 2")
    f = _load_checkpoint(args.checkpoint)
    out = _outdir(cfg)
    hm = heatmap_for(f, args.resolution)
    # higher energy means higher density, drawn brighter
    write_pgm(os.path.join(out, "heatmap.pgm"), hm.normalized)
    write_heatmap_csv(os.path.join(out, "heatmap.csv"), hm)
    print(f"wrote heatmap.pgm and heatmap.csv to {out}")
    return EXIT_OK


def _report(results) -> int:
    for r in results:
        print(r.line())
    ok = all(r.passed for r in results)
    print("all checks passed" if ok else "some checks FAILED")
    return EXIT_OK if ok else EXIT_NUMERIC


def cmd_gradcheck(args, cfg) -> int:
    from .oracles import run_gradcheck_suite
    return _report(run_gradcheck_suite(cfg.seed))


def cmd_oracle_suite(args, cfg) -> int:
    from .oracles import run_oracle_suite
    return _report(run_oracle_suite(cfg.seed))


COMMANDS = {"train": cmd_train, "eval-mmd": cmd_eval_mmd, "sample": cmd_sample, "heatmap": cmd_heatmap,
            "gradcheck": cmd_gradcheck, "oracle-suite": cmd_oracle_suite}


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_OK if e.code == 0 else EXIT_USAGE
    if args.threads < 1:
        print("error: --threads must be >= 1", file=sys.stderr)
        return EXIT_USAGE
    _limit_threads(args.threads)
    try:
        cfg = resolve_config(args)
        return COMMANDS[args.command](args, cfg)
    except UsageError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except FloatingPointError as e:
        print(f"numerical failure: {e}", file=sys.stderr)
        return EXIT_NUMERIC


def entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entry()
