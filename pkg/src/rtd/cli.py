"""Command-line harness: generate instances, run decompositions, benchmark
method sweeps into CSV tables, and inspect tensor files."""

from __future__ import annotations

import argparse
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import formats
from .baselines import (
    MatrixRpcaConfig,
    rpca_flatten,
    rpca_slices,
    slice_moment_estimate,
    whiten_decompose,
)
from .decompose import RtdConfig, evaluate, ncralgo, trace_csv
from .eig import EigConfig
from .synth import SynthSpec, gen_instance, measured_incoherence
from .tensors import (
    SparseTensor3,
    SymTensor3,
    fro_norm,
    inf_norm,
    symmetry_defect,
)

METHODS = ("rtd", "rtd-w-true", "rtd-w-slice", "mrpca-slice", "mrpca-flat")
BENCH_COLUMNS = ("schema", "method", "n", "r", "d", "B", "seed", "rel_error",
                 "support_precision", "seconds", "iterations", "error")
MEAN_COLUMNS = ("schema", "method", "n", "r", "d", "B", "reps", "rel_error",
                "support_precision", "seconds", "iterations")
BENCH_SCHEMA = 1

EXIT_OK = 0
EXIT_INPUT = 1
EXIT_NONCONVERGED = 2


def derive_seed(*parts: int) -> int:
    return int(np.random.SeedSequence(entropy=tuple(parts)).generate_state(1)[0])


def parse_config(path) -> dict[str, list[str]]:
    """Flat key=value file; repeated keys accumulate into lists."""
    out: dict[str, list[str]] = {}
    for raw in Path(path).read_text().splitlines():
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ValueError(f"malformed config line: {raw!r}")
        key, _, value = line.partition("=")
        out.setdefault(key.strip(), []).append(value.strip())
    return out


def _one(cfg: dict, key: str, default=None) -> str | None:
    values = cfg.get(key)
    if not values:
        return default
    return values[-1]


def _bool(text: str | None, default: bool = False) -> bool:
    if text is None:
        return default
    return text.lower() in ("1", "true", "yes", "on")


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _spec_from_args(args, seed: int) -> SynthSpec:
    lambdas = None
    if args.lambdas:
        lambdas = tuple(float(x) for x in args.lambdas.split(","))
    return SynthSpec(
        n=args.n,
        r=args.r,
        sparsity_model=args.model,
        d=args.d,
        B=args.B,
        mu_target=args.mu_target,
        orthonormalize=not args.no_orthonormalize,
        seed=seed,
        lambdas=lambdas,
        symmetrize=not args.asymmetric,
        factor_mode=args.factor_mode,
        zero_row_frac=args.zero_row_frac,
    )


def cmd_synth(args) -> int:
    spec = _spec_from_args(args, args.seed)
    inst = gen_instance(spec)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    formats.write_dense(f"{out}.T.rt3d", inst.dense_observation())
    formats.write_sparse(f"{out}.S.rt3s", inst.sparse)
    formats.write_factors(f"{out}.L.rt3f", inst.model)
    formats.write_meta(f"{out}.meta", inst.meta())
    print(f"wrote {out}.T.rt3d {out}.S.rt3s {out}.L.rt3f {out}.meta")
    return EXIT_OK


def _rtd_config(args, seed: int) -> RtdConfig:
    eig = EigConfig(n_restarts=args.n_restarts, n_power_iters=args.n_power_iters, seed=seed)
    return RtdConfig(
        target_rank=args.r,
        delta=args.delta,
        beta="auto" if args.beta is None else args.beta,
        threshold_mode=args.mode,
        mu=args.mu,
        max_iters_per_stage=args.max_iters_per_stage,
        eig=eig,
    )


def _matrix_config(args, seed: int) -> MatrixRpcaConfig:
    return MatrixRpcaConfig(
        rank=args.r,
        delta=args.delta,
        beta="auto" if args.beta is None else args.beta,
        threshold_mode=args.mode,
        mu=args.mu,
        max_iters_per_stage=args.max_iters_per_stage,
        seed=seed,
    )


def cmd_decompose(args) -> int:
    try:
        arr = formats.read_dense(args.input)
    except (OSError, formats.FormatError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    if arr.shape[0] != arr.shape[1] or arr.shape[0] != arr.shape[2]:
        print("error: decompose expects a cubic tensor", file=sys.stderr)
        return EXIT_INPUT
    truth = None
    if args.truth_factors:
        try:
            truth = formats.read_factors(args.truth_factors)
        except (OSError, formats.FormatError) as exc:
            print(f"error: {exc}", file=sys.stderr)
            return EXIT_INPUT

    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    method = args.method
    needs_symmetric = method in ("rtd", "rtd-w-true", "rtd-w-slice")
    if needs_symmetric:
        try:
            T = SymTensor3(arr, tol=1e-9)
        except ValueError as exc:
            print(f"error: {exc} (symmetrize the input or use a matrix method)",
                  file=sys.stderr)
            return EXIT_INPUT
    else:
        T = SymTensor3(arr, check=False)

    n = T.n
    seed = derive_seed(args.seed, 2)
    converged = True
    if method == "rtd":
        dec = ncralgo(T, _rtd_config(args, seed), ground_truth=truth)
        model, sparse, trace = dec.L_hat, dec.S_hat, dec.trace
        converged = dec.converged
        formats.write_factors(f"{out}.L.rt3f", model)
        formats.write_dense(f"{out}.L.rt3d", model.materialize())
        formats.write_sparse(f"{out}.S.rt3s", sparse)
    elif method in ("rtd-w-true", "rtd-w-slice"):
        if method == "rtd-w-true":
            if truth is None:
                print("error: rtd-w-true needs --truth-factors for the true second moment",
                      file=sys.stderr)
                return EXIT_INPUT
            M2 = (truth.vectors * truth.lambdas) @ truth.vectors.T
        else:
            M2 = slice_moment_estimate(T, _matrix_config(args, derive_seed(args.seed, 3)),
                                       np.random.default_rng(derive_seed(args.seed, 4)))
        try:
            res = whiten_decompose(T, M2, args.r, _rtd_config(args, seed))
        except ValueError as exc:
            print(f"error: {exc}", file=sys.stderr)
            return EXIT_INPUT
        trace = res.whitened.trace
        converged = res.whitened.converged
        formats.write_factors(f"{out}.L.rt3f", res.model)
        formats.write_dense(f"{out}.L.rt3d", res.model.materialize())
        formats.write_sparse(f"{out}.S.rt3s", SparseTensor3.empty(n))
    elif method in ("mrpca-slice", "mrpca-flat"):
        mcfg = _matrix_config(args, seed)
        res = (rpca_slices(T, mcfg) if method == "mrpca-slice"
               else rpca_flatten(T, 1, mcfg))
        trace = res.trace
        converged = res.converged
        formats.write_dense(f"{out}.L.rt3d", res.L)
        nz = np.argwhere(res.S != 0.0)
        formats.write_sparse(f"{out}.S.rt3s",
                             SparseTensor3(n, nz, res.S[res.S != 0.0], check=False))
    else:
        print(f"error: unknown method {method!r}", file=sys.stderr)
        return EXIT_INPUT

    Path(f"{out}.trace.csv").write_text(trace_csv(trace))
    print(f"wrote {out}.L.rt3d {out}.S.rt3s {out}.trace.csv"
          f" (converged={converged})")
    return EXIT_OK if converged else EXIT_NONCONVERGED


def _bench_point(task) -> list[dict]:
    (gseed, n, r, d_idx, d, B, rep, methods, knobs) = task
    instance_seed = derive_seed(gseed, 1, d_idx, rep)
    spec = SynthSpec(
        n=n, r=r, sparsity_model=knobs["sparsity"], d=d, B=B,
        mu_target=knobs["mu_target"], orthonormalize=True, seed=instance_seed,
        lambdas=knobs["lambdas"], symmetrize=True, factor_mode=knobs["factor_mode"],
    )
    inst = gen_instance(spec)
    T = inst.tensor
    truth_dense = inst.low_rank.data
    truth_norm = float(np.linalg.norm(truth_dense))
    s_star_lin = inst.sparse.linear()

    rows = []
    for m_idx, method in enumerate(methods):
        seed = derive_seed(gseed, 2, m_idx, d_idx, rep)
        eig = EigConfig(n_restarts=knobs["n_restarts"], n_power_iters=knobs["n_power_iters"],
                        seed=seed)
        tcfg = RtdConfig(target_rank=r, delta=knobs["delta"], beta=knobs["beta"],
                         threshold_mode=knobs["mode"], mu=knobs["mu"],
                         max_iters_per_stage=knobs["max_iters_per_stage"], eig=eig)
        mcfg = MatrixRpcaConfig(rank=r, delta=knobs["delta"], beta=knobs["beta"],
                                threshold_mode=knobs["matrix_mode"], mu=knobs["matrix_mu"],
                                max_iters_per_stage=knobs["max_iters_per_stage"], seed=seed)
        row = {"schema": BENCH_SCHEMA, "method": method, "n": n, "r": r, "d": d, "B": B,
               "seed": instance_seed, "rel_error": None, "support_precision": None,
               "seconds": None, "iterations": 0, "error": ""}
        tic = time.perf_counter()
        try:
            if method == "rtd":
                dec = ncralgo(T, tcfg)
                metrics = evaluate(inst.model, dec, inst.sparse)
                row["rel_error"] = metrics.rel_fro_error
                row["support_precision"] = metrics.support_precision
                row["iterations"] = len(dec.trace)
                if not dec.converged:
                    row["error"] = "nonconverged"
            elif method in ("rtd-w-true", "rtd-w-slice"):
                if method == "rtd-w-true":
                    M2 = (inst.model.vectors * inst.model.lambdas) @ inst.model.vectors.T
                else:
                    M2 = slice_moment_estimate(
                        T, mcfg, np.random.default_rng(derive_seed(seed, 5)))
                res = whiten_decompose(T, M2, r, tcfg)
                est = res.model.materialize().data
                row["rel_error"] = float(np.linalg.norm(est - truth_dense)) / truth_norm
                row["iterations"] = len(res.whitened.trace)
                if not res.whitened.converged:
                    row["error"] = "nonconverged"
            else:
                res = (rpca_slices(T, mcfg) if method == "mrpca-slice"
                       else rpca_flatten(T, 1, mcfg))
                row["rel_error"] = float(np.linalg.norm(res.L - truth_dense)) / truth_norm
                nz = np.flatnonzero(res.S.reshape(-1))
                row["support_precision"] = (
                    1.0 if nz.size == 0 else float(np.isin(nz, s_star_lin).sum()) / nz.size)
                row["iterations"] = len(res.trace)
                if not res.converged:
                    row["error"] = "nonconverged"
        except Exception as exc:  # noqa: BLE001 - a failed method must not kill the sweep
            row["error"] = type(exc).__name__
        row["seconds"] = round(time.perf_counter() - tic, 3)
        rows.append(row)
    return rows


def cmd_bench(args) -> int:
    try:
        cfg = parse_config(args.config)
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT

    n = int(_one(cfg, "n", "50"))
    r = int(_one(cfg, "r", "3"))
    B = int(_one(cfg, "B", "0"))
    ds = [int(x) for x in cfg.get("d", ["10"])]
    reps = int(_one(cfg, "reps", "1"))
    gseed = args.seed if args.seed is not None else int(_one(cfg, "seed", "0"))
    methods = cfg.get("method", ["rtd"])
    for m in methods:
        if m not in METHODS:
            print(f"error: unknown method {m!r}", file=sys.stderr)
            return EXIT_INPUT
    beta_text = _one(cfg, "beta")
    lambdas_text = cfg.get("lambda")
    knobs = {
        "sparsity": _one(cfg, "sparsity", "block"),
        "mu": float(_one(cfg, "mu", "1.0")),
        "mu_target": (float(_one(cfg, "mu_target")) if _one(cfg, "mu_target") else None),
        "delta": float(_one(cfg, "delta", "1e-3")),
        "beta": float(beta_text) if beta_text else "auto",
        "mode": args.mode or _one(cfg, "mode", "practical"),
        "matrix_mode": _one(cfg, "matrix_mode", "theoretical"),
        "matrix_mu": float(_one(cfg, "matrix_mu", _one(cfg, "mu", "1.0"))),
        "n_restarts": (int(_one(cfg, "n_restarts")) if _one(cfg, "n_restarts") else None),
        "n_power_iters": int(_one(cfg, "n_power_iters", "30")),
        "max_iters_per_stage": (int(_one(cfg, "max_iters_per_stage"))
                                if _one(cfg, "max_iters_per_stage") else None),
        "lambdas": tuple(float(x) for x in lambdas_text) if lambdas_text else None,
        "factor_mode": _one(cfg, "factor_mode", "gaussian"),
    }

    tasks = [(gseed, n, r, d_idx, d, B, rep, methods, knobs)
             for d_idx, d in enumerate(ds) for rep in range(reps)]
    threads = args.threads or int(os.environ.get("RTD_THREADS", "1"))
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            chunks = list(pool.map(_bench_point, tasks))
    else:
        chunks = [_bench_point(t) for t in tasks]
    rows = [row for chunk in chunks for row in chunk]
    rows.sort(key=lambda row: (row["method"], row["d"], row["seed"]))

    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    lines = [",".join(BENCH_COLUMNS)]
    for row in rows:
        lines.append(",".join(_fmt(row[c]) for c in BENCH_COLUMNS))
    Path(f"{out}.csv").write_text("\n".join(lines) + "\n")

    mean_lines = [",".join(MEAN_COLUMNS)]
    for method in sorted(set(row["method"] for row in rows)):
        for d in ds:
            group = [row for row in rows if row["method"] == method and row["d"] == d]
            if not group:
                continue

            def mean_of(key):
                vals = [row[key] for row in group if row[key] is not None]
                return sum(vals) / len(vals) if vals else None

            mean_lines.append(",".join(_fmt(v) for v in (
                BENCH_SCHEMA, method, n, r, d, B, len(group), mean_of("rel_error"),
                mean_of("support_precision"), mean_of("seconds"),
                mean_of("iterations"),
            )))
    Path(f"{out}.mean.csv").write_text("\n".join(mean_lines) + "\n")
    print(f"wrote {out}.csv and {out}.mean.csv ({len(rows)} rows)")
    return EXIT_OK


def cmd_inspect(args) -> int:
    path = Path(args.input)
    try:
        magic = path.open("rb").read(4)
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    try:
        if magic == b"RT3D":
            arr = formats.read_dense(path)
            print(f"format=RT3D shape={arr.shape}")
            print(f"fro_norm={fro_norm(arr)!r}")
            print(f"inf_norm={inf_norm(arr)!r}")
            if arr.shape[0] == arr.shape[1] == arr.shape[2]:
                print(f"symmetry_defect={symmetry_defect(arr)!r}")
        elif magic == b"RT3S":
            sp = formats.read_sparse(path)
            print(f"format=RT3S n={sp.n} nnz={sp.nnz}")
            if sp.nnz:
                print(f"value_min={sp.values.min()!r}")
                print(f"value_max={sp.values.max()!r}")
        elif magic == b"RT3F":
            model = formats.read_factors(path)
            print(f"format=RT3F n={model.n} rank={model.rank}")
            print(f"lambdas={','.join(repr(float(x)) for x in model.lambdas)}")
            if model.rank:
                print(f"measured_mu={measured_incoherence(model)!r}")
        else:
            print(f"error: unrecognized magic {magic!r}", file=sys.stderr)
            return EXIT_INPUT
    except formats.FormatError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="rtd", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    syn = sub.add_parser("synth", help="generate a synthetic instance to tensor files")
    syn.add_argument("--n", type=int, required=True)
    syn.add_argument("--r", type=int, required=True)
    syn.add_argument("--model", choices=("entrywise", "block"), default="block")
    syn.add_argument("--d", type=int, default=0)
    syn.add_argument("--B", type=int, default=0)
    syn.add_argument("--mu-target", type=float, default=None)
    syn.add_argument("--lambdas", default=None, help="comma-separated component weights")
    syn.add_argument("--factor-mode", choices=("gaussian", "low_coherence"),
                     default="gaussian")
    syn.add_argument("--zero-row-frac", type=float, default=0.0)
    syn.add_argument("--no-orthonormalize", action="store_true")
    syn.add_argument("--asymmetric", action="store_true",
                     help="leave the sparse part unsymmetrized (raw protocol)")
    syn.add_argument("--seed", type=int, default=0)
    syn.add_argument("--out", required=True, help="output path prefix")
    syn.set_defaults(func=cmd_synth)

    dec = sub.add_parser("decompose", help="split a tensor file into low-rank + sparse")
    dec.add_argument("input", help="RT3D tensor file")
    dec.add_argument("--method", choices=METHODS, default="rtd")
    dec.add_argument("--r", type=int, required=True, help="target rank")
    dec.add_argument("--mode", choices=("theoretical", "practical"), default="practical")
    dec.add_argument("--delta", type=float, default=1e-3)
    dec.add_argument("--beta", type=float, default=None, help="threshold scale (default auto)")
    dec.add_argument("--mu", type=float, default=1.0)
    dec.add_argument("--n-restarts", type=int, default=None)
    dec.add_argument("--n-power-iters", type=int, default=30)
    dec.add_argument("--max-iters-per-stage", type=int, default=None)
    dec.add_argument("--truth-factors", default=None,
                     help="RT3F ground truth; fills the trace rel-error column "
                          "and provides the true second moment for rtd-w-true")
    dec.add_argument("--seed", type=int, default=0)
    dec.add_argument("--out", required=True, help="output path prefix")
    dec.set_defaults(func=cmd_decompose)

    ben = sub.add_parser("bench", help="run a method sweep from a config file")
    ben.add_argument("--config", required=True)
    ben.add_argument("--out", required=True, help="output path prefix")
    ben.add_argument("--seed", type=int, default=None, help="override config seed")
    ben.add_argument("--mode", choices=("theoretical", "practical"), default=None)
    ben.add_argument("--threads", type=int, default=None,
                     help="parallel sweep tasks (fallback: RTD_THREADS)")
    ben.set_defaults(func=cmd_bench)

    ins = sub.add_parser("inspect", help="print statistics of a tensor file")
    ins.add_argument("input")
    ins.set_defaults(func=cmd_inspect)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
