"""Command-line interface: ``iqpgen [global flags] <command> [options]``.

Exit codes: 0 success, 1 runtime or numerical failure, 2 usage or configuration error.
"""

import argparse
import csv
import itertools
import logging
import math
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import datasets, exact
from .bits import BitMatrix
from .checkpoint import Checkpoint
from .circuit import GateSet, ModelKind, all_k_local, graph_gates, random_gateset, ring_triples, two_local
from .config import Config, ConfigError
from .evaluation import (
    KgelProblem,
    covariance_matrix,
    cumulative_weights,
    kgel_rhs,
    kgel_solve,
    log_likelihood,
    test_mmd,
)
from .mmd import (
    ObservableDistribution,
    multi_bandwidth_loss,
    resolve_schedule,
    sample_observables,
    sigma_for_weight,
    uniform_bitstrings,
)
from .rng import derive_seed, make_rng
from .training import (
    InitConfig,
    NonFiniteLoss,
    TrainConfig,
    init_params_datadep,
    init_params_uniform,
    loss_and_grad,
    train,
)

log = logging.getLogger("iqpgen")

HARDWARE_MESSAGE = (
    "exact sampling of a {kind} circuit on {n} qubits exceeds the exact-simulation limit of {limit}; "
    "sampling large IQP circuits is believed classically intractable and needs quantum hardware "
    "(raise --exact-limit for a slow classical run, or use kind=bitflip)"
)


class UsageError(Exception):
    pass


def _write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def _fmt(x):
    return format(float(x), ".17g")


def _read_index_lists(path):
    out = []
    for line in Path(path).read_text().splitlines():
        line = line.split("#")[0].strip()
        if line:
            out.append([int(t) for t in line.replace(",", " ").split()])
    return out


def build_gates(cfg, n):
    m = cfg["model"]
    spec = m["gates"]
    if spec == "two-local":
        return two_local(n, singles=m["singles"])
    if spec == "all-k-local":
        return all_k_local(n, m["max_weight"])
    if spec == "ring-triples":
        return ring_triples(n)
    if spec == "graph":
        if not m["edge_file"]:
            raise ConfigError("model.edge_file is required for gates = 'graph'")
        edges = [(e[0], e[1]) for e in _read_index_lists(m["edge_file"])]
        return graph_gates(n, edges, next_nearest=m["next_nearest"], singles=m["singles"])
    if not m["gate_file"]:
        raise ConfigError("model.gate_file is required for gates = 'explicit'")
    return GateSet(n, [tuple(g) for g in _read_index_lists(m["gate_file"])])


def _n_qubits(cfg, data):
    n = cfg["model"]["n_qubits"]
    if n is None:
        return data.width
    if data.width != n:
        raise UsageError(f"dataset width {data.width} does not match model.n_qubits = {n}")
    return n


def _load_data(path):
    try:
        return datasets.load_dataset(path)
    except OSError as exc:
        raise UsageError(f"cannot read dataset {path}: {exc}") from None


def _train_schedule(cfg, n, data):
    t = cfg["train"]
    if t["median_rule"]:
        return resolve_schedule(n, weights=t["weights"], data=data, median_rule=True)
    if t["sigmas"] is None and t["weights"] is None:
        raise ConfigError("train.sigmas, train.weights or train.median_rule must be set")
    try:
        return resolve_schedule(n, sigmas=t["sigmas"], weights=t["weights"])
    except ValueError as exc:
        raise ConfigError(f"train bandwidths: {exc}") from None


def _init_params(cfg, gates, data, seed):
    i = cfg["init"]
    if i["method"] == "uniform":
        return init_params_uniform(gates, derive_seed(seed, "init"))
    if i["method"] == "zeros":
        return np.zeros(len(gates))
    init_cfg = InitConfig(i["scale_two_qubit"], i["scale_other"], i["clamp_eps"])
    return init_params_datadep(gates, data, init_cfg, derive_seed(seed, "init"))


def _train_config(cfg, schedule, seed, steps=None, lr=None):
    t = cfg["train"]
    return TrainConfig(
        max_steps=t["steps"] if steps is None else steps,
        learning_rate=t["learning_rate"] if lr is None else lr,
        batch_a=t["batch_a"],
        batch_z=t["batch_z"],
        schedule=schedule.sigmas,
        convergence_window=t["convergence_window"],
        convergence_rel_tol=t["convergence_rel_tol"],
        seed=derive_seed(seed, "train"),
        minibatch=t["minibatch"],
    )


def _progress(step, loss, params):
    if step % 50 == 0:
        log.info("step %d loss %.6g", step, loss)


def cmd_gen_data(args, cfg):
    d = cfg["data"]
    seed = cfg.seed
    labels, spec = None, None
    mcmc = datasets.McmcConfig(d["chains"], d["burn_in"], d["count"], d["thin"], derive_seed(seed, "mcmc"))
    if d["generator"] == "blobs":
        patterns = (
            BitMatrix.from_strings([l for l in Path(d["pattern_file"]).read_text().split() if l])
            if d["pattern_file"]
            else datasets.default_blob_patterns()
        )
        data, labels = datasets.gen_blobs(
            datasets.BlobSpec(patterns, d["flip_prob"]), d["count"], derive_seed(seed, "blobs"), return_labels=True
        )
    elif d["generator"] == "ising2d":
        data, spec = datasets.gen_ising_2d(d["side"], d["temperature"], d["coupling_low"], d["coupling_high"], mcmc)
    else:
        data, spec = datasets.gen_scale_free(
            d["n_nodes"], d["connectivity"], d["temperature"], datasets.linear_degree_bias(d["bias_scale"]), mcmc,
            d["coupling"],
        )
    if d["test_fraction"] > 0:
        if not args.test_out:
            raise ConfigError("data.test_fraction > 0 needs --test-out")
        order_seed = derive_seed(seed, "split")
        train_part, test_part, train_idx, test_idx = datasets.train_test_split(
            data, d["test_fraction"], order_seed, return_indices=True)
        datasets.save_dataset(args.test_out, test_part, d["format"])
        data = train_part
        if labels is not None:
            if args.test_labels_out:
                Path(args.test_labels_out).write_text("".join(f"{l}\n" for l in labels[test_idx]))
            labels = labels[train_idx]
    datasets.save_dataset(args.out, data, d["format"])
    if spec is not None and args.spec_out:
        Path(args.spec_out).write_text(spec.to_text())
    if labels is not None and args.labels_out:
        Path(args.labels_out).write_text("".join(f"{l}\n" for l in labels))
    print(f"wrote {len(data)} rows of width {data.width} to {args.out}")
    return 0


def cmd_train(args, cfg):
    data = _load_data(args.data)
    n = _n_qubits(cfg, data)
    gates = build_gates(cfg, n)
    kind = ModelKind.parse(cfg["model"]["kind"])
    seed = cfg.seed
    schedule = _train_schedule(cfg, n, data)
    log.info("%d qubits, %d gates, bandwidths %s", n, len(gates), ", ".join(f"{s:.4g}" for s in schedule))
    params0 = _init_params(cfg, gates, data, seed)
    report = train(gates, data, train_cfg=_train_config(cfg, schedule, seed), kind=kind, init_params=params0,
                   callback=_progress)
    prov = {
        "config_hash": cfg.digest(),
        "seed": seed,
        "steps": len(report.loss_history),
        "stop_reason": report.stop_reason.value,
        "sigmas": ",".join(_fmt(s) for s in schedule),
    }
    Checkpoint(gates, report.final_params, kind, prov).save(args.out)
    if args.history:
        _write_csv(args.history, ["step", "loss"], [(s, _fmt(l)) for s, l in report.loss_history])
    final = report.loss_history[-1][1] if report.loss_history else float("nan")
    print(f"trained {len(report.loss_history)} steps ({report.stop_reason.value}); final loss {final:.6g}")
    return 0


def _eval_schedule(cfg, ckpt, n):
    e = cfg["eval"]
    if e["sigmas"] is not None or e["weights"] is not None:
        try:
            return resolve_schedule(n, sigmas=e["sigmas"], weights=e["weights"])
        except ValueError as exc:
            raise ConfigError(f"eval bandwidths: {exc}") from None
    if "sigmas" in ckpt.provenance:
        return resolve_schedule(n, sigmas=[float(s) for s in ckpt.provenance["sigmas"].split(",")])
    raise ConfigError("eval.sigmas or eval.weights must be set (the checkpoint records no bandwidths)")


def _witnesses(test, count, labels, seed):
    rng = make_rng(seed, "witnesses")
    if labels is None:
        pick = rng.choice(len(test), size=min(count, len(test)), replace=False)
        return test[np.sort(pick)]
    groups = [np.flatnonzero(labels == v) for v in np.unique(labels)]
    order = [rng.permutation(g) for g in groups]
    picks = []
    for k in range(max(len(g) for g in order)):
        for g in order:
            if k < len(g) and len(picks) < count:
                picks.append(g[k])
    return test[np.sort(picks)]


def cmd_eval(args, cfg):
    ckpt = Checkpoint.load(args.checkpoint)
    test = _load_data(args.test)
    gates, params, kind = ckpt.gates, ckpt.params, ckpt.kind
    n = gates.n_qubits
    if test.width != n:
        raise UsageError(f"test set width {test.width} does not match the checkpoint's {n} qubits")
    e = cfg["eval"]
    seed = cfg.seed
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    schedule = _eval_schedule(cfg, ckpt, n)
    small = n <= exact.get_exact_limit()
    summary = []
    rows = test_mmd(gates, params, kind, test, schedule, e["repetitions"], (e["batch_a"], e["batch_z"]),
                    derive_seed(seed, "test-mmd"))
    _write_csv(out / "test_mmd.csv", ["sigma", "mean", "std"], [(_fmt(r.sigma), _fmt(r.mean), _fmt(r.std)) for r in rows])
    if e["covariance"]:
        use_exact = small and kind is not ModelKind.BITFLIP
        cov = covariance_matrix(gates, params, kind, e["covariance_batch_z"], derive_seed(seed, "covariance"),
                                exact=use_exact)
        _write_csv(out / "covariance.csv", [f"q{i}" for i in range(n)], [[_fmt(v) for v in r] for r in cov.matrix])
    if e["log_likelihood"] and small:
        ll = log_likelihood(gates, params, kind, test)
        summary += [("log_likelihood", _fmt(ll.value)), ("rows_below_floor", ll.below_floor)]
    if e["kgel_sigma"] > 0:
        labels = datasets.load_labels(e["labels_file"]) if e["labels_file"] else None
        if labels is not None and len(labels) != len(test):
            raise UsageError("eval.labels_file must have one label per test row")
        wit = _witnesses(test, e["kgel_witnesses"], labels, derive_seed(seed, "kgel"))
        rhs = kgel_rhs(gates, params, kind, wit, e["kgel_sigma"], (e["batch_a"], e["batch_z"]),
                       derive_seed(seed, "kgel-rhs"), exact=small)
        sol = kgel_solve(KgelProblem(test, wit, e["kgel_sigma"], rhs.values, e["kgel_tolerance"]))
        header = ["index", "pi"] + (["label"] if labels is not None else [])
        _write_csv(out / "kgel_pi.csv", header,
                   [[i, _fmt(p)] + ([int(labels[i])] if labels is not None else []) for i, p in enumerate(sol.pi)])
        order, cum = cumulative_weights(sol.pi, labels)
        _write_csv(out / "kgel_cumulative.csv", ["index", "cumulative_pi"], [(int(i), _fmt(c)) for i, c in zip(order, cum)])
        summary += [("kgel_kl", _fmt(sol.kl_value)), ("kgel_residual", _fmt(sol.residual)),
                    ("kgel_success", int(sol.success))]
        if not sol.success:
            print(f"KGEL: constraints not met (residual {sol.residual:.3g}); the model moments may lie "
                  "outside what the test set can reproduce", file=sys.stderr)
    _write_csv(out / "summary.csv", ["metric", "value"], summary)
    for r in rows:
        print(f"sigma {r.sigma:.4g}: test MMD^2 {r.mean:.6g} +- {r.std:.3g}")
    return 0


def cmd_sample(args, cfg):
    ckpt = Checkpoint.load(args.checkpoint)
    seed = cfg.seed
    if ckpt.kind is ModelKind.BITFLIP:
        rows = exact.sample_bitflip(ckpt.gates, ckpt.params, args.count, derive_seed(seed, "sample"))
    else:
        n = ckpt.gates.n_qubits
        if n > exact.get_exact_limit():
            raise UsageError(HARDWARE_MESSAGE.format(kind=ckpt.kind.value, n=n, limit=exact.get_exact_limit()))
        rows = exact.sample_exact(ckpt.gates, ckpt.params, ckpt.kind, args.count, derive_seed(seed, "sample"))
    datasets.save_dataset(args.out, rows, "text")
    print(f"wrote {len(rows)} samples to {args.out}")
    return 0


def gradcheck(gates, params, X, A, Z, kind, h=1e-5, max_params=None, fault=False):
    """Maximum relative error between the analytic gradient and central differences."""
    _, grad = loss_and_grad(gates, params, X, A, Z, kind)
    if fault:
        grad = -grad
    idx = np.arange(len(params))
    if max_params and len(idx) > max_params:
        idx = idx[:: math.ceil(len(idx) / max_params)]
    worst = 0.0
    for j in idx:
        e = np.zeros(len(params))
        e[j] = h
        fd = (loss_and_grad(gates, params + e, X, A, Z, kind)[0] - loss_and_grad(gates, params - e, X, A, Z, kind)[0]) / (2 * h)
        if abs(fd) > 1e-8:
            worst = max(worst, abs(grad[j] - fd) / abs(fd))
    return worst


def cmd_gradcheck(args, cfg):
    g = cfg["gradcheck"]
    seed = cfg.seed
    kind = ModelKind.parse(args.kind or cfg["model"]["kind"])
    if args.data:
        X = _load_data(args.data)
        n = _n_qubits(cfg, X)
        gates = build_gates(cfg, n)
    else:
        n = g["n_qubits"]
        rng = make_rng(seed, "gradcheck-gates")
        gates = random_gateset(n, min(g["n_gates"], 2**n - 1), rng, max_weight=min(n, 3))
        X = uniform_bitstrings(n, g["data_rows"], derive_seed(seed, "gradcheck-data"))
    params = make_rng(seed, "gradcheck-params").uniform(0, 2 * math.pi, len(gates))
    A = sample_observables(ObservableDistribution.from_sigma(n, sigma_for_weight(n, min(2.0, n / 4))),
                           g["batch_a"], derive_seed(seed, "gradcheck-a"))
    Z = uniform_bitstrings(n, g["batch_z"], derive_seed(seed, "gradcheck-z"))
    threshold = g["threshold"] or (1e-6 if kind is ModelKind.BITFLIP else 1e-4)
    worst = gradcheck(gates, params, X, A, Z, kind, g["step"], g["max_params"], args.inject_fault)
    ok = worst <= threshold
    print(f"gradcheck kind={kind.value} n={n} gates={len(gates)}: max relative error {worst:.3e} "
          f"(threshold {threshold:.0e}) {'PASS' if ok else 'FAIL'}")
    return 0 if ok else 1


def _grid_cells(cfg):
    gr = cfg["grid"]
    t, i = cfg["train"], cfg["init"]
    axes = {
        "learning_rate": gr["learning_rate"] or [t["learning_rate"]],
        "scale_two_qubit": gr["scale_two_qubit"] or [i["scale_two_qubit"]],
        "scale_other": gr["scale_other"] or [i["scale_other"]],
    }
    keys = list(axes)
    return keys, [dict(zip(keys, vals)) for vals in itertools.product(*(axes[k] for k in keys))]


def _with_init(cfg, cell):
    return InitConfig(cell["scale_two_qubit"], cell["scale_other"], cfg["init"]["clamp_eps"])


def cmd_grid(args, cfg):
    data = _load_data(args.data)
    n = _n_qubits(cfg, data)
    gates = build_gates(cfg, n)
    kind = ModelKind.parse(cfg["model"]["kind"])
    gr = cfg["grid"]
    seed = cfg.seed
    schedule = _train_schedule(cfg, n, data)
    train_part, val_part = datasets.train_test_split(data, gr["validation_fraction"], derive_seed(seed, "grid-split"))
    keys, cells = _grid_cells(cfg)
    steps = gr["steps"] or cfg["train"]["steps"]

    def params_for(cell, rows):
        if cfg["init"]["method"] == "datadep":
            return init_params_datadep(gates, rows, _with_init(cfg, cell), derive_seed(seed, "init"))
        return _init_params(cfg, gates, rows, seed)

    def run(cell):
        try:
            tcfg = _train_config(cfg, schedule, seed, steps=steps, lr=cell["learning_rate"])
            rep = train(gates, train_part, train_cfg=tcfg, kind=kind, init_params=params_for(cell, train_part))
            vals = [
                multi_bandwidth_loss(gates, rep.final_params, val_part, schedule,
                                     (cfg["train"]["batch_a"], cfg["train"]["batch_z"]),
                                     derive_seed(seed, "validation", r), kind)
                for r in range(gr["validation_repetitions"])
            ]
            return float(np.mean(vals)), "ok"
        except Exception as exc:  # a failed cell is recorded and the search continues
            return float("nan"), f"failed: {exc}"

    with ThreadPoolExecutor(max_workers=gr["parallel_cells"]) as pool:
        results = list(pool.map(run, cells))
    order = sorted(range(len(cells)), key=lambda k: (math.isnan(results[k][0]), results[k][0], k))
    rows = [[rank + 1] + [_fmt(cells[k][key]) for key in keys] + [_fmt(results[k][0]), results[k][1]]
            for rank, k in enumerate(order)]
    _write_csv(args.out, ["rank"] + keys + ["validation_mmd2", "status"], rows)
    best = order[0]
    if results[best][1] != "ok":
        print("every grid cell failed", file=sys.stderr)
        return 1
    cell = cells[best]
    print("best cell: " + ", ".join(f"{k}={cell[k]:g}" for k in keys) + f" (validation MMD^2 {results[best][0]:.6g})")
    if args.checkpoint:
        final_steps = gr["final_steps"] or steps
        tcfg = _train_config(cfg, schedule, seed, steps=final_steps, lr=cell["learning_rate"])
        rep = train(gates, data, train_cfg=tcfg, kind=kind, init_params=params_for(cell, data))
        prov = {"config_hash": cfg.digest(), "seed": seed, "steps": len(rep.loss_history),
                "stop_reason": rep.stop_reason.value, "sigmas": ",".join(_fmt(s) for s in schedule),
                "grid_cell": ";".join(f"{k}={_fmt(cell[k])}" for k in keys)}
        Checkpoint(gates, rep.final_params, kind, prov).save(args.checkpoint)
    return 0


def bench_once(n, batch_a, batch_z, data_rows, weight, seed):
    """Seconds for one loss-and-gradient evaluation with all-to-all two-local gates on ``n`` qubits."""
    gates = two_local(n)
    rng = make_rng(seed, "bench", n)
    params = rng.uniform(0, 2 * math.pi, len(gates))
    X = uniform_bitstrings(n, data_rows, derive_seed(seed, "bench-x", n))
    A = sample_observables(ObservableDistribution.from_sigma(n, sigma_for_weight(n, weight)), batch_a,
                           derive_seed(seed, "bench-a", n))
    Z = uniform_bitstrings(n, batch_z, derive_seed(seed, "bench-z", n))
    gates.incidence
    t0 = time.perf_counter()
    loss_and_grad(gates, params, X, A, Z, ModelKind.IQP)
    return len(gates), time.perf_counter() - t0


def cmd_bench(args, cfg):
    b = cfg["bench"]
    ns = args.n or [int(x) for x in b["n"]]
    rows = []
    for n in ns:
        best = math.inf
        for _ in range(b["repeats"]):
            m, secs = bench_once(n, args.batch_a or b["batch_a"], args.batch_z or b["batch_z"], b["data_rows"],
                                 b["weight"], cfg.seed)
            best = min(best, secs)
        rows.append((n, m, f"{best:.4f}"))
        print(f"n={n} gates={m} seconds={best:.3f}", flush=True)
    _write_csv(args.out, ["n", "gates", "seconds"], rows)
    return 0


def _global_flags(p, suppress):
    d = argparse.SUPPRESS if suppress else None
    p.add_argument("--config", default=d, help="TOML configuration file")
    p.add_argument("--seed", type=int, default=d, help="master seed (overrides the config)")
    p.add_argument("--threads", type=int, default=d, help="worker threads for BLAS and MCMC chains")
    p.add_argument("--exact-limit", type=int, default=d, help="largest qubit count for exact simulation")
    p.add_argument("-v", "--verbose", action="store_true", default=d)


def build_parser():
    p = argparse.ArgumentParser(prog="iqpgen", description="Train and evaluate IQP generative models.")
    _global_flags(p, False)
    sub = p.add_subparsers(dest="command", required=True)

    def add(name, fn, help):
        sp = sub.add_parser(name, help=help)
        _global_flags(sp, True)
        sp.set_defaults(fn=fn)
        return sp

    sp = add("gen-data", cmd_gen_data, "generate a synthetic dataset")
    sp.add_argument("--out", required=True)
    sp.add_argument("--test-out")
    sp.add_argument("--spec-out", help="write the Ising specification here")
    sp.add_argument("--labels-out", help="write blob pattern labels of the --out rows here")
    sp.add_argument("--test-labels-out", help="write blob pattern labels of the --test-out rows here")

    sp = add("train", cmd_train, "train a model")
    sp.add_argument("--data", required=True)
    sp.add_argument("--out", required=True, help="checkpoint path")
    sp.add_argument("--history", help="loss history CSV")

    sp = add("eval", cmd_eval, "evaluate a checkpoint on a test set")
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--test", required=True)
    sp.add_argument("--out-dir", required=True)

    sp = add("sample", cmd_sample, "sample from a checkpoint")
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--count", type=int, required=True)
    sp.add_argument("--out", required=True)

    sp = add("gradcheck", cmd_gradcheck, "compare analytic gradients with finite differences")
    sp.add_argument("--data")
    sp.add_argument("--kind")
    sp.add_argument("--inject-fault", action="store_true", help="negate the analytic gradient (self-test)")

    sp = add("grid", cmd_grid, "hyperparameter grid search")
    sp.add_argument("--data", required=True)
    sp.add_argument("--out", required=True, help="ranked results CSV")
    sp.add_argument("--checkpoint", help="retrain the best cell on all data and save it here")

    sp = add("bench", cmd_bench, "time loss and gradient evaluations")
    sp.add_argument("--out", required=True)
    sp.add_argument("--n", type=int, nargs="+")
    sp.add_argument("--batch-a", type=int)
    sp.add_argument("--batch-z", type=int)
    return p


def _set_threads(n):
    from threadpoolctl import threadpool_limits

    datasets.set_chain_threads(n)
    return threadpool_limits(limits=n)


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = Config.load(args.config)
        if args.seed is not None:
            cfg.override_seed(args.seed)
        if args.exact_limit is not None:
            if args.exact_limit < 1:
                raise ConfigError("--exact-limit must be at least 1")
            exact.set_exact_limit(args.exact_limit)
        if args.threads is not None and args.threads < 1:
            raise ConfigError("--threads must be at least 1")
        threads = args.threads or min(8, os.cpu_count() or 1)
        with _set_threads(threads):
            return args.fn(args, cfg)
    except (ConfigError, UsageError) as exc:
        print(f"iqpgen: error: {exc}", file=sys.stderr)
        return 2
    except NonFiniteLoss as exc:
        print(f"iqpgen: numerical failure: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:
        print(f"iqpgen: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
