"""Command-line experiment runner.

Every subcommand reads one TOML config (or the built-in two-symbol default),
writes ``<name>.json`` into the output directory and, where tabular data is
natural, a CSV next to it. A failed run leaves ``<name>.FAILED``.
"""

import argparse
from dataclasses import asdict
import datetime as _dt
import glob
import json
import os
import sys

import numpy as np

from ._validation import ConfigurationError
from .birkhoff import (
    COBOUNDARY, CorrelationTable, TrajectoryEnsemble, center_observable, coboundary_test,
    variance_report,
)
from .blocks import (
    ASIPReport, block_decomposition, block_sums, dyadic_tiling, gap_cardinality_check,
    h_condition_probe, ks_from_samples, required_indices, variance_match, window_tiles,
)
from .config import parse_config
from .inducing import (
    ECriteria, WindowCriterion, block_sups, estimate_p_E, go_conditions_check, induced_report,
    kac_check, moment_check, resummation, return_times, tail_bound_check,
)
from .measures import (
    MeasureStack, equivariance_residuals, estimate_triplet, trig_dictionary, triplets_csv,
)
from .operators import OperatorFamily, ly_check, norm_bound_check, probe_dictionary
from .reporting import csv_text, write_failure, write_report, write_text
from .holder import sup_norm

COMMANDS = ("triplet", "variance", "ly", "induce", "blocks", "hprobe", "asip", "report")


def _stack(cfg, path, hi, lo=0):
    fam = OperatorFamily(path, cfg.M, cfg.make_observable())
    return MeasureStack(path, lo, hi, M=cfg.M, n_relax=cfg.n_relax, family=fam)


def _flags(cfg, **extra):
    out = {"nu_horizon": cfg.n_relax, "grid_M": cfg.M}
    out.update(extra)
    return out


def cmd_triplet(cfg, args):
    path = cfg.path()
    stack = _stack(cfg, path, args.horizon)
    eig, adj = stack.residuals()
    equi = float(equivariance_residuals(stack, range(args.horizon)).max())
    by_freq = {k: float(equivariance_residuals(stack, range(args.horizon),
                                               trig_dictionary(k)[-2:]).max())
               for k in range(1, 5)}
    tri = estimate_triplet(path, n_relax=8, M=cfg.M, family=stack.family)
    offsets = list(range(0, min(args.export, args.horizon + 1)))
    write_text(os.path.join(args.out_dir, "triplet.csv"), triplets_csv(stack, offsets))
    lam = [stack.lam(j) for j in range(0, min(args.horizon, 16))]
    result = {
        "window": [0, args.horizon],
        "lambda_head": lam,
        "eigen_residual_max": float(eig.max()),
        "adjoint_residual_max": float(adj.max()),
        "equivariance_residual_max": equi,
        "normalization_residual": float(max(abs(stack.nu(j) @ stack.h(j) - 1.0)
                                            for j in range(0, args.horizon + 1))),
        "relaxation_check": {"n_relax_converged": tri.n_relax,
                             "h_difference": float(sup_norm(tri.h.values - stack.h(0)))},
        "equivariance_by_frequency": by_freq,
        "min_h": float(min(stack.h(j).min() for j in range(0, args.horizon + 1))),
    }
    return result, _flags(cfg)


def cmd_variance(cfg, args):
    path = cfg.path()
    cps = sorted(cfg.checkpoints)
    stack = _stack(cfg, path, max(cps))
    rep = variance_report(path, stack, cfg.make_observable(), N=args.N or cfg.N,
                          seed=cfg.seed, checkpoints=cps, workers=cfg.workers,
                          use_mc=not args.no_mc)
    return rep.to_dict(), _flags(cfg, correlation_truncated=rep.truncated, k_cut=rep.k_cut)


def cmd_ly(cfg, args):
    rng = np.random.default_rng(cfg.seed)
    base = cfg.path()
    obs = cfg.make_observable()
    dictionary = probe_dictionary(cfg.M, cfg.holder, seed=cfg.seed)
    rows, norm_rows = [], []
    fam = OperatorFamily(base, cfg.M, obs)
    for i in range(args.instances):
        path = base.shifted(int(rng.integers(0, 10**6)))
        n = int(rng.integers(1, 9))
        T = float(rng.uniform(0.0, 1.0))
        g = dictionary[int(rng.integers(len(dictionary)))] * float(rng.uniform(0.1, 10.0))
        rep = ly_check(path, n, T, g, cfg.holder, rng=rng, observable=obs, family=fam)
        rows.append({"n": n, "T": T, "lhs": rep.lhs, "rhs": rep.rhs, "slack": rep.slack,
                     "satisfied": rep.satisfied})
        if i < args.norm_instances:
            tw = rng.uniform(-1.0, 1.0, size=n)
            nb = norm_bound_check(path, n, tw, cfg.holder, dictionary=dictionary,
                                  observable=obs, family=fam)
            norm_rows.append({"n": n, "estimate": nb.estimate, "bound": nb.bound,
                              "certified": nb.certified})
    result = {
        "instances": len(rows),
        "all_satisfied": all(r["satisfied"] for r in rows),
        "min_slack": min(r["slack"] for r in rows),
        "norm_instances": len(norm_rows),
        "all_certified": all(r["certified"] for r in norm_rows),
        "ly": rows,
        "norm_bound": norm_rows,
    }
    return result, _flags(cfg, norm_bound_dictionary=len(dictionary))


def cmd_induce(cfg, args):
    path = cfg.path()
    obs = cfg.make_observable()
    crit = cfg.criteria()
    flags = _flags(cfg)
    full = isinstance(crit, ECriteria)
    n_max = args.n_max or (256 if full else 10_000)
    # the full rule needs the stack N_check steps past every scanned state
    hi = max(4096, n_max + cfg.N_check + 64) if full else 4096
    stack = _stack(cfg, path, hi)
    cobs = center_observable(obs, stack)
    table = CorrelationTable(stack, cobs, lo=0, hi=hi - 1)
    sigma2 = float(table.second_moment(0, 4096)[0] / 4096)
    if full:
        crit = crit.with_sigma2(sigma2).bind(stack, obs, table)
        flags.update(K_surrogate=True, floor_checked_up_to=cfg.N_check)
        p_ref = None
    else:
        flags.update(test_mode_window=list(map(int, crit.pattern)))
        p_ref = estimate_p_E(path, crit, n_draws=1000)
    sys_ = return_times(path, crit, n_max)
    kac = kac_check(sys_, p_ref)
    rng = np.random.default_rng(cfg.seed)
    res_err = 0.0
    top = int(sys_.starts[-2]) if sys_.n_blocks >= 2 else 0
    if top >= 1:
        for _ in range(100):
            n = int(rng.integers(1, min(top, 256) + 1))
            lhs, rhs = resummation(path, float(rng.random()), n, sys_, obs)
            res_err = max(res_err, abs(lhs - rhs))
    A = block_sups(path, sys_, obs, M=128, n_blocks=2048)
    mom = moment_check(A, cfg.p) if A.size >= 4 else None
    tail = tail_bound_check(path, sys_, observable=obs, p=cfg.p, M=128) if top >= 1 else None
    go = None
    if sys_.n_blocks > 230 and sys_.starts[230] < hi:
        go = go_conditions_check(path, stack, sys_, sigma2, cobs, N=min(cfg.N, 2000),
                                 seed=cfg.seed, moments=mom, workers=cfg.workers)
    else:
        flags["go_skipped"] = "too few returns inside the stack window"
    out = asdict(induced_report(sys_, mom, go, flags=dict(flags)))
    out.update(kac=asdict(kac) | {"ok": kac.ok}, resummation_max_error=res_err,
               tail=None if tail is None else asdict(tail), sigma2=sigma2,
               go=None if go is None else asdict(go) | {"ok": go.ok})
    return out, flags


def cmd_blocks(cfg, args):
    beta = cfg.beta if args.beta is None else args.beta
    eps = cfg.eps_blocks if args.eps is None else args.eps
    sc = block_decomposition(args.n, beta, eps)
    rows = sc.to_rows()
    write_text(os.path.join(args.out_dir, "blocks.csv"),
               csv_text(["kind", "index", "start", "length"],
                        [[r["kind"], r["index"], r["start"], r["length"]] for r in rows]))
    card = gap_cardinality_check(args.n, beta, eps)
    result = {"n": sc.n, "beta": beta, "eps": eps, "f": sc.f, "F": sc.F,
              "block_length": sc.block_length, "gap0_length": sc.gaps[0][1],
              "gap_total": sc.gap_total, "total": sc.F * sc.block_length + sc.gap_total,
              "tiles": rows, "gap_cardinality": asdict(card)}
    return result, _flags(cfg)


def cmd_hprobe(cfg, args):
    path = cfg.path()
    stack = _stack(cfg, path, 512)
    rep = h_condition_probe(path, stack, seed=cfg.seed)
    return asdict(rep), _flags(cfg, method=rep.method)


def _induced_len(induced, n_cap):
    return n_cap + 1 if induced is None else induced.starts.size


def cmd_asip(cfg, args):
    """Normality and variance matching on one dyadic grid of induced sums.

    Row ``n`` is the sum over induced indices ``[1, n)``; ``n`` runs over
    ``2^(m+1)`` while the underlying span stays inside the largest checkpoint.
    """
    path = cfg.path()
    obs = cfg.make_observable()
    rate = cfg.rate
    n_cap = max(cfg.checkpoints)
    flags = _flags(cfg, coupling_constructed=False)
    induced = None
    if cfg.test_mode_window:
        induced = return_times(path, WindowCriterion(cfg.test_mode_window), 2 * n_cap)
        flags["induced"] = "test-mode window"
    else:
        flags["induced"] = "every state returns"

    def under(ell):
        return int(ell) if induced is None else int(induced.underlying(ell))

    n_top = 0
    while 2 ** (n_top + 2) < _induced_len(induced, n_cap) and under(2 ** (n_top + 2)) <= n_cap:
        n_top += 1
    n_min = max(0, int(np.ceil(np.log2(min(cfg.checkpoints)))) - 1)
    stack = _stack(cfg, path, n_cap)
    cobs = center_observable(obs, stack)
    table = CorrelationTable(stack, cobs, lo=0, hi=n_cap - 1)
    cps = np.asarray(cfg.checkpoints)
    verdict = coboundary_test(cps, table.second_moment(0, cps) / cps).verdict
    sch = dyadic_tiling(n_top, rate.beta, cfg.eps_blocks)
    rec = {under(1)}
    for n, s in sch.items():
        rec |= required_indices(window_tiles(n, s), induced)
    ens = TrajectoryEnsemble(path, stack, cobs, N=args.N or cfg.N, n_max=max(rec),
                             seed=cfg.seed, record=rec, checkpoints=(), workers=cfg.workers)
    vm = variance_match(ens, rate, n_top, eps=cfg.eps_blocks, induced=induced, seed=cfg.seed,
                        n_min=n_min)
    a = under(1)
    ks, sig, span = [], [], []
    for n in vm.ns:
        b = under(n)
        sd = float(np.sqrt(max(table.second_moment(a, b - a)[0], 0.0)))
        sums = ens.partial_sum(a, b)
        ks.append(float("nan") if verdict == COBOUNDARY or sd <= 1e-12
                  else ks_from_samples(sums / sd)[0])
        sig.append(sd)
        span.append(b - a)
    cons = max((block_sums(ens, s, induced).consistency_error for s in sch.values() if s),
               default=0.0)
    report = ASIPReport(
        checkpoints=list(vm.ns), ks=ks, sigma_n=sig, sigma_surrogate=vm.sigma_surrogate,
        discrepancy=vm.discrepancy,
        rate={"p": rate.p, "a_p": rate.a_p, "beta": rate.beta, "eps": cfg.eps_blocks,
              "delta": rate.delta},
        variance_match=asdict(vm),
        flags={"verdict": verdict, "tiling_consistency": cons, "underlying_span": span},
    )
    write_text(os.path.join(args.out_dir, "asip.csv"), report.to_csv())
    return report.to_dict(), flags


def cmd_report(cfg, args):
    rows = []
    lines = ["# Experiment summary", "", "| report | key | value |", "|---|---|---|"]
    for fn in sorted(glob.glob(os.path.join(args.out_dir, "*.json"))):
        if fn.endswith(".meta.json") or os.path.basename(fn) == "report.json":
            continue
        with open(fn, encoding="utf-8") as fh:
            doc = json.load(fh)
        name = doc.get("report", os.path.basename(fn))
        for key, val in sorted(doc.get("result", {}).items()):
            if isinstance(val, (int, float, str, bool)) or val is None:
                rows.append([name, key, val])
                lines.append(f"| {name} | {key} | {val} |")
    failed = sorted(os.path.basename(f) for f in glob.glob(os.path.join(args.out_dir, "*.FAILED")))
    if failed:
        lines += ["", "Failed runs: " + ", ".join(failed)]
    write_text(os.path.join(args.out_dir, "summary.md"), "\n".join(lines) + "\n")
    write_text(os.path.join(args.out_dir, "summary.csv"),
               csv_text(["report", "key", "value"], rows))
    return {"entries": len(rows), "failed": failed}, _flags(cfg)


HANDLERS = {
    "triplet": cmd_triplet, "variance": cmd_variance, "ly": cmd_ly, "induce": cmd_induce,
    "blocks": cmd_blocks, "hprobe": cmd_hprobe, "asip": cmd_asip, "report": cmd_report,
}


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="TOML config file (default: built-in two-symbol setup)")
    common.add_argument("--seed", type=int, help="override the config seed")
    common.add_argument("--workers", type=int, help="worker threads for Monte Carlo")
    common.add_argument("--out-dir", help="output directory (default from config)")
    ap = argparse.ArgumentParser(prog="rdexpand", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True, metavar="{" + ",".join(COMMANDS) + "}")
    p = sub.add_parser("triplet", parents=[common], help="equivariant stack and residuals")
    p.add_argument("--horizon", type=int, default=256)
    p.add_argument("--export", type=int, default=4, help="offsets written to triplet.csv")
    p = sub.add_parser("variance", parents=[common], help="variance report")
    p.add_argument("--N", type=int)
    p.add_argument("--no-mc", action="store_true")
    p = sub.add_parser("ly", parents=[common], help="randomised Lasota-Yorke certification")
    p.add_argument("--instances", type=int, default=100)
    p.add_argument("--norm-instances", type=int, default=50)
    p = sub.add_parser("induce", parents=[common], help="return times and induced checks")
    p.add_argument("--n-max", type=int, help="scan length (default 10000; 256 for the full rule)")
    p = sub.add_parser("blocks", parents=[common], help="block decomposition tables")
    p.add_argument("--n", type=int, default=10)
    p.add_argument("--beta", type=float)
    p.add_argument("--eps", type=float)
    sub.add_parser("hprobe", parents=[common], help="gap factorisation probe")
    p = sub.add_parser("asip", parents=[common], help="CLT and variance-matching pipeline")
    p.add_argument("--N", type=int)
    sub.add_parser("report", parents=[common], help="aggregate markdown and CSV summary")
    return ap


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        cfg = parse_config(args.config)
    except ConfigurationError as exc:
        print("configuration errors:", file=sys.stderr)
        for e in exc.errors:
            print(f"  {e}", file=sys.stderr)
        return 2
    if args.seed is not None:
        cfg.seed = args.seed
    if args.workers is not None:
        cfg.workers = max(1, args.workers)
    args.out_dir = args.out_dir or cfg.out_dir
    os.makedirs(args.out_dir, exist_ok=True)
    digest = cfg.digest()
    started = _dt.datetime.now(_dt.timezone.utc)
    try:
        result, flags = HANDLERS[args.command](cfg, args)
    except Exception as exc:  # any module error is recorded with context
        write_failure(args.out_dir, args.command, exc, digest, cfg.seed)
        print(f"{args.command} failed: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    out = write_report(args.out_dir, args.command, result, digest, cfg.seed, flags, started)
    print(out)
    return 0


if __name__ == "__main__":
    sys.exit(main())
