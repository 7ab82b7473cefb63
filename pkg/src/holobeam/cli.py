"""Command-line interface: dataset generation, training, evaluation,
the optimization baseline, property verification, and benchmarking.

Subcommands that write a CSV also render a PNG figure next to it unless
--no-plot is given.  The HMB_THREADS environment variable caps how many
worker processes the baseline runner may use (default: machine cores).
"""

import argparse
import os
import sys
import time
import numpy as np
from concurrent.futures import ProcessPoolExecutor

from . import ao as ao_mod
from . import dataio, figures, training
from .gnn import full_forward, raw_forward
from .surface import (canonical_surface, build_phase_pattern, sample_paths,
                      assemble_channel, sum_rate_equiv, noise_variance)
from .equivariance import (PermTriple, check_pipeline_equivariance,
                           check_network_equivariance,
                           check_projection_equivariance)


def resolve_workers():
    """Worker cap from HMB_THREADS; falls back to the machine core count."""
    raw = os.environ.get("HMB_THREADS", "").strip()
    if raw:
        try:
            n = int(raw)
        except ValueError:
            raise ValueError(f"HMB_THREADS must be an integer, got {raw!r}")
        if n < 1:
            raise ValueError("HMB_THREADS must be at least 1")
        return n
    return os.cpu_count() or 1


def _figure_path(csv_path):
    return os.path.splitext(csv_path)[0] + ".png"


def _surface_for(ds):
    side = int(round(np.sqrt(ds.n_t)))
    if side * side != ds.n_t:
        raise ValueError("dataset element count is not a square grid; "
                         "cannot reconstruct the surface")
    return canonical_surface(side, side, ds.n_feeds)


def _parse_dims(text):
    try:
        dims = tuple(int(p) for p in text.split(","))
    except ValueError:
        raise ValueError(f"--dims must be comma-separated integers, got {text!r}")
    if len(dims) < 2 or any(d < 1 for d in dims):
        raise ValueError("--dims needs at least two positive widths")
    return dims


def cmd_gen_data(args):
    if args.nx != args.ny:
        raise ValueError("dataset format stores a square surface; "
                         "--nx must equal --ny")
    if args.samples < 0:
        raise ValueError("--samples cannot be negative")
    if args.users < 1:
        raise ValueError("need at least one user")
    if args.paths < 1:
        raise ValueError("need at least one path")
    if args.gain_vars is not None:
        gain_vars = [float(v) for v in args.gain_vars.split(",")]
        if len(gain_vars) != args.paths:
            raise ValueError("--gain-vars must list one variance per path")
    else:
        gain_vars = [1.0] + [0.01] * (args.paths - 1)
    cfg = canonical_surface(args.nx, args.ny, args.feeds)
    chans = np.empty((args.samples, cfg.n_t, args.users), dtype=complex)
    for i in range(args.samples):
        rng = np.random.default_rng([args.seed, i])
        paths = sample_paths(cfg, args.users, args.paths, gain_vars, rng)
        chans[i] = assemble_channel(cfg, paths)
    dataio.write_dataset(args.out, chans, cfg.n_feeds, args.snr_db)
    print(f"wrote {args.samples} samples ({cfg.n_t} elements, {args.users} users, "
          f"{cfg.n_feeds} feeds, {args.snr_db:g} dB) to {args.out}")
    return 0


def cmd_train(args):
    if not os.path.exists(args.data):
        raise ValueError(f"dataset not found: {args.data}")
    config = training.TrainConfig(dataset_path=args.data,
                                  layer_dims=_parse_dims(args.dims),
                                  epochs=args.epochs, batch_size=args.batch,
                                  learning_rate=args.lr, seed=args.seed)
    log_path = os.path.splitext(args.out)[0] + ".log"
    lines = []

    def log_fn(line):
        print(line)
        lines.append(line)

    params, history = training.train(config, log_fn=log_fn)
    dataio.write_checkpoint(args.out, params)
    with open(log_path, "w") as fh:
        fh.write("\n".join(lines) + ("\n" if lines else ""))
    print(f"wrote checkpoint to {args.out} ({len(history)} epochs, "
          f"log at {log_path})")
    return 0


def cmd_eval(args):
    params = dataio.read_checkpoint(args.ckpt)
    ds = dataio.read_dataset(args.data)
    cfg = _surface_for(ds)
    m_p = build_phase_pattern(cfg).matrix
    rows = []
    ses = []
    for i in range(ds.n_samples):
        beams = full_forward(ds.channels[i], m_p, params, ds.noise_var, ds.p_max)
        se = sum_rate_equiv(ds.channels[i], beams.a, beams.V_e, ds.noise_var)
        ses.append(se)
        rows.append([i, f"{se:.12g}"])
    if ses:
        mean_se = float(np.mean(ses))
        rows.append(["mean", f"{mean_se:.12g}"])
    else:
        mean_se = float("nan")
    dataio.write_csv(args.csv, ["sample_index", "se_bits"], rows)
    print(f"evaluated {ds.n_samples} samples, mean SE "
          f"{mean_se:.4f} bit/s/Hz -> {args.csv}")
    if ses and not args.no_plot:
        fig = figures.save_rate_figure(_figure_path(args.csv), ses, mean_se,
                                       "network beamformer")
        print(f"figure -> {fig}")
    return 0


def _ao_one(task):
    h, m_p, p_max, nv, opts = task
    res = ao_mod.ao_solve(h, m_p, p_max, nv, opts)
    return res.sum_rate_bits, res.iterations, res.converged


def cmd_ao(args):
    ds = dataio.read_dataset(args.data)
    cfg = _surface_for(ds)
    m_p = build_phase_pattern(cfg).matrix
    opts = ao_mod.AoOptions(max_outer_iters=args.max_iter, tol=args.tol)
    tasks = [(ds.channels[i], m_p, ds.p_max, ds.noise_var, opts)
             for i in range(ds.n_samples)]
    workers = min(resolve_workers(), max(len(tasks), 1))
    if workers > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_ao_one, tasks))
    else:
        results = [_ao_one(t) for t in tasks]
    rows = [[i, f"{se:.12g}", iters, int(conv)]
            for i, (se, iters, conv) in enumerate(results)]
    ses = [se for se, _, _ in results]
    if ses:
        mean_se = float(np.mean(ses))
        rows.append(["mean", f"{mean_se:.12g}", "", ""])
    else:
        mean_se = float("nan")
    dataio.write_csv(args.csv, ["sample_index", "se_bits", "outer_iters",
                                "converged"], rows)
    print(f"optimized {ds.n_samples} samples with {workers} workers, mean SE "
          f"{mean_se:.4f} bit/s/Hz -> {args.csv}")
    if ses and not args.no_plot:
        fig = figures.save_rate_figure(_figure_path(args.csv), ses, mean_se,
                                       "alternating-optimization beamformer")
        print(f"figure -> {fig}")
    return 0


def cmd_verify(args):
    params = dataio.read_checkpoint(args.ckpt)
    if args.trials == 0:
        print("warning: 0 trials requested; properties pass vacuously")
        return 0
    cfg = canonical_surface(args.nx, args.ny, args.feeds)
    m_p = build_phase_pattern(cfg).matrix
    nv = noise_variance(args.snr_db)
    p_max = 1.0

    def pipeline(h, m):
        beams = full_forward(h, m, params, nv, p_max)
        return beams.a, beams.V

    def network(h, m):
        return raw_forward(h, m, params)

    rng = np.random.default_rng(args.seed)
    rows = []
    worst = {"pipeline": 0.0, "network": 0.0, "projection": 0.0}
    for t in range(args.trials):
        paths = sample_paths(cfg, args.users, 2, [1.0, 0.01], rng)
        h = assemble_channel(cfg, paths)
        perms = PermTriple.random(cfg.n_t, args.users, cfg.n_feeds, rng)
        rep_pipe = check_pipeline_equivariance(pipeline, h, m_p, perms,
                                               tol=args.tol)
        a_net, ve_raw = network(h, m_p)
        rep_net = check_network_equivariance(network, h, m_p, perms,
                                             tol=args.tol_exact)
        rep_proj = check_projection_equivariance(m_p, ve_raw, a_net, p_max,
                                                 perms, tol=args.tol_exact)
        worst["pipeline"] = max(worst["pipeline"], rep_pipe.max_discrepancy)
        worst["network"] = max(worst["network"], rep_net.max_discrepancy)
        worst["projection"] = max(worst["projection"], rep_proj.max_discrepancy)
        rows.append([t, f"{rep_pipe.max_discrepancy:.3e}",
                     f"{rep_net.max_discrepancy:.3e}",
                     f"{rep_proj.max_discrepancy:.3e}"])
    checks = [("pipeline equivariance", worst["pipeline"], args.tol),
              ("network equivariance", worst["network"], args.tol_exact),
              ("projection equivariance", worst["projection"], args.tol_exact)]
    failures = 0
    for name, disc, tol in checks:
        ok = disc <= tol
        failures += 0 if ok else 1
        print(f"{name}: max {disc:.3e} tol {tol:g} "
              f"{'PASS' if ok else 'FAIL'}")
    if args.csv:
        dataio.write_csv(args.csv, ["trial", "pipeline_disc", "network_disc",
                                    "projection_disc"], rows)
        print(f"per-trial discrepancies -> {args.csv}")
        if not args.no_plot:
            disc = [max(float(r[1]), float(r[2]), float(r[3])) for r in rows]
            fig = figures.save_verify_figure(_figure_path(args.csv), disc,
                                             args.tol, "permutation checks")
            print(f"figure -> {fig}")
    return 0 if failures == 0 else 1


def cmd_bench(args):
    params = dataio.read_checkpoint(args.ckpt)
    ds = dataio.read_dataset(args.data)
    if ds.n_samples == 0:
        raise ValueError("benchmark dataset has no samples")
    cfg = _surface_for(ds)
    m_p = build_phase_pattern(cfg).matrix
    n = min(ds.n_samples, args.max_samples)
    chans = ds.channels[:n]
    opts = ao_mod.AoOptions()

    def run_network():
        ses = []
        for i in range(n):
            beams = full_forward(chans[i], m_p, params, ds.noise_var, ds.p_max)
            ses.append(sum_rate_equiv(chans[i], beams.a, beams.V_e, ds.noise_var))
        return float(np.mean(ses))

    def run_ao():
        ses = []
        for i in range(n):
            res = ao_mod.ao_solve(chans[i], m_p, ds.p_max, ds.noise_var, opts)
            ses.append(res.sum_rate_bits)
        return float(np.mean(ses))

    rows = []
    stats = {}
    for label, fn in (("network", run_network), ("ao", run_ao)):
        fn()  # warm-up pass, not timed
        per_rep = []
        se = float("nan")
        for _ in range(args.reps):
            t0 = time.perf_counter()
            se = fn()
            per_rep.append((time.perf_counter() - t0) / n * 1e3)
        mean_ms = float(np.mean(per_rep))
        std_ms = float(np.std(per_rep))
        stats[label] = mean_ms
        rows.append([label, f"{mean_ms:.6g}", f"{std_ms:.6g}", f"{se:.12g}"])
    dataio.write_csv(args.csv, ["method", "mean_ms", "std_ms", "mean_se_bits"],
                     rows)
    ratio = stats["ao"] / stats["network"]
    print(f"network {stats['network']:.3f} ms/sample, ao {stats['ao']:.3f} "
          f"ms/sample, speedup {ratio:.1f}x over {args.reps} reps -> {args.csv}")
    if not args.no_plot:
        fig = figures.save_latency_figure(
            _figure_path(args.csv), [r[0] for r in rows],
            [float(r[1]) for r in rows], [float(r[2]) for r in rows])
        print(f"figure -> {fig}")
    return 0


def build_parser():
    parser = argparse.ArgumentParser(
        prog="holobeam",
        description="beamforming for holographic surfaces with few RF chains")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="simulate a channel corpus")
    p.add_argument("--nx", type=int, required=True)
    p.add_argument("--ny", type=int, required=True)
    p.add_argument("--feeds", type=int, required=True)
    p.add_argument("--users", type=int, required=True)
    p.add_argument("--paths", type=int, default=2)
    p.add_argument("--gain-vars", default=None,
                   help="comma-separated per-path gain variances")
    p.add_argument("--samples", type=int, required=True)
    p.add_argument("--snr-db", type=float, default=10.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_gen_data)

    p = sub.add_parser("train", help="train the graph network")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--epochs", type=int, default=50)
    p.add_argument("--batch", type=int, default=128)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--dims", default="64,128,512,512,128,64")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a dataset")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--csv", required=True)
    p.add_argument("--no-plot", action="store_true")
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("ao", help="run the alternating-optimization baseline")
    p.add_argument("--data", required=True)
    p.add_argument("--csv", required=True)
    p.add_argument("--max-iter", type=int, default=100)
    p.add_argument("--tol", type=float, default=1e-6)
    p.add_argument("--no-plot", action="store_true")
    p.set_defaults(fn=cmd_ao)

    p = sub.add_parser("verify", help="check the permutation properties")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--trials", type=int, default=100)
    p.add_argument("--tol", type=float, default=1e-6,
                   help="tolerance for the end-to-end pipeline check")
    p.add_argument("--tol-exact", type=float, default=1e-9,
                   help="tolerance for the network and projection checks")
    p.add_argument("--nx", type=int, default=4)
    p.add_argument("--ny", type=int, default=4)
    p.add_argument("--feeds", type=int, default=3)
    p.add_argument("--users", type=int, default=3)
    p.add_argument("--snr-db", type=float, default=10.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--csv", default=None)
    p.add_argument("--no-plot", action="store_true")
    p.set_defaults(fn=cmd_verify)

    p = sub.add_parser("bench", help="time network inference against the baseline")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--csv", required=True)
    p.add_argument("--reps", type=int, default=20)
    p.add_argument("--max-samples", type=int, default=16)
    p.add_argument("--no-plot", action="store_true")
    p.set_defaults(fn=cmd_bench)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except (dataio.DataFormatError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
