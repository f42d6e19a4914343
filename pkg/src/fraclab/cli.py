"""Command-line front end.

Every subcommand writes its artifacts atomically (temp file + rename) and
embeds a run manifest: the command, the parameter set exactly as parsed,
sha256 hashes of input files, the seed, and the tool version.  Reruns with
an identical manifest produce byte-identical CSV/JSON; wall time is kept
out of the embedded manifest for that reason (it goes to the side
`*.manifest.json` file only).  `--jobs` is accepted everywhere and caps
worker threads; all reductions are ordered, so outputs never depend on it.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
import tempfile
import time

import numpy as np

from . import __version__
from .boxes import DyadicCube, RectSet
from .chains import ChainDecomposition, build_chain_decomposition, classify_wjk, estimate_sjohn
from .conditions import (ExponentSet, check_regime, eval_classical_condition,
                         eval_pp_sup, eval_sharpe_sum, eval_sigma_thm51)
from .counterexample import build_s_version, sharpness_experiment
from .functional import cube_lemma_check, estimate_constant, log_distance_integral
from .geometry import (VoxelDomain, distance_transform, koch_polygon, make_domain,
                       minkowski_dimension_estimate, porosity_estimate,
                       resample_polyline, sample_square_boundary)
from .whitney import WhitneyDecomposition, whitney_decompose
from . import reports


class CliError(Exception):
    pass


def _sha256(path):
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for block in iter(lambda: f.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def _atomic_write_text(path, text):
    d = os.path.dirname(os.path.abspath(path)) or "."
    os.makedirs(d, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=d, suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as f:
            f.write(text)
        os.replace(tmp, path)
    finally:
        if os.path.exists(tmp):
            os.unlink(tmp)


def _atomic_savefig(render, path):
    d = os.path.dirname(os.path.abspath(path)) or "."
    os.makedirs(d, exist_ok=True)
    tmp = os.path.join(d, f".tmp-{os.path.basename(path)}")
    render(tmp)
    os.replace(tmp, path)


def _manifest(args, inputs=(), seed=None):
    skip = {"out", "func", "jobs"}
    params = {k: v for k, v in sorted(vars(args).items())
              if k not in skip and not callable(v)}
    params.pop("command", None)
    return {"command": args.command,
            "params": {k: v for k, v in params.items() if v is not None},
            "inputs": {p: _sha256(p) for p in inputs},
            "seed": seed,
            "version": __version__}


def _emit_json(path, payload, manifest):
    payload = dict(payload)
    payload["manifest"] = manifest
    _atomic_write_text(path, json.dumps(payload, sort_keys=True) + "\n")


def _emit_csv(path, header, rows):
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(str(v) for v in row))
    _atomic_write_text(path, "\n".join(lines) + "\n")


def _emit_manifest_file(path, manifest, t0):
    side = dict(manifest)
    side["wall_time_s"] = round(time.monotonic() - t0, 3)
    _atomic_write_text(path, json.dumps(side, sort_keys=True) + "\n")


def _stem(out):
    base, ext = os.path.splitext(out)
    return base if ext else out


def _load_domain(args):
    inputs = []
    if getattr(args, "domain", None):
        d = VoxelDomain.load(args.domain)
        inputs.append(args.domain)
    elif getattr(args, "preset", None):
        d = make_domain(args.preset, J=args.j)
    else:
        raise CliError("need --domain FILE or --preset NAME")
    return d, inputs


def _exponents(args, n=2):
    kw = {"n": n}
    for name in ("p", "q", "delta", "tau", "s", "lam"):
        v = getattr(args, name, None)
        if v is not None:
            kw[name] = v
    kw.setdefault("q", kw.get("p", 2.0))
    return ExponentSet(**kw)


# ---------------------------------------------------------------------------
# subcommands


def cmd_domain(args, t0):
    d = make_domain(args.preset, J=args.j)
    if args.dist_field:
        d = distance_transform(d)
    stem = _stem(args.out)
    man = _manifest(args)
    _emit_json(stem + ".json", d.to_json_dict(), man)
    _atomic_savefig(lambda p: reports.save_domain_figure(d, p), stem + ".png")
    _emit_manifest_file(stem + ".manifest.json", man, t0)
    print(f"domain {args.preset} J={args.j}: {d.occupied_count()} voxels, "
          f"volume {d.volume():.6g}")


def cmd_whitney(args, t0):
    d, inputs = _load_domain(args)
    W = whitney_decompose(d, args.jmax)
    payload = W.to_json_dict(include_adjacency=len(W) <= args.adjacency_limit)
    payload["counts"] = {str(j): c for j, c in sorted(W.counts.items())}
    stem = _stem(args.out)
    man = _manifest(args, inputs)
    _emit_json(stem + ".json", payload, man)
    _atomic_savefig(lambda p: reports.save_whitney_figure(W, p), stem + ".png")
    _emit_manifest_file(stem + ".manifest.json", man, t0)
    print(f"whitney J_max={args.jmax}: {len(W)} cubes, "
          f"collar {W.collar_measure:.6g}, counts "
          + " ".join(f"{j}:{c}" for j, c in sorted(W.counts.items())))


def _whitney_from_args(args, inputs):
    d, dom_inputs = _load_domain(args)
    inputs.extend(dom_inputs)
    if getattr(args, "whitney", None):
        W = WhitneyDecomposition.load(args.whitney, domain=d)
        inputs.append(args.whitney)
    else:
        W = whitney_decompose(d, args.jmax)
    return d, W


def cmd_chains(args, t0):
    inputs = []
    d, W = _whitney_from_args(args, inputs)
    cd = build_chain_decomposition(W, strategy=args.strategy)
    stem = _stem(args.out)
    man = _manifest(args, inputs)
    _emit_json(stem + ".json", cd.to_json_dict(), man)
    _atomic_savefig(lambda p: reports.save_chains_figure(cd, p), stem + ".png")
    _emit_manifest_file(stem + ".manifest.json", man, t0)
    print(f"chains ({args.strategy}): {len(cd)} cubes, "
          f"max length {int(cd.depth.max())}")


_CONDS = {"sharpe": eval_sharpe_sum, "pp": eval_pp_sup,
          "sigma51": eval_sigma_thm51}


def cmd_conditions(args, t0):
    inputs = []
    d, W = _whitney_from_args(args, inputs)
    e = _exponents(args, n=d.n)
    if args.cond == "regime":
        res = check_regime(e)
        stem = _stem(args.out)
        man = _manifest(args, inputs)
        _emit_json(stem + ".json", res, man)
        _emit_manifest_file(stem + ".manifest.json", man, t0)
        print(f"regime: {res['regime']}")
        return
    if getattr(args, "chains", None):
        cd = ChainDecomposition.load(args.chains, W)
        inputs.append(args.chains)
    else:
        cd = build_chain_decomposition(W, strategy=args.strategy)
    if args.cond == "classical":
        rep = eval_classical_condition(cd, e.p)
    else:
        rep = _CONDS[args.cond](cd, e)
    stem = _stem(args.out)
    man = _manifest(args, inputs)
    _emit_json(stem + ".json", rep.to_json_dict(), man)
    _emit_csv(stem + ".csv", ["j", "increment", "running"],
              [(j, f"{inc:.12e}", f"{run:.12e}")
               for j, inc, run in rep.per_generation])
    _atomic_savefig(lambda p: reports.save_condition_figure(rep, p), stem + ".png")
    _emit_manifest_file(stem + ".manifest.json", man, t0)
    print(f"{rep.condition}: value {rep.value:.6e} verdict {rep.verdict}")


def cmd_constant(args, t0):
    d, inputs = _load_domain(args)
    e = _exponents(args, n=d.n)
    rep = estimate_constant(d, e, method=args.method, restarts=args.restarts,
                            seed=args.seed)
    stem = _stem(args.out)
    man = _manifest(args, inputs, seed=args.seed)
    _emit_json(stem + ".json",
               {"value": f"{rep.value:.12e}", "method": rep.method,
                "iterations": rep.iterations, "converged": rep.converged,
                "details": {k: (v if isinstance(v, (int, str, bool)) else float(v))
                            for k, v in rep.details.items()}},
               man)
    _emit_manifest_file(stem + ".manifest.json", man, t0)
    print(f"constant ({args.method}): {rep.value:.8e} "
          f"(converged={rep.converged})")


def cmd_cube_lemma(args, t0):
    e = _exponents(args)
    Q = DyadicCube(args.gen, tuple(args.corner), 2)
    res = cube_lemma_check(Q, e, args.rho, trials=args.trials, seed=args.seed,
                           J_sub=args.j_sub)
    stem = _stem(args.out)
    man = _manifest(args, seed=args.seed)
    _emit_json(stem + ".json",
               {"max_ratio": f"{res.value:.12e}",
                "details": {k: (v if isinstance(v, (int, str, bool)) else float(v))
                            for k, v in res.details.items()}}, man)
    _emit_manifest_file(stem + ".manifest.json", man, t0)
    print(f"cube-lemma rho={args.rho}: max ratio {res.value:.6e} "
          f"k={res.details['k']}")


def _point_set(name, pitch=2.0**-9):
    if name == "square-boundary":
        return sample_square_boundary(pitch=pitch)
    if name == "koch":
        return resample_polyline(koch_polygon(depth=7), pitch)
    raise CliError(f"unknown point set {name!r}; use square-boundary or koch")


def cmd_log_integral(args, t0):
    S = _point_set(args.set)
    x = np.array(args.x)
    rows = []
    for r in args.r:
        res = log_distance_integral(S, x, r, args.p,
                                    cells_per_radius=args.cells)
        rows.append((r, f"{res['value']:.12e}", f"{res['ratio']:.12e}"))
    stem = _stem(args.out)
    man = _manifest(args)
    _emit_csv(stem + ".csv", ["r", "value", "ratio"], rows)
    _atomic_savefig(lambda p: reports.save_curve_figure(
        [float(r[0]) for r in rows], [float(r[2]) for r in rows], p,
        xlabel="r", ylabel="value / r^n(1+log^p(1/r))",
        title="log-distance integral"), stem + ".png")
    _emit_manifest_file(stem + ".manifest.json", man, t0)
    print("log-integral ratios: "
          + " ".join(f"{float(r[2]):.4g}" for r in rows))


def cmd_dimension(args, t0):
    E = _point_set(args.set)
    curve = minkowski_dimension_estimate(E, args.rmin, args.rmax)
    stem = _stem(args.out)
    man = _manifest(args)
    _emit_json(stem + ".json",
               {"fitted_dim": f"{curve.fitted_dim:.12e}",
                "ci": f"{curve.ci:.12e}",
                "samples": [[f"{r:.12e}", f"{v:.12e}"] for r, v in curve.samples]},
               man)
    _atomic_savefig(lambda p: reports.save_curve_figure(
        [r for r, _ in curve.samples], [v for _, v in curve.samples], p,
        xlabel="r", ylabel="precontent", title=f"dim {curve.fitted_dim:.4f}"),
        stem + ".png")
    _emit_manifest_file(stem + ".manifest.json", man, t0)
    print(f"dimension ({args.set}): {curve.fitted_dim:.4f} +- {curve.ci:.4f}")


def cmd_porosity(args, t0):
    S = _point_set(args.set)
    rep = porosity_estimate(S, args.scales, trials=args.trials)
    stem = _stem(args.out)
    man = _manifest(args)
    _emit_json(stem + ".json",
               {"kappa_hat": f"{rep.kappa_hat:.12e}", "verdict": rep.verdict,
                "scales": rep.scales,
                "witness_failures": rep.witness_failures}, man)
    _emit_manifest_file(stem + ".manifest.json", man, t0)
    print(f"porosity ({args.set}): kappa_hat {rep.kappa_hat:.4f} ({rep.verdict})")


def cmd_s_version(args, t0):
    inputs = []
    d, W = _whitney_from_args(args, inputs)
    G = build_s_version(W, args.s)
    stem = _stem(args.out)
    man = _manifest(args, inputs)
    _emit_json(stem + ".json",
               {"hull_lo": [float(v) for v in G.hull_lo],
                "hull_hi": [float(v) for v in G.hull_hi],
                "walls": [[list(map(float, a)), list(map(float, b))]
                          for a, b in zip(G.obstacles.lo, G.obstacles.hi)],
                "meta": {k: (v if isinstance(v, (str, int, bool, list)) else float(v))
                         for k, v in G.meta.items()}},
               man)
    _atomic_savefig(lambda p: reports.save_domain_figure(G, p), stem + ".png")
    _emit_manifest_file(stem + ".manifest.json", man, t0)
    print(f"s-version s={args.s}: {len(G.apartments)} apartments, "
          f"scale {G.meta['scale']:g}")


def cmd_sharpness(args, t0):
    e = _exponents(args)
    res = sharpness_experiment(args.base, args.s, e, args.m_max, args.seed,
                               k0=args.k0, samples=args.samples)
    out = args.out
    os.makedirs(out, exist_ok=True)
    man = _manifest(args, seed=args.seed)
    _emit_csv(os.path.join(out, "experiment.csv"),
              ["m", "Am", "Bm", "Bm_stderr", "ratio", "paper_bound_Bm"],
              [(r["m"],) + tuple(f"{r[k]:.12e}" for k in
                                 ("Am", "Bm", "Bm_stderr", "ratio",
                                  "paper_bound_Bm"))
               for r in res["rows"]])
    payload = dict(res["manifest"])
    _emit_json(os.path.join(out, "manifest.json"), payload, man)
    _atomic_savefig(lambda p: reports.save_sharpness_figure(res, p),
                    os.path.join(out, "ratio.png"))
    _emit_manifest_file(os.path.join(out, "run.manifest.json"), man, t0)
    m = res["manifest"]
    print(f"{'PASS' if m['pass'] else 'FAIL'}: fitted slope {m['slope']:.4f} "
          f"(target {m['target']:g}, threshold {m['target'] - 0.1:g})")


# ---------------------------------------------------------------------------
# argument parsing


def _add_domain_source(sp, jmax=True):
    sp.add_argument("--domain", help="domain JSON file")
    sp.add_argument("--preset", help="domain preset name "
                    "(unit-cube | l-shape | koch-snowflake)")
    sp.add_argument("--j", type=int, default=6,
                    help="voxel resolution 2^-J for --preset (default 6)")
    if jmax:
        sp.add_argument("--jmax", type=int, default=8,
                        help="Whitney truncation generation (default 8)")


def _add_exponents(sp, *names):
    helps = {"p": "integrability exponent p", "q": "left-hand exponent q",
             "delta": "smoothness delta in (0,1)", "tau": "localization tau",
             "s": "chain growth exponent s", "lam": "decay exponent lambda"}
    flags = {"lam": "--lambda"}
    defaults = {"p": 2.0, "q": None, "delta": 0.5, "tau": None, "s": None,
                "lam": None}
    for name in names:
        sp.add_argument(flags.get(name, f"--{name}"), dest=name, type=float,
                        default=defaults[name],
                        help=f"{helps[name]} (default {defaults[name]})")


def build_parser():
    ap = argparse.ArgumentParser(
        prog="fraclab",
        description="Whitney/chain analysis of fractional Poincare-type "
                    "inequalities on rough planar domains.")
    ap.add_argument("--version", action="version", version=__version__)
    ap.add_argument("--jobs", type=int, default=1,
                    help="worker cap; outputs are independent of it (default 1)")
    sub = ap.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("domain", help="build a voxel domain preset")
    sp.add_argument("--preset", required=True)
    sp.add_argument("--j", type=int, default=6)
    sp.add_argument("--dist-field", action="store_true",
                    help="include the per-voxel distance field")
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_domain)

    sp = sub.add_parser("whitney", help="dyadic Whitney decomposition")
    _add_domain_source(sp)
    sp.add_argument("--adjacency-limit", type=int, default=200_000,
                    help="skip the adjacency list above this cube count")
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_whitney)

    sp = sub.add_parser("chains", help="chain decomposition to the center cube")
    _add_domain_source(sp)
    sp.add_argument("--whitney", help="precomputed Whitney JSON")
    sp.add_argument("--strategy", choices=("hop-count", "curve-following"), default="hop-count")
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_chains)

    sp = sub.add_parser("conditions", help="summability/boundedness conditions")
    _add_domain_source(sp)
    sp.add_argument("--whitney", help="precomputed Whitney JSON")
    sp.add_argument("--chains", help="precomputed chains JSON")
    sp.add_argument("--strategy", choices=("hop-count", "curve-following"), default="hop-count")
    sp.add_argument("--cond", required=True,
                    choices=("sharpe", "pp", "classical", "sigma51", "regime"))
    _add_exponents(sp, "p", "q", "delta", "tau", "s", "lam")
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_conditions)

    sp = sub.add_parser("constant", help="best-constant estimate at p=q=2")
    _add_domain_source(sp, jmax=False)
    sp.add_argument("--method", choices=("eig", "ascent"), default="eig")
    _add_exponents(sp, "p", "q", "delta", "tau")
    sp.add_argument("--restarts", type=int, default=8)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_constant)

    sp = sub.add_parser("cube-lemma", help="single-cube seminorm lower bound")
    sp.add_argument("--gen", type=int, default=0)
    sp.add_argument("--corner", type=int, nargs=2, default=[0, 0])
    sp.add_argument("--rho", type=float, required=True)
    _add_exponents(sp, "p", "q", "delta")
    sp.add_argument("--trials", type=int, default=16)
    sp.add_argument("--seed", type=int, required=True)
    sp.add_argument("--j-sub", type=int, default=4)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_cube_lemma)

    sp = sub.add_parser("log-integral",
                        help="integral of log^p(1/dist) over a ball")
    sp.add_argument("--set", default="square-boundary")
    sp.add_argument("--x", type=float, nargs=2, default=[0.0, 0.0])
    sp.add_argument("--r", type=float, nargs="+", required=True)
    sp.add_argument("--p", type=float, default=1.0)
    sp.add_argument("--cells", type=int, default=64)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_log_integral)

    sp = sub.add_parser("dimension", help="Minkowski dimension estimate")
    sp.add_argument("--set", default="koch")
    sp.add_argument("--rmin", type=float, default=2.0**-9)
    sp.add_argument("--rmax", type=float, default=2.0**-3)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_dimension)

    sp = sub.add_parser("porosity", help="porosity constant estimate")
    sp.add_argument("--set", default="koch")
    sp.add_argument("--scales", type=float, nargs="+",
                    default=[1.0, 0.5, 0.25, 0.125])
    sp.add_argument("--trials", type=int, default=32)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_porosity)

    sp = sub.add_parser("s-version", help="rooms-and-passages modification")
    _add_domain_source(sp)
    sp.add_argument("--whitney", help="precomputed Whitney JSON")
    sp.add_argument("--s", dest="s", type=float, required=True)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_s_version)

    sp = sub.add_parser("sharpness", help="A_m/B_m blow-up experiment")
    sp.add_argument("--base", default="square")
    sp.add_argument("--s", dest="s", type=float, default=2.0)
    _add_exponents(sp, "p", "q", "delta", "tau", "lam")
    sp.add_argument("--k0", type=int, default=1)
    sp.add_argument("--m-max", type=int, default=6)
    sp.add_argument("--seed", type=int, required=True)
    sp.add_argument("--samples", type=int, default=8192)
    sp.add_argument("--out", required=True, help="output directory")
    sp.set_defaults(func=cmd_sharpness)

    return ap


def main(argv=None):
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    t0 = time.monotonic()
    try:
        args.func(args, t0)
    except (CliError, ValueError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
