"""Command-line entry point: one experiment per invocation, results on disk.

Every run writes ``manifest.json`` (resolved config, code version, seeds,
timings), ``results.csv`` and, where it makes sense, ``plotdata.csv``. The
CSV files depend only on the config, so a rerun from the manifest reproduces
them byte for byte.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import os
import sys
import time
from pathlib import Path

import numpy as np
from pydantic import ValidationError

from . import __version__
from .config import EXPERIMENTS, Base, GiantGraph, parse_config
from .dynamics import Caps, CoupledEngine, RateProfile, map_trials
from .errors import BrwlabError, GraphTooLargeError
from .kernel import FiniteGraph, Kernel, box_graph, lattice_path
from .percolation import build_seed_chain, giant_cluster_graph, sample_percolation, verify_chain
from .rng import derive_seed
from .spectral import expected_occupancy_vector, spectral_rows
from .survival import (
    PairLaw,
    bisect_critical,
    block_event_probability,
    fingerprint,
    k_sweep,
    oriented_block_percolation,
    survival_probability,
    wilson_interval,
)

RESULT_COLUMNS = ["module", "operation", "params_hash", "label", "point", "lo", "hi", "trials", "status"]
MAX_ORACLE_VERTICES = 200


class Outcome:
    def __init__(self):
        self.rows: list[dict] = []
        self.plot_columns: list[str] = []
        self.plot_rows: list[dict] = []
        self.extra: dict = {}
        self.inconclusive = False

    def add(self, module, operation, label, point, lo, hi, trials, status="ok", params=None):
        self.rows.append({
            "module": module, "operation": operation, "params_hash": fingerprint(params or {}),
            "label": label, "point": point, "lo": lo, "hi": hi, "trials": trials, "status": status,
        })


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v)).lower()
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, np.integer):
        return int(v)
    return v


def write_csv(path: Path, columns: list[str], rows: list[dict]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=columns, lineterminator="\r\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: _fmt(r.get(k, "")) for k in columns})


def _graph(cfg, kernel: Kernel) -> tuple[FiniteGraph, dict]:
    g = cfg.graph
    if isinstance(g, GiantGraph):
        pseed = g.percolation_seed if g.percolation_seed is not None else derive_seed(cfg.seed, "percolation")
        sample = sample_percolation(kernel.d, g.L, g.p, pseed)
        graph = giant_cluster_graph(sample, kernel)
        return graph, {"percolation_seed": pseed, "giant_size": sample.giant_size,
                       "notes": list(graph.notes)}
    return box_graph(kernel, g.center, g.m), {}


def run_spectral_sweep(cfg, threads) -> Outcome:
    out = Outcome()
    kernel = cfg.kernel.build()
    rows = spectral_rows(kernel, cfg.m_list, cfg.n_max)
    lower = 1.0 / kernel.zeta_full
    for r in rows:
        out.add("spectral", "lambda_s_box", f"m={r['m']}", r["lambda_s_box"], lower,
                r["lambda_s_box"], 0, params={"kernel": kernel.to_dict(), "m": r["m"]})
    out.plot_columns = ["m", "lambda_s_box", "gelfand_lower", "lambda_w_lower", "n_max"]
    out.plot_rows = rows
    return out


def run_survive(cfg, threads) -> Outcome:
    out = Outcome()
    kernel = cfg.kernel.build()
    graph, info = _graph(cfg, kernel)
    seed = derive_seed(cfg.seed, "survive")
    est = survival_probability(graph, cfg.profile.build(), None, cfg.T, cfg.W, cfg.trials, seed,
                               caps=Caps(cfg.max_population), threads=threads)
    out.add("survival_lab", "survival_probability", cfg.profile.kind, est.point, est.lo, est.hi,
            est.trials, params={"fp": est.fingerprint})
    out.extra = {"seeds": {"trials": seed, **info}, "n_vertices": graph.n_vertices}
    return out


def run_bisect(cfg, threads) -> Outcome:
    out = Outcome()
    kernel = cfg.kernel.build()
    graph, info = _graph(cfg, kernel)
    seed = derive_seed(cfg.seed, "bisect")
    ce = bisect_critical(graph, cfg.family.build, cfg.lam_range, cfg.tol, cfg.theta, cfg.trials,
                         seed, cfg.T, cfg.W, None, Caps(cfg.max_population), cfg.max_doublings, threads)
    status = "inconclusive" if ce.inconclusive else "ok"
    out.add("survival_lab", "bisect_critical", cfg.family.kind, ce.midpoint, ce.lam_lo, ce.lam_hi,
            ce.trials, status, params=cfg.model_dump(mode="json"))
    out.plot_columns = ["lam", "point", "lo", "hi", "trials"]
    out.plot_rows = [{"lam": lam, "point": e.point, "lo": e.lo, "hi": e.hi, "trials": e.trials}
                     for lam, e in ce.probes]
    out.inconclusive = ce.inconclusive
    out.extra = {"seeds": {"trials": seed, **info}}
    return out


def run_k_sweep(cfg, threads) -> Outcome:
    out = Outcome()
    kernel = cfg.kernel.build()
    graph, info = _graph(cfg, kernel)
    seed = derive_seed(cfg.seed, "k-sweep")
    res = k_sweep(graph, cfg.lam, cfg.k_list, cfg.T, cfg.trials, seed, cfg.W,
                  caps=Caps(cfg.max_population), threads=threads)
    for r in res.rows():
        out.add("survival_lab", "k_sweep", f"k={r['k']}", r["point"], r["lo"], r["hi"], r["trials"],
                params={"fp": r["fingerprint"], "k": r["k"]})
    out.plot_columns = ["k", "point", "lo", "hi"]
    out.plot_rows = res.rows()
    out.extra = {"seeds": {"trials": seed, **info}, "monotone_violations": res.monotone_violations}
    return out


def run_perc_geom(cfg, threads) -> Outcome:
    out = Outcome()
    out.plot_columns = ["p", "sample", "giant_density", "chain_length", "verified"]
    seeds = {}
    for p in cfg.p_list:
        base = derive_seed(cfg.seed, f"perc-geom:{p!r}")
        seeds[repr(p)] = base
        good, dens = 0, []
        for s in range(cfg.samples):
            sample = sample_percolation(cfg.d, cfg.L, p, derive_seed(base, str(s)))
            try:
                chain = build_seed_chain(sample, cfg.m, cfg.M)
                n, ok = len(chain), bool(verify_chain(sample, chain))
            except BrwlabError:
                n, ok = 0, True
            good += ok and n >= cfg.min_chain
            dens.append(sample.giant_density)
            out.plot_rows.append({"p": p, "sample": s, "giant_density": sample.giant_density,
                                  "chain_length": n, "verified": ok})
        lo, hi = wilson_interval(good, cfg.samples)
        out.add("percolation", "build_seed_chain", f"p={p!r}", good / cfg.samples, lo, hi,
                cfg.samples, params={"p": p, "L": cfg.L, "d": cfg.d, "m": cfg.m, "seed": base})
    out.extra = {"seeds": seeds}
    return out


def run_block_event(cfg, threads) -> Outcome:
    out = Outcome()
    kernel = cfg.kernel.build()
    x = tuple(cfg.x) if cfg.x is not None else (0,) * kernel.d
    paths = [lattice_path(x, steps) for steps in (cfg.gamma, cfg.gamma_prime)]
    seed = derive_seed(cfg.seed, "block-event")
    out.plot_columns = ["ell", "point", "lo", "hi"]
    for ell in cfg.ell_list:
        est = block_event_probability(kernel, x, cfg.m, paths[0], paths[1], ell, cfg.lam, cfg.T,
                                      cfg.trials, seed, Caps(cfg.max_population), threads)
        out.add("survival_lab", "block_event_probability", f"ell={ell}", est.point, est.lo, est.hi,
                est.trials, params={"fp": est.fingerprint})
        out.plot_rows.append({"ell": ell, "point": est.point, "lo": est.lo, "hi": est.hi})
    out.extra = {"seeds": {"trials": seed}}
    return out


def run_oriented_perc(cfg, threads) -> Outcome:
    out = Outcome()
    seed = derive_seed(cfg.seed, "oriented-perc")
    out.plot_columns = ["eps", "point", "lo", "hi", "mismatches"]
    total_mismatch = 0
    for eps in cfg.eps_list:
        law = PairLaw.joint(eps) if cfg.law == "joint" else PairLaw.independent(eps)
        res = oriented_block_percolation(law, cfg.rows, cfg.cols, cfg.trials, seed)
        e = res.estimate
        status = "ok" if res.mismatches == 0 else "reach-mismatch"
        total_mismatch += res.mismatches
        out.add("survival_lab", "oriented_block_percolation", f"eps={eps!r}", e.point, e.lo, e.hi,
                e.trials, status, params={"fp": e.fingerprint})
        out.plot_rows.append({"eps": eps, "point": e.point, "lo": e.lo, "hi": e.hi,
                              "mismatches": res.mismatches})
    out.extra = {"seeds": {"trials": seed}, "mismatches": total_mismatch}
    return out


def run_oracle_check(cfg, threads) -> Outcome:
    out = Outcome()
    kernel = cfg.kernel.build()
    graph, info = _graph(cfg, kernel)
    if graph.n_vertices > MAX_ORACLE_VERTICES:
        raise GraphTooLargeError(
            f"oracle-check needs at most {MAX_ORACLE_VERTICES} vertices, graph has {graph.n_vertices}"
        )
    seed = derive_seed(cfg.seed, "oracle-check")
    low_power = cfg.trials < cfg.low_power_trials
    out.plot_columns = ["lam", "t", "vertex", "point", "mc_mean", "series", "se", "z", "status"]
    n_fail = 0
    for lam in cfg.lam_list:
        eng = CoupledEngine(graph, [RateProfile.brw(lam)])
        init = eng.host_init([None])
        for t in cfg.t_list:
            exact = expected_occupancy_vector(graph, lam, graph.origin, t, cfg.tol)

            def one(i, t=t):
                raw, _ = eng.run(init, t, seed, i, observe=())
                return raw[0][0].astype(float)

            samples = np.array(map_trials(one, cfg.trials, threads))
            mean = samples.mean(axis=0)
            se = samples.std(axis=0, ddof=1) / math.sqrt(cfg.trials) if cfg.trials > 1 else np.zeros_like(mean)
            cell_ok = True
            for v in range(graph.n_vertices):
                diff = mean[v] - exact[v]
                if se[v] > 0:
                    z = diff / se[v]
                    ok = abs(z) <= 3
                else:
                    z = 0.0 if abs(diff) <= 1e-12 else math.inf
                    ok = abs(diff) <= 1e-12 or exact[v] < 1.0 / cfg.trials
                cell_ok &= ok
                out.plot_rows.append({
                    "lam": lam, "t": t, "vertex": v, "point": " ".join(map(str, graph.point(v))),
                    "mc_mean": mean[v], "series": exact[v], "se": se[v], "z": z,
                    "status": "pass" if ok else "fail",
                })
            status = "low-power" if low_power else ("pass" if cell_ok else "fail")
            n_fail += status == "fail"
            worst = max(abs(r["z"]) for r in out.plot_rows[-graph.n_vertices:])
            out.add("cli", "oracle_check", f"lam={lam!r},t={t!r}", worst, 0.0, 3.0, cfg.trials,
                    status, params={"lam": lam, "t": t, "graph": graph.fingerprint()})
    out.extra = {"seeds": {"trials": seed, **info}, "failed_cells": n_fail, "low_power": low_power}
    return out


RUNNERS = {
    "spectral-sweep": run_spectral_sweep,
    "survive": run_survive,
    "bisect": run_bisect,
    "k-sweep": run_k_sweep,
    "perc-geom": run_perc_geom,
    "block-event": run_block_event,
    "oriented-perc": run_oriented_perc,
    "oracle-check": run_oracle_check,
}


def output_dir(cfg: Base, override: str | None) -> Path:
    if override:
        return Path(override)
    if cfg.out:
        return Path(cfg.out)
    root = Path(os.environ.get("BRWLAB_OUT", "brwlab-out"))
    return root / f"{cfg.experiment}-{fingerprint(cfg.model_dump(mode='json'))}"


def run_experiment(cfg: Base, out_dir: Path, threads: int = 1) -> dict:
    """Run ``cfg`` and write its files into ``out_dir``; returns the manifest."""
    out_dir.mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()
    outcome = RUNNERS[cfg.experiment](cfg, threads)
    wall = time.perf_counter() - t0
    files = ["results.csv"]
    write_csv(out_dir / "results.csv", RESULT_COLUMNS, outcome.rows)
    if outcome.plot_rows:
        write_csv(out_dir / "plotdata.csv", outcome.plot_columns, outcome.plot_rows)
        files.append("plotdata.csv")
    manifest = {
        "experiment": cfg.experiment,
        "code_version": __version__,
        "config": cfg.model_dump(mode="json"),
        "seed": cfg.seed,
        "details": outcome.extra,
        "inconclusive": outcome.inconclusive,
        "outputs": files,
        "wall_time_s": round(wall, 3),
    }
    with open(out_dir / "manifest.json", "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True, default=_fmt)
        fh.write("\n")
    return manifest


def _diagnostics(err: ValidationError) -> list[str]:
    lines = []
    for e in err.errors():
        loc = ".".join(str(p) for p in e["loc"]) or "<root>"
        lines.append(f"{loc}: {e['msg']}")
    return lines


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="brwlab", description="Branching random walk laboratory")
    sub = ap.add_subparsers(dest="command", required=True)
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--out", help="output directory (default: $BRWLAB_OUT/<experiment>-<hash>)")
    common.add_argument("--threads", type=int, default=1, help="worker threads, 0 = all cores")
    for kind in EXPERIMENTS:
        p = sub.add_parser(kind, parents=[common], help=f"run a {kind} experiment")
        p.add_argument("--config", help="JSON config file")
        p.add_argument("--seed", type=int, help="unsigned 64-bit seed, overrides the config")
    p = sub.add_parser("replay", parents=[common], help="rerun an experiment from its manifest.json")
    p.add_argument("manifest")
    p.add_argument("--check", action="store_true",
                   help="compare the new CSV files with those next to the manifest")
    return ap


def _load_config(kind: str, path: str | None, seed: int | None) -> Base:
    data = {}
    if path:
        with open(path, encoding="utf-8") as fh:
            data = json.load(fh)
        if not isinstance(data, dict):
            raise ValueError("config must be a JSON object")
    if seed is not None:
        data["seed"] = seed
    return parse_config(kind, data)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "replay":
            src = Path(args.manifest)
            with open(src, encoding="utf-8") as fh:
                manifest = json.load(fh)
            data = dict(manifest["config"])
            data.pop("out", None)
            cfg = parse_config(manifest["experiment"], data)
            out_dir = Path(args.out) if args.out else src.parent / "replay"
        else:
            cfg = _load_config(args.command, args.config, args.seed)
            out_dir = output_dir(cfg, args.out)
    except ValidationError as err:
        print("invalid config:", file=sys.stderr)
        for line in _diagnostics(err):
            print(f"  {line}", file=sys.stderr)
        return 2
    except (ValueError, OSError, KeyError) as err:
        print(f"invalid config: {err}", file=sys.stderr)
        return 2

    try:
        manifest = run_experiment(cfg, out_dir, args.threads)
    except BrwlabError as err:
        print(f"error: {type(err).__name__}: {err}", file=sys.stderr)
        return 1
    print(f"{cfg.experiment}: wrote {', '.join(manifest['outputs'])} and manifest.json to {out_dir}")
    if manifest["inconclusive"]:
        print("note: statistics inconclusive (see manifest)")
    if args.command == "replay" and args.check:
        diff = [f for f in manifest["outputs"]
                if (src.parent / f).read_bytes() != (out_dir / f).read_bytes()]
        if diff:
            print(f"replay differs: {', '.join(diff)}", file=sys.stderr)
            return 1
        print("replay identical")
    return 0


if __name__ == "__main__":
    sys.exit(main())
