"""Batch front door: config-driven runs with JSON reports, CSV curves, and
rendered figures.

    datherm <command> --config cfg.json [--seed N] [--threads N] [--out DIR]

Commands: fixture, rates, pressure, decompose, spec-witness, tail-entropy,
lyapunov, criterion, srb-curve, selftest.  Exit codes: 0 success, 1 config
error, 2 numerical failure (an error report is still written).
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import os
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import anosov, bvmap, decomposition, grassmann, plotting, pressure, torus
from .criterion import (EstimationConfig, FixtureBundle, bounded_range_D,
                        pressure_curve, srb_gap_check, uniqueness_check)
from .errors import DathermError, InvalidParams
from .torus import Grid

DEFAULT_CONFIG = {
    "seed": 0,
    "matrix": {"search_bound": 12},
    "eta_cap": 0.125,
    "bv": {"rho": 2e-4, "lambda_target": 1.01, "rotation_angle": 0.05,
           "beta": 0.25},
    "r": 0.1,
    "estimation": {
        "mesh": 16, "eps": 0.2, "n_range": [1, 2, 3, 4],
        "splitting_mesh": 6, "gibbs_mesh": 16, "gibbs_n_max": 6,
        "t_values": [0.0, 0.25, 0.5, 0.75, 1.0, 1.25],
        "window": 20, "tolerance": 1e-10,
    },
    "phi": {"kind": "zero"},
    "out": "out",
}


def _merge(base: dict, extra: dict) -> dict:
    out = dict(base)
    for k, v in extra.items():
        if isinstance(v, dict) and isinstance(base.get(k), dict):
            out[k] = _merge(base[k], v)
        else:
            out[k] = v
    return out


@dataclass
class RunContext:
    cfg: dict
    cfg_hash: str
    out: Path
    rng: np.random.Generator

    _cache: dict = None

    def __post_init__(self):
        self._cache = {}

    # ---- cached pipeline stages -------------------------------------
    def matrix(self) -> anosov.AnosovMatrix:
        if "A" not in self._cache:
            mcfg = self.cfg["matrix"]
            if "fixture_path" in mcfg:
                self._cache["A"] = anosov.AnosovMatrix.load(mcfg["fixture_path"])
            else:
                self._cache["A"] = anosov.find_matrix(int(mcfg["search_bound"]))
        return self._cache["A"]

    def eta(self) -> float:
        return self.matrix().default_eta(cap=float(self.cfg["eta_cap"]))

    def bv_params(self) -> bvmap.BVParams:
        b = self.cfg["bv"]
        return bvmap.BVParams.default_for(
            self.matrix(), rho=float(b["rho"]),
            lambda_target=float(b["lambda_target"]),
            rotation_angle=float(b["rotation_angle"]), beta=float(b["beta"]))

    def bv(self) -> bvmap.BVMap:
        if "g" not in self._cache:
            self._cache["g"] = bvmap.construct_bv(
                self.matrix(), self.bv_params(), self.eta())
        return self._cache["g"]

    def splitting(self) -> grassmann.SplittingField:
        if "field" not in self._cache:
            g = self.bv()
            p = g.params
            clusters = np.concatenate([
                g.support_samples(per_lobe=300, rng=np.random.default_rng(0)),
                torus.ball_cluster(p.q, p.rho, 3),
                torus.ball_cluster(p.qprime, p.rho, 3)])
            mesh = int(self.cfg["estimation"]["splitting_mesh"])
            self._cache["field"] = grassmann.build_splitting(
                g, Grid(mesh), extra_points=clusters,
                tol=float(self.cfg["estimation"]["tolerance"]))
        return self._cache["field"]

    def rates(self) -> bvmap.RateReport:
        if "rates" not in self._cache:
            r = float(self.cfg["r"])
            self._cache["rates"] = bvmap.estimate_rates(
                self.bv(), self.splitting(), r_values=[r, 2 * r])
        return self._cache["rates"]

    def shadowing_data(self) -> anosov.ShadowingData:
        if "sd" not in self._cache:
            A = self.matrix()
            est = self.cfg["estimation"]
            L = anosov.gibbs_L(A, self.eta(), int(est["gibbs_n_max"]),
                               Grid(int(est["gibbs_mesh"])))
            self._cache["sd"] = anosov.ShadowingData(
                C=A.shadowing_constant(), eta=self.eta(), L=L, h=A.h_top)
        return self._cache["sd"]

    def bundle(self) -> FixtureBundle:
        g = self.bv()
        pts = np.concatenate([g.support_samples(per_lobe=200,
                                                rng=np.random.default_rng(1)),
                              self.rng.random((2000, 4))])
        c0, _ = bvmap.c0_distance(g, self.matrix().map, pts)
        return FixtureBundle(A=self.matrix(), g=g, field=self.splitting(),
                             rates=self.rates(), shadowing=self.shadowing_data(),
                             c0_dist=c0)

    def potential(self) -> pressure.Potential:
        p = self.cfg["phi"]
        kind = p.get("kind", "zero")
        if kind == "zero":
            return pressure.Potential.constant(0.0)
        if kind == "constant":
            return pressure.Potential.constant(float(p["value"]))
        if kind == "trig":
            return pressure.Potential.trig(
                np.asarray(p["freqs"]), np.asarray(p["coeffs"]),
                np.asarray(p.get("phases")) if p.get("phases") else None)
        if kind == "t_geo":
            return grassmann.phi_geo_potential(
                self.bv(), self.splitting(), float(p.get("t", 1.0)))
        raise InvalidParams(f"unknown potential kind {kind!r}")

    def est_cfg(self) -> EstimationConfig:
        e = self.cfg["estimation"]
        return EstimationConfig(grid=Grid(int(e["mesh"])), eps=float(e["eps"]),
                                n_range=[int(n) for n in e["n_range"]],
                                seed=int(self.cfg["seed"]))

    # ---- artifact helpers -------------------------------------------
    def write_json(self, name: str, doc: dict) -> Path:
        doc = dict(doc)
        doc["config_hash"] = self.cfg_hash
        doc["seed"] = int(self.cfg["seed"])
        path = self.out / name
        with open(path, "w") as fh:
            json.dump(doc, fh, indent=2, sort_keys=True)
            fh.write("\n")
        return path

    def write_csv(self, name: str, rows) -> Path:
        path = self.out / name
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            for row in rows:
                writer.writerow(row)
        return path


def validate_config(cfg: dict) -> None:
    try:
        rho = float(cfg["bv"]["rho"])
        eta_cap = float(cfg["eta_cap"])
        r = float(cfg["r"])
    except (KeyError, TypeError, ValueError) as exc:
        raise InvalidParams(f"malformed config: {exc}")
    if not 0 < r < 1:
        raise InvalidParams(f"threshold r={r} outside (0, 1)")
    if rho <= 0 or eta_cap <= 0:
        raise InvalidParams("rho and eta_cap must be positive")


def _chain_check(ctx: RunContext) -> None:
    """The scale chain rho'' = 63 kappa rho' < 6 eta must hold."""
    A = ctx.matrix()
    params = ctx.bv_params()
    params.validate(A, ctx.eta())


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def cmd_fixture(ctx: RunContext) -> dict:
    A = ctx.matrix()
    sd = ctx.shadowing_data()
    doc = A.to_json()
    doc.update(sd.to_json())
    doc["fixed_points"] = A.fixed_points().tolist()
    ctx.write_json("fixture.json", doc)
    return {"h": sd.h, "L": sd.L, "C": sd.C}


def cmd_rates(ctx: RunContext) -> dict:
    _chain_check(ctx)
    g = ctx.bv()
    rates = ctx.rates()
    pts = np.concatenate([g.support_samples(per_lobe=100,
                                            rng=np.random.default_rng(2)),
                          ctx.rng.random((60, 4))])
    ok, margin, _ = bvmap.cone_check(g, g.params.beta, pts, n_dir=12)
    c0, c0bar = bvmap.c0_distance(g, ctx.matrix().map, pts)
    doc = rates.to_json()
    doc.update({"cone_ok": bool(ok), "cone_margin": margin,
                "c0_distance": c0, "c0_mesh_term": c0bar,
                "min_jacobian_det": getattr(g, "min_jacobian_det", 1.0),
                "rate_inequality": bvmap.check_rate_inequality(rates, g.params.beta)})
    ctx.write_json("rates.json", doc)
    return doc


def cmd_pressure(ctx: RunContext) -> dict:
    _chain_check(ctx)
    est = ctx.est_cfg()
    phi = ctx.potential()
    target = ctx.cfg.get("pressure_map", "bv")
    map_ = ctx.matrix().map if target == "linear" else ctx.bv()
    res = pressure.pressure_at_scale(map_, pressure.Collection.full(), phi,
                                     est.eps, est.n_range, est.grid)
    rows = [("n", "log_partition_sum", "set_size", "saturated")]
    rows += [(r.n, r.log_value, r.set_size, int(r.saturated)) for r in res.results]
    ctx.write_csv("pressure.csv", rows)
    plotting.save_pressure_series(ctx.out / "pressure.png", res.results, res)
    doc = {"slope": res.slope, "cesaro": res.cesaro, "estimate": res.estimate,
           "saturated": res.any_saturated, "map": target, "phi": phi.name,
           "eps": est.eps, "mesh": est.grid.mesh,
           "partition_sums": [
               {"n": r.n, "scale": r.scale, "log_value": r.log_value,
                "set_size": r.set_size, "estimator": r.estimator,
                "n_candidates": r.n_candidates, "saturated": r.saturated,
                "bias": r.bias} for r in res.results]}
    ctx.write_json("pressure.json", doc)
    return doc


def _indicator_cfg(ctx: RunContext) -> decomposition.IndicatorConfig:
    g = ctx.bv()
    kappa = 2 * ctx.matrix().kappa_bar
    return decomposition.IndicatorConfig(
        q=g.params.q, qprime=g.params.qprime,
        radius=g.params.rho_second(kappa) + g.params.rho, r=float(ctx.cfg["r"]))


def cmd_decompose(ctx: RunContext) -> dict:
    _chain_check(ctx)
    g = ctx.bv()
    cfg = _indicator_cfg(ctx)
    n_segments = int(ctx.cfg.get("decompose_samples", 200))
    n_max = int(ctx.cfg.get("decompose_n_max", 40))
    rows = [("x0", "x1", "x2", "x3", "n", "p", "g", "s")]
    prows = []
    good = 0
    for _ in range(n_segments):
        x = ctx.rng.random(4)
        n = int(ctx.rng.integers(5, n_max + 1))
        t = decomposition.decompose(g, cfg, x, n)
        rows.append((x[0], x[1], x[2], x[3], n, t.p, t.g, t.s))
        prows.append((x, n, t.p, t.g, t.s))
        good += t.g == n
    ctx.write_csv("decompose.csv", rows)
    plotting.save_decomposition_batch(ctx.out / "decompose.png", prows)
    doc = {"segments": n_segments, "fully_good": good,
           "indicator_radius": cfg.radius, "r": cfg.r}
    ctx.write_json("decompose.json", doc)
    return doc


def cmd_spec_witness(ctx: RunContext) -> dict:
    _chain_check(ctx)
    g = ctx.bv()
    A = ctx.matrix()
    cfg = _indicator_cfg(ctx)
    rates = ctx.rates()
    r = float(ctx.cfg["r"])
    rho_p = g.params.rho_prime
    tau = ctx.cfg.get("witness_tau")
    tau = decomposition.tau0(g, A, rho_p) if tau is None else int(tau)
    n = decomposition.min_segment_length(0, rates, r, tau) + 2
    segs = []
    tries = 0
    while len(segs) < int(ctx.cfg.get("witness_segments", 3)):
        tries += 1
        if tries > 20_000:
            raise decomposition.NotFound(
                f"no good segments of length {n} at threshold r={r}")
        x = ctx.rng.random(4)
        if decomposition.is_good(g, cfg, x, n):
            segs.append((x, n))
    witness = decomposition.construct_shadowing_orbit(
        g, A, segs, M=0, rates=rates, r=r, rho_prime=rho_p, tau=tau)
    doc = {"tau": witness.tau, "segment_length": n,
           "block_defects": witness.block_defects,
           "defect_budget": witness.scale, "ok": witness.ok,
           "mp_digits": witness.mp_digits,
           "point": witness.point.tolist(),
           "segments": [(list(map(float, x)), n) for x, n in segs]}
    ctx.write_json("spec_witness.json", doc)
    return doc


def cmd_tail_entropy(ctx: RunContext) -> dict:
    _chain_check(ctx)
    est = ctx.cfg["estimation"]
    xs = ctx.rng.random((int(ctx.cfg.get("tail_samples", 3)), 4))
    results = {}
    for label, map_ in (("linear", ctx.matrix().map), ("bv", ctx.bv())):
        res = pressure.tail_entropy_estimate(
            map_, xs, eps=float(ctx.cfg.get("tail_eps", 0.2)),
            delta=float(ctx.cfg.get("tail_delta", 0.05)),
            n_range=[int(v) for v in est["n_range"]],
            window=int(est["window"]))
        results[label] = res
        plotting.save_tail_entropy(ctx.out / f"tail_entropy_{label}.png", res)
    doc = {label: {"estimate": r.estimate, "per_point": list(r.per_point),
                   "gamma_sizes": list(r.gamma_sizes), "window": r.window}
           for label, r in results.items()}
    ctx.write_json("tail_entropy.json", doc)
    return doc


def cmd_lyapunov(ctx: RunContext) -> dict:
    _chain_check(ctx)
    n = int(ctx.cfg.get("lyapunov_n", 100_000))
    x = ctx.rng.random(4)
    A = ctx.matrix()
    lin = grassmann.lyapunov_exponents(A.map, x, n=min(n, 2000))
    bv_exps, vol = grassmann.lyapunov_exponents(ctx.bv(), x, n=n,
                                                return_volume_average=True)
    doc = {
        "linear": lin.tolist(),
        "linear_exact": np.log(A.eigenvalues)[::-1].tolist(),
        "bv": bv_exps.tolist(),
        "bv_volume_average": vol,
        "bv_sum": float(bv_exps.sum()),
        "lambda_plus_linear": grassmann.lambda_plus(lin),
        "lambda_plus_bv": grassmann.lambda_plus(bv_exps),
        "n": n,
    }
    plotting.save_lyapunov(ctx.out / "lyapunov.png",
                           {"linear": lin, "deformed": bv_exps})
    ctx.write_json("lyapunov.json", doc)
    return doc


def cmd_criterion(ctx: RunContext) -> dict:
    _chain_check(ctx)
    bundle = ctx.bundle()
    phi = ctx.potential()
    report = uniqueness_check(phi, bundle, est_cfg=None)
    report.config_hash = ctx.cfg_hash
    doc = report.to_json()
    sd, rates = bundle.shadowing, bundle.rates
    Dp, D, positive = bounded_range_D(sd.h, rates.lam, rates.gamma, sd.L)
    gap_ok, gap_margin = srb_gap_check(
        rates.lam, rates.gamma, sd.L, sd.h,
        ctx.matrix().eigenvalues[2], ctx.matrix().eigenvalues[3])
    doc["bounded_range"] = {"D_prime": Dp, "D": D, "positive": positive}
    doc["srb_gap"] = {"ok": gap_ok, "margin": gap_margin}
    ctx.write_json("criterion.json", doc)
    return doc


def cmd_srb_curve(ctx: RunContext) -> dict:
    _chain_check(ctx)
    est = ctx.est_cfg()
    t_values = [float(t) for t in ctx.cfg["estimation"]["t_values"]]
    g = ctx.bv()
    rates = ctx.rates()
    sd = ctx.shadowing_data()
    curve = pressure_curve(g, ctx.matrix(), ctx.splitting(), t_values,
                           h_exact=sd.h, rates=rates, L=sd.L,
                           est_cfg=None)
    ctx.write_csv("srb_curve.csv", curve.csv_rows())
    plotting.save_srb_curve(ctx.out / "srb_curve.png", curve)
    doc = curve.to_json()
    ctx.write_json("srb_curve.json", doc)
    return {"root": curve.root_estimate}


def cmd_selftest(ctx: RunContext) -> dict:
    """Fast invariant battery on the linear fixture; raises on failure."""
    A = ctx.matrix()
    fmap = A.map
    rng = ctx.rng
    checks = {}

    x, y, z = rng.random((3, 4)), rng.random((3, 4)), rng.random((3, 4))
    d_xy = torus.distance(x, y)
    checks["metric_symmetry"] = float(np.max(np.abs(d_xy - torus.distance(y, x))))
    checks["metric_triangle"] = float(np.max(
        torus.distance(x, z) - (d_xy + torus.distance(y, z))))
    pts = rng.random((200, 4))
    d1 = torus.dn(fmap, pts, torus.wrap(pts + 1e-3), 3)
    d2 = torus.dn(fmap, pts, torus.wrap(pts + 1e-3), 4)
    checks["dn_monotone"] = float(np.max(d1 - d2))
    M = A.entries.astype(float)
    checks["eig_residual"] = float(max(
        np.linalg.norm(M @ v - l * v)
        for l, v in zip(A.eigenvalues, A.eigenvectors.T)))
    checks["det_minus_1"] = abs(float(np.prod(A.eigenvalues)) - 1.0)
    exps = grassmann.lyapunov_exponents(fmap, rng.random(4), n=500)
    checks["lyapunov_exact"] = float(np.max(np.abs(
        exps - np.log(A.eigenvalues)[::-1])))
    checks["binary_entropy_sym"] = abs(
        pressure.binary_entropy(0.3) - pressure.binary_entropy(0.7))
    ok = (checks["metric_symmetry"] < 1e-12 and checks["metric_triangle"] < 1e-12
          and checks["dn_monotone"] <= 0 and checks["eig_residual"] < 1e-10
          and checks["det_minus_1"] < 1e-10 and checks["lyapunov_exact"] < 1e-8
          and checks["binary_entropy_sym"] < 1e-14)
    doc = {"checks": checks, "ok": bool(ok)}
    ctx.write_json("selftest.json", doc)
    if not ok:
        raise DathermError(f"selftest failed: {checks}")
    return doc


COMMANDS = {
    "fixture": cmd_fixture,
    "rates": cmd_rates,
    "pressure": cmd_pressure,
    "decompose": cmd_decompose,
    "spec-witness": cmd_spec_witness,
    "tail-entropy": cmd_tail_entropy,
    "lyapunov": cmd_lyapunov,
    "criterion": cmd_criterion,
    "srb-curve": cmd_srb_curve,
    "selftest": cmd_selftest,
}


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="datherm", description=__doc__)
    parser.add_argument("command", choices=sorted(COMMANDS))
    parser.add_argument("--config", type=str, default=None,
                        help="JSON config path (defaults merged underneath)")
    parser.add_argument("--seed", type=int, default=None)
    parser.add_argument("--threads", type=int, default=None,
                        help="cap BLAS/OpenMP worker pools (best effort)")
    parser.add_argument("--out", type=str, default=None)
    args = parser.parse_args(argv)

    if args.threads is not None:
        for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS",
                    "MKL_NUM_THREADS"):
            os.environ[var] = str(args.threads)

    cfg = DEFAULT_CONFIG
    if args.config is not None:
        try:
            with open(args.config) as fh:
                cfg = _merge(cfg, json.load(fh))
        except (OSError, json.JSONDecodeError) as exc:
            print(f"config error: {exc}", file=sys.stderr)
            return 1
    if args.seed is not None:
        cfg = _merge(cfg, {"seed": int(args.seed)})
    if args.out is not None:
        cfg = _merge(cfg, {"out": args.out})

    try:
        validate_config(cfg)
    except InvalidParams as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1

    hashed = {k: v for k, v in cfg.items() if k != "out"}
    cfg_hash = hashlib.sha256(
        json.dumps(hashed, sort_keys=True).encode()).hexdigest()[:16]
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    ctx = RunContext(cfg=cfg, cfg_hash=cfg_hash, out=out,
                     rng=np.random.default_rng(int(cfg["seed"])))

    try:
        result = COMMANDS[args.command](ctx)
    except InvalidParams as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except DathermError as exc:
        ctx.write_json("error.json", {"error": type(exc).__name__,
                                      "message": str(exc),
                                      "command": args.command})
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 2
    summary = {k: v for k, v in result.items()
               if isinstance(v, (int, float, str, bool))}
    print(json.dumps({"command": args.command, "ok": True,
                      "summary": summary}, sort_keys=True, default=str))
    return 0


if __name__ == "__main__":
    sys.exit(main())
