"""Command-line front end.

Subcommands: gen-data, run, baseline, cv, sweep-kappa, sweep-lambda, report.
Every workflow reads a JSON or TOML config file, writes CSV outputs plus a
JSON summary, and (unless --no-figures) renders PNG figures next to the CSV.
``--seed`` overrides the schedule seed from the config.

Exit codes: 0 success, 2 config/usage error, 1 runtime error.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Optional

import numpy as np

from . import boost, evaluation, graphlearn, netsim, report
from .datagen import (
    MoonsConfig,
    build_stumps,
    export_csv,
    feature_ranges,
    generate_moons,
    load_csv,
    oracle_graph,
)
from .domain import CollaborationGraph, Hyperparams, save_json

METHODS = ("dada_learned", "dada_oracle", "local_boost", "global_boost",
           "local_linear", "global_linear")


class ConfigError(Exception):
    """Malformed or inconsistent configuration; maps to exit code 2."""


@dataclass
class RunConfig:
    """Parsed configuration for one workflow invocation."""

    raw: dict
    dataset_source: str
    moons: Optional[MoonsConfig]
    csv_path: Optional[str]
    csv_feature_ranges: Optional[list]
    per_dim: int
    hyper: Hyperparams
    sched: netsim.ScheduleConfig
    method: str
    graph_file: Optional[str]
    baseline_steps: int
    linear_l2: float

    def validate(self) -> None:
        if self.method not in METHODS:
            raise ConfigError("unknown method %r (choose from %s)"
                              % (self.method, ", ".join(METHODS)))
        if self.dataset_source == "csv":
            if not self.csv_path:
                raise ConfigError("dataset.path is required for csv source")
            if self.csv_feature_ranges is None:
                raise ConfigError("dataset.feature_ranges is required for csv "
                                  "source (the stump grid is a shared convention)")


def _load_config_file(path: str) -> dict:
    p = Path(path)
    if not p.exists():
        raise ConfigError("config file not found: %s" % path)
    text = p.read_text()
    if p.suffix.lower() == ".json":
        return json.loads(text)
    if p.suffix.lower() == ".toml":
        try:
            import tomllib
        except ModuleNotFoundError:
            import tomli as tomllib
        return tomllib.loads(text)
    raise ConfigError("config must be .json or .toml, got %r" % p.suffix)


def parse_config(path: str, seed_override: Optional[int] = None) -> RunConfig:
    raw = _load_config_file(path)
    try:
        ds = raw.get("dataset", {})
        source = ds.get("source", "moons")
        moons = None
        if source == "moons":
            moons = MoonsConfig(
                preset=ds.get("preset", "clustered"),
                K=int(ds.get("K", 100)),
                cluster_sizes=tuple(ds.get("cluster_sizes", (10, 20, 30, 40))),
                cluster_angles_deg=tuple(ds.get("cluster_angles_deg",
                                                (45.0, 135.0, 225.0, 315.0))),
                angle_noise_std=float(ds.get("angle_noise_std", 5.0)),
                m_train_range=tuple(ds.get("m_train_range", (3, 15))),
                m_test=int(ds.get("m_test", 100)),
                D=int(ds.get("D", 20)),
                label_flip_frac=float(ds.get("label_flip_frac", 0.05)),
                oracle_sigma=float(ds.get("oracle_sigma", 0.1)),
                oracle_drop_threshold=float(ds.get("oracle_drop_threshold", 1e-4)),
                seed=int(ds.get("seed", 0)),
            )
            moons.validate()
        elif source != "csv":
            raise ConfigError("dataset.source must be 'moons' or 'csv'")

        hy = raw.get("hyper", {})
        hyper = Hyperparams(
            mu1=float(hy.get("mu1", 1.0)),
            mu2=float(hy["mu2"]) if "mu2" in hy else None,
            beta=float(hy.get("beta", 5.0)),
            lam=float(hy.get("lambda", 0.05)),
            delta=float(hy.get("delta", 1.0)),
            kappa=int(hy.get("kappa", 5)),
            z_bits=int(hy.get("Z", 32)),
        )
        sc = raw.get("schedule", {})
        sched = netsim.ScheduleConfig(
            model_steps_per_phase=int(sc.get("model_steps_per_phase", 100)),
            graph_steps_per_phase=(int(sc["graph_steps_per_phase"])
                                   if "graph_steps_per_phase" in sc else None),
            total_phases=int(sc.get("total_phases", 20)),
            kappa=int(sc["kappa"]) if "kappa" in sc else None,
            seed=int(sc.get("seed", 0)),
            prune_keep=int(sc["prune_keep"]) if "prune_keep" in sc else None,
            cache_peer_models=bool(sc.get("cache_peer_models", True)),
            gamma_reset_per_phase=bool(sc.get("gamma_reset_per_phase", False)),
        )
        if seed_override is not None:
            sched = replace(sched, seed=seed_override)
        run = raw.get("run", {})
        base = raw.get("baseline", {})
        cfg = RunConfig(
            raw=raw,
            dataset_source=source,
            moons=moons,
            csv_path=ds.get("path"),
            csv_feature_ranges=ds.get("feature_ranges"),
            per_dim=int(raw.get("stumps", {}).get("per_dim", 10)),
            hyper=hyper,
            sched=sched,
            method=run.get("method", "dada_learned"),
            graph_file=run.get("graph_file"),
            baseline_steps=int(base.get("steps",
                                        sched.model_steps_per_phase * 100)),
            linear_l2=float(base.get("l2", 1e-3)),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError("bad config: %s" % exc)
    cfg.validate()
    return cfg


def _materialize(cfg: RunConfig):
    """Dataset, stump grid and (when available) per-user angles."""
    if cfg.dataset_source == "moons":
        dataset, angles = generate_moons(cfg.moons)
        ranges = feature_ranges(dataset)
    else:
        dataset = load_csv(cfg.csv_path)
        angles = None
        ranges = [tuple(r) for r in cfg.csv_feature_ranges]
        if len(ranges) != dataset.feature_dim:
            raise ConfigError("feature_ranges must list one (min, max) per dimension")
    stumps = build_stumps(ranges, cfg.per_dim)
    return dataset, stumps, angles


def _oracle_graph_for(cfg: RunConfig, dataset, angles) -> CollaborationGraph:
    if cfg.graph_file:
        with open(cfg.graph_file) as fh:
            return CollaborationGraph.from_json_dict(json.load(fh))
    if angles is None:
        angles = [u.angle_deg for u in dataset.users]
    if any(a is None for a in angles):
        raise ConfigError("dada_oracle needs angle metadata or run.graph_file")
    sigma = cfg.moons.oracle_sigma if cfg.moons else 0.1
    drop = cfg.moons.oracle_drop_threshold if cfg.moons else 1e-4
    return oracle_graph(angles, sigma, drop)


def _write_rows_csv(path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)


def _summary(out_dir: Path, payload: dict) -> None:
    with open(out_dir / "summary.json", "w") as fh:
        json.dump(payload, fh, indent=2, default=float)


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def _cmd_gen_data(args) -> int:
    cfg = parse_config(args.config, args.seed)
    if cfg.dataset_source != "moons":
        raise ConfigError("gen-data requires a moons dataset config")
    if args.seed is not None:
        cfg.moons.seed = args.seed
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    dataset, angles = generate_moons(cfg.moons)
    export_csv(dataset, out / "data.csv")
    g = oracle_graph(angles, cfg.moons.oracle_sigma, cfg.moons.oracle_drop_threshold)
    save_json(g, out / "oracle_graph.json")
    meta = {
        "angles_deg": [float(a) for a in angles],
        "feature_ranges": feature_ranges(dataset),
        "seed": cfg.moons.seed,
        "K": dataset.K,
        "D": dataset.feature_dim,
    }
    with open(out / "meta.json", "w") as fh:
        json.dump(meta, fh, indent=2)
    print("wrote %s, %s, %s" % (out / "data.csv", out / "oracle_graph.json",
                                out / "meta.json"))
    return 0


def _checkpoint_writer(out: Path):
    ckpt_dir = out / "checkpoints"
    ckpt_dir.mkdir(parents=True, exist_ok=True)

    def write(sim, phase):
        payload = {
            "phase": phase,
            "global_step": sim.model_steps + sim.graph_steps,
            "models": [m.to_json_dict() for m in sim.state.models],
            "graph": sim.graph.to_json_dict(),
            "ledger": sim.ledger.to_json_dict(),
        }
        with open(ckpt_dir / ("phase_%04d.json" % phase), "w") as fh:
            json.dump(payload, fh)

    return write


def _cmd_run(args) -> int:
    cfg = parse_config(args.config, args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    dataset, stumps, angles = _materialize(cfg)

    oracle_mean_degree = None
    if cfg.method == "dada_learned":
        cb = _checkpoint_writer(out) if args.checkpoints else None
        state, graph, log = netsim.run_alternating(dataset, stumps, cfg.hyper,
                                                   cfg.sched, on_phase_end=cb)
    elif cfg.method == "dada_oracle":
        graph = _oracle_graph_for(cfg, dataset, angles)
        oracle_mean_degree = graph.mean_degree()
        steps = cfg.sched.model_steps_per_phase * max(cfg.sched.total_phases, 1)
        state, log = netsim.run_fixed_graph(
            dataset, stumps, graph, cfg.hyper, steps, cfg.sched.seed,
            log_every=cfg.sched.model_steps_per_phase)
    else:
        return _cmd_baseline(args)

    log.write_csv(out / "metrics.csv")
    train_acc, _ = evaluation.average_accuracy(state, dataset, stumps, "train")
    test_acc, per_user = evaluation.average_accuracy(state, dataset, stumps, "test")
    certs = _certificates(dataset, stumps, state, graph, cfg.hyper)
    kappa = cfg.sched.kappa if cfg.sched.kappa is not None else cfg.hyper.kappa
    shrink = graphlearn.shrink_factor(kappa, dataset.K, cfg.hyper.mu2,
                                      cfg.hyper.lam, cfg.hyper.delta)
    mem = netsim.memory_footprint(dataset.K, graph.edge_count, stumps.n,
                                  cfg.hyper.z_bits,
                                  [m.update_count for m in state.models])
    _summary(out, {
        "method": cfg.method,
        "seed": cfg.sched.seed,
        "train_acc": train_acc,
        "test_acc": test_acc,
        "per_user_test_acc": per_user.tolist(),
        "edges": graph.edge_count,
        "mean_degree": graph.mean_degree(),
        "certificates": certs,
        "shrink": {"sigma": shrink.sigma, "L_max": shrink.l_max, "rho": shrink.rho},
        "model_bits": log.column("model_bits")[-1] if log.rows else 0,
        "graph_bits": log.column("graph_bits")[-1] if log.rows else 0,
        "memory_dense_bits": mem.dense_bits,
        "memory_sparse_model_bits": mem.sparse_model_bits,
        "broadcast_reference_bits": netsim.broadcast_reference_bits(
            dataset.K, cfg.hyper.z_bits),
    })
    if not args.no_figures:
        report.render_run_figures(out / "metrics.csv",
                                  oracle_mean_degree=oracle_mean_degree)
    print("test accuracy (mean over users): %.4f" % test_acc)
    return 0


def _certificates(dataset, stumps, state, graph, hyper) -> dict:
    from .domain import margin_matrix, confidences
    margins = [margin_matrix(u, stumps) for u in dataset.users]
    conf = confidences(dataset)
    f = boost.objective_f(state, graph, margins, conf, hyper.mu1)
    gap = boost.duality_gap(state, graph, margins, conf, hyper.mu1)
    norms1 = [boost.margin_one_norm(A) for A in margins]
    norms2 = [float(np.linalg.norm(A, 2)) for A in margins]
    c1 = boost.curvature_bound(graph, conf, norms1, hyper.beta, hyper.mu1)
    c2 = boost.curvature_bound(graph, conf, norms2, hyper.beta, hyper.mu1)
    zero = boost.ModelState([m.copy() for m in state.models])
    for m in zero.models:
        m.coef = np.zeros_like(m.coef)
    p0 = boost.duality_gap(zero, graph, margins, conf, hyper.mu1)
    return {
        "objective_f": f,
        "duality_gap": gap,
        "curvature_bound_one_norm": c1,
        "curvature_bound_spectral_norm": c2,
        "initial_gap_certificate": p0,
        "iterations_for_eps_0.1": boost.theorem_iteration_bound(
            dataset.K, c1, p0, 0.1),
    }


def _cmd_baseline(args) -> int:
    cfg = parse_config(args.config, args.seed)
    method = getattr(args, "method", None) or cfg.method
    if method not in METHODS[2:]:
        raise ConfigError("baseline method must be one of %s" % ", ".join(METHODS[2:]))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    dataset, stumps, _ = _materialize(cfg)
    seed = cfg.sched.seed

    if method == "local_boost":
        state = evaluation.run_local_boost(dataset, stumps, cfg.hyper.beta,
                                           cfg.baseline_steps, seed)
    elif method == "global_boost":
        model = evaluation.run_global_boost(dataset, stumps, cfg.hyper.beta,
                                            cfg.baseline_steps, seed)
        state = evaluation.broadcast_state(model, dataset.K)
    else:
        mode = method.split("_")[0]
        models = evaluation.run_linear_baselines(dataset, mode, cfg.linear_l2)
        train_acc, _ = evaluation.linear_average_accuracy(models, dataset, "train")
        test_acc, per_user = evaluation.linear_average_accuracy(models, dataset, "test")
        _summary(out, {"method": method, "seed": seed, "train_acc": train_acc,
                       "test_acc": test_acc,
                       "per_user_test_acc": per_user.tolist()})
        print("test accuracy (mean over users): %.4f" % test_acc)
        return 0

    train_acc, _ = evaluation.average_accuracy(state, dataset, stumps, "train")
    test_acc, per_user = evaluation.average_accuracy(state, dataset, stumps, "test")
    _summary(out, {"method": method, "seed": seed, "train_acc": train_acc,
                   "test_acc": test_acc,
                   "per_user_test_acc": per_user.tolist()})
    print("test accuracy (mean over users): %.4f" % test_acc)
    return 0


def _cmd_cv(args) -> int:
    cfg = parse_config(args.config, args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    dataset, stumps, _ = _materialize(cfg)
    cv = cfg.raw.get("cv", {})
    grid = evaluation.CvGrid(
        beta_grid=tuple(cv.get("beta_grid", (1.0, 10.0, 100.0, 1000.0))),
        mu_grid=tuple(cv.get("mu_grid", tuple(10.0 ** e for e in range(-3, 4)))),
        lambda_grid=tuple(cv.get("lambda_grid",
                                 tuple(10.0 ** e for e in range(-3, 4)))),
        folds=int(cv.get("folds", 3)),
    )
    method = getattr(args, "method", None) or cfg.method
    steps = int(cv.get("steps", 1000))
    best = evaluation.cross_validate(dataset, grid, method, stumps, cfg.hyper,
                                     cfg.sched, steps=steps, seed=cfg.sched.seed)
    _summary(out, {"method": method, "best": best.to_json_dict()})
    print("best hyperparameters:", best.to_json_dict())
    return 0


def _cmd_sweep_kappa(args) -> int:
    cfg = parse_config(args.config, args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    dataset, stumps, _ = _materialize(cfg)
    sw = cfg.raw.get("sweep", {})
    kappa_list = [int(k) for k in sw.get("kappa_list", (1, 2, 5, 10, 25))]
    pretrain = int(sw.get("pretrain_steps",
                          cfg.sched.model_steps_per_phase * dataset.K))
    max_steps = int(sw.get("max_steps", 200_000))
    fraction = float(sw.get("target_fraction", 0.1))

    state = evaluation.run_local_boost(dataset, stumps, cfg.hyper.beta,
                                       pretrain, cfg.sched.seed)
    coefs = [m.coef for m in state.models]
    losses = evaluation.local_loss_terms(dataset, stumps, state)
    h_star = evaluation.graph_optimum_reference(coefs, losses, cfg.hyper)
    h0 = -cfg.hyper.mu2 * dataset.K * np.log(cfg.hyper.delta)
    target = h_star + fraction * (h0 - h_star)
    rows = evaluation.sweep_kappa(coefs, losses, cfg.hyper, kappa_list, target,
                                  seed=cfg.sched.seed, max_steps=max_steps,
                                  cached=cfg.sched.cache_peer_models)
    path = out / "sweep_kappa.csv"
    _write_rows_csv(path, ["kappa", "rounds", "bits", "reached"],
                    [(r.kappa, r.rounds, r.bits, int(r.reached)) for r in rows])
    _summary(out, {"target_h": target, "h_star": h_star, "h0": float(h0),
                   "rows": [r.__dict__ for r in rows]})
    if not args.no_figures:
        report.render_kappa_figure(path)
    for r in rows:
        print("kappa=%-3d rounds=%-7d bits=%-10d %s"
              % (r.kappa, r.rounds, r.bits, "ok" if r.reached else "capped"))
    return 0


def _cmd_sweep_lambda(args) -> int:
    cfg = parse_config(args.config, args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    dataset, stumps, _ = _materialize(cfg)
    sw = cfg.raw.get("sweep", {})
    lambda_list = [float(v) for v in sw.get("lambda_list",
                                            (0.001, 0.01, 0.1, 1.0, 10.0))]
    rows = evaluation.sweep_lambda(dataset, stumps, cfg.hyper, lambda_list,
                                   cfg.sched)
    path = out / "sweep_lambda.csv"
    _write_rows_csv(path, ["lambda", "edges", "mean_degree", "train_acc",
                           "test_acc", "model_bits", "graph_bits"],
                    [(r.lam, r.edges, r.mean_degree, r.train_acc, r.test_acc,
                      r.model_bits, r.graph_bits) for r in rows])
    _summary(out, {"rows": [r.__dict__ for r in rows]})
    if not args.no_figures:
        report.render_lambda_figure(path)
    for r in rows:
        print("lambda=%-8g mean_degree=%-6.2f test_acc=%.4f"
              % (r.lam, r.mean_degree, r.test_acc))
    return 0


def _cmd_report(args) -> int:
    written = report.render_run_figures(args.metrics, out_dir=args.out)
    for p in written:
        print("wrote", p)
    return 0


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------

def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="peerboost",
        description="Decentralized personalized boosting with a learned "
                    "collaboration graph.")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, needs_config=True):
        if needs_config:
            p.add_argument("--config", required=True, help="JSON or TOML config file")
        p.add_argument("--seed", type=int, default=None,
                       help="override the schedule seed")
        p.add_argument("--out", default=".", help="output directory")
        p.add_argument("--no-figures", action="store_true",
                       help="skip PNG rendering")

    p = sub.add_parser("gen-data", help="generate a synthetic dataset")
    common(p)
    p.set_defaults(func=_cmd_gen_data)

    p = sub.add_parser("run", help="run the configured method")
    common(p)
    p.add_argument("--checkpoints", action="store_true",
                   help="write JSON checkpoints at phase boundaries")
    p.set_defaults(func=_cmd_run)

    p = sub.add_parser("baseline", help="run a non-collaborative baseline")
    common(p)
    p.add_argument("--method", choices=METHODS[2:], default=None)
    p.set_defaults(func=_cmd_baseline)

    p = sub.add_parser("cv", help="cross-validate hyperparameters")
    common(p)
    p.add_argument("--method", choices=METHODS, default=None)
    p.set_defaults(func=_cmd_cv)

    p = sub.add_parser("sweep-kappa", help="communication/rounds trade-off sweep")
    common(p)
    p.set_defaults(func=_cmd_sweep_kappa)

    p = sub.add_parser("sweep-lambda", help="sparsity/accuracy trade-off sweep")
    common(p)
    p.set_defaults(func=_cmd_sweep_lambda)

    p = sub.add_parser("report", help="render figures from a metrics CSV")
    p.add_argument("--metrics", required=True)
    p.add_argument("--out", default=None)
    p.set_defaults(func=_cmd_report)
    return parser


def cli_main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse exits 2 on usage errors and 0 on --help
        return int(exc.code or 0)
    try:
        return args.func(args)
    except ConfigError as exc:
        print("config error: %s" % exc, file=sys.stderr)
        return 2
    except Exception as exc:  # runtime failure
        print("error: %s" % exc, file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(cli_main())


if __name__ == "__main__":
    main()
