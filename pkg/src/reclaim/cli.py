"""Command-line harness: simulate | estimate-noise | fit | evaluate | sweep.

Exit codes: 0 success, 2 usage/config error, 3 I/O failure,
4 unmet interventional-coverage requirement.
"""

from __future__ import annotations

import argparse
import concurrent.futures
import json
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import em, graphs, measurement, model, noise, scm
from .errors import IdentifiabilityError, ParameterError

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_IO = 3
EXIT_IDENTIFIABILITY = 4


class ConfigError(Exception):
    pass


def _load_json(path):
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    try:
        return json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"malformed JSON in {path}: {exc}") from exc


def _resolve_seed(config_seed, flag_seed):
    """Precedence: RECLAIM_SEED env var, then --seed flag, then config."""
    env = os.environ.get("RECLAIM_SEED")
    if env is not None:
        try:
            return int(env)
        except ValueError as exc:
            raise ConfigError(f"RECLAIM_SEED must be an integer, got {env!r}") from exc
    if flag_seed is not None:
        return flag_seed
    return config_seed


def _atomic_write(path, text):
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text)
    tmp.replace(path)


# ---------------------------------------------------------------------------
# simulate


def _build_true_channel(channel_cfg: dict, d: int, rng) -> measurement.Channel:
    ctype = channel_cfg.get("type", "gan")
    sigma_min = channel_cfg.get("sigma_min", 0.3)
    sigma_max = channel_cfg.get("sigma_max", 0.6)
    if ctype == "gan":
        if "sigma_sq" in channel_cfg:
            return measurement.GaussianAdditiveChannel(np.asarray(channel_cfg["sigma_sq"], float))
        sigma = rng.uniform(sigma_min, sigma_max, size=d)
        return measurement.GaussianAdditiveChannel(sigma ** 2)
    if ctype == "linear":
        p = int(channel_cfg.get("p", d))
        if "A" in channel_cfg:
            A = np.asarray(channel_cfg["A"], dtype=float)
        else:
            A = rng.normal(0.0, np.sqrt(channel_cfg.get("mixing_var", 1.5)), size=(p, d))
        if "sigma_sq" in channel_cfg:
            var = np.asarray(channel_cfg["sigma_sq"], dtype=float)
        else:
            var = rng.uniform(sigma_min, sigma_max, size=p) ** 2
        return measurement.LinearChannel(A, var)
    raise ConfigError(f"unknown channel type {ctype!r}")


def run_simulate(config: dict, out_dir) -> None:
    seed = int(config.get("seed", 0))
    d = int(config["d"])
    density = float(config.get("graph_density", 2.0))
    n = int(config.get("n_per_regime", 1000))
    root = np.random.SeedSequence((seed, 2026))
    graph_seed, scm_seed, chan_seed, *_ = root.generate_state(4)

    graph = graphs.erdos_renyi(d, density, seed=int(graph_seed))
    truth = scm.sample_benchmark_scm(
        graph, seed=int(scm_seed), beta=float(config.get("beta", 1.0)),
        weight_range=tuple(config.get("weight_range", (0.2, 0.9))),
        target_lipschitz=float(config.get("target_lipschitz", 0.9)),
        noise_std=config.get("sigma_z", 1.0))
    family = scm.single_node_family(
        d, variance=float(config.get("sigma_I_sq", 1.0)),
        include_observational=bool(config.get("include_observational", True)))
    channel = _build_true_channel(config.get("channel", {"type": "gan"}),
                                  d, np.random.default_rng(int(chan_seed)))

    datasets = []
    for k, regime in enumerate(family):
        child = np.random.SeedSequence((seed, 2026, k)).generate_state(2)
        latents = scm.sample_latents(truth, regime, n, seed=int(child[0]))
        datasets.append(measurement.measure(channel, latents, seed=int(child[1]))
                        if n else np.zeros((0, channel.p)))

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    scm.write_dataset(out, datasets, family)
    _atomic_write(out / "channel.json", measurement.channel_to_json(channel))
    _atomic_write(out / "truth_graph.json", graphs.graph_to_json(graph))
    _atomic_write(out / "scm.json", json.dumps({
        "weights": truth.weights.tolist(),
        "beta": truth.beta,
        "sigma_z": truth.noise_std.tolist(),
    }))


# ---------------------------------------------------------------------------
# estimate-noise


def run_estimate_noise(data_dir, out_path=None) -> None:
    data_dir = Path(data_dir)
    datasets, family = scm.read_dataset(data_dir)
    channel = measurement.channel_from_json((data_dir / "channel.json").read_text())
    if isinstance(channel, measurement.GaussianAdditiveChannel):
        var = noise.estimate_channel_noise(datasets, family, "gan")
        estimated = measurement.GaussianAdditiveChannel(var)
    else:
        var = noise.estimate_channel_noise(datasets, family, "linear", channel.mixing)
        estimated = measurement.LinearChannel(channel.mixing, var)
    out_path = Path(out_path) if out_path else data_dir / "phi_hat.json"
    _atomic_write(out_path, measurement.channel_to_json(estimated))


# ---------------------------------------------------------------------------
# fit


def _em_config_from_dict(cfg_dict: dict, seed) -> em.EmConfig:
    known = {f for f in em.EmConfig.__dataclass_fields__}
    logdet_cfg = cfg_dict.get("logdet", {})
    kwargs = {k: v for k, v in cfg_dict.items() if k in known and k != "logdet"}
    if seed is not None:
        kwargs["seed"] = seed
    return em.EmConfig(logdet=model.LogDetConfig(**logdet_cfg), **kwargs)


def run_fit(data_dir, em_config: dict, out_dir=None, resume: bool = False,
            seed=None) -> em.FitReport:
    data_dir = Path(data_dir)
    out_dir = Path(out_dir) if out_dir else data_dir
    out_dir.mkdir(parents=True, exist_ok=True)
    try:
        datasets, family = scm.read_dataset(data_dir)
    except ValueError as exc:
        raise ConfigError(f"malformed regime data: {exc}") from exc
    channel = measurement.channel_from_json((data_dir / "channel.json").read_text())

    seed = _resolve_seed(int(em_config.get("seed", 0)), seed)
    cfg = _em_config_from_dict(em_config, seed)
    spec = {"type": "gan"} if isinstance(channel, measurement.GaussianAdditiveChannel) \
        else {"type": "linear", "A": channel.mixing.tolist()}
    if em_config.get("use_true_noise"):
        spec["sigma_sq"] = channel.noise_var.tolist()

    init_theta, start_round, q_history, trace = None, 0, None, None
    ckpt_path = out_dir / "checkpoint.json"
    if resume and ckpt_path.exists():
        state = em.checkpoint_from_json(ckpt_path.read_text())
        init_theta = state["theta"]
        start_round = state["completed_rounds"]
        q_history = state["q_history"]
        trace = state["trace"]

    # Mirror fit's internal histories so every completed round is checkpointed.
    q_history_live = list(q_history) if q_history else []
    trace_live = list(trace) if trace else []

    def cb(r, theta, q, entry):
        q_history_live.append(q)
        trace_live.append(entry)
        state = {"theta": theta, "completed_rounds": r + 1,
                 "q_history": list(q_history_live), "trace": list(trace_live)}
        _atomic_write(ckpt_path, em.checkpoint_to_json(state))

    report = em.fit(datasets, family, spec, cfg, init_theta=init_theta,
                    start_round=start_round, q_history=q_history, trace=trace,
                    round_callback=cb)
    final_state = {"theta": report.theta,
                   "completed_rounds": report.diagnostics["rounds_completed"],
                   "q_history": report.elbo_trace,
                   "trace": report.diagnostics["trace"]}
    _atomic_write(ckpt_path, em.checkpoint_to_json(final_state))
    _atomic_write(out_dir / "report.json", em.report_to_json(report))
    em.write_trace_csv(out_dir / "trace.csv", report.diagnostics["trace"])
    return report


# ---------------------------------------------------------------------------
# evaluate


def run_evaluate(report_path, truth_path, out_path=None, threshold: float = 0.8) -> dict:
    report = _load_json(report_path)
    truth = graphs.graph_from_json(Path(truth_path).read_text())
    scores = np.asarray(report["edge_scores"], dtype=float)
    if scores.shape != (truth.d, truth.d):
        raise ConfigError(
            f"score matrix {scores.shape} does not match truth graph d={truth.d}")
    metrics = {
        "auprc": graphs.auprc(scores, truth),
        "shd": graphs.shd(graphs.threshold_edges(scores, threshold), truth),
    }
    if out_path:
        _atomic_write(out_path, json.dumps(metrics, sort_keys=True))
    return metrics


# ---------------------------------------------------------------------------
# sweep


SWEEP_KINDS = ("sigma_min", "n_nodes", "n_measurements", "beta", "density")


def _cell_config(base: dict, kind: str, value) -> dict:
    cfg = json.loads(json.dumps(base))  # deep copy
    channel = cfg.setdefault("channel", {"type": "gan"})
    if kind == "sigma_min":
        channel["sigma_min"] = value
        channel["sigma_max"] = value + 0.3
    elif kind == "n_nodes":
        cfg["d"] = int(value)
    elif kind == "n_measurements":
        if channel.get("type") != "linear":
            raise ConfigError("n_measurements sweep requires a linear channel")
        channel["p"] = int(value)
    elif kind == "beta":
        cfg["beta"] = float(value)
    elif kind == "density":
        cfg["graph_density"] = float(value)
    else:
        raise ConfigError(f"unknown sweep kind {kind!r}; expected one of {SWEEP_KINDS}")
    return cfg


def _run_cell(args):
    base, kind, value, trial, seed, out_dir = args
    cell_dir = Path(out_dir) / f"cell_{kind}_{value}_{trial}"
    cell_file = Path(out_dir) / f"cell_{kind}_{value}_{trial}.json"
    if cell_file.exists():
        return json.loads(cell_file.read_text())
    t0 = time.time()
    sim_cfg = _cell_config(base, kind, value)
    sim_cfg["seed"] = seed
    run_simulate(sim_cfg, cell_dir)
    em_cfg = dict(base.get("em", {}))
    em_cfg["seed"] = seed
    run_fit(cell_dir, em_cfg, cell_dir)
    metrics = run_evaluate(cell_dir / "report.json", cell_dir / "truth_graph.json")
    result = {
        "sweep_param": kind, "value": value, "trial": trial,
        "auprc": metrics["auprc"], "shd": metrics["shd"],
        "seconds": round(time.time() - t0, 3),
    }
    _atomic_write(cell_file, json.dumps(result, sort_keys=True))
    return result


def run_sweep(config: dict, jobs: int = 1, seed=None) -> list[dict]:
    kind = config.get("sweep")
    grid = config.get("grid", [])
    n_trials = int(config.get("n_trials", 1))
    out_dir = Path(config.get("out_dir", "sweep_out"))
    base = config.get("base", {})
    if kind not in SWEEP_KINDS:
        raise ConfigError(f"unknown sweep kind {kind!r}; expected one of {SWEEP_KINDS}")
    if not grid:
        raise ConfigError("sweep grid must be non-empty")
    if n_trials < 1:
        raise ConfigError("n_trials must be >= 1")
    out_dir.mkdir(parents=True, exist_ok=True)
    base_seed = _resolve_seed(int(base.get("seed", 0)), seed)

    tasks = []
    for value in grid:
        for trial in range(n_trials):
            # One seed per trial (not per grid value): grid points within a
            # trial share the graph/SCM instance, pairing the comparison.
            cell_seed = int(np.random.SeedSequence((base_seed, trial)).generate_state(1)[0])
            tasks.append((base, kind, value, trial, cell_seed, str(out_dir)))

    if jobs > 1:
        with concurrent.futures.ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_run_cell, tasks))
    else:
        results = [_run_cell(t) for t in tasks]

    lines = ["sweep_param,value,trial,auprc,shd,seconds"]
    for r in results:
        lines.append(f"{r['sweep_param']},{r['value']},{r['trial']},"
                     f"{r['auprc']!r},{r['shd']},{r['seconds']!r}")
    _atomic_write(out_dir / "results.csv", "\n".join(lines) + "\n")
    return results


# ---------------------------------------------------------------------------
# argument parsing


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="reclaim",
                                     description="Cyclic causal discovery from noisy measurements")
    sub = parser.add_subparsers(dest="command", required=True)

    p_sim = sub.add_parser("simulate", help="generate a synthetic dataset")
    p_sim.add_argument("--config", required=True)
    p_sim.add_argument("--out-dir", required=True)
    p_sim.add_argument("--seed", type=int, default=None)

    p_noise = sub.add_parser("estimate-noise", help="estimate measurement noise variances")
    p_noise.add_argument("--data-dir", required=True)
    p_noise.add_argument("--out", default=None)

    p_fit = sub.add_parser("fit", help="run the EM structure learner")
    p_fit.add_argument("--data-dir", required=True)
    p_fit.add_argument("--config", required=True)
    p_fit.add_argument("--out-dir", default=None)
    p_fit.add_argument("--resume", action="store_true")
    p_fit.add_argument("--seed", type=int, default=None)

    p_eval = sub.add_parser("evaluate", help="score a report against the true graph")
    p_eval.add_argument("--report", required=True)
    p_eval.add_argument("--truth", required=True)
    p_eval.add_argument("--out", default=None)
    p_eval.add_argument("--threshold", type=float, default=0.8)

    p_sweep = sub.add_parser("sweep", help="run a grid of simulate+fit+evaluate cells")
    p_sweep.add_argument("--config", required=True)
    p_sweep.add_argument("--jobs", type=int, default=1)
    p_sweep.add_argument("--seed", type=int, default=None)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "simulate":
            config = _load_json(args.config)
            config["seed"] = _resolve_seed(int(config.get("seed", 0)), args.seed)
            run_simulate(config, args.out_dir)
        elif args.command == "estimate-noise":
            run_estimate_noise(args.data_dir, args.out)
        elif args.command == "fit":
            run_fit(args.data_dir, _load_json(args.config), args.out_dir,
                    resume=args.resume, seed=args.seed)
        elif args.command == "evaluate":
            metrics = run_evaluate(args.report, args.truth, args.out, args.threshold)
            print(json.dumps(metrics, sort_keys=True))
        elif args.command == "sweep":
            run_sweep(_load_json(args.config), jobs=args.jobs, seed=args.seed)
    except (ConfigError, ParameterError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except IdentifiabilityError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IDENTIFIABILITY
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
