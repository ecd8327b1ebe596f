"""Command-line batch driver.

    artifact <subcommand> [--config PATH] [--out DIR] [--threads N] [--seed S]

Configs are JSON objects. A config carrying ``"criterion": N`` runs the
matching acceptance experiment; otherwise the subcommand's generic
runner reads its own keys (documented in the README). Every run writes
its CSV/JSON outputs, plot scripts and a ``manifest.json`` to ``--out``.
Exit codes: 0 ok, 2 configuration error, 3 acceptance failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import platform
import sys
import time
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
import scipy
import scipy.fft

from . import __version__
from .bv_fields import field_from_config
from .core_model import ConfigurationError, DiscreteMeasure, DomainError, ScalarGrid, level_curve
from .experiments import CRITERIA, run_criterion
from .flow_engine import ParticleCloud, counterexample_flows, integrate_flow
from .maximal_ops import SweepConfig, hl_maximal, kakeya_maximal
from .oracles import riesz_square_multiplier_oracle
from .singular_ops import riesz_squared_kernel, truncated_convolution
from .stability_lab import reports_to_csv, stability_experiment
from .transport_solver import TransportProblem, grid_to_csv, solve_lagrangian

SUBCOMMANDS = ("maximal", "singular", "flow", "stability", "transport", "counterexample", "all-acceptance")
EXIT_OK, EXIT_CONFIG, EXIT_ACCEPTANCE = 0, 2, 3
CONFIG_DIR = Path(__file__).resolve().parents[2] / "configs"


@dataclass
class ExperimentConfig:
    subcommand: str
    body: dict = field(default_factory=dict)
    seed: int = 0

    def __post_init__(self):
        if self.subcommand not in SUBCOMMANDS:
            raise ConfigurationError(f"unknown subcommand {self.subcommand!r}")
        want = self.body.get("subcommand")
        if want is not None and want != self.subcommand:
            raise ConfigurationError(f"config is for {want!r}, not {self.subcommand!r}")
        crit = self.body.get("criterion")
        if crit is not None and crit not in CRITERIA:
            raise ConfigurationError(f"unknown criterion {crit!r}")
        _validate_grids(self.body)

    def digest(self) -> str:
        canon = json.dumps({"subcommand": self.subcommand, "body": self.body, "seed": self.seed},
                           sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canon.encode()).hexdigest()


_GRID_KEYS = ("lambdas", "deltas", "gammas", "eps", "sigmas", "times")


def _validate_grids(obj):
    if isinstance(obj, dict):
        for k, v in obj.items():
            if k in _GRID_KEYS and isinstance(v, list) and not v:
                raise ConfigurationError(f"grid {k!r} is empty")
            if k in ("h", "h_p", "dt", "T") and isinstance(v, (int, float)) and not v > 0:
                raise ConfigurationError(f"{k!r} must be positive")
            _validate_grids(v)
    elif isinstance(obj, list):
        for v in obj:
            _validate_grids(v)


# ------------------------------------------------------------------ runners


def _write(out: Path, name: str, text: str, outputs: dict):
    (out / name).write_text(text)
    outputs[name] = hashlib.sha256(text.encode()).hexdigest()


def _csv(header: str, rows) -> str:
    return header + "\n" + "".join(",".join(f"{v:.17g}" for v in r) + "\n" for r in rows)


def _measure(body: dict, rng: np.random.Generator) -> DiscreteMeasure:
    kind = body.get("measure", "dirac")
    k = int(body.get("k", 2))
    if kind == "dirac":
        return DiscreteMeasure.dirac(np.zeros(k), float(body.get("mass", 1.0)), k)
    if kind == "random_atoms":
        n = int(body.get("n_atoms", 10))
        return DiscreteMeasure(rng.uniform(-0.5, 0.5, (n, k)), rng.uniform(0.1, 1.0, n), k=k)
    raise ConfigurationError(f"unknown measure {kind!r}")


def _run_maximal(body, out, rng, outputs):
    k = int(body.get("k", 1))
    lo, hi = body.get("grid_lo", [-2.0] * k), body.get("grid_hi", [2.0] * k)
    h = float(body.get("h", 1e-4 if k == 1 else 0.01))
    lams = body.get("lambdas", [2.0 ** j for j in range(7)])
    g = ScalarGrid.box(lo, hi, h)
    cfg = SweepConfig(float(body.get("rho_min", h / 10)), float(body.get("rho_max", 4.0)), g.centers())
    mu = _measure(body, rng)
    eps = body.get("eps")
    summary = {}
    if eps is None:
        lc = level_curve(g.with_values(hl_maximal(mu, k, cfg)), lams)
        _write(out, "level_curve.csv", _csv("lambda,value", zip(lc.lambdas, lc.values)), outputs)
        summary["max_dev_from_1"] = float(np.max(np.abs(lc.values - 1)))
    else:
        if k != 2:
            raise ConfigurationError("cone operators need k = 2")
        rows = []
        for e in eps:
            lc = level_curve(g.with_values(kakeya_maximal(mu, float(e), cfg)), lams)
            rows.append((float(e), float(lc.values.max())))
            _write(out, f"level_curve_eps{e:g}.csv", _csv("lambda,value", zip(lc.lambdas, lc.values)), outputs)
        _write(out, "eps_sweep.csv", _csv("eps,statistic", rows), outputs)
    return summary


def _run_singular(body, out, rng, outputs):
    n = int(body.get("n", 128))
    L = float(body.get("half_width", 1.0))
    s = float(body.get("sigma", 0.1))
    h = 2 * L / n
    g = ScalarGrid.from_function(lambda q: np.exp(-np.sum(q ** 2, 1) / (2 * s * s)), [-L, -L], [L, L], h)
    j = int(body.get("j", 1))
    v = truncated_convolution(riesz_squared_kernel(j), g, h / 2)
    ref = riesz_square_multiplier_oracle(g, j)
    _write(out, "singular.csv", grid_to_csv(v), outputs)
    return {"l2_rel_err_vs_multiplier": float(np.linalg.norm(v.values - ref) / np.linalg.norm(ref))}


def _cloud(body) -> ParticleCloud:
    c = body.get("cloud", {})
    return ParticleCloud.lattice(c.get("lo", [-1, -1]), c.get("hi", [1, 1]), float(c.get("h", 0.1)))


def _run_flow(body, out, rng, outputs):
    spec = field_from_config(body.get("field", {"kind": "rotation"}))
    cl = _cloud(body)
    T = float(body.get("T", 2 * np.pi))
    dt = float(body.get("dt", 1e-3))
    every = int(body.get("store_every", max(1, int(round(T / dt / 10)))))
    flow = integrate_flow(spec, cl, 0.0, T, dt, store_every=every)
    _write(out, "trajectories.csv", flow.to_csv(), outputs)
    summary = {"closure_error": float(np.abs(flow.final - cl.points).max()), "escaped": int(flow.escaped.sum())}
    exact = _exact_flow(spec.kind, cl.points, T)
    if exact is not None:
        summary["return_error"] = float(np.abs(flow.final - exact).max())
    return summary


def _exact_flow(kind: str, X: np.ndarray, T: float) -> Optional[np.ndarray]:
    if kind == "rotation":
        c, s = np.cos(T), np.sin(T)
        return np.stack([c * X[:, 0] - s * X[:, 1], s * X[:, 0] + c * X[:, 1]], 1)
    if kind == "linear":
        return np.exp(T) * X
    if kind == "zero":
        return X.copy()
    return None


def _run_stability(body, out, rng, outputs):
    B = field_from_config(body.get("base", {"kind": "shear"}))
    B1 = field_from_config(body["B1"]) if "B1" in body else B
    B2 = field_from_config(body["B2"]) if "B2" in body else B
    res = stability_experiment(B, B1, B2, body.get("params", {}))
    _write(out, "stability.csv", reports_to_csv(res.reports), outputs)
    return {"l1_diff": res.l1_diff}


def _run_transport(body, out, rng, outputs):
    spec = field_from_config(body.get("field", {"kind": "rotation"}))
    c, w = np.asarray(body.get("center", [0.3, 0.0])), float(body.get("width", 0.15))
    u0 = lambda X: np.exp(-np.sum((X - c) ** 2, 1) / (2 * w * w))
    g = ScalarGrid.from_function(u0, body.get("grid_lo", [-1, -1]), body.get("grid_hi", [1, 1]),
                                 float(body.get("h", 1 / 32)))
    P = TransportProblem(g, spec, float(body.get("T", 1.0)), times=body.get("times"), u0_fn=u0)
    S = solve_lagrangian(P)
    for t, gr in zip(S.times, S.grids):
        _write(out, f"u_t{t:g}.csv", grid_to_csv(gr), outputs)
    gap = max(float(np.nanmax(np.abs(a.values - b.values))) for a, b in zip(S.grids, S.alt_grids))
    return {"formula_gap": gap, "flagged": int(sum(f.sum() for f in S.flagged))}


def _run_counterexample(body, out, rng, outputs):
    cl = _cloud({"cloud": body.get("cloud", {"lo": [-1, -1], "hi": [1, 1], "h": 0.05})})
    T = float(body.get("T", 1.0))
    flows = {r: counterexample_flows(cl, T, r) for r in body.get("rules", ["A", "B"])}
    for r, f in flows.items():
        _write(out, f"flow_{r}.csv", f.to_csv(), outputs)
    summary = {}
    if len(flows) == 2:
        a, b = flows.values()
        d = np.linalg.norm(a.final - b.final, axis=1)
        rows = [(p[0], p[1], v) for p, v in zip(cl.points, d)]
        _write(out, "disagreement.csv", _csv("x1,x2,distance", rows), outputs)
        summary["disagreement_fraction"] = float(np.mean(d > 1e-9))
    return summary


_CSV_WRITERS = {
    1: lambda m: ("level_curve_c01.csv", _csv("lambda,value", zip(2.0 ** np.arange(len(m["curve"])), m["curve"]))),
    2: lambda m: ("eps_sweep_c02.csv", _csv("eps,statistic", zip((0.4, 0.2, 0.1, 0.05), m["tails"]))),
    3: lambda m: ("eps_sweep_c03.csv", _csv("eps,statistic", zip((0.4, 0.2, 0.1, 0.05), m["tails"]))),
    10: lambda m: ("stability_c10.csv", _csv("sigma,delta,superlevel,l1_diff", m["cells"])),
}


def _run_criterion(number: int, params: dict, out: Path, outputs: dict):
    res = run_criterion(number, params)
    # runtime lives in the manifest so result files stay byte-identical across runs
    record = {k: v for k, v in res.to_json().items() if k != "runtime"}
    _write(out, f"criterion_{number:02d}.json", json.dumps(record, indent=2, sort_keys=True) + "\n", outputs)
    if number in _CSV_WRITERS:
        name, text = _CSV_WRITERS[number](res.metrics)
        _write(out, name, text, outputs)
    return res


def _acceptance_configs(body: dict):
    listed = body.get("configs")
    paths = [Path(p) for p in listed] if listed else sorted(CONFIG_DIR.glob("criterion_*.json"))
    if not paths:
        raise ConfigurationError("no acceptance configs found")
    for p in paths:
        try:
            cfg = json.loads(Path(p).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigurationError(f"cannot read {p}: {exc}") from exc
        yield cfg


RUNNERS = {
    "maximal": _run_maximal,
    "singular": _run_singular,
    "flow": _run_flow,
    "stability": _run_stability,
    "transport": _run_transport,
    "counterexample": _run_counterexample,
}


def run(config: ExperimentConfig, out: Path, threads: int = 1, verbose: bool = True) -> int:
    """Execute one config; returns the process exit code."""
    out.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(config.seed)
    outputs, runtimes, summary = {}, {}, {}
    status = EXIT_OK
    with warnings.catch_warnings(record=True) as caught, scipy.fft.set_workers(max(1, threads)):
        warnings.simplefilter("always")
        t0 = time.perf_counter()
        if config.subcommand == "all-acceptance":
            results = []
            for cfg in _acceptance_configs(config.body):
                params = dict(cfg.get("params", {}))
                if cfg.get("uses_seed") and config.seed:
                    params["seed"] = config.seed
                res = _run_criterion(int(cfg["criterion"]), params, out, outputs)
                runtimes[f"criterion_{res.number:02d}"] = res.runtime
                results.append(res)
                if verbose:
                    print(res.line(), flush=True)
            summary["passed"] = [r.number for r in results if r.passed]
            summary["failed"] = [r.number for r in results if not r.passed]
            if summary["failed"]:
                status = EXIT_ACCEPTANCE
        elif "criterion" in config.body:
            params = dict(config.body.get("params", {}))
            if config.body.get("uses_seed") and config.seed:
                params["seed"] = config.seed
            res = _run_criterion(int(config.body["criterion"]), params, out, outputs)
            runtimes[f"criterion_{res.number:02d}"] = res.runtime
            summary["passed"] = bool(res.passed)
            if verbose:
                print(res.line(), flush=True)
            if not res.passed:
                status = EXIT_ACCEPTANCE
        else:
            summary.update(RUNNERS[config.subcommand](config.body, out, rng, outputs))
        runtimes["total"] = time.perf_counter() - t0
    skipped = emit_plots(out)
    manifest = {
        "subcommand": config.subcommand,
        "config_hash": config.digest(),
        "config": config.body,
        "seed": config.seed,
        "threads": threads,
        "versions": {"artifact": __version__, "numpy": np.__version__, "scipy": scipy.__version__,
                     "python": platform.python_version()},
        "runtimes": runtimes,
        "outputs": outputs,
        "summary": summary,
        "warnings": sorted({f"{w.category.__name__}: {w.message}" for w in caught}),
        "warning_count": len(caught),
        "skipped_figures": skipped,
        "exit_code": status,
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True, default=str) + "\n")
    return status


# ------------------------------------------------------------------ plots

_PLOT_HEAD = "import csv\nimport matplotlib.pyplot as plt\n\n\ndef load(path):\n    with open(path) as fh:\n        rows = list(csv.DictReader(fh))\n    return {k: [float(r[k]) for r in rows] for k in rows[0]}\n\n\n"


def emit_plots(result_dir) -> list:
    """Write one matplotlib script per figure whose CSVs exist; return skipped figure names.

    Figures: level curves (log-log), eps-scaling overlay, Phi/|log delta| vs
    delta, flow disagreement map. A ``skipped_figures.json`` report lists
    the figures with no input.
    """
    d = Path(result_dir)
    d.mkdir(parents=True, exist_ok=True)
    names = sorted(p.name for p in d.glob("*.csv"))
    figs = {
        "level_curves": [n for n in names if n.startswith("level_curve")],
        "eps_scaling": [n for n in names if n.startswith("eps_sweep")],
        "phi_vs_delta": [n for n in names if n.startswith("stability")],
        "disagreement_map": [n for n in names if n.startswith("disagreement")],
    }
    bodies = {
        "level_curves": ("lambda", "value", "loglog", "lambda", "lambda * |{M > lambda}|"),
        "eps_scaling": ("eps", "statistic", "loglog", "eps", "level statistic"),
        "phi_vs_delta": ("delta", None, "semilogx", "delta", "value"),
    }
    skipped = []
    for fig, files in figs.items():
        if not files:
            skipped.append(fig)
            continue
        lines = [_PLOT_HEAD]
        if fig == "disagreement_map":
            for f in files:
                lines.append(f"d = load({f!r})\nplt.scatter(d['x1'], d['x2'], c=d['distance'], s=2)\n")
            lines.append("plt.colorbar(label='|X_A - X_B|')\nplt.gca().set_aspect('equal')\n")
        else:
            x, y, kind, xl, yl = bodies[fig]
            for f in files:
                if fig == "phi_vs_delta":
                    cols = ("phi_over_logdelta" if "phi_over_logdelta" in _header(d / f) else "superlevel")
                    lines.append(f"d = load({f!r})\nplt.{kind}(d['delta'], d[{cols!r}], 'o-', label={f!r})\n")
                else:
                    lines.append(f"d = load({f!r})\nplt.{kind}(d[{x!r}], d[{y!r}], 'o-', label={f!r})\n")
            lines.append(f"plt.xlabel({xl!r})\nplt.ylabel({yl!r})\nplt.legend()\n")
        lines.append(f"plt.savefig({fig + '.png'!r}, dpi=150)\n")
        (d / f"plot_{fig}.py").write_text("".join(lines))
    (d / "skipped_figures.json").write_text(json.dumps({"skipped": skipped}, indent=2) + "\n")
    return skipped


def _header(path: Path) -> str:
    with open(path) as fh:
        return fh.readline()


# ------------------------------------------------------------------ entry point


def _parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="artifact", description="Maximal-function, flow and transport experiments")
    sub = ap.add_subparsers(dest="subcommand", required=True)
    for name in SUBCOMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("--config", type=Path)
        sp.add_argument("--out", type=Path)
        sp.add_argument("--threads", type=int, default=1)
        sp.add_argument("--seed", type=int, default=None)
        if name == "maximal":
            sp.add_argument("--measure")
            sp.add_argument("--k", type=int)
        if name == "flow":
            sp.add_argument("--field")
            sp.add_argument("--T", type=float)
    return ap


def _error(kind: str, msg: str) -> int:
    print(json.dumps({"error": kind, "message": msg}), file=sys.stderr)
    return EXIT_CONFIG


def main(argv: Optional[list] = None) -> int:
    args = _parser().parse_args(argv)
    try:
        body = {}
        if args.config is not None:
            try:
                body = json.loads(args.config.read_text())
            except (OSError, json.JSONDecodeError) as exc:
                raise ConfigurationError(f"cannot read config: {exc}") from exc
            if not isinstance(body, dict):
                raise ConfigurationError("config must be a JSON object")
        if getattr(args, "measure", None):
            body["measure"] = args.measure
        if getattr(args, "k", None) is not None:
            body["k"] = args.k
        if getattr(args, "field", None):
            body["field"] = {"kind": args.field}
        if getattr(args, "T", None) is not None:
            body["T"] = args.T
        seed = args.seed if args.seed is not None else int(body.get("seed", 0))
        if not 0 <= seed < 2 ** 64:
            raise ConfigurationError("seed must be an unsigned 64-bit integer")
        if args.threads < 1:
            raise ConfigurationError("threads must be >= 1")
        cfg = ExperimentConfig(args.subcommand, body, seed)
        out = args.out or Path(os.environ.get("ARTIFACT_OUT", "results")) / args.subcommand
        return run(cfg, out, args.threads)
    except (ConfigurationError, DomainError, KeyError, TypeError) as exc:
        return _error(type(exc).__name__, str(exc).replace("\n", " "))


if __name__ == "__main__":
    sys.exit(main())
