"""Experiment orchestration: warm start a discrete optimizer, run it side
by side with its enabled flows (stable / central / stationary /
gradient-penalty), log per-step metrics to CSV with a JSON metadata
companion, and expose a CLI (`run`, `sweep`, `check`).

Config files are INI-style (configparser) with [objective], [method],
[run] sections; every default is resolved into the metadata file.
"""

import configparser
import concurrent.futures
import json
import os
import sys
from dataclasses import dataclass, field, asdict

import click
import numpy as np

from . import __version__
from .flows import (DEFAULT_EPS, DEFAULT_TAU, DEFAULT_TRACK_THRESH,
                    FlowState, central_flow_advance, igr_flow_advance,
                    init_flow_state, stable_flow_advance)
from .linalg import backend_name
from .objective import (EosToyParams, make_eos_toy, make_mlp, make_quadratic,
                        sharpness)
from .optimizers import (DivergenceError, OptimizerState, effective_sharpness,
                         make_gd, make_rmsprop, make_scalar_rmsprop,
                         step_discrete)
from .predictions import (DEFAULT_BANDWIDTH, measure_whitened_displacement,
                          oscillation_variances, predicted_grad_norm_sq,
                          predicted_loss_bar)
from .stationary import stationary_nu, stationary_flow_advance

SCHEMA_VERSION = 1
KNOWN_FLOWS = ("stable", "central", "stationary", "igr")
DEFAULT_WARM_START = 12


@dataclass
class ExperimentConfig:
    objective: dict
    method: dict
    flows: list
    steps: int = 100
    warm_start_steps: int = DEFAULT_WARM_START
    eps: float = DEFAULT_EPS
    tau: float = DEFAULT_TAU
    track_thresh: float = DEFAULT_TRACK_THRESH
    bandwidth: float = DEFAULT_BANDWIDTH
    seed: int = 0
    nu_cosine: bool = False
    stationary_rank: int = 2
    out_dir: str = "."
    name: str = "experiment"

    def __post_init__(self):
        if self.steps < 1:
            raise ValueError("steps must be >= 1")
        if self.warm_start_steps < 0:
            raise ValueError("warm_start_steps must be >= 0")
        bad = [f for f in self.flows if f not in KNOWN_FLOWS]
        if bad:
            raise ValueError(f"unknown flows: {bad}")


def _parse_floats(s):
    return np.array([float(x) for x in s.replace(";", ",").split(",") if x.strip()])


def load_config(path, overrides=None):
    cp = configparser.ConfigParser()
    with open(path) as fh:
        cp.read_file(fh)
    obj = dict(cp["objective"]) if cp.has_section("objective") else {}
    meth = dict(cp["method"]) if cp.has_section("method") else {}
    run = dict(cp["run"]) if cp.has_section("run") else {}
    for key, val in (overrides or {}).items():
        sect, _, k = key.partition(".")
        target = {"objective": obj, "method": meth, "run": run}.get(sect)
        if target is None or not k:
            run[key] = val
        else:
            target[k] = val
    flows = [f.strip() for f in run.get("flows", "central").split(",") if f.strip()]
    cfg = ExperimentConfig(
        objective=obj, method=meth, flows=flows,
        steps=int(run.get("steps", 100)),
        warm_start_steps=int(run.get("warm_start_steps", DEFAULT_WARM_START)),
        eps=float(run.get("eps", DEFAULT_EPS)),
        tau=float(run.get("tau", DEFAULT_TAU)),
        track_thresh=float(run.get("track_thresh", DEFAULT_TRACK_THRESH)),
        bandwidth=float(run.get("bandwidth", DEFAULT_BANDWIDTH)),
        seed=int(run.get("seed", 0)),
        nu_cosine=run.get("nu_cosine", "false").lower() in ("1", "true", "yes"),
        stationary_rank=int(run.get("stationary_rank", 2)),
        out_dir=run.get("out_dir", "."),
        name=run.get("name", os.path.splitext(os.path.basename(path))[0]),
    )
    return cfg


def build_oracle(cfg):
    spec = cfg.objective
    kind = spec.get("kind", "eos_toy")
    if kind == "quadratic":
        H = np.diag(_parse_floats(spec["diag"])) if "diag" in spec else \
            _parse_floats(spec["matrix"]).reshape(2 * [int(spec["dim"])])
        b = _parse_floats(spec["b"]) if "b" in spec else None
        return make_quadratic(H, b)
    if kind == "eos_toy":
        extra = []
        if spec.get("extra_blocks"):
            for blk in spec["extra_blocks"].split(";"):
                extra.append(tuple(float(x) for x in blk.split(",")))
        return make_eos_toy(EosToyParams(a=float(spec.get("a", 0.01)),
                                         y_star=float(spec.get("y_star", 300.0)),
                                         extra_blocks=extra,
                                         floor=float(spec.get("floor", 0.0))))
    if kind == "mlp":
        widths = [int(x) for x in spec.get("widths", "2,16,8,1").split(",")]
        return make_mlp(widths,
                        dataset_size=int(spec.get("dataset_size", 32)),
                        seed=int(spec.get("seed", 0)),
                        teacher_scale=float(spec.get("teacher_scale", 1.0)))
    raise ValueError(f"unknown objective kind: {kind}")


def build_method(cfg):
    spec = cfg.method
    name = spec.get("name", "gd")
    eta = float(spec.get("eta", 0.01))
    if name == "gd":
        return make_gd(eta)
    beta2 = float(spec.get("beta2", 0.99))
    bc = spec.get("bias_correction", "false").lower() in ("1", "true", "yes")
    if name == "scalar_rmsprop":
        return make_scalar_rmsprop(eta, beta2, bias_correction=bc)
    if name == "rmsprop":
        return make_rmsprop(eta, beta2,
                            eps_adam=float(spec.get("eps_adam", 1e-8)),
                            bias_correction=bc)
    raise ValueError(f"unknown method: {name}")


def initial_point(cfg, oracle):
    if "w0" in cfg.objective:
        w0 = _parse_floats(cfg.objective["w0"])
        if len(w0) != oracle.dim:
            raise ValueError("w0 length mismatch")
        return w0
    if oracle.default_w0 is not None:
        return np.array(oracle.default_w0, dtype=float)
    return np.zeros(oracle.dim)


def _flow_columns(flows):
    cols = []
    for f in flows:
        cols += [f"loss_{f}", f"dist_{f}"]
        if f in ("stable", "central", "stationary"):
            cols.append(f"eff_sharpness_{f}")
    if "central" in flows:
        cols += ["k_unstable", "trX", "loss_bar_pred", "gradnorm_sq_central",
                 "gradnorm_sq_pred", "top_eff_eigs", "lambda_sigma",
                 "whitened_disp"]
    return cols


def schema_columns(flows, nu_cosine=False, has_state=False):
    cols = ["step", "loss_discrete", "gradnorm_sq_discrete",
            "eff_sharpness_discrete_midpoint"]
    if has_state:
        cols.append("nu_discrete")
    cols += _flow_columns(flows)
    if nu_cosine:
        cols.append("nu_cosine_stationary")
    cols.append("flags")
    return cols


def run_experiment(cfg):
    """Warm start, then per unit of time one discrete step and one advance
    of each enabled flow; returns (records, metadata)."""
    oracle = build_oracle(cfg)
    m = build_method(cfg)
    w = initial_point(cfg, oracle)
    state = m.init_state(oracle.dim)
    flags_global = []
    for _ in range(cfg.warm_start_steps):
        w, state = step_discrete(m, w, state, oracle)

    flows = {}
    for f in cfg.flows:
        if f == "igr":
            flows[f] = {"w": w.copy()}
        else:
            flows[f] = init_flow_state(w, state)
    has_state = m.state_dim(oracle.dim) > 0

    traj = [w.copy()]
    states = [OptimizerState(nu=state.nu.copy(), t=state.t)]
    rows = []
    truncated = None
    for t in range(cfg.steps):
        row = {"step": t,
               "loss_discrete": oracle.loss(w),
               "gradnorm_sq_discrete": float(np.sum(oracle.grad(w) ** 2)),
               "eff_sharpness_discrete_midpoint": None,
               "flags": ""}
        if has_state:
            row["nu_discrete"] = state.nu.tolist()
        step_flags = []
        for f, fsv in flows.items():
            wf = fsv["w"] if f == "igr" else fsv.w
            row[f"loss_{f}"] = oracle.loss(wf)
            row[f"dist_{f}"] = float(np.linalg.norm(w - wf))
            if f != "igr":
                if fsv.basis is not None:
                    row[f"eff_sharpness_{f}"] = float(fsv.basis.D[0])
                else:
                    row[f"eff_sharpness_{f}"] = None
        if "central" in flows:
            fs = flows["central"]
            row["k_unstable"] = fs.basis.k_unstable if fs.basis is not None else 0
            gflow = oracle.grad(fs.w)
            gn_flow = float(gflow @ gflow)
            row["gradnorm_sq_central"] = gn_flow
            row["top_eff_eigs"] = (fs.basis.D.tolist()
                                   if fs.basis is not None else [])
            if fs.X is not None and fs.basis is not None and fs.basis.k_unstable > 0:
                Pd = m.P_diag(fs.state, oracle.dim)
                U = fs.basis.U
                row["trX"] = float(np.trace(fs.X))
                row["loss_bar_pred"] = predicted_loss_bar(row["loss_central"], fs.X)
                row["gradnorm_sq_pred"] = predicted_grad_norm_sq(gn_flow, Pd, U, fs.X)
                osc = oscillation_variances(Pd, U, fs.X)
                row["lambda_sigma"] = osc.lam.tolist()
                row["whitened_disp"] = measure_whitened_displacement(
                    w, fs.w, Pd, osc.V).tolist()
            else:
                row["trX"] = 0.0
                row["loss_bar_pred"] = row["loss_central"]
                row["gradnorm_sq_pred"] = gn_flow
                row["lambda_sigma"] = []
                row["whitened_disp"] = []
        if cfg.nu_cosine and has_state and m.name == "rmsprop":
            res = stationary_nu(oracle, w, m.eta, r=cfg.stationary_rank,
                                seed=cfg.seed)
            denom = np.linalg.norm(state.nu) * np.linalg.norm(res.nu_bar)
            row["nu_cosine_stationary"] = (float(state.nu @ res.nu_bar / denom)
                                           if denom > 0 else None)
        elif cfg.nu_cosine:
            row["nu_cosine_stationary"] = None

        try:
            w, state = step_discrete(m, w, state, oracle)
            traj.append(w.copy())
            states.append(OptimizerState(nu=state.nu.copy(), t=state.t))
            for f, fsv in flows.items():
                if f == "igr":
                    fsv["w"] = igr_flow_advance(fsv["w"], m.eta, oracle)
                elif f == "stable":
                    stable_flow_advance(m, fsv, oracle)
                    if fsv.terminated and not any("terminated" in s
                                                  for s in step_flags):
                        step_flags.append(fsv.flags[-1])
                elif f == "central":
                    nflags = len(fsv.flags)
                    central_flow_advance(m, fsv, oracle, eps=cfg.eps,
                                         tau=cfg.tau,
                                         track_thresh=cfg.track_thresh)
                    step_flags += fsv.flags[nflags:]
                elif f == "stationary":
                    nflags = len(fsv.flags)
                    stationary_flow_advance(fsv, oracle, m,
                                            r=cfg.stationary_rank,
                                            eps=cfg.eps, seed=cfg.seed)
                    step_flags += fsv.flags[nflags:]
        except DivergenceError as e:
            truncated = str(e)
            row["flags"] = "; ".join(step_flags + [truncated])
            rows.append(row)
            flags_global.append(truncated)
            break
        row["flags"] = "; ".join(step_flags)
        rows.append(row)

    # midpoint metrics need w_{t+1}: fill interior rows post hoc
    for i in range(1, min(len(rows), len(traj) - 1)):
        w_hat = 0.25 * (2.0 * traj[i] + traj[i - 1] + traj[i + 1])
        rows[i]["eff_sharpness_discrete_midpoint"] = effective_sharpness(
            m, w_hat, states[i], oracle)

    metadata = {
        "schema_version": SCHEMA_VERSION,
        "package_version": __version__,
        "linalg_backend": backend_name(),
        "config": {"objective": dict(cfg.objective),
                   "method": dict(cfg.method),
                   "run": {k: v for k, v in asdict(cfg).items()
                           if k not in ("objective", "method")}},
        "constants": {"eps": cfg.eps, "tau": cfg.tau,
                      "track_thresh": cfg.track_thresh,
                      "bandwidth": cfg.bandwidth,
                      "warm_start_steps": cfg.warm_start_steps},
        "columns": schema_columns(cfg.flows, cfg.nu_cosine, has_state),
        "truncated": truncated,
        "flags": flags_global,
    }
    return rows, metadata


def _cell(value):
    if value is None:
        return ""
    if isinstance(value, (list, tuple)):
        return json.dumps(value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def emit(records, metadata, out_dir, name):
    """Write <name>.csv (stable column order, JSON-encoded list cells) and
    <name>.json metadata; returns the two paths."""
    if not records:
        raise ValueError("no records to emit")
    os.makedirs(out_dir, exist_ok=True)
    cols = metadata["columns"]
    csv_path = os.path.join(out_dir, f"{name}.csv")
    json_path = os.path.join(out_dir, f"{name}.json")
    with open(csv_path, "w", newline="") as fh:
        fh.write(",".join(cols) + "\n")
        for rec in records:
            cells = []
            for c in cols:
                v = _cell(rec.get(c))
                if "," in v or '"' in v:
                    v = '"' + v.replace('"', '""') + '"'
                cells.append(v)
            fh.write(",".join(cells) + "\n")
    with open(json_path, "w") as fh:
        json.dump(metadata, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return csv_path, json_path


def parse_csv(path):
    """Round-trip reader for harness CSVs: floats via float(), JSON cells
    decoded, empty cells -> None."""
    import csv as _csv
    with open(path, newline="") as fh:
        reader = _csv.reader(fh)
        header = next(reader)
        rows = []
        for raw in reader:
            rec = {}
            for key, cell in zip(header, raw):
                if cell == "":
                    rec[key] = None
                elif cell.startswith("["):
                    rec[key] = json.loads(cell)
                elif key in ("step", "k_unstable"):
                    rec[key] = int(cell)
                elif key == "flags":
                    rec[key] = cell
                else:
                    rec[key] = float(cell)
            rows.append(rec)
    return header, rows


def _run_one(path, overrides, out_dir):
    cfg = load_config(path, overrides)
    if out_dir:
        cfg.out_dir = out_dir
    records, metadata = run_experiment(cfg)
    return emit(records, metadata, cfg.out_dir, cfg.name)


@click.group()
def main():
    """Optimizer-flow experiment harness."""


@main.command("run")
@click.option("--config", "config_path", required=True, type=click.Path(exists=True))
@click.option("--out", "out_dir", default=None, type=click.Path())
@click.option("--seed", default=None, type=int)
@click.option("--flows", default=None, help="comma list: stable,central,stationary,igr")
@click.option("--steps", default=None, type=int)
def cli_run(config_path, out_dir, seed, flows, steps):
    """Run one experiment from a config file."""
    overrides = {}
    if seed is not None:
        overrides["run.seed"] = str(seed)
    if flows is not None:
        overrides["run.flows"] = flows
    if steps is not None:
        overrides["run.steps"] = str(steps)
    csv_path, json_path = _run_one(config_path, overrides, out_dir)
    click.echo(f"wrote {csv_path}\nwrote {json_path}")


@main.command("sweep")
@click.option("--config", "config_path", required=True, type=click.Path(exists=True))
@click.option("--vary", required=True, help="key=v1,v2,... (key as section.name)")
@click.option("--out", "out_dir", default=None, type=click.Path())
@click.option("--jobs", default=4, type=int)
def cli_sweep(config_path, vary, out_dir, jobs):
    """Run the config once per value of a swept key, concurrently."""
    key, _, vals = vary.partition("=")
    values = [v for v in vals.split(",") if v]
    if not values:
        raise click.UsageError("--vary needs key=v1,v2,...")
    base_out = out_dir or load_config(config_path).out_dir
    futures = {}
    with concurrent.futures.ThreadPoolExecutor(max_workers=max(1, jobs)) as ex:
        for v in values:
            sub = os.path.join(base_out, f"{key.replace('.', '_')}={v}")
            futures[ex.submit(_run_one, config_path, {key: v}, sub)] = v
        failures = 0
        for fut in concurrent.futures.as_completed(futures):
            try:
                csv_path, _ = fut.result()
                click.echo(f"[{key}={futures[fut]}] wrote {csv_path}")
            except Exception as e:
                failures += 1
                click.echo(f"[{key}={futures[fut]}] failed: {e}", err=True)
    if failures:
        sys.exit(1)


def _check_battery(out_dir, seed):
    """Built-in invariant battery behind `check`; returns list of
    (name, ok, detail) and writes one CSV per sub-run."""
    results = []

    cfg = ExperimentConfig(
        objective={"kind": "quadratic", "diag": "1,3"},
        method={"name": "gd", "eta": "0.1"},
        flows=["central", "stable"], steps=200, warm_start_steps=0,
        seed=seed, out_dir=out_dir, name="check_stable_regime")
    records, metadata = run_experiment(cfg)
    emit(records, metadata, out_dir, cfg.name)
    worst = max(r["dist_central"] for r in records)
    coincide = max(abs(r["loss_central"] - r["loss_stable"]) for r in records)
    ok = all(r["k_unstable"] == 0 for r in records) and coincide == 0.0
    results.append(("stable_regime_reduction", ok,
                    f"max|loss_c-loss_s|={coincide:g} max dist={worst:g}"))

    cfg = ExperimentConfig(
        objective={"kind": "eos_toy", "a": "0.01", "y_star": "300",
                   "w0": "0.5,199"},
        method={"name": "gd", "eta": "0.01"},
        flows=["central"], steps=400, warm_start_steps=12,
        seed=seed, out_dir=out_dir, name="check_gd_toy")
    records, metadata = run_experiment(cfg)
    emit(records, metadata, out_dir, cfg.name)
    locked = [r for r in records if r["eff_sharpness_central"] is not None
              and r["k_unstable"] > 0]
    dev = max(abs(r["eff_sharpness_central"] - 2.0) for r in locked[5:])
    ok = dev <= 0.2 * (0.01 / 2.0) * 200  # |S-200|<=0.2 in raw units
    results.append(("gd_sharpness_lock", ok,
                    f"max|S_eff-2|={dev:g} over {len(locked)} EOS rows"))
    drops = [records[i + 1]["loss_central"] - records[i]["loss_central"]
             for i in range(len(records) - 1)]
    ok = max(drops) <= 1e-10
    results.append(("gd_loss_monotone", ok, f"max dLoss={max(drops):g}"))

    cfg = ExperimentConfig(
        objective={"kind": "eos_toy", "a": "0.01", "y_star": "30",
                   "w0": "0.1,29"},
        method={"name": "scalar_rmsprop", "eta": "0.1", "beta2": "0.99"},
        flows=["central"], steps=300, warm_start_steps=12,
        seed=seed, out_dir=out_dir, name="check_scalar_toy")
    records, metadata = run_experiment(cfg)
    emit(records, metadata, out_dir, cfg.name)
    tail = [r for r in records[-100:] if r["k_unstable"] > 0]
    dev = max(abs(r["eff_sharpness_central"] - 2.0) for r in tail)
    ok = len(tail) > 50 and dev < 1e-3
    results.append(("scalar_equilibration", ok,
                    f"max|S_eff-2|={dev:g} over final {len(tail)} rows"))
    return results


@main.command("check")
@click.option("--out", "out_dir", default="check_out", type=click.Path())
@click.option("--seed", default=0, type=int)
def cli_check(out_dir, seed):
    """Run the built-in invariant battery; exit 0 only if all pass."""
    results = _check_battery(out_dir, seed)
    failed = 0
    for name, ok, detail in results:
        click.echo(f"{'PASS' if ok else 'FAIL'} {name}: {detail}")
        failed += 0 if ok else 1
    sys.exit(0 if failed == 0 else 1)


if __name__ == "__main__":
    main()
