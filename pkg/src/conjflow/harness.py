"""Experiment orchestration: configuration, seed fans, persistence,
aggregation, and table/plot-data emission.

Artifacts land under ``<out>/<experiment>/<model>-<spec_hash>/seed<k>/``;
the spec hash in the path guarantees a changed configuration never
overwrites older results.
"""

from __future__ import annotations

import hashlib
import json
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, asdict

import numpy as np

from . import autodiff as ad
from . import dynamics as dyn
from . import training as tr
from .checkpoint import save_checkpoint, load_checkpoint, restore_params
from .conjugate_net import NcfModel, ncf_init
from .errors import ConfigurationError

EXPERIMENTS = ("fh_forward", "hh_inverse", "lv_forward", "fh_nonlinear")
MODELS = ("mlp", "ncf", "ncf_t", "node")

HH_RESCALE = (0.1, 10.0, 10.0, 10.0)

_EXPERIMENT_DEFAULTS = {
    # FitzHugh-Nagumo forward problem, physics loss only.
    "fh_forward": dict(
        state_dim=2,
        field_params={"a": 0.0, "b": 0.0, "eps": 1.0, "current": 0.0},
        x0=(2.0, -2.0 / 3.0),
        horizon=10.0,
        epochs=2000,
        lr=1e-3,
        betas=(0.9, 0.99),
        gt_dt=1e-4,
        mlp_hidden=(32, 32, 32),
        ncf_hidden=(32, 32),
        use_data_loss=False,
        physics_component=None,
    ),
    # Hodgkin-Huxley inverse problem: V physics + noisy gating data.
    # 6000 epochs instead of the global 2000: the voltage spike needs the
    # extra optimization budget at this scale.
    "hh_inverse": dict(
        state_dim=4,
        field_params={"current": 10.0},
        x0=None,  # produced by the burn-in onto the limit cycle
        horizon=14.0,
        epochs=6000,
        lr=2.5e-3,
        betas=(0.9, 0.95),
        gt_dt=1e-3,
        mlp_hidden=(128, 128),
        ncf_hidden=(90, 90),
        use_data_loss=True,
        physics_component=0,
        data_components=(1, 4),
        burn_in=39.0,
    ),
    # Lotka-Volterra forward problem (causality stress test).
    "lv_forward": dict(
        state_dim=2,
        field_params={"alpha": 1.0, "beta": 1.0, "gamma": 1.0, "delta": 1.0},
        x0=(2.1, 2.1),
        horizon=10.0,
        epochs=2000,
        lr=1e-3,
        betas=(0.9, 0.99),
        gt_dt=1e-4,
        mlp_hidden=(32, 32, 32),
        ncf_hidden=(32, 32),
        use_data_loss=False,
        physics_component=None,
    ),
    # FitzHugh-Nagumo started near the equilibrium: the documented
    # failure regime for affine conjugates.
    "fh_nonlinear": dict(
        state_dim=2,
        field_params={"a": 0.0, "b": 0.0, "eps": 1.0, "current": 0.0},
        x0=(0.5, 0.0),
        horizon=10.0,
        epochs=2000,
        lr=1e-3,
        betas=(0.9, 0.99),
        gt_dt=1e-4,
        mlp_hidden=(32, 32, 32),
        ncf_hidden=(32, 32),
        use_data_loss=False,
        physics_component=None,
    ),
}


@dataclass
class ExperimentSpec:
    experiment: str
    model: str
    state_dim: int = 2
    field_params: dict = field(default_factory=dict)
    x0: tuple | None = None
    horizon: float = 10.0
    grid_size: int = 100
    epochs: int = 2000
    lr: float = 1e-3
    betas: tuple = (0.9, 0.99)
    seeds: tuple = (0, 1, 2, 3, 4)
    out_dir: str = "runs"
    gt_dt: float = 1e-4
    fd_step: float = 1e-3
    near_identity_scale: float = 1e-2
    ncf_hidden: tuple = (32, 32)
    ncf_layers: int = 2
    mlp_hidden: tuple = (32, 32, 32)
    fourier_rows: int = 12
    fourier_sigma: float = 2.0
    ic_mode: str = "exp"
    node_hidden: tuple = (128, 128)
    node_substeps: int = 2
    use_data_loss: bool = False
    data_components: tuple = (1, 4)
    physics_component: int | None = None
    noise_sigma: float = 0.01
    physics_weight: float = 1.0
    data_weight: float = 1.0
    burn_in: float = 39.0
    workers: int | None = None

    def __post_init__(self):
        if self.experiment not in EXPERIMENTS:
            raise ConfigurationError(f"unknown experiment {self.experiment!r}")
        if self.model not in MODELS:
            raise ConfigurationError(f"unknown model {self.model!r}")
        if self.model == "node" and self.experiment != "hh_inverse":
            raise ConfigurationError(
                "the neural-ODE baseline is only paired with hh_inverse "
                "(the forward problems give it unfair access to the exact field)")

    @classmethod
    def build(cls, experiment, model, overrides=None):
        """Spec from per-experiment defaults plus explicit overrides."""
        fields = dict(_EXPERIMENT_DEFAULTS[experiment])
        fields.update(overrides or {})
        for key in ("x0", "betas", "seeds", "ncf_hidden", "mlp_hidden",
                    "node_hidden", "data_components"):
            if key in fields and fields[key] is not None:
                fields[key] = tuple(fields[key])
        return cls(experiment=experiment, model=model, **fields)

    def to_dict(self):
        return asdict(self)

    def spec_hash(self):
        doc = {k: v for k, v in self.to_dict().items()
               if k not in ("out_dir", "workers", "seeds")}
        canon = json.dumps(doc, sort_keys=True)
        return hashlib.sha256(canon.encode()).hexdigest()[:12]

    def model_dir(self):
        return os.path.join(self.out_dir, self.experiment,
                            f"{self.model}-{self.spec_hash()}")


@dataclass
class RunResult:
    spec_hash: str
    seed: int
    l_acc: float
    l_extrap: float
    wall_time_s: float
    final_physics: float
    final_data: float
    final_total: float
    checkpoint_path: str
    diverged: bool

    def to_dict(self):
        return asdict(self)


# ---------------------------------------------------------------------------
# fields and ground truth
# ---------------------------------------------------------------------------

def build_field(spec):
    """The vector field models are trained against, in model coordinates."""
    p = spec.field_params
    if spec.experiment in ("fh_forward", "fh_nonlinear"):
        return dyn.FitzHughNagumo(**p)
    if spec.experiment == "lv_forward":
        return dyn.LotkaVolterra(**p)
    return dyn.RescaledField(dyn.HodgkinHuxley(**p), HH_RESCALE)


def ground_truth(spec):
    """Reference trajectories and the model-space initial condition.

    For hh_inverse the raw system is burned in onto the limit cycle, the
    clock restarts, and everything is exposed in rescaled coordinates.
    """
    field = build_field(spec)
    t_acc = np.linspace(0.0, spec.horizon, spec.grid_size)
    t_ext = np.linspace(0.0, 2.0 * spec.horizon, spec.grid_size)
    if spec.experiment == "hh_inverse":
        raw = field.base
        start_raw = dyn.flow_to(raw, raw.resting_state(), spec.burn_in, spec.gt_dt)
        x0 = field.rescale(start_raw)
        ref_acc = dyn.rk4_solve(raw, start_raw, t_acc, spec.gt_dt) * field.factors
        ref_ext = dyn.rk4_solve(raw, start_raw, t_ext, spec.gt_dt) * field.factors
    else:
        x0 = np.asarray(spec.x0, dtype=np.float64)
        ref_acc = dyn.rk4_solve(field, x0, t_acc, spec.gt_dt)
        ref_ext = dyn.rk4_solve(field, x0, t_ext, spec.gt_dt)
    return {
        "x0": x0, "times_acc": t_acc, "times_ext": t_ext,
        "ref_acc": ref_acc, "ref_ext": ref_ext,
    }


def build_model(spec, rng):
    if spec.model == "mlp":
        return tr.MlpPinn(spec.state_dim, rng, hidden=spec.mlp_hidden,
                          fourier_rows=spec.fourier_rows,
                          sigma=spec.fourier_sigma, ic_mode=spec.ic_mode)
    if spec.model == "node":
        return tr.NeuralOde(spec.state_dim, rng, hidden=spec.node_hidden,
                            substeps=spec.node_substeps)
    mode = "skew" if spec.model == "ncf_t" else "free"
    return NcfModel(spec.state_dim, spec.ncf_hidden, rng, topology_mode=mode,
                    n_layers=spec.ncf_layers)


def model_descriptor(spec):
    keys = ("experiment", "model", "state_dim", "ncf_hidden", "ncf_layers",
            "mlp_hidden", "fourier_rows", "fourier_sigma", "ic_mode",
            "node_hidden", "node_substeps", "near_identity_scale")
    d = {k: getattr(spec, k) for k in keys}
    d["topology_mode"] = "skew" if spec.model == "ncf_t" else (
        "free" if spec.model == "ncf" else None)
    return d


def rebuild_model(descriptor, seed):
    """Model object matching a checkpoint's architecture descriptor
    (fixed buffers such as Fourier frequencies regenerate from the seed)."""
    spec = ExperimentSpec.build(descriptor["experiment"], descriptor["model"])
    for key in ("state_dim", "ncf_hidden", "ncf_layers", "mlp_hidden",
                "fourier_rows", "fourier_sigma", "ic_mode", "node_hidden",
                "node_substeps"):
        setattr(spec, key, tuple(descriptor[key]) if isinstance(descriptor[key], list)
                else descriptor[key])
    return build_model(spec, ad.make_rng(seed))


# ---------------------------------------------------------------------------
# single-seed run
# ---------------------------------------------------------------------------

def run_single_seed(spec, seed, gt=None):
    """Train one model instance; persist checkpoint, history, trajectories,
    and the result record.  Returns a RunResult."""
    gt = gt or ground_truth(spec)
    field = build_field(spec)
    x0 = gt["x0"]
    t_acc = gt["times_acc"]

    model = build_model(spec, ad.make_rng(seed))
    if spec.model in ("ncf", "ncf_t"):
        ncf_init(model, field, x0, init_scale=spec.near_identity_scale)

    samples = None
    if spec.use_data_loss:
        lo, hi = spec.data_components
        noise_rng = ad.make_rng(seed, stream=1)
        clean = gt["ref_acc"][:, lo:hi].T
        samples = clean + noise_rng.normal(0.0, spec.noise_sigma, size=clean.shape)

    def losses():
        branches = model.grid_eval(x0, t_acc, spec.fd_step)
        physics = tr.residual_loss(branches, field, spec.fd_step,
                                   component=spec.physics_component)
        data = None
        if samples is not None:
            data = tr.sample_fit_loss(branches, samples, spec.data_components)
        return physics, data

    t0 = time.perf_counter()
    outcome = tr.train(model, losses, epochs=spec.epochs, lr=spec.lr,
                       betas=spec.betas, physics_weight=spec.physics_weight,
                       data_weight=spec.data_weight)
    wall = time.perf_counter() - t0

    l_acc, l_ext = tr.eval_metrics(model, x0, t_acc, gt["ref_acc"],
                                   gt["times_ext"], gt["ref_ext"])
    last = outcome.history[-1] if outcome.history else tr.LossReport(0, np.nan, np.nan, np.nan)
    diverged = outcome.diverged or not (np.isfinite(l_acc) and np.isfinite(l_ext))

    run_dir = os.path.join(spec.model_dir(), f"seed{seed}")
    os.makedirs(run_dir, exist_ok=True)
    ckpt_path = os.path.join(run_dir, "checkpoint.json")
    save_checkpoint(ckpt_path, model_descriptor(spec), seed, model.params())
    tr.export_history_csv(os.path.join(run_dir, "history.csv"), outcome.history)
    dyn.export_trajectory_csv(os.path.join(run_dir, "trajectory_train.csv"),
                              t_acc, model.trajectory(x0, t_acc))
    dyn.export_trajectory_csv(os.path.join(run_dir, "trajectory_extrap.csv"),
                              gt["times_ext"], model.trajectory(x0, gt["times_ext"]))
    if samples is not None:
        dyn.export_trajectory_csv(os.path.join(run_dir, "samples.csv"),
                                  t_acc, samples.T,
                                  column_names=[f"s{i}" for i in range(samples.shape[0])])

    result = RunResult(
        spec_hash=spec.spec_hash(), seed=seed, l_acc=l_acc, l_extrap=l_ext,
        wall_time_s=wall, final_physics=last.physics_loss,
        final_data=last.data_loss, final_total=last.total,
        checkpoint_path=ckpt_path, diverged=diverged,
    )
    with open(os.path.join(run_dir, "result.json"), "w") as fh:
        json.dump({"spec": spec.to_dict(), **result.to_dict()}, fh, indent=1)
    return result


def _seed_task(spec_dict, seed):
    spec = ExperimentSpec(**_retuple(spec_dict))
    return run_single_seed(spec, seed).to_dict()


def _retuple(spec_dict):
    out = dict(spec_dict)
    for key in ("x0", "betas", "seeds", "ncf_hidden", "mlp_hidden",
                "node_hidden", "data_components"):
        if out.get(key) is not None:
            out[key] = tuple(out[key])
    return out


# ---------------------------------------------------------------------------
# experiment fan and aggregation
# ---------------------------------------------------------------------------

def run_experiment(spec):
    """All seeds of one (experiment, model) pair plus the aggregate.

    Diverged seeds are recorded but excluded from aggregates.  Seeds fan
    out to a process pool bounded by ``spec.workers`` (defaults to the
    machine's core count).
    """
    workers = spec.workers or os.cpu_count() or 1
    workers = min(workers, len(spec.seeds))
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            futures = [pool.submit(_seed_task, spec.to_dict(), s) for s in spec.seeds]
            results = [RunResult(**f.result()) for f in futures]
    else:
        gt = ground_truth(spec)
        results = [run_single_seed(spec, s, gt) for s in spec.seeds]

    aggregate = aggregate_results(spec, results)
    os.makedirs(spec.model_dir(), exist_ok=True)
    with open(os.path.join(spec.model_dir(), "aggregate.json"), "w") as fh:
        json.dump(aggregate, fh, indent=1)
    return results, aggregate


def aggregate_results(spec, results):
    ok = [r for r in results if not r.diverged]
    diverged = len(results) - len(ok)

    def stats(values):
        if not values:
            return {"mean": None, "std": None}
        arr = np.asarray(values, dtype=np.float64)
        std = float(arr.std(ddof=1)) if arr.size > 1 else 0.0
        return {"mean": float(arr.mean()), "std": std}

    params = build_model(spec, ad.make_rng(0)).param_count()
    return {
        "experiment": spec.experiment,
        "model": spec.model,
        "spec_hash": spec.spec_hash(),
        "param_count": params,
        "seeds": list(spec.seeds),
        "n_runs": len(results),
        "n_diverged": diverged,
        "l_acc": stats([r.l_acc for r in ok]),
        "l_extrap": stats([r.l_extrap for r in ok]),
        "wall_time_s": stats([r.wall_time_s for r in ok]),
    }


# ---------------------------------------------------------------------------
# table and plot data
# ---------------------------------------------------------------------------

def collect_aggregates(in_dir):
    """aggregate.json documents found under a results directory, keyed by
    (experiment, model)."""
    found = {}
    for root, _dirs, files in os.walk(in_dir):
        if "aggregate.json" in files:
            with open(os.path.join(root, "aggregate.json")) as fh:
                agg = json.load(fh)
            found[(agg["experiment"], agg["model"])] = agg
    return found


def expected_models(experiment):
    return ("mlp", "ncf", "ncf_t", "node") if experiment == "hh_inverse" \
        else ("mlp", "ncf", "ncf_t")


def emit_table(in_dir, csv_path=None):
    """Formatted per-experiment tables plus a CSV mirror.

    Returns (text, gap_count); models with no completed aggregate are
    marked explicitly and counted as gaps.
    """
    aggs = collect_aggregates(in_dir)
    if not aggs:
        raise FileNotFoundError(f"no aggregate.json files under {in_dir!r}")
    experiments = sorted({exp for exp, _ in aggs})
    lines = []
    rows = []
    gaps = 0

    def fmt(st):
        if st["mean"] is None:
            return "diverged"
        return f"{st['mean']:.1e} +- {st['std']:.1e}"

    for exp in experiments:
        lines.append(f"Experiment: {exp}")
        lines.append(f"{'Model':8s} {'Params':>7s} {'L_acc':>22s} {'L_extrap':>22s} {'Time(s)':>22s}")
        for model in expected_models(exp):
            agg = aggs.get((exp, model))
            if agg is None:
                lines.append(f"{model:8s} {'--':>7s} {'-- missing --':>22s} {'-- missing --':>22s} {'':>22s}")
                gaps += 1
                rows.append([exp, model] + [""] * 7)
                continue
            note = f" ({agg['n_diverged']} diverged)" if agg["n_diverged"] else ""
            lines.append(
                f"{model:8s} {agg['param_count']:>7d} {fmt(agg['l_acc']):>22s} "
                f"{fmt(agg['l_extrap']):>22s} {fmt(agg['wall_time_s']):>22s}{note}")
            rows.append([
                exp, model, agg["param_count"],
                agg["l_acc"]["mean"], agg["l_acc"]["std"],
                agg["l_extrap"]["mean"], agg["l_extrap"]["std"],
                agg["wall_time_s"]["mean"], agg["wall_time_s"]["std"]])
        lines.append("")

    if csv_path:
        with open(csv_path, "w") as fh:
            fh.write("experiment,model,params,l_acc_mean,l_acc_std,"
                     "l_extrap_mean,l_extrap_std,time_mean,time_std\n")
            for row in rows:
                fh.write(",".join("" if v == "" else f"{v}" for v in row) + "\n")
    return "\n".join(lines), gaps


def emit_plotdata(run_dir, out_path=None, points=200):
    """Model-vs-reference trajectories over [0, 2T] with a training
    boundary marker column; returns the output path."""
    result_path = os.path.join(run_dir, "result.json")
    with open(result_path) as fh:
        doc = json.load(fh)
    spec = ExperimentSpec(**_retuple(doc["spec"]))
    seed = doc["seed"]

    descriptor, ckpt_seed, arrays = load_checkpoint(os.path.join(run_dir, "checkpoint.json"))
    model = rebuild_model(descriptor, ckpt_seed)
    restore_params(model, arrays)

    field = build_field(spec)
    times = np.linspace(0.0, 2.0 * spec.horizon, points)
    if spec.experiment == "hh_inverse":
        raw = field.base
        start_raw = dyn.flow_to(raw, raw.resting_state(), spec.burn_in, spec.gt_dt)
        x0 = field.rescale(start_raw)
        ref = dyn.rk4_solve(raw, start_raw, times, spec.gt_dt) * field.factors
    else:
        x0 = np.asarray(spec.x0, dtype=np.float64)
        ref = dyn.rk4_solve(field, x0, times, spec.gt_dt)
    pred = model.trajectory(x0, times)

    n = spec.state_dim
    out_path = out_path or os.path.join(run_dir, "plotdata.csv")
    header = (["t"] + [f"ref{i+1}" for i in range(n)]
              + [f"model{i+1}" for i in range(n)] + ["in_train_horizon"])
    with open(out_path, "w") as fh:
        fh.write(",".join(header) + "\n")
        for t, r, p in zip(times, ref, pred):
            marker = 1 if t <= spec.horizon else 0
            vals = [t, *r, *p]
            fh.write(",".join(f"{v:.17g}" for v in vals) + f",{marker}\n")
    return out_path
