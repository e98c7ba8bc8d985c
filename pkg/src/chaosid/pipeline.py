"""End-to-end experiment stages driven by an :class:`~chaosid.config.ExperimentConfig`.

Each stage is a plain function so the CLI, the reproduce grid and the tests
share one code path. Every file written carries the config hash.
"""

import logging
import os
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from . import baselines, enks, evaluation, io, observation, surrogate, voden
from .config import ConfigError
from .dynamics import Lorenz63Params, Trajectory, lorenz63_system, simulate
from .errors import ChaosIdError, NumericError
from .optim import RMSprop

log = logging.getLogger(__name__)

TRUTH_FILE = "truth.csv"
HOLDOUT_FILE = "holdout.csv"
OBS_FILE = "observations.csv"
CHECKPOINT_FILE = "checkpoint.json"
HISTORY_FILE = "history.csv"
SMOOTHER_FILE = "smoother.csv"
METRICS_FILE = "metrics.json"
ATTRACTOR_FILE = "attractor.csv"

# smallest observation-noise variance handed to the filter when the data are clean
MIN_OBS_VAR = 1e-6


def _params(cfg):
    s = cfg.system
    return Lorenz63Params(s.sigma, s.rho, s.beta)


def make_truth(cfg, holdout=False):
    """Spun-up Lorenz-63 run from the configured x0 jittered by the (holdout) seed."""
    sim = cfg.simulation
    seed = sim.holdout_seed if holdout else sim.seed
    n_steps = sim.holdout_T if holdout else sim.T
    rng = np.random.default_rng(seed)
    x0 = np.asarray(sim.x0, dtype=np.float64) + sim.ic_jitter * rng.standard_normal(3)
    return simulate(lorenz63_system(_params(cfg)), x0, sim.dt, n_steps, sim.spinup)


def flow_config(cfg):
    period = cfg.corruption.period if cfg.corruption.scenario == "s1" else 1
    return surrogate.FlowConfig(cfg.simulation.dt, period)


def make_observations(cfg, truth):
    c = cfg.corruption
    spec = observation.NoiseSpec(c.variance, c.seed)
    if c.scenario == "full":
        return observation.apply_noise(truth, spec)
    if c.scenario == "s1":
        return observation.decimate(observation.apply_noise(truth, spec), c.period)
    # mask stream seeded apart from the noise stream
    mask = observation.mask_irregular(len(truth), truth.dimension, c.rate, [c.seed, 1])
    return observation.apply_noise(truth, spec, mask=mask)


def _theta_init(seed):
    return surrogate.SurrogateParams.random(np.random.default_rng(seed))


def fit(cfg, obs):
    """Train the configured method; returns (checkpoint dict, history header, rows, extras)."""
    fc = flow_config(cfg)
    method = cfg.method
    ckpt = {"method": method, "config_hash": cfg.hash()}
    header, rows, extras = None, [], {}
    if method == "enks-em":
        e = cfg.enks_em
        ecfg = enks.EnksConfig(
            n_members=e.n_members, model_noise_var=e.model_noise_var,
            obs_noise_var=max(cfg.corruption.variance, MIN_OBS_VAR), inflation=e.inflation,
            seed=e.seed, init_var=e.init_var, adaptive_model_noise=e.adaptive_model_noise)
        res = enks.enks_em(obs, _theta_init(e.seed), fc, ecfg, e.n_em_iters, e.n_m_steps, e.lr, e.lr_final)
        ckpt["model"] = surrogate.checkpoint_dict(res.theta, fc)
        header = ["iter", "model_noise_var", "loss_before", "loss_m"]
        rows = [[r[k] for k in header] for r in res.history]
        extras["smoothing"] = res.smoothing
    elif method == "voden":
        v = cfg.voden
        rng = np.random.default_rng(v.seed)
        theta0 = surrogate.SurrogateParams.random(rng)
        phi0 = voden.init_phi(rng)
        vcfg = voden.VodenConfig(lam=v.lam, n_e=v.n_e, n_m=v.n_m, epochs=v.epochs, lr=v.lr,
                                 lr_m=v.lr_m, seed=v.seed, precondition=v.precondition)
        res = voden.voden_train(obs, theta0, phi0, vcfg, fc)
        ckpt["model"] = surrogate.checkpoint_dict(res.theta, fc)
        ckpt["inference"] = voden.checkpoint_dict(res.theta, res.phi, res.norm, fc, vcfg)
        ckpt["loss_e_initial"] = res.loss_e_initial
        ckpt["loss_e_final"] = res.loss_e_final
        header = ["epoch", "loss_e", "loss_m", "e_steps", "m_steps"]
        rows = [[r[k] for k in header] for r in res.history]
    elif method == "binn":
        b = cfg.binn
        y = observation.linear_interpolate(obs)
        sched = surrogate.geometric_schedule(b.lr, b.lr_final, b.n_steps)
        theta, losses = baselines.fit_binn(y, _theta_init(b.seed), fc, b.n_steps, RMSprop(lr=b.lr), sched)
        ckpt["model"] = surrogate.checkpoint_dict(theta, fc)
        header = ["step", "loss_m"]
        rows = [[k, v] for k, v in enumerate(losses)]
    elif method in ("sr", "sr-hann"):
        s = cfg.sr
        y = observation.linear_interpolate(obs)
        if method == "sr-hann":
            y = baselines.hanning_smooth(y, s.window)
        sm = baselines.sparse_fit(y, fc.delta, s.threshold, s.max_sweeps)
        ckpt["sparse"] = sm.to_json()
        ckpt["model"] = surrogate.checkpoint_dict(sm.to_surrogate(), fc)
    elif method == "af":
        y = observation.linear_interpolate(obs)
        ckpt["model"] = {"k": cfg.af.k, "delta": fc.delta, "states": y.tolist()}
    else:
        raise ConfigError("method", f"unknown method {method!r}")
    return ckpt, header, rows, extras


def load_model(ckpt):
    """One-step map with a ``delta`` attribute from a checkpoint dict."""
    if ckpt["method"] == "af":
        m = ckpt["model"]
        catalog = baselines.AnalogCatalog.from_series(np.asarray(m["states"], dtype=np.float64))
        return baselines.AnalogModel(catalog, int(m["k"]), float(m["delta"]))
    theta, fc = surrogate.from_checkpoint_dict(ckpt["model"])
    return surrogate.SurrogateModel(theta, fc)


def evaluate(cfg, ckpt, holdout, attractor_path=None):
    """Forecast / Lyapunov metrics dict; optionally exports the free-run attractor."""
    chash = cfg.hash()
    if ckpt.get("config_hash") != chash:
        raise ConfigError("checkpoint", f"config hash {ckpt.get('config_hash')} does not match {chash}")
    model = load_model(ckpt)
    delta = model.delta
    stride = int(round(delta / holdout.dt))
    ref = holdout.subsample(stride) if stride > 1 else holdout
    ev = cfg.evaluation
    metrics = {"method": ckpt["method"], "noise_var": cfg.corruption.variance,
               "scenario": cfg.corruption.scenario, "config_hash": chash, "delta": delta}
    rep = evaluation.forecast_rmse(model, ref, ev.n_initials, (1, 4), delta)
    metrics.update(rmse_h=rep.rmse_h, rmse_4h=rep.rmse_4h, n_failed=rep.n_failed, n_initials=rep.n_initials)
    errors = []
    try:
        ly = evaluation.lyapunov_lambda1(model, ref.states[0], ev.lyapunov_steps, delta,
                                         ev.renorm_interval, ev.d0)
        metrics.update(lambda1=ly.lambda1, n_reperturbed=ly.n_reperturbed)
    except NumericError as exc:
        metrics.update(lambda1=float("nan"), n_reperturbed=0)
        errors.append(f"lyapunov: {exc}")
    if attractor_path is not None:
        try:
            evaluation.attractor_export(model, ref.states[0], ev.attractor_steps, attractor_path,
                                        delta=delta, config_hash=chash)
        except NumericError as exc:
            errors.append(f"attractor: {exc}")
            io.write_table_csv(attractor_path, ["t", "x1", "x2", "x3"], [], config_hash=chash)
    metrics["errors"] = errors
    return metrics


# -- file-level stages -------------------------------------------------------

def run_simulate(cfg, out):
    os.makedirs(out, exist_ok=True)
    chash = cfg.hash()
    truth = make_truth(cfg)
    io.write_trajectory_csv(truth, os.path.join(out, TRUTH_FILE), config_hash=chash)
    hold = make_truth(cfg, holdout=True)
    io.write_trajectory_csv(hold, os.path.join(out, HOLDOUT_FILE), config_hash=chash)
    return truth, hold


def run_corrupt(cfg, out, truth_path=None):
    os.makedirs(out, exist_ok=True)
    truth = io.read_trajectory_csv(truth_path or os.path.join(out, TRUTH_FILE))
    obs = make_observations(cfg, truth)
    io.write_observations_csv(obs, os.path.join(out, OBS_FILE), config_hash=cfg.hash())
    return obs


def run_fit(cfg, out, obs_path=None):
    os.makedirs(out, exist_ok=True)
    obs = io.read_observations_csv(obs_path or os.path.join(out, OBS_FILE))
    ckpt, header, rows, extras = fit(cfg, obs)
    chash = cfg.hash()
    io.write_json(os.path.join(out, CHECKPOINT_FILE), ckpt)
    if header is not None:
        io.write_table_csv(os.path.join(out, HISTORY_FILE), header, rows, config_hash=chash)
    if "smoothing" in extras:
        io.write_smoother_csv(obs.times, extras["smoothing"], os.path.join(out, SMOOTHER_FILE), config_hash=chash)
    return ckpt


def run_evaluate(cfg, out, ckpt_path=None, holdout_path=None):
    os.makedirs(out, exist_ok=True)
    ckpt = io.read_json(ckpt_path or os.path.join(out, CHECKPOINT_FILE))
    hold = io.read_trajectory_csv(holdout_path or os.path.join(out, HOLDOUT_FILE))
    metrics = evaluate(cfg, ckpt, hold, os.path.join(out, ATTRACTOR_FILE))
    io.write_json(os.path.join(out, METRICS_FILE), metrics)
    return metrics


def run_all(cfg, out):
    run_simulate(cfg, out)
    run_corrupt(cfg, out)
    run_fit(cfg, out)
    return run_evaluate(cfg, out)


# -- reproduce grid ----------------------------------------------------------

TABLE_HEADER = ["method", "scenario", "noise_var", "delta", "rmse_h", "rmse_4h", "lambda1",
                "lambda1_in_band", "n_failed", "config_hash", "status", "error"]
LAMBDA1_BAND = (0.7, 1.1)


def grid_cells(cfg, table, full=False):
    r = cfg.reproduce
    variances = r.full_variances if full else r.variances
    scenarios = ["full"] if table == "noisy" else list(r.partial_scenarios)
    if table not in ("noisy", "partial"):
        raise ConfigError("table", f"must be 'noisy' or 'partial', got {table!r}")
    cells = []
    for method in r.methods:
        for scenario in scenarios:
            for var in variances:
                cells.append(cfg.replace(method=method, corruption={"variance": float(var), "scenario": scenario}))
    return cells


def _cell_dir(out, cell):
    c = cell.corruption
    return os.path.join(out, "cells", f"{cell.method}_{c.scenario}_{format(c.variance, 'g')}")


def run_cell(cell, out):
    """One grid cell; failures become a row with status 'failed' instead of an exception."""
    c = cell.corruption
    row = {"method": cell.method, "scenario": c.scenario, "noise_var": c.variance, "delta": "",
           "rmse_h": "", "rmse_4h": "", "lambda1": "", "lambda1_in_band": "", "n_failed": "",
           "config_hash": cell.hash(), "status": "ok", "error": ""}
    try:
        m = run_all(cell, _cell_dir(out, cell))
    except (ChaosIdError, OSError) as exc:
        row.update(status="failed", error=f"{type(exc).__name__}: {exc}")
        return row
    lam = m["lambda1"]
    row.update(delta=m["delta"], rmse_h=m["rmse_h"], rmse_4h=m["rmse_4h"], lambda1=lam,
               n_failed=m["n_failed"],
               lambda1_in_band=int(bool(np.isfinite(lam) and LAMBDA1_BAND[0] <= lam <= LAMBDA1_BAND[1])),
               error="; ".join(m["errors"]))
    return row


def run_reproduce(cfg, out, table="noisy", full=False, jobs=None):
    cells = grid_cells(cfg, table, full)
    jobs = cfg.reproduce.jobs if jobs is None else jobs
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            rows = list(pool.map(run_cell, cells, [out] * len(cells)))
    else:
        rows = [run_cell(cell, out) for cell in cells]
    os.makedirs(out, exist_ok=True)
    io.write_table_csv(os.path.join(out, f"table_{table}.csv"), TABLE_HEADER,
                       [[r[k] for k in TABLE_HEADER] for r in rows], config_hash=cfg.hash())
    return rows
