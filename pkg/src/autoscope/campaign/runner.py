"""Campaign execution: one sequential control loop per run, in simulated time."""

from __future__ import annotations

import copy
import logging
import math
import time
from dataclasses import dataclass, field, replace

import numpy as np

from .. import acquire, agent, gp, recon
from ..feedback import FeedbackPlan, SchmittTrigger, run_ferrobot
from ..fields import ScalarField2D
from ..ledger import LatencyLedger
from ..sample import Sample, gen_domain_phantom, loop_area_map
from ..scope import DriftModel, LatencyModel, Observation, ScanPath, ScopeSession, plan_path
from .config import CampaignSpec

log = logging.getLogger(__name__)

NUMERICAL_FAILURES = (gp.GPError, FloatingPointError, np.linalg.LinAlgError)


@dataclass
class RunRecord:
    """Everything a run produced, in the order it was produced."""

    spec: dict
    observations: list[Observation] = field(default_factory=list)
    decisions: list[dict] = field(default_factory=list)
    ledger: LatencyLedger = field(default_factory=LatencyLedger)
    reports: list[recon.ReconReport] = field(default_factory=list)
    curves: dict[str, list[dict]] = field(default_factory=dict)
    events: list = field(default_factory=list)
    fields: dict[str, ScalarField2D] = field(default_factory=dict)
    models: dict[str, dict] = field(default_factory=dict)
    summary: dict = field(default_factory=dict)
    status: str = "ok"
    error: str | None = None

    @property
    def failed(self) -> bool:
        return self.status == "failed"


def halton(n: int, start: int = 0) -> np.ndarray:
    """``n`` points of the 2-D Halton sequence (bases 2 and 3) from index ``start + 1``."""
    out = np.empty((n, 2))
    for col, base in enumerate((2, 3)):
        for i in range(n):
            k, f, r = start + i + 1, 1.0, 0.0
            while k > 0:
                f /= base
                k, digit = divmod(k, base)
                r += f * digit
            out[i, col] = r
    return out


def build_sample(spec: CampaignSpec) -> Sample:
    s = spec.sample
    return gen_domain_phantom(s.width, s.height, s.extent, s.style, s.seed, period=s.period,
                              bubble_scale=s.bubble_scale, coercive_bias=s.coercive_bias,
                              flip_sharpness=s.flip_sharpness)


def build_session(spec: CampaignSpec, sample: Sample, seed: int | None = None) -> ScopeSession:
    sc = spec.scope
    drift = DriftModel(sc.drift.velocity, sc.drift.random_walk_sigma, sc.drift.seed)
    lat = LatencyModel(sc.latency.dwell_default, sc.latency.slew_rate, sc.latency.flyback,
                       sc.latency.decision_charge)
    return ScopeSession(sample, drift, lat, spec.seed if seed is None else seed)


def _window(sample: Sample):
    return (0.0, 0.0) + tuple(sample.grid.extent)


def _fit_config(sample: Sample) -> gp.FitConfig:
    dx, dy = sample.grid.pixel_size
    return gp.FitConfig(lengthscale_bounds=(min(dx, dy), math.hypot(*sample.grid.extent)))


def seed_pixels(grid, n: int, seed: int) -> list[tuple[int, int]]:
    """First ``n`` distinct pixels hit by a Halton sequence offset by ``seed``."""
    if n > grid.width * grid.height:
        raise ValueError("more seed points than pixels")
    out, seen = [], set()
    start = seed * grid.width * grid.height
    while len(out) < n:
        pts = halton(n, start) * np.asarray(grid.extent)
        start += n
        for p in pts:
            px = grid.to_pixel(p)
            if px not in seen:
                seen.add(px)
                out.append(px)
                if len(out) == n:
                    break
    return out


class _Loop:
    """Shared BO loop for image values and for spectroscopic loop areas."""

    def __init__(self, spec: CampaignSpec, sample: Sample, session: ScopeSession, record: RunRecord,
                 mode: str):
        self.spec, self.sample, self.session, self.record, self.mode = spec, sample, session, record, mode
        self.grid = sample.grid
        self.visited: set[tuple[int, int]] = set()
        self.here = (0, 0)
        self.last_surface = None
        e = spec.engine
        self.policy = acquire.PathfinderPolicy(e.pathfinder.mode, 1, 0.0, e.pathfinder.preferred_dir,
                                               e.pathfinder.dir_penalty, self.grid.pixel_size[0])
        self.ramp = (-e.spectro.v_max, e.spectro.v_max, e.spectro.n_steps)
        if mode == "spectro":
            self.truth = loop_area_map(sample, e.spectro.v_max, e.spectro.n_steps)
        else:
            self.truth = sample.channel(spec.scope.channel)

    def measure(self, pixels):
        if not pixels:
            return
        positions = [self.grid.to_position(p) for p in pixels]
        if self.mode == "image":
            path = ScanPath.from_points(positions, 0.0, _window(self.sample))
            obs, _ = self.session.execute(path, self.spec.scope.noise_sigma, self.spec.scope.channel)
            self.record.observations.extend(obs)
        else:
            for pos in positions:
                curve = self.session.ramp_spectroscopy(pos, self.ramp, None, self.spec.engine.spectro.noise_sigma)
                self.record.observations.append(
                    Observation(curve.pos, curve.pos_true, "custom", curve.area(), curve.t_start))
                self.record.curves.setdefault("spectra", []).append(
                    {"index": len(self.record.observations) - 1, "area": curve.area(),
                     "elapsed": curve.elapsed, "stopped_early": int(curve.stopped_early)})
        self.visited.update(pixels)
        self.here = pixels[-1]

    def data(self):
        obs = self.record.observations
        return np.array([o.pos_nominal for o in obs]), np.array([o.value for o in obs])

    def run(self) -> gp.GpModel:
        e = self.spec.engine
        seeds = seed_pixels(self.grid, e.n_seed_points, self.spec.seed)
        order = acquire.pathfind(seeds, self.here, replace(self.policy, mode="nearest"))
        self.measure([seeds[i] for i in order])
        mask = acquire.edge_mask(self.grid.width, self.grid.height, e.mask_taper)
        fit_cfg = _fit_config(self.sample)
        model, last_fit, it = None, -1, 0
        while len(self.record.observations) < e.max_measurements:
            t_decision = self.session.clock
            X, y = self.data()
            refit = model is None or len(y) <= e.refit_until or it - last_fit >= e.refit_period
            if refit:
                model, last_fit = gp.fit(X, y, e.kernel, fit_cfg), it
            else:
                model = gp.condition(X, y, model.kernel, model.noise_variance)
            post = gp.posterior(model, self.grid)
            self.record.reports.append(recon.metrics(post.mean, self.truth, self.record.observations, "gp",
                                                     self.spec.seed))
            acq_spec = acquire.AcquisitionSpec(e.acquisition.kind, e.acquisition.beta, e.acquisition.xi,
                                               float(np.max(y)))
            surface = acquire.evaluate(acq_spec, post, mask, self.visited)
            k = min(e.batch, e.max_measurements - len(y))
            cands = acquire.top_maxima(surface, k, e.pathfinder.min_sep)
            if not cands:
                break
            order = acquire.pathfind(cands, self.here, self.policy)
            tour = [cands[i][0] for i in order]
            self.session.charge("decision", self.session.latency.decision_charge)
            self.record.decisions.append({
                "iteration": it,
                "t_decision": t_decision,
                "n_obs": len(y),
                "last_obs_t": self.record.observations[-1].t_sim,
                "refit": refit,
                "kernel": {"lengthscale": model.kernel.lengthscale,
                           "signal_variance": model.kernel.signal_variance,
                           "noise_variance": model.noise_variance},
                "candidates": [[r, c, s] for (r, c), s in cands],
                "tour": [list(p) for p in tour],
            })
            self.measure(tour)
            it += 1
            self.last_surface = surface
        X, y = self.data()
        if model is None or len(y) != len(model.train_y):
            model = gp.fit(X, y, e.kernel, fit_cfg) if model is None else \
                gp.condition(X, y, model.kernel, model.noise_variance)
        return model


def _finish_map(record: RunRecord, loop: _Loop, model: gp.GpModel, spec: CampaignSpec):
    method = spec.engine.recon_method
    if method == "gp":
        post = gp.posterior(model, loop.grid)
        est = post.mean
        record.fields["posterior_std"] = post.std
    else:
        est = recon.reconstruct(record.observations, loop.grid, method)
    final = recon.metrics(est, loop.truth, record.observations, method, spec.seed)
    record.reports.append(final)
    record.fields["truth"] = loop.truth
    record.fields["reconstruction"] = est
    hits = np.zeros(loop.grid.shape)
    for r, c in loop.visited:
        hits[r, c] = 1.0
    record.fields["sampled"] = ScalarField2D.on(loop.grid, hits)
    if loop.last_surface is not None:
        acq = loop.last_surface.values
        finite = np.isfinite(acq)
        record.fields["acquisition"] = ScalarField2D.on(
            loop.grid, np.where(finite, acq, acq[finite].min() if finite.any() else 0.0))
    record.models["gp"] = model.to_dict()
    record.summary.update({"final_rmse": final.rmse, "final_psnr": final.psnr, "n_obs": final.n_obs,
                           "iterations": len(record.decisions)})


def _run_bo(spec: CampaignSpec, record: RunRecord, mode: str):
    sample = build_sample(spec)
    session = build_session(spec, sample)
    session.ledger = record.ledger
    loop = _Loop(spec, sample, session, record, mode)
    model = loop.run()
    _finish_map(record, loop, model, spec)


def bench_cell(spec: CampaignSpec, arm: str, n_obs: int, seed: int,
               sample: Sample | None = None) -> tuple[recon.ReconReport, RunRecord]:
    """One arm of the sampling benchmark: ``n_obs`` measurements, then reconstruction.

    Every cell gets its own session, so arms never share noise draws or clocks.
    """
    sample = sample if sample is not None else build_sample(spec)
    cell_spec = copy.deepcopy(spec)
    cell_spec.seed = seed
    sub = RunRecord(spec={})
    g = sample.grid
    truth = sample.channel(spec.scope.channel)
    if arm == "bo":
        e = cell_spec.engine
        e.max_measurements = n_obs
        e.n_seed_points = min(e.n_seed_points, n_obs)
        session = build_session(cell_spec, sample, seed)
        session.ledger = sub.ledger
        loop = _Loop(cell_spec, sample, session, sub, "image")
        model = loop.run()
        if spec.engine.recon_method == "gp":
            est = gp.posterior(model, g).mean
        else:
            est = recon.reconstruct(sub.observations, g, spec.engine.recon_method)
    else:
        session = build_session(cell_spec, sample, seed)
        session.ledger = sub.ledger
        if arm == "grid":
            nx = max(1, round(math.sqrt(n_obs * g.width / g.height)))
            ny = max(1, round(n_obs / nx))
            path = plan_path("serpentine", _window(sample), nx=nx, ny=ny, dwell=0.0)
        elif arm == "random":
            rng = np.random.default_rng([seed, n_obs])
            flat = rng.choice(g.width * g.height, size=n_obs, replace=False)
            pixels = [divmod(int(f), g.width) for f in flat]
            order = acquire.pathfind(pixels, (0, 0))
            path = ScanPath.from_points([g.to_position(pixels[i]) for i in order], 0.0, _window(sample))
        else:
            raise ValueError(f"unknown bench arm {arm!r}")
        obs, _ = session.execute(path, spec.scope.noise_sigma, spec.scope.channel)
        sub.observations.extend(obs)
        if spec.engine.recon_method == "gp":
            est = recon.reconstruct(obs, g, "gp", family=spec.engine.kernel, config=_fit_config(sample))
        else:
            est = recon.reconstruct(obs, g, spec.engine.recon_method)
    report = recon.metrics(est, truth, sub.observations, spec.engine.recon_method, seed)
    return report, sub


def _run_bench(spec: CampaignSpec, record: RunRecord):
    sample = build_sample(spec)
    n_pix = sample.grid.width * sample.grid.height
    b = spec.engine.bench
    rows = []
    for budget in b.budgets:
        n = max(1, round(budget * n_pix))
        for seed in b.seeds:
            for arm in b.arms:
                report, sub = bench_cell(spec, arm, n, seed, sample)
                record.reports.append(report)
                rows.append({"arm": arm, "budget": budget, "seed": seed, "n_obs": report.n_obs,
                             "frac_sampled": report.frac_sampled, "rmse": report.rmse, "psnr": report.psnr,
                             "sim_time": sub.ledger.clock})
                log.info("bench %s budget=%g seed=%d rmse=%.4f", arm, budget, seed, report.rmse)
    record.curves["bench"] = rows
    summary = {}
    for arm in b.arms:
        for budget in b.budgets:
            vals = [r["rmse"] for r in rows if r["arm"] == arm and r["budget"] == budget]
            summary[f"median_rmse/{arm}/{budget}"] = float(np.median(vals))
    record.summary.update(summary)


def _rl_eval(env, act, spec: CampaignSpec, record: RunRecord, exact_random: float | None):
    rl = spec.engine.rl
    greedy = agent.evaluate_returns(env, act, rl.eval_episodes, rl.gamma, spec.seed + 1)
    rand = agent.evaluate_returns(env, agent.random_policy(env), rl.eval_episodes, rl.gamma, spec.seed + 2)
    record.summary.update({
        "trained_mean_return": float(np.mean(greedy)),
        "random_mean_return": float(np.mean(rand)),
    })
    if exact_random is not None:
        record.summary["random_exact_return"] = exact_random


def _train(env, spec: CampaignSpec, record: RunRecord):
    rl = spec.engine.rl
    if rl.algorithm == "double_q":
        tables, curve = agent.train_double_q(env, rl.gamma, rl.lr, rl.n_episodes, spec.seed)
        record.models["q_tables"] = tables.to_dict()
        act = agent.greedy_policy(tables.combined)
    else:
        policy = agent.SoftmaxPolicy.tabular(env.n_states, env.n_actions)
        policy, curve = agent.train_reinforce(env, policy, rl.gamma, rl.lr, rl.n_batches, rl.batch_size,
                                              rl.baseline, spec.seed)
        record.models["policy_theta"] = {"theta": policy.theta.tolist()}
        act = lambda s, rng: policy.sample(s, rng)  # noqa: E731
    record.curves["learning"] = curve
    return act


def _run_rl_tip(spec: CampaignSpec, record: RunRecord):
    env = agent.tip_env(agent.TipEnvConfig(), spec.seed)
    act = _train(env, spec, record)
    v_rand = agent.policy_evaluation(env, agent.uniform_policy(env), spec.engine.rl.gamma)
    _rl_eval(env, act, spec, record, float(env.start_dist @ v_rand))


def _run_rl_write(spec: CampaignSpec, record: RunRecord):
    w = spec.engine.write
    params = {"bias": w.bias, "dose": w.dose, "coercive_bias": spec.sample.coercive_bias,
              "flip_sharpness": spec.sample.flip_sharpness}
    env = agent.write_env(w.goal, params, spec.seed, initial_pattern=w.initial, max_steps=w.max_steps)
    act = _train(env, spec, record)
    _rl_eval(env, act, spec, record, None)


def _run_ferrobot(spec: CampaignSpec, record: RunRecord):
    sample = build_sample(spec)
    session = build_session(spec, sample)
    session.ledger = record.ledger
    f = spec.engine.ferrobot
    plan = FeedbackPlan(SchmittTrigger(f.high, f.low), tuple(map(tuple, f.waveform)), f.per_line_limit,
                        f.radius, f.pulse_time)
    record.fields["before"] = sample.polarization.copy()
    g = sample.grid
    path = plan_path("raster", _window(sample), nx=g.width, ny=g.height,
                     dwell=spec.scope.latency.dwell_default)
    events, obs = run_ferrobot(session, sample, plan, path, noise_sigma=spec.scope.noise_sigma,
                               channel=spec.scope.channel, seed=spec.seed)
    record.observations.extend(obs)
    record.events.extend(events)
    record.fields["after"] = sample.polarization.copy()
    changed = int(np.sum(record.fields["before"].values != record.fields["after"].values))
    record.summary.update({"n_events": len(events), "pixels_changed": changed})


_RUNNERS = {
    "bo_explore": lambda s, r: _run_bo(s, r, "image"),
    "bo_spectro": lambda s, r: _run_bo(s, r, "spectro"),
    "bench_recon": _run_bench,
    "rl_tip": _run_rl_tip,
    "rl_write": _run_rl_write,
    "ferrobot": _run_ferrobot,
}


def run_campaign(spec: CampaignSpec) -> RunRecord:
    """Execute ``spec``.  Numerical failures mark the record failed and keep partial logs."""
    spec.validate()
    record = RunRecord(spec=spec.to_dict())
    t0 = time.perf_counter()
    try:
        _RUNNERS[spec.kind](spec, record)
    except NUMERICAL_FAILURES as exc:
        record.status, record.error = "failed", f"{type(exc).__name__}: {exc}"
        log.error("run failed: %s", record.error)
    if record.ledger.entries:
        record.summary["latency_fractions"] = record.ledger.fractions()
        record.summary["sim_time"] = record.ledger.clock
    log.info("%s finished in %.2f s wall time (advisory)", spec.kind, time.perf_counter() - t0)
    return record


def check_causality(record: RunRecord) -> bool:
    """Every decision only used observations recorded before it in simulated time."""
    times = [o.t_sim for o in record.observations]
    for d in record.decisions:
        used = times[:d["n_obs"]]
        if any(t >= d["t_decision"] for t in used):
            return False
    return True
