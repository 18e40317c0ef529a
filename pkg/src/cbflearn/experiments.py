"""End-to-end experiment drivers: dataset generation, training, verification,
closed-loop evaluation, and plot-ready exports for both benchmarks.

The planar driver has two stages: a paper-faithful stage (margin program over
random Fourier features, gradient-norm slack verification, level-set and
closed-loop evaluation) and a certified stage on a disk-shaped variant whose
margins leave room for the sound local-Lipschitz bounds, ending in a
Theorem-style certificate plus a dense-grid soundness check.
"""

from __future__ import annotations

import csv
import hashlib
import json
import os
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from cbflearn import features as ft
from cbflearn import verifier as vf
from cbflearn.dynamics import (
    ControlAffineSystem,
    aircraft_pairwise_distance,
    make_aircraft,
    make_planar,
    save_trajectories,
    step_rk4,
)
from cbflearn.experts import (
    aircraft_goals,
    aircraft_nominal_mpc_lite,
    aircraft_scripted_episodes,
    circle_reference,
    head_on_initial_states,
    planar_disk_expert,
    planar_expert_generator,
    planar_tracker,
    planar_unsafe_circles,
    ring_samples,
)
from cbflearn.geometry import (
    DemonstrationSet,
    NetParams,
    PointSet,
    save_pointset,
)
from cbflearn.learner import (
    AdamConfig,
    HyperParams,
    TrainingBundle,
    make_bundle,
    train_convex,
    train_penalty,
)
from cbflearn.safety_filter import FilterConfig, SimResult, simulate_filtered

__all__ = [
    "PlanarConfig",
    "AircraftConfig",
    "run_planar",
    "run_aircraft",
    "import_demonstrations",
    "export_demonstrations",
    "measure_level_set_radii",
    "planar_paper_hyperparams",
    "planar_certified_hyperparams",
]


def _fmt(v: float) -> str:
    return format(float(v), ".17g")


def output_root(default: str = "runs") -> Path:
    return Path(os.environ.get("CBFLEARN_OUTPUT_ROOT", default))


# ---------------------------------------------------------------------------
# Configs
# ---------------------------------------------------------------------------


@dataclass
class PlanarConfig:
    """Planar experiment configuration (defaults reproduce the benchmark run)."""

    name: str = "planar"
    seed: int = 0  # RFF map seed
    delta: float = 1.0
    # paper-faithful stage
    radii: tuple = (0.2666, 0.3, 0.3333)
    points_per_circle: int = 80
    n_thetas: int = 128
    points_per_ray: int = 10
    t_f: float = 0.5
    ring_points: int = 160
    num_features: int = 200
    bandwidth: float = 1.2
    epsilon: float = 0.01666
    epsilon_bar: float = 0.0333
    sigma_layer: float = 0.0333
    gamma_safe: float = 0.1
    gamma_unsafe: float = 0.3
    gamma_dyn: float = 0.01
    alpha_coef: float = 1.0
    l_h_assumed: float = 2.5
    # closed loop
    sim_radii: tuple = (0.15, 0.3, 0.55)
    sim_dt: float = 0.005
    sim_seconds: float = 15.0
    filter_alpha: float = 10.0
    # certified stage
    certified: bool = True
    cert_seed: int = 0
    # outputs
    outdir: str = "runs/planar"
    figures: bool = True

    def config_hash(self) -> str:
        payload = {k: v for k, v in asdict(self).items() if k not in ("outdir", "figures")}
        blob = json.dumps(payload, sort_keys=True)
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


@dataclass
class AircraftConfig:
    name: str = "aircraft"
    seed: int = 0
    n_episodes: int = 60
    d_s: float = 0.5
    dt: float = 0.05
    episode_stride: int = 3
    filter_budget: int = 1200
    layer_budget: int = 1200
    widths: tuple = (6, 64, 64, 1)
    gamma_safe: float = 3.0
    gamma_unsafe: float = 0.5
    gamma_dyn: float = 0.05
    lambda_safe: float = 2.0
    lambda_unsafe: float = 2.0
    lambda_dyn: float = 15.0
    alpha_coef: float = 1.0
    epochs: int = 20000
    lr0: float = 1e-3
    train_seed: int = 0
    n_closed_loop: int = 8
    sim_steps: int = 300
    sim_dt: float = 0.05
    stop_distance_mult: float = 5.0
    outdir: str = "runs/aircraft"
    figures: bool = True

    def config_hash(self) -> str:
        payload = {k: v for k, v in asdict(self).items() if k not in ("outdir", "figures")}
        blob = json.dumps(payload, sort_keys=True)
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


def planar_paper_hyperparams(cfg: PlanarConfig) -> HyperParams:
    net = NetParams(
        epsilon=cfg.epsilon, epsilon_bar=cfg.epsilon_bar, sigma=cfg.sigma_layer, p=2
    )
    return HyperParams(
        gamma_safe=cfg.gamma_safe,
        gamma_unsafe=cfg.gamma_unsafe,
        gamma_dyn=cfg.gamma_dyn,
        net=net,
        alpha_coef=cfg.alpha_coef,
        l_h_assumed=cfg.l_h_assumed,
        l_q_assumed=1.0,
        lip_mode="gradient_norm",
    )


def planar_certified_hyperparams() -> HyperParams:
    """Margins sized for certified-mode Lipschitz values on the disk variant."""
    net = NetParams(epsilon=0.03, epsilon_bar=0.05, sigma=0.08, p=2)
    return HyperParams(
        gamma_safe=0.12,
        gamma_unsafe=0.3,
        gamma_dyn=0.06,
        net=net,
        alpha_coef=1.0,
        l_h_assumed=2.4,
        l_q_assumed=2.0,
        lip_mode="certified",
    )


# ---------------------------------------------------------------------------
# Shared exports
# ---------------------------------------------------------------------------


def export_demonstrations(path, demos: DemonstrationSet) -> None:
    """Write state-action pairs as single-step trajectory records."""
    src = json.dumps(demos.source)
    with open(path, "w") as fh:
        for k, (x, u) in enumerate(zip(demos.states, demos.inputs)):
            fh.write(
                f'{{"episode": {src}, "k": {k}, "t": {_fmt(0.0)}, '
                f'"x": [' + ", ".join(_fmt(c) for c in x) + '], '
                f'"u": [' + ", ".join(_fmt(c) for c in u) + "]}\n"
            )


def import_demonstrations(
    path,
    system: Optional[ControlAffineSystem] = None,
    skip_violations: bool = True,
) -> DemonstrationSet:
    """Load state-action pairs from trajectory JSONL, validating dimensions.

    Episodes whose metadata carries a violation flag are excluded unless
    skip_violations is False. Terminal records (u == []) carry no action and
    are ignored.
    """
    xs, us = [], []
    excluded = 0
    meta_by_episode: dict[str, dict] = {}
    with open(path) as fh:
        lines = fh.readlines()
    records = []
    for lineno, raw in enumerate(lines, start=1):
        raw = raw.strip()
        if not raw:
            continue
        try:
            rec = json.loads(raw)
        except json.JSONDecodeError as exc:
            raise ValueError(f"{path}: line {lineno}: invalid JSON: {exc}") from exc
        if "meta" in rec:
            meta_by_episode[rec.get("episode", "")] = rec["meta"]
            continue
        for key in ("episode", "k", "x", "u"):
            if key not in rec:
                raise ValueError(f"{path}: line {lineno}: missing field '{key}'")
        records.append((lineno, rec))
    for lineno, rec in records:
        if skip_violations and meta_by_episode.get(rec["episode"], {}).get("violation"):
            excluded += 1
            continue
        x, u = rec["x"], rec["u"]
        if len(u) == 0:
            continue  # terminal record
        if system is not None:
            if len(x) != system.state_dim:
                raise ValueError(
                    f"{path}: line {lineno}: state has dimension {len(x)}, "
                    f"expected {system.state_dim}"
                )
            if len(u) != system.input_dim:
                raise ValueError(
                    f"{path}: line {lineno}: input has dimension {len(u)}, "
                    f"expected {system.input_dim}"
                )
        xs.append(x)
        us.append(u)
    if not xs:
        raise ValueError(f"{path}: no usable state-action pairs")
    return DemonstrationSet(
        states=np.asarray(xs, dtype=float),
        inputs=np.asarray(us, dtype=float),
        source=str(path),
    )


def _write_csv(path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow([_fmt(v) if isinstance(v, float) else v for v in row])


def save_sim_result(path, res: SimResult) -> None:
    """SimResult as JSONL: per-step records plus a terminal state record."""
    traj = res.trajectory
    with open(path, "w") as fh:
        for k in range(traj.steps):
            fh.write(
                f'{{"k": {k}, "t": {_fmt(k * traj.dt)}, '
                f'"x": [' + ", ".join(_fmt(c) for c in traj.states[k]) + '], '
                f'"u_nom": [' + ", ".join(_fmt(c) for c in res.u_nom_trace[k]) + '], '
                f'"u": [' + ", ".join(_fmt(c) for c in traj.inputs[k]) + '], '
                f'"h": {_fmt(res.h_trace[k])}, '
                f'"violation": {"true" if res.violations[k] else "false"}}}\n'
            )
        k = traj.steps
        fh.write(
            f'{{"k": {k}, "t": {_fmt(k * traj.dt)}, '
            f'"x": [' + ", ".join(_fmt(c) for c in traj.states[k]) + '], '
            f'"h": {_fmt(res.h_trace[k])}}}\n'
        )


def measure_level_set_radii(model: ft.CbfModel, n_rays: int = 360, r_max: float = 0.8,
                            r_step: float = 0.001):
    """Zero-crossing radii of h along rays from the origin.

    Returns (inner, outer) arrays over the rays that have a positive segment.
    """
    rs = np.arange(r_step, r_max, r_step)
    inner, outer = [], []
    for a in np.linspace(0.0, 2.0 * np.pi, n_rays, endpoint=False):
        d = np.array([np.cos(a), np.sin(a)])
        vals = np.atleast_1d(model.value(rs[:, None] * d[None, :]))
        pos = vals >= 0.0
        if pos.any():
            inner.append(rs[np.argmax(pos)])
            outer.append(rs[len(pos) - 1 - np.argmax(pos[::-1])])
    return np.asarray(inner), np.asarray(outer)


# ---------------------------------------------------------------------------
# Planar driver
# ---------------------------------------------------------------------------


@dataclass
class PlanarArtifacts:
    outdir: Path
    model: ft.CbfModel
    report: "vf.ValidityReport"
    certified_model: Optional[ft.CbfModel]
    certificate: Optional["vf.ValidityCertificate"]
    grid_check: Optional["vf.GridSoundness"]
    level_inner: np.ndarray
    level_outer: np.ndarray
    sims: dict
    paths: dict = field(default_factory=dict)


def _planar_bundle(cfg: PlanarConfig, hp: HyperParams):
    demos = planar_expert_generator(
        delta=cfg.delta,
        radii=cfg.radii,
        points_per_circle=cfg.points_per_circle,
        n_thetas=cfg.n_thetas,
        points_per_ray=cfg.points_per_ray,
        t_f=cfg.t_f,
    )
    x_n = planar_unsafe_circles(points_per_circle=cfg.ring_points)
    rff = ft.rff_init(cfg.num_features, 2, cfg.bandwidth, cfg.seed)
    system = make_planar(cfg.delta)
    return make_bundle(demos, x_n, system, rff, hp), system


def certified_disk_bundle(seed: int = 0) -> tuple[TrainingBundle, ControlAffineSystem, HyperParams]:
    """Disk-variant bundle with a single gentle outer transition.

    The layer ring at 0.37 is an epsilon_bar-net of the whole shell
    {0.03 <= dist <= 0.11} around the disk-shaped coverage region.
    """
    hp = planar_certified_hyperparams()
    demos = planar_disk_expert()
    x_n = ring_samples(0.37, 96, tag="unsafe")
    rff = ft.rff_init(400, 2, 2.0, seed)
    system = make_planar(1.0)
    return make_bundle(demos, x_n, system, rff, hp), system, hp


def run_planar(cfg: PlanarConfig) -> PlanarArtifacts:
    outdir = Path(cfg.outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    paths = {}
    stamp = {"config_hash": cfg.config_hash(), "seed": cfg.seed}

    hp = planar_paper_hyperparams(cfg)
    bundle, system = _planar_bundle(cfg, hp)

    # stage 1: margin program + gradient-norm verification (paper practice)
    model = train_convex(bundle, hp)
    model.provenance.update(stamp)
    paths["model"] = outdir / "model.json"
    ft.save_model(paths["model"], model)
    paths["demos"] = outdir / "demonstrations.jsonl"
    export_demonstrations(paths["demos"], bundle.demos)
    paths["layer"] = outdir / "layer_samples.jsonl"
    save_pointset(paths["layer"], bundle.x_layer)

    report = vf.slack_report(model, bundle, hp)
    paths["report"] = outdir / "report.json"
    vf.save_report(paths["report"], {**stamp, "slack_report": vf.report_to_dict(report)})
    paths["slacks"] = outdir / "slacks.csv"
    _write_csv(
        paths["slacks"],
        ["kind", "index", "x0", "x1", "slack", "local_lipschitz"],
        [
            *(
                ("safe", i, *bundle.x_safe_bar.points[i], float(report.safe_slacks[i]),
                 float(report.l_h_safe[i]))
                for i in range(len(report.safe_slacks))
            ),
            *(
                ("dyn", i, *bundle.demos.states[i], float(report.dyn_slacks[i]),
                 float(report.l_q[i]))
                for i in range(len(report.dyn_slacks))
            ),
            *(
                ("unsafe", i, *bundle.x_layer.points[i], float(report.unsafe_slacks[i]),
                 float(report.l_h_layer[i]))
                for i in range(len(report.unsafe_slacks))
            ),
        ],
    )

    # level-set geometry along rays
    inner, outer = measure_level_set_radii(model)
    paths["levelset"] = outdir / "levelset_radii.csv"
    _write_csv(
        paths["levelset"],
        ["ray", "inner_radius", "outer_radius"],
        [(i, float(a), float(b)) for i, (a, b) in enumerate(zip(inner, outer))],
    )
    grid = np.linspace(-0.8, 0.8, 200)
    mesh = np.stack(np.meshgrid(grid, grid, indexing="ij"), axis=-1).reshape(-1, 2)
    hvals = np.atleast_1d(model.value(mesh))
    paths["surface"] = outdir / "levelset_grid.csv"
    _write_csv(
        paths["surface"],
        ["x0", "x1", "h"],
        [(float(p[0]), float(p[1]), float(v)) for p, v in zip(mesh, hvals)],
    )

    # closed-loop sweep
    sims = {}
    steps = int(round(cfg.sim_seconds / cfg.sim_dt))
    fcfg = FilterConfig(model=model, alpha_coef=cfg.filter_alpha)
    for r in cfg.sim_radii:
        nominal = planar_tracker(system, circle_reference(r), gain=4.0)
        res = simulate_filtered(
            fcfg, system, nominal, np.array([-r, 0.0]), cfg.sim_dt, steps,
            episode_id=f"planar-r{r}",
        )
        sims[r] = res
        p = outdir / f"sim_r{str(r).replace('.', '_')}.jsonl"
        save_sim_result(p, res)
        paths[f"sim_{r}"] = p

    # stage 2: certified disk variant
    certified_model = None
    certificate = None
    grid_check = None
    if cfg.certified:
        cbundle, csystem, chp = certified_disk_bundle(cfg.cert_seed)
        certified_model = train_convex(cbundle, chp)
        certified_model.provenance.update(stamp)
        paths["certified_model"] = outdir / "certified_model.json"
        ft.save_model(paths["certified_model"], certified_model)
        certificate = vf.certify(certified_model, cbundle, chp, witness_budget=100_000,
                                 rng_seed=cfg.cert_seed)
        grid_check = vf.grid_soundness(certified_model, cbundle, chp)
        paths["certificate"] = outdir / "certificate.json"
        vf.save_report(
            paths["certificate"],
            {
                **stamp,
                "certificate": vf.certificate_to_dict(certificate),
                "grid_soundness": {
                    "pitch": grid_check.pitch,
                    "n_dbar": grid_check.n_dbar,
                    "n_layer": grid_check.n_layer,
                    "n_cover": grid_check.n_cover,
                    "viol_dbar": grid_check.viol_dbar,
                    "viol_layer": grid_check.viol_layer,
                    "viol_cover": grid_check.viol_cover,
                    "clean": grid_check.clean,
                },
            },
        )

    summary = {
        **stamp,
        "slack_pass": {
            "min_safe_slack": float(np.min(report.safe_slacks)),
            "min_dyn_slack": float(np.min(report.dyn_slacks)),
            "max_unsafe_slack": float(np.max(report.unsafe_slacks)),
            "passed_signs": bool(
                np.min(report.safe_slacks) > 0
                and np.min(report.dyn_slacks) > 0
                and np.max(report.unsafe_slacks) < 0
            ),
        },
        "level_set": {
            "inner_mean": float(np.mean(inner)),
            "outer_mean": float(np.mean(outer)),
            "rays": int(len(inner)),
        },
        "closed_loop": {
            str(r): {
                "min_h": float(res.h_trace.min()),
                "final_h": float(res.h_trace[-1]),
                "violations": int(res.violations.sum()),
            }
            for r, res in sims.items()
        },
        "certificate_issued": bool(certificate.issued) if certificate else None,
        "grid_clean": bool(grid_check.clean) if grid_check else None,
    }
    paths["summary"] = outdir / "summary.json"
    with open(paths["summary"], "w") as fh:
        json.dump(summary, fh, indent=1, sort_keys=True)
        fh.write("\n")

    if cfg.figures:
        from cbflearn import plots

        figdir = outdir / "figures"
        plots.planar_figures(figdir, bundle, model, report, sims, inner, outer)
        paths["figures"] = figdir

    return PlanarArtifacts(
        outdir=outdir,
        model=model,
        report=report,
        certified_model=certified_model,
        certificate=certificate,
        grid_check=grid_check,
        level_inner=inner,
        level_outer=outer,
        sims=sims,
        paths=paths,
    )


# ---------------------------------------------------------------------------
# Aircraft driver
# ---------------------------------------------------------------------------


@dataclass
class AircraftArtifacts:
    outdir: Path
    model: ft.CbfModel
    episodes: list
    filtered: list
    baseline: list
    min_distances: np.ndarray
    baseline_distances: np.ndarray
    log: list
    paths: dict = field(default_factory=dict)


def aircraft_bundle(cfg: AircraftConfig):
    from cbflearn.geometry import sample_annulus_F

    episodes = aircraft_scripted_episodes(
        cfg.n_episodes, seed=cfg.seed, d_s=cfg.d_s, dt=cfg.dt,
        stop_mult=cfg.stop_distance_mult,
    )
    xs = np.concatenate([ep.states[:-1:cfg.episode_stride] for ep in episodes])
    us = np.concatenate([ep.inputs[::cfg.episode_stride] for ep in episodes])
    demos = DemonstrationSet(states=xs, inputs=us, source=f"scripted(seed={cfg.seed})")
    x_f = sample_annulus_F(cfg.d_s, 3.0, 5.0, cfg.filter_budget, rng_seed=cfg.seed,
                           tag="filter")
    x_nn = sample_annulus_F(cfg.d_s, 0.0, 1.1, cfg.layer_budget, rng_seed=cfg.seed + 1,
                            tag="unsafe")
    system = make_aircraft()
    mlp0 = ft.mlp_init(list(cfg.widths), seed=cfg.train_seed)
    # filter-region samples stand in for the buffered safe set: the safe
    # annulus encloses the unsafe disk, so value margins there anchor the sign
    # structure without artificial unsafe labels in the interior
    net = NetParams(epsilon=0.05, epsilon_bar=0.1, sigma=0.1, p=2)
    hp = HyperParams(
        gamma_safe=cfg.gamma_safe,
        gamma_unsafe=cfg.gamma_unsafe,
        gamma_dyn=cfg.gamma_dyn,
        net=net,
        lambda_safe=cfg.lambda_safe,
        lambda_unsafe=cfg.lambda_unsafe,
        lambda_dyn=cfg.lambda_dyn,
        alpha_coef=cfg.alpha_coef,
        l_h_assumed=1.0,
        l_q_assumed=1.0,
        lip_mode="gradient_norm",
    )
    bundle = TrainingBundle(
        demos=demos, x_safe_bar=x_f, x_layer=x_nn, system=system, features=mlp0
    )
    return bundle, episodes, hp


def run_aircraft(cfg: AircraftConfig) -> AircraftArtifacts:
    outdir = Path(cfg.outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    paths = {}
    stamp = {"config_hash": cfg.config_hash(), "seed": cfg.seed}

    bundle, episodes, hp = aircraft_bundle(cfg)
    system = bundle.system
    paths["episodes"] = outdir / "episodes.jsonl"
    save_trajectories(paths["episodes"], episodes)
    paths["filter_samples"] = outdir / "filter_samples.jsonl"
    save_pointset(paths["filter_samples"], bundle.x_safe_bar)
    paths["layer_samples"] = outdir / "layer_samples.jsonl"
    save_pointset(paths["layer_samples"], bundle.x_layer)

    opt = AdamConfig(lr0=cfg.lr0, epochs=cfg.epochs, seed=cfg.train_seed, log_every=100)
    model, log = train_penalty(bundle, hp, opt)
    model.provenance.update(stamp)
    paths["model"] = outdir / "model.json"
    ft.save_model(paths["model"], model)
    paths["training_log"] = outdir / "training_log.csv"
    _write_csv(
        paths["training_log"],
        ["epoch", "loss", "reg", "safe", "unsafe", "dyn"],
        [
            (row["epoch"], float(row["loss"]), float(row["reg"]), float(row["safe"]),
             float(row["unsafe"]), float(row["dyn"]))
            for row in log
        ],
    )

    # barrier values at training points, in relative coordinates
    rel = bundle.demos.states[:, 0:2] - bundle.demos.states[:, 3:5]
    hvals = np.atleast_1d(model.value(bundle.demos.states))
    paths["h_train"] = outdir / "h_on_training.csv"
    _write_csv(
        paths["h_train"],
        ["rel_x", "rel_y", "distance", "h"],
        [
            (float(r[0]), float(r[1]), float(np.hypot(*r)), float(v))
            for r, v in zip(rel, hvals)
        ],
    )

    # closed-loop sweep: filtered vs nominal-only from symmetric head-on states
    inits = head_on_initial_states(cfg.n_closed_loop, radius=1.0)
    fcfg = FilterConfig(model=model, alpha_coef=cfg.alpha_coef)
    filtered, baseline = [], []
    for i, x0 in enumerate(inits):
        goal = aircraft_goals(x0)

        def nominal(t, x, goal=goal):
            return aircraft_nominal_mpc_lite(x, goal)

        res_f = simulate_filtered(fcfg, system, nominal, x0, cfg.sim_dt, cfg.sim_steps,
                                  episode_id=f"filtered-{i}")
        filtered.append(res_f)
        states = [x0.copy()]
        x = x0.copy()
        for k in range(cfg.sim_steps):
            u = system.clip_input(nominal(k * cfg.sim_dt, x))
            x = step_rk4(system, x, u, cfg.sim_dt)
            states.append(x.copy())
        baseline.append(np.asarray(states))
        save_sim_result(outdir / f"closed_loop_{i}.jsonl", res_f)

    min_d = np.array([res.min_pairwise_distance for res in filtered])
    base_d = np.array([
        float(np.min(aircraft_pairwise_distance(states))) for states in baseline
    ])
    paths["distances"] = outdir / "min_distances.csv"
    _write_csv(
        paths["distances"],
        ["run", "filtered_min_distance", "baseline_min_distance"],
        [(i, float(a), float(b)) for i, (a, b) in enumerate(zip(min_d, base_d))],
    )

    h_layer = np.atleast_1d(model.value(bundle.x_layer.points))
    summary = {
        **stamp,
        "episodes": len(episodes),
        "pairs": len(bundle.demos),
        "final_loss": float(log[-1]["loss"]) if log else None,
        "closed_loop_min_distance": float(min_d.min()),
        "filtered_safe_runs": int(np.sum(min_d >= cfg.d_s)),
        "baseline_colliding_runs": int(np.sum(base_d < cfg.d_s)),
        "layer_fraction_below_margin": float(
            np.mean(h_layer <= -cfg.gamma_unsafe + 0.05 * cfg.gamma_unsafe)
        ),
    }
    paths["summary"] = outdir / "summary.json"
    with open(paths["summary"], "w") as fh:
        json.dump(summary, fh, indent=1, sort_keys=True)
        fh.write("\n")

    if cfg.figures:
        from cbflearn import plots

        figdir = outdir / "figures"
        plots.aircraft_figures(figdir, bundle, model, log, filtered, baseline)
        paths["figures"] = figdir

    return AircraftArtifacts(
        outdir=outdir,
        model=model,
        episodes=episodes,
        filtered=filtered,
        baseline=baseline,
        min_distances=min_d,
        baseline_distances=base_d,
        log=log,
        paths=paths,
    )
