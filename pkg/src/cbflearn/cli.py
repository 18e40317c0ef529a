"""Command-line interface: generate / train / verify / simulate / experiment / serve."""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import fields
from pathlib import Path

import numpy as np

try:
    import tomllib  # py311+
except ModuleNotFoundError:  # pragma: no cover
    import tomli as tomllib

from cbflearn import experiments as ex
from cbflearn import features as ft
from cbflearn import verifier as vf
from cbflearn.dynamics import make_aircraft, make_planar
from cbflearn.experts import circle_reference, planar_tracker
from cbflearn.geometry import NetParams
from cbflearn.learner import HyperParams, make_bundle
from cbflearn.safety_filter import FilterConfig, simulate_filtered


def _load_toml(path) -> dict:
    with open(path, "rb") as fh:
        return tomllib.load(fh)


def _config_from_table(cls, table: dict):
    known = {f.name for f in fields(cls)}
    unknown = set(table) - known
    if unknown:
        raise SystemExit(f"unknown config keys: {sorted(unknown)}")
    kwargs = {k: (tuple(v) if isinstance(v, list) else v) for k, v in table.items()}
    return cls(**kwargs)


def _system(name: str, delta: float = 1.0):
    if name == "planar":
        return make_planar(delta)
    if name == "aircraft":
        return make_aircraft()
    raise SystemExit(f"unknown system '{name}' (expected planar|aircraft)")


def cmd_generate(args) -> int:
    table = _load_toml(args.config) if args.config else {}
    outdir = Path(args.out or table.get("outdir", "runs/generate"))
    outdir.mkdir(parents=True, exist_ok=True)
    if args.system == "planar":
        cfg = _config_from_table(ex.PlanarConfig, table.get("planar", {}))
        from cbflearn.experts import planar_expert_generator, planar_unsafe_circles
        from cbflearn.geometry import save_pointset

        demos = planar_expert_generator(
            delta=cfg.delta, radii=cfg.radii, points_per_circle=cfg.points_per_circle,
            n_thetas=cfg.n_thetas, points_per_ray=cfg.points_per_ray, t_f=cfg.t_f,
        )
        ex.export_demonstrations(outdir / "demonstrations.jsonl", demos)
        save_pointset(outdir / "layer_samples.jsonl",
                      planar_unsafe_circles(points_per_circle=cfg.ring_points))
    else:
        cfg = _config_from_table(ex.AircraftConfig, table.get("aircraft", {}))
        from cbflearn.dynamics import save_trajectories
        from cbflearn.experts import aircraft_scripted_episodes

        episodes = aircraft_scripted_episodes(cfg.n_episodes, seed=cfg.seed,
                                              d_s=cfg.d_s, dt=cfg.dt)
        save_trajectories(outdir / "episodes.jsonl", episodes)
    print(f"wrote datasets under {outdir}")
    return 0


def cmd_train(args) -> int:
    table = _load_toml(args.config)
    kind = table.get("experiment", "planar")
    if kind == "planar":
        cfg = _config_from_table(ex.PlanarConfig, table.get("planar", {}))
        if args.out:
            cfg.outdir = args.out
        arts = ex.run_planar(cfg)
        print(f"model: {arts.paths['model']}")
    elif kind == "aircraft":
        cfg = _config_from_table(ex.AircraftConfig, table.get("aircraft", {}))
        if args.out:
            cfg.outdir = args.out
        arts = ex.run_aircraft(cfg)
        print(f"model: {arts.paths['model']}")
    else:
        raise SystemExit(f"unknown experiment '{kind}'")
    return 0


def cmd_verify(args) -> int:
    model = ft.load_model(args.model)
    demos = ex.import_demonstrations(args.demos)
    from cbflearn.geometry import load_pointset

    layer = load_pointset(args.layer)
    system = _system(args.system, args.delta)
    net = NetParams(epsilon=args.epsilon, epsilon_bar=args.epsilon_bar,
                    sigma=args.sigma, p=2)
    hp = HyperParams(
        gamma_safe=args.gamma_safe, gamma_unsafe=args.gamma_unsafe,
        gamma_dyn=args.gamma_dyn, net=net, alpha_coef=model.alpha_coef,
        l_h_assumed=args.l_h, l_q_assumed=1.0, lip_mode=args.lip_mode,
    )
    bundle = make_bundle(demos, layer, system, _model_features(model), hp)
    report = vf.slack_report(model, bundle, hp)
    print(f"lip_mode: {report.lip_mode}")
    print(f"{'family':<12}{'count':>8}{'min':>14}{'max':>14}{'requirement':>16}")
    rows = [
        ("safe", report.safe_slacks, "> 0"),
        ("derivative", report.dyn_slacks, "> 0"),
        ("unsafe", report.unsafe_slacks, "< 0"),
    ]
    for name, arr, req in rows:
        print(f"{name:<12}{len(arr):>8}{arr.min():>14.6f}{arr.max():>14.6f}{req:>16}")
    print(f"ratio conditions: safe={report.ratio_safe_ok} "
          f"unsafe={report.ratio_unsafe_ok} dyn={report.ratio_dyn_ok}")
    print(f"L_h max: {report.l_h_max:.4f}  L_q max: {report.l_q_max:.4f}")
    print(f"passed: {report.passed}")
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        vf.save_report(out / "report.json", {"slack_report": vf.report_to_dict(report)})
        ex._write_csv(
            out / "slacks.csv",
            ["kind", "index", "slack"],
            [
                *(("safe", i, float(v)) for i, v in enumerate(report.safe_slacks)),
                *(("dyn", i, float(v)) for i, v in enumerate(report.dyn_slacks)),
                *(("unsafe", i, float(v)) for i, v in enumerate(report.unsafe_slacks)),
            ],
        )
        print(f"wrote {out/'report.json'} and {out/'slacks.csv'}")
    return 0 if report.passed else 1


def _model_features(model: ft.CbfModel):
    return model.rff if model.variant == "rff" else model.mlp


def cmd_simulate(args) -> int:
    model = ft.load_model(args.model)
    system = _system(args.system, args.delta)
    x0 = np.array([float(v) for v in args.x0.split(",")])
    cfg = FilterConfig(model=model, alpha_coef=args.alpha)
    if args.nominal.startswith("circle:"):
        r = float(args.nominal.split(":", 1)[1])
        nominal = planar_tracker(system, circle_reference(r), gain=4.0)
    elif args.nominal.startswith("goal:"):
        goal = np.array([float(v) for v in args.nominal.split(":", 1)[1].split(",")])
        from cbflearn.experts import aircraft_nominal_mpc_lite

        def nominal(t, x):
            return aircraft_nominal_mpc_lite(x, goal)
    else:
        raise SystemExit("nominal must be 'circle:<radius>' or 'goal:<state6>'")
    res = simulate_filtered(cfg, system, nominal, x0, args.dt, args.steps)
    ex.save_sim_result(args.out, res)
    summary = {
        "min_h": float(res.h_trace.min()),
        "final_h": float(res.h_trace[-1]),
        "violations": int(res.violations.sum()),
        "min_pairwise_distance": res.min_pairwise_distance,
    }
    print(json.dumps(summary))
    return 0


def cmd_experiment(args) -> int:
    table = _load_toml(args.config) if args.config else {}
    if args.which == "planar":
        cfg = _config_from_table(ex.PlanarConfig, table.get("planar", {}))
        if args.out:
            cfg.outdir = args.out
        arts = ex.run_planar(cfg)
        with open(arts.paths["summary"]) as fh:
            print(fh.read().strip())
    else:
        cfg = _config_from_table(ex.AircraftConfig, table.get("aircraft", {}))
        if args.out:
            cfg.outdir = args.out
        arts = ex.run_aircraft(cfg)
        with open(arts.paths["summary"]) as fh:
            print(fh.read().strip())
    return 0


def cmd_serve(args) -> int:
    import uvicorn

    from cbflearn.service import DemoService, create_app

    model = ft.load_model(args.model) if args.model else None
    service = DemoService(out_root=args.out_root, model=model)
    app = create_app(service, ui_dir=args.ui)
    uvicorn.run(app, host=args.host, port=args.port, log_level="info")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="cbflearn",
                                description="learning validated control barrier functions")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="generate expert datasets")
    g.add_argument("--system", choices=["planar", "aircraft"], default="planar")
    g.add_argument("--config")
    g.add_argument("--out")
    g.set_defaults(fn=cmd_generate)

    t = sub.add_parser("train", help="run a full training pipeline from a TOML config")
    t.add_argument("--config", required=True)
    t.add_argument("--out")
    t.set_defaults(fn=cmd_train)

    v = sub.add_parser("verify", help="slack verification of a model on datasets")
    v.add_argument("--model", required=True)
    v.add_argument("--demos", required=True)
    v.add_argument("--layer", required=True)
    v.add_argument("--system", choices=["planar", "aircraft"], default="planar")
    v.add_argument("--delta", type=float, default=1.0)
    v.add_argument("--epsilon", type=float, default=0.01666)
    v.add_argument("--epsilon-bar", dest="epsilon_bar", type=float, default=0.0333)
    v.add_argument("--sigma", type=float, default=0.0333)
    v.add_argument("--gamma-safe", dest="gamma_safe", type=float, default=0.1)
    v.add_argument("--gamma-unsafe", dest="gamma_unsafe", type=float, default=0.3)
    v.add_argument("--gamma-dyn", dest="gamma_dyn", type=float, default=0.01)
    v.add_argument("--l-h", dest="l_h", type=float, default=2.5)
    v.add_argument("--lip-mode", dest="lip_mode",
                   choices=["gradient_norm", "certified"], default="gradient_norm")
    v.add_argument("--out")
    v.set_defaults(fn=cmd_verify)

    s = sub.add_parser("simulate", help="closed-loop CBF-QP rollout")
    s.add_argument("--model", required=True)
    s.add_argument("--system", choices=["planar", "aircraft"], default="planar")
    s.add_argument("--delta", type=float, default=1.0)
    s.add_argument("--x0", required=True, help="comma-separated initial state")
    s.add_argument("--dt", type=float, default=0.01)
    s.add_argument("--steps", type=int, default=1000)
    s.add_argument("--nominal", required=True, help="circle:<r> or goal:<state6>")
    s.add_argument("--alpha", type=float, default=1.0)
    s.add_argument("--out", default="result.jsonl")
    s.set_defaults(fn=cmd_simulate)

    e = sub.add_parser("experiment", help="end-to-end benchmark drivers")
    e.add_argument("which", choices=["planar", "aircraft"])
    e.add_argument("--config")
    e.add_argument("--out")
    e.set_defaults(fn=cmd_experiment)

    sv = sub.add_parser("serve", help="start the demonstration-collection service")
    sv.add_argument("--host", default="127.0.0.1")
    sv.add_argument("--port", type=int, default=8000)
    sv.add_argument("--model", help="optional model JSON for live barrier telemetry")
    sv.add_argument("--out-root", dest="out_root", default="runs/episodes")
    sv.add_argument("--ui", help="static UI directory to serve at /ui")
    sv.set_defaults(fn=cmd_serve)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.fn(args)


if __name__ == "__main__":
    sys.exit(main())
