"""hoikit command line.

Exit codes: 0 success, 1 usage error, 2 data error (including a failed
gradient check), 3 diverged fit.
"""
from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import asdict

import numpy as np

from . import __version__
from .checks import GRAD_TOL, run_all, run_suite, SUITES
from .errors import DivergedLoss, HoikitError, InvalidConfig
from .fit import JointOptions, fit_joint_hoi, fit_object_track, write_trace_csv
from .metrics import Image, cd_best, chamfer, dssim, l1_image, psnr, write_metrics_csv
from .render import render_arrays, write_depth_pgm, write_ppm
from .synth import TEMPLATES, SceneConfig, generate_scene, load_scene, save_scene

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_DIVERGED = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _dump_json(path, obj):
    with open(path, "w") as fh:
        json.dump(obj, fh, sort_keys=True)
        fh.write("\n")


def _load_json(path):
    with open(path) as fh:
        return json.load(fh)


# ---- commands ---------------------------------------------------------------------

def cmd_synth(a):
    cfg = SceneConfig(template=a.template, n_frames=a.frames, key_stride=a.key_stride,
                      noise=a.noise, far_object=a.far_object)
    save_scene(generate_scene(cfg, a.seed), a.out)
    print(f"wrote {a.out}")


def cmd_fit_object(a):
    scene = load_scene(a.scene)
    fit = fit_object_track(scene.obs_object, scene.grid, a.iters, a.step, a.seed)
    config = {"command": "fit-object", "scene": os.path.basename(a.scene), "iters": a.iters,
              "step": a.step, "seed": a.seed}
    _dump_json(a.out, {"config": config, "grid": scene.grid.to_json(), "track": fit.track.to_json(),
                       "final_loss": fit.trace[-1] if fit.trace else None})
    if a.trace:
        write_trace_csv(a.trace, {"object": fit.trace})
    print(f"wrote {a.out}")


def cmd_fit_joint(a):
    scene = load_scene(a.scene)
    opts = JointOptions(
        pose_iters=a.pose_iters, object_iters=a.object_iters, hoi_iters=a.hoi_iters,
        contact_weight=a.contact_weight, use_hoi=not a.no_hoi,
        values="own" if a.own_values else "cross",
        heads="zero" if a.frozen_heads else "zero_last", train_heads=not a.frozen_heads,
        seed=a.seed)
    res = fit_joint_hoi(scene, opts)
    os.makedirs(a.out, exist_ok=True)
    files = {"trace": "trace.csv", "poses": "poses.json", "track": "track.json",
             "points": "points.json"}
    write_trace_csv(os.path.join(a.out, files["trace"]), res.traces)
    _dump_json(os.path.join(a.out, files["poses"]),
               {"alpha": res.alpha, "baseline": res.baseline.theta.tolist(),
                "final": res.final.theta.tolist()})
    _dump_json(os.path.join(a.out, files["track"]),
               {"grid": scene.grid.to_json(), "track": res.track.to_json()})
    _dump_json(os.path.join(a.out, files["points"]),
               {ph: {"human": out.human.tolist(), "object": out.objects.tolist()}
                for ph, out in (("baseline", res.baseline), ("final", res.final))})
    if res.module is not None:
        files["hoi"] = "hoi.json"
        _dump_json(os.path.join(a.out, files["hoi"]),
                   {"module": res.module.to_json(), "hexplane": res.grid.to_json(),
                    "object_features": {k: {"shape": list(v.shape), "data": v.data.reshape(-1).tolist()}
                                        for k, v in sorted(res.features.named_parameters().items())}})
    report = dict(res.report)
    report["config"] = {"command": "fit-joint", "scene": os.path.basename(a.scene),
                        "scene_seed": scene.seed, "template": scene.config.template,
                        **asdict(opts)}
    report["files"] = files
    _dump_json(os.path.join(a.out, "report.json"), report)
    b, f = report["baseline"], report["final"]
    print(f"phase={res.phase} contact_cd_best baseline={b['contact_cd_best_median']} "
          f"final={f['contact_cd_best_median']}")


def _scene_images(scene, frame, human, objects):
    cfg = scene.config
    pos = np.concatenate([human, objects])
    scales = np.concatenate([scene.rig.scale, np.full((len(objects), 3), 0.02)])
    opac = np.concatenate([scene.rig.opacity, np.ones(len(objects))])
    cols = np.concatenate([scene.rig.color, scene.object_color])
    return render_arrays(pos, scales, opac, cols, scene.cameras[frame],
                         cfg.image_width, cfg.image_height)


def _run_points(run_dir):
    rep = _load_json(os.path.join(run_dir, "report.json"))
    pts = _load_json(os.path.join(run_dir, rep["files"]["points"]))["final"]
    return rep, np.asarray(pts["human"], dtype=np.float64), np.asarray(pts["object"], dtype=np.float64)


def _check_frame(scene, frame):
    if not 0 <= frame < scene.n_frames:
        raise InvalidConfig(f"frame {frame} outside [0, {scene.n_frames - 1}]")


def cmd_eval(a):
    scene = load_scene(a.scene)
    rep, human, objects = _run_points(a.run)
    if human.shape[0] != scene.n_frames:
        raise InvalidConfig("run and scene disagree on frame count")
    gt_h, gt_o = scene.gt_human_points(), scene.gt_object_points()
    hl, hr = scene.hands["left"], scene.hands["right"]
    scene_id = f"{scene.config.template}-{scene.seed}"
    rows = []
    for f in range(scene.n_frames):
        ref, _, _ = _scene_images(scene, f, gt_h[f], gt_o[f])
        img, _, _ = _scene_images(scene, f, human[f], objects[f])
        ref, img = Image(ref), Image(img)
        rows.append({"scene_id": scene_id, "frame": f, "phase": rep["phase"],
                     "psnr": psnr(ref, img), "dssim": dssim(ref, img), "l1": l1_image(ref, img),
                     "chamfer": chamfer(objects[f], gt_o[f]),
                     "cd_best": cd_best(objects[f], human[f, hl], human[f, hr])})
    write_metrics_csv(a.csv, rows)
    print(f"wrote {a.csv} ({len(rows)} rows, phase={rep['phase']})")


def cmd_render(a):
    scene = load_scene(a.scene)
    _check_frame(scene, a.frame)
    if a.run:
        _, human, objects = _run_points(a.run)
        human, objects = human[a.frame], objects[a.frame]
    else:
        human, objects = scene.gt_human_points()[a.frame], scene.gt_object_points()[a.frame]
    rgb, depth, _ = _scene_images(scene, a.frame, human, objects)
    write_ppm(a.out, rgb)
    if a.depth:
        write_depth_pgm(a.depth, depth)
    print(f"wrote {a.out}")


def cmd_gradcheck(a):
    names = list(SUITES) if a.suite == "all" else [a.suite]
    worst = {n: float(run_suite(n, a.seed)) for n in names}
    for n, v in worst.items():
        print(f"{n:10s} max_rel_err={v:.3e} {'ok' if v < GRAD_TOL else 'FAIL'}")
    if any(v >= GRAD_TOL for v in worst.values()):
        return EXIT_DATA
    return EXIT_OK


def build_parser():
    p = _Parser(prog="hoikit", description="Coupled human-object motion fitting toolkit.")
    p.add_argument("--version", action="version", version=f"hoikit {__version__}")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True

    s = sub.add_parser("synth", help="generate a synthetic scene")
    s.add_argument("--template", choices=TEMPLATES, default="carry")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--frames", type=int, default=33)
    s.add_argument("--key-stride", type=int, default=4)
    s.add_argument("--noise", type=float, default=0.01)
    s.add_argument("--far-object", action="store_true", help="keep the object out of reach")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("fit-object", help="fit spline tracks to the object observations")
    s.add_argument("--scene", required=True)
    s.add_argument("--iters", type=int, default=2000)
    s.add_argument("--step", type=float, default=0.01)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.add_argument("--trace")
    s.set_defaults(func=cmd_fit_object)

    d = JointOptions()
    s = sub.add_parser("fit-joint", help="two-phase human+object fit")
    s.add_argument("--scene", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--no-hoi", action="store_true", help="stop after the baseline phase")
    vals = s.add_mutually_exclusive_group()
    vals.add_argument("--conventional-values", action="store_true",
                      help="attend over the other entity's values (default)")
    vals.add_argument("--own-values", action="store_true",
                      help="attend over the querying entity's values; needs equal token counts")
    s.add_argument("--frozen-heads", action="store_true", help="zero, untrained residual heads")
    s.add_argument("--pose-iters", type=int, default=d.pose_iters)
    s.add_argument("--object-iters", type=int, default=d.object_iters)
    s.add_argument("--hoi-iters", type=int, default=d.hoi_iters)
    s.add_argument("--contact-weight", type=float, default=d.contact_weight)
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_fit_joint)

    s = sub.add_parser("eval", help="per-frame metrics of a run against ground truth")
    s.add_argument("--scene", required=True)
    s.add_argument("--run", required=True)
    s.add_argument("--csv", required=True)
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("render", help="render one frame to PPM")
    s.add_argument("--scene", required=True)
    s.add_argument("--run", help="render fitted points instead of ground truth")
    s.add_argument("--frame", type=int, required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--depth", help="also write a 16-bit PGM depth image")
    s.set_defaults(func=cmd_render)

    s = sub.add_parser("gradcheck", help="finite-difference gradient suites")
    s.add_argument("--suite", choices=["all"] + list(SUITES), default="all")
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_gradcheck)
    return p


def run(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except UsageError as e:
        print(e, file=sys.stderr)
        return EXIT_USAGE
    try:
        code = args.func(args)
    except DivergedLoss as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_DIVERGED
    except (HoikitError, OSError, KeyError, json.JSONDecodeError) as e:
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK if code is None else code


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
