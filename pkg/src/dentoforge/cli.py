"""``dentoforge`` command line.

Exit codes: 0 success, 2 validation error, 3 numeric failure, 4 I/O or
file-format error.
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

EXIT_OK, EXIT_VALIDATION, EXIT_NUMERIC, EXIT_IO = 0, 2, 3, 4


def _ids(text):
    if text is None or text == "":
        return []
    try:
        return [int(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated tooth ids, got {text!r}") from None


def _prepare_out(path: Path, force: bool) -> Path:
    if path.exists() and path.is_dir() and any(path.iterdir()) and not force:
        raise FileExistsError(f"{path} exists and is not empty (use --force)")
    path.mkdir(parents=True, exist_ok=True)
    return path


def _config(args):
    from .config import load_config

    overrides = {"seed": args.seed}
    for entry in getattr(args, "set", None) or []:
        key, _, raw = entry.partition("=")
        if not _:
            raise ValueError(f"--set expects key=value, got {entry!r}")
        try:
            overrides[key.strip()] = json.loads(raw)
        except json.JSONDecodeError:
            overrides[key.strip()] = raw
    return load_config(args.config, overrides)


# --------------------------------------------------------------------------
# commands


def cmd_synth(args) -> int:
    from .pipeline import write_dataset

    cfg = _config(args)
    samples = write_dataset(args.out, args.n, cfg.seed, args.points, args.jaw_side, args.force)
    print(f"wrote {len(samples)} jaws to {args.out}")
    return EXIT_OK


def cmd_train_layout(args) -> int:
    from .layoutdiffusion import LayoutNorm, load_checkpoint, make_model, save_checkpoint, train_layout
    from .pipeline import denoiser_config, load_dataset

    cfg = _config(args)
    data = load_dataset(args.dataset)
    graphs = [g for _, g in data]
    epochs = args.epochs if args.epochs is not None else cfg.paper.layout_iterations
    if args.resume:
        model, state = load_checkpoint(args.resume)
    else:
        model = make_model(denoiser_config(cfg), cfg.diffusion.T, cfg.diffusion.schedule,
                           norm=LayoutNorm.fit(graphs), seed=cfg.seed)
        state = None
    total = args.total_epochs or ((state.epoch if state else 0) + epochs)
    state = train_layout(model, graphs, epochs, batch_size=cfg.diffusion.batch_size, lr=cfg.diffusion.lr,
                         seed=cfg.seed, max_missing=cfg.diffusion.max_missing, state=state,
                         lr_final=cfg.diffusion.lr_final, total_epochs=total,
                         log=lambda e, loss: print(f"epoch {e:4d}  loss {loss:.6f}", flush=True) if args.verbose else None)
    save_checkpoint(args.out, model, state)
    print(f"trained to epoch {state.epoch}; first loss {state.history[0]:.6f}, last {state.history[-1]:.6f}")
    return EXIT_OK


def _masked_input(args):
    from . import jawgraph
    from .synthjaw import mask_missing

    graph = jawgraph.load(args.jaw)
    problems = jawgraph.validate(graph)
    if problems:
        raise jawgraph.ValidationError("; ".join(problems))
    if args.mask:
        graph, _ = mask_missing(graph, args.mask)
    return graph


def _sample(args, cfg, graph):
    from .layoutdiffusion import embed_text, jaw_prompt, load_checkpoint, sample_layout

    model, _ = load_checkpoint(args.checkpoint)
    prompt = args.prompt if args.prompt is not None else jaw_prompt(graph.jaw_side, graph.missing_ids())
    text = embed_text(prompt)
    return sample_layout(model, graph, text, steps=cfg.diffusion.sample_steps, seed=cfg.seed), text


def cmd_sample_layout(args) -> int:
    from . import jawgraph

    cfg = _config(args)
    graph = _masked_input(args)
    out, _ = _sample(args, cfg, graph)
    jawgraph.save(out, args.out)
    print(f"restored teeth {graph.missing_ids()} -> {args.out}")
    return EXIT_OK


def _run_optimize(cfg, graph, restored, out_dir: Path, reference=None, backend=None, prompt_text=None):
    from .distill import PerfectScore, ReferenceScore, optimize
    from .gsplat.io import save_gaussians, save_png
    from .gsplat.raster import rasterize
    from .layoutdiffusion import embed_text, make_schedule, tooth_prompt
    from .pipeline import (jaw_cameras, load_sample_points, points_to_gaussians, proxy_scene, reference_targets,
                           scene_from_layouts, tooth_order)
    from .gsplat.gaussians import SceneGaussians
    from . import jawgraph

    order = tooth_order(graph)
    layouts = {n.tooth_id: n.layout for n in graph.nodes}
    cams = jaw_cameras(layouts.values(), cfg)
    scene = scene_from_layouts(graph, cfg.optimize.gaussians_per_tooth, cfg.seed)
    schedule = make_schedule(cfg.diffusion.T, cfg.diffusion.schedule)
    eval_targets = None
    if reference == "perfect":
        provider = PerfectScore(schedule)
    else:
        if reference:
            ref_dir, sample_id = Path(reference).parent, Path(reference).stem
            truth_graph = jawgraph.load(reference)
            pts = load_sample_points(ref_dir, sample_id, order)
            truth = SceneGaussians([points_to_gaussians(t, pts[t], truth_graph.nodes[truth_graph.index_of(t)].layout)
                                    for t in order])
        else:
            truth = proxy_scene(graph, cfg.optimize.gaussians_per_tooth * 4, cfg.seed)
        targets = reference_targets(truth, cams, restored, backend)
        provider = ReferenceScore(schedule, targets)
        eval_targets = [targets[("scene", v)] for v in range(len(cams))]
    scene_text = prompt_text if prompt_text is not None else embed_text(f"{graph.jaw_side} jaw").vector
    result = optimize(scene, layouts, {"scene": provider, "instance": provider}, cams, cfg, seed=cfg.seed,
                      missing_ids=restored, order=order, scene_text=scene_text,
                      instance_text={t: embed_text(tooth_prompt(t)).vector for t in restored},
                      eval_targets=eval_targets, trace_path=out_dir / "trace.jsonl", backend=backend)
    save_gaussians(out_dir / "gaussians.ply", result.scene)
    rdir = out_dir / "renders"
    rdir.mkdir(exist_ok=True)
    for v, cam in enumerate(cams):
        save_png(rdir / f"view_{v:02d}.png", rasterize(result.scene, cam, backend=backend).image)
    nodes = [n if n.tooth_id not in result.layouts else
             jawgraph.ToothNode(n.tooth_id, result.layouts[n.tooth_id], n.features, n.missing) for n in graph.nodes]
    jawgraph.save(graph.replace_nodes(nodes), out_dir / "jaw.json")
    return result


def _write_meta(out_dir: Path, restored, extra=None):
    meta = {"restored": sorted(int(t) for t in restored)}
    meta.update(extra or {})
    (out_dir / "meta.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def cmd_optimize(args) -> int:
    from . import jawgraph

    cfg = _config(args)
    graph = jawgraph.load(args.jaw)
    if any(n.layout is None for n in graph.nodes):
        raise jawgraph.ValidationError("optimize needs every layout defined (run sample-layout first)")
    out = _prepare_out(Path(args.out), args.force)
    res = _run_optimize(cfg, graph, args.restored, out, args.reference)
    _write_meta(out, args.restored, {"stop_reason": res.stop_reason, "epochs": len(res.trace)})
    print(f"optimized {len(res.trace)} epochs ({res.stop_reason}) -> {out}")
    return EXIT_OK


def cmd_generate(args) -> int:
    from . import jawgraph

    cfg = _config(args)
    graph = _masked_input(args)
    restored = graph.missing_ids()
    out = _prepare_out(Path(args.out), args.force)
    sampled, text = _sample(args, cfg, graph)
    jawgraph.save(sampled, out / "jaw.json")
    if args.skip_optimize:
        _write_meta(out, restored, {"optimized": False})
        print(f"layout for {restored} -> {out / 'jaw.json'}")
        return EXIT_OK
    res = _run_optimize(cfg, sampled, restored, out, args.reference, prompt_text=text.vector)
    _write_meta(out, restored, {"optimized": True, "stop_reason": res.stop_reason, "epochs": len(res.trace)})
    print(f"generated {restored}: {len(res.trace)} epochs ({res.stop_reason}) -> {out}")
    return EXIT_OK


def _load_scene(path):
    from .gsplat.gaussians import check_finite
    from .gsplat.io import load_gaussians

    scene = load_gaussians(path)
    check_finite(scene)
    return scene


def cmd_render(args) -> int:
    from .gsplat.gaussians import layout_from_gaussians
    from .gsplat.io import save_png
    from .gsplat.raster import rasterize
    from .pipeline import jaw_cameras

    cfg = _config(args)
    scene = _load_scene(args.gaussians)
    out = _prepare_out(Path(args.out), args.force)
    cams = jaw_cameras([layout_from_gaussians(t) for t in scene.teeth], cfg, n_views=args.views, size=args.size)
    for v, cam in enumerate(cams):
        save_png(out / f"view_{v:02d}.png", rasterize(scene, cam).image)
    print(f"wrote {len(cams)} renders to {out}")
    return EXIT_OK


def cmd_eval(args) -> int:
    from .metrics import evaluate, format_table
    from .pipeline import load_sample_points

    cfg = _config(args)
    pred_root = Path(args.pred)
    if (pred_root / "gaussians.ply").exists():
        samples = [(args.sample or pred_root.name, pred_root)]
    else:
        samples = sorted((p.name, p) for p in pred_root.iterdir() if (p / "gaussians.ply").exists())
    if not samples:
        raise FileNotFoundError(f"{pred_root}: no predictions (gaussians.ply) found")
    rows, out = [], {}
    for name, pdir in samples:
        scene = _load_scene(pdir / "gaussians.ply")
        meta_path = pdir / "meta.json"
        restored = json.loads(meta_path.read_text())["restored"] if meta_path.exists() else scene.tooth_ids
        truth = load_sample_points(args.truth, name, restored)
        summary = evaluate(scene, truth, tau=cfg.metrics.fscore_tau)
        rows.append((name, summary))
        out[name] = json.loads(summary.to_json())
    print(format_table(rows))
    if args.json:
        Path(args.json).write_text(json.dumps(out, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return EXIT_OK


def cmd_export(args) -> int:
    from . import jawgraph
    from .gsplat.gaussians import layout_from_gaussians
    from .gsplat.io import save_points

    scene = _load_scene(args.gaussians)
    out = _prepare_out(Path(args.out), args.force)
    layouts = {}
    for t in scene.teeth:
        save_points(out / f"points_{t.tooth_id}.ply", t.means, comments=[f"tooth {t.tooth_id}"])
        lay = layout_from_gaussians(t)
        layouts[str(t.tooth_id)] = {k: getattr(lay, k) for k in jawgraph.LAYOUT_FIELDS}
    (out / "layouts.json").write_text(json.dumps(layouts, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    print(f"exported {len(scene)} teeth to {out}")
    return EXIT_OK


# --------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help="random seed (overrides config)")
    common.add_argument("--threads", type=int, default=None, help="worker cap (env DENTOFORGE_THREADS)")
    common.add_argument("--config", default=None, help="TOML config file")
    common.add_argument("--set", action="append", metavar="KEY=VALUE", help="config override, e.g. optimize.max_epochs=50")
    common.add_argument("--force", action="store_true", help="overwrite non-empty output directories")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="dentoforge", description="Compositional 3D tooth generation toolkit")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", parents=[common], help="generate a synthetic jaw dataset")
    s.add_argument("--n", type=int, required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--points", type=int, default=2048, help="ground-truth points per tooth")
    s.add_argument("--jaw-side", choices=["upper", "lower"], default="upper")
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("train-layout", parents=[common], help="train the layout denoiser")
    s.add_argument("--dataset", required=True)
    s.add_argument("--out", required=True, help="checkpoint path")
    s.add_argument("--epochs", type=int, default=None)
    s.add_argument("--total-epochs", type=int, default=None, help="learning-rate schedule horizon")
    s.add_argument("--resume", default=None, help="checkpoint to continue from")
    s.set_defaults(func=cmd_train_layout)

    for name, func, hlp in (("sample-layout", cmd_sample_layout, "fill in missing-tooth layouts"),
                            ("generate", cmd_generate, "sample layouts then optimize Gaussians")):
        s = sub.add_parser(name, parents=[common], help=hlp)
        s.add_argument("--jaw", required=True, help="jaw-graph JSON")
        s.add_argument("--checkpoint", required=True)
        s.add_argument("--prompt", default=None)
        s.add_argument("--mask", type=_ids, default=[], help="tooth ids to withhold before sampling")
        s.add_argument("--out", required=True)
        s.set_defaults(func=func)
        if name == "generate":
            s.add_argument("--reference", default=None,
                           help="ground-truth jaw JSON inside a synth dataset, or 'perfect'")
            s.add_argument("--skip-optimize", action="store_true")

    s = sub.add_parser("optimize", parents=[common], help="optimize Gaussians for a jaw with defined layouts")
    s.add_argument("--jaw", required=True)
    s.add_argument("--restored", type=_ids, default=[], help="tooth ids that get instance passes")
    s.add_argument("--reference", default=None)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_optimize)

    s = sub.add_parser("render", parents=[common], help="render a Gaussian PLY from an orbit")
    s.add_argument("--gaussians", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--views", type=int, default=None)
    s.add_argument("--size", type=int, default=None)
    s.set_defaults(func=cmd_render)

    s = sub.add_parser("eval", parents=[common], help="score predictions against a synth dataset")
    s.add_argument("--pred", required=True, help="prediction dir, or a dir of per-sample prediction dirs")
    s.add_argument("--truth", required=True, help="synth dataset dir")
    s.add_argument("--sample", default=None, help="sample id when --pred is a single prediction")
    s.add_argument("--json", default=None, help="also write summaries as JSON")
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("export", parents=[common], help="export per-tooth centers and fitted layouts")
    s.add_argument("--gaussians", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_export)
    return p


def main(argv=None) -> int:
    from . import _accel
    from .pipeline import thread_count

    parser = build_parser()
    args = parser.parse_args(argv)
    threads = thread_count(args.threads)
    if threads:
        import torch

        _accel.set_threads(threads)
        torch.set_num_threads(threads)
    from .config import ConfigError
    from .gsplat.io import PlyError
    from .jawgraph import SchemaError, ValidationError
    from .layoutdiffusion import CheckpointFormatError

    try:
        return args.func(args)
    except (CheckpointFormatError, PlyError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except FloatingPointError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ValidationError, SchemaError, ConfigError, ValueError, KeyError) as exc:
        print(f"invalid input: {exc}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
