"""Command-line interface.

Exit codes: 0 ok, 1 usage, 2 parse/input, 3 backend transport, 4 safety.
Failures print a JSON object ``{error, message, exit_code, ...}`` on stderr.
Configuration precedence: flags, then GB_* environment variables, then the
``--config`` file.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path
from typing import Any, Sequence

from . import __version__
from .bvh import load_bvh, retarget_bvh
from .corpus import (
    AnnotationRecord,
    AsrSegment,
    DatasetRow,
    Sentence,
    annotate_corpus,
    apply_reviews,
    audit_selection,
    build_dataset,
    clip_boundaries,
    corpus_report,
    merge_segments,
    review_queue,
)
from .errors import GestureBotError, InputError, SafetyError, UsageError
from .gsd import classify_many
from .io import atomic_write_text, dumps_json, dumps_jsonl, read_jsonl
from .llm import Backend, LocalLLMBackend, MockBackend, with_model
from .metrics import eval_model, load_eval_dataset, plot_confusion
from .motion import (
    JointTrajectory,
    RobotProfile,
    check_velocity,
    export_commands,
    import_commands,
    read_trajectory_csv,
)
from .pipeline import PipelineConfig, load_pipeline_config, route
from .pose import load_pose_sequence, retarget_pose

log = logging.getLogger("gesturebot")


class _Parser(argparse.ArgumentParser):
    def error(self, message: str) -> None:  # argparse would exit 2
        raise UsageError(f"{self.prog}: {message}")


def _emit(obj: Any) -> None:
    sys.stdout.write(dumps_json(obj))


def _out_path(args: argparse.Namespace, cfg: PipelineConfig, default_name: str) -> Path:
    return Path(args.out) if getattr(args, "out", None) else cfg.output_dir / default_name


def _config(args: argparse.Namespace) -> PipelineConfig:
    cfg = load_pipeline_config(args.config)
    backend = cfg.backend
    if args.endpoint:
        backend = replace(backend, endpoint_url=args.endpoint)
    if args.model:
        backend = with_model(backend, args.model)
    cfg = replace(cfg, backend=backend)
    return cfg.with_overrides(
        output_dir=Path(args.out_dir) if args.out_dir else None,
        profile_path=Path(args.profile) if args.profile else None,
        template_path=Path(args.template) if args.template else None,
        mapping_path=Path(getattr(args, "map", None)) if getattr(args, "map", None) else None,
        concurrency=args.concurrency,
    )


def _backend(args: argparse.Namespace, cfg: PipelineConfig) -> Backend:
    if args.mock:
        return MockBackend.from_file(args.mock, strict=not args.lenient)
    return LocalLLMBackend(cfg.backend)


def _load_trajectory(path: str, profile: RobotProfile) -> JointTrajectory:
    if path.endswith(".json"):
        with open(path, encoding="utf-8") as fh:
            try:
                doc = json.load(fh)
            except json.JSONDecodeError as exc:
                raise InputError(f"{path}: invalid JSON ({exc.msg})") from exc
        return import_commands(doc, profile)
    return read_trajectory_csv(path, profile)


# -- gsd ----------------------------------------------------------------------------


def cmd_gsd_classify(args: argparse.Namespace) -> int:
    cfg = _config(args)
    rows = list(read_jsonl(args.input))
    items = []
    for i, r in enumerate(rows):
        if "text" not in r:
            raise InputError(f"{args.input}: row {i + 1} has no text")
        items.append((str(r.get("id", r.get("sentence_id", i))), str(r["text"])))
    results = classify_many(items, _backend(args, cfg), cfg.template(), cfg.concurrency)
    errors = [r for r in results if isinstance(r, BaseException)]
    if errors:
        raise errors[0]
    out = _out_path(args, cfg, "labels.jsonl")
    atomic_write_text(out, dumps_jsonl(r.to_dict() for r in results))
    counts: dict[str, int] = {}
    for r in results:
        counts[r.label.value] = counts.get(r.label.value, 0) + 1
    _emit({"output": str(out), "classified": len(results), "labels": dict(sorted(counts.items()))})
    return 0


def cmd_gsd_eval(args: argparse.Namespace) -> int:
    cfg = _config(args)
    dataset = load_eval_dataset(read_jsonl(args.dataset))
    run = eval_model(dataset, _backend(args, cfg), cfg.template(), cfg.concurrency)
    out_dir = Path(args.out) if args.out else cfg.output_dir
    report = {"model": cfg.backend.model_name if not args.mock else Path(args.mock).stem, **run.to_dict()}
    atomic_write_text(out_dir / "report.json", dumps_json(report))
    atomic_write_text(out_dir / "report.txt", run.report.table())
    atomic_write_text(out_dir / "confusion.csv", run.matrix.to_csv())
    atomic_write_text(out_dir / "eval_log.jsonl", dumps_jsonl(run.log))
    if args.plot:
        plot_confusion(run.matrix, args.plot, title=report["model"])
    sys.stderr.write(run.report.table())
    _emit(report)
    return 0


# -- corpus ----------------------------------------------------------------------------


def cmd_corpus_merge(args: argparse.Namespace) -> int:
    cfg = _config(args)
    segments = [AsrSegment.from_dict(r) for r in read_jsonl(args.segments)]
    sentences = merge_segments(segments)
    out_dir = Path(args.out) if args.out else cfg.output_dir
    atomic_write_text(out_dir / "sentences.jsonl", dumps_jsonl(s.to_dict() for s in sentences))
    cuts = "sentence_id,start,end\n" + "".join(
        f"{sid},{start!r},{end!r}\n" for sid, start, end in clip_boundaries(sentences, args.padding)
    )
    atomic_write_text(out_dir / "cuts.csv", cuts)
    _emit({"segments": len(segments), "sentences": len(sentences),
           "tail_fragments": sum(s.tail for s in sentences), "output": str(out_dir)})
    return 0


def _load_sentences(path: str) -> list[Sentence]:
    return [Sentence.from_dict(r) for r in read_jsonl(path)]


def cmd_corpus_annotate(args: argparse.Namespace) -> int:
    cfg = _config(args)
    backends: list[Backend] = []
    for spec in args.mock_annotator or []:
        name, _, path = spec.partition("=")
        if not path:
            raise UsageError(f"--mock-annotator expects NAME=FIXTURES.json, got {spec!r}")
        backends.append(MockBackend.from_file(path, strict=not args.lenient, name=name))
    for model in args.annotator_model or []:
        backends.append(LocalLLMBackend(with_model(cfg.backend, model)))
    if not backends:
        raise UsageError("give at least one --annotator-model or --mock-annotator")
    run = annotate_corpus(_load_sentences(args.sentences), backends, cfg.template(), cfg.concurrency)
    out_dir = Path(args.out) if args.out else cfg.output_dir
    atomic_write_text(out_dir / "annotations.jsonl", dumps_jsonl(r.to_dict() for r in run.records))
    atomic_write_text(out_dir / "annotation_failures.jsonl", dumps_jsonl(f.to_dict() for f in run.failures))
    _emit({"records": len(run.records), "failures": len(run.failures),
           "anomalies": run.anomaly_count, "annotators": [b.name for b in backends]})
    return 0


def cmd_corpus_reconcile(args: argparse.Namespace) -> int:
    cfg = _config(args)
    sentences = _load_sentences(args.sentences)
    records = [AnnotationRecord.from_dict(r) for r in read_jsonl(args.annotations)]
    rows = build_dataset(sentences, records)
    applied = apply_reviews(rows, read_jsonl(args.reviews)) if args.reviews else 0
    out_dir = Path(args.out) if args.out else cfg.output_dir
    queue = review_queue(rows)
    atomic_write_text(out_dir / "dataset.jsonl", dumps_jsonl(r.to_dict() for r in rows))
    atomic_write_text(out_dir / "review_queue.jsonl", dumps_jsonl(queue))
    _emit({"sentences": len(rows), "reviews_applied": applied, "queued": len(queue),
           "report": corpus_report(rows)})
    return 0


def _load_dataset(path: str) -> list[DatasetRow]:
    return [DatasetRow.from_dict(r) for r in read_jsonl(path)]


def cmd_corpus_stats(args: argparse.Namespace) -> int:
    cfg = _config(args)
    report = corpus_report(_load_dataset(args.dataset))
    atomic_write_text(_out_path(args, cfg, "stats.json"), dumps_json(report))
    _emit(report)
    return 0


def cmd_corpus_audit(args: argparse.Namespace) -> int:
    cfg = _config(args)
    ids = audit_selection(_load_dataset(args.dataset))
    atomic_write_text(_out_path(args, cfg, "audit.json"), dumps_json(ids))
    _emit({"audit": ids})
    return 0


# -- retarget / traj -----------------------------------------------------------------------


def _write_commands(args: argparse.Namespace, cfg: PipelineConfig, traj: JointTrajectory,
                    profile: RobotProfile, name: str) -> dict[str, Any]:
    doc = export_commands(traj, profile)
    out = _out_path(args, cfg, name)
    atomic_write_text(out, dumps_json(doc))
    return {"output": str(out), "frames": len(traj), "duration_s": traj.duration}


def cmd_retarget_bvh(args: argparse.Namespace) -> int:
    cfg = _config(args)
    profile = cfg.profile()
    factor = args.factor if args.factor is not None else cfg.downsample_factor
    traj = retarget_bvh(load_bvh(args.input), cfg.mapping(), profile, factor)
    _emit(_write_commands(args, cfg, traj, profile, "commands.json"))
    return 0


def cmd_retarget_pose(args: argparse.Namespace) -> int:
    cfg = _config(args)
    profile = cfg.profile()
    scale = args.speed_scale if args.speed_scale is not None else cfg.speed_scale
    factor = args.factor if args.factor is not None else cfg.pose_factor
    traj = retarget_pose(load_pose_sequence(args.input, y_down=args.y_down), profile, scale, factor)
    _emit(_write_commands(args, cfg, traj, profile, "commands.json"))
    return 0


def cmd_traj_check(args: argparse.Namespace) -> int:
    cfg = _config(args)
    profile = cfg.profile()
    violations = check_velocity(_load_trajectory(args.input, profile), profile)
    _emit({"violations": [v.to_dict() for v in violations]})
    return SafetyError.exit_code if violations else 0


def cmd_traj_export(args: argparse.Namespace) -> int:
    cfg = _config(args)
    profile = cfg.profile()
    traj = _load_trajectory(args.input, profile)
    _emit(_write_commands(args, cfg, traj, profile, "commands.json"))
    return 0


def cmd_traj_preview(args: argparse.Namespace) -> int:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    cfg = _config(args)
    profile = cfg.profile()
    traj = _load_trajectory(args.input, profile)
    fig, ax = plt.subplots(figsize=(8, 4.5))
    for j, name in enumerate(profile.joint_names):
        ax.plot(traj.times, traj.angles[:, j], marker=".", label=name)
    ax.set_xlabel("time (s)")
    ax.set_ylabel("angle (rad)")
    ax.legend(fontsize=6, ncol=2, loc="upper right")
    fig.tight_layout()
    out = _out_path(args, cfg, "preview.png")
    out.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(out, dpi=110)
    plt.close(fig)
    _emit({"output": str(out)})
    return 0


def cmd_route(args: argparse.Namespace) -> int:
    cfg = _config(args)
    if args.speed_scale is not None:
        cfg = replace(cfg, speed_scale=args.speed_scale)
    if args.factor is not None:
        cfg = replace(cfg, downsample_factor=args.factor)
    landmarks = load_pose_sequence(args.landmarks, y_down=args.y_down) if args.landmarks else None
    bvh = load_bvh(args.bvh) if args.bvh else None
    result = route(args.sentence, _backend(args, cfg), cfg, landmarks=landmarks, bvh=bvh)
    profile = cfg.profile()
    doc = export_commands(result.trajectory, profile)
    out = _out_path(args, cfg, "route.json")
    payload = {
        "label": result.label.value,
        "provenance": result.provenance,
        "reasoning": result.classification.reasoning,
        "frames": len(result.trajectory),
        "duration_s": result.trajectory.duration,
        "commands": doc,
    }
    atomic_write_text(out, dumps_json(payload))
    _emit({k: v for k, v in payload.items() if k != "commands"} | {"output": str(out)})
    return 0


# -- parser --------------------------------------------------------------------------------


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="pipeline config YAML")
    p.add_argument("--out-dir", help="output directory (default from config, else ./out)")
    p.add_argument("--profile", help="robot profile YAML")
    p.add_argument("--template", help="GSD prompt template YAML")
    p.add_argument("--endpoint", help="LLM server URL (overrides GB_ENDPOINT)")
    p.add_argument("--model", help="LLM model name (overrides GB_MODEL)")
    p.add_argument("--mock", help="replay responses from a fixture JSON instead of a live server")
    p.add_argument("--lenient", action="store_true", help="unknown prompts get the fallback answer")
    p.add_argument("--concurrency", type=int, help="max in-flight LLM requests")
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="gesturebot", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="group", required=True, parser_class=_Parser)

    def add(group_sub: Any, name: str, fn: Any, help_: str) -> argparse.ArgumentParser:
        p = group_sub.add_parser(name, help=help_, description=help_)
        _common(p)
        p.set_defaults(func=fn)
        return p

    g = sub.add_parser("gsd", help="gesture sentence detection").add_subparsers(dest="cmd", required=True, parser_class=_Parser)
    p = add(g, "classify", cmd_gsd_classify, "label sentences from a JSONL file {id, text}")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out")
    p = add(g, "eval", cmd_gsd_eval, "score a model on a labelled dataset")
    p.add_argument("--dataset", required=True)
    p.add_argument("--out", help="output directory for report files")
    p.add_argument("--plot", help="write the confusion matrix as an image")

    c = sub.add_parser("corpus", help="dataset construction").add_subparsers(dest="cmd", required=True, parser_class=_Parser)
    p = add(c, "merge", cmd_corpus_merge, "rebuild sentences from ASR segments; write sentences.jsonl and cuts.csv")
    p.add_argument("--segments", required=True)
    p.add_argument("--padding", type=float, default=0.0)
    p.add_argument("--out", help="output directory")
    p = add(c, "annotate", cmd_corpus_annotate, "label sentences with several models")
    p.add_argument("--sentences", required=True)
    p.add_argument("--annotator-model", action="append", help="live model name (repeatable)")
    p.add_argument("--mock-annotator", action="append", help="NAME=FIXTURES.json (repeatable)")
    p.add_argument("--out", help="output directory")
    p = add(c, "reconcile", cmd_corpus_reconcile, "compute consensus, apply reviews, write dataset and review queue")
    p.add_argument("--sentences", required=True)
    p.add_argument("--annotations", required=True)
    p.add_argument("--reviews", help="filled-in review queue JSONL")
    p.add_argument("--out", help="output directory")
    p = add(c, "stats", cmd_corpus_stats, "label counts, disagreement rate, human agreement")
    p.add_argument("--dataset", required=True)
    p.add_argument("--out")
    p = add(c, "audit", cmd_corpus_audit, "pick the longest 20%% of Neither sentences for audit")
    p.add_argument("--dataset", required=True)
    p.add_argument("--out")

    r = sub.add_parser("retarget", help="motion to robot commands").add_subparsers(dest="cmd", required=True, parser_class=_Parser)
    p = add(r, "bvh", cmd_retarget_bvh, "retarget a BVH file")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--map", help="joint mapping YAML")
    p.add_argument("--factor", type=int, help="keyframe downsampling factor (default 12)")
    p.add_argument("--out")
    p = add(r, "pose", cmd_retarget_pose, "retarget a landmark JSONL file")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--speed-scale", type=float, help="time dilation (default 12)")
    p.add_argument("--factor", type=int, help="optional keyframe downsampling (default 1)")
    p.add_argument("--y-down", action="store_true", help="landmarks use image-style y-down axes")
    p.add_argument("--out")

    t = sub.add_parser("traj", help="trajectory utilities").add_subparsers(dest="cmd", required=True, parser_class=_Parser)
    p = add(t, "check", cmd_traj_check, "report velocity violations (exit 4 if any)")
    p.add_argument("--in", dest="input", required=True, help="trajectory CSV or command JSON")
    p = add(t, "export", cmd_traj_export, "write a command document; refuses unsafe input")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out")
    p = add(t, "preview", cmd_traj_preview, "plot joint angles against time")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out")

    p = sub.add_parser("route", help="classify a sentence and produce the matching gesture")
    _common(p)
    p.set_defaults(func=cmd_route)
    p.add_argument("--sentence", required=True)
    p.add_argument("--landmarks", help="landmark JSONL for the mimic path")
    p.add_argument("--bvh", help="BVH file for the generated path")
    p.add_argument("--map", help="joint mapping YAML")
    p.add_argument("--speed-scale", type=float)
    p.add_argument("--factor", type=int)
    p.add_argument("--y-down", action="store_true")
    p.add_argument("--out")
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    try:
        args = build_parser().parse_args(argv)
        logging.basicConfig(
            level=logging.INFO if args.verbose else logging.WARNING,
            format="%(levelname)s %(name)s: %(message)s",
            stream=sys.stderr,
        )
        return args.func(args)
    except GestureBotError as exc:
        sys.stderr.write(json.dumps(exc.to_dict()) + "\n")
        return exc.exit_code
    except OSError as exc:
        err = InputError(str(exc))
        sys.stderr.write(json.dumps(err.to_dict()) + "\n")
        return err.exit_code


if __name__ == "__main__":
    sys.exit(main())
