"""Command-line entry point: ``pixeldoc <command> [flags]``.

Exit codes: 0 success, 2 usage, 3 data error, 4 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import checkpoint, curriculum, metrics, pipeline
from .errors import NumericalFailureError, PixelDocError
from .model import ModelConfig, generate_greedy
from .patchify import PatchGrid, patchify as make_patches, resize_bilinear, to_grid
from .ppm import read_ppm, write_ppm
from .raster import RenderedDocument, get_preset, overlay_question_banner, render_table_image, render_text_document
from .tables import TableLimits, TableSpec, generate_dataset
from .targets import (
    build_mae_example,
    build_mdtg_example,
    build_rqa_example,
    example_record,
    sample_phrase_spans,
    serialize_bbox_example,
)
from .tokenizer import DEFAULT_TOKENIZER

EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 2, 3, 4


class DataError(PixelDocError):
    pass


def _dump(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def _write_doc(out: Path, stem: str, doc: RenderedDocument) -> None:
    write_ppm(out / f"{stem}.ppm", doc.image)
    (out / f"{stem}.json").write_text(_dump(doc.to_annotation()) + "\n")


def _read_doc(json_path: Path) -> RenderedDocument:
    ann = json.loads(json_path.read_text())
    return RenderedDocument.from_annotation(ann, read_ppm(json_path.with_suffix(".ppm")))


def _load_config(path: str | None) -> ModelConfig:
    if not path:
        return ModelConfig()
    return ModelConfig.from_dict(json.loads(Path(path).read_text()))


# --------------------------------------------------------------------------
# commands


def cmd_gen_tableqa(args) -> int:
    out = Path(args.out)
    (out / "images").mkdir(parents=True, exist_ok=True)
    limits = TableLimits(max_rows=args.max_rows, max_cols=args.max_cols)
    threads = pipeline.worker_threads()
    with open(out / "manifest.jsonl", "w") as manifest:
        for i, (doc, qa) in enumerate(generate_dataset(args.n, args.seed, limits, threads=threads)):
            stem = f"{i:05d}"
            _write_doc(out / "images", stem, doc)
            record = {
                "image_path": f"images/{stem}.ppm",
                "question": qa.question,
                "answer": qa.answer,
                "template_id": qa.template_id,
                "provenance": qa.provenance,
                "table": qa.table_ref.to_json(),
                "style_id": doc.style.id,
                "seed": doc.seed,
            }
            manifest.write(_dump(record) + "\n")
    print(f"wrote {args.n} samples to {out}")
    return 0


def cmd_render(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    style = get_preset(args.style)
    if args.text:
        doc = render_text_document(Path(args.text).read_text(), style, args.max_width, args.seed)
    else:
        table = TableSpec.from_json(json.loads(Path(args.table).read_text()))
        doc = render_table_image(table, style, args.seed)
    _write_doc(out, "doc", doc)
    print(f"rendered {doc.image.width}x{doc.image.height} with {len(doc.words)} words to {out}")
    return 0


def cmd_patchify(args) -> int:
    img = read_ppm(args.image)
    resized, grid = to_grid(img, args.mode, args.budget)
    seq = make_patches(resized, grid)
    print(f"grid {grid.rows}x{grid.cols} patches {grid.n_patches}")
    dump = Path(args.out) / (Path(args.image).stem + ".patches.npy") if args.out else Path(args.image).with_suffix(".patches.npy")
    dump.parent.mkdir(parents=True, exist_ok=True)
    np.save(dump, seq.patches)
    return 0


def _manifest_records(in_dir: Path) -> list[dict]:
    path = in_dir / "manifest.jsonl"
    if not path.exists():
        raise DataError(f"{path} not found (rqa targets need a gen-tableqa manifest)")
    return [json.loads(line) for line in path.read_text().splitlines() if line.strip()]


def _annotation_files(in_dir: Path) -> list[Path]:
    files = sorted(p for p in in_dir.rglob("*.json") if p.with_suffix(".ppm").exists())
    if not files:
        raise DataError(f"no annotated documents (*.json + *.ppm) under {in_dir}")
    return files


def cmd_make_targets(args) -> int:
    in_dir, out = Path(args.in_dir), Path(args.out)
    (out / "images").mkdir(parents=True, exist_ok=True)
    tok = DEFAULT_TOKENIZER
    rng = np.random.default_rng(args.seed)
    records = []
    if args.task == "rqa":
        for k, rec in enumerate(_manifest_records(in_dir)):
            doc = _read_doc((in_dir / rec["image_path"]).with_suffix(".json"))
            records.append(build_rqa_example(doc, rec["question"], rec["answer"], doc.style, tok, seed=rec["seed"]))
    else:
        for k, path in enumerate(_annotation_files(in_dir)):
            doc = _read_doc(path)
            seed = int(rng.integers(2**62))
            if args.task == "mae":
                img, grid = to_grid(doc.image, args.mode)
                records.append(build_mae_example(img, grid.n_patches, seed=seed))
            elif args.task == "mdtg":
                records.append(build_mdtg_example(doc, sample_phrase_spans(doc, seed=seed), tok, seed=seed))
            else:
                sub = np.random.default_rng(seed)
                idx = int(sub.integers(len(doc.words)))
                direction = ("text_to_box", "box_to_text")[int(sub.integers(2))]
                records.append(serialize_bbox_example(doc, idx, direction, tok, seed=seed))
    with open(out / "examples.jsonl", "w") as fh:
        for k, ex in enumerate(records):
            rel = f"images/{k:05d}.ppm"
            write_ppm(out / rel, ex.image)
            fh.write(_dump(example_record(ex, rel, tok)) + "\n")
    tok.dump_manifest(out / "vocab.json")
    print(f"wrote {len(records)} {args.task} examples to {out}")
    return 0


def _parse_resolutions(text: str | None) -> dict[int, int]:
    if not text:
        return {}
    low, high = (int(v) for v in text.split(","))
    return {224: low, 896: high}


def cmd_pretrain(args) -> int:
    schedule = curriculum.paper_schedule(args.scale)
    cfg = _load_config(args.config)
    result = pipeline.pretrain(
        schedule,
        cfg,
        args.out,
        seed=args.seed,
        steps=args.steps_override,
        resolutions=_parse_resolutions(args.resolution),
        batch_size=args.batch_size,
        log=(lambda msg: print(msg, file=sys.stderr)) if args.verbose else None,
    )
    print(f"trained {result.steps} steps; checkpoint at {Path(args.out) / 'checkpoint.pdfg'}")
    return 0


def cmd_eval(args) -> int:
    names = [m.strip() for m in args.metrics.split(",") if m.strip()]
    dataset = Path(args.dataset)
    rows = [json.loads(line) for line in dataset.read_text().splitlines() if line.strip()]
    if not rows:
        raise DataError(f"{dataset} has no records")
    model = None
    if args.checkpoint:
        params, cfg, _ = checkpoint.load_checkpoint(args.checkpoint)
        model = (params, cfg)
    pairs = []
    for rec in rows:
        golds = rec.get("golds") or [rec["answer"]]
        if "prediction" in rec:
            pred = rec["prediction"]
        elif model is None:
            raise DataError("records without a prediction need --checkpoint")
        else:
            pred = _predict(model, dataset.parent, rec, args.resolution, args.max_len)
        pairs.append((pred, golds))
    report = metrics.evaluate_dataset(pairs, names)
    text = json.dumps(report, indent=2, sort_keys=True)
    if args.out:
        Path(args.out).write_text(text + "\n")
    print(text)
    return 0


def _predict(model, root: Path, rec: dict, resolution: int, max_len: int) -> str:
    params, cfg = model
    doc = _read_doc((root / rec["image_path"]).with_suffix(".json"))
    banner = overlay_question_banner(doc, rec["question"], doc.style)
    img = resize_bilinear(banner.image, resolution, resolution)
    seq = make_patches(img, PatchGrid.for_image(img))
    prefix = [DEFAULT_TOKENIZER.qa_id, *DEFAULT_TOKENIZER.encode(rec["question"])]
    return DEFAULT_TOKENIZER.decode(generate_greedy(params, cfg, seq, prefix, max_len))


def cmd_selftest(args) -> int:
    from .selftest import run_selftest

    return 0 if run_selftest(verbose=True) else 1


# --------------------------------------------------------------------------
# parser


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=0, help="64-bit seed (default 0)")
    common.add_argument("--out", help="output directory")
    common.add_argument("--scale", type=float, default=0.001, help="curriculum scale in (0, 1]")
    common.add_argument("--config", help="model config JSON file")

    parser = _Parser(prog="pixeldoc", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("gen-tableqa", parents=[common], help="generate a synthetic table QA dataset")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--max-rows", type=int, default=5)
    p.add_argument("--max-cols", type=int, default=5)
    p.set_defaults(func=cmd_gen_tableqa, needs_out=True)

    p = sub.add_parser("render", parents=[common], help="render a text file or table JSON")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--text", help="plain-text file")
    src.add_argument("--table", help='table JSON {"caption", "header", "rows"}')
    p.add_argument("--style", default="0", help="preset index 0-4 or name")
    p.add_argument("--max-width", type=int, default=448)
    p.set_defaults(func=cmd_render, needs_out=True)

    p = sub.add_parser("patchify", parents=[common], help="patchify a PPM image")
    p.add_argument("--image", required=True)
    p.add_argument("--mode", choices=["fixed224", "fixed896", "variable"], default="fixed224")
    p.add_argument("--budget", type=int, default=4096)
    p.set_defaults(func=cmd_patchify, needs_out=False)

    p = sub.add_parser("make-targets", parents=[common], help="build training examples from rendered docs")
    p.add_argument("--task", choices=["mae", "mdtg", "rqa", "bb"], required=True)
    p.add_argument("--in", dest="in_dir", required=True)
    p.add_argument("--mode", choices=["fixed224", "fixed896", "variable"], default="fixed224", help="MAE patch grid")
    p.set_defaults(func=cmd_make_targets, needs_out=True)

    p = sub.add_parser("pretrain", parents=[common], help="run the scaled curriculum on a toy model")
    p.add_argument("--steps-override", type=int, help="train this many steps instead of the full schedule")
    p.add_argument("--resolution", help="override stage resolutions as LOW,HIGH (multiples of 14)")
    p.add_argument("--batch-size", type=int, help="override the scaled stage batch sizes")
    p.add_argument("--verbose", action="store_true")
    p.set_defaults(func=cmd_pretrain, needs_out=True)

    p = sub.add_parser("eval", parents=[common], help="score predictions or a checkpoint on a dataset")
    p.add_argument("--checkpoint")
    p.add_argument("--dataset", required=True, help="JSONL with golds/answer and optional prediction")
    p.add_argument("--metrics", default="anls,em,f1")
    p.add_argument("--resolution", type=int, default=224)
    p.add_argument("--max-len", type=int, default=32)
    p.set_defaults(func=cmd_eval, needs_out=False)

    p = sub.add_parser("selftest", parents=[common], help="run invariant and gradient suites")
    p.set_defaults(func=cmd_selftest, needs_out=False)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "needs_out", False) and not args.out:
        parser.error(f"{args.command} requires --out")
    threads = pipeline.worker_threads()
    try:
        import torch

        torch.set_num_threads(threads)
    except ImportError:  # pragma: no cover
        pass
    try:
        return args.func(args)
    except NumericalFailureError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (PixelDocError, OSError, ValueError, KeyError, json.JSONDecodeError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
