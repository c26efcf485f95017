"""Quick invariant and gradient suites runnable without pytest (``pixeldoc selftest``)."""

from __future__ import annotations

import time
import traceback

import numpy as np


def _raster():
    from .raster import PRESETS, render_text_document

    a = render_text_document("Hello pixel world", PRESETS[0], 64, seed=7)
    b = render_text_document("Hello pixel world", PRESETS[0], 64, seed=7)
    assert a.image == b.image and a.words == b.words
    boxes = a.words
    for i, p in enumerate(boxes):
        for q in boxes[i + 1 :]:
            assert p.x2 <= q.x or q.x2 <= p.x or p.y2 <= q.y or q.y2 <= p.y


def _ppm():
    from .ppm import decode_ppm, encode_ppm
    from .raster import PixelImage

    rng = np.random.default_rng(0)
    for _ in range(50):
        w, h = rng.integers(1, 20, size=2)
        img = PixelImage(int(w), int(h), rng.integers(0, 256, size=(h, w, 3), dtype=np.uint8))
        assert decode_ppm(encode_ppm(img)) == img


def _tables():
    from .tables import dataset_sample, oracle_answer

    for i in range(200):
        doc, qa = dataset_sample(i, 11)
        assert oracle_answer(qa.table_ref, qa.provenance) == qa.answer


def _patchify():
    from .patchify import choose_grid

    rng = np.random.default_rng(1)
    for _ in range(200):
        w, h = (int(v) for v in rng.integers(1, 5000, size=2))
        g = choose_grid(w, h)
        ratio = max(g.rows, g.cols) // min(g.rows, g.cols)
        assert g.n_patches <= 4096 and ratio in (1, 4, 16, 64, 256, 1024, 4096)


def _tokenizer():
    from .tokenizer import DEFAULT_TOKENIZER as tok

    for s in ("", "abc", "What is the value for \"City\"?"):
        assert tok.decode(tok.encode(s)) == s


def _curriculum():
    from .curriculum import paper_schedule

    assert paper_schedule(0.01).boundaries == (500, 4000, 4550, 6050)


def _metrics():
    from .metrics import anls

    assert anls("pianos", ["piano"]) == 1 - 1 / 6
    assert anls("blue", ["red"]) == 0.0


def _gradients():
    from . import gradcheck

    cfg = gradcheck.small_config()
    params = gradcheck.generic_params(cfg)
    for task in ("MAE", "MDTG", "RQA", "BB"):
        res = gradcheck.check_gradients(params, cfg, gradcheck.head_batch(task), per_tensor=2)
        worst = max(r.rel_error for r in res)
        assert worst < 1e-4, f"{task}: worst relative error {worst:.2e}"


SUITES = {
    "raster": _raster,
    "ppm": _ppm,
    "tables": _tables,
    "patchify": _patchify,
    "tokenizer": _tokenizer,
    "curriculum": _curriculum,
    "metrics": _metrics,
    "gradients": _gradients,
}


def run_selftest(verbose: bool = False) -> bool:
    ok = True
    for name, fn in SUITES.items():
        t0 = time.perf_counter()
        try:
            fn()
            status = "PASS"
        except Exception:  # noqa: BLE001 - report every failing suite
            ok = False
            status = "FAIL"
            if verbose:
                traceback.print_exc()
        if verbose:
            print(f"{status} {name} ({time.perf_counter() - t0:.1f}s)")
    return ok
