"""Byte-level tokenizer with task special tokens and reserved patch-token ids."""

from __future__ import annotations

import json

N_BYTES = 256
SPECIALS = ("PAD", "BOS", "END", "MASK", "[BB]", "[QA]", "[MAE]", "[MDTG]")
N_PATCH_TOKENS = 1024

_SPECIAL_TEXT = {
    "PAD": "<pad>",
    "BOS": "<s>",
    "END": "</s>",
    "MASK": "<mask>",
}


class Tokenizer:
    """Immutable vocabulary: bytes 0-255, then specials, then patch tokens."""

    def __init__(self):
        self._special_ids = {name: N_BYTES + i for i, name in enumerate(SPECIALS)}
        self.patch_base = N_BYTES + len(SPECIALS)
        self.vocab_size = self.patch_base + N_PATCH_TOKENS

    def special(self, name: str) -> int:
        return self._special_ids[name]

    @property
    def pad_id(self) -> int:
        return self._special_ids["PAD"]

    @property
    def end_id(self) -> int:
        return self._special_ids["END"]

    @property
    def bb_id(self) -> int:
        return self._special_ids["[BB]"]

    @property
    def qa_id(self) -> int:
        return self._special_ids["[QA]"]

    def task_id(self, task: str) -> int:
        return self._special_ids[{"MAE": "[MAE]", "MDTG": "[MDTG]", "BB": "[BB]", "RQA": "[QA]"}[task]]

    def patch_token(self, k: int) -> int:
        if not 0 <= k < N_PATCH_TOKENS:
            raise ValueError(f"patch token index {k} out of range")
        return self.patch_base + k

    def encode(self, text: str) -> list[int]:
        return list(text.encode("utf-8"))

    def token_text(self, tid: int) -> str:
        if 0 <= tid < N_BYTES:
            return bytes([tid]).decode("utf-8", errors="replace")
        if N_BYTES <= tid < self.patch_base:
            name = SPECIALS[tid - N_BYTES]
            return _SPECIAL_TEXT.get(name, name)
        if self.patch_base <= tid < self.vocab_size:
            return f"<patch_{tid - self.patch_base}>"
        raise ValueError(f"unknown token id {tid}")

    def decode(self, ids) -> str:
        out: list[str] = []
        run = bytearray()
        for tid in ids:
            tid = int(tid)
            if 0 <= tid < N_BYTES:
                run.append(tid)
                continue
            if run:
                out.append(run.decode("utf-8", errors="replace"))
                run.clear()
            out.append(self.token_text(tid))
        if run:
            out.append(run.decode("utf-8", errors="replace"))
        return "".join(out)

    def manifest(self) -> dict[str, int]:
        vocab = {f"<0x{b:02X}>": b for b in range(N_BYTES)}
        vocab.update({name: tid for name, tid in self._special_ids.items()})
        vocab.update({f"<patch_{k}>": self.patch_base + k for k in range(N_PATCH_TOKENS)})
        return vocab

    def dump_manifest(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.manifest(), fh, indent=0, sort_keys=False)


DEFAULT_TOKENIZER = Tokenizer()
