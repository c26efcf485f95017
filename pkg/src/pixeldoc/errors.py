"""Exception types shared across the package.

Everything a caller can reasonably recover from derives from ``PixelDocError``;
the CLI maps these onto exit codes (data errors -> 3, numerical -> 4).
"""


class PixelDocError(Exception):
    pass


class UnsupportedGlyphError(PixelDocError, ValueError):
    def __init__(self, char: str):
        self.codepoint = ord(char)
        super().__init__(f"unsupported glyph U+{self.codepoint:04X} ({char!r})")


class TableOverflowError(PixelDocError, ValueError):
    pass


class InvalidSpansError(PixelDocError, ValueError):
    pass


class PPMError(PixelDocError, ValueError):
    pass


class UnsupportedDialectError(PPMError):
    pass


class MaxvalError(PPMError):
    pass


class TruncatedPayloadError(PPMError):
    pass


class TemplateNotApplicableError(PixelDocError, ValueError):
    pass


class QueryResolutionError(PixelDocError, LookupError):
    pass


class BudgetTooSmallError(PixelDocError, ValueError):
    pass


class MaskEmptyError(PixelDocError, ValueError):
    pass


class UnparseableBoxError(PixelDocError, ValueError):
    pass


class NumericalFailureError(PixelDocError, FloatingPointError):
    def __init__(self, tensor_name: str, detail: str = "non-finite value"):
        self.tensor_name = tensor_name
        super().__init__(f"numerical failure in {tensor_name}: {detail}")
