from __future__ import annotations


class CodeObjectError(ValueError):
    """Structured parse failure; ``offset`` is an absolute byte offset in the image."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at byte {offset})")
        self.message = message
        self.offset = offset


class NoMetadataError(CodeObjectError):
    def __init__(self, offset: int = 0):
        super().__init__("no kernel metadata note in code object", offset)


class RegistrationError(LookupError):
    pass
