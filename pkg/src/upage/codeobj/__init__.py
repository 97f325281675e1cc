from .elf import (ArgField, KernelDescriptor, Note, ValueKind, iter_notes,
                  parse_code_object)
from .emit import emit_code_object, metadata_document
from .errors import CodeObjectError, NoMetadataError, RegistrationError
from .table import DEFAULT_NAME_OFFSET, RegistrationTable

__all__ = [
    "ArgField", "CodeObjectError", "DEFAULT_NAME_OFFSET", "KernelDescriptor", "NoMetadataError",
    "Note", "RegistrationError", "RegistrationTable", "ValueKind", "emit_code_object",
    "iter_notes", "metadata_document", "parse_code_object",
]
