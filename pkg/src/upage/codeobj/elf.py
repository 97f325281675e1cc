"""Kernel-argument metadata from the note section of a GPU code object.

Only the pieces needed to reach the metadata note are decoded: the ELF64
header, the section header table (falling back to PT_NOTE program headers),
and the note records themselves.  Everything is bounds-checked; the parser
never returns a partial result.
"""
from __future__ import annotations

import enum
import logging
import struct
from dataclasses import dataclass
from typing import Iterator

from . import msgpack
from .errors import CodeObjectError, NoMetadataError

log = logging.getLogger(__name__)

ELF_MAGIC = b"\x7fELF"
ELFCLASS64 = 2
ELFDATA2LSB = 1
EM_AMDGPU = 224
SHT_NOTE = 7
PT_NOTE = 4
NT_AMDGPU_METADATA = 32
VENDOR = "AMDGPU"
EHDR_SIZE = 64
SHDR_SIZE = 64
PHDR_SIZE = 56
DEVICE_POINTER_SIZE = 8


class ValueKind(str, enum.Enum):
    GLOBAL_BUFFER_ADDRESS = "global_buffer_address"
    BY_VALUE = "by_value"
    HIDDEN = "hidden"


_KIND_NAMES = {"global_buffer": ValueKind.GLOBAL_BUFFER_ADDRESS,
               "by_value": ValueKind.BY_VALUE}


def value_kind_from_metadata(name: str) -> ValueKind:
    kind = _KIND_NAMES.get(name)
    if kind is not None:
        return kind
    if not name.startswith("hidden_"):
        log.warning("unknown argument value kind %r treated as hidden", name)
    return ValueKind.HIDDEN


@dataclass(frozen=True)
class ArgField:
    offset: int
    size: int
    value_kind: ValueKind

    @property
    def end(self) -> int:
        return self.offset + self.size


@dataclass(frozen=True)
class KernelDescriptor:
    mangled_name: str
    args: tuple[ArgField, ...]
    kernarg_size: int

    def __post_init__(self):
        prev_end = 0
        for a in self.args:
            if a.size <= 0:
                raise ValueError(f"{self.mangled_name}: argument at {a.offset} has size {a.size}")
            if a.offset < prev_end:
                raise ValueError(f"{self.mangled_name}: argument at {a.offset} overlaps "
                                 "its predecessor or is out of order")
            if a.value_kind is ValueKind.GLOBAL_BUFFER_ADDRESS and a.size != DEVICE_POINTER_SIZE:
                raise ValueError(f"{self.mangled_name}: buffer argument at {a.offset} "
                                 f"must be {DEVICE_POINTER_SIZE} bytes")
            prev_end = a.end

    @property
    def blob_size(self) -> int:
        return max((a.end for a in self.args), default=0)

    def to_json(self) -> dict:
        return {"name": self.mangled_name, "kernarg_size": self.kernarg_size,
                "args": [{"offset": a.offset, "size": a.size,
                          "value_kind": a.value_kind.value} for a in self.args]}


@dataclass(frozen=True)
class Note:
    name: str
    type: int
    desc: bytes
    desc_offset: int


def _need(image: bytes, offset: int, size: int, what: str) -> None:
    if offset < 0 or size < 0:
        raise CodeObjectError(f"negative {what} range", max(offset, 0))
    if offset + size > len(image):
        raise CodeObjectError(f"{what} truncated: needs bytes [{offset}, {offset + size})",
                              len(image))


def _header(image: bytes) -> tuple:
    _need(image, 0, EHDR_SIZE, "ELF header")
    if image[:4] != ELF_MAGIC:
        raise CodeObjectError("not an ELF image", 0)
    if image[4] != ELFCLASS64:
        raise CodeObjectError(f"unsupported ELF class {image[4]}", 4)
    if image[5] != ELFDATA2LSB:
        raise CodeObjectError(f"unsupported ELF data encoding {image[5]}", 5)
    phoff, shoff = struct.unpack_from("<QQ", image, 0x20)
    phentsize, phnum, shentsize, shnum = struct.unpack_from("<HHHH", image, 0x36)
    return phoff, phentsize, phnum, shoff, shentsize, shnum


def _note_ranges(image: bytes) -> list[tuple[int, int]]:
    phoff, phentsize, phnum, shoff, shentsize, shnum = _header(image)
    ranges = []
    if shnum:
        if shentsize != SHDR_SIZE:
            raise CodeObjectError(f"unexpected section header size {shentsize}", 0x3A)
        _need(image, shoff, shnum * SHDR_SIZE, "section header table")
        for i in range(shnum):
            at = shoff + i * SHDR_SIZE
            (sh_type,) = struct.unpack_from("<I", image, at + 4)
            if sh_type != SHT_NOTE:
                continue
            off, size = struct.unpack_from("<QQ", image, at + 0x18)
            _need(image, off, size, "note section")
            ranges.append((off, size))
    elif phnum:
        if phentsize != PHDR_SIZE:
            raise CodeObjectError(f"unexpected program header size {phentsize}", 0x36)
        _need(image, phoff, phnum * PHDR_SIZE, "program header table")
        for i in range(phnum):
            at = phoff + i * PHDR_SIZE
            (p_type,) = struct.unpack_from("<I", image, at)
            if p_type != PT_NOTE:
                continue
            off = struct.unpack_from("<Q", image, at + 8)[0]
            size = struct.unpack_from("<Q", image, at + 0x20)[0]
            _need(image, off, size, "note segment")
            ranges.append((off, size))
    return ranges


def _align4(n: int) -> int:
    return (n + 3) & ~3


def iter_notes(image: bytes) -> Iterator[Note]:
    image = bytes(image)
    for off, size in _note_ranges(image):
        pos, end = off, off + size
        while pos < end:
            if end - pos < 12:
                raise CodeObjectError("note header truncated", pos)
            namesz, descsz, ntype = struct.unpack_from("<III", image, pos)
            name_at = pos + 12
            desc_at = name_at + _align4(namesz)
            nxt = desc_at + _align4(descsz)
            if desc_at + descsz > end:
                raise CodeObjectError(f"note at {pos} overruns its section", pos)
            raw_name = image[name_at:name_at + namesz]
            yield Note(raw_name.rstrip(b"\0").decode("latin-1"), ntype,
                       image[desc_at:desc_at + descsz], desc_at)
            pos = min(nxt, end)


def _int_field(d: dict, key: str, where: int, *, minimum: int = 0) -> int:
    v = d.get(key)
    if not isinstance(v, int) or isinstance(v, bool) or v < minimum:
        raise CodeObjectError(f"metadata field {key} must be an integer >= {minimum}, got {v!r}",
                              where)
    return v


def _descriptor(kernel, where: int) -> KernelDescriptor:
    if not isinstance(kernel, dict):
        raise CodeObjectError("kernel metadata entry is not a map", where)
    name = kernel.get(".name")
    if not isinstance(name, str) or not name:
        raise CodeObjectError("kernel metadata entry has no .name", where)
    raw_args = kernel.get(".args", [])
    if not isinstance(raw_args, list):
        raise CodeObjectError(f"{name}: .args is not a list", where)
    args = []
    for a in raw_args:
        if not isinstance(a, dict):
            raise CodeObjectError(f"{name}: argument entry is not a map", where)
        kind = a.get(".value_kind")
        if not isinstance(kind, str):
            raise CodeObjectError(f"{name}: argument has no .value_kind", where)
        args.append(ArgField(_int_field(a, ".offset", where),
                             _int_field(a, ".size", where, minimum=1),
                             value_kind_from_metadata(kind)))
    args.sort(key=lambda a: a.offset)
    blob = max((a.end for a in args), default=0)
    if ".kernarg_segment_size" in kernel:
        kernarg = _int_field(kernel, ".kernarg_segment_size", where)
        if kernarg < blob:
            raise CodeObjectError(f"{name}: kernarg segment ({kernarg}) smaller than its "
                                  f"arguments ({blob})", where)
    else:
        kernarg = blob
    try:
        return KernelDescriptor(name, tuple(args), kernarg)
    except ValueError as exc:
        raise CodeObjectError(str(exc), where) from None


def parse_code_object(image: bytes) -> dict[str, KernelDescriptor]:
    """Map of mangled kernel name to descriptor, from every metadata note in ``image``."""
    image = bytes(image)
    found = False
    out: dict[str, KernelDescriptor] = {}
    for note in iter_notes(image):
        if note.name != VENDOR or note.type != NT_AMDGPU_METADATA:
            continue
        found = True
        doc = msgpack.unpackb(note.desc, note.desc_offset)
        if not isinstance(doc, dict):
            raise CodeObjectError("metadata document is not a map", note.desc_offset)
        kernels = doc.get("amdhsa.kernels", [])
        if not isinstance(kernels, list):
            raise CodeObjectError("amdhsa.kernels is not a list", note.desc_offset)
        for k in kernels:
            desc = _descriptor(k, note.desc_offset)
            if desc.mangled_name in out:
                raise CodeObjectError(f"kernel {desc.mangled_name} described twice",
                                      note.desc_offset)
            out[desc.mangled_name] = desc
    if not found:
        raise NoMetadataError(0)
    return out
