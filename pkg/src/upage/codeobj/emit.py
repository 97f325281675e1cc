"""Write minimal GPU code-object images for fixtures and the simulator.

Layout: ELF header, section header table, ``.shstrtab``, a stub ``.text``,
and the metadata ``.note`` last so truncating the image cuts into the note
payload first.
"""
from __future__ import annotations

import struct
from typing import Iterable

from . import msgpack
from .elf import (EHDR_SIZE, ELF_MAGIC, ELFCLASS64, ELFDATA2LSB, EM_AMDGPU,
                  NT_AMDGPU_METADATA, SHDR_SIZE, SHT_NOTE, VENDOR, KernelDescriptor,
                  ValueKind)

_KIND_TO_METADATA = {
    ValueKind.GLOBAL_BUFFER_ADDRESS: "global_buffer",
    ValueKind.BY_VALUE: "by_value",
    ValueKind.HIDDEN: "hidden_global_offset_x",
}

SHT_PROGBITS = 1
SHT_STRTAB = 3


def metadata_document(kernels: Iterable[KernelDescriptor], target: str = "gfx908") -> dict:
    entries = []
    for k in kernels:
        args = []
        for a in k.args:
            arg = {".offset": a.offset, ".size": a.size,
                   ".value_kind": _KIND_TO_METADATA[a.value_kind]}
            if a.value_kind is ValueKind.GLOBAL_BUFFER_ADDRESS:
                arg[".address_space"] = "global"
            args.append(arg)
        entries.append({".name": k.mangled_name, ".symbol": k.mangled_name + ".kd",
                        ".kernarg_segment_size": k.kernarg_size,
                        ".kernarg_segment_align": 8, ".args": args})
    return {"amdhsa.version": [1, 2], "amdhsa.target": f"amdgcn-amd-amdhsa--{target}",
            "amdhsa.kernels": entries}


def note(name: str, ntype: int, desc: bytes) -> bytes:
    raw = name.encode() + b"\0"
    pad = lambda b: b + b"\0" * (-len(b) % 4)
    return struct.pack("<III", len(raw), len(desc), ntype) + pad(raw) + pad(desc)


def elf_image(note_payload: bytes, text: bytes = b"\x00" * 16) -> bytes:
    shstrtab = b"\0.text\0.note\0.shstrtab\0"
    names = {".text": 1, ".note": 7, ".shstrtab": 13}
    shoff = EHDR_SIZE
    nsec = 4
    strtab_off = shoff + nsec * SHDR_SIZE
    text_off = strtab_off + len(shstrtab)
    text_off += -text_off % 16
    note_off = text_off + len(text)
    note_off += -note_off % 4

    ident = ELF_MAGIC + bytes((ELFCLASS64, ELFDATA2LSB, 1, 64, 2)) + b"\0" * 7
    ehdr = ident + struct.pack("<HHIQQQIHHHHHH", 3, EM_AMDGPU, 1, 0, 0, shoff, 0,
                               EHDR_SIZE, 0, 0, SHDR_SIZE, nsec, 3)

    def shdr(name, typ, off, size, align):
        return struct.pack("<IIQQQQIIQQ", name, typ, 0, 0, off, size, 0, 0, align, 0)

    shdrs = (b"\0" * SHDR_SIZE
             + shdr(names[".text"], SHT_PROGBITS, text_off, len(text), 16)
             + shdr(names[".note"], SHT_NOTE, note_off, len(note_payload), 4)
             + shdr(names[".shstrtab"], SHT_STRTAB, strtab_off, len(shstrtab), 1))
    out = bytearray(ehdr + shdrs + shstrtab)
    out += b"\0" * (text_off - len(out))
    out += text
    out += b"\0" * (note_off - len(out))
    out += note_payload
    return bytes(out)


def emit_code_object(kernels: Iterable[KernelDescriptor], *, doc: dict | None = None,
                     extra_notes: bytes = b"") -> bytes:
    """ELF image whose metadata note describes ``kernels`` (or carries ``doc`` verbatim)."""
    document = doc if doc is not None else metadata_document(kernels)
    payload = extra_notes + note(VENDOR, NT_AMDGPU_METADATA, msgpack.packb(document))
    return elf_image(payload)
