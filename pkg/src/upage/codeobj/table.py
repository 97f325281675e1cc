from __future__ import annotations

import struct
import threading
from typing import Callable

from .elf import KernelDescriptor, parse_code_object
from .errors import RegistrationError

# Where a runtime-loaded device-function structure keeps its name string.
DEFAULT_NAME_OFFSET = 144


class RegistrationTable:
    """Launch handle -> mangled name -> descriptor.

    Static handles (host stub addresses) are registered explicitly.  Dynamic
    handles returned by a module lookup carry their name (``handle.name``)
    and resolve without registration.
    """

    def __init__(self) -> None:
        self.descriptors: dict[str, KernelDescriptor] = {}
        self._names: dict[object, str] = {}
        self._lock = threading.Lock()

    def add_code_object(self, image: bytes) -> list[str]:
        parsed = parse_code_object(image)
        with self._lock:
            for name, desc in parsed.items():
                old = self.descriptors.get(name)
                if old is not None and old != desc:
                    raise RegistrationError(f"kernel {name} loaded twice with different layouts")
            self.descriptors.update(parsed)
        return sorted(parsed)

    def register_kernel(self, handle, mangled_name: str) -> None:
        if mangled_name not in self.descriptors:
            raise RegistrationError(f"no metadata for kernel {mangled_name!r}")
        with self._lock:
            old = self._names.get(handle)
            if old is not None and old != mangled_name:
                raise RegistrationError(
                    f"handle {handle!r} already registered as {old!r}, not {mangled_name!r}")
            self._names[handle] = mangled_name

    def resolve_descriptor(self, handle) -> KernelDescriptor:
        name = self._names.get(handle) if _hashable(handle) else None
        if name is None:
            name = getattr(handle, "name", None)
        if name is None:
            raise RegistrationError(f"unresolvable kernel handle {handle!r}")
        try:
            return self.descriptors[name]
        except KeyError:
            raise RegistrationError(f"handle {handle!r} names unknown kernel {name!r}") from None

    def resolve_raw(self, address: int, read: Callable[[int, int], bytes],
                    name_offset: int = DEFAULT_NAME_OFFSET) -> KernelDescriptor:
        """Resolve by reading the name string out of a device-function structure in memory."""
        try:
            name = read_std_string(read, address + name_offset)
        except (ValueError, UnicodeDecodeError) as exc:
            raise RegistrationError(f"cannot read kernel name at {address:#x}: {exc}") from None
        try:
            return self.descriptors[name]
        except KeyError:
            raise RegistrationError(f"structure at {address:#x} names unknown kernel {name!r}") from None


def read_std_string(read: Callable[[int, int], bytes], addr: int, limit: int = 1 << 16) -> str:
    """Decode a libstdc++ ``std::string`` (pointer, length, ...) located at ``addr``."""
    ptr, n = struct.unpack("<QQ", read(addr, 16))
    if n > limit:
        raise ValueError(f"implausible string length {n} at {addr:#x}")
    return read(ptr, n).decode() if n else ""


def _hashable(x) -> bool:
    try:
        hash(x)
    except TypeError:
        return False
    return True
