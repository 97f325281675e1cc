"""C-convention entry points over an :class:`~upage.interposer.Interposer`.

:func:`symbol_table` returns ctypes function pointers with the runtime's
names and calling conventions, which is what a preloaded shim would export.
Addresses crossing this boundary are simulated addresses; argument arrays
and out-parameters are real process memory, as they would be in a real
application.

Simplifications: launch geometry is one-dimensional (``dim3.x`` only is
used) and the stream argument is ignored because execution is synchronous.
"""
from __future__ import annotations

import ctypes
import logging
import struct
from ctypes import POINTER, c_char_p, c_int, c_size_t, c_uint, c_uint32, c_void_p

from .codeobj import CodeObjectError, RegistrationError, ValueKind
from .hostmem import OutOfMemory, SegmentationFault
from .interposer import Interposer, InterposerError
from .sim.runtime import LaunchGeometry, SimulatorError

log = logging.getLogger(__name__)

hipSuccess = 0
hipErrorInvalidValue = 1
hipErrorOutOfMemory = 2
hipErrorInvalidImage = 200
hipErrorNotFound = 500
hipErrorInvalidDeviceFunction = 98
hipErrorLaunchFailure = 719

MAX_IMAGE = 1 << 28


class Dim3(ctypes.Structure):
    _fields_ = [("x", c_uint32), ("y", c_uint32), ("z", c_uint32)]


MallocManagedFn = ctypes.CFUNCTYPE(c_int, POINTER(c_void_p), c_size_t, c_uint)
FreeFn = ctypes.CFUNCTYPE(c_int, c_void_p)
RegisterFunctionFn = ctypes.CFUNCTYPE(c_int, c_void_p, c_char_p)
LaunchKernelFn = ctypes.CFUNCTYPE(c_int, c_void_p, Dim3, Dim3, POINTER(c_void_p), c_size_t,
                                  c_void_p)
ModuleLoadDataFn = ctypes.CFUNCTYPE(c_int, POINTER(c_void_p), c_void_p)
ModuleGetFunctionFn = ctypes.CFUNCTYPE(c_int, POINTER(c_void_p), c_void_p, c_char_p)
CodeObjectLoadFn = ctypes.CFUNCTYPE(c_int, c_void_p, c_size_t)

SIGNATURES = {
    "hipMallocManaged": MallocManagedFn,
    "hipFree": FreeFn,
    "__hipRegisterFunction": RegisterFunctionFn,
    "hipLaunchKernel": LaunchKernelFn,
    "hipModuleLoadData": ModuleLoadDataFn,
    "hipModuleGetFunction": ModuleGetFunctionFn,
    "upageLoadCodeObject": CodeObjectLoadFn,
}


def elf_extent(addr: int, limit: int = MAX_IMAGE) -> int:
    """Size of an in-memory ELF64 image, from its header and section table."""
    hdr = ctypes.string_at(addr, 64)
    if hdr[:4] != b"\x7fELF" or hdr[4] != 2:
        raise CodeObjectError("not an ELF64 image", 0)
    shoff, = struct.unpack_from("<Q", hdr, 0x28)
    shentsize, shnum = struct.unpack_from("<HH", hdr, 0x3A)
    end = max(64, shoff + shentsize * shnum)
    if end > limit or shentsize < 64:
        raise CodeObjectError("implausible section header table", 0x28)
    for i in range(shnum):
        sh = ctypes.string_at(addr + shoff + i * shentsize, 64)
        typ, = struct.unpack_from("<I", sh, 4)
        off, size = struct.unpack_from("<QQ", sh, 0x18)
        if typ != 8:  # SHT_NOBITS occupies no file space
            end = max(end, off + size)
        if end > limit:
            raise CodeObjectError(f"section {i} runs past {limit} bytes", shoff + i * shentsize)
    return end


class SymbolTable:
    """Owns the ctypes callbacks (they must outlive every caller)."""

    def __init__(self, ip: Interposer):
        self.ip = ip
        self._modules: dict[int, object] = {}
        self._functions: dict[int, object] = {}
        self.symbols = {
            "hipMallocManaged": MallocManagedFn(self._malloc_managed),
            "hipFree": FreeFn(self._free),
            "__hipRegisterFunction": RegisterFunctionFn(self._register_function),
            "hipLaunchKernel": LaunchKernelFn(self._launch_kernel),
            "hipModuleLoadData": ModuleLoadDataFn(self._module_load_data),
            "hipModuleGetFunction": ModuleGetFunctionFn(self._module_get_function),
            "upageLoadCodeObject": CodeObjectLoadFn(self._load_code_object),
        }

    def __getitem__(self, name: str):
        return self.symbols[name]

    def address(self, name: str) -> int:
        return ctypes.cast(self.symbols[name], c_void_p).value

    # Every entry point converts exceptions into status codes: raising
    # through a C frame would abort the caller.
    def _malloc_managed(self, out, size, flags):
        if not out or size == 0:
            return hipErrorInvalidValue
        try:
            out[0] = self.ip.managed_alloc(size)
        except OutOfMemory:
            return hipErrorOutOfMemory
        except Exception:
            log.exception("hipMallocManaged failed")
            return hipErrorInvalidValue
        return hipSuccess

    def _free(self, ptr):
        if not ptr:
            return hipSuccess
        try:
            self.ip.free(ptr)
        except InterposerError:
            return hipErrorInvalidValue
        return hipSuccess

    def _register_function(self, host_fn, name):
        try:
            self.ip.register_function(host_fn, name.decode())
        except (RegistrationError, SimulatorError, UnicodeDecodeError):
            return hipErrorInvalidDeviceFunction
        return hipSuccess

    def _load_code_object(self, image, size):
        if not image or size == 0 or size > MAX_IMAGE:
            return hipErrorInvalidValue
        try:
            self.ip.load_code_object(ctypes.string_at(image, size))
        except (CodeObjectError, RegistrationError):
            return hipErrorInvalidImage
        return hipSuccess

    def _module_load_data(self, out, image):
        if not out or not image:
            return hipErrorInvalidValue
        try:
            data = ctypes.string_at(image, elf_extent(image))
            module = self.ip.module_load(data)
        except (CodeObjectError, RegistrationError, SimulatorError):
            return hipErrorInvalidImage
        self._modules[module.id] = module
        out[0] = module.id
        return hipSuccess

    def _module_get_function(self, out, module_id, name):
        module = self._modules.get(module_id or 0)
        if not out or module is None:
            return hipErrorInvalidValue
        try:
            fn = self.ip.module_get_function(module, name.decode())
        except (SimulatorError, UnicodeDecodeError):
            return hipErrorNotFound
        self._functions[fn.address] = fn
        out[0] = fn.address
        return hipSuccess

    def _launch_kernel(self, fn, grid, block, args, shmem, stream):
        handle = self._functions.get(fn, fn)
        try:
            desc = self.ip._descriptor(handle)
        except RegistrationError:
            return hipErrorInvalidDeviceFunction
        # args[i] points at the i-th visible argument; pack them at their offsets.
        blob = bytearray(desc.kernarg_size)
        visible = [a for a in desc.args if a.value_kind is not ValueKind.HIDDEN]
        if visible and not args:
            return hipErrorInvalidValue
        for i, a in enumerate(visible):
            if not args[i]:
                return hipErrorInvalidValue
            blob[a.offset:a.end] = ctypes.string_at(args[i], a.size)
        try:
            self.ip.launch(handle, bytes(blob), LaunchGeometry(grid.x, block.x))
        except OutOfMemory:
            return hipErrorOutOfMemory
        except (SimulatorError, SegmentationFault):
            log.exception("kernel launch failed")
            return hipErrorLaunchFailure
        return hipSuccess


def symbol_table(ip: Interposer) -> SymbolTable:
    return SymbolTable(ip)
