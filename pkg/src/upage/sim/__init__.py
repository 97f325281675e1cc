from .model import GB, PRESETS, DeviceModel
from .runtime import (
    DEVICE_BASE,
    DEVICE_FUNC_NAME_OFFSET,
    DeviceSim,
    Direction,
    FunctionHandle,
    LaunchContext,
    LaunchGeometry,
    LaunchResult,
    Module,
    SimKernel,
    SimulatorError,
    SimulatorIntegrityError,
    read_std_string,
    write_std_string,
)

__all__ = [
    "DEVICE_BASE", "DEVICE_FUNC_NAME_OFFSET", "GB", "PRESETS", "DeviceModel", "DeviceSim",
    "Direction", "FunctionHandle", "LaunchContext", "LaunchGeometry", "LaunchResult",
    "Module", "SimKernel", "SimulatorError", "SimulatorIntegrityError", "read_std_string",
    "write_std_string",
]
