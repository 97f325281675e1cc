"""Device cost model and its TOML presets."""
from __future__ import annotations

from dataclasses import dataclass, fields, replace
from importlib import resources
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # Python 3.10
    import tomli as tomllib

# Bandwidths are quoted in GB/s with GB = 2**30 bytes.
GB = 1 << 30

PRESETS = ("mi100", "radeonvii", "raphael")


@dataclass(frozen=True)
class DeviceModel:
    name: str = "generic"
    device_bw: float = 1228.8
    interconnect_bw: float = 31.5
    per_op_latency: float = 1e-5
    launch_latency: float = 0.0
    page_size: int = 4096
    capacity: int = 1 << 34
    fp32_gflops: float = 23070.0
    advise_alignment_quirk: bool = True
    quirk_alignment: int = 2 << 20

    def __post_init__(self):
        if self.device_bw <= 0 or self.interconnect_bw <= 0:
            raise ValueError("bandwidths must be positive")
        if self.fp32_gflops <= 0:
            raise ValueError("fp32_gflops must be positive")
        if self.per_op_latency < 0 or self.launch_latency < 0:
            raise ValueError("latencies must be non-negative")
        if self.capacity <= 0:
            raise ValueError("capacity must be positive")
        for v, what in ((self.page_size, "page_size"), (self.quirk_alignment, "quirk_alignment")):
            if v <= 0 or v & (v - 1):
                raise ValueError(f"{what} must be a power of two")

    def device_time(self, nbytes: int) -> float:
        return nbytes / (self.device_bw * GB)

    def interconnect_time(self, nbytes: int) -> float:
        return nbytes / (self.interconnect_bw * GB)

    def transfer_time(self, nbytes: int) -> float:
        return self.per_op_latency + self.interconnect_time(nbytes)

    def compute_time(self, flops: float) -> float:
        return flops / (self.fp32_gflops * 1e9)

    def with_(self, **changes) -> "DeviceModel":
        return replace(self, **changes)

    @classmethod
    def from_dict(cls, d: dict) -> "DeviceModel":
        known = {f.name: f.type for f in fields(cls)}
        unknown = set(d) - set(known)
        if unknown:
            raise ValueError(f"unknown device model keys: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def load(cls, path: str | Path) -> "DeviceModel":
        with open(path, "rb") as f:
            return cls.from_dict(tomllib.load(f))

    @classmethod
    def preset(cls, name: str) -> "DeviceModel":
        key = name.lower().removesuffix(".toml")
        if key not in PRESETS:
            raise ValueError(f"unknown preset {name!r}; choose from {', '.join(PRESETS)}")
        data = resources.files("upage.sim").joinpath("presets", f"{key}.toml").read_bytes()
        return cls.from_dict(tomllib.loads(data.decode()))

    @classmethod
    def resolve(cls, spec: str | Path) -> "DeviceModel":
        """A preset name (``mi100``) or a path to a TOML file."""
        p = Path(spec)
        if p.exists():
            return cls.load(p)
        stem = p.name.lower().removesuffix(".toml")
        if stem in PRESETS:
            return cls.preset(stem)
        raise FileNotFoundError(f"no device model at {spec}")
