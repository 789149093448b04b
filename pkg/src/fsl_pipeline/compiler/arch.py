"""Systolic-array architecture description (JSON, the ``.tarch`` analogue)."""

from __future__ import annotations

import hashlib
import json
import numbers
from dataclasses import dataclass
from enum import Enum
from typing import Any, Dict, Mapping, Union

from ..errors import ArchError


class DataFormat(str, Enum):
    FLOAT32 = "float32"
    Q8_8 = "q8.8"

    @property
    def bytes_per_element(self) -> int:
        return 4 if self is DataFormat.FLOAT32 else 2

    @classmethod
    def parse(cls, value: Any) -> "DataFormat":
        if isinstance(value, DataFormat):
            return value
        text = str(value).lower().replace("_", ".")
        aliases = {"fp32": "float32", "float": "float32", "q8.8": "q8.8", "fixed16.8": "q8.8"}
        try:
            return cls(aliases.get(text, text))
        except ValueError:
            raise ArchError(f"unknown data_format {value!r}") from None


FIELDS = ("array_size", "data_format", "local_memory_kib", "accumulator_memory_kib", "clock_mhz")

ACCUMULATOR_BYTES = 4


@dataclass(frozen=True)
class ArchConfig:
    array_size: int = 12
    data_format: DataFormat = DataFormat.Q8_8
    local_memory_kib: int = 256
    accumulator_memory_kib: int = 64
    clock_mhz: float = 125.0

    def __post_init__(self):
        object.__setattr__(self, "data_format", DataFormat.parse(self.data_format))
        for name in ("array_size", "local_memory_kib", "accumulator_memory_kib"):
            v = getattr(self, name)
            if isinstance(v, bool) or not isinstance(v, numbers.Integral):
                raise ArchError(f"{name} must be an integer, got {v!r}")
            if v <= 0:
                raise ArchError(f"non-positive {name}: {v}")
        if isinstance(self.clock_mhz, bool) or not isinstance(self.clock_mhz, numbers.Real):
            raise ArchError(f"clock_mhz must be a number, got {self.clock_mhz!r}")
        if not self.clock_mhz > 0:
            raise ArchError(f"non-positive clock_mhz: {self.clock_mhz}")
        object.__setattr__(self, "clock_mhz", float(self.clock_mhz))

    def to_dict(self) -> Dict[str, Any]:
        return {
            "array_size": self.array_size,
            "data_format": self.data_format.value,
            "local_memory_kib": self.local_memory_kib,
            "accumulator_memory_kib": self.accumulator_memory_kib,
            "clock_mhz": self.clock_mhz,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1, sort_keys=True) + "\n"

    @property
    def hash(self) -> str:
        canon = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canon.encode()).hexdigest()[:16]

    def latency_ms(self, cycles: int) -> float:
        return cycles / (self.clock_mhz * 1e3)


# The two reference setups: the 12x12 / 125 MHz deployment array, and the
# vendor's stock 8x8 array.
DEMONSTRATOR = ArchConfig(12, DataFormat.Q8_8, 256, 64, 125.0)
BASE_8X8 = ArchConfig(8, DataFormat.Q8_8, 128, 32, 50.0)


def parse_arch(text: Union[str, Mapping[str, Any]]) -> ArchConfig:
    if isinstance(text, Mapping):
        doc = dict(text)
    else:
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as e:
            raise ArchError(f"architecture file is not valid JSON: {e}") from None
    if not isinstance(doc, dict):
        raise ArchError("architecture file must be a JSON object")
    unknown = sorted(set(doc) - set(FIELDS))
    if unknown:
        raise ArchError(f"unknown field(s): {', '.join(unknown)}")
    missing = [f for f in FIELDS if f not in doc]
    if missing:
        raise ArchError(f"missing field(s): {', '.join(missing)}")
    return ArchConfig(**doc)
