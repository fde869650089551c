"""Actuator geometry records (IL/ML and per-pressure rest lengths)."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

CATALOG_COLUMNS = (
    "sample", "mesh_diameter_mm", "il_mm", "il_std_mm", "ml_mm", "ml_std_mm",
    "max_contraction_ratio_pct", "sheath_material", "sheath_diameter_mm",
)
REST_LENGTH_PRESSURES = (5.0, 10.0, 15.0, 20.0)
ML_PRESSURE_PSI = 20.0
BUILTIN = "table1"


def _rest_column(p: float) -> str:
    return f"rest_length_{p:g}psi_mm"


@dataclass(frozen=True)
class ActuatorRecord:
    id: str
    mesh_diameter: float
    il: float
    ml: float
    sheath_material: str = "N/A"
    sheath_diameter: float | None = None
    il_std: float | None = None
    ml_std: float | None = None
    max_contraction_ratio: float | None = None
    rest_lengths: dict = field(default_factory=dict)

    def __post_init__(self):
        if not (self.ml > 0.0 and self.il >= self.ml):
            raise ValueError(f"{self.id}: need IL >= ML > 0 (IL={self.il}, ML={self.ml})")

    @property
    def has_sheath(self) -> bool:
        return self.sheath_material not in ("", "N/A", None)

    def rest_length(self, pressure: float) -> float:
        """Pressurized rest length in mm.

        Tabulated values are used when present; otherwise the length is
        interpolated linearly between IL at 0 psi and ML at 20 psi.  The
        interpolation is a placeholder, not a measured law.
        """
        for p, length in self.rest_lengths.items():
            if math.isclose(p, pressure):
                return length
        if pressure <= 0.0:
            return self.il
        if pressure >= ML_PRESSURE_PSI:
            return self.ml
        return self.il + (self.ml - self.il) * pressure / ML_PRESSURE_PSI


def _opt_float(s: str):
    s = (s or "").strip()
    return float(s) if s else None


def parse_catalog(text: str, source: str = "<catalog>") -> dict[str, ActuatorRecord]:
    reader = csv.DictReader(io.StringIO(text))
    missing = [c for c in ("sample", "il_mm", "ml_mm") if c not in (reader.fieldnames or [])]
    if missing:
        raise ValueError(f"{source}: missing column {missing[0]!r}")
    records: dict[str, ActuatorRecord] = {}
    for line, row in enumerate(reader, start=2):
        try:
            rid = row["sample"].strip()
            if rid in records:
                raise ValueError(f"duplicate actuator id {rid!r}")
            rest = {}
            for p in REST_LENGTH_PRESSURES:
                v = _opt_float(row.get(_rest_column(p), ""))
                if v is not None:
                    rest[p] = v
            records[rid] = ActuatorRecord(
                id=rid,
                mesh_diameter=_opt_float(row.get("mesh_diameter_mm", "")) or math.nan,
                il=float(row["il_mm"]),
                ml=float(row["ml_mm"]),
                sheath_material=(row.get("sheath_material") or "N/A").strip(),
                sheath_diameter=_opt_float(row.get("sheath_diameter_mm", "")),
                il_std=_opt_float(row.get("il_std_mm", "")),
                ml_std=_opt_float(row.get("ml_std_mm", "")),
                max_contraction_ratio=_opt_float(row.get("max_contraction_ratio_pct", "")),
                rest_lengths=rest,
            )
        except (ValueError, TypeError) as exc:
            raise ValueError(f"{source}:{line}: {exc}") from None
    return records


def builtin_catalog() -> dict[str, ActuatorRecord]:
    text = resources.files("vmafv").joinpath("data/table1.csv").read_text(encoding="utf-8")
    return parse_catalog(text, "table1.csv")


def read_catalog(path) -> dict[str, ActuatorRecord]:
    if str(path) == BUILTIN:
        return builtin_catalog()
    path = Path(path)
    return parse_catalog(path.read_text(encoding="utf-8"), str(path))
