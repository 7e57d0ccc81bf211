"""ICD-9-CM / ICD-10-CM to CCS level-1 cause grouping."""
from __future__ import annotations

import csv
import datetime as dt
import io
from enum import Enum
from importlib import resources

from .errors import StructuralError, ValidationError

ICD10_START = dt.date(2015, 10, 1)


class CcsCause(str, Enum):
    INFECTIOUS_PARASITIC = "infectious_parasitic"
    NEOPLASMS = "neoplasms"
    ENDOCRINE = "endocrine"
    BLOOD = "blood"
    NERVOUS = "nervous"
    CIRCULATORY = "circulatory"
    RESPIRATORY = "respiratory"
    DIGESTIVE = "digestive"
    GENITOURINARY = "genitourinary"
    SKIN = "skin"
    MUSCULOSKELETAL = "musculoskeletal"
    INJURY_POISONING = "injury_poisoning"
    MENTAL_ILLNESS = "mental_illness"


CAUSES = tuple(CcsCause)
CAUSE_INDEX = {c: i for i, c in enumerate(CAUSES)}

LEVEL1_TO_CAUSE = {
    1: CcsCause.INFECTIOUS_PARASITIC,
    2: CcsCause.NEOPLASMS,
    3: CcsCause.ENDOCRINE,
    4: CcsCause.BLOOD,
    5: CcsCause.MENTAL_ILLNESS,
    6: CcsCause.NERVOUS,
    7: CcsCause.CIRCULATORY,
    8: CcsCause.RESPIRATORY,
    9: CcsCause.DIGESTIVE,
    10: CcsCause.GENITOURINARY,
    12: CcsCause.SKIN,
    13: CcsCause.MUSCULOSKELETAL,
    16: CcsCause.INJURY_POISONING,
}
# pregnancy, congenital, perinatal, ill-defined/factors, residual/E codes
EXCLUDED_LEVEL1 = frozenset({11, 14, 15, 17, 18})


class Unclassified(str, Enum):
    EXCLUDED = "excluded"
    UNMAPPED = "unmapped"


# integer codes used in vectorised claim arrays
EXCLUDED_CODE = -1
UNMAPPED_CODE = -2


def normalize_code(code) -> str:
    if code is None:
        raise ValidationError("empty ICD code")
    text = str(code).strip().upper().replace(".", "")
    if not text:
        raise ValidationError("empty ICD code")
    return text


def code_system_for(date: dt.date) -> str:
    return "icd10" if date >= ICD10_START else "icd9"


def _data_lines(text):
    return [ln for ln in text.splitlines() if ln.strip() and not ln.startswith("#")]


class CcsTable:
    """Code-level entries take precedence over category ranges."""

    def __init__(self, codes=None, ranges=None, version="custom"):
        self.codes = dict(codes or {})
        self.ranges = list(ranges or [])
        self.version = version
        for (_, _), level in self.codes.items():
            if not 1 <= level <= 18:
                raise ValidationError(f"CCS level-1 group {level} outside 1..18")

    @classmethod
    def from_csv_text(cls, text, version="custom"):
        rows = list(csv.DictReader(io.StringIO("\n".join(_data_lines(text)))))
        if not rows:
            return cls(version=version)
        cols = set(rows[0])
        codes, ranges = {}, []
        if {"system", "code", "ccs_level1"} <= cols:
            for r in rows:
                codes[(r["system"], normalize_code(r["code"]))] = int(r["ccs_level1"])
        elif {"system", "first", "last", "ccs_level1"} <= cols:
            for r in rows:
                ranges.append((r["system"], r["first"].upper(), r["last"].upper(), int(r["ccs_level1"])))
        else:
            raise StructuralError("CCS table needs columns system,code,ccs_level1 or system,first,last,ccs_level1")
        return cls(codes, ranges, version)

    @classmethod
    def from_files(cls, *paths):
        table = cls()
        for p in paths:
            with open(p, encoding="utf-8") as fh:
                table = table.merged(cls.from_csv_text(fh.read(), version=str(p)))
        return table

    def merged(self, other):
        return CcsTable({**self.codes, **other.codes}, self.ranges + other.ranges,
                        f"{self.version}+{other.version}")

    def level1(self, code: str, system: str):
        code = normalize_code(code)
        hit = self.codes.get((system, code))
        if hit is not None:
            return hit
        for sys_, first, last, level in self.ranges:
            if sys_ != system:
                continue
            head = code[:len(first)]
            if len(head) == len(first) and first <= head <= last and head.isalnum():
                if first[0].isdigit() != head[0].isdigit():
                    continue
                return level
        return None


def _packaged(name):
    return resources.files("floodlag").joinpath("data", name).read_text(encoding="utf-8")


def default_table() -> CcsTable:
    codes = CcsTable.from_csv_text(_packaged("ccs_test_codes.csv"), "test-codes")
    ranges = CcsTable.from_csv_text(_packaged("ccs_level1_ranges_v2016.csv"), "ranges-v2016.1")
    return codes.merged(ranges)


def embedded_code_table() -> CcsTable:
    """Only the 50 embedded code-level entries."""
    return CcsTable.from_csv_text(_packaged("ccs_test_codes.csv"), "test-codes")


_DEFAULT = None


def map_icd_to_ccs(icd_code, code_system: str, table: CcsTable | None = None):
    """Return the :class:`CcsCause` of a code, or an :class:`Unclassified` marker."""
    global _DEFAULT
    if code_system not in ("icd9", "icd10"):
        raise ValidationError(f"unknown code system {code_system!r}")
    if table is None:
        if _DEFAULT is None:
            _DEFAULT = default_table()
        table = _DEFAULT
    level = table.level1(icd_code, code_system)
    if level is None:
        return Unclassified.UNMAPPED
    if level in EXCLUDED_LEVEL1:
        return Unclassified.EXCLUDED
    return LEVEL1_TO_CAUSE[level]


def cause_code(result) -> int:
    if result is Unclassified.EXCLUDED:
        return EXCLUDED_CODE
    if result is Unclassified.UNMAPPED:
        return UNMAPPED_CODE
    return CAUSE_INDEX[result]
