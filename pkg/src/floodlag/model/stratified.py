"""Subgroup fits: flood severity, share of Black residents, admission type."""
from __future__ import annotations

import logging
from enum import Enum

import numpy as np

from ..design import CountSubset
from ..errors import ConfigurationError, ValidationError
from ..exposure import SeverityGroup, severity_split
from .inference import N_CAUSES
from .quasipoisson import FitResult, ModelSpec, fit_conditional_quasipoisson

log = logging.getLogger(__name__)


class Partition(str, Enum):
    SEVERITY = "severity"
    PCT_BLACK_MEDIAN = "pct_black_median"
    EMERGENCY = "emergency"


def split_strata(strata, partition):
    """Return ``{label: (strata, count subset)}`` with exactly two groups."""
    partition = Partition(partition)
    if partition is Partition.SEVERITY:
        if any(s.severity is None for s in strata):
            raise ValidationError("severity partition needs every stratum's flood severity")
        groups = {g.value: [] for g in SeverityGroup}
        for s in strata:
            groups[severity_split(s.severity).value].append(s)
        out = {k: (v, CountSubset.ALL) for k, v in groups.items()}
    elif partition is Partition.PCT_BLACK_MEDIAN:
        have = [s for s in strata if s.pct_black is not None and np.isfinite(s.pct_black)]
        n_missing = len({s.zip_id for s in strata} - {s.zip_id for s in have})
        if n_missing:
            log.info("removed %d ZIP codes without demographic data", n_missing)
        by_zip = {s.zip_id: s.pct_black for s in have}
        median = float(np.median(list(by_zip.values()))) if by_zip else np.nan
        out = {"pct_black_low": ([s for s in have if s.pct_black <= median], CountSubset.ALL),
               "pct_black_high": ([s for s in have if s.pct_black > median], CountSubset.ALL)}
    else:
        out = {"emergency": (list(strata), CountSubset.EMERGENCY),
               "non_emergency": (list(strata), CountSubset.NON_EMERGENCY)}
    empty = [k for k, (v, _) in out.items() if not v]
    if empty:
        raise ValidationError(f"{partition.value} partition leaves subgroup(s) {empty} empty")
    return out


def stratified_fit(strata, partition, cause, alpha=0.05, n_causes=N_CAUSES, backend=None) -> dict:
    """Independent fits per subgroup; failures become non-estimable reports."""
    out = {}
    for label, (group, subset) in split_strata(strata, partition).items():
        try:
            out[label] = fit_conditional_quasipoisson(group, ModelSpec(cause, subset), alpha, n_causes, backend)
        except (ConfigurationError, ValidationError) as exc:
            log.warning("%s / %s / %s not estimable: %s", Partition(partition).value, label, cause, exc)
            out[label] = FitResult.not_estimable(cause, subset, str(exc), len(group), alpha, n_causes)
    return out
