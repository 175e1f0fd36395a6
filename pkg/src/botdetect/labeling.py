"""Ground-truth labels for records and entity windows."""

from __future__ import annotations

from enum import IntEnum
from typing import Iterable, Sequence

import numpy as np

from .ingest import ConnRecord, ScenarioSpec

REGIMES = ("coarse", "fine")


class Label(IntEnum):
    LEGITIMATE = 0
    MALICIOUS = 1


class LabelingError(ValueError):
    pass


def label_record_coarse(record: ConnRecord, spec: ScenarioSpec,
                        origin_only: bool = False) -> Label:
    """Malicious when a botnet host is an endpoint of the record.

    With ``origin_only`` only records originated by a botnet host count.
    """
    bots = spec.botnet_ips
    if record.orig_h in bots or (not origin_only and record.dest_h in bots):
        return Label.MALICIOUS
    return Label.LEGITIMATE


def require_victims(spec: ScenarioSpec) -> None:
    if not spec.victim_ips:
        raise LabelingError(
            f"fine labeling unavailable: scenario {spec.scenario_id!r} lists no victim_ips")


def label_record_fine(record: ConnRecord, spec: ScenarioSpec) -> Label:
    """Malicious only for botnet-to-victim flows."""
    require_victims(spec)
    if record.orig_h in spec.botnet_ips and record.dest_h in spec.victim_ips:
        return Label.MALICIOUS
    return Label.LEGITIMATE


def label_record(record: ConnRecord, spec: ScenarioSpec, regime: str = "coarse",
                 origin_only: bool = False) -> Label:
    if regime == "coarse":
        return label_record_coarse(record, spec, origin_only)
    if regime == "fine":
        return label_record_fine(record, spec)
    raise LabelingError(f"unknown labeling regime {regime!r}; expected one of {REGIMES}")


def label_records(records: Iterable[ConnRecord], spec: ScenarioSpec, regime: str = "coarse",
                  origin_only: bool = False) -> np.ndarray:
    if regime == "fine":
        require_victims(spec)
    return np.fromiter((label_record(r, spec, regime, origin_only) for r in records),
                       dtype=np.int8)


def entity_label(record_label: int, entity: str, spec: ScenarioSpec) -> Label:
    """Credit a record's label to one of its endpoints.

    A malicious record marks the window of a botnet host only; the benign
    peer of a botnet connection keeps a legitimate label for that record.
    """
    if record_label and entity in spec.botnet_ips:
        return Label.MALICIOUS
    return Label.LEGITIMATE


def label_window(labels: Sequence[int] | Iterable[int]) -> Label:
    """A window is malicious if at least one of its records is."""
    seen = False
    for value in labels:
        seen = True
        if value:
            return Label.MALICIOUS
    if not seen:
        raise LabelingError("cannot label an empty window")
    return Label.LEGITIMATE
