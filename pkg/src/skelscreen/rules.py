"""Rule-based abnormality screening on labeled (and relabeled) bones.

Rule 1: adjacent vertebral bodies have similar voxel counts.
Rule 2: there are at least 19 thoracic + lumbar vertebral bodies.
Rule 3: on each side, the most caudal rib and its neighbor have similar
major-axis lengths.

A rule "fires" when its normal condition is violated; a fetus is Abnormal
when any rule fires.
"""
from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field

from .relabel import LabeledBone
from .taxonomy import BODY_GROUPS, Taxonomy

VOLUME_DELTA = 0.20
MIN_TL_BODIES = 19
RIB_DELTA = 0.50


@dataclass(frozen=True)
class RuleThresholds:
    volume_delta: float = VOLUME_DELTA
    min_tl_bodies: int = MIN_TL_BODIES
    rib_delta: float = RIB_DELTA


@dataclass
class ScreeningReport:
    fetus_id: int
    rule1_fired: bool = False
    rule2_fired: bool = False
    rule3_fired: bool = False
    evidence: list = field(default_factory=list)
    warnings: list = field(default_factory=list)

    @property
    def verdict(self) -> str:
        return "Abnormal" if self.rules_fired else "Normal"

    @property
    def rules_fired(self) -> list[int]:
        return [i for i, f in enumerate((self.rule1_fired, self.rule2_fired, self.rule3_fired), 1) if f]

    def to_dict(self) -> dict:
        return {
            "fetus_id": self.fetus_id,
            "rule1_fired": self.rule1_fired,
            "rule2_fired": self.rule2_fired,
            "rule3_fired": self.rule3_fired,
            "verdict": self.verdict,
            "evidence": self.evidence,
            "warnings": self.warnings,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"


def relative_delta(a: float, b: float) -> float:
    """|a - b| / max(a, b); 0 when both are 0."""
    m = max(a, b)
    return abs(a - b) / m if m > 0 else 0.0


def rule1_vertebral_volume(bodies, threshold: float = VOLUME_DELTA):
    """``bodies``: (bone_id, n_voxels) ordered along the spine. Returns (fired, evidence, warning)."""
    if len(bodies) < 2:
        return False, [], f"rule1: {len(bodies)} vertebral bodies, not evaluable"
    evidence = []
    fired = False
    for (ia, na), (ib, nb) in zip(bodies[:-1], bodies[1:]):
        d = relative_delta(na, nb)
        if d >= threshold:
            fired = True
            evidence.append({"rule": 1, "bones": [ia, ib], "delta": round(d, 12)})
    return fired, evidence, None


def rule2_vertebral_count(body_ids, minimum: int = MIN_TL_BODIES):
    fired = len(body_ids) < minimum
    evidence = [{"rule": 2, "bones": list(body_ids), "count": len(body_ids)}] if fired else []
    return fired, evidence


def rule3_caudal_rib(ribs, threshold: float = RIB_DELTA, side: str = ""):
    """``ribs``: (bone_id, major_axis) of one side ordered head to tail."""
    if len(ribs) < 2:
        return False, [], f"rule3 {side or 'side'}: {len(ribs)} ribs, not evaluable"
    (ip, mp), (il, ml) = ribs[-2], ribs[-1]
    d = relative_delta(ml, mp)
    if d >= threshold:
        return True, [{"rule": 3, "side": side, "bones": [il, ip], "delta": round(d, 12)}], None
    return False, [], None


def screen(bones: list[LabeledBone], taxonomy: Taxonomy, fetus_id: int = 0,
           thresholds: RuleThresholds = RuleThresholds(), warnings=()) -> ScreeningReport:
    """Apply the three rules to one fetus (body-frame centroids, final labels)."""
    rep = ScreeningReport(fetus_id, warnings=list(warnings))
    body_labels = set(taxonomy.members(*BODY_GROUPS))
    bodies = sorted((b for b in bones if b.label in body_labels), key=lambda b: (b.centroid[0], b.id))
    fired, ev, warn = rule1_vertebral_volume([(b.id, b.n_voxels) for b in bodies], thresholds.volume_delta)
    rep.rule1_fired = fired
    rep.evidence += ev
    if warn:
        rep.warnings.append(warn)

    tl = set(taxonomy.members("VertebralBodyThoracic", "VertebralBodyLumbar"))
    fired, ev = rule2_vertebral_count([b.id for b in bodies if b.label in tl], thresholds.min_tl_bodies)
    rep.rule2_fired = fired
    rep.evidence += ev

    for side, group in (("left", "RibLeft"), ("right", "RibRight")):
        labs = set(taxonomy.members(group))
        # head is +x: descending x runs head to tail
        ribs = sorted((b for b in bones if b.label in labs), key=lambda b: (-b.centroid[0], b.id))
        fired, ev, warn = rule3_caudal_rib([(b.id, b.major_axis) for b in ribs], thresholds.rib_delta, side)
        rep.rule3_fired |= fired
        rep.evidence += ev
        if warn:
            rep.warnings.append(warn)
    return rep


def batch_csv(rows) -> str:
    """``rows``: (scan, fetus, report) triples."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["scan", "fetus", "verdict", "rules_fired"])
    for scan, fetus, rep in rows:
        w.writerow([scan, fetus, rep.verdict, ";".join(str(r) for r in rep.rules_fired)])
    return buf.getvalue()
