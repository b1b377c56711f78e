import json

import numpy as np
import pytest
from hypothesis import given, strategies as st

from conftest import truth_labeled_bones
from skelscreen.phantom import Injection, PhantomSpec, Pose, expected_rules, generate
from skelscreen.relabel import LabeledBone
from skelscreen.rules import (ScreeningReport, batch_csv, relative_delta, rule1_vertebral_volume,
                              rule2_vertebral_count, rule3_caudal_rib, screen)
from skelscreen.taxonomy import DEFAULT as TAX


def test_rule1_examples():
    fired, ev, warn = rule1_vertebral_volume([(1, 100), (2, 101), (3, 99)])
    assert not fired and ev == [] and warn is None
    assert round(max(relative_delta(100, 101), relative_delta(101, 99)), 4) == 0.0198
    fired, ev, _ = rule1_vertebral_volume([(1, 100), (2, 70)])
    assert fired and ev[0]["delta"] == pytest.approx(0.30) and ev[0]["bones"] == [1, 2]
    assert not rule1_vertebral_volume([(1, 100), (2, 100)])[0]
    assert rule1_vertebral_volume([(1, 100), (2, 80)])[0]  # delta exactly 0.20 fires
    fired, _, warn = rule1_vertebral_volume([(1, 100)])
    assert not fired and warn


def test_rule2_examples():
    assert not rule2_vertebral_count(list(range(19)))[0]
    fired, ev = rule2_vertebral_count(list(range(18)))
    assert fired and ev[0]["count"] == 18
    assert not rule2_vertebral_count(list(range(21)))[0]


def test_rule3_examples():
    fired, ev, _ = rule3_caudal_rib([(1, 30.0), (2, 25.0), (3, 10.0)], side="left")
    assert fired and ev[0]["delta"] == pytest.approx(0.60) and ev[0]["bones"] == [3, 2]
    assert not rule3_caudal_rib([(1, 30.0), (2, 20.0), (3, 12.0)])[0]
    assert not rule3_caudal_rib([(1, 5.0), (2, 5.0)])[0]
    fired, _, warn = rule3_caudal_rib([(1, 5.0)], side="right")
    assert not fired and "right" in warn


@given(st.floats(0, 1e6), st.floats(0, 1e6))
def test_relative_delta_properties(a, b):
    d = relative_delta(a, b)
    assert 0 <= d <= 1 and d == relative_delta(b, a)


def spine(n_tl=19, body_voxels=None, ribs=(20.0, 20.0)):
    """Bodies along x (head = +x) and one rib row per side."""
    bones = []
    bid = 1
    lab = TAX.index("thoracic_body")
    vox = body_voxels or [100] * n_tl
    for k, n in enumerate(vox):
        bones.append(LabeledBone(bid, lab, np.array([-float(k), 0, 0]), n_voxels=n))
        bid += 1
    for side in ("rib_L", "rib_R"):
        for k, m in enumerate(ribs):
            bones.append(LabeledBone(bid, TAX.index(side), np.array([-float(k), 1, 0]), major_axis=m))
            bid += 1
    return bones


def test_screen_or_semantics():
    rep = screen(spine(), TAX)
    assert rep.verdict == "Normal" and rep.rules_fired == []
    rep = screen(spine(18), TAX, fetus_id=2)
    assert rep.verdict == "Abnormal" and rep.rules_fired == [2]
    assert [e["rule"] for e in rep.evidence] == [2]
    rep = screen(spine(ribs=(25.0, 10.0)), TAX)
    assert rep.rules_fired == [3] and {e["side"] for e in rep.evidence} == {"left", "right"}
    vox = [100] * 19
    vox[5] = 50
    rep = screen(spine(body_voxels=vox), TAX)
    assert rep.rules_fired == [1]
    doc = json.loads(rep.to_json())
    assert doc["verdict"] == "Abnormal" and doc["rule1_fired"]
    assert batch_csv([("a.hdr", 0, rep)]) == "scan,fetus,verdict,rules_fired\na.hdr,0,Abnormal,1\n"


def test_report_verdict_invariant():
    for flags in [(a, b, c) for a in (0, 1) for b in (0, 1) for c in (0, 1)]:
        rep = ScreeningReport(0, *map(bool, flags))
        assert (rep.verdict == "Abnormal") == any(flags)


def test_truth_labeled_normal_phantom(truth_labeled):
    rep = screen(truth_labeled[0], TAX)
    assert rep.verdict == "Normal", rep.evidence


@pytest.mark.parametrize("inj", [Injection.remove_vertebra("thoracic", 6), Injection.scale_vertebra("lumbar", 2, 0.5),
                                 Injection.shorten_caudal_rib("right", 0.3)], ids=lambda j: j.kind)
def test_truth_labeled_injections(inj):
    spec = PhantomSpec(seed=11, pose=Pose(), injections=(inj,))
    (bones,) = truth_labeled_bones(*generate(spec))
    rep = screen(bones, TAX)
    assert rep.rules_fired == expected_rules(spec)
