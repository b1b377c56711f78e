"""Scan-level orchestration: localize, featurize, label, relabel, screen.

Every stage has a dump format so a run can stop and resume at any stage
boundary:

* localize: ``labels.hdr``/``labels.raw`` (uint16 instance map) + ``instances.json``
* features: ``fetus<k>_raw.csv``, ``fetus<k>_bac.csv``, ``fetus<k>_frame.json``
* labeled / relabeled: ``fetus<k>_labeled.json`` / ``fetus<k>_relabeled.json``
* screen: ``fetus<k>_report.json``, ``labels.csv``, ``summary.csv``
"""
from __future__ import annotations

import csv
import io
import json
import os
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import bac, features, gbdt, localize, mesh, relabel, rules
from .config import PipelineConfig
from .errors import DataError, EvalError, FrameError, StageError, TrainingError
from .localize import BoneInstance, voxel_centers_mm
from .metrics import evaluate_labels, evaluate_screening
from .taxonomy import Taxonomy, load_taxonomy
from .volume import VoxelVolume, load_label_volume, load_volume, save_label_volume


def write_text(path, text: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix=".tmp")
    with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)
    os.replace(tmp, path)


def write_json(path, doc) -> None:
    write_text(path, json.dumps(doc, indent=1, sort_keys=True) + "\n")


def _stage(name, fn, *args, **kwargs):
    try:
        return fn(*args, **kwargs)
    except StageError:
        raise
    except (DataError, ValueError, OSError) as exc:
        raise StageError(name, exc) from exc
    except Exception as exc:
        if hasattr(exc, "exit_code"):
            raise StageError(name, exc) from exc
        raise


# -- localize --------------------------------------------------------------------

def localize_scan(volume: VoxelVolume, cfg: PipelineConfig, ref: str = "") -> list[BoneInstance]:
    return localize.localize(volume, cfg.border_low_hu, cfg.border_high_hu, cfg.min_bone_voxels,
                             volume_ref=ref, denoise=cfg.denoise)


def write_localize_dump(out_dir, bones, volume: VoxelVolume, ref: str = "") -> None:
    out = Path(out_dir)
    save_label_volume(localize.instance_label_volume(bones, volume.dims), volume.spacing_mm, out / "labels.hdr")
    write_json(out / "instances.json", {
        "volume_ref": ref,
        "dims": list(volume.dims),
        "spacing_mm": list(volume.spacing_mm),
        "bones": [{"id": b.id, "fetus_id": b.fetus_id, "n_voxels": b.n_voxels} for b in bones],
    })


def read_localize_dump(in_dir):
    d = Path(in_dir)
    doc = json.loads((d / "instances.json").read_text(encoding="utf-8"))
    labels, spacing = load_label_volume(d / "labels.hdr")
    fetus_of = {b["id"]: b["fetus_id"] for b in doc["bones"]}
    bones = localize.instances_from_label_volume(labels, fetus_of, doc["volume_ref"])
    if [b.id for b in bones] != [b["id"] for b in doc["bones"]]:
        raise DataError(f"{d}: instance ids in labels.hdr disagree with instances.json")
    return bones, tuple(doc["spacing_mm"]), doc["volume_ref"]


def split_by_fetus(bones):
    out = {}
    for b in bones:
        out.setdefault(b.fetus_id, []).append(b)
    return dict(sorted(out.items()))


def mesh_bones(bones, spacing_mm, out_dir) -> None:
    for b in bones:
        mesh.write_ply(mesh.marching_cubes(b.voxels, spacing_mm), Path(out_dir) / f"bone_{b.id:05d}.ply")


# -- features ----------------------------------------------------------------------

@dataclass(eq=False)
class FetusFeatures:
    fetus_id: int
    raw: features.FeatureMatrix
    frame: bac.BodyFrame
    bac: features.FeatureMatrix
    head_ends: np.ndarray  # (n, 3) body-frame voxel center with the largest x, per bone

    @property
    def bone_ids(self):
        return self.raw.bone_ids


def featurize_fetus(bones, spacing_mm, fetus_id: int = 0) -> FetusFeatures:
    bones = sorted(bones, key=lambda b: b.id)
    raw = features.fetus_matrix(bones, spacing_mm)
    frame = bac.fit_bac(raw)
    ends = []
    for b in bones:
        q = frame.apply(voxel_centers_mm(b.voxels, spacing_mm))
        ends.append(q[int(np.argmax(q[:, 0]))])
    return FetusFeatures(fetus_id, raw, frame, bac.apply_bac(raw, frame), np.array(ends))


def featurize_scan(bones, spacing_mm, warnings: list | None = None) -> list[FetusFeatures]:
    out = []
    for fid, group in split_by_fetus(bones).items():
        try:
            out.append(featurize_fetus(group, spacing_mm, fid))
        except FrameError as exc:
            if warnings is None:
                raise
            warnings.append(f"fetus {fid} skipped: {exc}")
    return out


def write_features_dump(out_dir, fetuses: list[FetusFeatures]) -> None:
    out = Path(out_dir)
    for f in fetuses:
        write_text(out / f"fetus{f.fetus_id}_raw.csv", features.matrix_to_csv(f.raw))
        write_text(out / f"fetus{f.fetus_id}_bac.csv", features.matrix_to_csv(f.bac))
        write_json(out / f"fetus{f.fetus_id}_frame.json", {
            "fetus_id": f.fetus_id,
            "frame": f.frame.to_list(),
            "head_sign_flipped": f.frame.head_sign_flipped,
            "head_ends": {str(i): e.tolist() for i, e in zip(f.bone_ids, f.head_ends)},
        })


def read_features_dump(in_dir) -> list[FetusFeatures]:
    d = Path(in_dir)
    out = []
    for frame_path in sorted(d.glob("fetus*_frame.json"), key=lambda p: int(p.stem[5:].split("_")[0])):
        doc = json.loads(frame_path.read_text(encoding="utf-8"))
        k = doc["fetus_id"]
        raw = features.matrix_from_csv((d / f"fetus{k}_raw.csv").read_text(encoding="utf-8"))
        bm = features.matrix_from_csv((d / f"fetus{k}_bac.csv").read_text(encoding="utf-8"), "Bac")
        ends = np.array([doc["head_ends"][str(i)] for i in raw.bone_ids], dtype=float)
        out.append(FetusFeatures(k, raw, bac.BodyFrame.from_list(doc["frame"], doc["head_sign_flipped"]), bm, ends))
    if not out:
        raise DataError(f"no feature dumps in {d}")
    return out


# -- model ----------------------------------------------------------------------

def _stats_meta(s: bac.NormStats) -> dict:
    return {"mean": s.mean.tolist(), "std": s.std.tolist()}


def _stats_from_meta(d) -> bac.NormStats | None:
    return None if d is None else bac.NormStats(np.array(d["mean"]), np.array(d["std"]))


def model_meta(tax: Taxonomy, blocks, params: bac.SpectralParams, raw_norm, bac_norm) -> dict:
    return {
        "taxonomy": gbdt.taxonomy_meta(tax),
        "feature_config": list(blocks),
        "spectral": {"k_neighbors": params.k_neighbors, "embed_dim": params.embed_dim},
        "norm": {"Raw": _stats_meta(raw_norm), "Bac": _stats_meta(bac_norm)},
    }


@dataclass(eq=False)
class ModelContext:
    model: gbdt.GbdtModel
    taxonomy: Taxonomy
    blocks: tuple
    spectral: bac.SpectralParams
    raw_norm: bac.NormStats | None
    bac_norm: bac.NormStats | None

    @classmethod
    def from_model(cls, model: gbdt.GbdtModel) -> "ModelContext":
        m = model.meta
        try:
            tax = Taxonomy(tuple(m["taxonomy"]["labels"]), tuple(m["taxonomy"]["groups"]))
            return cls(model, tax, bac.parse_feature_config(m["feature_config"]),
                       bac.SpectralParams(**m["spectral"]),
                       _stats_from_meta(m["norm"].get("Raw")), _stats_from_meta(m["norm"].get("Bac")))
        except (KeyError, TypeError, ValueError) as exc:
            from .errors import ModelFormatError
            raise ModelFormatError(f"model metadata incomplete: {exc}") from None

    def design(self, f: FetusFeatures) -> np.ndarray:
        return bac.design_matrix(f.raw, f.bac, self.blocks, self.spectral, self.raw_norm, self.bac_norm)


def labeled_bones(f: FetusFeatures, labels, probs) -> list[relabel.LabeledBone]:
    out = []
    for i, bid in enumerate(f.bone_ids):
        row = f.bac.values[i]
        out.append(relabel.LabeledBone(
            id=int(bid), label=int(labels[i]), centroid=row[1:4].copy(), n_voxels=int(row[0]),
            major_axis=float(row[7]), probs=None if probs is None else np.asarray(probs[i]),
            head_end=f.head_ends[i].copy()))
    return out


def predict_fetus(ctx: ModelContext, f: FetusFeatures) -> list[relabel.LabeledBone]:
    labels, probs = ctx.model.predict(ctx.design(f))
    return labeled_bones(f, labels, probs)


def labeled_to_json(bones: list[relabel.LabeledBone], tax: Taxonomy, fetus_id: int, scan: str = "",
                    extra: dict | None = None) -> dict:
    doc = {
        "scan": scan,
        "fetus_id": fetus_id,
        "taxonomy": gbdt.taxonomy_meta(tax),
        "bones": [{
            "id": b.id,
            "label": tax.labels[b.label],
            "centroid": b.centroid.tolist(),
            "n_voxels": b.n_voxels,
            "major_axis": b.major_axis,
            "probs": None if b.probs is None else b.probs.tolist(),
            "head_end": None if b.head_end is None else list(map(float, b.head_end)),
        } for b in bones],
    }
    doc.update(extra or {})
    return doc


def labeled_from_json(doc):
    tax = Taxonomy(tuple(doc["taxonomy"]["labels"]), tuple(doc["taxonomy"]["groups"]))
    bones = [relabel.LabeledBone(
        id=int(b["id"]), label=tax.index(b["label"]), centroid=np.array(b["centroid"], dtype=float),
        n_voxels=int(b["n_voxels"]), major_axis=float(b["major_axis"]),
        probs=None if b["probs"] is None else np.array(b["probs"], dtype=float),
        head_end=None if b["head_end"] is None else np.array(b["head_end"], dtype=float),
    ) for b in doc["bones"]]
    return bones, tax, int(doc["fetus_id"]), doc.get("scan", "")


# -- relabel + rules -------------------------------------------------------------

def relabel_fetus(bones, tax: Taxonomy):
    res = relabel.relabel(bones, tax)
    return relabel.apply_labels(bones, res.labels), res


def screen_fetus(bones, tax: Taxonomy, fetus_id: int, cfg: PipelineConfig, warnings=()):
    return rules.screen(bones, tax, fetus_id, cfg.rules, warnings)


@dataclass
class FetusResult:
    fetus_id: int
    predicted: list
    final: list
    relabel: relabel.RelabelResult
    report: rules.ScreeningReport
    features: FetusFeatures | None = None


@dataclass
class ScanResult:
    ref: str
    bones: list
    fetuses: list = field(default_factory=list)
    warnings: list = field(default_factory=list)


def screen_labeled(result: ScanResult, fetus_id: int, predicted, tax: Taxonomy, cfg: PipelineConfig,
                   features: FetusFeatures | None = None) -> None:
    final, res = _stage("relabel", relabel_fetus, predicted, tax)
    report = _stage("rules", screen_fetus, final, tax, fetus_id, cfg, res.warnings)
    result.fetuses.append(FetusResult(fetus_id, predicted, final, res, report, features))


def screen_features(result: ScanResult, fetuses, ctx: ModelContext, cfg: PipelineConfig) -> ScanResult:
    for f in fetuses:
        predicted = _stage("predict", predict_fetus, ctx, f)
        screen_labeled(result, f.fetus_id, predicted, ctx.taxonomy, cfg, f)
    return result


def screen_volume(volume: VoxelVolume, ctx: ModelContext, cfg: PipelineConfig, ref: str = "",
                  bones=None) -> ScanResult:
    """Full pipeline on one scan: localize, featurize, predict, relabel, rules."""
    if bones is None:
        bones = _stage("localize", localize_scan, volume, cfg, ref)
    result = ScanResult(ref, bones)
    if not bones:
        result.warnings.append("no bones found")
        return result
    fetuses = _stage("features", featurize_scan, bones, volume.spacing_mm, result.warnings)
    return screen_features(result, fetuses, ctx, cfg)


def resume_stage(in_dir) -> str:
    """Latest stage whose dump is present in ``in_dir``."""
    d = Path(in_dir)
    for stage, pattern in (("labeled", "fetus*_labeled.json"), ("features", "fetus*_frame.json"),
                           ("localize", "instances.json")):
        if any(d.glob(pattern)):
            return stage
    raise DataError(f"{d}: no stage dump found (expected labeled JSON, features or instances.json)")


def _fetus_files(d: Path, suffix: str):
    files = list(d.glob(f"fetus*_{suffix}.json"))
    return sorted(files, key=lambda p: int(p.stem[5:].split("_")[0]))


def read_labeled_dump(in_dir, suffix: str = "labeled"):
    """[(fetus_id, bones, taxonomy, scan ref)] from ``fetus<k>_<suffix>.json`` files."""
    out = []
    for p in _fetus_files(Path(in_dir), suffix):
        try:
            bones, tax, fid, ref = labeled_from_json(json.loads(p.read_text(encoding="utf-8")))
        except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
            raise DataError(f"{p}: malformed labeled dump ({exc})") from None
        out.append((fid, bones, tax, ref))
    if not out:
        raise DataError(f"no fetus*_{suffix}.json files in {in_dir}")
    return out


def screen_resume(in_dir, cfg: PipelineConfig, ctx: ModelContext | None = None) -> tuple[ScanResult, Taxonomy]:
    """Finish the pipeline from the latest stage dump in ``in_dir``.

    Starting from labeled dumps needs no model; earlier stages do.
    """
    stage = resume_stage(in_dir)
    if stage == "labeled":
        dumps = read_labeled_dump(in_dir)
        tax = dumps[0][2]
        result = ScanResult(dumps[0][3], [])
        for fid, bones, _, _ in dumps:
            screen_labeled(result, fid, bones, tax, cfg)
        return result, tax
    if ctx is None:
        from .errors import ModelMissingError
        raise StageError("predict", ModelMissingError(f"resuming from the {stage} stage needs a model"))
    if stage == "features":
        fetuses = _stage("features", read_features_dump, in_dir)
        result = ScanResult(str(in_dir), [])
    else:
        bones, spacing, ref = _stage("localize", read_localize_dump, in_dir)
        result = ScanResult(ref, bones)
        fetuses = _stage("features", featurize_scan, bones, spacing, result.warnings)
    return screen_features(result, fetuses, ctx, cfg), ctx.taxonomy


def label_csv(results: list[ScanResult], tax: Taxonomy) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["scan", "fetus", "bone_id", "label", "group", "predicted_label"])
    for r in results:
        for f in r.fetuses:
            for b0, b in zip(f.predicted, f.final):
                w.writerow([r.ref, f.fetus_id, b.id, tax.labels[b.label], tax.groups[b.label],
                            tax.labels[b0.label]])
    return buf.getvalue()


def write_screen_outputs(out_dir, result: ScanResult, tax: Taxonomy, meshes: bool = False,
                         spacing_mm=None) -> None:
    out = Path(out_dir)
    for f in result.fetuses:
        k = f.fetus_id
        write_json(out / f"fetus{k}_labeled.json", labeled_to_json(f.predicted, tax, k, result.ref))
        write_json(out / f"fetus{k}_relabeled.json", labeled_to_json(
            f.final, tax, k, result.ref, {"warnings": f.relabel.warnings}))
        write_text(out / f"fetus{k}_relabel_diff.csv", relabel.diff_csv(f.relabel.diffs, tax))
        doc = f.report.to_dict()
        doc["scan"] = result.ref
        write_json(out / f"fetus{k}_report.json", doc)
    write_text(out / "labels.csv", label_csv([result], tax))
    write_text(out / "summary.csv", rules.batch_csv([(result.ref, f.fetus_id, f.report)
                                                     for f in result.fetuses]))
    if result.warnings:
        write_json(out / "warnings.json", result.warnings)
    if meshes and spacing_mm is not None:
        mesh_bones(result.bones, spacing_mm, out / "meshes")


# -- training / evaluation on ground-truthed scans ------------------------------

def read_manifest(path):
    p = Path(path)
    if not p.is_file():
        raise DataError(f"manifest not found: {p}")
    try:
        doc = json.loads(p.read_text(encoding="utf-8"))
        entries = doc["volumes"]
    except (json.JSONDecodeError, KeyError, TypeError) as exc:
        raise DataError(f"{p}: malformed manifest ({exc})") from None
    out = []
    for i, e in enumerate(entries):
        if "header" not in e or "truth" not in e:
            raise DataError(f"{p}: entry {i} needs 'header' and 'truth'")
        out.append({"header": str((p.parent / e["header"]).resolve()),
                    "truth": str((p.parent / e["truth"]).resolve()),
                    "split": e.get("split", "train")})
    if not out:
        raise DataError(f"{p}: manifest lists no volumes")
    return out


def write_manifest(path, entries) -> None:
    p = Path(path)
    rel = []
    for e in entries:
        rel.append({"header": os.path.relpath(e["header"], p.parent),
                    "truth": os.path.relpath(e["truth"], p.parent), "split": e.get("split", "train")})
    write_json(p, {"volumes": rel})


def load_truth(truth_json):
    p = Path(truth_json)
    if not p.is_file():
        raise DataError(f"truth file not found: {p}")
    doc = json.loads(p.read_text(encoding="utf-8"))
    labels, _ = load_label_volume(p.parent / doc["label_volume"])
    return doc, labels


def match_truth(bones, truth_labels: np.ndarray) -> dict:
    """Instance id -> truth bone id holding most of its voxels (0 if none)."""
    out = {}
    for b in bones:
        ids = truth_labels[tuple(b.voxels.T)]
        ids = ids[ids > 0]
        out[b.id] = int(np.bincount(ids).argmax()) if ids.size else 0
    return out


@dataclass(eq=False)
class GroundTruthScan:
    ref: str
    spacing_mm: tuple
    bones: list
    fetuses: list  # FetusFeatures
    truth_label: dict  # instance id -> label index (-1 if unmatched)
    truth_id: dict  # instance id -> truth bone id (0 if unmatched)
    expected_verdicts: dict  # fetus id -> "Normal"/"Abnormal"
    n_truth_bones: int


def prepare_scan(header, truth_json, cfg: PipelineConfig, tax: Taxonomy) -> GroundTruthScan:
    """Localize and featurize one ground-truthed scan and attach truth labels."""
    vol = _stage("load", load_volume, header)
    doc, tlabels = _stage("load", load_truth, truth_json)
    if tlabels.shape != vol.data.shape:
        raise StageError("load", DataError(f"{truth_json}: truth grid {tlabels.shape} != scan {vol.data.shape}"))
    bones = _stage("localize", localize_scan, vol, cfg, str(header))
    warnings = []
    fetuses = _stage("features", featurize_scan, bones, vol.spacing_mm, warnings)
    name_of = {b["id"]: b["label"] for b in doc["bones"]}
    truth_fetus_of = {b["id"]: b["fetus"] for b in doc["bones"]}
    matched = match_truth(bones, tlabels)
    truth_label = {i: (tax.index(name_of[t]) if t else -1) for i, t in matched.items()}
    expected = {}
    per_fetus = doc.get("fetus_verdicts")
    for f in fetuses:
        tf = [truth_fetus_of[matched[i]] for i in f.bone_ids if matched[i]]
        fid_truth = int(np.bincount(tf).argmax()) if tf else 0
        expected[f.fetus_id] = per_fetus[fid_truth] if per_fetus else doc["expected_verdict"]
    return GroundTruthScan(str(header), vol.spacing_mm, bones, fetuses, truth_label, matched, expected,
                           len(doc["bones"]))


def fit_norm_stats(scans: list[GroundTruthScan]):
    raw = np.vstack([f.raw.values for s in scans for f in s.fetuses])
    bm = np.vstack([f.bac.values for s in scans for f in s.fetuses])
    return bac.NormStats.fit(raw), bac.NormStats.fit(bm)


def train_from_scans(scans: list[GroundTruthScan], cfg: PipelineConfig, tax: Taxonomy, progress=None):
    if not scans:
        raise TrainingError("no training scans")
    raw_norm, bac_norm = fit_norm_stats(scans)
    blocks = bac.parse_feature_config(cfg.feature_config)
    X, y = [], []
    for s in scans:
        for f in s.fetuses:
            d = bac.design_matrix(f.raw, f.bac, blocks, cfg.spectral, raw_norm, bac_norm)
            lab = np.array([s.truth_label[i] for i in f.bone_ids])
            keep = lab >= 0
            X.append(d[keep])
            y.append(lab[keep])
    X = np.vstack(X)
    y = np.concatenate(y)
    meta = model_meta(tax, blocks, cfg.spectral, raw_norm, bac_norm)
    return gbdt.train(X, y, len(tax.labels), cfg.gbdt, meta, progress)


@dataclass
class StudyResult:
    labels_final: object  # EvalResult
    labels_predicted: object
    screening: object  # ScreeningMetrics
    verdicts: list  # (scan, fetus, expected, predicted, rules)
    unmatched_instances: int
    missed_truth_bones: int


def evaluate_scans(scans: list[GroundTruthScan], ctx: ModelContext, cfg: PipelineConfig) -> StudyResult:
    t_final, p_final, p_pred = [], [], []
    verdicts = []
    unmatched = missed = 0
    for s in scans:
        res = _screen_prepared(s, ctx, cfg)
        for fr in res.fetuses:
            for b0, b in zip(fr.predicted, fr.final):
                t = s.truth_label[b.id]
                if t < 0:
                    unmatched += 1
                    continue
                t_final.append(t)
                p_final.append(b.label)
                p_pred.append(b0.label)
            verdicts.append((s.ref, fr.fetus_id, s.expected_verdicts[fr.fetus_id],
                             fr.report.verdict, fr.report.rules_fired))
        missed += s.n_truth_bones - len(set(s.truth_id.values()) - {0})
    if not t_final:
        raise EvalError("no matched bones to evaluate")
    K = len(ctx.taxonomy.labels)
    return StudyResult(
        evaluate_labels(t_final, p_final, K),
        evaluate_labels(t_final, p_pred, K),
        evaluate_screening([v[2] for v in verdicts], [v[3] for v in verdicts]),
        verdicts, unmatched, missed,
    )


def _screen_prepared(s: GroundTruthScan, ctx: ModelContext, cfg: PipelineConfig) -> ScanResult:
    return screen_features(ScanResult(s.ref, s.bones), s.fetuses, ctx, cfg)


def default_taxonomy(cfg: PipelineConfig) -> Taxonomy:
    return load_taxonomy(cfg.taxonomy_path or None)


def write_labeled_dump(out_dir, fetuses, ctx: ModelContext, ref: str = "") -> None:
    for f in fetuses:
        bones = _stage("predict", predict_fetus, ctx, f)
        write_json(Path(out_dir) / f"fetus{f.fetus_id}_labeled.json", labeled_to_json(bones, ctx.taxonomy, f.fetus_id, ref))


def relabel_dump(in_dir, out_dir) -> list:
    """Relabel every ``fetus<k>_labeled.json`` in ``in_dir``; returns the diffs per fetus."""
    out = []
    for fid, bones, tax, ref in read_labeled_dump(in_dir):
        final, res = _stage("relabel", relabel_fetus, bones, tax)
        write_json(Path(out_dir) / f"fetus{fid}_relabeled.json",
                   labeled_to_json(final, tax, fid, ref, {"warnings": res.warnings}))
        write_text(Path(out_dir) / f"fetus{fid}_relabel_diff.csv", relabel.diff_csv(res.diffs, tax))
        out.append((fid, res.diffs))
    return out


def _read_rows(text: str, keys, value: str, what: str) -> dict:
    rows = list(csv.DictReader(io.StringIO(text)))
    need = list(keys) + [value]
    if not rows or any(k not in rows[0] for k in need):
        raise EvalError(f"{what}: need a header with columns {need}")
    out = {}
    for r in rows:
        out[tuple(r[k] for k in keys)] = r[value]
    return out


def evaluate_csv(pred_text: str, truth_text: str, tax: Taxonomy):
    """Compare two label tables (``scan,fetus,bone_id,label``) or two verdict tables
    (``scan,fetus,verdict``), joined on their key columns."""
    header = pred_text.split("\n", 1)[0].split(",")
    if "label" in header:
        keys, value = ("scan", "fetus", "bone_id"), "label"
    elif "verdict" in header:
        keys, value = ("scan", "fetus"), "verdict"
    else:
        raise EvalError("predictions need a 'label' or 'verdict' column")
    pred = _read_rows(pred_text, keys, value, "predictions")
    truth = _read_rows(truth_text, keys, value, "truth")
    if set(pred) != set(truth):
        raise EvalError(f"prediction/truth keys differ: {len(set(pred) ^ set(truth))} unmatched rows")
    order = sorted(truth)
    if value == "verdict":
        return evaluate_screening([truth[k] for k in order], [pred[k] for k in order])
    try:
        t = [tax.index(truth[k]) for k in order]
        p = [tax.index(pred[k]) for k in order]
    except ValueError as exc:
        raise EvalError(f"label not in taxonomy: {exc}") from None
    return evaluate_labels(t, p, len(tax.labels))
