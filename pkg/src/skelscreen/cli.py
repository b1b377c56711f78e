"""Command line entry point: ``skelscreen <command> ...``.

Exit codes: 0 success, 2 usage, 3 volume I/O, 4 model, 5 data, 6 phantom,
7 config, 8 evaluation, 1 anything else raised by the package.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

from . import gbdt, phantom, pipeline
from .config import dump_config, load_config
from .errors import DataError, SkelError, StageError
from .volume import load_volume

log = logging.getLogger("skelscreen")


def _config(args):
    return load_config(args.config, args.set or ())


def _model_context(args, cfg, required=True):
    path = args.model or cfg.model_path
    if not path:
        if not required:
            return None
        from .errors import ModelMissingError
        raise StageError("load", ModelMissingError("no model given (--model or paths.model)"))
    try:
        return pipeline.ModelContext.from_model(gbdt.load_model(path))
    except SkelError as exc:
        raise StageError("load", exc) from exc


def _scan_out(out: Path, header: str, n_scans: int) -> Path:
    return out if n_scans == 1 else out / Path(header).stem


def _screen_one(header, out_dir, model_path, cfg, meshes):
    ctx = pipeline.ModelContext.from_model(gbdt.load_model(model_path))
    vol = pipeline._stage("load", load_volume, header)
    result = pipeline.screen_volume(vol, ctx, cfg, ref=str(header))
    pipeline.write_screen_outputs(out_dir, result, ctx.taxonomy, meshes, vol.spacing_mm)
    return [(result.ref, f.fetus_id, f.report) for f in result.fetuses]


def cmd_screen(args) -> int:
    cfg = _config(args)
    out = Path(args.out)
    rows = []
    if args.resume:
        ctx = _model_context(args, cfg, required=False)
        result, tax = pipeline.screen_resume(args.resume, cfg, ctx)
        pipeline.write_screen_outputs(out, result, tax)
        rows = [(result.ref, f.fetus_id, f.report) for f in result.fetuses]
    else:
        if not args.volumes:
            raise DataError("screen needs volume headers or --resume DIR")
        ctx = _model_context(args, cfg)  # fail early on a bad model
        model_path = args.model or cfg.model_path
        jobs = [(h, _scan_out(out, h, len(args.volumes))) for h in args.volumes]
        if args.jobs > 1 and len(jobs) > 1:
            with ProcessPoolExecutor(args.jobs) as ex:
                futures = [ex.submit(_screen_one, h, o, model_path, cfg, args.meshes) for h, o in jobs]
                for fut in futures:
                    rows += fut.result()
        else:
            for h, o in jobs:
                rows += _screen_one(h, o, model_path, cfg, args.meshes)
        del ctx
    from .rules import batch_csv
    pipeline.write_text(out / "summary.csv", batch_csv(rows))
    for scan, fid, rep in rows:
        fired = ";".join(str(r) for r in rep.rules_fired) or "-"
        print(f"{scan}\tfetus {fid}\t{rep.verdict}\trules {fired}")
    return 0


def _progress(every):
    def report(rnd, loss):
        if rnd % every == 0:
            log.info("round %d loss %.6f", rnd, loss)
    return report


def _prepare(manifest, split, cfg, tax):
    entries = [e for e in pipeline.read_manifest(manifest) if split is None or e["split"] == split]
    if not entries:
        raise DataError(f"{manifest}: no volumes in split {split!r}")
    scans = []
    for e in entries:
        log.info("preparing %s", e["header"])
        scans.append(pipeline.prepare_scan(e["header"], e["truth"], cfg, tax))
    return scans


def cmd_train(args) -> int:
    cfg = _config(args)
    tax = pipeline.default_taxonomy(cfg)
    scans = _prepare(args.manifest, args.split, cfg, tax)
    try:
        model = pipeline.train_from_scans(scans, cfg, tax, _progress(50))
    except SkelError as exc:
        raise StageError("train", exc) from exc
    out = args.out or cfg.model_path
    if not out:
        raise DataError("train needs --out or paths.model")
    gbdt.save_model(model, out)
    print(f"model written to {out} ({model.n_trees} trees, final loss {model.loss_history[-1]:.6f})")
    return 0


def cmd_eval(args) -> int:
    cfg = _config(args)
    if args.predictions:
        if not args.truth:
            raise DataError("--predictions needs --truth")
        tax = pipeline.default_taxonomy(cfg)
        res = pipeline.evaluate_csv(Path(args.predictions).read_text(encoding="utf-8"),
                                    Path(args.truth).read_text(encoding="utf-8"), tax)
        doc = res.to_dict()
    else:
        if not args.manifest:
            raise DataError("eval needs --manifest or --predictions/--truth")
        ctx = _model_context(args, cfg)
        scans = _prepare(args.manifest, args.split, cfg, ctx.taxonomy)
        res = pipeline.evaluate_scans(scans, ctx, cfg)
        doc = {
            "labels": res.labels_final.to_dict(),
            "labels_before_relabel": res.labels_predicted.to_dict(),
            "screening": res.screening.to_dict(),
            "unmatched_instances": res.unmatched_instances,
            "missed_truth_bones": res.missed_truth_bones,
            "verdicts": [{"scan": s, "fetus": f, "expected": e, "predicted": p, "rules": r}
                         for s, f, e, p, r in res.verdicts],
        }
    text = json.dumps(doc, indent=1, sort_keys=True) + "\n"
    if args.out:
        pipeline.write_text(args.out, text)
    sys.stdout.write(text)
    return 0


def cmd_localize(args) -> int:
    cfg = _config(args)
    vol = pipeline._stage("load", load_volume, args.volume)
    bones = pipeline._stage("localize", pipeline.localize_scan, vol, cfg, str(args.volume))
    pipeline.write_localize_dump(args.out, bones, vol, str(args.volume))
    if args.meshes:
        pipeline.mesh_bones(bones, vol.spacing_mm, Path(args.out) / "meshes")
    print(f"{len(bones)} bones, {len({b.fetus_id for b in bones})} fetus(es) -> {args.out}")
    return 0


def cmd_features(args) -> int:
    cfg = _config(args)
    bones, spacing, ref = pipeline._stage("localize", pipeline.read_localize_dump, args.localized)
    warnings = []
    fetuses = pipeline._stage("features", pipeline.featurize_scan, bones, spacing, warnings)
    pipeline.write_features_dump(args.out, fetuses)
    ctx = _model_context(args, cfg, required=False)
    if ctx is not None:
        pipeline.write_labeled_dump(args.out, fetuses, ctx, ref)
    for w in warnings:
        log.warning(w)
    print(f"{len(fetuses)} fetus feature set(s) -> {args.out}")
    return 0


def cmd_relabel(args) -> int:
    for fid, diffs in pipeline.relabel_dump(args.labeled, args.out):
        print(f"fetus {fid}: {len(diffs)} label(s) changed")
    return 0


def cmd_phantom(args) -> int:
    if args.study:
        n_train, n_test, n_abnormal = args.study
        manifest = phantom.write_study(args.out, phantom.study_specs(n_train, n_test, n_abnormal, args.seed))
        print(f"study manifest -> {manifest}")
        return 0
    inj = tuple(phantom.Injection.from_dict(json.loads(j)) for j in args.inject or ())
    spec = phantom.PhantomSpec(seed=args.seed, injections=inj, noise_hu=args.noise)
    if args.pair is not None:
        vol, truth = phantom.generate_pair(spec, args.pair)
    else:
        vol, truth = phantom.generate(spec)
    out = Path(args.out)
    header = out if out.suffix == ".hdr" else out / f"phantom_{args.seed}.hdr"
    paths = phantom.save_phantom(vol, truth, header)
    print(f"{paths['header']} ({len(truth.bones)} bones, expected {truth.expected_verdict})")
    return 0


def cmd_config(args) -> int:
    sys.stdout.write(dump_config(_config(args)))
    return 0


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="INI configuration file")
    common.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE", help="override one config key")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="skelscreen", description="Skeletal labeling and abnormality screening.")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("screen", parents=[common], help="full pipeline on one or more scans")
    s.add_argument("volumes", nargs="*", help="volume headers (.hdr)")
    s.add_argument("--model")
    s.add_argument("--out", required=True)
    s.add_argument("--meshes", action="store_true", help="also write one PLY mesh per bone")
    s.add_argument("--resume", metavar="DIR", help="continue from a stage dump instead of a volume")
    s.add_argument("--jobs", type=int, default=1, help="scans processed in parallel")
    s.set_defaults(func=cmd_screen)

    s = sub.add_parser("train", parents=[common], help="train a model from a manifest")
    s.add_argument("--manifest", required=True)
    s.add_argument("--split", default="train", help="manifest split to train on")
    s.add_argument("--out")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("eval", parents=[common], help="labeling / screening metrics")
    s.add_argument("--manifest")
    s.add_argument("--split", default="test")
    s.add_argument("--model")
    s.add_argument("--predictions", help="labels.csv or summary.csv to score")
    s.add_argument("--truth", help="table with the same columns holding the truth")
    s.add_argument("--out")
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("localize", parents=[common], help="bone instances of one scan")
    s.add_argument("volume")
    s.add_argument("--out", required=True)
    s.add_argument("--meshes", action="store_true")
    s.set_defaults(func=cmd_localize)

    s = sub.add_parser("features", parents=[common], help="feature matrices from a localize dump")
    s.add_argument("localized")
    s.add_argument("--out", required=True)
    s.add_argument("--model", help="also write per-fetus label predictions")
    s.set_defaults(func=cmd_features)

    s = sub.add_parser("relabel", parents=[common], help="curve relabeling of labeled dumps")
    s.add_argument("labeled")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_relabel)

    s = sub.add_parser("phantom", parents=[common], help="synthetic scans with ground truth")
    s.add_argument("--out", required=True, help="directory or .hdr path")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--noise", type=float, default=30.0, help="Gaussian noise sigma in HU")
    s.add_argument("--inject", action="append", metavar="JSON",
                   help='e.g. \'{"kind": "ScaleVertebra", "region": "thoracic", "index": 5, "factor": 0.5}\'')
    s.add_argument("--pair", type=float, metavar="OFFSET_MM", help="two fetuses offset along y")
    s.add_argument("--study", type=int, nargs=3, metavar=("TRAIN", "TEST", "ABNORMAL"),
                   help="write a whole phantom study with a manifest")
    s.set_defaults(func=cmd_phantom)

    s = sub.add_parser("config", parents=[common], help="print the effective configuration")
    s.set_defaults(func=cmd_config)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except SkelError as exc:
        print(f"error ({exc.code}): {exc}", file=sys.stderr)
        return exc.exit_code
    except (OSError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
