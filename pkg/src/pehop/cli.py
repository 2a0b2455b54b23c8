"""Command-line entry point.

Artifacts live under ``--out``::

    dataset.json, studies/                synth
    preprocessed/<id>.npy|.json,          preprocess
    crop_stats.json
    checkpoints/pretrain.json|.bin        pretrain
    checkpoints/hop<k>.json|.bin,         train --hop k
    train_probs_hop<k>.csv, train_log_hop<k>.json
    predictions_hop<k>.csv                infer
    params.json                           tune
    report.json                           eval
    gradcheck.json                        gradcheck

Exit codes: 0 ok, 1 other pipeline error, 2 config error, 3 missing
prerequisite, 4 verification failure.  Concurrent runs against one output
directory are not supported.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import augment as aug
from .autodiff.checkpoint import load_checkpoint, save_checkpoint
from .config import PipelineConfig, load_config
from .decision import (
    ProbabilitySeries,
    VotingParams,
    evaluate_studies,
    format_ratio,
    read_predictions_csv,
    tune_thresholds,
    validate_report,
    write_predictions_csv,
)
from .errors import ConfigInvalid, EmptyMask, MissingPrerequisite, PipelineError
from .hopnet.landmarks import LandmarkHead, LandmarkModel, encode_landmarks
from .hopnet.model import SLAB_CHANNELS, HopPipeline, TapEncoder
from .hopnet.training import predict_proba, pretrain_landmarks, train_hop
from .roi import Organ, OrganMask, crop_ratio_stats, crop_study
from .synth import write_dataset
from .verify import run_suite
from .volume import WindowedVolume, apply_windows, assemble_slabs, load_volume, read_array_pair

log = logging.getLogger("pehop")

EXIT_OK, EXIT_ERROR, EXIT_CONFIG, EXIT_PREREQ, EXIT_VERIFY = 0, 1, 2, 3, 4


class VerificationFailed(PipelineError):
    pass


def _dump(path: Path, obj) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _require(path: Path, what: str) -> Path:
    if not path.exists():
        raise MissingPrerequisite(f"{path} not found; run `{what}` first")
    return path


def _manifest(out: Path) -> dict:
    return json.loads(_require(out / "dataset.json", "synth").read_text())


def _study_meta(out: Path, sid: str) -> dict:
    return json.loads((out / "studies" / f"{sid}_meta.json").read_text())


def _crop_stats(out: Path) -> dict:
    return json.loads(_require(out / "crop_stats.json", "preprocess").read_text())


def _split_ids(out: Path, split: str) -> list[str]:
    m = _manifest(out)
    if split == "all":
        return list(m["studies"])
    if split not in m["split"]:
        raise ConfigInvalid(f"unknown split {split!r}")
    return list(m["split"][split])


def _load_slabs(out: Path, sid: str) -> tuple[np.ndarray, dict]:
    meta = json.loads((out / "preprocessed" / f"{sid}.json").read_text())
    values = np.load(out / "preprocessed" / f"{sid}.npy")
    return assemble_slabs(WindowedVolume(values)).slabs.astype(np.float32), meta


def _usable(out: Path, ids) -> list[str]:
    excluded = set(_crop_stats(out)["excluded"])
    return [sid for sid in ids if sid not in excluded]


def _stack(out: Path, ids):
    slabs, labels, owners = [], [], []
    for sid in ids:
        s, meta = _load_slabs(out, sid)
        slabs.append(s)
        labels.extend(meta["slice_labels"])
        owners.extend([sid] * len(s))
    return np.concatenate(slabs), np.asarray(labels, dtype=np.int64), owners


def _latest_hop(out: Path) -> int:
    hops = [int(p.stem[3:]) for p in (out / "checkpoints").glob("hop*.json") if p.stem[3:].isdigit()]
    if not hops:
        raise MissingPrerequisite("no hop checkpoint found; run `train --hop 1` first")
    return max(hops)


def _load_pipeline(cfg: PipelineConfig, out: Path, hop: int) -> HopPipeline:
    path = _require(out / "checkpoints" / f"hop{hop}.json", f"train --hop {hop}")
    state, meta = load_checkpoint(path)
    p = HopPipeline(cfg.arch_config())
    try:
        p.load_state_dict(state)
    except (KeyError, ValueError) as exc:
        raise ConfigInvalid(f"checkpoint {path} does not match the configured architecture: {exc}")
    p.trained_hops = set(meta.get("trained_hops", []))
    return p


def _split_series(owners, probs) -> list[ProbabilitySeries]:
    out, order = {}, []
    for sid, pr in zip(owners, probs):
        if sid not in out:
            out[sid] = []
            order.append(sid)
        out[sid].append(pr)
    return [ProbabilitySeries(sid, np.array(out[sid])) for sid in order]


# --------------------------------------------------------------------- commands

def cmd_synth(cfg: PipelineConfig, out: Path, args) -> int:
    n = args.n_studies or cfg.n_studies
    m = write_dataset(out, cfg.synth, n, cfg.stage_seed("synth"))
    print(f"wrote {len(m['studies'])} studies to {out}; "
          f"{len(m['split']['train'])} train / {len(m['split']['val'])} val")
    return EXIT_OK


def _crop_landmarks(meta: dict, bbox, target) -> tuple[np.ndarray, np.ndarray]:
    """Landmark (x, y, z) in cropped-volume coordinates and presence flags;
    landmarks falling outside the box are marked absent."""
    z0, z1, y0, y1, x0, x1 = bbox
    th, tw = target
    raw, present = [], []
    for lm in meta["landmarks"]:
        x = (lm["x"] - x0 + 0.5) * tw / (x1 - x0) - 0.5
        y = (lm["y"] - y0 + 0.5) * th / (y1 - y0) - 0.5
        z = lm["z"] - z0
        inside = 0 <= x <= tw and 0 <= y <= th
        raw.append((x, y, z))
        present.append(bool(lm["present"] and inside))
    return np.array(raw), np.array(present)


def cmd_preprocess(cfg: PipelineConfig, out: Path, args) -> int:
    manifest = _manifest(out)
    pre = out / "preprocessed"
    pre.mkdir(parents=True, exist_ok=True)
    per_study, crops, excluded = [], [], []
    for sid in manifest["studies"]:
        base = out / "studies" / sid
        vol = load_volume(base)
        lung, _ = read_array_pair(out / "studies" / f"{sid}_lung")
        heart, _ = read_array_pair(out / "studies" / f"{sid}_heart")
        try:
            crop = crop_study(apply_windows(vol, cfg.windows), OrganMask(lung, Organ.LUNG),
                              OrganMask(heart, Organ.HEART), cfg.input_size)
        except EmptyMask:
            excluded.append(sid)
            log.info("%s: empty organ masks, excluded", sid)
            continue
        meta = _study_meta(out, sid)
        z0, z1 = crop.bbox[:2]
        raw, present = _crop_landmarks(meta, crop.bbox, cfg.input_size)
        np.save(pre / f"{sid}.npy", crop.cropped.values.astype(np.float32))
        _dump(pre / f"{sid}.json", {
            "study_id": sid, "bbox": list(crop.bbox), "crop_ratio": crop.crop_ratio,
            "dims": list(vol.dims), "slice_labels": meta["slice_labels"][z0:z1],
            "label": bool(any(meta["slice_labels"])),
            "landmarks": raw.tolist(), "landmarks_present": present.tolist(),
        })
        per_study.append({"study_id": sid, "bbox": list(crop.bbox), "crop_ratio": crop.crop_ratio})
        crops.append(crop.crop_ratio)
    report = {"per_study": per_study, "excluded": excluded, "n_excluded": len(excluded)}
    if crops:
        report.update(crop_ratio_stats(crops))
    _dump(out / "crop_stats.json", report)
    if crops:
        print(f"cropped {len(crops)} studies, crop ratio mean {report['mean']:.4f} "
              f"(min {report['min']:.4f}, max {report['max']:.4f}); {len(excluded)} excluded")
    else:
        print(f"all {len(excluded)} studies excluded")
    return EXIT_OK


def cmd_pretrain(cfg: PipelineConfig, out: Path, args) -> int:
    arch = cfg.arch_config()
    ids = _usable(out, _split_ids(out, "train"))
    slabs, targets, masks = [], [], []
    for sid in ids:
        s, meta = _load_slabs(out, sid)
        raw = np.array(meta["landmarks"])[:arch.landmarks]
        present = np.array(meta["landmarks_present"])[:arch.landmarks]
        dims = (len(s),) + tuple(cfg.input_size)
        for i in range(len(s)):
            t = encode_landmarks(raw, i, dims, present)
            v, m = t.flat()
            vec = np.zeros(3 * arch.landmarks)
            msk = np.zeros(3 * arch.landmarks)
            vec[:v.size], msk[:m.size] = v, m
            slabs.append(s[i])
            targets.append(vec)
            masks.append(msk)
    rng = np.random.default_rng(arch.seed)
    encoder = TapEncoder(SLAB_CHANNELS, arch.channels, arch.stage_depth, rng)
    model = LandmarkModel(encoder, LandmarkHead(arch.channels[-1], arch.landmarks, rng))
    trace = pretrain_landmarks(model, np.stack(slabs), np.stack(targets), np.stack(masks),
                               cfg.pretrain_config())
    save_checkpoint(model.state_dict(), out / "checkpoints" / "pretrain.json",
                    {"arch": arch.to_dict(), "final_loss": trace[-1]})
    _dump(out / "pretrain_log.json", {"loss": trace})
    print(f"landmark pretraining: {len(slabs)} slabs, final masked MSE {trace[-1]:.6f}")
    return EXIT_OK


def cmd_train(cfg: PipelineConfig, out: Path, args) -> int:
    hop = args.hop or 1
    arch = cfg.arch_config()
    if not 1 <= hop <= arch.hops:
        raise ConfigInvalid(f"--hop must lie in 1..{arch.hops}")
    if hop == 1:
        p = HopPipeline(arch)
        pre = out / "checkpoints" / "pretrain.json"
        if pre.exists():
            state, _ = load_checkpoint(pre)
            enc = {k[len("encoder."):]: v for k, v in state.items() if k.startswith("encoder.")}
            p.encoders[0].load_state_dict(enc)
            log.info("hop 1 initialised from landmark pretraining")
    else:
        p = _load_pipeline(cfg, out, hop - 1)
    ids = _usable(out, _split_ids(out, "train"))
    if not ids:
        raise MissingPrerequisite("no usable training studies; run `preprocess` first")
    slabs, labels, owners = _stack(out, ids)
    tcfg = cfg.train_config(hop)
    augment = None
    if cfg.augment is not None:
        spec = cfg.augment
        augment = lambda slab, seed: aug.compose(spec, slab, seed)  # noqa: E731
    trace = train_hop(p, slabs, labels, tcfg, hop, augment=augment)
    save_checkpoint(p.state_dict(), out / "checkpoints" / f"hop{hop}.json",
                    {"arch": arch.to_dict(), "hop": hop, "trained_hops": sorted(p.trained_hops),
                     "final_loss": trace[-1]})
    probs = predict_proba(p, slabs, cfg.infer_batch_size)[hop - 1]
    write_predictions_csv(out / f"train_probs_hop{hop}.csv", _split_series(owners, probs))
    _dump(out / f"train_log_hop{hop}.json", {"hop": hop, "loss": trace, "train": tcfg.to_dict()})
    print(f"hop {hop}: {len(slabs)} slabs, {tcfg.steps} steps, final loss {trace[-1]:.5f}")
    return EXIT_OK


def cmd_infer(cfg: PipelineConfig, out: Path, args) -> int:
    hop = args.hop or _latest_hop(out)
    p = _load_pipeline(cfg, out, hop)
    ids = _usable(out, _split_ids(out, args.split))
    per_hop = [[] for _ in range(hop)]
    for sid in ids:
        slabs, _ = _load_slabs(out, sid)
        probs = predict_proba(p, slabs, cfg.infer_batch_size)
        for k in range(hop):
            per_hop[k].append(ProbabilitySeries(sid, probs[k]))
    for k in range(hop):
        write_predictions_csv(out / f"predictions_hop{k + 1}.csv", per_hop[k])
    print(f"wrote per-slice probabilities for {len(ids)} studies, hops 1..{hop}")
    return EXIT_OK


def _val_series(out: Path, hop: int):
    path = _require(out / f"predictions_hop{hop}.csv", "infer")
    series = {s.study_id: s for s in read_predictions_csv(path)}
    ids = _split_ids(out, "val")
    excluded = set(_crop_stats(out)["excluded"])
    labels = {sid: bool(any(_study_meta(out, sid)["slice_labels"])) for sid in ids}
    missing = [sid for sid in ids if sid not in excluded and sid not in series]
    if missing:
        raise MissingPrerequisite(f"no predictions for {missing}; run `infer` first")
    return ids, series, excluded, labels


def cmd_tune(cfg: PipelineConfig, out: Path, args) -> int:
    hop = args.hop or _latest_hop(out)
    ids, series, excluded, labels = _val_series(out, hop)
    val = [(series[sid], labels[sid]) for sid in ids if sid not in excluded]
    params, f1 = tune_thresholds(val)
    _dump(out / "params.json", {"delta": params.delta, "mu": params.mu, "f1": f1, "hop": hop,
                                "n_validation": len(val)})
    print(f"hop {hop}: delta={params.delta:.6f} mu={params.mu} validation F1={f1:.4f}")
    return EXIT_OK


def cmd_eval(cfg: PipelineConfig, out: Path, args) -> int:
    tuned = json.loads(_require(out / "params.json", "tune").read_text())
    hop = args.hop or tuned["hop"]
    params = VotingParams(tuned["delta"], tuned["mu"])
    ids, series, excluded, labels = _val_series(out, hop)
    outputs = {sid: (None if sid in excluded else series[sid]) for sid in ids}
    report = evaluate_studies(outputs, labels, params)
    report["hop"] = hop
    validate_report(report)
    _dump(out / "report.json", report)
    m = report["metrics"]
    print(f"hop {hop}: F1 {format_ratio(m.get('f1'))}, sensitivity "
          f"{format_ratio(m.get('sensitivity'))}, specificity {format_ratio(m.get('specificity'))}"
          f", excluded {len(report['excluded'])}")
    return EXIT_OK


def cmd_gradcheck(cfg: PipelineConfig, out: Path, args) -> int:
    report = run_suite(range(args.seeds), with_network=not args.ops_only)
    _dump(out / "gradcheck.json", report)
    for name, err in report["ops"].items():
        print(f"{'PASS' if err < report['op_tolerance'] else 'FAIL'} {name}: {err:.3e}")
    if "network" in report:
        print(f"{'PASS' if report['network_pass'] else 'FAIL'} two-hop network: "
              f"{report['network']:.3e}")
    if not report["passed"]:
        raise VerificationFailed("gradient check exceeded tolerance")
    return EXIT_OK


COMMANDS = {
    "synth": cmd_synth, "preprocess": cmd_preprocess, "pretrain": cmd_pretrain,
    "train": cmd_train, "infer": cmd_infer, "tune": cmd_tune, "eval": cmd_eval,
    "gradcheck": cmd_gradcheck,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="pehop", description=__doc__.split("\n")[0])
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="JSON pipeline config")
    common.add_argument("--out", type=Path, default=Path("run"), help="artifact directory")
    common.add_argument("--seed", type=int, help="override the config seed (u64)")
    common.add_argument("--preset", choices=("desk", "paper"), help="encoder width preset")
    common.add_argument("--hop", type=int, help="hop index (1-based)")
    common.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    s = sub.add_parser("synth", parents=[common], help="generate a synthetic dataset")
    s.add_argument("--n-studies", type=int)
    sub.add_parser("preprocess", parents=[common], help="crop and window every study")
    sub.add_parser("pretrain", parents=[common], help="landmark regression pretraining")
    sub.add_parser("train", parents=[common], help="train one hop")
    s = sub.add_parser("infer", parents=[common], help="per-slice probabilities")
    s.add_argument("--split", default="all", choices=("all", "train", "val"))
    sub.add_parser("tune", parents=[common], help="fit (delta, mu) on the validation split")
    sub.add_parser("eval", parents=[common], help="study-level report on the validation split")
    s = sub.add_parser("gradcheck", parents=[common], help="finite-difference verification")
    s.add_argument("--seeds", type=int, default=20)
    s.add_argument("--ops-only", action="store_true")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config, seed=args.seed, preset=args.preset)
        args.out.mkdir(parents=True, exist_ok=True)
        return COMMANDS[args.command](cfg, args.out, args)
    except ConfigInvalid as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except MissingPrerequisite as exc:
        print(f"missing prerequisite: {exc}", file=sys.stderr)
        return EXIT_PREREQ
    except VerificationFailed as exc:
        print(f"verification failed: {exc}", file=sys.stderr)
        return EXIT_VERIFY
    except PipelineError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
