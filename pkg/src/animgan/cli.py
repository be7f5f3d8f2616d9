"""Command-line front end.

Every subcommand prints its fully resolved configuration as one JSON line
on stdout before doing any work.  Errors go to stderr as one JSON object
per line and map to exit codes: 1 usage, 2 data, 3 numeric failure.

Configuration precedence is flag > config file > built-in default.  A
config file is a JSON object; top-level keys apply to every subcommand and
an object stored under the subcommand's name overrides them.
"""

import argparse
import dataclasses
import glob
import json
import os
import sys

import numpy as np

from . import augment, bvh, codec as codec_mod, selfcheck, skeleton as sk, train
from .checkpoint import CheckpointError, load_checkpoint
from .generator import NoiseSpec, generate
from .losses import LossError
from .ndl import NonFiniteError
from .toy import make_toy_corpus

__all__ = ["main", "run", "EXIT_OK", "EXIT_USAGE", "EXIT_DATA", "EXIT_NUMERIC"]

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3
MANIFEST = "manifest.json"


class UsageError(Exception):
    pass


class DataError(Exception):
    pass


class NumericFailure(Exception):
    pass


_DATA_ERRORS = (
    DataError,
    bvh.BVHError,
    sk.SkeletonError,
    codec_mod.CodecError,
    augment.AugmentError,
    CheckpointError,
    train.TrainError,
    OSError,
    json.JSONDecodeError,
)
_NUMERIC_ERRORS = (NumericFailure, NonFiniteError, train.TrainingAborted, FloatingPointError)


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _diag(stream, level, **fields):
    stream.write(json.dumps({"level": level, **fields}, sort_keys=True, default=str) + "\n")
    stream.flush()


# ---------------------------------------------------------------------------
# dataset IO
# ---------------------------------------------------------------------------


def _bvh_paths(inputs):
    paths = []
    for item in inputs:
        if os.path.isdir(item):
            paths.extend(sorted(glob.glob(os.path.join(item, "*.bvh"))))
        elif os.path.isfile(item):
            paths.append(item)
        else:
            raise DataError(f"no such file or directory: {item}")
    if not paths:
        raise DataError("no BVH files found")
    return paths


def _manifest_labels(directory):
    path = os.path.join(directory, MANIFEST)
    if not os.path.isfile(path):
        return {}
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    return {e["file"]: e.get("label") for e in doc.get("sequences", [])}


def _canonical_motion(skel, motion, joint_map=None):
    if sk.is_canonical(skel):
        return motion.with_(skeleton=sk.canonical_skeleton())
    if joint_map is None:
        missing = [n for n in sk.CANONICAL_JOINTS if n not in skel.names]
        if missing:
            raise DataError(f"skeleton is not canonical and no joint map was given (missing {', '.join(missing)})")
        joint_map = {n: n for n in sk.CANONICAL_JOINTS}
    return sk.retarget_to_canonical(skel, motion, joint_map)


def load_dataset(inputs, joint_map=None, normalize=True):
    """Canonical, normalised motions from BVH files or directories (labels from manifest.json)."""
    out = []
    labels = {}
    for item in inputs:
        if os.path.isdir(item):
            labels.update({os.path.join(item, k): v for k, v in _manifest_labels(item).items()})
    for path in _bvh_paths(inputs):
        skel, motion = bvh.read_bvh_file(path, label=labels.get(path))
        motion = _canonical_motion(skel, motion, joint_map)
        out.append(sk.normalize_motion(motion) if normalize else motion)
    return out


def write_dataset(motions, out_dir, names=None):
    os.makedirs(out_dir, exist_ok=True)
    entries = []
    for i, m in enumerate(motions):
        name = names[i] if names else f"seq_{i:05d}.bvh"
        bvh.write_bvh_file(os.path.join(out_dir, name), m.skeleton, m)
        entries.append({"file": name, "label": m.label, "source": m.source, "frames": m.n_frames, "fps": m.fps})
    with open(os.path.join(out_dir, MANIFEST), "w", encoding="utf-8") as fh:
        json.dump({"sequences": entries}, fh, indent=1)
    return entries


def _read_json(path):
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------


def _file_config(path, command):
    if not path:
        return {}
    doc = _read_json(path)
    if not isinstance(doc, dict):
        raise DataError("config file must hold a JSON object")
    flat = {k: v for k, v in doc.items() if not isinstance(v, dict) or k == "loss"}
    flat.update(doc.get(command, {}))
    return flat


def _resolve(defaults, file_cfg, args, keys):
    cfg = dict(defaults)
    for k, v in file_cfg.items():
        if k not in keys:
            raise DataError(f"unknown config key {k!r}")
        cfg[k] = v
    for k in keys:
        v = getattr(args, k, None)
        # empty positional lists mean "not given"
        if v is not None and v != []:
            cfg[k] = v
    return cfg


_COMMON = {"seed": 0}

_DEFAULTS = {
    "ingest": {"inputs": [], "out": None, "fps": sk.TARGET_FPS, "max_frames": sk.MAX_FRAMES, "joint_map": None, "label": None},
    "train-codec": {
        "data": [], "out": None, "history": None,
        **{f.name: f.default for f in dataclasses.fields(codec_mod.CodecConfig)},
    },
    "generate": {"input": None, "out": None, "checkpoint": None, "joint_map": None, "noise_mode": None},
    "augment": {"data": [], "codec": None, "target": None, "out": None, "k_start": augment.ClusterSchedule().start,
                "k_increment": augment.ClusterSchedule().increment, "mutate_deg": augment.DEFAULT_MUTATE_DEG},
    "evaluate": {"checkpoint": None, "data": [], "trials": 100, "draws": 2},
    "gradcheck": {"suite": None, "points": selfcheck.POINTS, "max_coords": selfcheck.MAX_COORDS},
    "toy-corpus": {"out": None, "families": 2, "per_family": 100, "frames": 30, "fps": sk.TARGET_FPS},
}

_TRAIN_SKIP = ("loss", "g_dropout")


def _train_defaults():
    cfg = train.TrainConfig().to_dict()
    cfg.update({"data": [], "codec": None, "out": None, "resume": None, "stop_at": None, "profile": "paper",
                "lambda1": cfg["loss"]["lambda1"], "lambda2": cfg["loss"]["lambda2"]})
    return cfg


def _add_common(p):
    p.add_argument("--config", help="JSON config file")
    p.add_argument("--seed", type=int)


def build_parser():
    parser = _Parser(prog="animgan", description="Conditional motion GAN toolkit")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("ingest", help="parse, retarget, resample to 5 fps and trim BVH files")
    _add_common(p)
    p.add_argument("inputs", nargs="*")
    p.add_argument("--out")
    p.add_argument("--fps", type=float)
    p.add_argument("--max-frames", type=int)
    p.add_argument("--joint-map", help="JSON object mapping source joint names to canonical ones")
    p.add_argument("--label")

    p = sub.add_parser("train-codec", help="fit the pose autoencoder")
    _add_common(p)
    p.add_argument("data", nargs="*")
    p.add_argument("--out")
    p.add_argument("--history")
    p.add_argument("--lr", type=float)
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--beta", type=float)
    p.add_argument("--dropout", type=float)

    p = sub.add_parser("train-gan", help="adversarial training with checkpoints and metrics")
    _add_common(p)
    p.add_argument("data", nargs="*")
    p.add_argument("--codec")
    p.add_argument("--out")
    p.add_argument("--resume")
    p.add_argument("--stop-at", type=int)
    p.add_argument("--profile", choices=("paper", "acceptance"))
    p.add_argument("--lambda1", type=float)
    p.add_argument("--lambda2", type=float)
    for f in dataclasses.fields(train.TrainConfig):
        if f.name in _TRAIN_SKIP or f.name == "seed":
            continue
        kind = type(f.default) if f.default is not None else float
        p.add_argument("--" + f.name.replace("_", "-"), type=kind)
    p.add_argument("--g-dropout", type=float)

    p = sub.add_parser("generate", help="generate a conditioned animation from a BVH file")
    _add_common(p)
    p.add_argument("--input")
    p.add_argument("--out")
    p.add_argument("--checkpoint")
    p.add_argument("--joint-map")
    p.add_argument("--noise-mode", choices=("sequence", "frame"))

    p = sub.add_parser("augment", help="cluster-balanced dataset growth")
    _add_common(p)
    p.add_argument("data", nargs="*")
    p.add_argument("--codec")
    p.add_argument("--target", type=int)
    p.add_argument("--out")
    p.add_argument("--k-start", type=int)
    p.add_argument("--k-increment", type=int)
    p.add_argument("--mutate-deg", type=float)

    p = sub.add_parser("evaluate", help="conditioning win-rate and discriminator accuracy")
    _add_common(p)
    p.add_argument("--checkpoint")
    p.add_argument("data", nargs="*")
    p.add_argument("--trials", type=int)
    p.add_argument("--draws", type=int)

    p = sub.add_parser("gradcheck", help="finite-difference gradient suites")
    _add_common(p)
    p.add_argument("--suite", choices=sorted(selfcheck.SUITES))
    p.add_argument("--points", type=int)
    p.add_argument("--max-coords", type=int)

    p = sub.add_parser("toy-corpus", help="write the procedural toy corpus as BVH files")
    _add_common(p)
    p.add_argument("--out")
    p.add_argument("--families", type=int)
    p.add_argument("--per-family", type=int)
    p.add_argument("--frames", type=int)
    p.add_argument("--fps", type=float)
    return parser


def _require(cfg, *keys):
    for k in keys:
        if cfg.get(k) in (None, [], ""):
            raise UsageError(f"missing required option: {k.replace('_', '-')}")


def resolve_config(args):
    command = args.command
    file_cfg = _file_config(args.config, command)
    if command == "train-gan":
        defaults = _train_defaults()
        profile = file_cfg.get("profile", "paper") if args.profile is None else args.profile
        if profile == "acceptance":
            defaults.update(train.ACCEPTANCE_PROFILE)
        file_loss = dict(file_cfg.pop("loss", {}) or {})
        for k in ("lambda1", "lambda2"):
            if k in file_loss and k not in file_cfg:
                file_cfg[k] = file_loss.pop(k)
            file_loss.pop(k, None)
        cfg = _resolve(defaults, file_cfg, args, [k for k in defaults if k != "loss"])
        loss = dict(cfg["loss"], **file_loss)
        loss["lambda1"], loss["lambda2"] = cfg.pop("lambda1"), cfg.pop("lambda2")
        loss["batch_size"] = cfg["batch_size"]
        cfg["loss"] = loss
        cfg["profile"] = profile
    else:
        defaults = dict(_COMMON, **_DEFAULTS[command])
        cfg = _resolve(defaults, file_cfg, args, list(defaults))
    return cfg


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def _joint_map(path):
    return _read_json(path) if path else None


def cmd_ingest(cfg, out):
    _require(cfg, "inputs", "out")
    jm = _joint_map(cfg["joint_map"])
    paths = _bvh_paths(cfg["inputs"])
    os.makedirs(cfg["out"], exist_ok=True)
    report = []
    for path in paths:
        skel, motion = bvh.read_bvh_file(path, label=cfg["label"])
        motion = _canonical_motion(skel, motion, jm)
        norm = sk.normalize_motion(motion, cfg["fps"], cfg["max_frames"])
        name = os.path.basename(path)
        dest = os.path.join(cfg["out"], name)
        if os.path.abspath(dest) == os.path.abspath(path):
            raise DataError("output would overwrite an input file")
        bvh.write_bvh_file(dest, norm.skeleton, norm)
        report.append({"file": name, "label": norm.label, "in_frames": motion.n_frames, "in_fps": motion.fps,
                       "frames": norm.n_frames, "fps": norm.fps})
    with open(os.path.join(cfg["out"], MANIFEST), "w", encoding="utf-8") as fh:
        json.dump({"sequences": report}, fh, indent=1)
    return {"ingested": len(report), "files": report}


def cmd_train_codec(cfg, out):
    _require(cfg, "data", "out")
    data = load_dataset(cfg["data"])
    poses = np.concatenate([m.rotations for m in data])
    ccfg = codec_mod.CodecConfig(**{f.name: cfg[f.name] for f in dataclasses.fields(codec_mod.CodecConfig)})
    try:
        ccfg.validate()
    except codec_mod.CodecError as exc:
        raise UsageError(f"invalid codec config: {exc}") from exc
    model, history = codec_mod.train_autoencoder(poses, ccfg)
    model.save(cfg["out"])
    if cfg["history"]:
        codec_mod.write_history_jsonl(history, cfg["history"])
    return {"poses": int(len(poses)), "final": history[-1] if history else None, "out": cfg["out"]}


def cmd_train_gan(cfg, out):
    _require(cfg, "out")
    os.makedirs(cfg["out"], exist_ok=True)
    metrics_path = os.path.join(cfg["out"], "metrics.jsonl")
    ckpt_dir = os.path.join(cfg["out"], "checkpoints")
    os.makedirs(ckpt_dir, exist_ok=True)
    resume = load_checkpoint(cfg["resume"]) if cfg["resume"] else None
    try:
        tcfg = train.TrainConfig.from_dict({k: cfg[k] for k in train.TrainConfig().to_dict()}).validate()
    except (train.TrainError, LossError, TypeError) as exc:
        raise UsageError(f"invalid training config: {exc}") from exc
    if resume is None:
        _require(cfg, "data", "codec")
        codec = codec_mod.PoseCodec.load(cfg["codec"])
    else:
        codec = None
        if not cfg["data"]:
            raise UsageError("resuming needs the training data")
    data = load_dataset(cfg["data"])
    try:
        res = train.train_gan(data, tcfg, codec, resume=resume, stop_at=cfg["stop_at"],
                              checkpoint_dir=ckpt_dir, metrics_path=metrics_path)
    except train.TrainingAborted as exc:
        raise NumericFailure(f"{exc} (last good checkpoint at step {getattr(exc.last_checkpoint, 'step', None)})") from exc
    last = res.metrics[-1] if res.metrics else None
    return {"steps": len(res.metrics), "last_step": res.checkpoints[-1].step, "metrics": metrics_path,
            "checkpoints": ckpt_dir, "last": last}


def cmd_generate(cfg, out):
    _require(cfg, "input", "out", "checkpoint")
    ck = load_checkpoint(cfg["checkpoint"])
    tcfg, g, _, codec, _ = train.networks_from_checkpoint(ck)
    skel, motion = bvh.read_bvh_file(cfg["input"])
    motion = sk.normalize_motion(_canonical_motion(skel, motion, _joint_map(cfg["joint_map"])))
    emb = codec.encode(motion.rotations)
    spec = NoiseSpec(cfg["noise_mode"] or tcfg.noise_mode)
    gen = generate(g, emb, seed=cfg["seed"], spec=spec, fps=motion.fps, label=motion.label)
    if not np.all(np.isfinite(gen.rotations)):
        raise NumericFailure("generator produced non-finite rotations")
    if os.path.abspath(cfg["out"]) == os.path.abspath(cfg["input"]):
        raise DataError("output would overwrite the input file")
    bvh.write_bvh_file(cfg["out"], gen.skeleton, gen)
    return {"frames": gen.n_frames, "fps": gen.fps, "out": cfg["out"]}


def cmd_augment(cfg, out):
    _require(cfg, "data", "codec", "target", "out")
    data = load_dataset(cfg["data"])
    codec = codec_mod.PoseCodec.load(cfg["codec"])
    schedule = augment.ClusterSchedule(cfg["k_start"], cfg["k_increment"])
    result = augment.balance_dataset(data, codec, cfg["target"], seed=cfg["seed"], schedule=schedule,
                                     mutate_deg=cfg["mutate_deg"])
    augment.write_augmented(result, cfg["out"])
    counts = {}
    for m in result.sequences:
        counts[str(m.label)] = counts.get(str(m.label), 0) + 1
    return {"sequences": len(result.sequences), "added": len(result.sequences) - len(data), "labels": counts}


def cmd_evaluate(cfg, out):
    _require(cfg, "checkpoint", "data")
    ck = load_checkpoint(cfg["checkpoint"])
    data = load_dataset(cfg["data"])
    report = train.evaluate(ck, data, cfg["trials"], cfg["seed"], n_draws=cfg["draws"])
    report["discriminator"] = train.discriminator_accuracy(ck, data, cfg["seed"])
    return report


def cmd_gradcheck(cfg, out):
    names = [cfg["suite"]] if cfg["suite"] else list(selfcheck.SUITES)
    results = [selfcheck.run_suite(n, cfg["seed"], cfg["points"], cfg["max_coords"]) for n in names]
    for r in results:
        out.write(json.dumps(r.to_dict(), sort_keys=True) + "\n")
    failed = [r.name for r in results if not r.passed]
    if failed:
        raise NumericFailure(f"gradient suites failed: {', '.join(failed)}")
    return {"suites": len(results), "passed": True}


def cmd_toy_corpus(cfg, out):
    _require(cfg, "out")
    data = make_toy_corpus(cfg["families"], cfg["per_family"], cfg["frames"], cfg["seed"], cfg["fps"])
    entries = write_dataset(data, cfg["out"])
    return {"sequences": len(entries), "labels": sorted({e["label"] for e in entries})}


COMMANDS = {
    "ingest": cmd_ingest,
    "train-codec": cmd_train_codec,
    "train-gan": cmd_train_gan,
    "generate": cmd_generate,
    "augment": cmd_augment,
    "evaluate": cmd_evaluate,
    "gradcheck": cmd_gradcheck,
    "toy-corpus": cmd_toy_corpus,
}


def run(argv=None, out=None, err=None):
    """Run one command; returns the exit code."""
    out = out or sys.stdout
    err = err or sys.stderr
    try:
        args = build_parser().parse_args(argv)
        if not args.command:
            raise UsageError("a subcommand is required: " + ", ".join(COMMANDS))
        cfg = resolve_config(args)
        out.write(json.dumps({"command": args.command, "config": cfg}, sort_keys=True, default=str) + "\n")
        out.flush()
        result = COMMANDS[args.command](cfg, out)
        out.write(json.dumps({"result": result}, sort_keys=True, default=str) + "\n")
        return EXIT_OK
    except UsageError as exc:
        _diag(err, "error", code=EXIT_USAGE, kind="usage", message=str(exc))
        return EXIT_USAGE
    except _NUMERIC_ERRORS as exc:
        _diag(err, "error", code=EXIT_NUMERIC, kind="numeric", error=type(exc).__name__, message=str(exc))
        return EXIT_NUMERIC
    except _DATA_ERRORS as exc:
        _diag(err, "error", code=EXIT_DATA, kind="data", error=type(exc).__name__, message=str(exc))
        return EXIT_DATA
    except (TypeError, ValueError) as exc:
        # invalid values that slipped past the parser (bad config file entries and the like)
        _diag(err, "error", code=EXIT_USAGE, kind="usage", error=type(exc).__name__, message=str(exc))
        return EXIT_USAGE


def main(argv=None):
    sys.exit(run(argv))


if __name__ == "__main__":
    main()
