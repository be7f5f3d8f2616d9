"""Adversarial training loop, checkpoints, metrics and evaluation."""

import json
import logging
import math
import os
from dataclasses import asdict, dataclass, field, fields
from statistics import NormalDist

import numpy as np
from sklearn.metrics import roc_auc_score

from . import augment, ndl, stnbnn
from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .codec import PoseCodec
from .discriminator import DiscriminatorNet
from .generator import GeneratorNet, NoiseSpec, sample_noise
from .losses import LossConfig, batch_st_loss, discriminator_loss, generator_loss, phi
from .ndl import ops
from .skeleton import TARGET_FPS, canonical_skeleton, sequence_positions
from .toy import make_toy_corpus

__all__ = [
    "TrainConfig",
    "TrainError",
    "TrainingAborted",
    "TrainResult",
    "make_toy_corpus",
    "prepare_dataset",
    "train_gan",
    "evaluate",
    "discriminator_accuracy",
    "build_networks",
    "cross_validate_lambdas",
    "write_metrics_jsonl",
    "STREAMS",
    "ACCEPTANCE_PROFILE",
    "ACCEPTANCE_CODEC",
]

log = logging.getLogger(__name__)

# named random substreams, each derived from (config seed, stream id, step or epoch)
STREAMS = {"noise": 1, "dropout": 2, "augmentation": 3, "batching": 4, "init": 5, "eval": 6}


class TrainError(ValueError):
    pass


class TrainingAborted(RuntimeError):
    """A loss or gradient became non-finite; ``last_checkpoint`` is the last good state."""

    def __init__(self, message, last_checkpoint=None, step=None):
        super().__init__(message)
        self.last_checkpoint = last_checkpoint
        self.step = step


@dataclass
class TrainConfig:
    batch_size: int = 8
    total_steps: int = 500
    g_lr: float = 0.1
    g_beta1: float = 0.9
    d_lr: float = 0.01
    d_decay: float = 0.9
    d_decay_every: int = 10
    dropout: float = 0.5
    g_dropout: float = None  # None: same as ``dropout``
    real_label: float = 0.9
    loss: LossConfig = field(default_factory=LossConfig)
    seed: int = 0
    seq_len: int = 30
    fps: float = TARGET_FPS
    hidden: int = 64
    noise_mode: str = "sequence"
    hard_negative_every: int = 5
    hard_negative_frac: float = 0.25
    # "append": hard negatives join the fake half; "displace": they replace part of it
    hard_negative_mode: str = "append"
    d_steps_per_g: int = 1
    checkpoint_every: int = 100
    selector: str = "stnbnn"  # or "energy"
    main_joints: int = stnbnn.DEFAULT_J
    stages: int = stnbnn.DEFAULT_T

    def __post_init__(self):
        if isinstance(self.loss, dict):
            self.loss = LossConfig(**self.loss)
        self.loss.batch_size = self.batch_size

    def validate(self):
        for name in ("g_lr", "d_lr", "d_decay", "fps"):
            if not getattr(self, name) > 0:
                raise TrainError(f"{name} must be positive")
        if not 0.5 < self.real_label <= 1.0:
            raise TrainError("real label must lie in (0.5, 1]")
        if self.batch_size < 1 or self.total_steps < 0 or self.seq_len < 4:
            raise TrainError("batch size >= 1, total steps >= 0 and sequence length >= 4 required")
        if not 0 <= self.dropout < 1 or not 0 <= self.generator_dropout < 1:
            raise TrainError("dropout must lie in [0, 1)")
        if self.selector not in ("stnbnn", "energy"):
            raise TrainError(f"unknown selector {self.selector!r}")
        if self.hard_negative_every < 1 or not 0 < self.hard_negative_frac <= 1:
            raise TrainError("bad hard-negative cadence")
        if self.hard_negative_mode not in ("append", "displace"):
            raise TrainError(f"unknown hard-negative mode {self.hard_negative_mode!r}")
        if self.d_steps_per_g < 1 or self.checkpoint_every < 1:
            raise TrainError("d_steps_per_g and checkpoint_every must be >= 1")
        NoiseSpec(self.noise_mode)
        return self

    @property
    def generator_dropout(self):
        return self.dropout if self.g_dropout is None else self.g_dropout

    def to_dict(self):
        d = asdict(self)
        d["loss"] = asdict(self.loss)
        return d

    @classmethod
    def from_dict(cls, d):
        names = {f.name for f in fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise TrainError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)


# Settings used by the desk-scale acceptance run.  Paper values stay the
# defaults; see the project notes for why each of these differs.
ACCEPTANCE_PROFILE = {
    "g_lr": 0.01,
    "g_dropout": 0.0,
    "dropout": 0.0,
    "d_lr": 0.003,
    "hard_negative_every": 1,
    "hard_negative_frac": 0.75,
    "hard_negative_mode": "displace",
}

# pose codec settings for the same run
ACCEPTANCE_CODEC = {"lr": 3e-3, "epochs": 100, "dropout": 0.0}


def _stream(seed, name, index):
    return np.random.default_rng([seed, STREAMS[name], index])


# ---------------------------------------------------------------------------
# data preparation
# ---------------------------------------------------------------------------


@dataclass
class PreparedData:
    rotations: np.ndarray  # (N, k, 21, 4)
    positions: np.ndarray  # (N, k, 21, 3)
    embeddings: np.ndarray  # (N, k, 20)
    labels: list
    mains: list  # per-sequence main joint tuples
    selector: object = None

    @property
    def n(self):
        return len(self.rotations)


def _can_train_selector(labels):
    if any(l is None for l in labels):
        return False
    counts = {}
    for l in labels:
        counts[l] = counts.get(l, 0) + 1
    return len(counts) >= 2 and min(counts.values()) >= 2


def prepare_dataset(dataset, codec, k, selector="stnbnn", J=stnbnn.DEFAULT_J, T=stnbnn.DEFAULT_T, selector_model=None):
    """Crop sequences to ``k`` frames, embed them and pick main joints."""
    dataset = list(dataset)
    if not dataset:
        raise TrainError("empty dataset")
    short = [i for i, m in enumerate(dataset) if m.n_frames < k]
    if short:
        raise TrainError(f"{len(short)} sequence(s) shorter than {k} frames")
    rot = np.stack([m.rotations[:k] for m in dataset])
    pos = sequence_positions(rot)
    emb = codec.encode(rot)
    labels = [m.label for m in dataset]
    model = selector_model
    if model is None and selector == "stnbnn" and _can_train_selector(labels):
        model = stnbnn.train_stnbnn(list(pos), labels, T=T, J=J)
    if model is not None:
        mains = [stnbnn.main_joints(model, p, J) for p in pos]
    else:
        if selector == "stnbnn":
            log.info("labels unusable for the selector; falling back to motion energy")
        mains = [stnbnn.motion_energy_joints(p, J) for p in pos]
    return PreparedData(rot, pos, emb, labels, mains, model)


# ---------------------------------------------------------------------------
# networks and state
# ---------------------------------------------------------------------------


def build_networks(config):
    rng = _stream(config.seed, "init", 0)
    g = GeneratorNet(config.hidden, rng, config.generator_dropout)
    d = DiscriminatorNet(canonical_skeleton(), rng, config.dropout)
    return g, d


def _optimizers(config, g, d):
    opt_g = ndl.Adam(g.parameters(), base_lr=config.g_lr, total_steps=config.total_steps, beta1=config.g_beta1)
    opt_d = ndl.SGD(d.parameters(), base_lr=config.d_lr, factor=config.d_decay, every=config.d_decay_every)
    return opt_g, opt_d


def _snapshot(step, config, g, d, opt_g, opt_d, codec, selector, cursor):
    return Checkpoint(
        step=step,
        config=config.to_dict(),
        generator=g.state_dict(),
        discriminator=d.state_dict(),
        optimizer_g=_copy_state(opt_g.state_dict()),
        optimizer_d=_copy_state(opt_d.state_dict()),
        codec=codec.to_dict(),
        selector=None if selector is None else selector.to_arrays(),
        metrics_cursor=cursor,
    )


def _copy_state(state):
    return dict(state, arrays={k: np.array(v) for k, v in state["arrays"].items()})


def networks_from_checkpoint(ckpt):
    config = TrainConfig.from_dict(ckpt.config)
    g = GeneratorNet(config.hidden, None, config.generator_dropout)
    d = DiscriminatorNet(canonical_skeleton(), None, config.dropout)
    g.load_state_dict(ckpt.generator)
    d.load_state_dict(ckpt.discriminator)
    codec = PoseCodec.from_dict(ckpt.codec)
    selector = None if ckpt.selector is None else stnbnn.StnbnnModel.from_arrays(*ckpt.selector)
    return config, g, d, codec, selector


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------


@dataclass
class TrainResult:
    checkpoints: list
    metrics: list
    generator: GeneratorNet
    discriminator: DiscriminatorNet
    codec: PoseCodec
    selector: object
    data: PreparedData


def _fk(q):
    return sequence_positions(q)


def _diversity(codec, rotations):
    """Mean pairwise distance between the mean embeddings of a batch of sequences."""
    emb = codec.encode(rotations).mean(axis=1)
    n = len(emb)
    if n < 2:
        return 0.0
    d = np.linalg.norm(emb[:, None] - emb[None], axis=-1)
    return float(d[np.triu_indices(n, 1)].mean())


def _finite(row):
    return all(np.isfinite(v) for v in row.values() if isinstance(v, float))


def write_metrics_jsonl(rows, path, keep=0):
    """Write ``rows`` after keeping the first ``keep`` lines already in ``path``."""
    kept = []
    if keep and os.path.exists(path):
        with open(path, encoding="utf-8") as fh:
            kept = fh.readlines()[:keep]
    with open(path, "w", encoding="utf-8") as fh:
        fh.writelines(kept)
        for row in rows:
            fh.write(json.dumps(row) + "\n")


def train_gan(
    dataset,
    config=None,
    codec=None,
    resume=None,
    stop_at=None,
    checkpoint_dir=None,
    metrics_path=None,
    data=None,
):
    """Alternate one discriminator step (or ``d_steps_per_g``) and one generator step.

    Returns a :class:`TrainResult` with every checkpoint taken (step 0, every
    ``checkpoint_every`` steps, and the last step) and one metrics row per
    step.  ``resume`` continues from a :class:`Checkpoint`; ``stop_at`` ends
    the run early without changing the schedules.
    """
    if resume is not None:
        config, g, d, codec, selector = networks_from_checkpoint(resume)
        start = resume.step
        cursor = resume.metrics_cursor
    else:
        config = config or TrainConfig()
        if codec is None or not codec.trained:
            raise TrainError("a trained codec is required")
        g, d = build_networks(config)
        selector = None
        start = 0
        cursor = 0
    config.validate()
    if data is None:
        data = prepare_dataset(
            dataset, codec, config.seq_len, config.selector, config.main_joints, config.stages,
            selector_model=selector if resume is not None else None,
        )
    selector = data.selector
    opt_g, opt_d = _optimizers(config, g, d)
    if resume is not None:
        opt_g.load_state_dict(resume.optimizer_g)
        opt_d.load_state_dict(resume.optimizer_d)

    m = min(config.batch_size, data.n)
    steps_per_epoch = max(1, data.n // m)
    n_hard = max(1, int(round(config.hard_negative_frac * m)))
    spec = NoiseSpec(config.noise_mode)
    lc = config.loss
    skel = canonical_skeleton()

    checkpoints = []
    metrics = []
    if resume is None:
        checkpoints.append(_snapshot(0, config, g, d, opt_g, opt_d, codec, selector, 0))
        if checkpoint_dir:
            save_checkpoint(checkpoints[-1], os.path.join(checkpoint_dir, "ckpt_000000.bin"))
    last_good = checkpoints[-1] if checkpoints else resume
    end = config.total_steps if stop_at is None else min(stop_at, config.total_steps)
    perm_epoch, perm = None, None

    for step in range(start, end):
        epoch = step // steps_per_epoch
        if epoch != perm_epoch:
            perm = _stream(config.seed, "batching", epoch).permutation(data.n)
            perm_epoch = epoch
        b = step % steps_per_epoch
        idx = perm[b * m:(b + 1) * m]
        rng_noise = _stream(config.seed, "noise", step)
        rng_drop = _stream(config.seed, "dropout", step)
        rng_aug = _stream(config.seed, "augmentation", step)
        x_emb = data.embeddings[idx]
        real_pos = data.positions[idx]
        mains = [data.mains[i] for i in idx]
        try:
            # discriminator
            for _ in range(config.d_steps_per_g):
                z = sample_noise(rng_noise, m, config.seq_len, spec)
                fake_q = g(x_emb, z, rng_drop, training=True).data
                fake_pos = _fk(fake_q)
                neg_items = rng_aug.choice(m, size=n_hard, replace=False)
                kinds = rng_aug.integers(len(augment.HARD_NEGATIVE_KINDS), size=n_hard)
                neg_q = np.stack([
                    augment.hard_negative_rotations(data.rotations[idx[i]], augment.HARD_NEGATIVE_KINDS[kk], rng_aug)
                    for i, kk in zip(neg_items, kinds)
                ])
                neg_pos = _fk(neg_q)
                inject = step % config.hard_negative_every == 0
                all_pos = np.concatenate([real_pos, fake_pos, neg_pos])
                all_cond = np.concatenate([x_emb, x_emb, x_emb[neg_items]])
                d.zero_grad()
                with ndl.Tape() as tape:
                    scores = d(all_pos, all_cond, rng_drop, training=True)
                    s_real = ops.getitem(scores, slice(0, m))
                    s_fake = ops.getitem(scores, slice(m, 2 * m))
                    s_neg = ops.getitem(scores, slice(2 * m, None))
                    if not inject:
                        negatives = s_fake
                    elif config.hard_negative_mode == "displace":
                        # both sides keep m items, so real scores stay above 0.5 once fakes look real
                        negatives = ops.concat([ops.getitem(s_fake, slice(0, m - n_hard)), s_neg], axis=0)
                    else:
                        negatives = ops.concat([s_fake, s_neg], axis=0)
                    loss_d = discriminator_loss(s_real, negatives, config.real_label, lc)
                tape.backward(loss_d)
                opt_d.step(epoch)
                d.zero_grad()
            sc = scores.data
            # generator
            z = sample_noise(rng_noise, m, config.seq_len, spec)
            g.zero_grad()
            with ndl.Tape() as tape:
                q = g(x_emb, z, rng_drop, training=True)
                pos = ops.forward_kinematics(q, skel)
                s_gen = d(pos, x_emb, rng_drop, training=True)
                st_total, _ = batch_st_loss(real_pos, pos, mains, config.fps, lc)
                loss_g = generator_loss(s_gen, st_total, lc)
            tape.backward(loss_g)
            opt_g.step()
            g.zero_grad()
            d.zero_grad()
        except ndl.NonFiniteError as exc:
            raise TrainingAborted(f"step {step}: {exc}", last_good, step) from exc

        gen_q = q.data
        row = {
            "step": step,
            "epoch": epoch,
            "loss_g": float(loss_g.data),
            "loss_d": float(loss_d.data),
            "loss_st": float(st_total.data),
            "d_acc_real": float(np.mean(sc[:m] > 0.5)),
            "d_acc_fake": float(np.mean(sc[m:2 * m] < 0.5)),
            "d_acc_hard": float(np.mean(sc[2 * m:] < 0.5)),
            "hard_injected": bool(inject),
            "phi_mean": float(np.mean(phi(real_pos, pos.data, mains, config.fps))),
            "diversity": _diversity(codec, gen_q),
            "lr_g": float(opt_g.lr(step)),
            "lr_d": float(opt_d.lr(epoch)),
        }
        if not _finite(row):
            raise TrainingAborted(f"step {step}: non-finite metrics", last_good, step)
        metrics.append(row)
        done = step + 1
        if done % config.checkpoint_every == 0 or done == end:
            ck = _snapshot(done, config, g, d, opt_g, opt_d, codec, selector, cursor + len(metrics))
            checkpoints.append(ck)
            last_good = ck
            if checkpoint_dir:
                save_checkpoint(ck, os.path.join(checkpoint_dir, f"ckpt_{done:06d}.bin"))
    if metrics_path:
        write_metrics_jsonl(metrics, metrics_path, keep=cursor)
    return TrainResult(checkpoints, metrics, g, d, codec, selector, data)


# ---------------------------------------------------------------------------
# evaluation
# ---------------------------------------------------------------------------


def _load(source):
    if isinstance(source, str):
        source = load_checkpoint(source)
    if isinstance(source, TrainResult):
        return TrainConfig.from_dict(source.checkpoints[-1].config), source.generator, source.discriminator, source.codec, source.selector
    if isinstance(source, Checkpoint):
        return networks_from_checkpoint(source)
    raise TrainError("expected a checkpoint, a checkpoint path or a training result")


_Z95 = NormalDist().inv_cdf(0.975)


def wilson_interval(wins, n, z=_Z95):
    if n == 0:
        return (0.0, 1.0)
    p = wins / n
    denom = 1 + z * z / n
    centre = (p + z * z / (2 * n)) / denom
    half = z * math.sqrt(p * (1 - p) / n + z * z / (4 * n * n)) / denom
    return (max(0.0, centre - half), min(1.0, centre + half))


def evaluate(source, eval_dataset, trials=100, seed=0, generator_fn=None, selector="auto", n_draws=2):
    """Conditioning proxy: does the generated sample beat a cross-family real?

    For each trial an input x is drawn from ``eval_dataset``; the generated
    sample wins if phi(x, generated) < phi(x, r) for a real r of a different
    family (ties count one half).  ``generator_fn(motion, rng)`` may replace
    the trained generator; it must return (k, 21, 4) rotations.
    """
    eval_dataset = list(eval_dataset)
    if not eval_dataset:
        raise TrainError("empty evaluation set")
    if trials < 1:
        raise TrainError("need at least one trial")
    config, g, _, codec, sel_model = _load(source) if source is not None else (TrainConfig(), None, None, None, None)
    if selector != "auto":
        sel_model = selector
    labels = [m.label for m in eval_dataset]
    if len(set(labels)) < 2:
        raise TrainError("evaluation needs at least two families")
    pos_cache = {}

    def positions(i):
        if i not in pos_cache:
            pos_cache[i] = sequence_positions(eval_dataset[i])
        return pos_cache[i]

    spec = NoiseSpec(config.noise_mode)
    wins = 0.0
    phis_gen, phis_cross, divs = [], [], []
    for t in range(trials):
        rng = _stream(seed, "eval", t)
        i = int(rng.integers(len(eval_dataset)))
        x = eval_dataset[i]
        others = [j for j, l in enumerate(labels) if l != x.label]
        r = others[int(rng.integers(len(others)))]
        px = positions(i)
        if generator_fn is not None:
            draws = [np.asarray(generator_fn(x, rng)) for _ in range(n_draws)]
        else:
            emb = codec.encode(x.rotations)[None]
            draws = [g(emb, sample_noise(rng, 1, x.n_frames, spec), None, False).data[0] for _ in range(n_draws)]
        py = sequence_positions(draws[0])
        main = stnbnn.select_main_joints(px, sel_model, config.main_joints)
        f_gen = phi(px, py, main, x.fps)
        f_cross = phi(px, positions(r), main, x.fps)
        wins += 1.0 if f_gen < f_cross else (0.5 if f_gen == f_cross else 0.0)
        phis_gen.append(f_gen)
        phis_cross.append(f_cross)
        if n_draws > 1 and codec is not None:
            divs.append(_diversity(codec, np.stack(draws)))
    lo, hi = wilson_interval(wins, trials)
    return {
        "trials": trials,
        "win_rate": wins / trials,
        "ci95": [lo, hi],
        "phi_generated_mean": float(np.mean(phis_gen)),
        "phi_cross_mean": float(np.mean(phis_cross)),
        "diversity": float(np.mean(divs)) if divs else 0.0,
    }


def discriminator_accuracy(source, dataset, seed=0, kinds=augment.HARD_NEGATIVE_KINDS):
    """Inference-mode accuracy of D on real sequences and on their hard negatives."""
    config, _, d, codec, _ = _load(source)
    dataset = list(dataset)
    rot = np.stack([m.rotations[:config.seq_len] for m in dataset])
    emb = codec.encode(rot)
    rng = _stream(seed, "eval", 10 ** 6)
    real = d(sequence_positions(rot), emb, None, False).data
    out = {"real": float(np.mean(real > 0.5))}
    hard = []
    for kind in kinds:
        neg = np.stack([augment.hard_negative_rotations(q, kind, rng) for q in rot])
        s = d(sequence_positions(neg), emb, None, False).data
        out[kind] = float(np.mean(s < 0.5))
        hard.append(s)
    hard = np.concatenate(hard)
    out["hard_negatives"] = float(np.mean(hard < 0.5))
    # balanced accuracy over the real and hard-negative sets
    out["real_vs_hard"] = 0.5 * (out["real"] + out["hard_negatives"])
    # threshold-free: probability a real outscores a hard negative
    y = np.r_[np.ones(len(real)), np.zeros(len(hard))]
    out["real_vs_hard_auc"] = float(roc_auc_score(y, np.r_[real, hard]))
    return out


# ---------------------------------------------------------------------------
# lambda selection
# ---------------------------------------------------------------------------


def cross_validate_lambdas(dataset, codec, config=None, grid=(0.0, 0.25, 0.5, 0.75, 1.0), val_frac=0.2, trials=50, seed=0):
    """Grid search of (lambda1, lambda2) scored by validation win-rate.

    Returns ``(best (l1, l2), {(l1, l2): win_rate})``; ties go to the first
    grid point in row-major order.
    """
    config = config or TrainConfig()
    dataset = list(dataset)
    order = np.random.default_rng([seed, STREAMS["batching"], 10 ** 6]).permutation(len(dataset))
    n_val = max(2, int(round(val_frac * len(dataset))))
    val = [dataset[i] for i in order[:n_val]]
    train = [dataset[i] for i in order[n_val:]]
    scores = {}
    for l1 in grid:
        for l2 in grid:
            cfg = TrainConfig.from_dict(dict(config.to_dict(), loss=dict(asdict(config.loss), lambda1=l1, lambda2=l2)))
            res = train_gan(train, cfg, codec)
            scores[(l1, l2)] = evaluate(res, val, trials, seed)["win_rate"]
    best = max(scores, key=lambda k: (scores[k], -list(scores).index(k)))
    return best, scores
