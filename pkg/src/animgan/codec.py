"""L1-sparse autoencoder: 84 quaternion components <-> 20-D pose embedding."""

import json
from dataclasses import asdict, dataclass, field

import numpy as np

from . import ndl
from .ndl import ops

__all__ = [
    "CodecConfig",
    "PoseCodec",
    "CodecError",
    "train_autoencoder",
    "encode",
    "decode",
    "EMBED_DIM",
    "POSE_DIM",
]

POSE_DIM = 84
EMBED_DIM = 20
HIDDEN = 48
FORMAT_VERSION = 1
SPARSE_EPS = 1e-3
FULL_BATCH_LIMIT = 4096


class CodecError(ValueError):
    pass


@dataclass
class CodecConfig:
    lr: float = 1e-4
    epochs: int = 100
    batch_size: int = 0  # 0: full batch up to FULL_BATCH_LIMIT poses
    beta: float = 1e-3
    dropout: float = 0.5
    seed: int = 0

    def validate(self):
        if not self.lr > 0:
            raise CodecError("learning rate must be positive")
        if self.epochs < 1:
            raise CodecError("epochs must be >= 1")
        if self.batch_size < 0:
            raise CodecError("batch size must be non-negative")
        if self.beta < 0:
            raise CodecError("beta must be non-negative")
        if not 0 <= self.dropout < 1:
            raise CodecError("dropout must lie in [0, 1)")


class _Net(ndl.Module):
    def __init__(self, rng=None, hidden=HIDDEN):
        self.enc1 = ndl.Dense(POSE_DIM, hidden, rng)
        self.enc2 = ndl.Dense(hidden, EMBED_DIM, rng)
        self.dec1 = ndl.Dense(EMBED_DIM, hidden, rng)
        self.dec2 = ndl.Dense(hidden, POSE_DIM, rng)

    def encode(self, x, rate=0.0, rng=None, training=False):
        h = ops.dropout(ops.leaky_relu(self.enc1(x)), rate, rng, training)
        return self.enc2(h)

    def decode(self, z, rate=0.0, rng=None, training=False):
        h = ops.dropout(ops.leaky_relu(self.dec1(z)), rate, rng, training)
        return self.dec2(h)


@dataclass
class PoseCodec:
    """Autoencoder parameters plus training metadata."""

    net: _Net = field(default_factory=_Net)
    beta: float = 1e-3
    trained: bool = False
    metadata: dict = field(default_factory=dict)

    def _require_trained(self):
        if not self.trained:
            raise CodecError("codec has not been trained")

    def encode(self, poses):
        return encode(self, poses)

    def decode(self, embeddings):
        return decode(self, embeddings)

    def to_dict(self):
        layers = [
            {"name": name, "shape": list(arr.shape), "values": arr.reshape(-1).tolist()}
            for name, arr in self.net.state_dict().items()
        ]
        return {
            "format": "animgan-codec",
            "version": FORMAT_VERSION,
            "beta": self.beta,
            "trained": self.trained,
            "metadata": self.metadata,
            "layers": layers,
        }

    @classmethod
    def from_dict(cls, d):
        if d.get("format") != "animgan-codec" or d.get("version") != FORMAT_VERSION:
            raise CodecError("not a codec record of a supported version")
        state = {l["name"]: np.asarray(l["values"], dtype=np.float64).reshape(l["shape"]) for l in d["layers"]}
        hidden = state["enc1.weight"].shape[1]
        net = _Net(hidden=hidden)
        net.load_state_dict(state)
        return cls(net=net, beta=float(d["beta"]), trained=bool(d["trained"]), metadata=dict(d["metadata"]))

    def save(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh)

    @classmethod
    def load(cls, path):
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))


def _flatten_poses(poses):
    arr = np.asarray(poses, dtype=np.float64)
    if arr.shape[-2:] != (21, 4):
        raise CodecError(f"poses must end with shape (21, 4), got {arr.shape}")
    return arr.reshape(arr.shape[:-2] + (POSE_DIM,))


def encode(model, poses):
    """Embed one pose (21, 4) or a batch (..., 21, 4); returns (..., 20)."""
    model._require_trained()
    x = _flatten_poses(poses)
    return model.net.encode(ndl.Tensor(x)).data


def decode(model, embeddings):
    """Map (..., 20) embeddings to unit quaternions (..., 21, 4) with w >= 0."""
    model._require_trained()
    z = np.asarray(embeddings, dtype=np.float64)
    if z.shape[-1] != EMBED_DIM:
        raise CodecError(f"embeddings must have {EMBED_DIM} components")
    if not np.all(np.isfinite(z)):
        raise CodecError("non-finite embedding")
    raw = model.net.decode(ndl.Tensor(z)).data
    return ops.quat_normalize(raw.reshape(z.shape[:-1] + (21, 4))).data


def reconstruction_loss(net, x, beta, rate=0.0, rng=None, training=False):
    """Mean squared reconstruction error plus beta times the mean L1 norm of the code.

    Returns ``(objective, mse, code)``.
    """
    z = net.encode(x, rate, rng, training)
    out = net.decode(z, rate, rng, training)
    mse = ops.mean(ops.square(out - x))
    if beta == 0:
        return mse, mse, z
    l1 = ops.mean(ops.sum(ops.abs(z), axis=-1))
    return mse + beta * l1, mse, z


def train_autoencoder(poses, config=None, init=None):
    """Fit the codec; returns ``(PoseCodec, history)``.

    Each epoch is one pass over the shuffled corpus with Adam updates;
    ``history`` holds the dropout-free objective on the whole corpus after
    each epoch together with the fraction of near-zero code entries.
    """
    config = config or CodecConfig()
    config.validate()
    x_all = _flatten_poses(poses).reshape(-1, POSE_DIM)
    if len(x_all) == 0:
        raise CodecError("empty pose corpus")
    rng = np.random.default_rng(config.seed)
    net = init if init is not None else _Net(rng)
    opt = ndl.Adam(net.parameters(), base_lr=config.lr)
    n = len(x_all)
    bs = config.batch_size or min(n, FULL_BATCH_LIMIT)
    history = []
    x_full = ndl.Tensor(x_all)
    for epoch in range(config.epochs):
        order = rng.permutation(n) if bs < n else np.arange(n)
        for start in range(0, n, bs):
            xb = ndl.Tensor(x_all[order[start:start + bs]])
            net.zero_grad()
            with ndl.Tape() as tape:
                loss, _, _ = reconstruction_loss(net, xb, config.beta, config.dropout, rng, training=True)
            tape.backward(loss)
            opt.step()
        loss, mse, z = reconstruction_loss(net, x_full, config.beta)
        history.append(
            {
                "epoch": epoch,
                "loss": float(loss.data),
                "mse": float(mse.data),
                "sparsity": float(np.mean(np.abs(z.data) < SPARSE_EPS)),
            }
        )
    model = PoseCodec(
        net=net,
        beta=config.beta,
        trained=True,
        metadata={"epochs": config.epochs, "final_loss": history[-1]["loss"], "config": asdict(config), "n_poses": n},
    )
    return model, history


def write_history_jsonl(history, path):
    with open(path, "w", encoding="utf-8") as fh:
        for row in history:
            fh.write(json.dumps(row) + "\n")
