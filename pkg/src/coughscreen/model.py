"""Three-branch ensemble network: assembly, training with seeded repeats,
serialization, and single-clip prediction.

The MFCC and clinical branches are small dense stacks with dropout; the
mel-image branch is three conv/pool/batchnorm/ReLU blocks; branch outputs
are concatenated into a two-layer head with a sigmoid output.
"""

from __future__ import annotations

import copy
import json
import struct
import zlib
from dataclasses import asdict, dataclass, field

import numpy as np

from . import nn
from .audio_io import AudioClip
from .dataset import POSITIVE, SampleRecord, SplitSpec, split
from .dsp import IMAGE_SIZE, N_MFCC, FeatureVector, extract_features
from .evaluation import auc

MODEL_MAGIC = b"CGHM"
MODEL_FORMAT_VERSION = 1
LIB_VERSION = "0.1.0"

DEFAULT_SEEDS = (11, 22, 33, 44, 55)

# Spatial sizes through the image branch under valid padding:
# conv k3 s2, pool, conv k3 s1, pool, conv k3 s1, pool.
IMAGE_CHAIN = (64, 31, 15, 13, 6, 4, 2)


class ModelError(Exception):
    pass


class InvalidArch(ModelError):
    pass


class VersionMismatch(ModelError):
    pass


class CorruptFile(ModelError):
    pass


class NonFiniteLoss(ModelError):
    pass


@dataclass(frozen=True)
class ArchConfig:
    n_mfcc: int = N_MFCC
    mfcc_hidden: tuple = (64, 32)
    image_size: int = IMAGE_SIZE
    conv_channels: tuple = (8, 16, 32)
    conv_strides: tuple = (2, 1, 1)
    clin_in: int = 2
    clin_hidden: tuple = (8, 8)
    head_hidden: tuple = (64, 32)
    dropout_rate: float = 0.3
    bn_momentum: float = 0.9
    bn_eps: float = 1e-5

    def image_chain(self) -> tuple:
        """Spatial size after each conv and pool stage, input first."""
        size = self.image_size
        chain = [size]
        for stride in self.conv_strides:
            if size < 3:
                raise InvalidArch(f"conv input {size} smaller than kernel")
            size = (size - 3) // stride + 1
            chain.append(size)
            if size < 2:
                raise InvalidArch(f"pool input {size} below 2x2")
            size = size // 2
            chain.append(size)
        return tuple(chain)

    def flat_width(self) -> int:
        return self.conv_channels[-1] * self.image_chain()[-1] ** 2

    def concat_width(self) -> int:
        return self.mfcc_hidden[-1] + self.flat_width() + self.clin_hidden[-1]

    def validate(self) -> None:
        if self.image_size != IMAGE_SIZE:
            raise InvalidArch(
                f"image input must be {IMAGE_SIZE}x{IMAGE_SIZE}, got {self.image_size}"
            )
        if len(self.conv_channels) != len(self.conv_strides):
            raise InvalidArch("conv_channels and conv_strides must align")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise InvalidArch("dropout rate must be in [0, 1)")
        self.image_chain()


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 32
    max_epochs: int = 100
    patience: int = 10
    lr: float = 0.001
    seeds: tuple = DEFAULT_SEEDS
    ratios: tuple = (0.70, 0.15, 0.15)

    def __post_init__(self):
        if self.batch_size < 2:
            raise ValueError("batch_size must be >= 2 (batchnorm)")
        if not self.patience < self.max_epochs:
            raise ValueError("patience must be < max_epochs")


def _spec_entries(arch: ArchConfig):
    """Trainable tensors in declaration order: (name, shape, init kind)."""
    entries = []
    prev = arch.n_mfcc
    for i, width in enumerate(arch.mfcc_hidden, start=1):
        entries.append((f"mfcc_w{i}", (prev, width), "he"))
        entries.append((f"mfcc_b{i}", (width,), "zero"))
        prev = width
    # Conv layers carry no bias: each feeds a batchnorm, which cancels any
    # per-channel shift, so beta is the only effective offset.
    prev_ch = 1
    for i, out_ch in enumerate(arch.conv_channels, start=1):
        entries.append((f"img_k{i}", (out_ch, prev_ch, 3, 3), "he"))
        entries.append((f"img_g{i}", (out_ch,), "one"))
        entries.append((f"img_be{i}", (out_ch,), "zero"))
        prev_ch = out_ch
    prev = arch.clin_in
    for i, width in enumerate(arch.clin_hidden, start=1):
        entries.append((f"clin_w{i}", (prev, width), "he"))
        entries.append((f"clin_b{i}", (width,), "zero"))
        prev = width
    prev = arch.concat_width()
    for i, width in enumerate(arch.head_hidden, start=1):
        entries.append((f"head_w{i}", (prev, width), "he"))
        entries.append((f"head_b{i}", (width,), "zero"))
        prev = width
    entries.append(("head_wout", (prev, 1), "glorot"))
    entries.append(("head_bout", (1,), "zero"))
    return entries


def _stat_entries(arch: ArchConfig):
    entries = []
    for i, out_ch in enumerate(arch.conv_channels, start=1):
        entries.append((f"img_rm{i}", (out_ch,), "zero"))
        entries.append((f"img_rv{i}", (out_ch,), "one"))
    return entries


def param_count(arch: ArchConfig) -> int:
    return sum(int(np.prod(shape)) for _, shape, _ in _spec_entries(arch))


@dataclass
class ModelParams:
    arch: ArchConfig
    seed: int
    tensors: dict
    meta: dict = field(default_factory=dict)

    def trainable_names(self) -> list[str]:
        return [name for name, _, _ in _spec_entries(self.arch)]

    def stat_names(self) -> list[str]:
        return [name for name, _, _ in _stat_entries(self.arch)]

    def trainable(self) -> list[np.ndarray]:
        return [self.tensors[n] for n in self.trainable_names()]

    def clone(self) -> "ModelParams":
        return ModelParams(
            arch=self.arch,
            seed=self.seed,
            tensors={k: v.copy() for k, v in self.tensors.items()},
            meta=copy.deepcopy(self.meta),
        )


def build(arch: ArchConfig = ArchConfig(), seed: int = 0) -> ModelParams:
    """Initialize parameters: He-uniform into ReLU layers, Glorot-uniform
    for the output layer, zero biases, unit batchnorm scale."""
    arch.validate()
    rng = np.random.Generator(np.random.PCG64(seed))
    tensors: dict[str, np.ndarray] = {}
    for name, shape, kind in _spec_entries(arch):
        if kind == "he":
            fan_in = int(np.prod(shape[1:])) if len(shape) == 4 else shape[0]
            limit = np.sqrt(6.0 / fan_in)
            tensors[name] = rng.uniform(-limit, limit, size=shape)
        elif kind == "glorot":
            limit = np.sqrt(6.0 / (shape[0] + shape[1]))
            tensors[name] = rng.uniform(-limit, limit, size=shape)
        elif kind == "one":
            tensors[name] = np.ones(shape)
        else:
            tensors[name] = np.zeros(shape)
    for name, shape, kind in _stat_entries(arch):
        tensors[name] = np.ones(shape) if kind == "one" else np.zeros(shape)
    return ModelParams(arch=arch, seed=seed, tensors=tensors)


# ---------------------------------------------------------------- batches

def batch_arrays(features: list[FeatureVector]) -> dict:
    return {
        "mfcc": np.stack([fv.mfcc for fv in features]),
        "image": np.stack([fv.image for fv in features])[:, None, :, :],
        "clinical": np.stack([fv.clinical for fv in features]),
    }


def _index_batch(batch: dict, idx) -> dict:
    return {k: v[idx] for k, v in batch.items()}


# ---------------------------------------------------------------- forward

def _dense_block(w, b, x, rate, train, rng, caches, tag):
    y, c_dense = nn.dense_forward(w, b, x)
    y, c_relu = nn.relu_forward(y)
    y, c_drop = nn.dropout_forward(y, rate, train, rng)
    caches[tag] = (c_dense, c_relu, c_drop)
    return y


def _dense_block_backward(dy, caches, tag):
    c_dense, c_relu, c_drop = caches[tag]
    dy = nn.dropout_backward(dy, c_drop)
    dy = nn.relu_backward(dy, c_relu)
    return nn.dense_backward(dy, c_dense)


def _forward_logits(mp: ModelParams, batch: dict, train: bool, rng=None):
    """Logits plus the cache bundle the backward pass consumes."""
    t = mp.tensors
    arch = mp.arch
    rate = arch.dropout_rate
    if train and rate > 0 and rng is None:
        raise ValueError("training forward with dropout needs an rng")
    caches: dict = {}

    x = batch["mfcc"]
    for i in range(1, len(arch.mfcc_hidden) + 1):
        x = _dense_block(t[f"mfcc_w{i}"], t[f"mfcc_b{i}"], x, rate, train, rng, caches, f"mfcc{i}")
    mfcc_out = x

    x = batch["image"]
    for i, stride in enumerate(arch.conv_strides, start=1):
        zero_bias = np.zeros(t[f"img_k{i}"].shape[0])
        x, c_conv = nn.conv2d_forward(t[f"img_k{i}"], zero_bias, x, stride)
        x, c_pool = nn.avgpool2_forward(x)
        x, c_bn = nn.batchnorm_forward(
            t[f"img_g{i}"], t[f"img_be{i}"], t[f"img_rm{i}"], t[f"img_rv{i}"],
            x, train, momentum=arch.bn_momentum, eps=arch.bn_eps,
        )
        x, c_relu = nn.relu_forward(x)
        caches[f"img{i}"] = (c_conv, c_pool, c_bn, c_relu)
    conv_shape = x.shape
    img_out = x.reshape(x.shape[0], -1)

    x = batch["clinical"]
    for i in range(1, len(arch.clin_hidden) + 1):
        x = _dense_block(t[f"clin_w{i}"], t[f"clin_b{i}"], x, rate, train, rng, caches, f"clin{i}")
    clin_out = x

    joined = np.concatenate([mfcc_out, img_out, clin_out], axis=1)
    x = joined
    for i in range(1, len(arch.head_hidden) + 1):
        y, c_dense = nn.dense_forward(t[f"head_w{i}"], t[f"head_b{i}"], x)
        y, c_relu = nn.relu_forward(y)
        caches[f"head{i}"] = (c_dense, c_relu)
        x = y
    logits, c_out = nn.dense_forward(t["head_wout"], t["head_bout"], x)
    caches["head_out"] = c_out
    caches["widths"] = (mfcc_out.shape[1], img_out.shape[1], clin_out.shape[1])
    caches["conv_shape"] = conv_shape
    return logits.reshape(-1), caches


def _backward(mp: ModelParams, dlogits: np.ndarray, caches: dict) -> dict:
    arch = mp.arch
    grads: dict[str, np.ndarray] = {}
    dy = dlogits.reshape(-1, 1)

    dy, grads["head_wout"], grads["head_bout"] = nn.dense_backward(dy, caches["head_out"])
    for i in range(len(arch.head_hidden), 0, -1):
        c_dense, c_relu = caches[f"head{i}"]
        dy = nn.relu_backward(dy, c_relu)
        dy, grads[f"head_w{i}"], grads[f"head_b{i}"] = nn.dense_backward(dy, c_dense)

    w_mfcc, w_img, w_clin = caches["widths"]
    d_mfcc = dy[:, :w_mfcc]
    d_img = dy[:, w_mfcc : w_mfcc + w_img].reshape(caches["conv_shape"])
    d_clin = dy[:, w_mfcc + w_img :]

    for i in range(len(arch.mfcc_hidden), 0, -1):
        d_mfcc, grads[f"mfcc_w{i}"], grads[f"mfcc_b{i}"] = _dense_block_backward(
            d_mfcc, caches, f"mfcc{i}"
        )

    dx = d_img
    for i in range(len(arch.conv_strides), 0, -1):
        c_conv, c_pool, c_bn, c_relu = caches[f"img{i}"]
        dx = nn.relu_backward(dx, c_relu)
        dx, grads[f"img_g{i}"], grads[f"img_be{i}"] = nn.batchnorm_backward(dx, c_bn)
        dx = nn.avgpool2_backward(dx, c_pool)
        dx, grads[f"img_k{i}"], _ = nn.conv2d_backward(dx, c_conv)

    for i in range(len(arch.clin_hidden), 0, -1):
        d_clin, grads[f"clin_w{i}"], grads[f"clin_b{i}"] = _dense_block_backward(
            d_clin, caches, f"clin{i}"
        )
    return grads


def forward(mp: ModelParams, features: list[FeatureVector], train: bool = False, rng=None) -> np.ndarray:
    """Probabilities in the open interval (0, 1) for a feature batch."""
    batch = batch_arrays(features)
    logits, _ = _forward_logits(mp, batch, train=train, rng=rng)
    p = nn.sigmoid(logits)
    return np.clip(p, np.nextafter(0.0, 1.0), np.nextafter(1.0, 0.0))


def predict(mp: ModelParams, clip: AudioClip, flags) -> float:
    """Probability that one clip is COVID-positive (evaluation mode)."""
    fv = extract_features(clip, flags)
    return float(forward(mp, [fv])[0])


# ---------------------------------------------------------------- training

@dataclass
class RunHistory:
    seed: int
    best_epoch: int
    epochs_run: int
    train_loss: list
    val_loss: list
    val_auc: list


@dataclass
class RunResult:
    params: ModelParams
    history: RunHistory
    train_ids: list
    val_ids: list
    test_ids: list


@dataclass
class TrainResult:
    runs: list

    def report_dict(self) -> dict:
        return {
            "runs": [
                {
                    "seed": r.history.seed,
                    "best_epoch": r.history.best_epoch,
                    "epochs_run": r.history.epochs_run,
                    "train_loss": r.history.train_loss,
                    "val_loss": r.history.val_loss,
                    "val_auc": r.history.val_auc,
                    "n_train": len(r.train_ids),
                    "n_val": len(r.val_ids),
                    "n_test": len(r.test_ids),
                }
                for r in self.runs
            ]
        }


def _labels_for(records: list[SampleRecord]) -> np.ndarray:
    return np.array([1.0 if r.label == POSITIVE else 0.0 for r in records])


def train(
    records: list[SampleRecord],
    features: dict,
    tc: TrainConfig = TrainConfig(),
    arch: ArchConfig = ArchConfig(),
    data_hash: str = "",
) -> TrainResult:
    """Run the repeated training protocol: one run per seed, each with a
    fresh stratified split, fresh init, Adam minibatches, and early
    stopping on validation loss (best epoch retained).

    ``features`` maps record id to FeatureVector. Test-split features are
    never read here; callers evaluate on the returned test ids.
    """
    runs = []
    for seed in tc.seeds:
        runs.append(_train_one(records, features, tc, arch, seed, data_hash))
    return TrainResult(runs=runs)


def _train_one(records, features, tc, arch, seed, data_hash) -> RunResult:
    train_recs, val_recs, test_recs = split(
        records, SplitSpec(ratios=tc.ratios, seed=seed)
    )
    x_train = batch_arrays([features[r.id] for r in train_recs])
    y_train = _labels_for(train_recs)
    x_val = batch_arrays([features[r.id] for r in val_recs])
    y_val = _labels_for(val_recs)

    mp = build(arch, seed=seed)
    rng = np.random.Generator(np.random.PCG64(seed))
    names = mp.trainable_names()
    params = [mp.tensors[n] for n in names]
    adam = nn.AdamState.for_params(params, lr=tc.lr)

    n = len(train_recs)
    history = RunHistory(seed, 0, 0, [], [], [])
    best_val = np.inf
    best_tensors = None
    best_epoch = 0
    since_best = 0

    for epoch in range(1, tc.max_epochs + 1):
        order = rng.permutation(n)
        epoch_losses = []
        for start in range(0, n, tc.batch_size):
            idx = order[start : start + tc.batch_size]
            if len(idx) < 2:
                continue  # batchnorm needs >= 2 samples
            logits, caches = _forward_logits(mp, _index_batch(x_train, idx), True, rng)
            loss, dlogits = nn.bce_loss(logits, y_train[idx])
            if not np.isfinite(loss):
                raise NonFiniteLoss(f"seed {seed}, epoch {epoch}: loss {loss}")
            grads = _backward(mp, dlogits, caches)
            nn.adam_step(adam, params, [grads[name] for name in names])
            epoch_losses.append(loss)

        val_logits, _ = _forward_logits(mp, x_val, train=False)
        val_loss, _ = nn.bce_loss(val_logits, y_val)
        if not np.isfinite(val_loss):
            raise NonFiniteLoss(f"seed {seed}, epoch {epoch}: val loss {val_loss}")
        val_scores = nn.sigmoid(val_logits)
        history.train_loss.append(float(np.mean(epoch_losses)))
        history.val_loss.append(float(val_loss))
        history.val_auc.append(auc(val_scores, y_val))
        history.epochs_run = epoch

        if val_loss < best_val:
            best_val = val_loss
            best_epoch = epoch
            best_tensors = {k: v.copy() for k, v in mp.tensors.items()}
            since_best = 0
        else:
            since_best += 1
            if since_best >= tc.patience:
                break

    mp.tensors = best_tensors
    history.best_epoch = best_epoch
    mp.meta = {
        "seed": seed,
        "ratios": list(tc.ratios),
        "data_hash": data_hash,
        "best_epoch": best_epoch,
        "val_loss": float(best_val),
        "lib_version": LIB_VERSION,
    }
    return RunResult(
        params=mp,
        history=history,
        train_ids=[r.id for r in train_recs],
        val_ids=[r.id for r in val_recs],
        test_ids=[r.id for r in test_recs],
    )


# ---------------------------------------------------------------- save/load

def save(mp: ModelParams, path) -> None:
    """Serialize: magic, u16 version, length-prefixed JSON metadata,
    float64-LE tensor blobs in declaration order, CRC32 trailer."""
    meta = {
        "arch": asdict(mp.arch),
        "seed": mp.seed,
        "meta": mp.meta,
        "lib_version": LIB_VERSION,
    }
    meta_bytes = json.dumps(meta, sort_keys=True, separators=(",", ":")).encode()
    blob = bytearray()
    blob += MODEL_MAGIC
    blob += struct.pack("<H", MODEL_FORMAT_VERSION)
    blob += struct.pack("<I", len(meta_bytes))
    blob += meta_bytes
    for name in mp.trainable_names() + mp.stat_names():
        blob += mp.tensors[name].astype("<f8").tobytes()
    blob += struct.pack("<I", zlib.crc32(bytes(blob)))
    with open(path, "wb") as fh:
        fh.write(bytes(blob))


def load(path) -> ModelParams:
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < 14 or blob[:4] != MODEL_MAGIC:
        raise CorruptFile("bad magic or truncated header")
    (stored_crc,) = struct.unpack("<I", blob[-4:])
    if zlib.crc32(blob[:-4]) != stored_crc:
        raise CorruptFile("checksum mismatch")
    (version,) = struct.unpack("<H", blob[4:6])
    if version != MODEL_FORMAT_VERSION:
        raise VersionMismatch(f"format version {version}, expected {MODEL_FORMAT_VERSION}")
    (meta_len,) = struct.unpack("<I", blob[6:10])
    meta = json.loads(blob[10 : 10 + meta_len])
    arch_fields = dict(meta["arch"])
    for key in ("mfcc_hidden", "conv_channels", "conv_strides", "clin_hidden", "head_hidden"):
        arch_fields[key] = tuple(arch_fields[key])
    arch = ArchConfig(**arch_fields)

    tensors: dict[str, np.ndarray] = {}
    offset = 10 + meta_len
    for name, shape, _ in _spec_entries(arch) + _stat_entries(arch):
        count = int(np.prod(shape))
        end = offset + 8 * count
        if end > len(blob) - 4:
            raise CorruptFile("tensor data truncated")
        tensors[name] = (
            np.frombuffer(blob, dtype="<f8", count=count, offset=offset)
            .astype(np.float64)
            .reshape(shape)
        )
        offset = end
    if offset != len(blob) - 4:
        raise CorruptFile("trailing bytes after tensors")
    return ModelParams(arch=arch, seed=meta["seed"], tensors=tensors, meta=meta["meta"])
