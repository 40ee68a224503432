"""The two classifiers (compact ViT and matched CNN) plus training and prediction.

Patch extraction reuses the cipher's grid geometry, so one encrypted grid maps
to exactly one transformer patch. Both models share the train/predict contract
and are interchangeable in the evaluation harness.
"""

from __future__ import annotations

import csv
import time
from dataclasses import dataclass, field, asdict

import numpy as np

from . import autodiff as ad
from . import checkpoint, crypt, layers, rng
from .autodiff import Tensor
from .layers import Linear, LayerNorm, TransformerLayer, canonical_order, permute_tokens
from .optim import Adam, PlateauScheduler, TrainConfig
from .spectro import Spectrogram

INIT_STD = 0.02


@dataclass
class ViTConfig:
    image_height: int = 128
    image_width: int = 128
    channels: int = 3
    patch_size: int = 16
    dim: int = 64
    mlp_hidden: int = 128
    heads: int = 4
    layers: int = 3
    classes: int = 3

    def __post_init__(self) -> None:
        if self.image_height % self.patch_size or self.image_width % self.patch_size:
            raise crypt.GridSizeError(
                f"patch_size {self.patch_size} does not divide "
                f"{self.image_height}x{self.image_width}")

    @property
    def num_patches(self) -> int:
        return (self.image_height // self.patch_size) * (self.image_width // self.patch_size)

    @property
    def patch_dim(self) -> int:
        return self.patch_size * self.patch_size * self.channels


@dataclass
class CnnConfig:
    image_height: int = 128
    image_width: int = 128
    channels: int = 3
    conv_layers: int = 3
    filters: int = 64
    kernel: int = 3
    classes: int = 3

    def __post_init__(self) -> None:
        if min(self.image_height, self.image_width) >> self.conv_layers == 0:
            raise ValueError("input too small to survive the pooling stack")


def extract_patches(image, patch_size: int) -> np.ndarray:
    """Non-overlapping patches in row-major grid order, each flattened
    (row, column, channel) — the same geometry the cipher uses."""
    pixels = image.pixels if hasattr(image, "pixels") else np.asarray(image)
    return crypt.grid_rows(pixels.astype(np.float64), patch_size)


def assemble_patches(patches: np.ndarray, height: int, width: int, channels: int,
                     patch_size: int) -> np.ndarray:
    """Inverse of extract_patches."""
    return crypt.from_grid_rows(patches, height, width, channels, patch_size)


def _batch_patches(images: np.ndarray, patch: int) -> np.ndarray:
    b, h, w, c = images.shape
    gh, gw = h // patch, w // patch
    blocks = images.reshape(b, gh, patch, gw, patch, c).transpose(0, 1, 3, 2, 4, 5)
    return blocks.reshape(b, gh * gw, patch * patch * c)


class VisionTransformer:
    """Patch embedding + class token + positional embedding, J pre-norm encoder
    layers, then a layer-normed linear head on the class token.

    The forward pass canonicalizes patch order by content before the embedding
    matmul so that, with zero positional embeddings, the class-token output is
    bit-identical under any permutation of the input patches.
    """

    name = "vit"

    def __init__(self, cfg: ViTConfig, seed: int = 0):
        self.cfg = cfg
        gen = rng.numpy_generator(seed, "init")
        d = cfg.dim
        self.embed = Linear(cfg.patch_dim, d,
                            layers.trunc_normal((cfg.patch_dim, d), INIT_STD, gen))
        self.cls_token = Tensor(np.zeros(d), requires_grad=True)
        self.pos = Tensor(np.zeros((cfg.num_patches + 1, d)), requires_grad=True)
        self.blocks = [TransformerLayer(d, cfg.mlp_hidden, cfg.heads, gen, INIT_STD)
                       for _ in range(cfg.layers)]
        self.final_ln = LayerNorm(d)
        self.head = Linear(d, cfg.classes,
                           layers.trunc_normal((d, cfg.classes), INIT_STD, gen))

    def parameters(self) -> dict[str, Tensor]:
        out = self.embed.params("embed")
        out["cls_token"] = self.cls_token
        out["pos"] = self.pos
        for i, block in enumerate(self.blocks):
            out.update(block.params(f"block{i}"))
        out.update(self.final_ln.params("final_ln"))
        out.update(self.head.params("head"))
        return out

    def parameter_count(self) -> int:
        return sum(p.data.size for p in self.parameters().values())

    def _check_shape(self, images: np.ndarray) -> None:
        expect = (self.cfg.image_height, self.cfg.image_width, self.cfg.channels)
        if images.shape[1:] != expect:
            raise ValueError(f"input shape {images.shape[1:]} != expected {expect}")

    def linear_embed(self, patches: np.ndarray) -> Tensor:
        """Embedded sequence in input patch order: row 0 = class token, rows
        1..n = patch projections, positional embedding added to every row."""
        n, d = self.cfg.num_patches, self.cfg.dim
        if patches.shape != (n, self.cfg.patch_dim):
            raise ValueError(f"patches shape {patches.shape} != ({n}, {self.cfg.patch_dim})")
        projected = self.embed(Tensor(np.asarray(patches, dtype=np.float64)))
        cls_row = ad.reshape(self.cls_token, (1, d))
        return ad.add(ad.concat([cls_row, projected], axis=0), self.pos)

    def encode(self, tokens: Tensor) -> Tensor:
        for block in self.blocks:
            tokens = block(tokens)
        return tokens

    def softmax_head(self, class_tokens: Tensor) -> Tensor:
        """Final LN, affine map to class logits, softmax."""
        return ad.softmax(self.head(self.final_ln(class_tokens)), axis=-1)

    def forward(self, images: np.ndarray) -> Tensor:
        images = np.asarray(images, dtype=np.float64)
        self._check_shape(images)
        cfg = self.cfg
        patches = _batch_patches(images, cfg.patch_size)
        bsz, n, _ = patches.shape

        # content-canonical patch order; positional rows travel with their patches
        order = np.stack([canonical_order(patches[b]) for b in range(bsz)])
        sorted_patches = np.take_along_axis(patches, order[:, :, None], axis=1)
        emb = self.embed(Tensor(sorted_patches))  # (B, n, d)
        pos_patch = ad.take(self.pos, slice(1, None))
        pos_b = ad.expand(ad.reshape(pos_patch, (1, n, cfg.dim)), (bsz, n, cfg.dim))
        emb = ad.add(emb, permute_tokens(pos_b, order))

        cls = ad.add(ad.reshape(self.cls_token, (1, 1, cfg.dim)),
                     ad.reshape(ad.take(self.pos, slice(0, 1)), (1, 1, cfg.dim)))
        tokens = ad.concat([ad.expand(cls, (bsz, 1, cfg.dim)), emb], axis=1)
        encoded = self.encode(tokens)
        return self.softmax_head(ad.take(encoded, (slice(None), 0)))


def vit_param_count_formula(cfg: ViTConfig) -> int:
    """Closed-form trainable-parameter count, cross-checked against the walked store."""
    d, n, hidden, pd = cfg.dim, cfg.num_patches, cfg.mlp_hidden, cfg.patch_dim
    per_layer = 2 * d * 2 + 4 * (d * d + d) + (d * hidden + hidden) + (hidden * d + d)
    return ((pd * d + d) + (n + 1) * d + d + cfg.layers * per_layer
            + 2 * d + (d * cfg.classes + cfg.classes))


class BaselineCnn:
    """Matched baseline: conv(3x3, 64) + 2x2 maxpool stacks, flatten, softmax head.

    No activation between convolution and pooling, and no hidden dense layer;
    Glorot-uniform init, zero biases.
    """

    name = "cnn"

    def __init__(self, cfg: CnnConfig, seed: int = 0):
        self.cfg = cfg
        gen = rng.numpy_generator(seed, "init")
        self.conv_w: list[Tensor] = []
        self.conv_b: list[Tensor] = []
        in_ch = cfg.channels
        for _ in range(cfg.conv_layers):
            k = cfg.kernel
            fan_in = k * k * in_ch
            fan_out = k * k * cfg.filters
            w = layers.glorot_uniform((k, k, in_ch, cfg.filters), fan_in, fan_out, gen)
            self.conv_w.append(Tensor(w, requires_grad=True))
            self.conv_b.append(Tensor(np.zeros(cfg.filters), requires_grad=True))
            in_ch = cfg.filters
        h, w_ = cfg.image_height, cfg.image_width
        for _ in range(cfg.conv_layers):
            h, w_ = -(-h // 2), -(-w_ // 2)
        flat = h * w_ * cfg.filters
        self.head = Linear(flat, cfg.classes,
                           layers.glorot_uniform((flat, cfg.classes), flat, cfg.classes, gen))

    def parameters(self) -> dict[str, Tensor]:
        out: dict[str, Tensor] = {}
        for i, (w, b) in enumerate(zip(self.conv_w, self.conv_b)):
            out[f"conv{i}.w"] = w
            out[f"conv{i}.b"] = b
        out.update(self.head.params("head"))
        return out

    def parameter_count(self) -> int:
        return sum(p.data.size for p in self.parameters().values())

    def forward(self, images: np.ndarray) -> Tensor:
        images = np.asarray(images, dtype=np.float64)
        expect = (self.cfg.image_height, self.cfg.image_width, self.cfg.channels)
        if images.shape[1:] != expect:
            raise ValueError(f"input shape {images.shape[1:]} != expected {expect}")
        x = Tensor(images)
        for w, b in zip(self.conv_w, self.conv_b):
            x = layers.maxpool2(layers.conv2d(x, w, b))
        flat = ad.reshape(x, (images.shape[0], -1))
        return ad.softmax(self.head(flat), axis=-1)


Model = VisionTransformer | BaselineCnn


def build_vit(cfg: ViTConfig | None = None, seed: int = 0) -> VisionTransformer:
    return VisionTransformer(cfg or ViTConfig(), seed)


def build_cnn(cfg: CnnConfig | None = None, seed: int = 0) -> BaselineCnn:
    return BaselineCnn(cfg or CnnConfig(), seed)


# -- training -----------------------------------------------------------------


@dataclass
class EpochStats:
    epoch: int
    train_loss: float
    val_loss: float
    val_accuracy: float
    lr: float
    clamped: int = 0


@dataclass
class History:
    rows: list[EpochStats] = field(default_factory=list)
    best_epoch: int = 0
    stopped_early: bool = False

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["epoch", "train_loss", "val_loss", "val_accuracy", "lr"])
            for r in self.rows:
                writer.writerow([r.epoch, f"{r.train_loss:.10g}", f"{r.val_loss:.10g}",
                                 f"{r.val_accuracy:.10g}", f"{r.lr:.10g}"])


def _snapshot(params: dict[str, Tensor]) -> dict[str, np.ndarray]:
    return {name: p.data.copy() for name, p in params.items()}


def _restore(params: dict[str, Tensor], snap: dict[str, np.ndarray]) -> None:
    for name, p in params.items():
        p.data[...] = snap[name]


def batched_probs(model: Model, images: np.ndarray, batch_size: int = 32) -> np.ndarray:
    """Forward a whole split without building a tape."""
    chunks = []
    with ad.no_grad():
        for start in range(0, images.shape[0], batch_size):
            chunks.append(model.forward(images[start:start + batch_size]).data)
    return np.concatenate(chunks, axis=0)


def validation_stats(model: Model, images: np.ndarray, labels: np.ndarray,
                     batch_size: int = 32) -> tuple[float, float]:
    probs = batched_probs(model, images, batch_size)
    picked = np.maximum(probs[np.arange(labels.size), labels], layers.LOSS_PROB_FLOOR)
    loss = float(-np.mean(np.log(picked)))
    accuracy = float(np.mean(probs.argmax(axis=1) == labels))
    return loss, accuracy


def train(model: Model, train_split: tuple[np.ndarray, np.ndarray],
          val_split: tuple[np.ndarray, np.ndarray], cfg: TrainConfig,
          verbose: bool = False) -> History:
    """Seeded mini-batch training with plateau LR decay, early stopping, and
    best-validation weight restoration."""
    x_train, y_train = train_split
    x_val, y_val = val_split
    if x_train.shape[0] == 0 or x_val.shape[0] == 0:
        raise ValueError("empty training or validation split")

    params = model.parameters()
    adam = Adam()
    sched = PlateauScheduler(cfg)
    gen = rng.numpy_generator(cfg.rng_seed, "batching")
    history = History()
    best = _snapshot(params)
    lr = cfg.learning_rate

    for epoch in range(1, cfg.max_epochs + 1):
        order = gen.permutation(x_train.shape[0])
        total_loss = 0.0
        clamped = 0
        for start in range(0, order.size, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            diag: dict = {}
            probs = model.forward(x_train[idx])
            loss = layers.cross_entropy(probs, y_train[idx], diag)
            for p in params.values():
                p.zero_grad()
            loss.backward()
            adam.step(params, lr)
            total_loss += loss.item() * idx.size
            clamped += diag.get("clamped", 0)
        train_loss = total_loss / order.size
        val_loss, val_acc = validation_stats(model, x_val, y_val, cfg.batch_size)
        lr, stop, is_best = sched.update(val_loss)
        if is_best:
            best = _snapshot(params)
            history.best_epoch = epoch
        history.rows.append(EpochStats(epoch, train_loss, val_loss, val_acc, lr, clamped))
        if verbose:
            flag = " *" if is_best else ""
            print(f"epoch {epoch:3d}  train {train_loss:.4f}  val {val_loss:.4f}  "
                  f"acc {val_acc:.3f}  lr {lr:.2e}{flag}", flush=True)
        if stop:
            history.stopped_early = True
            break
    _restore(params, best)
    return history


# -- prediction ------------------------------------------------------------------


def predict(model: Model, image) -> tuple[np.ndarray, float]:
    """Single-image class probabilities plus forward-pass wall time (no I/O)."""
    pixels = image.pixels if hasattr(image, "pixels") else np.asarray(image)
    batch = np.asarray(pixels, dtype=np.float64)[None]
    with ad.no_grad():
        start = time.perf_counter()
        probs = model.forward(batch)
        latency = time.perf_counter() - start
    return probs.data[0], latency


def measure_prediction_time(model: Model, image, runs: int = 30, warmup: int = 5) -> float:
    """Mean single-image forward latency over `runs` timed passes after warm-up."""
    for _ in range(warmup):
        predict(model, image)
    return float(np.mean([predict(model, image)[1] for _ in range(runs)]))


# -- checkpointing ----------------------------------------------------------------


def save_model(model: Model, path) -> None:
    meta = {"arch": model.name}
    meta.update({k: str(v) for k, v in asdict(model.cfg).items()})
    checkpoint.save(path, {k: p.data for k, p in model.parameters().items()}, meta)


def load_model(path) -> Model:
    params, meta = checkpoint.load(path)
    arch = meta.pop("arch", "")
    fields = {k: int(v) for k, v in meta.items()}
    model: Model
    if arch == "vit":
        model = VisionTransformer(ViTConfig(**fields))
    elif arch == "cnn":
        model = BaselineCnn(CnnConfig(**fields))
    else:
        raise ValueError(f"checkpoint does not name a known architecture: {arch!r}")
    own = model.parameters()
    if set(own) != set(params):
        raise ValueError("checkpoint parameter names do not match the architecture")
    for name, tensor in own.items():
        if tensor.data.shape != params[name].shape:
            raise ValueError(f"shape mismatch for {name}")
        tensor.data[...] = params[name]
    return model
