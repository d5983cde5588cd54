"""Encoder-decoder yaw estimator over keypoint-geometry feature vectors.

An MLP encoder compresses the 19 x (u, v, visibility) feature vector into a
latent code; a decoder reconstructs the features (reconstruction error doubles
as an in-distribution confidence signal); a head reading only the first
``yaw_latent_dim`` latent entries emits K overlapping-bin logits and K per-bin
angular offsets. Final yaw = best bin center + clamped offset.

Training minimizes w_rec * reconstruction MSE + w_bin * per-bin binary
cross-entropy against multi-hot membership + w_off * offset MSE over member
bins, with Adam, checkpointing on every new lowest epoch-mean loss.
"""

from __future__ import annotations

import base64
import json
import math
import time
from dataclasses import dataclass, field, asdict
from pathlib import Path
from typing import Iterator

import numpy as np

from .model import KEYPOINT_NAMES, KeypointObservation, wrap_angle, wrap_angles

FEATURE_DIM = 3 * len(KEYPOINT_NAMES)
LEAKY_SLOPE = 0.01


@dataclass(frozen=True)
class YawBinLayout:
    """K overlapping yaw bins: evenly spaced centers, shared half-width."""

    centers: np.ndarray  # (K,) radians, sorted, wrapped
    half_width: float

    def __post_init__(self):
        object.__setattr__(self, "centers", np.asarray(self.centers, dtype=float))

    @property
    def k(self) -> int:
        return len(self.centers)

    def membership(self, theta: float) -> np.ndarray:
        """Boolean mask of bins whose range contains theta."""
        return np.abs(wrap_angles(theta - self.centers)) <= self.half_width


def make_bins(k: int, half_width: float | None = None) -> YawBinLayout:
    """Build the overlapping bin layout; default half-width 2*pi/K (2x overlap)."""
    if k < 2:
        raise ValueError(f"need at least 2 bins, got {k}")
    if half_width is None:
        half_width = 2.0 * math.pi / k
    if half_width < math.pi / k:
        raise ValueError(f"half_width {half_width} leaves coverage gaps (need >= pi/{k})")
    centers = wrap_angles(-math.pi + (np.arange(k) + 0.5) * 2.0 * math.pi / k)
    return YawBinLayout(centers=centers, half_width=float(half_width))


def encode_yaw_targets(theta: float, layout: YawBinLayout) -> tuple[np.ndarray, np.ndarray]:
    """Multi-hot membership and per-member offsets (radians) for a yaw."""
    deltas = wrap_angles(theta - layout.centers)
    member = np.abs(deltas) <= layout.half_width
    return member, np.where(member, deltas, 0.0)


def encode_yaw_targets_batch(thetas: np.ndarray, layout: YawBinLayout) -> tuple[np.ndarray, np.ndarray]:
    deltas = wrap_angles(np.asarray(thetas, dtype=float)[:, None] - layout.centers[None, :])
    member = np.abs(deltas) <= layout.half_width
    return member, np.where(member, deltas, 0.0)


@dataclass(frozen=True)
class YawEstimate:
    theta: float
    chosen_bin: int
    bin_confidence: float
    recon_loss: float


def decode_yaw(bin_logits: np.ndarray, offsets: np.ndarray, layout: YawBinLayout) -> YawEstimate:
    """Yaw from head outputs: argmax bin, center + clamped offset."""
    logits = np.asarray(bin_logits, dtype=float)
    i = int(np.argmax(logits))  # ties resolve to the lowest index
    offset = float(np.clip(offsets[i], -layout.half_width, layout.half_width))
    theta = wrap_angle(float(layout.centers[i]) + offset)
    shifted = np.exp(logits - logits.max())
    confidence = float(shifted[i] / shifted.sum())
    return YawEstimate(theta=theta, chosen_bin=i, bin_confidence=confidence, recon_loss=0.0)


@dataclass(frozen=True)
class YawNetConfig:
    """Architecture, loss-weight and training hyperparameters."""

    feature_dim: int = FEATURE_DIM
    latent_dim: int = 32
    yaw_latent_dim: int = 16
    encoder_hidden: tuple[int, ...] = (64, 64)
    decoder_hidden: tuple[int, ...] = (64, 64)
    head_hidden: tuple[int, ...] = (64, 64)
    k: int = 8
    half_width: float | None = None
    w_rec: float = 1.0
    w_bin: float = 1.0
    w_off: float = 10.0
    lr: float = 5e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    epochs: int = 120
    batch_size: int = 32
    seed: int = 0

    def __post_init__(self):
        for name in ("feature_dim", "latent_dim", "yaw_latent_dim", "k", "epochs", "batch_size"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.yaw_latent_dim > self.latent_dim:
            raise ValueError("yaw_latent_dim cannot exceed latent_dim")
        if min(self.w_rec, self.w_bin, self.w_off) < 0:
            raise ValueError("loss weights must be non-negative")
        if not (0 < self.beta1 < 1 and 0 < self.beta2 < 1):
            raise ValueError("Adam betas must lie in (0, 1)")

    def layout(self) -> YawBinLayout:
        return make_bins(self.k, self.half_width)


@dataclass
class DenseLayer:
    w: np.ndarray  # (in, out)
    b: np.ndarray  # (out,)


@dataclass
class YawNetParams:
    """Dense-layer weights for the encoder, decoder and yaw head."""

    encoder: list[DenseLayer]
    decoder: list[DenseLayer]
    head: list[DenseLayer]

    def arrays(self) -> list[np.ndarray]:
        """All parameter arrays in a fixed (component, layer, w-then-b) order."""
        out: list[np.ndarray] = []
        for layer in self.layers():
            out.append(layer.w)
            out.append(layer.b)
        return out

    def layers(self) -> Iterator[DenseLayer]:
        yield from self.encoder
        yield from self.decoder
        yield from self.head

    def replace_arrays(self, arrays: list[np.ndarray]) -> "YawNetParams":
        it = iter(arrays)
        def rebuild(stack: list[DenseLayer]) -> list[DenseLayer]:
            return [DenseLayer(w=next(it), b=next(it)) for _ in stack]
        return YawNetParams(
            encoder=rebuild(self.encoder), decoder=rebuild(self.decoder), head=rebuild(self.head)
        )

    def copy(self) -> "YawNetParams":
        return self.replace_arrays([a.copy() for a in self.arrays()])


def _mlp_sizes(config: YawNetConfig) -> dict[str, list[int]]:
    return {
        "encoder": [config.feature_dim, *config.encoder_hidden, config.latent_dim],
        "decoder": [config.latent_dim, *config.decoder_hidden, config.feature_dim],
        "head": [config.yaw_latent_dim, *config.head_hidden, 2 * config.k],
    }


def init_params(config: YawNetConfig, rng: np.random.Generator | None = None) -> YawNetParams:
    """Uniform fan-in-scaled weights, zero biases, from the run seed."""
    if rng is None:
        rng = np.random.default_rng(config.seed)
    sizes = _mlp_sizes(config)

    def stack(dims: list[int]) -> list[DenseLayer]:
        layers = []
        for fan_in, fan_out in zip(dims[:-1], dims[1:]):
            bound = 1.0 / math.sqrt(fan_in)
            layers.append(
                DenseLayer(w=rng.uniform(-bound, bound, size=(fan_in, fan_out)), b=np.zeros(fan_out))
            )
        return layers

    return YawNetParams(encoder=stack(sizes["encoder"]), decoder=stack(sizes["decoder"]), head=stack(sizes["head"]))


def _leaky(x: np.ndarray) -> np.ndarray:
    return np.where(x > 0, x, LEAKY_SLOPE * x)


def _leaky_grad(pre: np.ndarray) -> np.ndarray:
    return np.where(pre > 0, 1.0, LEAKY_SLOPE)


def _mlp_forward(layers: list[DenseLayer], x: np.ndarray) -> tuple[np.ndarray, list[tuple[np.ndarray, np.ndarray]]]:
    """Leaky-rectifier hidden layers, linear output; returns (y, caches)."""
    caches = []
    h = x
    for i, layer in enumerate(layers):
        pre = h @ layer.w + layer.b
        caches.append((h, pre))
        h = pre if i == len(layers) - 1 else _leaky(pre)
    return h, caches


def _mlp_backward(
    layers: list[DenseLayer], caches: list[tuple[np.ndarray, np.ndarray]], grad_out: np.ndarray
) -> tuple[np.ndarray, list[np.ndarray]]:
    """Returns (grad wrt input, [dW0, db0, dW1, db1, ...])."""
    grads: list[np.ndarray] = [np.empty(0)] * (2 * len(layers))
    g = grad_out
    for i in range(len(layers) - 1, -1, -1):
        x_in, pre = caches[i]
        if i != len(layers) - 1:
            g = g * _leaky_grad(pre)
        grads[2 * i] = x_in.T @ g
        grads[2 * i + 1] = g.sum(axis=0)
        g = g @ layers[i].w.T
    return g, grads


def forward(
    params: YawNetParams, features: np.ndarray, config: YawNetConfig
) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Run the network: (reconstruction, bin_logits, offsets, latent z)."""
    x = np.asarray(features, dtype=float)
    single = x.ndim == 1
    x = np.atleast_2d(x)
    if x.shape[1] != config.feature_dim:
        raise ValueError(f"expected feature dim {config.feature_dim}, got {x.shape[1]}")
    z, _ = _mlp_forward(params.encoder, x)
    recon, _ = _mlp_forward(params.decoder, z)
    head_out, _ = _mlp_forward(params.head, z[:, : config.yaw_latent_dim])
    logits, offsets = head_out[:, : config.k], head_out[:, config.k :]
    if single:
        return recon[0], logits[0], offsets[0], z[0]
    return recon, logits, offsets, z


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def _bce_with_logits(logits: np.ndarray, targets: np.ndarray) -> float:
    # stable log(1 + exp(-|x|)) formulation
    per = np.maximum(logits, 0.0) - logits * targets + np.log1p(np.exp(-np.abs(logits)))
    return float(per.mean())


def loss_and_grads(
    params: YawNetParams,
    features: np.ndarray,
    member: np.ndarray,
    target_offsets: np.ndarray,
    config: YawNetConfig,
) -> tuple[float, dict[str, float], list[np.ndarray]]:
    """Total weighted loss, its components, and gradients for every parameter."""
    x = np.atleast_2d(np.asarray(features, dtype=float))
    member = np.atleast_2d(member).astype(float)
    target_offsets = np.atleast_2d(target_offsets)
    n, f_dim = x.shape
    k = config.k
    d_yaw = config.yaw_latent_dim

    z, enc_caches = _mlp_forward(params.encoder, x)
    recon, dec_caches = _mlp_forward(params.decoder, z)
    head_out, head_caches = _mlp_forward(params.head, z[:, :d_yaw])
    logits, offsets = head_out[:, :k], head_out[:, k:]

    rec_diff = recon - x
    l_rec = float(np.mean(rec_diff**2))
    l_bin = _bce_with_logits(logits, member)
    n_member = member.sum()
    off_diff = (offsets - target_offsets) * member
    l_off = float((off_diff**2).sum() / n_member) if n_member > 0 else 0.0
    total = config.w_rec * l_rec + config.w_bin * l_bin + config.w_off * l_off

    # backward
    g_recon = config.w_rec * 2.0 * rec_diff / rec_diff.size
    g_logits = config.w_bin * (_sigmoid(logits) - member) / member.size
    g_offsets = (config.w_off * 2.0 * off_diff / n_member) if n_member > 0 else np.zeros_like(offsets)

    g_z_dec, dec_grads = _mlp_backward(params.decoder, dec_caches, g_recon)
    g_head_out = np.concatenate([g_logits, g_offsets], axis=1)
    g_zyaw, head_grads = _mlp_backward(params.head, head_caches, g_head_out)
    g_z = g_z_dec
    g_z[:, :d_yaw] += g_zyaw
    _, enc_grads = _mlp_backward(params.encoder, enc_caches, g_z)

    components = {"rec": l_rec, "bin": l_bin, "off": l_off}
    return total, components, [*enc_grads, *dec_grads, *head_grads]


def total_loss(
    params: YawNetParams, batch: tuple[np.ndarray, np.ndarray], config: YawNetConfig
) -> tuple[float, dict[str, float]]:
    """Weighted loss of a (features, yaws) batch plus per-term components."""
    features, yaws = batch
    features = np.atleast_2d(np.asarray(features, dtype=float))
    if features.shape[0] == 0:
        raise ValueError("batch must be non-empty")
    member, offsets = encode_yaw_targets_batch(np.atleast_1d(yaws), config.layout())
    loss, components, _ = loss_and_grads(params, features, member, offsets, config)
    return loss, components


@dataclass(frozen=True)
class AdamHyper:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


@dataclass
class AdamState:
    m: list[np.ndarray]
    v: list[np.ndarray]

    @classmethod
    def zeros_like(cls, arrays: list[np.ndarray]) -> "AdamState":
        return cls(m=[np.zeros_like(a) for a in arrays], v=[np.zeros_like(a) for a in arrays])


def adam_step(
    params: list[np.ndarray],
    grads: list[np.ndarray],
    state: AdamState,
    t: int,
    hyper: AdamHyper,
) -> tuple[list[np.ndarray], AdamState]:
    """One bias-corrected Adam update over a list of parameter arrays."""
    if t < 1:
        raise ValueError("Adam step index starts at 1")
    if any(not np.all(np.isfinite(g)) for g in grads):
        raise ValueError("non-finite gradients")
    new_params, new_m, new_v = [], [], []
    bc1 = 1.0 - hyper.beta1**t
    bc2 = 1.0 - hyper.beta2**t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m = hyper.beta1 * m + (1.0 - hyper.beta1) * g
        v = hyper.beta2 * v + (1.0 - hyper.beta2) * g**2
        m_hat = m / bc1
        v_hat = v / bc2
        new_params.append(p - hyper.lr * m_hat / (np.sqrt(v_hat) + hyper.eps))
        new_m.append(m)
        new_v.append(v)
    return new_params, AdamState(m=new_m, v=new_v)


@dataclass
class TrainReport:
    epoch_losses: list[float] = field(default_factory=list)
    checkpoint_epochs: list[int] = field(default_factory=list)
    checkpoint_losses: list[float] = field(default_factory=list)
    test_yaw_mae: float = math.nan
    tau_rec: float = math.nan
    steps: int = 0
    wall_time_s: float = 0.0
    diverged: bool = False

    def summary(self) -> dict:
        # deterministic fields only: the summary lands in checkpoint files,
        # which must be byte-identical across reruns of the same seed
        return {
            "epochs": len(self.epoch_losses),
            "best_epoch": self.checkpoint_epochs[-1] if self.checkpoint_epochs else None,
            "best_loss": self.checkpoint_losses[-1] if self.checkpoint_losses else None,
            "test_yaw_mae": self.test_yaw_mae,
            "steps": self.steps,
            "diverged": self.diverged,
        }


def reconstruction_losses(params: YawNetParams, features: np.ndarray, config: YawNetConfig) -> np.ndarray:
    """Per-sample reconstruction MSE."""
    x = np.atleast_2d(np.asarray(features, dtype=float))
    recon, _, _, _ = forward(params, x, config)
    return np.mean((recon - x) ** 2, axis=1)


def predict_yaws(params: YawNetParams, features: np.ndarray, config: YawNetConfig) -> np.ndarray:
    """Decoded yaw per row of a feature matrix."""
    x = np.atleast_2d(np.asarray(features, dtype=float))
    _, logits, offsets, _ = forward(params, x, config)
    layout = config.layout()
    idx = np.argmax(logits, axis=1)
    rows = np.arange(len(x))
    off = np.clip(offsets[rows, idx], -layout.half_width, layout.half_width)
    return wrap_angles(layout.centers[idx] + off)


def train(
    config: YawNetConfig,
    train_set: tuple[np.ndarray, np.ndarray],
    test_set: tuple[np.ndarray, np.ndarray],
) -> tuple[YawNetParams, TrainReport]:
    """Mini-batch Adam training with best-loss checkpointing.

    Deterministic for a fixed config.seed. Aborts on a non-finite loss and
    returns the last good checkpoint flagged as diverged.
    """
    x_train, yaw_train = np.asarray(train_set[0], dtype=float), np.asarray(train_set[1], dtype=float)
    x_test, yaw_test = np.asarray(test_set[0], dtype=float), np.asarray(test_set[1], dtype=float)
    if len(x_train) == 0 or len(x_test) == 0:
        raise ValueError("datasets must be non-empty")

    started = time.perf_counter()
    rng = np.random.default_rng(config.seed)
    params = init_params(config, rng)
    layout = config.layout()
    member, offsets = encode_yaw_targets_batch(yaw_train, layout)
    member = member.astype(float)

    state = AdamState.zeros_like(params.arrays())
    hyper = AdamHyper(lr=config.lr, beta1=config.beta1, beta2=config.beta2, eps=config.eps)
    report = TrainReport()
    best_loss = math.inf
    best_params = params.copy()
    t = 0

    for epoch in range(config.epochs):
        order = rng.permutation(len(x_train))
        epoch_loss = 0.0
        for start in range(0, len(order), config.batch_size):
            idx = order[start : start + config.batch_size]
            loss, _, grads = loss_and_grads(params, x_train[idx], member[idx], offsets[idx], config)
            if not math.isfinite(loss):
                report.diverged = True
                report.wall_time_s = time.perf_counter() - started
                return best_params, report
            t += 1
            arrays, state = adam_step(params.arrays(), grads, state, t, hyper)
            params = params.replace_arrays(arrays)
            epoch_loss += loss * len(idx)
        epoch_loss /= len(x_train)
        report.epoch_losses.append(epoch_loss)
        if epoch_loss < best_loss:
            best_loss = epoch_loss
            best_params = params.copy()
            report.checkpoint_epochs.append(epoch)
            report.checkpoint_losses.append(epoch_loss)

    report.steps = t
    report.tau_rec = float(np.percentile(reconstruction_losses(best_params, x_train, config), 95.0))
    pred = predict_yaws(best_params, x_test, config)
    report.test_yaw_mae = float(np.mean(np.abs(wrap_angles(pred - yaw_test))))
    report.wall_time_s = time.perf_counter() - started
    return best_params, report


def confidence_from_reconstruction(recon_loss: float, tau_rec: float) -> bool:
    """In-distribution iff the reconstruction loss is strictly under the threshold."""
    if recon_loss < 0:
        raise ValueError("reconstruction loss cannot be negative")
    return recon_loss < tau_rec


def estimate_yaw(params: YawNetParams, features: np.ndarray, config: YawNetConfig) -> YawEstimate:
    """Single-sample inference: decoded yaw plus its reconstruction loss."""
    x = np.asarray(features, dtype=float)
    recon, logits, offsets, _ = forward(params, x, config)
    base = decode_yaw(logits, offsets, config.layout())
    recon_loss = float(np.mean((recon - x) ** 2))
    return YawEstimate(
        theta=base.theta,
        chosen_bin=base.chosen_bin,
        bin_confidence=base.bin_confidence,
        recon_loss=recon_loss,
    )


def arrays_from_records(records: list[dict]) -> tuple[np.ndarray, np.ndarray, int]:
    """Feature matrix and yaw targets from dataset records.

    Records without a detection bbox have nothing for the network to read and
    are skipped; the count of skipped records is returned.
    """
    feats, yaws, skipped = [], [], 0
    for rec in records:
        bbox_doc = rec.get("bbox")
        if bbox_doc is None:
            skipped += 1
            continue
        obs = [
            KeypointObservation(name=k["name"], u=k["u"], v=k["v"], visible=k["visible"])
            for k in rec["keypoints"]
        ]
        bbox = (bbox_doc["u0"], bbox_doc["v0"], bbox_doc["u1"], bbox_doc["v1"])
        feats.append(features_from_keypoints(obs, bbox))
        yaws.append(rec["ground_truth"]["yaw"])
    return np.array(feats), np.array(yaws), skipped


def features_from_keypoints(
    observations: list[KeypointObservation], bbox: tuple[float, float, float, float]
) -> np.ndarray:
    """Bbox-normalized (u, v, visible) triples in canonical skeleton order.

    Invisible keypoints contribute (0, 0, 0); bbox is (u0, v0, u1, v1).
    """
    u0, v0, u1, v1 = bbox
    w = max(u1 - u0, 1e-9)
    h = max(v1 - v0, 1e-9)
    by_name = {obs.name: obs for obs in observations}
    feats = np.zeros(FEATURE_DIM)
    for i, name in enumerate(KEYPOINT_NAMES):
        obs = by_name.get(name)
        if obs is not None and obs.visible:
            feats[3 * i] = (obs.u - u0) / w
            feats[3 * i + 1] = (obs.v - v0) / h
            feats[3 * i + 2] = 1.0
    return feats


# --- checkpoint serialization -------------------------------------------------

CHECKPOINT_VERSION = 1


@dataclass
class Checkpoint:
    """A trained model: config, parameters, OOD threshold and train summary."""

    config: YawNetConfig
    params: YawNetParams
    tau_rec: float
    train_summary: dict

    def estimate(self, features: np.ndarray) -> YawEstimate:
        return estimate_yaw(self.params, features, self.config)

    def in_distribution(self, recon_loss: float) -> bool:
        return confidence_from_reconstruction(recon_loss, self.tau_rec)


def _encode_array(a: np.ndarray) -> dict:
    return {
        "shape": list(a.shape),
        "data": base64.b64encode(np.ascontiguousarray(a, dtype="<f8").tobytes()).decode("ascii"),
    }


def _decode_array(doc: dict) -> np.ndarray:
    raw = base64.b64decode(doc["data"])
    return np.frombuffer(raw, dtype="<f8").reshape(doc["shape"]).copy()


def save_checkpoint(path: str | Path, ckpt: Checkpoint) -> None:
    config_doc = asdict(ckpt.config)
    config_doc["encoder_hidden"] = list(ckpt.config.encoder_hidden)
    config_doc["decoder_hidden"] = list(ckpt.config.decoder_hidden)
    config_doc["head_hidden"] = list(ckpt.config.head_hidden)
    doc = {
        "version": CHECKPOINT_VERSION,
        "config": config_doc,
        "params": {
            stack: [{"w": _encode_array(l.w), "b": _encode_array(l.b)} for l in getattr(ckpt.params, stack)]
            for stack in ("encoder", "decoder", "head")
        },
        "tau_rec": ckpt.tau_rec,
        "train_report_summary": ckpt.train_summary,
    }
    with open(path, "w", encoding="utf-8") as f:
        json.dump(doc, f, sort_keys=True)
        f.write("\n")


def load_checkpoint(path: str | Path) -> Checkpoint:
    with open(path, encoding="utf-8") as f:
        doc = json.load(f)
    if doc.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {doc.get('version')!r}")
    cfg_doc = dict(doc["config"])
    for key in ("encoder_hidden", "decoder_hidden", "head_hidden"):
        cfg_doc[key] = tuple(cfg_doc[key])
    config = YawNetConfig(**cfg_doc)
    params = YawNetParams(
        **{
            stack: [DenseLayer(w=_decode_array(l["w"]), b=_decode_array(l["b"])) for l in doc["params"][stack]]
            for stack in ("encoder", "decoder", "head")
        }
    )
    return Checkpoint(config=config, params=params, tau_rec=float(doc["tau_rec"]), train_summary=doc["train_report_summary"])
