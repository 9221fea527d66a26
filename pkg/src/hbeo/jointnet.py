"""Joint depth-to-(class, pose, projection) convolutional regressor.

Topology is fixed by construction: four strided convolutions (stride 2x2,
zero padding of kernel//2, no pooling), three shared fully connected layers,
and three linear heads emitting class logits, an axis-angle pose, and
subspace projection coefficients. All hidden layers use the rectifier.
Softmax is applied to the class logits only inside the loss and at inference.

Everything runs in float64 numpy with explicit reverse-mode gradients; there
is no autograd underneath, which keeps the gradient checks honest.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .geom3d.render import DepthImage
from .geom3d.rotation import Rotation, canonicalize
from .subspace import SharedBasis, back_project


class TrainingDivergedError(RuntimeError):
    pass


@dataclass(frozen=True)
class NetworkSpec:
    input_width: int
    input_height: int
    conv_layers: tuple  # 4 x (out_channels, kernel)
    fc_widths: tuple    # 3 shared widths
    num_classes: int
    projection_dim: int

    def __post_init__(self):
        object.__setattr__(self, "conv_layers", tuple((int(c), int(k)) for c, k in self.conv_layers))
        object.__setattr__(self, "fc_widths", tuple(int(w) for w in self.fc_widths))
        if len(self.conv_layers) != 4:
            raise ValueError("exactly 4 strided conv layers required")
        if len(self.fc_widths) != 3:
            raise ValueError("exactly 3 shared fully connected layers required")
        if self.num_classes < 1 or self.projection_dim < 1:
            raise ValueError("head dimensions must be positive")
        if min(self.conv_spatial_sizes()[-1]) < 1:
            raise ValueError("conv stack reduces spatial size below 1x1")

    def conv_spatial_sizes(self):
        """(height, width) after each conv; stride 2, padding kernel//2."""
        sizes = []
        h, w = self.input_height, self.input_width
        for _, kernel in self.conv_layers:
            pad = kernel // 2
            h = (h + 2 * pad - kernel) // 2 + 1
            w = (w + 2 * pad - kernel) // 2 + 1
            sizes.append((h, w))
        return sizes

    @property
    def flattened_size(self) -> int:
        h, w = self.conv_spatial_sizes()[-1]
        return self.conv_layers[-1][0] * h * w


def desk_spec(num_classes: int, projection_dim: int) -> NetworkSpec:
    """Default stack for 64x48 depth input."""
    return NetworkSpec(64, 48, ((8, 5), (16, 5), (32, 5), (64, 5)), (256, 128, 64), num_classes, projection_dim)


def full_scale_spec(num_classes: int = 10, projection_dim: int = 344) -> NetworkSpec:
    """Reference stack for 320x240 input (~15M parameters); not trained here."""
    return NetworkSpec(320, 240, ((16, 5), (32, 5), (48, 5), (64, 5)), (700, 700, 700), num_classes, projection_dim)


@dataclass(frozen=True)
class LossWeights:
    class_weight: float = 1.0
    pose_weight: float = 1.0
    projection_weight: float = 1.0

    def __post_init__(self):
        w = (self.class_weight, self.pose_weight, self.projection_weight)
        if any(v < 0 for v in w) or not any(v > 0 for v in w):
            raise ValueError("loss weights must be non-negative with at least one positive")


@dataclass
class TrainSample:
    """One supervised record: standardized depth image, class index, pose,
    and the subspace projection of the aligned full object."""

    depth: np.ndarray = field(repr=False)  # (h, w), object pixels standardized, background 0
    class_index: int = 0
    pose: Rotation = None
    target_projection: np.ndarray = field(repr=False, default=None)


@dataclass
class JointNetwork:
    spec: NetworkSpec
    params: dict = field(repr=False)
    seed: int = 0

    def param_names(self):
        return param_names(self.spec)

    def copy(self) -> "JointNetwork":
        return JointNetwork(self.spec, {k: v.copy() for k, v in self.params.items()}, self.seed)


@dataclass(frozen=True)
class JointPrediction:
    class_logits: np.ndarray
    pose: np.ndarray
    projection: np.ndarray


def param_names(spec: NetworkSpec):
    names = []
    for i in range(4):
        names += [f"conv{i}_w", f"conv{i}_b"]
    for i in range(3):
        names += [f"fc{i}_w", f"fc{i}_b"]
    for head in ("class", "pose", "proj"):
        names += [f"head_{head}_w", f"head_{head}_b"]
    return names


def init_network(spec: NetworkSpec, seed: int) -> JointNetwork:
    """Fan-in-scaled uniform weights, zero biases, deterministic in the seed."""
    rng = np.random.default_rng(seed)

    def uniform(shape, fan_in):
        limit = math.sqrt(3.0 / fan_in)
        return rng.uniform(-limit, limit, size=shape)

    params = {}
    in_ch = 1
    for i, (out_ch, kernel) in enumerate(spec.conv_layers):
        params[f"conv{i}_w"] = uniform((out_ch, in_ch, kernel, kernel), in_ch * kernel * kernel)
        params[f"conv{i}_b"] = np.zeros(out_ch)
        in_ch = out_ch
    width_in = spec.flattened_size
    for i, width in enumerate(spec.fc_widths):
        params[f"fc{i}_w"] = uniform((width_in, width), width_in)
        params[f"fc{i}_b"] = np.zeros(width)
        width_in = width
    for head, dim in (("class", spec.num_classes), ("pose", 3), ("proj", spec.projection_dim)):
        params[f"head_{head}_w"] = uniform((width_in, dim), width_in)
        params[f"head_{head}_b"] = np.zeros(dim)
    return JointNetwork(spec, params, seed)


def count_parameters(net: JointNetwork) -> int:
    return sum(v.size for v in net.params.values())


def _im2col(x: np.ndarray, kernel: int, stride: int, pad: int):
    n, c, h, w = x.shape
    ho = (h + 2 * pad - kernel) // stride + 1
    wo = (w + 2 * pad - kernel) // stride + 1
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    cols = np.empty((n, c, kernel * kernel, ho * wo))
    for i in range(kernel):
        for j in range(kernel):
            patch = xp[:, :, i : i + stride * ho : stride, j : j + stride * wo : stride]
            cols[:, :, i * kernel + j, :] = patch.reshape(n, c, -1)
    return cols.reshape(n, c * kernel * kernel, ho * wo), (ho, wo)


def _col2im(dcols: np.ndarray, xshape, kernel: int, stride: int, pad: int, out_hw):
    n, c, h, w = xshape
    ho, wo = out_hw
    dxp = np.zeros((n, c, h + 2 * pad, w + 2 * pad))
    d4 = dcols.reshape(n, c, kernel * kernel, ho * wo)
    for i in range(kernel):
        for j in range(kernel):
            dxp[:, :, i : i + stride * ho : stride, j : j + stride * wo : stride] += d4[
                :, :, i * kernel + j, :
            ].reshape(n, c, ho, wo)
    return dxp[:, :, pad : pad + h, pad : pad + w]


def _forward(net: JointNetwork, images: np.ndarray, keep_cache: bool):
    spec = net.spec
    x = images.reshape(-1, 1, spec.input_height, spec.input_width).astype(np.float64)
    cache = {"conv": [], "fc": []} if keep_cache else None

    for i, (out_ch, kernel) in enumerate(spec.conv_layers):
        pad = kernel // 2
        cols, out_hw = _im2col(x, kernel, 2, pad)
        w2 = net.params[f"conv{i}_w"].reshape(out_ch, -1)
        pre = np.matmul(w2, cols) + net.params[f"conv{i}_b"][None, :, None]
        act = np.maximum(pre, 0.0)
        if keep_cache:
            cache["conv"].append({"x_shape": x.shape, "cols": cols, "pre": pre, "out_hw": out_hw})
        x = act.reshape(x.shape[0], out_ch, *out_hw)

    flat = x.reshape(x.shape[0], -1)
    h = flat
    for i in range(3):
        pre = h @ net.params[f"fc{i}_w"] + net.params[f"fc{i}_b"]
        act = np.maximum(pre, 0.0)
        if keep_cache:
            cache["fc"].append({"input": h, "pre": pre})
        h = act

    heads = {}
    for head in ("class", "pose", "proj"):
        heads[head] = h @ net.params[f"head_{head}_w"] + net.params[f"head_{head}_b"]
    if keep_cache:
        cache["head_input"] = h
        cache["flat_shape"] = x.shape
    pred = JointPrediction(heads["class"], heads["pose"], heads["proj"])
    return pred, cache


def forward(net: JointNetwork, images) -> JointPrediction:
    """Batched deterministic forward pass; accepts (h, w) or (n, h, w)."""
    images = np.asarray(images, dtype=np.float64)
    single = images.ndim == 2
    pred, _ = _forward(net, images[None] if single else images, keep_cache=False)
    if single:
        return JointPrediction(pred.class_logits[0], pred.pose[0], pred.projection[0])
    return pred


def softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def batch_arrays(samples):
    images = np.stack([s.depth for s in samples])
    classes = np.asarray([s.class_index for s in samples], dtype=np.int64)
    poses = np.stack([s.pose.axis_angle for s in samples])
    projections = np.stack([s.target_projection for s in samples])
    return images, classes, poses, projections


def loss_and_gradients(net: JointNetwork, samples, weights: LossWeights):
    """Weighted three-term loss and full-parameter gradients.

    L = wc * mean cross-entropy(softmax(class logits), target)
      + wo * mean ||pose - target||_2
      + wp * mean ||projection - target||_2
    """
    if len(samples) == 0:
        raise ValueError("batch must be non-empty")
    images, classes, poses, projections = batch_arrays(samples)
    n = images.shape[0]
    pred, cache = _forward(net, images, keep_cache=True)

    probs = softmax(pred.class_logits)
    ce = -np.log(np.maximum(probs[np.arange(n), classes], 1e-300))
    pose_diff = pred.pose - poses
    pose_norm = np.linalg.norm(pose_diff, axis=1)
    proj_diff = pred.projection - projections
    proj_norm = np.linalg.norm(proj_diff, axis=1)

    per_sample = weights.class_weight * ce + weights.pose_weight * pose_norm + weights.projection_weight * proj_norm
    bad = np.nonzero(~np.isfinite(per_sample))[0]
    if bad.size:
        raise TrainingDivergedError(f"non-finite loss at sample index {int(bad[0])}")
    loss = float(
        weights.class_weight * ce.mean()
        + weights.pose_weight * pose_norm.mean()
        + weights.projection_weight * proj_norm.mean()
    )

    onehot = np.zeros_like(probs)
    onehot[np.arange(n), classes] = 1.0
    d_class = weights.class_weight * (probs - onehot) / n
    safe_pose = np.where(pose_norm > 0, pose_norm, 1.0)[:, None]
    d_pose = weights.pose_weight * np.where(pose_norm[:, None] > 0, pose_diff / safe_pose, 0.0) / n
    safe_proj = np.where(proj_norm > 0, proj_norm, 1.0)[:, None]
    d_proj = weights.projection_weight * np.where(proj_norm[:, None] > 0, proj_diff / safe_proj, 0.0) / n

    grads = _backward(net, cache, d_class, d_pose, d_proj)
    return loss, grads


def _backward(net: JointNetwork, cache, d_class, d_pose, d_proj):
    spec = net.spec
    grads = {}
    h = cache["head_input"]
    d_h = np.zeros_like(h)
    for head, d_out in (("class", d_class), ("pose", d_pose), ("proj", d_proj)):
        grads[f"head_{head}_w"] = h.T @ d_out
        grads[f"head_{head}_b"] = d_out.sum(axis=0)
        d_h = d_h + d_out @ net.params[f"head_{head}_w"].T

    for i in reversed(range(3)):
        layer = cache["fc"][i]
        d_pre = d_h * (layer["pre"] > 0)
        grads[f"fc{i}_w"] = layer["input"].T @ d_pre
        grads[f"fc{i}_b"] = d_pre.sum(axis=0)
        d_h = d_pre @ net.params[f"fc{i}_w"].T

    d_x = d_h.reshape(cache["flat_shape"])
    for i in reversed(range(4)):
        layer = cache["conv"][i]
        out_ch, kernel = spec.conv_layers[i]
        pad = kernel // 2
        n = layer["x_shape"][0]
        d_act = d_x.reshape(n, out_ch, -1)
        d_pre = d_act * (layer["pre"] > 0)
        w2 = net.params[f"conv{i}_w"].reshape(out_ch, -1)
        grads[f"conv{i}_w"] = np.einsum("ncp,nkp->ck", d_pre, layer["cols"]).reshape(net.params[f"conv{i}_w"].shape)
        grads[f"conv{i}_b"] = d_pre.sum(axis=(0, 2))
        d_cols = np.matmul(w2.T, d_pre)
        d_x = _col2im(d_cols, layer["x_shape"], kernel, 2, pad, layer["out_hw"])
    return grads


@dataclass
class OptimizerConfig:
    learning_rate: float = 1e-2
    momentum: float = 0.9
    batch_size: int = 32
    epochs: int = 10
    seed: int = 0
    decay_points: tuple = (0.6, 0.8)  # epoch fractions where lr drops by decay_factor
    decay_factor: float = 0.1


def train(net: JointNetwork, samples, weights: LossWeights, cfg: OptimizerConfig):
    """Mini-batch momentum SGD with a fixed shuffle seed.

    Returns (trained network, per-epoch mean loss curve). Deterministic given
    the seed; batches reduce in iteration order.
    """
    if len(samples) == 0:
        raise ValueError("dataset must be non-empty")
    net = net.copy()
    rng = np.random.default_rng(cfg.seed)
    velocity = {k: np.zeros_like(v) for k, v in net.params.items()}
    drops = {max(0, int(cfg.epochs * p)) for p in cfg.decay_points}
    lr = cfg.learning_rate
    curve = []
    for epoch in range(cfg.epochs):
        if epoch in drops and epoch > 0:
            lr *= cfg.decay_factor
        order = rng.permutation(len(samples))
        losses = []
        for start in range(0, len(samples), cfg.batch_size):
            batch = [samples[i] for i in order[start : start + cfg.batch_size]]
            try:
                loss, grads = loss_and_gradients(net, batch, weights)
            except TrainingDivergedError as exc:
                raise TrainingDivergedError(
                    f"epoch {epoch}, batch {start // cfg.batch_size}: {exc}"
                ) from exc
            if not math.isfinite(loss):
                raise TrainingDivergedError(f"loss diverged at epoch {epoch}, batch {start // cfg.batch_size}")
            for key, g in grads.items():
                velocity[key] = cfg.momentum * velocity[key] - lr * g
                net.params[key] += velocity[key]
            losses.append(loss)
        curve.append(float(np.mean(losses)))
    return net, curve


def normalize_depth(depth: DepthImage) -> np.ndarray:
    """Standardize object pixels to zero mean / unit variance; background stays 0."""
    img = depth.depth
    mask = img > 0
    out = np.zeros_like(img)
    if mask.any():
        vals = img[mask]
        std = float(vals.std())
        out[mask] = (vals - float(vals.mean())) / (std if std > 1e-8 else 1.0)
    return out


@dataclass(frozen=True)
class InferenceResult:
    class_id: str
    posterior: np.ndarray
    rotation: Rotation
    completion: object
    coefficients: np.ndarray


def infer_joint(net: JointNetwork, depth: DepthImage, basis: SharedBasis) -> InferenceResult:
    """Single forward pass: argmax class, canonicalized pose, rebinarized completion."""
    pred = forward(net, normalize_depth(depth))
    posterior = softmax(pred.class_logits)
    class_index = int(np.argmax(posterior))
    class_id = basis.class_ids[class_index] if class_index < len(basis.class_ids) else str(class_index)
    rotation = canonicalize(pred.pose)
    completion = back_project(pred.projection, basis, binarize=True)
    return InferenceResult(class_id, posterior, rotation, completion, pred.projection.copy())
