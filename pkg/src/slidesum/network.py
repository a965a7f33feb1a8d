"""Spatio-temporal residual network: 7 convolutional + 4 fully connected layers.

The conv stack is one stem convolution followed by three residual blocks of
two convolutions each; max pooling follows the stem and every block.  A
block's shortcut is a pure identity, zero-padded across channels when the
block widens, so zeroing the branch parameters reduces the block to its
shortcut exactly.  The head is four fully connected layers ending in the
three category logits.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass

import numpy as np

from .layers import Conv3d, Linear, MaxPool3d, ReLU, ResidualAdd, softmax, softmax_cross_entropy
from .rng import SplitMix64
from .tensor import ConvParams, ShapeError, Tensor, _as_triple, as_tensor, conv_output_axis

MAGIC = b"STRN1\n"
WEIGHT_DTYPE = "f32le"


class WeightsFormatError(ValueError):
    """A weights file violates the container format."""


class BadMagicError(WeightsFormatError):
    """Leading magic bytes are not STRN1."""


class LengthMismatchError(WeightsFormatError):
    """Header-declared buffer sizes disagree with the payload length."""


class ConfigMismatchError(WeightsFormatError):
    """Declared tensors do not match the embedded network config."""


@dataclass(frozen=True)
class ConvSpec:
    out_channels: int
    kernel: tuple[int, int, int] = (3, 3, 3)
    stride: tuple[int, int, int] = (1, 1, 1)
    padding: tuple[int, int, int] = (1, 1, 1)

    def __post_init__(self):
        object.__setattr__(self, "kernel", _as_triple(self.kernel, "kernel"))
        object.__setattr__(self, "stride", _as_triple(self.stride, "stride"))
        object.__setattr__(self, "padding", _as_triple(self.padding, "padding"))


@dataclass(frozen=True)
class PoolSpec:
    window: tuple[int, int, int] = (2, 2, 2)
    stride: tuple[int, int, int] | None = None

    def __post_init__(self):
        object.__setattr__(self, "window", _as_triple(self.window, "window"))
        object.__setattr__(
            self, "stride", _as_triple(self.stride, "stride") if self.stride else self.window
        )


@dataclass(frozen=True)
class NetworkConfig:
    """Architecture description; shapes of every parameter follow from it."""

    name: str
    input_shape: tuple[int, int, int, int]  # (channels, frames, height, width)
    stem: ConvSpec
    blocks: tuple[tuple[ConvSpec, ConvSpec], ...]
    pools: tuple[PoolSpec, ...]  # one after the stem, one after each block
    fc_widths: tuple[int, ...]
    init_seed: int = 0

    @property
    def conv_layer_count(self) -> int:
        return 1 + 2 * len(self.blocks)

    @property
    def fc_layer_count(self) -> int:
        return len(self.fc_widths)

    @property
    def num_categories(self) -> int:
        return self.fc_widths[-1]

    def validate(self, enforce_counts: bool = True) -> None:
        if len(self.pools) != len(self.blocks) + 1:
            raise ShapeError(
                f"need {len(self.blocks) + 1} pool stages, got {len(self.pools)}"
            )
        if enforce_counts and (self.conv_layer_count != 7 or self.fc_layer_count != 4):
            raise ShapeError(
                f"preset conformance requires 7 conv and 4 fc layers, got "
                f"{self.conv_layer_count} conv / {self.fc_layer_count} fc"
            )
        if self.fc_widths[-1] != 3:
            raise ShapeError(f"final fc width must be 3, got {self.fc_widths[-1]}")
        self.feature_shape()  # raises if the chain degenerates
        flat = self.flatten_size()
        if flat < 1:
            raise ShapeError("flattened feature size must be >= 1")

    def _after_conv(self, spatial, spec: ConvSpec):
        return tuple(
            conv_output_axis(spatial[i], spec.kernel[i], spec.stride[i], spec.padding[i])
            for i in range(3)
        )

    def _after_pool(self, spatial, spec: PoolSpec):
        out = []
        for i in range(3):
            if spec.window[i] > spatial[i]:
                raise ShapeError(f"pool window {spec.window} larger than feature {spatial}")
            out.append((spatial[i] - spec.window[i]) // spec.stride[i] + 1)
        return tuple(out)

    def feature_shape(self) -> tuple[int, int, int, int]:
        """(channels, depth, height, width) entering the fully connected head."""
        channels = self.input_shape[0]
        spatial = tuple(self.input_shape[1:])
        spatial = self._after_conv(spatial, self.stem)
        channels = self.stem.out_channels
        spatial = self._after_pool(spatial, self.pools[0])
        for i, (c1, c2) in enumerate(self.blocks):
            s = self._after_conv(spatial, c1)
            s = self._after_conv(s, c2)
            if s != spatial:
                raise ShapeError(
                    f"block {i + 1} branch changes spatial dims {spatial} -> {s}; "
                    "the identity shortcut requires equal dims"
                )
            if channels > c2.out_channels:
                raise ShapeError(
                    f"block {i + 1} shrinks channels {channels} -> {c2.out_channels}; "
                    "zero-pad shortcut requires growth or equality"
                )
            channels = c2.out_channels
            spatial = self._after_pool(spatial, self.pools[i + 1])
        return (channels, *spatial)

    def flatten_size(self) -> int:
        return int(np.prod(self.feature_shape()))

    def parameter_plan(self) -> list[tuple[str, tuple[int, ...]]]:
        """Ordered (name, shape) for every parameter tensor."""
        plan: list[tuple[str, tuple[int, ...]]] = []
        in_ch = self.input_shape[0]

        def conv_entry(prefix: str, cin: int, spec: ConvSpec) -> int:
            plan.append((f"{prefix}.w", (spec.out_channels, cin, *spec.kernel)))
            plan.append((f"{prefix}.b", (spec.out_channels,)))
            return spec.out_channels

        in_ch = conv_entry("stem", in_ch, self.stem)
        for i, (c1, c2) in enumerate(self.blocks, start=1):
            mid = conv_entry(f"block{i}.conv1", in_ch, c1)
            in_ch = conv_entry(f"block{i}.conv2", mid, c2)
        fin = self.flatten_size()
        for j, width in enumerate(self.fc_widths, start=1):
            plan.append((f"fc{j}.w", (width, fin)))
            plan.append((f"fc{j}.b", (width,)))
            fin = width
        return plan

    def to_dict(self) -> dict:
        def conv_d(c: ConvSpec):
            return {
                "out_channels": c.out_channels,
                "kernel": list(c.kernel),
                "stride": list(c.stride),
                "padding": list(c.padding),
            }

        return {
            "name": self.name,
            "input_shape": list(self.input_shape),
            "stem": conv_d(self.stem),
            "blocks": [[conv_d(a), conv_d(b)] for a, b in self.blocks],
            "pools": [{"window": list(p.window), "stride": list(p.stride)} for p in self.pools],
            "fc_widths": list(self.fc_widths),
            "init_seed": self.init_seed,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "NetworkConfig":
        def conv_s(d):
            return ConvSpec(
                out_channels=int(d["out_channels"]),
                kernel=tuple(d["kernel"]),
                stride=tuple(d["stride"]),
                padding=tuple(d["padding"]),
            )

        return cls(
            name=str(doc["name"]),
            input_shape=tuple(int(v) for v in doc["input_shape"]),
            stem=conv_s(doc["stem"]),
            blocks=tuple((conv_s(a), conv_s(b)) for a, b in doc["blocks"]),
            pools=tuple(
                PoolSpec(window=tuple(p["window"]), stride=tuple(p["stride"]))
                for p in doc["pools"]
            ),
            fc_widths=tuple(int(w) for w in doc["fc_widths"]),
            init_seed=int(doc["init_seed"]),
        )


def paper_preset(init_seed: int = 0) -> NetworkConfig:
    """Full-size configuration: 16-frame 112x112 volumes, channels 16/32/64/64."""
    return NetworkConfig(
        name="paper",
        input_shape=(1, 16, 112, 112),
        stem=ConvSpec(16),
        blocks=(
            (ConvSpec(32), ConvSpec(32)),
            (ConvSpec(64), ConvSpec(64)),
            (ConvSpec(64), ConvSpec(64)),
        ),
        pools=(PoolSpec(), PoolSpec(), PoolSpec(), PoolSpec()),
        fc_widths=(512, 128, 32, 3),
        init_seed=init_seed,
    )


def tiny_preset(init_seed: int = 0) -> NetworkConfig:
    """Reduced widths with the same 7-conv/4-fc topology; minutes on a CPU."""
    return NetworkConfig(
        name="tiny",
        input_shape=(1, 8, 32, 32),
        stem=ConvSpec(4),
        blocks=(
            (ConvSpec(8), ConvSpec(8)),
            (ConvSpec(8), ConvSpec(8)),
            (ConvSpec(8), ConvSpec(8)),
        ),
        pools=(PoolSpec(), PoolSpec(), PoolSpec(), PoolSpec(window=(1, 2, 2))),
        fc_widths=(64, 32, 16, 3),
        init_seed=init_seed,
    )


PRESETS = {"paper": paper_preset, "tiny": tiny_preset}


class Network:
    """A config plus conforming weights, with forward/backward over volume batches."""

    def __init__(self, config: NetworkConfig, weights: dict[str, Tensor]) -> None:
        config.validate(enforce_counts=False)
        plan = config.parameter_plan()
        expected = dict(plan)
        if list(weights.keys()) != [name for name, _ in plan]:
            raise ShapeError("weights do not list exactly the configured parameters in order")
        for name, tensor in weights.items():
            if tensor.shape != expected[name]:
                raise ShapeError(
                    f"weight {name} has shape {tensor.shape}, config expects {expected[name]}"
                )
            if not np.all(np.isfinite(tensor.data)):
                raise ValueError(f"weight {name} contains non-finite values")
        self.config = config
        self.weights = weights
        self._relu = ReLU()
        self._residual = ResidualAdd()
        self._rebind_layers()

    def _rebind_layers(self) -> None:
        w = self.weights
        self._stem = Conv3d(w["stem.w"], w["stem.b"], ConvParams(self.config.stem.stride, self.config.stem.padding))
        self._block_convs = []
        for i, (c1, c2) in enumerate(self.config.blocks, start=1):
            conv1 = Conv3d(w[f"block{i}.conv1.w"], w[f"block{i}.conv1.b"], ConvParams(c1.stride, c1.padding))
            conv2 = Conv3d(w[f"block{i}.conv2.w"], w[f"block{i}.conv2.b"], ConvParams(c2.stride, c2.padding))
            self._block_convs.append((conv1, conv2))
        self._pools = [MaxPool3d(p.window, p.stride) for p in self.config.pools]
        self._fcs = [
            Linear(w[f"fc{j}.w"], w[f"fc{j}.b"]) for j in range(1, len(self.config.fc_widths) + 1)
        ]

    @property
    def conv_layer_count(self) -> int:
        return self.config.conv_layer_count

    @property
    def fc_layer_count(self) -> int:
        return self.config.fc_layer_count

    @property
    def parameter_count(self) -> int:
        return sum(t.size for t in self.weights.values())

    def summary(self) -> list[str]:
        lines = [f"network {self.config.name}: input {self.config.input_shape}"]
        for name, shape in self.config.parameter_plan():
            lines.append(f"  {name}: {shape}")
        lines.append(
            f"  totals: {self.conv_layer_count} conv layers, "
            f"{self.fc_layer_count} fc layers, {self.parameter_count} parameters"
        )
        return lines

    def _check_batch(self, batch: Tensor) -> np.ndarray:
        batch = as_tensor(batch)
        if batch.ndim != 5 or tuple(batch.shape[1:]) != tuple(self.config.input_shape):
            raise ShapeError(
                f"batch shape {batch.shape} does not match input {self.config.input_shape}"
            )
        return batch.data

    def _forward_conv_stack(self, x: np.ndarray, record=None):
        """Shared conv trunk; returns flattened features and backward tape."""
        tape = []
        t = Tensor(x)
        y, cache = self._stem.forward_cached(t)
        tape.append(("stem", self._stem, cache))
        y, cache = self._relu.forward_cached(y)
        tape.append(("stem.relu", self._relu, cache))
        y, cache = self._pools[0].forward_cached(y)
        tape.append(("pool0", self._pools[0], cache))
        if record is not None:
            record["pool0"] = y
        for i, (conv1, conv2) in enumerate(self._block_convs, start=1):
            block_in = y
            branch, cache = conv1.forward_cached(block_in)
            tape.append((f"block{i}.conv1", conv1, cache))
            branch, cache = self._relu.forward_cached(branch)
            tape.append((f"block{i}.relu", self._relu, cache))
            branch, cache = conv2.forward_cached(branch)
            tape.append((f"block{i}.conv2", conv2, cache))
            y, cache = self._residual.forward_cached(block_in, branch)
            tape.append((f"block{i}.add", self._residual, cache))
            if record is not None:
                record[f"block{i}.in"] = block_in
                record[f"block{i}.add"] = y
            y, cache = self._pools[i].forward_cached(y)
            tape.append((f"pool{i}", self._pools[i], cache))
            if record is not None:
                record[f"pool{i}"] = y
        feat_shape = y.shape
        flat = Tensor(y.data.reshape(y.shape[0], -1))
        return flat, feat_shape, tape

    def _forward_head(self, flat: Tensor, tape, record=None):
        y = flat
        last = len(self._fcs) - 1
        for j, fc in enumerate(self._fcs):
            y, cache = fc.forward_cached(y)
            tape.append((f"fc{j + 1}", fc, cache))
            if j < last:
                y, cache = self._relu.forward_cached(y)
                tape.append((f"fc{j + 1}.relu", self._relu, cache))
            if record is not None:
                record[f"fc{j + 1}"] = y
        return y

    def forward(self, batch: Tensor, trace: dict | None = None) -> Tensor:
        """Probability rows over (unchanged, switch, transition) per volume."""
        x = self._check_batch(batch)
        flat, _, tape = self._forward_conv_stack(x, record=trace)
        logits = self._forward_head(flat, tape, record=trace)
        probs = Tensor(softmax(logits.data.astype(np.float64)).astype(logits.dtype))
        if trace is not None:
            trace["logits"] = logits
            trace["probs"] = probs
        return probs

    def loss(self, batch: Tensor, targets, category_weights=None) -> float:
        x = self._check_batch(batch)
        flat, _, tape = self._forward_conv_stack(x)
        logits = self._forward_head(flat, tape)
        value, _, _ = softmax_cross_entropy(logits, targets, category_weights)
        return value

    def backward(
        self, batch: Tensor, targets, category_weights=None
    ) -> tuple[float, dict[str, Tensor]]:
        """Loss plus exact gradients for every weight, keyed like ``weights``."""
        x = self._check_batch(batch)
        flat, feat_shape, tape = self._forward_conv_stack(x)
        logits = self._forward_head(flat, tape)
        loss, _, dlogits = softmax_cross_entropy(logits, targets, category_weights)

        grads: dict[str, Tensor] = {}
        dy = dlogits
        residual_pending: Tensor | None = None
        for name, layer, cache in reversed(tape):
            if isinstance(layer, ResidualAdd):
                (d_short, d_branch), _ = layer.backward(dy, cache)
                residual_pending = d_short
                dy = d_branch
                continue
            dx, layer_grads = layer.backward(dy, cache)
            for pname, g in layer_grads.items():
                grads[f"{name}.{pname}"] = g
            dy = dx
            if name.endswith(".conv1") and residual_pending is not None:
                # branch gradient rejoins the shortcut at the block entrance
                dy = Tensor(dy.data + residual_pending.data)
                residual_pending = None
            if name == "fc1":
                dy = Tensor(dy.data.reshape(feat_shape))
        ordered = {name: grads[name] for name, _ in self.config.parameter_plan()}
        return loss, ordered


def build_network(config: NetworkConfig, enforce_counts: bool = True) -> Network:
    """Initialize weights: scaled normals (std = sqrt(2/fan_in)), zero biases,
    drawn in declared parameter order from a splitmix64 stream."""
    config.validate(enforce_counts=enforce_counts)
    gen = SplitMix64(config.init_seed)
    weights: dict[str, Tensor] = {}
    for name, shape in config.parameter_plan():
        if name.endswith(".b"):
            weights[name] = Tensor.zeros(shape)
        else:
            fan_in = int(np.prod(shape[1:]))
            std = float(np.sqrt(2.0 / fan_in))
            weights[name] = Tensor(
                gen.normals(int(np.prod(shape)), std=std).astype(np.float32).reshape(shape)
            )
    return Network(config, weights)


def to_precision(net: Network, precision: str) -> Network:
    """Clone with every weight cast; used to run verification in double."""
    return Network(net.config, {name: t.astype(precision) for name, t in net.weights.items()})


def network_grad_check(
    net: Network,
    batch: Tensor,
    targets,
    category_weights=None,
    eps: float = 1e-4,
    max_coords_per_tensor: int | None = 8,
    seed: int = 0,
) -> float:
    """Finite-difference check of the whole-network loss gradient in double
    precision; samples coordinates per weight tensor when a cap is given."""
    from .gradcheck import relative_error

    dnet = to_precision(net, "double")
    dbatch = as_tensor(batch).astype("double")
    _, grads = dnet.backward(dbatch, targets, category_weights)
    rng = np.random.default_rng(seed)
    worst = 0.0
    for name, tensor in dnet.weights.items():
        flat = tensor.data.reshape(-1)
        gflat = grads[name].data.reshape(-1)
        count = flat.size
        if max_coords_per_tensor is not None and count > max_coords_per_tensor:
            coords = rng.choice(count, size=max_coords_per_tensor, replace=False)
        else:
            coords = range(count)
        for i in coords:
            original = flat[i]
            flat[i] = original + eps
            plus = dnet.loss(dbatch, targets, category_weights)
            flat[i] = original - eps
            minus = dnet.loss(dbatch, targets, category_weights)
            flat[i] = original
            numeric = (plus - minus) / (2 * eps)
            worst = max(worst, relative_error(float(gflat[i]), numeric))
    return worst


def save_weights(net: Network, destination) -> None:
    """Write magic, little-endian header length, JSON header, then raw buffers."""
    tensors = [
        {"name": name, "shape": list(t.shape), "dtype": WEIGHT_DTYPE}
        for name, t in net.weights.items()
    ]
    header = json.dumps(
        {"config": net.config.to_dict(), "tensors": tensors}, separators=(",", ":")
    ).encode("utf-8")
    with open(destination, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(header)))
        fh.write(header)
        for t in net.weights.values():
            fh.write(np.ascontiguousarray(t.data, dtype="<f4").tobytes())


def load_weights(source) -> Network:
    with open(source, "rb") as fh:
        blob = fh.read()
    if blob[: len(MAGIC)] != MAGIC:
        raise BadMagicError(f"not a weights file: magic {blob[:6]!r}")
    offset = len(MAGIC)
    if len(blob) < offset + 4:
        raise LengthMismatchError("truncated before header length")
    (header_len,) = struct.unpack_from("<I", blob, offset)
    offset += 4
    if len(blob) < offset + header_len:
        raise LengthMismatchError("truncated header")
    try:
        header = json.loads(blob[offset:offset + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise WeightsFormatError(f"unreadable header: {exc}") from exc
    offset += header_len

    config = NetworkConfig.from_dict(header["config"])
    plan = config.parameter_plan()
    declared = [(t["name"], tuple(int(s) for s in t["shape"])) for t in header["tensors"]]
    if declared != plan:
        raise ConfigMismatchError("declared tensors do not match the embedded config")
    for t in header["tensors"]:
        if t["dtype"] != WEIGHT_DTYPE:
            raise WeightsFormatError(f"unsupported dtype {t['dtype']!r}")

    expected_bytes = sum(int(np.prod(shape)) for _, shape in plan) * 4
    if len(blob) - offset != expected_bytes:
        raise LengthMismatchError(
            f"payload holds {len(blob) - offset} bytes, header declares {expected_bytes}"
        )
    weights: dict[str, Tensor] = {}
    for name, shape in plan:
        count = int(np.prod(shape))
        arr = np.frombuffer(blob, dtype="<f4", count=count, offset=offset).reshape(shape)
        offset += count * 4
        weights[name] = Tensor(np.ascontiguousarray(arr, dtype=np.float32))
    return Network(config, weights)
