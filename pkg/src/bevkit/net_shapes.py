"""Forward-only shape, parameter, FLOP, and memory accounting for the
two-stage detector, plus tiny reference forwards for the decoder fusion step
and the two heads.

Shape rules per layer kind (H, W, C) -> (H', W', C'):

    conv3x3 / conv1x1   ceil(H/s) x ceil(W/s) x out    (same padding)
    conv_transpose2x    2H x 2W x out                  (kernel 2, stride 2)
    concat              H x W x out                    (skip channels folded in)
    fc                  1 x 1 x out                    (flattens its input)
    crop_resize         s x s x C                      (s stored in `stride`)
    fuse_mean           H x W x C

Parameters: conv k*k -> k^2*Cin*Cout + Cout (k = 2 for the transpose),
fc -> Nin*Nout + Nout, everything else 0.  FLOPs use the multiply+add = 2
convention: conv -> 2*k^2*Cin*Cout*Hout*Wout (transpose counted on its input
grid, which equals its true multiply count at stride 2), fc -> 2*Nin*Nout,
everything else 0.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import MalformedInputError, ParameterError

LAYER_KINDS = (
    "conv3x3",
    "conv1x1",
    "conv_transpose2x",
    "concat",
    "fc",
    "crop_resize",
    "fuse_mean",
)

_KERNEL = {"conv3x3": 3, "conv1x1": 1, "conv_transpose2x": 2}

#: Totals reported for the full two-branch detector configuration; the sheet
#: below models a single branch plus heads, so these are context, not targets.
REFERENCE_PARAM_COUNT = 38_073_528
REFERENCE_FLOP_COUNT = 231_263_000_000


@dataclass(frozen=True)
class LayerSpec:
    kind: str
    in_channels: int
    out_channels: int
    stride: int = 1

    def __post_init__(self):
        if self.kind not in LAYER_KINDS:
            raise ParameterError(f"unknown layer kind {self.kind!r}")
        if self.in_channels < 1 or self.out_channels < 1:
            raise ParameterError(f"channels must be positive: {self}")
        if self.stride < 1:
            raise ParameterError(f"stride must be positive: {self}")


@dataclass(frozen=True)
class NetworkConfig:
    """Ordered layer lists for the feature extractor and the two heads.

    The decoder consumes the encoder output; both heads consume the decoder
    output.  Within a head, an fc layer whose input width matches an earlier
    layer's width (instead of the running one) starts a parallel sub-branch,
    which is how the two RPN branches and the three second-stage outputs are
    laid out sequentially.
    """

    encoder: tuple = ()
    decoder: tuple = ()
    rpn_head: tuple = ()
    second_stage_head: tuple = ()

    def branches(self):
        return (
            ("encoder", self.encoder),
            ("decoder", self.decoder),
            ("rpn_head", self.rpn_head),
            ("second_stage_head", self.second_stage_head),
        )

    def all_layers(self):
        for _, layers in self.branches():
            yield from layers


def default_network_config(input_channels: int = 6, n_classes: int = 2) -> NetworkConfig:
    """Halved VGG-16 encoder cut at conv4 (stride-2 convs standing in for the
    pools), a three-stage upsampling decoder back to full resolution at depth
    32, and the two fully connected heads."""
    conv = lambda cin, cout, s=1: LayerSpec("conv3x3", cin, cout, s)
    encoder = (
        conv(input_channels, 32), conv(32, 32),
        conv(32, 64, 2), conv(64, 64),
        conv(64, 128, 2), conv(128, 128), conv(128, 128),
        conv(128, 256, 2), conv(256, 256), conv(256, 256),
    )
    decoder = (
        LayerSpec("conv_transpose2x", 256, 128),
        LayerSpec("concat", 128, 256),  # skip from the 128-channel stage
        conv(256, 128),
        LayerSpec("conv_transpose2x", 128, 64),
        LayerSpec("concat", 64, 128),
        conv(128, 64),
        LayerSpec("conv_transpose2x", 64, 32),
        LayerSpec("concat", 32, 64),
        conv(64, 32),
    )
    rpn_head = (
        LayerSpec("conv1x1", 32, 1),  # bottleneck keeping per-anchor crops small
        LayerSpec("crop_resize", 1, 1, 3),
        LayerSpec("fuse_mean", 1, 1),
        LayerSpec("fc", 9, 256),
        LayerSpec("fc", 256, 2),
        LayerSpec("fc", 9, 256),
        LayerSpec("fc", 256, 6),
    )
    second_stage_head = (
        LayerSpec("crop_resize", 32, 32, 7),
        LayerSpec("fuse_mean", 32, 32),
        LayerSpec("fc", 7 * 7 * 32, 2048),
        LayerSpec("fc", 2048, 2048),
        LayerSpec("fc", 2048, 2048),
        LayerSpec("fc", 2048, 10),
        LayerSpec("fc", 2048, 2),
        LayerSpec("fc", 2048, n_classes),
    )
    return NetworkConfig(encoder, decoder, rpn_head, second_stage_head)


def propagate_branch(layers, input_shape):
    """Output (H, W, C) after each layer of one branch.

    Raises ParameterError on channel mismatches; fc layers may reattach to
    any previously seen width (parallel sub-branches).
    """
    h, w, c = (int(v) for v in input_shape)
    shapes = []
    seen_widths = {h * w * c, c}
    for layer in layers:
        kind = layer.kind
        if kind in ("conv3x3", "conv1x1"):
            if layer.in_channels != c:
                raise ParameterError(f"{kind} expects {layer.in_channels} channels, has {c}")
            h = -(-h // layer.stride)
            w = -(-w // layer.stride)
            c = layer.out_channels
        elif kind == "conv_transpose2x":
            if layer.in_channels != c:
                raise ParameterError(f"{kind} expects {layer.in_channels} channels, has {c}")
            h, w, c = 2 * h, 2 * w, layer.out_channels
        elif kind == "concat":
            if layer.in_channels != c:
                raise ParameterError(f"concat expects {layer.in_channels} channels, has {c}")
            if layer.out_channels < c:
                raise ParameterError("concat cannot shrink channels")
            c = layer.out_channels
        elif kind == "crop_resize":
            if layer.in_channels != c:
                raise ParameterError(f"crop_resize expects {layer.in_channels} channels, has {c}")
            h = w = layer.stride
            c = layer.out_channels
        elif kind == "fuse_mean":
            if layer.in_channels != c:
                raise ParameterError(f"fuse_mean expects {layer.in_channels} channels, has {c}")
            c = layer.out_channels
        elif kind == "fc":
            nin = h * w * c
            if layer.in_channels != nin:
                if layer.in_channels not in seen_widths:
                    raise ParameterError(
                        f"fc expects {layer.in_channels} inputs, flattened width is {nin}"
                    )
            h, w, c = 1, 1, layer.out_channels
        seen_widths.add(h * w * c)
        seen_widths.add(c)
        shapes.append((h, w, c))
    return shapes


def propagate_shapes(config: NetworkConfig, input_shape):
    """Per-branch output shapes for an (M, N, D) input; M, N must be /8-able."""
    m, n, d = (int(v) for v in input_shape)
    if m % 8 != 0 or n % 8 != 0:
        raise ParameterError(f"input spatial dims must be divisible by 8, got {m} x {n}")
    enc = propagate_branch(config.encoder, (m, n, d))
    enc_out = enc[-1] if enc else (m, n, d)
    dec = propagate_branch(config.decoder, enc_out)
    dec_out = dec[-1] if dec else enc_out
    return {
        "encoder": enc,
        "decoder": dec,
        "rpn_head": propagate_branch(config.rpn_head, dec_out),
        "second_stage_head": propagate_branch(config.second_stage_head, dec_out),
    }


def layer_parameters(layer: LayerSpec) -> int:
    if layer.kind in _KERNEL:
        k = _KERNEL[layer.kind]
        return k * k * layer.in_channels * layer.out_channels + layer.out_channels
    if layer.kind == "fc":
        return layer.in_channels * layer.out_channels + layer.out_channels
    return 0


def count_parameters(config: NetworkConfig) -> int:
    return sum(layer_parameters(layer) for layer in config.all_layers())


def count_flops(config: NetworkConfig, input_shape) -> int:
    """Total forward FLOPs (multiply+add = 2) at the given input size."""
    shapes = propagate_shapes(config, input_shape)
    in_shape = tuple(int(v) for v in input_shape)
    enc_out = shapes["encoder"][-1] if shapes["encoder"] else in_shape
    dec_out = shapes["decoder"][-1] if shapes["decoder"] else enc_out
    branch_inputs = {
        "encoder": in_shape,
        "decoder": enc_out,
        "rpn_head": dec_out,
        "second_stage_head": dec_out,
    }
    total = 0
    for name, layers in config.branches():
        prev_shape = branch_inputs[name]
        for layer, out_shape in zip(layers, shapes[name]):
            total += _layer_flops(layer, prev_shape, out_shape)
            prev_shape = out_shape
    return total


def layer_flops(layer: LayerSpec, in_shape, out_shape) -> int:
    """FLOPs for one layer given its input and output (H, W, C) shapes."""
    return _layer_flops(layer, in_shape, out_shape)


def _layer_flops(layer: LayerSpec, in_shape, out_shape) -> int:
    if layer.kind in ("conv3x3", "conv1x1"):
        k = _KERNEL[layer.kind]
        h, w, _ = out_shape
        return 2 * k * k * layer.in_channels * layer.out_channels * h * w
    if layer.kind == "conv_transpose2x":
        k = _KERNEL[layer.kind]
        h, w, _ = in_shape
        return 2 * k * k * layer.in_channels * layer.out_channels * h * w
    if layer.kind == "fc":
        return 2 * layer.in_channels * layer.out_channels
    return 0


def memory_estimate(n_rois: int, crop, depth: int, bytes_per_element: int) -> int:
    """Buffer bytes for per-ROI feature crops: n * h * w * depth * bytes."""
    h, w = (int(v) for v in crop)
    vals = (int(n_rois), h, w, int(depth), int(bytes_per_element))
    if any(v <= 0 for v in vals):
        raise ParameterError(f"all arguments must be positive, got {vals}")
    n, h, w, depth, bpe = vals
    return n * h * w * depth * bpe


# ---------------------------------------------------------------------------
# reference numeric forwards
# ---------------------------------------------------------------------------


@dataclass
class DecoderFuseWeights:
    up_kernel: np.ndarray  # (2, 2, C_low, C_up)
    up_bias: np.ndarray  # (C_up,)
    mix_kernel: np.ndarray  # (3, 3, C_up + C_skip, C_out)
    mix_bias: np.ndarray  # (C_out,)


def conv_transpose_2x(x: np.ndarray, kernel: np.ndarray, bias: np.ndarray) -> np.ndarray:
    """Kernel-2 stride-2 transposed convolution: exact 2x spatial upsizing."""
    h, w, cin = x.shape
    if kernel.shape[:3] != (2, 2, cin):
        raise ParameterError(f"kernel {kernel.shape} incompatible with input {x.shape}")
    cout = kernel.shape[3]
    out = np.empty((2 * h, 2 * w, cout), dtype=np.float64)
    for a in range(2):
        for b in range(2):
            out[a::2, b::2, :] = np.einsum("ijc,co->ijo", x, kernel[a, b])
    return out + bias


def conv2d_same(x: np.ndarray, kernel: np.ndarray, bias: np.ndarray) -> np.ndarray:
    """Stride-1 zero-padded convolution with an odd square kernel."""
    k = kernel.shape[0]
    if kernel.shape[1] != k or k % 2 != 1 or kernel.shape[2] != x.shape[2]:
        raise ParameterError(f"kernel {kernel.shape} incompatible with input {x.shape}")
    pad = k // 2
    xp = np.pad(x, ((pad, pad), (pad, pad), (0, 0)))
    h, w, _ = x.shape
    out = np.zeros((h, w, kernel.shape[3]), dtype=np.float64)
    for a in range(k):
        for b in range(k):
            out += np.einsum("ijc,co->ijo", xp[a : a + h, b : b + w], kernel[a, b])
    return out + bias


def decoder_fuse_forward(
    low: np.ndarray, skip: np.ndarray, weights: DecoderFuseWeights
) -> np.ndarray:
    """One decoder fusion stage: upsample 2x, concatenate the skip, mix 3x3.

    Purely linear (no activation), so superposition holds exactly.
    """
    low = np.asarray(low, dtype=np.float64)
    skip = np.asarray(skip, dtype=np.float64)
    if low.ndim != 3 or skip.ndim != 3:
        raise ParameterError("feature maps must be (H, W, C)")
    if skip.shape[0] != 2 * low.shape[0] or skip.shape[1] != 2 * low.shape[1]:
        raise ParameterError(
            f"skip spatial {skip.shape[:2]} must be twice the input {low.shape[:2]}"
        )
    up = conv_transpose_2x(low, np.asarray(weights.up_kernel, dtype=np.float64),
                           np.asarray(weights.up_bias, dtype=np.float64))
    cat = np.concatenate([up, skip], axis=2)
    return conv2d_same(cat, np.asarray(weights.mix_kernel, dtype=np.float64),
                       np.asarray(weights.mix_bias, dtype=np.float64))


@dataclass
class RpnHeadWeights:
    """Two parallel fc-256 branches over a flattened fused crop."""

    obj_hidden: np.ndarray  # (Nin, 256)
    obj_hidden_bias: np.ndarray
    obj_out: np.ndarray  # (256, 2)
    obj_out_bias: np.ndarray
    reg_hidden: np.ndarray  # (Nin, 256)
    reg_hidden_bias: np.ndarray
    reg_out: np.ndarray  # (256, 6)
    reg_out_bias: np.ndarray


def _fc(x, w, b, relu=False):
    w = np.asarray(w, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if x.shape[0] != w.shape[0] or w.shape[1] != b.shape[0]:
        raise ParameterError(f"fc shapes {x.shape} @ {w.shape} + {b.shape} mismatch")
    y = x @ w + b
    return np.maximum(y, 0.0) if relu else y


def rpn_head_forward(fused: np.ndarray, weights: RpnHeadWeights):
    """(objectness[2], offsets[6]) from a fused crop; hidden layers use ReLU."""
    x = np.asarray(fused, dtype=np.float64).reshape(-1)
    obj = _fc(_fc(x, weights.obj_hidden, weights.obj_hidden_bias, relu=True),
              weights.obj_out, weights.obj_out_bias)
    reg = _fc(_fc(x, weights.reg_hidden, weights.reg_hidden_bias, relu=True),
              weights.reg_out, weights.reg_out_bias)
    if obj.shape != (2,) or reg.shape != (6,):
        raise ParameterError(f"head outputs {obj.shape}/{reg.shape}, expected (2,)/(6,)")
    return obj, reg


@dataclass
class SecondStageWeights:
    """Shared fc-2048 trunk (three layers) with box/orientation/class outputs."""

    trunk: tuple  # three (Nin, 2048)/(2048, 2048) weight matrices
    trunk_bias: tuple
    box_out: np.ndarray  # (2048, 10)
    box_bias: np.ndarray
    orientation_out: np.ndarray  # (2048, 2)
    orientation_bias: np.ndarray
    class_out: np.ndarray  # (2048, C)
    class_bias: np.ndarray


def second_stage_head_forward(fused: np.ndarray, weights: SecondStageWeights):
    """(box[10], orientation[2], class_scores[C]) from a fused 7x7 crop."""
    x = np.asarray(fused, dtype=np.float64).reshape(-1)
    if len(weights.trunk) != 3 or len(weights.trunk_bias) != 3:
        raise ParameterError("trunk must hold exactly three fc layers")
    for w, b in zip(weights.trunk, weights.trunk_bias):
        x = _fc(x, w, b, relu=True)
    box = _fc(x, weights.box_out, weights.box_bias)
    orientation = _fc(x, weights.orientation_out, weights.orientation_bias)
    scores = _fc(x, weights.class_out, weights.class_bias)
    if box.shape != (10,) or orientation.shape != (2,):
        raise ParameterError(
            f"head outputs {box.shape}/{orientation.shape}, expected (10,)/(2,)"
        )
    return box, orientation, scores


def smooth_l1(x) -> float:
    """0.5 x^2 inside |x| < 1, |x| - 0.5 outside; summed over array inputs."""
    v = np.asarray(x, dtype=np.float64)
    if not np.isfinite(v).all():
        raise ParameterError("smooth_l1 input must be finite")
    a = np.abs(v)
    return float(np.sum(np.where(a < 1.0, 0.5 * v * v, a - 0.5)))


def cross_entropy(probabilities, target: int) -> float:
    """-log p[target] for a strictly positive probability vector summing to 1."""
    p = np.asarray(probabilities, dtype=np.float64).reshape(-1)
    if p.size == 0 or not np.isfinite(p).all() or (p <= 0).any():
        raise ParameterError("probabilities must be finite and strictly positive")
    if abs(float(p.sum()) - 1.0) > 1e-6:
        raise ParameterError(f"probabilities sum to {p.sum()}, not 1")
    if not 0 <= target < p.size:
        raise ParameterError(f"target {target} outside [0, {p.size})")
    return float(-math.log(p[target]))


# ---------------------------------------------------------------------------
# flat key-value serialization
# ---------------------------------------------------------------------------


def config_to_text(config: NetworkConfig) -> str:
    lines = []
    for name, layers in config.branches():
        for i, layer in enumerate(layers):
            lines.append(
                f"{name}.{i} = {layer.kind} {layer.in_channels} "
                f"{layer.out_channels} {layer.stride}"
            )
    return "\n".join(lines) + ("\n" if lines else "")


def config_from_text(text: str) -> NetworkConfig:
    branches: dict[str, dict[int, LayerSpec]] = {
        "encoder": {}, "decoder": {}, "rpn_head": {}, "second_stage_head": {}
    }
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise MalformedInputError(f"line {lineno}: expected 'branch.i = kind in out stride'")
        key, value = (part.strip() for part in line.split("=", 1))
        try:
            name, idx = key.rsplit(".", 1)
            kind, cin, cout, stride = value.split()
            spec = LayerSpec(kind, int(cin), int(cout), int(stride))
            branches[name][int(idx)] = spec
        except (KeyError, ValueError, ParameterError) as exc:
            raise MalformedInputError(f"line {lineno}: {exc}") from exc
    ordered = {}
    for name, entries in branches.items():
        if sorted(entries) != list(range(len(entries))):
            raise MalformedInputError(f"branch {name} has non-contiguous layer indices")
        ordered[name] = tuple(entries[i] for i in range(len(entries)))
    return NetworkConfig(**ordered)
