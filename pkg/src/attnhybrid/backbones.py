"""Backbone construction, attention surgery, parameter accounting, and model I/O.

Recipes name a backbone (ResNet18, EfficientNet-B0, ViT-tiny, or their
desk-scale "mini" width variants), the block seams where global attention is
inserted, and whether the final block's convolutions are replaced by local
attention (LA) or wrapped in embedded local attention (ELA).

Construction is deterministic: the plain backbone always consumes the same
random stream regardless of later surgery, so a modified model shares
bitwise-identical weights with its unmodified twin built from the same seed —
that is what makes the identity-at-initialization property checkable end to
end.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field, replace as dc_replace

import numpy as np

from .attention import (
    AttentionConfig,
    EmbeddedLocalAttention,
    GlobalAttention,
    LocalAttention,
    MultiHeadSelfAttention,
)
from .nn import BatchNorm2d, Conv2d, LayerNorm, Linear, Module, ModuleList, Parameter, _publish
from .tensor import (
    Tensor,
    concat,
    gelu,
    global_avg_pool,
    max_pool2d,
    relu,
    sigmoid,
    swish,
)

__all__ = [
    "ArchitectureRecipe",
    "build",
    "replace_last_block",
    "count_parameters",
    "save_model",
    "load_model",
    "recipe_to_text",
    "recipe_from_text",
    "table_rows",
    "BACKBONES",
]

BACKBONES = ("resnet18", "efficientnet_b0", "vit_tiny", "mini_resnet", "mini_efficientnet")
_CONV_BACKBONES = ("resnet18", "efficientnet_b0", "mini_resnet", "mini_efficientnet")
_REPLACE_MODES = ("none", "LA", "ELA")


@dataclass
class ArchitectureRecipe:
    """What to build: backbone, attention seams, replacement mode, head size."""

    backbone: str
    attach_ga_after: tuple[int, ...] = ()
    replace_last_block_with: str = "none"
    class_count: int = 3

    def block_count(self) -> int:
        if self.backbone in ("resnet18", "mini_resnet"):
            return 4
        if self.backbone in ("efficientnet_b0", "mini_efficientnet"):
            return 7
        return 0

    def validate(self) -> "ArchitectureRecipe":
        if self.backbone not in BACKBONES:
            raise ValueError(
                f"unknown backbone {self.backbone!r}; expected one of {BACKBONES}"
            )
        if self.class_count < 1:
            raise ValueError(f"class_count must be >= 1, got {self.class_count}")
        if self.replace_last_block_with not in _REPLACE_MODES:
            raise ValueError(
                f"replace_last_block_with must be one of {_REPLACE_MODES}, "
                f"got {self.replace_last_block_with!r}"
            )
        if self.backbone == "vit_tiny":
            if self.attach_ga_after:
                raise ValueError("GA insertion applies to convolutional backbones only")
            if self.replace_last_block_with != "none":
                raise ValueError("block replacement applies to convolutional backbones only")
        else:
            valid = range(1, self.block_count() + 1)
            bad = [i for i in self.attach_ga_after if i not in valid]
            if bad:
                raise ValueError(
                    f"attach_ga_after indices {bad} outside valid blocks "
                    f"1..{self.block_count()} of {self.backbone}"
                )
            if len(set(self.attach_ga_after)) != len(self.attach_ga_after):
                raise ValueError("attach_ga_after indices must be unique")
        return self


# ---------------------------------------------------------------------------
# ResNet
# ---------------------------------------------------------------------------


class BasicBlock(Module):
    """Two 3x3 convolutions with batch norm and a (possibly projected) skip."""

    def __init__(self, cin: int, cout: int, stride: int, rng: np.random.Generator):
        super().__init__()
        self.stride = stride
        self.out_channels = cout
        self.conv1 = Conv2d(cin, cout, 3, rng, stride=stride, padding=1, bias=False)
        self.bn1 = BatchNorm2d(cout)
        self.conv2 = Conv2d(cout, cout, 3, rng, padding=1, bias=False)
        self.bn2 = BatchNorm2d(cout)
        if stride != 1 or cin != cout:
            self.down_conv = Conv2d(cin, cout, 1, rng, stride=stride, bias=False)
            self.down_bn = BatchNorm2d(cout)
        else:
            self.down_conv = None
            self.down_bn = None

    def forward(self, x: Tensor) -> Tensor:
        out = relu(self.bn1(self.conv1(x)))
        out = self.bn2(self.conv2(out))
        short = x if self.down_conv is None else self.down_bn(self.down_conv(x))
        return relu(out + short)


class ResNet(Module):
    """ResNet18 topology: stem + 4 blocks of 2 residual units + linear head.

    The mini variant divides widths by 8 and uses a 3x3 stride-1 stem without
    the max pool, sized for 32x32 inputs.
    """

    def __init__(self, class_count: int, rng: np.random.Generator, mini: bool = False):
        super().__init__()
        widths = (8, 16, 32, 64) if mini else (64, 128, 256, 512)
        self.mini = mini
        self.widths = widths
        self.class_count = class_count
        self.default_input_size = 32 if mini else 224
        if mini:
            self.stem_conv = Conv2d(3, widths[0], 3, rng, stride=1, padding=1, bias=False)
        else:
            self.stem_conv = Conv2d(3, widths[0], 7, rng, stride=2, padding=3, bias=False)
        self.stem_bn = BatchNorm2d(widths[0])
        stages = []
        cin = widths[0]
        for si, cout in enumerate(widths):
            stride = 1 if si == 0 else 2
            stage = ModuleList([
                BasicBlock(cin, cout, stride, rng),
                BasicBlock(cout, cout, 1, rng),
            ])
            stages.append(stage)
            cin = cout
        self.stages = ModuleList(stages)
        self.head = Linear(widths[-1], class_count, rng)

    def block_channels(self, index: int) -> int:
        return self.widths[index - 1]

    def forward(self, x: Tensor) -> Tensor:
        x = relu(self.stem_bn(self.stem_conv(x)))
        if not self.mini:
            x = max_pool2d(x, 3, 2, padding=1)
        _publish("stem", x)
        for i, stage in enumerate(self.stages, start=1):
            for block in stage:
                x = block(x)
            _publish(f"block{i}", x)
            ga = getattr(self, f"ga{i}", None)
            if ga is not None:
                x = ga(x)
                _publish(f"ga{i}", x)
        return self.head(global_avg_pool(x))

    def replaceable_convs(self):
        """The spatial convolutions of the final block, with their strides."""
        last = self.stages[len(self.stages) - 1]
        out = []
        for unit in last:
            out.append((unit, "conv1", unit.conv1.in_channels, unit.conv1.out_channels,
                        unit.conv1.stride))
            out.append((unit, "conv2", unit.conv2.in_channels, unit.conv2.out_channels,
                        unit.conv2.stride))
        return out


# ---------------------------------------------------------------------------
# EfficientNet
# ---------------------------------------------------------------------------


class SqueezeExcite(Module):
    def __init__(self, channels: int, se_channels: int, rng: np.random.Generator):
        super().__init__()
        self.reduce = Conv2d(channels, se_channels, 1, rng, bias=True)
        self.expand = Conv2d(se_channels, channels, 1, rng, bias=True)

    def forward(self, x: Tensor) -> Tensor:
        n, c = x.shape[0], x.shape[1]
        s = global_avg_pool(x).reshape(n, c, 1, 1)
        s = sigmoid(self.expand(swish(self.reduce(s))))
        return x * s


class MBConv(Module):
    """Inverted residual block: expand, depthwise, squeeze-excite, project."""

    def __init__(
        self,
        cin: int,
        cout: int,
        expand_ratio: int,
        kernel: int,
        stride: int,
        rng: np.random.Generator,
    ):
        super().__init__()
        mid = cin * expand_ratio
        self.in_channels = cin
        self.out_channels = cout
        self.stride = stride
        if expand_ratio != 1:
            self.expand_conv = Conv2d(cin, mid, 1, rng, bias=False)
            self.expand_bn = BatchNorm2d(mid)
        else:
            self.expand_conv = None
            self.expand_bn = None
        self.dw_conv = Conv2d(
            mid, mid, kernel, rng, stride=stride, padding=kernel // 2,
            groups=mid, bias=False,
        )
        self.dw_bn = BatchNorm2d(mid)
        self.se = SqueezeExcite(mid, max(1, cin // 4), rng)
        self.project_conv = Conv2d(mid, cout, 1, rng, bias=False)
        self.project_bn = BatchNorm2d(cout)
        self.use_skip = stride == 1 and cin == cout

    def forward(self, x: Tensor) -> Tensor:
        out = x
        if self.expand_conv is not None:
            out = swish(self.expand_bn(self.expand_conv(out)))
        out = swish(self.dw_bn(self.dw_conv(out)))
        out = self.se(out)
        out = self.project_bn(self.project_conv(out))
        if self.use_skip:
            out = out + x
        return out


# (expand_ratio, kernel, stride, out_channels, repeats) per stage
_B0_STAGES = (
    (1, 3, 1, 16, 1),
    (6, 3, 2, 24, 2),
    (6, 5, 2, 40, 2),
    (6, 3, 2, 80, 3),
    (6, 5, 1, 112, 3),
    (6, 5, 2, 192, 4),
    (6, 3, 1, 320, 1),
)


def _even_eighth(width: int) -> int:
    w = (width + 7) // 8
    return w + (w % 2)


class EfficientNet(Module):
    """EfficientNet-B0 topology: stem + 7 MBConv stages + 1x1 head conv.

    The mini variant divides every width by 8 (rounded up to the next even
    number so attention bottlenecks stay integral), runs one block per stage,
    and uses a stride-1 stem for 32x32 inputs.
    """

    def __init__(self, class_count: int, rng: np.random.Generator, mini: bool = False):
        super().__init__()
        self.mini = mini
        self.class_count = class_count
        self.default_input_size = 32 if mini else 224
        if mini:
            stem = _even_eighth(32)
            head = _even_eighth(1280)
            stages = [
                (e, k, s, _even_eighth(c), 1) for (e, k, s, c, _) in _B0_STAGES
            ]
            stem_stride = 1
        else:
            stem, head = 32, 1280
            stages = list(_B0_STAGES)
            stem_stride = 2
        self.stage_specs = stages
        self.stem_conv = Conv2d(3, stem, 3, rng, stride=stem_stride, padding=1, bias=False)
        self.stem_bn = BatchNorm2d(stem)
        built = []
        cin = stem
        for (expand, kernel, stride, cout, repeats) in stages:
            blocks = []
            for r in range(repeats):
                blocks.append(
                    MBConv(cin, cout, expand, kernel, stride if r == 0 else 1, rng)
                )
                cin = cout
            built.append(ModuleList(blocks))
        self.stages = ModuleList(built)
        self.head_conv = Conv2d(cin, head, 1, rng, bias=False)
        self.head_bn = BatchNorm2d(head)
        self.head = Linear(head, class_count, rng)

    def block_channels(self, index: int) -> int:
        return self.stage_specs[index - 1][3]

    def forward(self, x: Tensor) -> Tensor:
        x = swish(self.stem_bn(self.stem_conv(x)))
        _publish("stem", x)
        for i, stage in enumerate(self.stages, start=1):
            for block in stage:
                x = block(x)
            _publish(f"block{i}", x)
            ga = getattr(self, f"ga{i}", None)
            if ga is not None:
                x = ga(x)
                _publish(f"ga{i}", x)
        x = swish(self.head_bn(self.head_conv(x)))
        _publish("features", x)
        return self.head(global_avg_pool(x))


# ---------------------------------------------------------------------------
# ViT
# ---------------------------------------------------------------------------


class TransformerBlock(Module):
    def __init__(self, dim: int, heads: int, mlp_dim: int, rng: np.random.Generator):
        super().__init__()
        self.norm1 = LayerNorm(dim)
        self.attn = MultiHeadSelfAttention(dim, heads, rng)
        self.norm2 = LayerNorm(dim)
        self.fc1 = Linear(dim, mlp_dim, rng)
        self.fc2 = Linear(mlp_dim, dim, rng)

    def forward(self, x: Tensor) -> Tensor:
        x = x + self.attn(self.norm1(x))
        return x + self.fc2(gelu(self.fc1(self.norm2(x))))


class ViT(Module):
    """Tiny vision transformer: 16x16 patches, dim 192, 12 layers, 3 heads."""

    def __init__(self, class_count: int, rng: np.random.Generator):
        super().__init__()
        self.dim = 192
        self.depth = 12
        self.heads = 3
        self.patch = 16
        self.image_size = 224
        self.class_count = class_count
        self.default_input_size = 224
        n_patches = (self.image_size // self.patch) ** 2
        self.patch_embed = Conv2d(3, self.dim, self.patch, rng, stride=self.patch, bias=True)
        self.cls_token = Parameter(rng.normal(0.0, 0.02, (1, 1, self.dim)))
        self.pos_embed = Parameter(rng.normal(0.0, 0.02, (1, n_patches + 1, self.dim)))
        self.blocks = ModuleList(
            [TransformerBlock(self.dim, self.heads, self.dim * 4, rng) for _ in range(self.depth)]
        )
        self.norm = LayerNorm(self.dim)
        self.head = Linear(self.dim, class_count, rng)

    def forward(self, x: Tensor) -> Tensor:
        n, c, h, w = x.shape
        if h != self.image_size or w != self.image_size:
            raise ValueError(
                f"this transformer expects {self.image_size}x{self.image_size} inputs, "
                f"got {h}x{w}"
            )
        patches = self.patch_embed(x)  # (N, D, 14, 14)
        g = patches.shape[2]
        tokens = patches.reshape(n, self.dim, g * g).transpose(0, 2, 1)
        cls = self.cls_token + Tensor(np.zeros((n, 1, self.dim)))
        tokens = concat([cls, tokens], axis=1) + self.pos_embed
        for block in self.blocks:
            tokens = block(tokens)
        tokens = self.norm(tokens)
        return self.head(tokens[:, 0])


# ---------------------------------------------------------------------------
# build / surgery / accounting
# ---------------------------------------------------------------------------


def _rng_for(seed: int, stream: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(seed), int(stream)]))


def build(
    recipe: ArchitectureRecipe,
    seed: int = 0,
    config: AttentionConfig | None = None,
):
    """Construct the model graph a recipe describes.

    The plain backbone draws from a stream keyed by (seed, backbone) only;
    GA blocks and LA/ELA replacements draw from separate streams, so models
    sharing a seed share all unmodified weights bitwise.
    """
    recipe.validate()
    if config is None:
        config = AttentionConfig(kind="GA")
    config.validate()
    base_rng = _rng_for(seed, 0)
    if recipe.backbone in ("resnet18", "mini_resnet"):
        model = ResNet(recipe.class_count, base_rng, mini=recipe.backbone == "mini_resnet")
    elif recipe.backbone in ("efficientnet_b0", "mini_efficientnet"):
        model = EfficientNet(
            recipe.class_count, base_rng, mini=recipe.backbone == "mini_efficientnet"
        )
    else:
        model = ViT(recipe.class_count, base_rng)
    model.backbone_kind = recipe.backbone
    model.build_seed = int(seed)
    model.attention_config = config
    model.recipe = dc_replace(recipe, attach_ga_after=tuple(recipe.attach_ga_after))

    if recipe.attach_ga_after:
        ga_rng = _rng_for(seed, 1)
        for idx in sorted(recipe.attach_ga_after):
            channels = model.block_channels(idx)
            if channels % config.channel_reduction != 0:
                raise ValueError(
                    f"channel_reduction={config.channel_reduction} does not divide "
                    f"block {idx} width {channels}"
                )
            setattr(
                model,
                f"ga{idx}",
                GlobalAttention(
                    channels, ga_rng,
                    channel_reduction=config.channel_reduction,
                    out_proj_init=config.out_proj_init,
                ),
            )
    if recipe.replace_last_block_with != "none":
        replace_last_block(model, recipe.replace_last_block_with, config)
    return model


def replace_last_block(graph, mode: str, config: AttentionConfig | None = None):
    """Swap the final block's convolutions for LA, or wrap them in ELA.

    ResNet: each 3x3 convolution of block 4 is replaced (LA) or wrapped (ELA);
    batch norms and the 1x1 skip projection are retained. EfficientNet: each
    MBConv of stage 7 is replaced (or wrapped) as one unit.
    """
    if mode not in ("LA", "ELA"):
        raise ValueError(f"replacement mode must be LA or ELA, got {mode!r}")
    if isinstance(graph, ViT):
        raise ValueError("block replacement applies to convolutional backbones only")
    if config is None:
        config = getattr(graph, "attention_config", None) or AttentionConfig(kind=mode)
    config.validate()
    rng = _rng_for(getattr(graph, "build_seed", 0), 2)

    def make_la(cin, cout, stride):
        return LocalAttention(
            cin, cout, rng, k=config.k, heads=config.heads,
            rel_pos=config.rel_pos, pool_stride=stride,
        )

    if isinstance(graph, ResNet):
        for unit, name, cin, cout, stride in graph.replaceable_convs():
            la = make_la(cin, cout, stride)
            if mode == "LA":
                setattr(unit, name, la)
            else:
                original = getattr(unit, name)
                setattr(
                    unit, name,
                    EmbeddedLocalAttention(original, la, rng, out_proj_init=config.out_proj_init),
                )
    else:
        last = graph.stages[len(graph.stages) - 1]
        for i, block in enumerate(list(last)):
            la = make_la(block.in_channels, block.out_channels, block.stride)
            if mode == "LA":
                replacement = la
            else:
                replacement = EmbeddedLocalAttention(
                    block, la, rng, out_proj_init=config.out_proj_init
                )
            last._modules[str(i)] = replacement
            last._items[i] = replacement
    graph.recipe = dc_replace(graph.recipe, replace_last_block_with=mode)
    return graph


def count_parameters(graph) -> int:
    """Total extent of all learnable tensors (running statistics excluded)."""
    return graph.num_parameters()


def node_list(graph) -> list[str]:
    """Structural fingerprint: one entry per module with its parameter shapes."""
    out = []
    for name, mod in graph.named_modules():
        shapes = ",".join(
            f"{pname}{tuple(p.data.shape)}" for pname, p in mod._params.items()
        )
        out.append(f"{name or 'root'}:{type(mod).__name__}({shapes})")
    return out


def attention_layers(graph) -> dict:
    """Named attention blocks that expose ``last_attention`` for visualization."""
    found = {}
    for name, mod in graph.named_modules():
        if isinstance(mod, (GlobalAttention, MultiHeadSelfAttention)):
            found[name] = mod
    return found


def table_rows(class_count: int = 3, seed: int = 0) -> list[dict]:
    """Parameter-count table: both conv backbones x 6 variants, plus ViT.

    Each row carries the absolute count, the count in millions, and the
    relative delta against the plain backbone.
    """
    rows = []
    variants = [
        ("base", (), "none"),
        ("+GA", None, "none"),
        ("+LA", (), "LA"),
        ("+GA+LA", None, "LA"),
        ("+ELA", (), "ELA"),
        ("+GA+ELA", None, "ELA"),
    ]
    ga_positions = {"resnet18": (1, 2), "efficientnet_b0": (2, 3)}
    for backbone in ("resnet18", "efficientnet_b0"):
        base_count = None
        for label, ga, mode in variants:
            ga_idx = ga_positions[backbone] if ga is None else ga
            model = build(
                ArchitectureRecipe(
                    backbone=backbone,
                    attach_ga_after=ga_idx,
                    replace_last_block_with=mode,
                    class_count=class_count,
                ),
                seed=seed,
            )
            count = count_parameters(model)
            if base_count is None:
                base_count = count
            rows.append(
                dict(
                    backbone=backbone,
                    variant=label,
                    parameters=count,
                    millions=count / 1e6,
                    delta_pct=100.0 * (count - base_count) / base_count,
                )
            )
    vit = build(ArchitectureRecipe(backbone="vit_tiny", class_count=class_count), seed=seed)
    count = count_parameters(vit)
    rows.append(
        dict(backbone="vit_tiny", variant="base", parameters=count,
             millions=count / 1e6, delta_pct=0.0)
    )
    return rows


# ---------------------------------------------------------------------------
# serialization
# ---------------------------------------------------------------------------

_MAGIC = b"ATNHYBGR"
_VERSION = 1


def recipe_to_text(recipe: ArchitectureRecipe, config: AttentionConfig) -> str:
    lines = [
        f"backbone = {recipe.backbone}",
        f"attach_ga_after = {','.join(str(i) for i in recipe.attach_ga_after)}",
        f"replace_last_block_with = {recipe.replace_last_block_with}",
        f"class_count = {recipe.class_count}",
        f"k = {config.k}",
        f"heads = {config.heads}",
        f"channel_reduction = {config.channel_reduction}",
        f"rel_pos = {'true' if config.rel_pos else 'false'}",
        f"out_proj_init = {config.out_proj_init}",
    ]
    return "\n".join(lines) + "\n"


def recipe_from_text(text: str) -> tuple[ArchitectureRecipe, AttentionConfig]:
    pairs = {}
    for line in text.splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ValueError(f"malformed recipe line {line!r} (expected key = value)")
        key, _, value = line.partition("=")
        pairs[key.strip()] = value.strip()
    if "backbone" not in pairs:
        raise ValueError("recipe is missing the 'backbone' key")
    ga_raw = pairs.get("attach_ga_after", "")
    ga = tuple(int(v) for v in ga_raw.split(",") if v.strip()) if ga_raw else ()
    recipe = ArchitectureRecipe(
        backbone=pairs["backbone"],
        attach_ga_after=ga,
        replace_last_block_with=pairs.get("replace_last_block_with", "none"),
        class_count=int(pairs.get("class_count", 3)),
    ).validate()
    kind = recipe.replace_last_block_with if recipe.replace_last_block_with != "none" else "GA"
    config = AttentionConfig(
        kind=kind,
        k=int(pairs.get("k", 7)),
        heads=int(pairs.get("heads", 4)),
        channel_reduction=int(pairs.get("channel_reduction", 2)),
        rel_pos=pairs.get("rel_pos", "true").lower() in ("true", "1", "yes"),
        out_proj_init=pairs.get("out_proj_init", "zero"),
    ).validate()
    return recipe, config


def save_model(graph, path) -> None:
    """Serialize recipe + every parameter/buffer as named float64 records."""
    recipe_blob = recipe_to_text(graph.recipe, graph.attention_config).encode("utf-8")
    state = graph.state_dict()
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<I", _VERSION))
        fh.write(struct.pack("<q", graph.build_seed))
        fh.write(struct.pack("<I", len(recipe_blob)))
        fh.write(recipe_blob)
        fh.write(struct.pack("<Q", len(state)))
        for name, arr in state.items():
            blob = name.encode("utf-8")
            fh.write(struct.pack("<I", len(blob)))
            fh.write(blob)
            fh.write(struct.pack("<B", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def _read_exact(fh, n: int, what: str) -> bytes:
    blob = fh.read(n)
    if len(blob) != n:
        raise ValueError(f"model file truncated while reading {what}")
    return blob


def load_model(path):
    """Rebuild a saved model; parameters round-trip bitwise."""
    with open(path, "rb") as fh:
        magic = _read_exact(fh, 8, "magic")
        if magic != _MAGIC:
            raise ValueError(
                f"not a model file (bad magic {magic!r}; expected {_MAGIC!r})"
            )
        (version,) = struct.unpack("<I", _read_exact(fh, 4, "version"))
        if version != _VERSION:
            raise ValueError(f"unsupported model file version {version} (expected {_VERSION})")
        (seed,) = struct.unpack("<q", _read_exact(fh, 8, "seed"))
        (rlen,) = struct.unpack("<I", _read_exact(fh, 4, "recipe length"))
        recipe_text = _read_exact(fh, rlen, "recipe").decode("utf-8")
        (n_records,) = struct.unpack("<Q", _read_exact(fh, 8, "record count"))
        state = {}
        for _ in range(n_records):
            (nlen,) = struct.unpack("<I", _read_exact(fh, 4, "record name length"))
            name = _read_exact(fh, nlen, "record name").decode("utf-8")
            (ndim,) = struct.unpack("<B", _read_exact(fh, 1, "record rank"))
            shape = struct.unpack(f"<{ndim}Q", _read_exact(fh, 8 * ndim, "record shape"))
            count = int(np.prod(shape)) if ndim else 1
            raw = _read_exact(fh, 8 * count, f"record data for {name}")
            state[name] = np.frombuffer(raw, dtype="<f8").reshape(shape).copy()
        trailing = fh.read(1)
        if trailing:
            raise ValueError("model file has trailing bytes after the last record")
    recipe, config = recipe_from_text(recipe_text)
    graph = build(recipe, seed=seed, config=config)
    graph.load_state_dict(state)
    return graph
