"""Local explanations: gradient class-activation maps and attention maps.

Both produce a ``Heatmap`` whose raw values stay in float; export performs
min-max normalization to the 0–255 integer range and writes binary PGM, so
identical inputs yield byte-identical files.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .attention import GlobalAttention, MultiHeadSelfAttention
from .backbones import ViT, attention_layers
from .imageops import bilinear_resize
from .netpbm import write_pgm
from .nn import capture_activations
from .tensor import Tensor, no_grad

__all__ = [
    "Heatmap",
    "grad_cam",
    "attention_map",
    "mean_heatmap",
    "export",
    "normalized_grid",
]


@dataclass
class Heatmap:
    """A single-channel explanation map plus how it was produced.

    ``bounds`` records the pre-normalization (min, max) once the map has been
    normalized for export.
    """

    values: np.ndarray
    method: str
    layer: str
    class_index: int | None = None
    bounds: tuple[float, float] | None = None


def _as_batched_input(image: np.ndarray, requires_grad: bool = False) -> Tensor:
    arr = np.asarray(image, dtype=np.float64)
    if arr.ndim == 3:
        arr = arr[None]
    if arr.ndim != 4 or arr.shape[0] != 1:
        raise ValueError(f"expected one CHW image, got shape {arr.shape}")
    return Tensor(arr, requires_grad=requires_grad)


def grad_cam(graph, image, target_class="predicted", layer: str | None = None) -> Heatmap:
    """Rectified channel-weighted activation map for one class score.

    Channel weights are the spatial means of the class-score gradient at the
    named layer; the weighted sum is clamped at zero and upsampled to the
    input resolution with corner-aligned bilinear interpolation. By default
    the map explains the predicted class.
    """
    x = _as_batched_input(image, requires_grad=True)
    graph.eval()
    graph.zero_grad()
    with capture_activations() as acts:
        logits = graph(x)
    if layer is None:
        layer = _default_cam_layer(graph, acts)
    if layer not in acts:
        spatial = sorted(n for n, a in acts.items() if a.ndim == 4)
        raise ValueError(f"unknown layer {layer!r}; spatial layers: {spatial}")
    act = acts[layer]
    if act.ndim != 4:
        raise ValueError(f"layer {layer!r} is not spatial (shape {act.shape})")
    if target_class == "predicted":
        cls = int(np.argmax(logits.data[0]))
    else:
        cls = int(target_class)
        if not 0 <= cls < logits.shape[1]:
            raise ValueError(f"class {cls} outside [0, {logits.shape[1]})")
    score = logits[0, cls]
    score.backward()
    if act.grad is None:
        raise ValueError(f"layer {layer!r} does not feed the class score")
    grad = act.grad[0]  # (C, h, w)
    weights = grad.mean(axis=(1, 2))
    cam = np.maximum((weights[:, None, None] * act.data[0]).sum(axis=0), 0.0)
    graph.zero_grad()
    h, w = x.shape[2], x.shape[3]
    return Heatmap(
        values=bilinear_resize(cam, h, w),
        method="gradcam",
        layer=layer,
        class_index=cls,
    )


def _default_cam_layer(graph, acts) -> str:
    if "features" in acts:
        return "features"
    blocks = sorted(
        (n for n in acts if n.startswith("block")), key=lambda n: int(n[5:])
    )
    if not blocks:
        raise ValueError(
            "graph published no spatial activations; name a layer explicitly"
        )
    return blocks[-1]


def attention_map(graph, image, ga_layer: str | None = None) -> Heatmap:
    """Mean over all queries of a block's attention rows, on the key grid.

    Every row is a probability distribution, so the mean sums to 1. For
    token attention the class token is dropped from the key axis and the map
    renormalized before reshaping to the patch grid; heads are averaged.
    """
    x = _as_batched_input(image)
    graph.eval()
    with no_grad():
        graph(x)
    layers = attention_layers(graph)
    if ga_layer is None:
        ga_layer = _default_attention_layer(graph, layers)
    if ga_layer not in layers:
        raise ValueError(
            f"layer {ga_layer!r} has no attention weights; available: {sorted(layers)}"
        )
    mod = layers[ga_layer]
    attn = mod.last_attention
    if isinstance(mod, GlobalAttention):
        mean_row = attn[0].mean(axis=0)  # (P,)
        h, w = mod.last_spatial
        values = mean_row.reshape(h, w)
    else:
        rows = attn[0].mean(axis=0)  # heads averaged -> (T, T)
        mean_row = rows.mean(axis=0)  # averaged over queries -> (T,)
        spatial = mean_row[1:]  # drop the class token from the key axis
        total = spatial.sum()
        if total > 0.0:
            spatial = spatial / total
        g = int(round(np.sqrt(spatial.size)))
        if g * g != spatial.size:
            raise ValueError(f"token count {spatial.size} is not a square grid")
        values = spatial.reshape(g, g)
    return Heatmap(values=values, method="attention", layer=ga_layer)


def _default_attention_layer(graph, layers: dict) -> str:
    if isinstance(graph, ViT):
        return f"blocks.{len(graph.blocks) - 1}.attn"
    if len(layers) == 1:
        return next(iter(layers))
    raise ValueError(
        f"multiple attention layers present ({sorted(layers)}); name one explicitly"
    )


def mean_heatmap(maps: list[Heatmap]) -> Heatmap:
    """Elementwise mean of the raw (pre-normalization) values."""
    if not maps:
        raise ValueError("mean_heatmap needs at least one map")
    first = maps[0]
    for m in maps[1:]:
        if m.values.shape != first.values.shape:
            raise ValueError(
                f"mixed resolutions: {m.values.shape} vs {first.values.shape}"
            )
        if m.method != first.method:
            raise ValueError(f"mixed methods: {m.method} vs {first.method}")
    stack = np.stack([m.values for m in maps])
    return Heatmap(values=stack.mean(axis=0), method=first.method, layer=first.layer)


def normalized_grid(heatmap: Heatmap) -> np.ndarray:
    """Min-max normalize to integers in [0, 255] (round half-up).

    A constant map has no usable range and normalizes to all 128. The
    pre-normalization bounds are recorded on the heatmap.
    """
    values = heatmap.values
    lo = float(values.min())
    hi = float(values.max())
    heatmap.bounds = (lo, hi)
    if hi > lo:
        scaled = (values - lo) / (hi - lo) * 255.0
        grid = np.floor(scaled + 0.5)
    else:
        grid = np.full(values.shape, 128.0)
    return np.clip(grid, 0, 255).astype(np.uint8)


def export(heatmap: Heatmap, path) -> np.ndarray:
    """Write the normalized map as binary greyscale PGM; returns the grid."""
    grid = normalized_grid(heatmap)
    write_pgm(path, grid)
    return grid
