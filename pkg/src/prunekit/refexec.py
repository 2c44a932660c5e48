"""Naive reference forward pass over a bundle.

Correctness-first test oracle: convolution is a direct summation with
float64 accumulation, one output element at a time. Deliberately slow;
use toy-sized networks.
"""

from __future__ import annotations

import numpy as np

from .bundle import LayerSpec, ModelBundle


class ExecutionError(Exception):
    """Shape or structure failure at a named layer."""


def _conv2d(x: np.ndarray, w: np.ndarray, bias, stride: int, padding: int) -> np.ndarray:
    cin, hin, win = x.shape
    cout, cin_w, kh, kw = w.shape
    if cin != cin_w:
        raise ValueError(f"conv input has {cin} channels, kernel expects {cin_w}")
    xp = np.zeros((cin, hin + 2 * padding, win + 2 * padding), dtype=np.float64)
    xp[:, padding : padding + hin, padding : padding + win] = x
    hout = (hin + 2 * padding - kh) // stride + 1
    wout = (win + 2 * padding - kw) // stride + 1
    w64 = w.astype(np.float64)
    out = np.zeros((cout, hout, wout), dtype=np.float64)
    for oc in range(cout):
        for oy in range(hout):
            for ox in range(wout):
                patch = xp[:, oy * stride : oy * stride + kh, ox * stride : ox * stride + kw]
                out[oc, oy, ox] = np.sum(w64[oc] * patch)
    if bias is not None:
        out += bias.astype(np.float64)[:, None, None]
    return out


def _pool(x: np.ndarray, window: int, stride: int, mode: str) -> np.ndarray:
    c, h, w = x.shape
    hout = (h - window) // stride + 1
    wout = (w - window) // stride + 1
    out = np.zeros((c, hout, wout), dtype=np.float64)
    for oy in range(hout):
        for ox in range(wout):
            patch = x[:, oy * stride : oy * stride + window, ox * stride : ox * stride + window]
            out[:, oy, ox] = patch.max(axis=(1, 2)) if mode == "max" else patch.mean(axis=(1, 2))
    return out


def _apply(layer: LayerSpec, inputs: list[np.ndarray], bundle: ModelBundle) -> np.ndarray:
    hp = layer.hyperparams
    if layer.kind == "add":
        if len(inputs) != 2:
            raise ValueError(f"add node has {len(inputs)} inputs")
        if inputs[0].shape != inputs[1].shape:
            raise ValueError(f"add shape mismatch {inputs[0].shape} vs {inputs[1].shape}")
        return inputs[0] + inputs[1]
    if len(inputs) != 1:
        raise ValueError(f"expected a single input, got {len(inputs)}")
    x = inputs[0]

    if layer.kind == "conv2d":
        w = bundle.tensors[layer.weight_refs[0]].data
        bias = bundle.tensors[layer.weight_refs[1]].data if len(layer.weight_refs) > 1 else None
        return _conv2d(x, w, bias, hp.get("stride", 1), hp.get("padding", 0))
    if layer.kind == "batchnorm":
        scale, shift, mean, var = (bundle.tensors[r].data.astype(np.float64)
                                   for r in layer.weight_refs)
        eps = hp.get("eps", 1e-5)
        return ((x - mean[:, None, None]) / np.sqrt(var[:, None, None] + eps)
                * scale[:, None, None] + shift[:, None, None])
    if layer.kind == "relu":
        return np.maximum(x, 0.0)
    if layer.kind in ("maxpool", "avgpool"):
        window = hp.get("window", 2)
        return _pool(x, window, hp.get("stride", window),
                     "max" if layer.kind == "maxpool" else "avg")
    if layer.kind == "flatten":
        return x.reshape(-1)  # row-major: channel-major feature order
    if layer.kind == "linear":
        w = bundle.tensors[layer.weight_refs[0]].data.astype(np.float64)
        y = w @ x
        if len(layer.weight_refs) > 1:
            y = y + bundle.tensors[layer.weight_refs[1]].data.astype(np.float64)
        return y
    raise ValueError(f"unsupported kind {layer.kind}")


def forward(bundle: ModelBundle, x: np.ndarray) -> np.ndarray:
    """Evaluate the bundle on one input of shape [channels, height, width]."""
    graph = bundle.graph
    acts: dict[str, np.ndarray] = {}
    value = np.asarray(x, dtype=np.float64)
    for lid in graph.topo_order():
        layer = graph.layer(lid)
        preds = graph.predecessors(lid)
        inputs = [acts[p] for p in preds] if preds else [value]
        try:
            acts[lid] = _apply(layer, inputs, bundle)
        except (ValueError, KeyError) as exc:
            raise ExecutionError(f"layer {lid}: {exc}") from exc
    if len(graph.outputs) != 1:
        raise ExecutionError(f"expected one output layer, graph has {graph.outputs}")
    return acts[graph.outputs[0]]
