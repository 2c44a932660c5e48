"""Kernel-matrix view of a conv layer: one flattened filter per column.

A conv kernel [out, in, kH, kW] becomes a p x n matrix with p = k*k*in and
n = out. Column i is filter i flattened in (in_channel, kernel_row,
kernel_column) order, which is exactly the row-major storage order, so the
view is a reshape, not a permutation.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .bundle import ModelBundle

FLATTEN_ORDER = "in_channel-major, then kernel-row, then kernel-column"


@dataclass
class FilterMatrix:
    layer_id: str
    in_channels: int
    kernel: int
    columns: np.ndarray  # shape (p, n), float32
    flatten_order: str = FLATTEN_ORDER

    @property
    def p(self) -> int:
        return self.columns.shape[0]

    @property
    def n(self) -> int:
        return self.columns.shape[1]


def kernel_matrix(bundle: ModelBundle, layer_id: str) -> FilterMatrix:
    """Flatten each filter of a conv2d layer into a column."""
    layer = bundle.graph.layer(layer_id)
    if layer.kind != "conv2d":
        raise TypeError(f"layer {layer_id!r} is {layer.kind}, not conv2d")
    weights = bundle.tensors[layer.weight_refs[0]].data
    out_ch, in_ch, kh, kw = weights.shape
    return FilterMatrix(
        layer_id=layer_id,
        in_channels=in_ch,
        kernel=kh,
        columns=weights.reshape(out_ch, in_ch * kh * kw).T.copy(),
    )


def unflatten(matrix: FilterMatrix, keep: list[int]) -> np.ndarray:
    """Rebuild a conv kernel tensor from the kept columns, in keep order."""
    n = matrix.n
    prev = -1
    for idx in keep:
        if not 0 <= idx < n:
            raise IndexError(f"keep index {idx} outside [0, {n})")
        if idx <= prev:
            raise ValueError("keep indices must be strictly increasing")
        prev = idx
    cols = matrix.columns[:, keep].T
    return cols.reshape(len(keep), matrix.in_channels, matrix.kernel, matrix.kernel).copy()
