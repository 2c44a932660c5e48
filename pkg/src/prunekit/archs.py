"""Builders for the three reference CIFAR-10 architectures.

VGG-16 here is the common CIFAR variant: 13 conv layers (each followed by
BN and ReLU), max pools after convs 2/4/7/10/13, and a single linear head
512 -> 10 operating on the 1x1 feature map left by the final pool. The
frequently cited CIFAR VGG reference code uses this single-linear head, and
it is the variant whose conv-dominated totals match the expected cost
figures; a two-FC head would add ~0.26M parameters.

ResNet-56/110: a 3->16 stem conv, three stages of residual blocks (9 per
stage for depth 56, 18 for depth 110) with widths 16/32/64 at spatial sizes
32/16/8, identity shortcuts only, global average pool and a 64 -> 10 linear
head. Stage-transition blocks downsample by a strided conv; their shortcut
is a zero-padding construct the bundle graph cannot express, so those two
blocks per network are encoded as plain chains without an `add` node. Cost
totals are unaffected (shortcuts are FLOP-free here) and the structural
protection rule still shields every block's second conv, whose output feeds
the next block's shortcut.
"""

from __future__ import annotations

import numpy as np

from .bundle import ArchGraph, LayerSpec, ModelBundle, TensorRecord

VGG16_CHANNELS = [64, 64, 128, 128, 256, 256, 256, 512, 512, 512, 512, 512, 512]
_VGG16_POOL_AFTER = {2, 4, 7, 10, 13}


class _Builder:
    def __init__(self):
        self.layers: list[LayerSpec] = []
        self.edges: list[tuple[str, str]] = []
        self.tensor_shapes: dict[str, tuple[int, ...]] = {}
        self._tail: str | None = None

    def add_layer(self, spec: LayerSpec, after: list[str] | None = None) -> str:
        self.layers.append(spec)
        preds = after if after is not None else ([self._tail] if self._tail else [])
        for p in preds:
            self.edges.append((p, spec.id))
        self._tail = spec.id
        return spec.id

    def conv(self, lid, cin, cout, k, spatial_in, stride=1, padding=1, stage=None):
        s_out = tuple((s + 2 * padding - k) // stride + 1 for s in spatial_in)
        self.tensor_shapes[f"{lid}.weight"] = (cout, cin, k, k)
        self.add_layer(LayerSpec(
            id=lid, kind="conv2d", weight_refs=[f"{lid}.weight"],
            hyperparams={"kernel": k, "stride": stride, "padding": padding,
                         "in_channels": cin, "out_channels": cout, "bias": False},
            in_spatial=tuple(spatial_in), out_spatial=s_out, stage=stage,
        ))
        return s_out

    def bn(self, lid, channels, spatial, stage=None):
        refs = [f"{lid}.{part}" for part in ("scale", "shift", "mean", "var")]
        for r in refs:
            self.tensor_shapes[r] = (channels,)
        self.add_layer(LayerSpec(
            id=lid, kind="batchnorm", weight_refs=refs,
            hyperparams={"channels": channels, "eps": 1e-5},
            in_spatial=tuple(spatial), out_spatial=tuple(spatial), stage=stage,
        ))

    def simple(self, lid, kind, spatial_in, spatial_out=None, stage=None, **hp):
        self.add_layer(LayerSpec(
            id=lid, kind=kind, hyperparams=hp,
            in_spatial=tuple(spatial_in) if spatial_in else None,
            out_spatial=tuple(spatial_out or spatial_in) if (spatial_out or spatial_in) else None,
            stage=stage,
        ))

    def linear(self, lid, cin, cout, bias=True):
        self.tensor_shapes[f"{lid}.weight"] = (cout, cin)
        refs = [f"{lid}.weight"]
        if bias:
            self.tensor_shapes[f"{lid}.bias"] = (cout,)
            refs.append(f"{lid}.bias")
        self.add_layer(LayerSpec(
            id=lid, kind="linear", weight_refs=refs,
            hyperparams={"in_features": cin, "out_features": cout, "bias": bias},
        ))

    def finish(self, metadata: dict, include_tensors: bool, seed=None) -> ModelBundle:
        graph = ArchGraph(layers=self.layers, edges=self.edges,
                          inputs=[self.layers[0].id], outputs=[self.layers[-1].id])
        if not include_tensors:
            for layer in graph.layers:
                layer.weight_refs = []
            return ModelBundle(tensors={}, graph=graph, metadata=metadata)
        rng = np.random.default_rng(seed)
        tensors = {}
        for name in sorted(self.tensor_shapes):
            shape = self.tensor_shapes[name]
            if name.endswith(".scale"):
                data = 1.0 + 0.1 * rng.standard_normal(shape)
            elif name.endswith(".var"):
                data = 0.5 + np.abs(rng.standard_normal(shape))
            elif name.endswith((".shift", ".mean", ".bias")):
                data = 0.1 * rng.standard_normal(shape)
            else:
                data = rng.standard_normal(shape) / np.sqrt(np.prod(shape[1:]) or 1)
            tensors[name] = TensorRecord(name, data.astype(np.float32))
        return ModelBundle(tensors=tensors, graph=graph, metadata=metadata)


def build_vgg16(conv_channels: list[int] | None = None, num_classes: int = 10,
                include_tensors: bool = False, seed: int | None = 0) -> ModelBundle:
    """CIFAR VGG-16. Pass pruned conv_channels to model a slimmed network."""
    chans = list(conv_channels or VGG16_CHANNELS)
    if len(chans) != 13:
        raise ValueError("VGG-16 takes exactly 13 conv channel counts")
    b = _Builder()
    spatial, cin, pools = (32, 32), 3, 0
    for i, cout in enumerate(chans, start=1):
        spatial = b.conv(f"conv_{i}", cin, cout, 3, spatial)
        b.bn(f"bn_{i}", cout, spatial)
        b.simple(f"relu_{i}", "relu", spatial)
        if i in _VGG16_POOL_AFTER:
            pools += 1
            out = tuple(s // 2 for s in spatial)
            b.simple(f"pool_{pools}", "maxpool", spatial, out, window=2, stride=2)
            spatial = out
        cin = cout
    b.simple("flatten", "flatten", spatial, spatial)
    b.linear("fc", cin * spatial[0] * spatial[1], num_classes)
    meta = {"model": "vgg16-cifar", "head": "single-linear-512x10",
            "conv_channels": ",".join(map(str, chans))}
    return b.finish(meta, include_tensors, seed)


def build_resnet(depth: int, num_classes: int = 10, include_tensors: bool = False,
                 seed: int | None = 0,
                 block_mid: dict[str, int] | None = None) -> ModelBundle:
    """CIFAR ResNet-56 or -110 with identity shortcuts.

    block_mid optionally overrides the first conv's output width per block
    (keys like "s1b3"), which is the only width a pruned network changes.
    """
    if depth not in (56, 110):
        raise ValueError("supported depths: 56, 110")
    blocks = (depth - 2) // 6
    widths = [16, 32, 64]
    b = _Builder()
    spatial = (32, 32)
    b.conv("stem", 3, 16, 3, spatial)
    b.bn("stem_bn", 16, spatial)
    b.simple("stem_relu", "relu", spatial)
    cin = 16
    for s, width in enumerate(widths, start=1):
        stage = f"stage{s}"
        for blk in range(1, blocks + 1):
            name = f"s{s}b{blk}"
            transition = s > 1 and blk == 1
            stride = 2 if transition else 1
            mid = (block_mid or {}).get(name, width)
            block_in = b._tail
            sp = b.conv(f"{name}c1", cin, mid, 3, spatial, stride=stride, stage=stage)
            b.bn(f"{name}bn1", mid, sp, stage=stage)
            b.simple(f"{name}relu1", "relu", sp, stage=stage)
            b.conv(f"{name}c2", mid, width, 3, sp, stage=stage)
            b.bn(f"{name}bn2", width, sp, stage=stage)
            if not transition:
                # identity shortcut from the block input
                b.add_layer(LayerSpec(id=f"{name}add", kind="add", in_spatial=sp,
                                      out_spatial=sp, stage=stage),
                            after=[block_in, f"{name}bn2"])
            b.simple(f"{name}relu2", "relu", sp, stage=stage)
            spatial, cin = sp, width
    b.simple("gap", "avgpool", spatial, (1, 1), window=spatial[0], stride=spatial[0])
    b.simple("flatten", "flatten", (1, 1), (1, 1))
    b.linear("fc", cin, num_classes)
    meta = {"model": f"resnet{depth}-cifar", "shortcut": "identity",
            "note": "stage-transition blocks encoded without add (zero-pad "
                    "shortcut not representable); costs unaffected"}
    return b.finish(meta, include_tensors, seed)


def build_named(name: str, include_tensors: bool = False, seed: int | None = 0) -> ModelBundle:
    if name == "vgg16":
        return build_vgg16(include_tensors=include_tensors, seed=seed)
    if name == "resnet56":
        return build_resnet(56, include_tensors=include_tensors, seed=seed)
    if name == "resnet110":
        return build_resnet(110, include_tensors=include_tensors, seed=seed)
    raise ValueError(f"unknown architecture {name!r}")
