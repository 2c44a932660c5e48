"""Neutral weight-bundle file: named float32 tensors plus an architecture graph.

File layout (little-endian throughout):

    bytes 0..3    magic b"NWB1"
    bytes 4..11   uint64 header length H
    bytes 12..12+H  UTF-8 JSON header:
        {"tensors": [{"name", "dtype": "f32", "shape", "offset", "nbytes"}, ...],
         "graph": {...}, "metadata": {...}, "crc32": <int over data section>}
    remainder     data section; offsets are relative to its start,
                  tensors are IEEE-754 float32, row-major.

Architecture-only files (empty tensor list) are valid and sufficient for
cost analysis.
"""

from __future__ import annotations

import json
import struct
import zlib
from dataclasses import dataclass, field

import numpy as np

MAGIC = b"NWB1"

LAYER_KINDS = {
    "conv2d", "batchnorm", "relu", "maxpool", "avgpool", "flatten", "linear", "add",
}


class BundleError(Exception):
    """Base class for bundle I/O failures."""


class FormatError(BundleError):
    """File does not look like a bundle (bad magic, unparseable header)."""


class CorruptionError(BundleError):
    """Structurally a bundle, but lengths/checksum do not add up."""


class UnsupportedError(BundleError):
    """Valid file using a construct this version does not handle."""


@dataclass
class TensorRecord:
    name: str
    data: np.ndarray  # float32, row-major

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def nbytes(self) -> int:
        return self.data.size * 4


@dataclass
class LayerSpec:
    id: str
    kind: str
    weight_refs: list[str] = field(default_factory=list)
    hyperparams: dict = field(default_factory=dict)
    in_spatial: tuple[int, int] | None = None
    out_spatial: tuple[int, int] | None = None
    stage: str | None = None


@dataclass
class ArchGraph:
    layers: list[LayerSpec]
    edges: list[tuple[str, str]]
    inputs: list[str]
    outputs: list[str]

    def layer(self, layer_id: str) -> LayerSpec:
        for l in self.layers:
            if l.id == layer_id:
                return l
        raise KeyError(layer_id)

    def predecessors(self, layer_id: str) -> list[str]:
        return [a for a, b in self.edges if b == layer_id]

    def successors(self, layer_id: str) -> list[str]:
        return [b for a, b in self.edges if a == layer_id]

    def topo_order(self) -> list[str]:
        """Layer ids in dependency order; raises ValueError on a cycle."""
        indeg = {l.id: 0 for l in self.layers}
        for _, b in self.edges:
            indeg[b] += 1
        ready = [i for i, d in sorted(indeg.items()) if d == 0]
        order = []
        while ready:
            node = ready.pop(0)
            order.append(node)
            for succ in self.successors(node):
                indeg[succ] -= 1
                if indeg[succ] == 0:
                    ready.append(succ)
        if len(order) != len(self.layers):
            raise ValueError("architecture graph has a cycle")
        return order


@dataclass
class ModelBundle:
    tensors: dict[str, TensorRecord]
    graph: ArchGraph
    metadata: dict[str, str] = field(default_factory=dict)


def bundles_equal(a: ModelBundle, b: ModelBundle) -> bool:
    """Structural and bit-exact tensor equality."""
    if set(a.tensors) != set(b.tensors):
        return False
    for name, rec in a.tensors.items():
        other = b.tensors[name]
        if rec.shape != other.shape or rec.data.tobytes() != other.data.tobytes():
            return False
    return graph_to_json(a.graph) == graph_to_json(b.graph) and a.metadata == b.metadata


# ---------------------------------------------------------------------------
# JSON (de)serialization of the graph


def graph_to_json(graph: ArchGraph) -> dict:
    return {
        "layers": [
            {
                "id": l.id,
                "kind": l.kind,
                "weight_refs": list(l.weight_refs),
                "hyperparams": dict(l.hyperparams),
                "in_spatial": list(l.in_spatial) if l.in_spatial else None,
                "out_spatial": list(l.out_spatial) if l.out_spatial else None,
                "stage": l.stage,
            }
            for l in graph.layers
        ],
        "edges": [[a, b] for a, b in graph.edges],
        "inputs": list(graph.inputs),
        "outputs": list(graph.outputs),
    }


def graph_from_json(obj: dict) -> ArchGraph:
    layers = []
    for entry in obj["layers"]:
        kind = entry["kind"]
        if kind not in LAYER_KINDS:
            raise UnsupportedError(f"unknown layer kind {kind!r} in layer {entry['id']!r}")
        layers.append(
            LayerSpec(
                id=entry["id"],
                kind=kind,
                weight_refs=list(entry.get("weight_refs", [])),
                hyperparams=dict(entry.get("hyperparams", {})),
                in_spatial=tuple(entry["in_spatial"]) if entry.get("in_spatial") else None,
                out_spatial=tuple(entry["out_spatial"]) if entry.get("out_spatial") else None,
                stage=entry.get("stage"),
            )
        )
    return ArchGraph(
        layers=layers,
        edges=[(a, b) for a, b in obj.get("edges", [])],
        inputs=list(obj.get("inputs", [])),
        outputs=list(obj.get("outputs", [])),
    )


# ---------------------------------------------------------------------------
# Read / write


def write_bundle_bytes(bundle: ModelBundle) -> bytes:
    """Serialize to the on-disk layout. Deterministic: same bundle, same bytes."""
    diags = validate_bundle(bundle)
    if diags:
        raise BundleError("refusing to write invalid bundle: " + "; ".join(diags))

    entries = []
    chunks = []
    offset = 0
    for name in sorted(bundle.tensors):
        rec = bundle.tensors[name]
        raw = np.ascontiguousarray(rec.data, dtype="<f4").tobytes()
        entries.append(
            {"name": name, "dtype": "f32", "shape": list(rec.shape),
             "offset": offset, "nbytes": len(raw)}
        )
        chunks.append(raw)
        offset += len(raw)
    data = b"".join(chunks)

    header = {
        "tensors": entries,
        "graph": graph_to_json(bundle.graph),
        "metadata": dict(bundle.metadata),
        "crc32": zlib.crc32(data),
    }
    header_bytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    return MAGIC + struct.pack("<Q", len(header_bytes)) + header_bytes + data


def write_bundle(bundle: ModelBundle, path) -> None:
    blob = write_bundle_bytes(bundle)
    with open(path, "wb") as fh:
        fh.write(blob)


def read_bundle_bytes(blob: bytes) -> ModelBundle:
    if blob[:4] != MAGIC:
        raise FormatError(f"bad magic {blob[:4]!r}, expected {MAGIC!r}")
    if len(blob) < 12:
        raise CorruptionError("truncated header length field")
    (hlen,) = struct.unpack("<Q", blob[4:12])
    if len(blob) < 12 + hlen:
        raise CorruptionError("header extends past end of file")
    try:
        header = json.loads(blob[12 : 12 + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"unparseable JSON header: {exc}") from exc

    data = blob[12 + hlen :]
    if zlib.crc32(data) != header.get("crc32"):
        raise CorruptionError("data section checksum mismatch")

    tensors: dict[str, TensorRecord] = {}
    for entry in header["tensors"]:
        name = entry["name"]
        if name in tensors:
            raise CorruptionError(f"duplicate tensor name {name!r}")
        if entry["dtype"] != "f32":
            raise UnsupportedError(f"tensor {name!r}: dtype {entry['dtype']!r} not supported")
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        if entry["nbytes"] != count * 4:
            raise CorruptionError(f"tensor {name!r}: nbytes inconsistent with shape")
        start, end = entry["offset"], entry["offset"] + entry["nbytes"]
        if end > len(data):
            raise CorruptionError(f"tensor {name!r}: data out of range")
        arr = np.frombuffer(data[start:end], dtype="<f4").reshape(shape).copy()
        tensors[name] = TensorRecord(name=name, data=arr)

    bundle = ModelBundle(
        tensors=tensors,
        graph=graph_from_json(header["graph"]),
        metadata=dict(header.get("metadata", {})),
    )
    diags = validate_bundle(bundle)
    if diags:
        raise CorruptionError("bundle fails validation: " + "; ".join(diags))
    return bundle


def read_bundle(path) -> ModelBundle:
    with open(path, "rb") as fh:
        return read_bundle_bytes(fh.read())


# ---------------------------------------------------------------------------
# Validation


def _spatial_out(size: int, kernel: int, stride: int, padding: int) -> int:
    return (size + 2 * padding - kernel) // stride + 1


def infer_channels(graph: ArchGraph) -> tuple[dict[str, tuple[int, int]], list[str]]:
    """Resolve (in_channels, out_channels) per layer by walking the graph.

    For flatten, out_channels is the flattened feature count. Returns the
    channel map and any mismatch diagnostics.
    """
    diags: list[str] = []
    chans: dict[str, tuple[int, int]] = {}
    try:
        order = graph.topo_order()
    except ValueError as exc:
        return {}, [str(exc)]

    for lid in order:
        layer = graph.layer(lid)
        preds = graph.predecessors(lid)
        pred_out = [chans[p][1] for p in preds if p in chans]

        if layer.kind == "conv2d":
            cin = layer.hyperparams["in_channels"]
            cout = layer.hyperparams["out_channels"]
            if pred_out and pred_out[0] != cin:
                diags.append(f"layer {lid}: declares in_channels {cin} but receives {pred_out[0]}")
        elif layer.kind == "linear":
            cin = layer.hyperparams["in_features"]
            cout = layer.hyperparams["out_features"]
            if pred_out and pred_out[0] != cin:
                diags.append(f"layer {lid}: declares in_features {cin} but receives {pred_out[0]}")
        elif layer.kind == "batchnorm":
            cin = layer.hyperparams["channels"]
            cout = cin
            if pred_out and pred_out[0] != cin:
                diags.append(f"layer {lid}: BN channels {cin} vs input {pred_out[0]}")
        elif layer.kind == "flatten":
            cin = pred_out[0] if pred_out else 0
            if layer.in_spatial:
                cout = cin * layer.in_spatial[0] * layer.in_spatial[1]
            else:
                cout = cin
        elif layer.kind == "add":
            if len(preds) != 2:
                diags.append(f"layer {lid}: add node needs exactly 2 inputs, has {len(preds)}")
            if len(pred_out) == 2 and pred_out[0] != pred_out[1]:
                diags.append(
                    f"layer {lid}: shortcut channel mismatch ({pred_out[0]} vs {pred_out[1]})"
                )
            cin = cout = pred_out[0] if pred_out else 0
        else:  # relu, pools: channel-preserving
            cin = cout = pred_out[0] if pred_out else 0
        chans[lid] = (cin, cout)
    return chans, diags


def validate_bundle(bundle: ModelBundle) -> list[str]:
    """All TYPE invariants as diagnostics; empty list means the bundle is valid."""
    diags: list[str] = []
    graph = bundle.graph

    for name, rec in bundle.tensors.items():
        if rec.name != name:
            diags.append(f"tensor {name}: record name disagrees ({rec.name})")
        if any(s <= 0 for s in rec.shape):
            diags.append(f"tensor {name}: non-positive dimension in shape {rec.shape}")
        if rec.data.dtype != np.float32:
            diags.append(f"tensor {name}: dtype {rec.data.dtype}, expected float32")

    ids = [l.id for l in graph.layers]
    if len(ids) != len(set(ids)):
        diags.append("duplicate layer ids")
    known = set(ids)
    for a, b in graph.edges:
        if a not in known or b not in known:
            diags.append(f"edge ({a}, {b}) references unknown layer")
            return diags

    chans, flow_diags = infer_channels(graph)
    diags.extend(flow_diags)

    # reachability from inputs
    if graph.inputs:
        seen = set(graph.inputs)
        frontier = list(graph.inputs)
        while frontier:
            for succ in graph.successors(frontier.pop()):
                if succ not in seen:
                    seen.add(succ)
                    frontier.append(succ)
        for lid in ids:
            if lid not in seen:
                diags.append(f"layer {lid}: unreachable from graph inputs")

    for layer in graph.layers:
        if layer.kind not in LAYER_KINDS:
            diags.append(f"layer {layer.id}: unknown kind {layer.kind!r}")
            continue
        hp = layer.hyperparams
        if layer.kind == "conv2d":
            k = hp.get("kernel", 0)
            if k < 1:
                diags.append(f"layer {layer.id}: kernel size {k} < 1")
            if layer.in_spatial and layer.out_spatial:
                stride, pad = hp.get("stride", 1), hp.get("padding", 0)
                expect = tuple(_spatial_out(s, k, stride, pad) for s in layer.in_spatial)
                if expect != tuple(layer.out_spatial):
                    diags.append(
                        f"layer {layer.id}: out_spatial {layer.out_spatial} "
                        f"inconsistent with input/stride/padding (expected {expect})"
                    )
        if layer.kind in ("maxpool", "avgpool") and layer.in_spatial and layer.out_spatial:
            w = hp.get("window", 2)
            stride, pad = hp.get("stride", w), hp.get("padding", 0)
            expect = tuple(_spatial_out(s, w, stride, pad) for s in layer.in_spatial)
            if expect != tuple(layer.out_spatial):
                diags.append(f"layer {layer.id}: pool out_spatial {layer.out_spatial} != {expect}")

        # weight_refs resolve with the shapes the graph implies
        if not bundle.tensors and layer.weight_refs:
            diags.append(f"layer {layer.id}: weight_refs present but bundle has no tensors")
        if bundle.tensors:
            for ref in layer.weight_refs:
                if ref not in bundle.tensors:
                    diags.append(f"layer {layer.id}: weight ref {ref!r} missing")
            if layer.kind == "conv2d" and layer.weight_refs:
                w = bundle.tensors.get(layer.weight_refs[0])
                if w is not None:
                    expect = (
                        hp["out_channels"], hp["in_channels"], hp["kernel"], hp["kernel"]
                    )
                    if w.shape != expect:
                        diags.append(
                            f"layer {layer.id}: shape mismatch, kernel tensor {w.shape} "
                            f"vs declared {expect}"
                        )
            if layer.kind == "batchnorm" and layer.weight_refs:
                for ref in layer.weight_refs:
                    rec = bundle.tensors.get(ref)
                    if rec is not None and rec.shape != (hp["channels"],):
                        diags.append(
                            f"layer {layer.id}: BN vector {ref} shape {rec.shape}, "
                            f"expected ({hp['channels']},)"
                        )
            if layer.kind == "linear" and layer.weight_refs:
                w = bundle.tensors.get(layer.weight_refs[0])
                expect = (hp["out_features"], hp["in_features"])
                if w is not None and w.shape != expect:
                    diags.append(
                        f"layer {layer.id}: linear weight {w.shape} vs declared {expect}"
                    )
    return diags
