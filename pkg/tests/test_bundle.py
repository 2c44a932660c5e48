import hashlib

import numpy as np
import pytest

from prunekit.archs import VGG16_CHANNELS, build_resnet, build_vgg16
from prunekit.bundle import (
    ArchGraph,
    CorruptionError,
    FormatError,
    LayerSpec,
    ModelBundle,
    TensorRecord,
    bundles_equal,
    read_bundle,
    read_bundle_bytes,
    validate_bundle,
    write_bundle,
    write_bundle_bytes,
)

from helpers import toy_chain


def trivial_bundle():
    graph = ArchGraph(
        layers=[LayerSpec(id="relu", kind="relu")],
        edges=[], inputs=["relu"], outputs=["relu"],
    )
    return ModelBundle(tensors={}, graph=graph, metadata={"model": "trivial"})


def test_round_trip_identity(tmp_path):
    bundle = toy_chain(seed=3)
    path = tmp_path / "toy.nwb"
    write_bundle(bundle, path)
    back = read_bundle(path)
    assert bundles_equal(bundle, back)


def test_bad_magic_is_format_error():
    with pytest.raises(FormatError):
        read_bundle_bytes(b"XXXX" + b"\x00" * 32)


def test_data_corruption_detected(tmp_path):
    bundle = toy_chain(seed=1)
    blob = bytearray(write_bundle_bytes(bundle))
    blob[-1] ^= 0x01  # flip one bit in the data section
    with pytest.raises(CorruptionError):
        read_bundle_bytes(bytes(blob))


def test_every_byte_of_data_section_is_protected():
    bundle = toy_chain(seed=1)
    blob = write_bundle_bytes(bundle)
    import struct
    (hlen,) = struct.unpack("<Q", blob[4:12])
    data_start = 12 + hlen
    rng = np.random.default_rng(0)
    for pos in rng.integers(data_start, len(blob), size=16):
        mutated = bytearray(blob)
        mutated[pos] ^= 0xFF
        with pytest.raises(CorruptionError):
            read_bundle_bytes(bytes(mutated))


def test_unknown_layer_kind_rejected():
    blob = write_bundle_bytes(trivial_bundle())
    bad = blob.replace(b'"kind":"relu"', b'"kind":"gelu"')
    # header length unchanged: same byte count
    from prunekit.bundle import UnsupportedError
    with pytest.raises(UnsupportedError):
        read_bundle_bytes(bad)


def test_vgg16_channel_sequence():
    bundle = build_vgg16()
    convs = [l for l in bundle.graph.layers if l.kind == "conv2d"]
    assert [c.hyperparams["out_channels"] for c in convs] == VGG16_CHANNELS
    assert len(convs) == 13


def test_empty_bundle_header_only(tmp_path):
    bundle = trivial_bundle()
    path = tmp_path / "empty.nwb"
    write_bundle(bundle, path)
    blob = path.read_bytes()
    import struct
    (hlen,) = struct.unpack("<Q", blob[4:12])
    assert len(blob) == 12 + hlen  # no data section
    assert bundles_equal(read_bundle(path), bundle)


def test_row_major_data_layout():
    graph = ArchGraph(layers=[LayerSpec(id="x", kind="relu")], edges=[],
                      inputs=["x"], outputs=["x"])
    t = TensorRecord("t", np.array([[1, 2, 3], [4, 5, 6]], dtype=np.float32))
    blob = write_bundle_bytes(ModelBundle(tensors={"t": t}, graph=graph))
    data = blob[-24:]
    assert np.frombuffer(data, dtype="<f4").tolist() == [1, 2, 3, 4, 5, 6]


def test_double_write_deterministic():
    bundle = toy_chain(seed=7)
    h1 = hashlib.sha256(write_bundle_bytes(bundle)).hexdigest()
    h2 = hashlib.sha256(write_bundle_bytes(bundle)).hexdigest()
    assert h1 == h2


def test_validate_shape_mismatch():
    bundle = toy_chain()
    conv = bundle.graph.layer("conv1")
    ref = conv.weight_refs[0]
    good = bundle.tensors[ref].data
    bundle.tensors[ref] = TensorRecord(ref, good[: good.shape[0] // 2].copy())
    diags = validate_bundle(bundle)
    assert any("shape mismatch" in d for d in diags)


def test_validate_shortcut_channel_mismatch():
    layers = [
        LayerSpec(id="a", kind="conv2d", hyperparams={"kernel": 1, "in_channels": 3,
                                                      "out_channels": 64}),
        LayerSpec(id="b", kind="conv2d", hyperparams={"kernel": 1, "in_channels": 3,
                                                      "out_channels": 32}),
        LayerSpec(id="sum", kind="add"),
    ]
    graph = ArchGraph(layers=layers, edges=[("a", "sum"), ("b", "sum")],
                      inputs=["a", "b"], outputs=["sum"])
    diags = validate_bundle(ModelBundle(tensors={}, graph=graph))
    assert any("shortcut channel mismatch" in d for d in diags)


def test_resnet56_well_formed():
    bundle = build_resnet(56)
    assert validate_bundle(bundle) == []
    convs = [l for l in bundle.graph.layers if l.kind == "conv2d"]
    assert len(convs) == 55  # stem + 3 stages x 9 blocks x 2
    adds = [l for l in bundle.graph.layers if l.kind == "add"]
    assert len(adds) == 25  # transition blocks of stages 2 and 3 have no add


def test_invalid_bundle_rejected_before_write(tmp_path):
    bundle = toy_chain()
    conv = bundle.graph.layer("conv1")
    bundle.tensors[conv.weight_refs[0]].data = np.zeros((1, 1, 1, 1), dtype=np.float32)
    path = tmp_path / "never.nwb"
    with pytest.raises(Exception):
        write_bundle(bundle, path)
    assert not path.exists()
