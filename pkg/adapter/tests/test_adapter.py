"""Adapter tests: name mapping, round-trips, cost cross-checks, and the
torch-vs-reference-executor forward agreement check."""

import numpy as np
import pytest
import torch

from prunekit import cost, refexec
from prunekit.archs import build_resnet, build_vgg16
from prunekit.bundle import BundleError, bundles_equal, read_bundle, write_bundle

from nwb_adapter import cli
from nwb_adapter.convert import (
    build_model_from_bundle,
    export_checkpoint,
    export_state_dict,
    import_bundle,
    tensor_to_param,
)
from nwb_adapter.models import VGG16, CifarResNet

PRUNED_VGG_MAPS = [32, 58, 125, 128, 256, 254, 252, 299, 164, 121, 59, 104, 129]


def _seeded_model(model, seed):
    torch.manual_seed(seed)
    with torch.no_grad():
        for p in model.state_dict().values():
            if p.dtype.is_floating_point:
                p.copy_(torch.randn_like(p) * 0.1)
    return model


# ---------------------------------------------------------------- mapping


def test_tensor_mapping_vgg_is_bijective():
    bundle = build_vgg16(include_tensors=True)
    keys = {tensor_to_param(n, "vgg16") for n in bundle.tensors}
    assert len(keys) == len(bundle.tensors)
    model_keys = {k for k in VGG16().state_dict() if not k.endswith("num_batches_tracked")}
    assert keys == model_keys


def test_tensor_mapping_resnet_is_bijective():
    bundle = build_resnet(56, include_tensors=True)
    keys = {tensor_to_param(n, "resnet56") for n in bundle.tensors}
    assert len(keys) == len(bundle.tensors)
    model_keys = {k for k in CifarResNet(56).state_dict()
                  if not k.endswith("num_batches_tracked")}
    assert keys == model_keys


def test_unknown_tensor_rejected():
    with pytest.raises(BundleError):
        tensor_to_param("mystery.weight", "vgg16")


# ---------------------------------------------------------------- export


def test_export_random_vgg_checkpoint(tmp_path):
    model = _seeded_model(VGG16(), 0)
    ckpt = tmp_path / "vgg.pt"
    torch.save(model.state_dict(), ckpt)
    bundle = export_checkpoint(ckpt, "vgg16", tmp_path / "vgg.nwb")
    convs = [n for n in bundle.tensors if n.startswith("conv_")]
    assert len(convs) == 13
    w = model.state_dict()["features.conv_3.weight"].numpy()
    assert np.array_equal(bundle.tensors["conv_3.weight"].data, w)


def test_export_shape_mismatch_errors(tmp_path):
    state = _seeded_model(VGG16(), 1).state_dict()
    state["features.conv_5.weight"] = torch.randn(256, 99, 3, 3)
    ckpt = tmp_path / "bad.pt"
    torch.save(state, ckpt)
    with pytest.raises(BundleError, match="shape mismatch"):
        export_checkpoint(ckpt, "vgg16", tmp_path / "bad.nwb")


def test_export_resnet56_cost_matches_baseline(tmp_path):
    model = _seeded_model(CifarResNet(56), 2)
    ckpt = tmp_path / "r56.pt"
    torch.save(model.state_dict(), ckpt)
    bundle = export_checkpoint(ckpt, "resnet56", tmp_path / "r56.nwb")
    report = cost.model_cost(bundle.graph)
    assert report.total_flops == 125_485_696
    assert report.total_params == 848_944


# ---------------------------------------------------------------- import


def test_import_pruned_vgg_widths(tmp_path):
    bundle = build_vgg16(PRUNED_VGG_MAPS, include_tensors=True, seed=3)
    path = tmp_path / "pruned.nwb"
    write_bundle(bundle, path)
    model = import_bundle(path, tmp_path / "pruned.pt")
    assert model.conv_channels == PRUNED_VGG_MAPS
    reloaded = torch.load(tmp_path / "pruned.pt", weights_only=True)
    assert reloaded["features.conv_1.weight"].shape == (32, 3, 3, 3)


def test_import_pruned_resnet_widths():
    mids = {"s1b3": 5, "s3b2": 41}
    bundle = build_resnet(56, include_tensors=True, seed=4, block_mid=mids)
    model = build_model_from_bundle(bundle)
    assert model.blocks["s1b3"].conv1.out_channels == 5
    assert model.blocks["s3b2"].conv1.out_channels == 41
    assert model.blocks["s2b1"].conv1.out_channels == 32


def test_import_architecture_only_bundle_rejected():
    with pytest.raises(BundleError, match="no tensors"):
        build_model_from_bundle(build_vgg16())


# ------------------------------------------------------------- round-trip


@pytest.mark.parametrize("arch,make", [
    ("vgg16", lambda: VGG16(PRUNED_VGG_MAPS)),
    ("resnet56", lambda: CifarResNet(56, block_mid={"s2b2": 17})),
])
def test_round_trip_bit_exact(tmp_path, arch, make):
    model = _seeded_model(make(), 5)
    ckpt = tmp_path / "in.pt"
    torch.save(model.state_dict(), ckpt)
    export_checkpoint(ckpt, arch, tmp_path / "a.nwb")
    back = import_bundle(tmp_path / "a.nwb", tmp_path / "out.pt")
    orig, round_tripped = model.state_dict(), back.state_dict()
    for key, value in orig.items():
        if key.endswith("num_batches_tracked"):
            continue
        assert torch.equal(value, round_tripped[key]), key
    # and the reverse direction: bundle -> checkpoint -> bundle
    second = export_checkpoint(tmp_path / "out.pt", arch, tmp_path / "b.nwb")
    assert bundles_equal(read_bundle(tmp_path / "a.nwb"), second)


def test_cli_round_trip(tmp_path, capsys):
    model = _seeded_model(VGG16(), 6)
    torch.save(model.state_dict(), tmp_path / "m.pt")
    assert cli.export_main([str(tmp_path / "m.pt"), str(tmp_path / "m.nwb"),
                            "--arch", "vgg16"]) == 0
    assert cli.import_main([str(tmp_path / "m.nwb"), str(tmp_path / "m2.pt")]) == 0
    out = capsys.readouterr().out
    assert "wrote" in out
    a = model.state_dict()
    b = torch.load(tmp_path / "m2.pt", weights_only=True)
    assert torch.equal(a["classifier.bias"], b["classifier.bias"])


def test_cli_missing_file_errors(tmp_path, capsys):
    assert cli.import_main([str(tmp_path / "nope.nwb"), str(tmp_path / "x.pt")]) == 1
    assert "error" in capsys.readouterr().err


# ------------------------------------------------------- cross-execution


def test_acceptance_criterion_11_round_trip_and_forward(tmp_path):
    # Part 1: export -> import preserves every parameter bit-exactly.
    model = _seeded_model(VGG16(PRUNED_VGG_MAPS), 7)
    torch.save(model.state_dict(), tmp_path / "m.pt")
    export_checkpoint(tmp_path / "m.pt", "vgg16", tmp_path / "m.nwb")
    back = import_bundle(tmp_path / "m.nwb", tmp_path / "m2.pt")
    orig, got = model.state_dict(), back.state_dict()
    for key, value in orig.items():
        if not key.endswith("num_batches_tracked"):
            assert torch.equal(value, got[key]), key

    # Part 2: imported pruned model forward agrees with the reference
    # executor within 1e-4 on a fixed input.
    bundle = build_vgg16(PRUNED_VGG_MAPS, include_tensors=True, seed=11)
    imported = build_model_from_bundle(bundle)
    rng = np.random.default_rng(2024)
    x = rng.standard_normal((3, 32, 32)).astype(np.float32)
    ref = refexec.forward(bundle, x)
    with torch.no_grad():
        got_t = imported(torch.from_numpy(x).unsqueeze(0))[0].numpy()
    max_err = float(np.max(np.abs(got_t - ref)))
    assert max_err <= 1e-4
    print(f"[acceptance] criterion 11 PASS: round-trip bit-exact; "
          f"torch vs refexec max abs err {max_err:.2e} <= 1e-4")
