"""Checkpoint <-> bundle conversion.

The bundle format and the torch models name things so that conversion is a
string translation per tensor plus a widths inference pass; no weight data
is ever reordered or reshaped beyond numpy<->torch handoff.
"""

from __future__ import annotations

import re

import numpy as np
import torch

from prunekit.archs import build_resnet, build_vgg16
from prunekit.bundle import (
    BundleError,
    ModelBundle,
    read_bundle,
    validate_bundle,
    write_bundle,
)

from .models import VGG16, CifarResNet

_BN_PARTS = {"scale": "weight", "shift": "bias", "mean": "running_mean", "var": "running_var"}
_RESNET_TENSOR = re.compile(r"^(s\d+b\d+)(c1|c2|bn1|bn2)\.(\w+)$")


def tensor_to_param(tensor_name: str, arch: str) -> str:
    """Translate a bundle tensor name into the matching state-dict key."""
    base, _, part = tensor_name.partition(".")
    if arch == "vgg16":
        if base == "fc":
            return f"classifier.{part}"
        if base.startswith("conv_"):
            return f"features.{base}.{part}"
        if base.startswith("bn_"):
            return f"features.{base}.{_BN_PARTS[part]}"
    else:
        if base in ("fc", "stem"):
            return tensor_name
        if base == "stem_bn":
            return f"stem_bn.{_BN_PARTS[part]}"
        m = _RESNET_TENSOR.match(tensor_name)
        if m:
            block, sub, part = m.groups()
            if sub.startswith("bn"):
                part = _BN_PARTS[part]
            else:
                sub = "conv" + sub[1]
            return f"blocks.{block}.{sub}.{part}"
    raise BundleError(f"no checkpoint mapping for tensor {tensor_name!r}")


def _arch_from_metadata(bundle: ModelBundle) -> str:
    model = bundle.metadata.get("model", "")
    for arch in ("vgg16", "resnet56", "resnet110"):
        if model.startswith(arch):
            return arch
    raise BundleError(f"bundle metadata names unknown model {model!r}")


def _state_dict(obj) -> dict:
    if isinstance(obj, dict) and "state_dict" in obj:
        obj = obj["state_dict"]
    if not isinstance(obj, dict):
        raise BundleError("checkpoint does not contain a state dict")
    return obj


def _skeleton_from_state(arch: str, state: dict) -> ModelBundle:
    """Build a bundle whose shapes mirror the checkpoint's (pruned) widths."""
    if arch == "vgg16":
        widths = [int(state[f"features.conv_{i}.weight"].shape[0]) for i in range(1, 14)]
        return build_vgg16(widths, num_classes=int(state["classifier.weight"].shape[0]),
                           include_tensors=True, seed=0)
    per_stage = len({k for k in state if re.match(r"blocks\.s1b\d+\.conv1\.weight$", k)})
    depth = 6 * per_stage + 2
    mids = {m.group(1): int(state[k].shape[0])
            for k in state
            if (m := re.match(r"blocks\.(s\d+b\d+)\.conv1\.weight$", k))}
    return build_resnet(depth, num_classes=int(state["fc.weight"].shape[0]),
                        include_tensors=True, seed=0, block_mid=mids)


def export_state_dict(state: dict, arch: str) -> ModelBundle:
    """Turn a torch state dict into a validated bundle."""
    state = {k: v for k, v in state.items() if not k.endswith("num_batches_tracked")}
    bundle = _skeleton_from_state(arch, state)
    for name, rec in bundle.tensors.items():
        key = tensor_to_param(name, arch)
        if key not in state:
            raise BundleError(f"checkpoint is missing parameter {key!r}")
        value = state[key].detach().cpu().numpy().astype(np.float32)
        if value.shape != rec.data.shape:
            raise BundleError(
                f"shape mismatch for {key!r}: checkpoint {value.shape}, "
                f"architecture expects {rec.data.shape}")
        rec.data = np.ascontiguousarray(value)
    extra = set(state) - {tensor_to_param(n, arch) for n in bundle.tensors}
    if extra:
        raise BundleError(f"checkpoint has unmapped parameters: {sorted(extra)[:5]}")
    problems = validate_bundle(bundle)
    if problems:
        raise BundleError("exported bundle failed validation: " + "; ".join(problems))
    return bundle


def export_checkpoint(ckpt_path, arch: str, out_path) -> ModelBundle:
    state = _state_dict(torch.load(ckpt_path, map_location="cpu", weights_only=True))
    bundle = export_state_dict(state, arch)
    write_bundle(bundle, out_path)
    return bundle


def build_model_from_bundle(bundle: ModelBundle) -> torch.nn.Module:
    """Instantiate a torch model with the bundle's widths and weights."""
    if not bundle.tensors:
        raise BundleError("bundle has no tensors to import")
    arch = _arch_from_metadata(bundle)
    convs = [l for l in bundle.graph.topo_order()
             if bundle.graph.layer(l).kind == "conv2d"]
    if arch == "vgg16":
        widths = [bundle.graph.layer(l).hyperparams["out_channels"] for l in convs]
        head = bundle.graph.layer("fc").hyperparams["out_features"]
        model: torch.nn.Module = VGG16(widths, num_classes=head)
    else:
        depth = int(arch.removeprefix("resnet"))
        mids = {l[:-2]: bundle.graph.layer(l).hyperparams["out_channels"]
                for l in convs if l.endswith("c1")}
        head = bundle.graph.layer("fc").hyperparams["out_features"]
        model = CifarResNet(depth, num_classes=head, block_mid=mids)
    state = model.state_dict()
    for name, rec in bundle.tensors.items():
        key = tensor_to_param(name, arch)
        if key not in state:
            raise BundleError(f"model has no parameter {key!r}")
        if tuple(state[key].shape) != rec.data.shape:
            raise BundleError(
                f"shape mismatch for {key!r}: bundle {rec.data.shape}, "
                f"model {tuple(state[key].shape)}")
        state[key] = torch.from_numpy(rec.data.copy())
    model.load_state_dict(state)
    model.eval()
    return model


def import_bundle(bundle_path, out_ckpt) -> torch.nn.Module:
    model = build_model_from_bundle(read_bundle(bundle_path))
    torch.save(model.state_dict(), out_ckpt)
    return model
