"""CIFAR model definitions whose module names line up with bundle layer ids.

Submodule naming is deliberate: ``features.conv_3`` holds the tensor the
bundle calls ``conv_3.weight``, block ``s2b4`` holds ``s2b4c1.weight`` and
friends.  That makes the state-dict <-> bundle mapping a pure string
translation (see :mod:`nwb_adapter.convert`).
"""

from __future__ import annotations

from collections import OrderedDict

import torch
import torch.nn as nn
import torch.nn.functional as F

VGG16_CHANNELS = (64, 64, 128, 128, 256, 256, 256, 512, 512, 512, 512, 512, 512)

# maxpool follows these conv indices (1-based)
_VGG_POOL_AFTER = {2, 4, 7, 10, 13}

BN_EPS = 1e-5


class VGG16(nn.Module):
    """VGG-16 for 32x32 inputs: 13 convs (no bias, each conv+BN+ReLU),
    five 2x2 maxpools, and a single linear classifier head."""

    def __init__(self, conv_channels=None, num_classes: int = 10) -> None:
        super().__init__()
        widths = list(conv_channels) if conv_channels is not None else list(VGG16_CHANNELS)
        if len(widths) != 13:
            raise ValueError(f"expected 13 conv widths, got {len(widths)}")
        layers: "OrderedDict[str, nn.Module]" = OrderedDict()
        cin = 3
        for i, cout in enumerate(widths, start=1):
            layers[f"conv_{i}"] = nn.Conv2d(cin, cout, 3, padding=1, bias=False)
            layers[f"bn_{i}"] = nn.BatchNorm2d(cout, eps=BN_EPS)
            layers[f"relu_{i}"] = nn.ReLU(inplace=True)
            if i in _VGG_POOL_AFTER:
                layers[f"pool_{sorted(_VGG_POOL_AFTER).index(i) + 1}"] = nn.MaxPool2d(2, 2)
            cin = cout
        self.features = nn.Sequential(layers)
        self.classifier = nn.Linear(widths[-1], num_classes)
        self.conv_channels = widths

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        x = self.features(x)
        x = torch.flatten(x, 1)
        return self.classifier(x)


class BasicBlock(nn.Module):
    """Two 3x3 convs with an identity shortcut.

    Stage-transition blocks (stride 2, width doubles) use the parameter-free
    zero-pad shortcut: stride-2 subsample, then pad the new channels with
    zeros.  The shortcut carries no tensors, so it round-trips through the
    bundle format untouched.
    """

    def __init__(self, cin: int, mid: int, cout: int, stride: int = 1) -> None:
        super().__init__()
        self.conv1 = nn.Conv2d(cin, mid, 3, stride=stride, padding=1, bias=False)
        self.bn1 = nn.BatchNorm2d(mid, eps=BN_EPS)
        self.conv2 = nn.Conv2d(mid, cout, 3, padding=1, bias=False)
        self.bn2 = nn.BatchNorm2d(cout, eps=BN_EPS)
        self.transition = stride != 1 or cin != cout
        self._pad = cout - cin

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        out = F.relu(self.bn1(self.conv1(x)))
        out = self.bn2(self.conv2(out))
        if self.transition:
            shortcut = x[:, :, ::2, ::2]
            shortcut = F.pad(shortcut, (0, 0, 0, 0, 0, self._pad))
        else:
            shortcut = x
        return F.relu(out + shortcut)


class CifarResNet(nn.Module):
    """ResNet-(6n+2) for CIFAR: 3->16 stem, three stages of n blocks at
    widths 16/32/64, global average pool, linear head.

    ``block_mid`` overrides the width of a block's first conv (keys like
    ``"s2b3"``), which is how pruned checkpoints are represented.
    """

    STAGE_WIDTHS = (16, 32, 64)

    def __init__(self, depth: int, num_classes: int = 10,
                 block_mid: dict[str, int] | None = None) -> None:
        super().__init__()
        if (depth - 2) % 6 != 0:
            raise ValueError(f"depth must be 6n+2, got {depth}")
        n = (depth - 2) // 6
        self.depth = depth
        self.stem = nn.Conv2d(3, 16, 3, padding=1, bias=False)
        self.stem_bn = nn.BatchNorm2d(16, eps=BN_EPS)
        blocks: "OrderedDict[str, nn.Module]" = OrderedDict()
        cin = 16
        for stage, width in enumerate(self.STAGE_WIDTHS, start=1):
            for b in range(1, n + 1):
                name = f"s{stage}b{b}"
                stride = 2 if stage > 1 and b == 1 else 1
                mid = (block_mid or {}).get(name, width)
                blocks[name] = BasicBlock(cin, mid, width, stride=stride)
                cin = width
        self.blocks = nn.ModuleDict(blocks)
        self.fc = nn.Linear(64, num_classes)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        x = F.relu(self.stem_bn(self.stem(x)))
        for block in self.blocks.values():
            x = block(x)
        x = F.adaptive_avg_pool2d(x, 1)
        x = torch.flatten(x, 1)
        return self.fc(x)
