"""PyTorch bridge for neutral weight-bundle (.nwb) files.

Exports trained CIFAR checkpoints into the neutral format and imports
(possibly pruned) bundles back into `torch.nn.Module` instances so they
can be fine-tuned.  All traffic goes through the bundle file format;
``prunekit`` internals are never touched.
"""

from .convert import (
    build_model_from_bundle,
    export_checkpoint,
    import_bundle,
)
from .models import VGG16, CifarResNet

__version__ = "0.1.0"

__all__ = [
    "VGG16",
    "CifarResNet",
    "build_model_from_bundle",
    "export_checkpoint",
    "import_bundle",
]
