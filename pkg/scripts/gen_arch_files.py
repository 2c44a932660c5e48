"""Regenerate the shipped architecture-only bundle files."""
from pathlib import Path

from prunekit.archs import build_named
from prunekit.bundle import write_bundle

out_dir = Path(__file__).resolve().parent.parent / "src" / "prunekit" / "arch"
out_dir.mkdir(exist_ok=True)
for name in ("vgg16", "resnet56", "resnet110"):
    write_bundle(build_named(name), out_dir / f"{name}.nwb")
    print(f"wrote {name}.nwb")
