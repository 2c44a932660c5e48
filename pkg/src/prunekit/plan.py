"""Structural prune plans: pick filters to drop per layer, propagate the
removals through the graph (next conv's input channels, BN vectors, FC input
features), and apply the plan to produce a smaller valid bundle.

All randomness comes from an explicit 64-bit seed through SplitMix64 (the
public-domain mixer of Steele et al.; constants below), with one stream per
layer derived as SplitMix64(seed XOR fnv1a64(layer_id)). Any implementation
of these two functions reproduces the same drop sets bit for bit.
"""

from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import dataclass, field

import numpy as np

from . import __version__
from .bundle import ArchGraph, ModelBundle, TensorRecord, UnsupportedError, write_bundle_bytes
from .cluster import Clustering

_MASK64 = (1 << 64) - 1

# layers a channel-keep set passes through unchanged
_TRANSPARENT = {"batchnorm", "relu", "maxpool", "avgpool", "flatten"}


def fnv1a64(text: str) -> int:
    h = 0xCBF29CE484222325
    for byte in text.encode("utf-8"):
        h = ((h ^ byte) * 0x100000001B3) & _MASK64
    return h


class SplitMix64:
    """SplitMix64 sequence: state advances by 0x9E3779B97F4B7C15, output is
    the standard two-round xorshift-multiply finalizer."""

    def __init__(self, seed: int):
        self._state = seed & _MASK64

    def next(self) -> int:
        self._state = (self._state + 0x9E3779B97F4B7C15) & _MASK64
        z = self._state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
        return z ^ (z >> 31)

    def next_below(self, n: int) -> int:
        """Unbiased draw from [0, n) by rejection."""
        if n <= 0:
            raise ValueError("n must be positive")
        bound = (_MASK64 + 1) - ((_MASK64 + 1) % n)
        while True:
            z = self.next()
            if z < bound:
                return z % n


def layer_stream(seed: int, layer_id: str) -> SplitMix64:
    return SplitMix64(seed ^ fnv1a64(layer_id))


@dataclass
class PruneConfig:
    default_tau: float = 0.54
    per_stage_tau: dict[str, float] = field(default_factory=dict)
    skip_layers: set[str] = field(default_factory=set)
    heuristic: str = "A"  # A: keep one representative per cluster; B: random drops
    seed: int = 0
    residual_rule: bool = True
    representative: str = "random"  # or "first-index"

    def tau_for(self, stage: str | None) -> float:
        if stage is not None and stage in self.per_stage_tau:
            return self.per_stage_tau[stage]
        return self.default_tau

    def validate(self, graph: ArchGraph) -> None:
        taus = [self.default_tau, *self.per_stage_tau.values()]
        for tau in taus:
            if not -1.0 <= tau <= 1.0:
                raise ValueError(f"tau {tau} outside [-1, 1]")
        if self.heuristic not in ("A", "B"):
            raise ValueError(f"heuristic must be A or B, got {self.heuristic!r}")
        if self.representative not in ("random", "first-index"):
            raise ValueError(f"unknown representative mode {self.representative!r}")
        ids = {l.id for l in graph.layers}
        unknown = set(self.skip_layers) - ids
        if unknown:
            raise ValueError(f"skip_layers not in graph: {sorted(unknown)}")

    def to_json(self) -> dict:
        return {
            "default_tau": self.default_tau,
            "per_stage_tau": dict(sorted(self.per_stage_tau.items())),
            "skip_layers": sorted(self.skip_layers),
            "heuristic": self.heuristic,
            "seed": self.seed,
            "residual_rule": self.residual_rule,
            "representative": self.representative,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "PruneConfig":
        return cls(
            default_tau=obj.get("default_tau", 0.54),
            per_stage_tau=dict(obj.get("per_stage_tau", {})),
            skip_layers=set(obj.get("skip_layers", [])),
            heuristic=obj.get("heuristic", "A"),
            seed=int(obj.get("seed", 0)),
            residual_rule=bool(obj.get("residual_rule", True)),
            representative=obj.get("representative", "random"),
        )


@dataclass
class PlanLayer:
    layer_id: str
    keep: list[int]
    drop: list[int]
    n_original: int
    n_f: int


@dataclass
class Edit:
    tensor: str
    axis: int
    keep: list[int]


@dataclass
class PrunePlan:
    layers: list[PlanLayer]
    edits: list[Edit]
    provenance: dict

    def to_json(self) -> dict:
        return {
            "config": self.provenance.get("config", {}),
            "layers": [
                {"layer_id": pl.layer_id, "keep": pl.keep, "drop": pl.drop,
                 "n_original": pl.n_original, "n_f": pl.n_f}
                for pl in self.layers
            ],
            "edits": [{"tensor": e.tensor, "axis": e.axis, "keep": e.keep} for e in self.edits],
            "provenance": self.provenance,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "PrunePlan":
        return cls(
            layers=[
                PlanLayer(d["layer_id"], list(d["keep"]), list(d["drop"]),
                          d["n_original"], d["n_f"])
                for d in obj["layers"]
            ],
            edits=[Edit(d["tensor"], d["axis"], list(d["keep"])) for d in obj["edits"]],
            provenance=dict(obj.get("provenance", {})),
        )

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_json(), fh, sort_keys=True, indent=2)
            fh.write("\n")

    @classmethod
    def load(cls, path) -> "PrunePlan":
        with open(path, encoding="utf-8") as fh:
            return cls.from_json(json.load(fh))


def bundle_sha256(bundle: ModelBundle) -> str:
    return hashlib.sha256(write_bundle_bytes(bundle)).hexdigest()


# ---------------------------------------------------------------------------
# Filter selection


def select_representatives(clustering: Clustering, seed: int, layer_id: str = "",
                           mode: str = "random") -> list[int]:
    """One kept index per cluster (heuristic A)."""
    rng = layer_stream(seed, layer_id)
    keep = []
    for members in clustering.clusters():
        if mode == "first-index":
            keep.append(members[0])
        else:
            keep.append(members[rng.next_below(len(members))])
    return sorted(keep)


def random_prune_set(n_original: int, n_f: int, seed: int, layer_id: str = "") -> list[int]:
    """Uniform drop set of size n_original - n_f (heuristic B)."""
    if not 0 <= n_f <= n_original:
        raise ValueError(f"n_f {n_f} outside [0, {n_original}]")
    rng = layer_stream(seed, layer_id)
    pool = list(range(n_original))
    n_drop = n_original - n_f
    for i in range(n_drop):  # partial Fisher-Yates
        j = i + rng.next_below(n_original - i)
        pool[i], pool[j] = pool[j], pool[i]
    return sorted(pool[:n_drop])


# ---------------------------------------------------------------------------
# Protection and propagation


def protected_layers(graph: ArchGraph, config: PruneConfig) -> set[str]:
    """Convs whose output reaches an `add` node without passing another
    conv/linear (residual shortcut rule), plus the explicit skip list."""
    protected = set(config.skip_layers)
    if not config.residual_rule:
        return protected
    for layer in graph.layers:
        if layer.kind != "conv2d":
            continue
        frontier = list(graph.successors(layer.id))
        seen = set(frontier)
        while frontier:
            lid = frontier.pop()
            succ = graph.layer(lid)
            if succ.kind == "add":
                protected.add(layer.id)
                break
            if succ.kind in _TRANSPARENT:
                for nxt in graph.successors(lid):
                    if nxt not in seen:
                        seen.add(nxt)
                        frontier.append(nxt)
    return protected


def prunable_layers(graph: ArchGraph, config: PruneConfig) -> list[str]:
    protected = protected_layers(graph, config)
    return [l.id for l in graph.layers if l.kind == "conv2d" and l.id not in protected]


def _propagate(graph: ArchGraph, layer_id: str, keep: list[int]) -> list[Edit]:
    """Edits implied by keeping only `keep` output channels of conv layer_id."""
    edits: list[Edit] = []
    # (layer to visit, flattened?, spatial element count at flatten)
    frontier = [(succ, False, 1) for succ in graph.successors(layer_id)]
    while frontier:
        lid, flat, hw = frontier.pop()
        layer = graph.layer(lid)
        if layer.kind == "batchnorm":
            for ref in layer.weight_refs:
                edits.append(Edit(tensor=ref, axis=0, keep=list(keep)))
            frontier.extend((s, flat, hw) for s in graph.successors(lid))
        elif layer.kind in ("relu", "maxpool", "avgpool"):
            frontier.extend((s, flat, hw) for s in graph.successors(lid))
        elif layer.kind == "flatten":
            if layer.in_spatial is None:
                raise UnsupportedError(f"flatten {lid} lacks in_spatial, cannot map channels")
            frontier.extend(
                (s, True, layer.in_spatial[0] * layer.in_spatial[1])
                for s in graph.successors(lid)
            )
        elif layer.kind == "conv2d":
            edits.append(Edit(tensor=layer.weight_refs[0], axis=1, keep=list(keep)))
        elif layer.kind == "linear":
            if flat:
                feat = [c * hw + off for c in keep for off in range(hw)]
            else:
                feat = list(keep)
            edits.append(Edit(tensor=layer.weight_refs[0], axis=1, keep=feat))
        elif layer.kind == "add":
            raise UnsupportedError(
                f"pruned channels of {layer_id} reach add node {lid}; "
                "layer should have been protected"
            )
        else:
            raise UnsupportedError(f"cannot propagate through layer kind {layer.kind}")
    return edits


def build_plan(bundle: ModelBundle, config: PruneConfig,
               clusterings: dict[str, Clustering]) -> PrunePlan:
    """Turn per-layer clusterings into a full structural plan."""
    graph = bundle.graph
    config.validate(graph)
    protected = protected_layers(graph, config)
    for lid in clusterings:
        if graph.layer(lid).kind != "conv2d":
            raise ValueError(f"clustering given for non-conv layer {lid}")
        if lid in protected:
            raise ValueError(f"clustering given for protected layer {lid}")

    layers: list[PlanLayer] = []
    edits: list[Edit] = []
    for layer in graph.layers:
        if layer.id not in clusterings:
            continue
        clustering = clusterings[layer.id]
        n = len(clustering.assignments)
        if config.heuristic == "A":
            keep = select_representatives(clustering, config.seed, layer.id,
                                          mode=config.representative)
        else:
            drop = random_prune_set(n, clustering.n_f, config.seed, layer.id)
            keep = sorted(set(range(n)) - set(drop))
        drop = sorted(set(range(n)) - set(keep))
        layers.append(PlanLayer(layer.id, keep, drop, n, clustering.n_f))
        if drop:
            edits.extend(_propagate(graph, layer.id, keep))

    # merge duplicate edits (same tensor/axis must agree)
    merged: dict[tuple[str, int], Edit] = {}
    for e in edits:
        key = (e.tensor, e.axis)
        if key in merged and merged[key].keep != e.keep:
            raise UnsupportedError(f"conflicting edits for tensor {e.tensor} axis {e.axis}")
        merged[key] = e
    edits = sorted(merged.values(), key=lambda e: (e.tensor, e.axis))

    provenance = {
        "bundle_sha256": bundle_sha256(bundle),
        "tool_version": __version__,
        "config": config.to_json(),
        "clusterings": {
            lid: {"n": len(c.assignments), "n_f": c.n_f, "tau": c.tau}
            for lid, c in sorted(clusterings.items())
        },
    }
    return PrunePlan(layers=layers, edits=edits, provenance=provenance)


# ---------------------------------------------------------------------------
# Application


def _owning_layer(graph: ArchGraph, tensor: str) -> "LayerSpec | None":
    for layer in graph.layers:
        if tensor in layer.weight_refs:
            return layer
    return None


def pruned_graph(graph: ArchGraph, plan: PrunePlan) -> ArchGraph:
    """Graph with channel counts updated per the plan (no tensor work).

    Used for cost analysis of architecture-only bundles.
    """
    out = copy.deepcopy(graph)
    by_id = {pl.layer_id: pl for pl in plan.layers}
    for layer in out.layers:
        if layer.id in by_id:
            layer.hyperparams["out_channels"] = len(by_id[layer.id].keep)
    for edit in plan.edits:
        owner = _owning_layer(out, edit.tensor)
        if owner is None:
            continue
        if owner.kind == "conv2d" and edit.axis == 1:
            owner.hyperparams["in_channels"] = len(edit.keep)
        elif owner.kind == "batchnorm":
            owner.hyperparams["channels"] = len(edit.keep)
        elif owner.kind == "linear" and edit.axis == 1:
            owner.hyperparams["in_features"] = len(edit.keep)
    return out


def apply_plan(bundle: ModelBundle, plan: PrunePlan) -> ModelBundle:
    """Slice tensors and channel counts per the plan; input is untouched."""
    actual = bundle_sha256(bundle)
    expected = plan.provenance.get("bundle_sha256")
    if expected is not None and actual != expected:
        raise ValueError(
            f"plan provenance mismatch: built for {expected[:12]}..., got {actual[:12]}..."
        )

    tensors = {name: TensorRecord(name, rec.data.copy())
               for name, rec in bundle.tensors.items()}
    graph = pruned_graph(bundle.graph, plan)

    for pl in plan.layers:
        layer = bundle.graph.layer(pl.layer_id)
        for ref in layer.weight_refs:  # kernel plus optional bias, both axis 0
            rec = tensors[ref]
            if max(pl.keep, default=-1) >= rec.data.shape[0]:
                raise IndexError(f"keep index out of range for tensor {ref}")
            tensors[ref] = TensorRecord(ref, np.take(rec.data, pl.keep, axis=0))

    for edit in plan.edits:
        rec = tensors[edit.tensor]
        if max(edit.keep, default=-1) >= rec.data.shape[edit.axis]:
            raise IndexError(f"keep index out of range for tensor {edit.tensor}")
        tensors[edit.tensor] = TensorRecord(
            edit.tensor, np.ascontiguousarray(np.take(rec.data, edit.keep, axis=edit.axis))
        )

    metadata = dict(bundle.metadata)
    metadata["pruned_from"] = actual
    return ModelBundle(tensors=tensors, graph=graph, metadata=metadata)


def zero_downstream(bundle: ModelBundle, plan: PrunePlan) -> ModelBundle:
    """Zero every weight slice the plan would delete downstream of a dropped
    filter, without changing any shape.

    The resulting network is functionally identical to apply_plan's output:
    dropped channels still exist but contribute nothing, so forward outputs
    must agree. Used by the `check` command and the soundness tests.
    """
    tensors = {name: TensorRecord(name, rec.data.copy())
               for name, rec in bundle.tensors.items()}
    for edit in plan.edits:
        rec = tensors[edit.tensor]
        dropped = sorted(set(range(rec.data.shape[edit.axis])) - set(edit.keep))
        if dropped:
            sl = [slice(None)] * rec.data.ndim
            sl[edit.axis] = dropped
            rec.data[tuple(sl)] = 0.0
    return ModelBundle(tensors=tensors, graph=copy.deepcopy(bundle.graph),
                       metadata=dict(bundle.metadata))
