"""FLOP and parameter accounting.

Convention: one multiply-accumulate counts as one FLOP, and only conv2d and
linear layers are counted; BN, activations, pooling and elementwise adds
cost zero. Per-parameter accounting matches the same two layer kinds; BN
parameters and biases are excluded in the default ("paper-comparable") mode
and included with full=True. Many other tools count 2 FLOPs per MAC --
divide accordingly when comparing.
"""

from __future__ import annotations

from dataclasses import dataclass

from .bundle import ArchGraph, LayerSpec, infer_channels


@dataclass
class LayerCost:
    layer_id: str
    kind: str
    spatial: tuple[int, int] | None
    maps_before: int
    maps_after: int
    flops: int
    flops_after: int
    params: int
    params_after: int

    @property
    def flop_reduction_pct(self) -> float:
        return 100.0 * (1.0 - self.flops_after / self.flops) if self.flops else 0.0

    @property
    def param_reduction_pct(self) -> float:
        return 100.0 * (1.0 - self.params_after / self.params) if self.params else 0.0


@dataclass
class CostReport:
    layers: list[LayerCost]

    @property
    def total_flops(self) -> int:
        return sum(l.flops for l in self.layers)

    @property
    def total_flops_after(self) -> int:
        return sum(l.flops_after for l in self.layers)

    @property
    def total_params(self) -> int:
        return sum(l.params for l in self.layers)

    @property
    def total_params_after(self) -> int:
        return sum(l.params_after for l in self.layers)

    @property
    def flop_reduction_pct(self) -> float:
        return 100.0 * (1.0 - self.total_flops_after / self.total_flops) \
            if self.total_flops else 0.0

    @property
    def param_reduction_pct(self) -> float:
        return 100.0 * (1.0 - self.total_params_after / self.total_params) \
            if self.total_params else 0.0


def layer_flops(layer: LayerSpec, in_channels: int, out_channels: int) -> int:
    """MACs for one layer (1 MAC = 1 FLOP); zero for non-conv/linear kinds."""
    if layer.kind == "conv2d":
        k = layer.hyperparams["kernel"]
        v, h = layer.out_spatial
        return k * k * in_channels * out_channels * v * h
    if layer.kind == "linear":
        return in_channels * out_channels
    return 0


def layer_params(layer: LayerSpec, in_channels: int, out_channels: int,
                 full: bool = False) -> int:
    if layer.kind == "conv2d":
        k = layer.hyperparams["kernel"]
        n = k * k * in_channels * out_channels
        if full and layer.hyperparams.get("bias", False):
            n += out_channels
        return n
    if layer.kind == "linear":
        n = in_channels * out_channels
        if full and layer.hyperparams.get("bias", False):
            n += out_channels
        return n
    if full and layer.kind == "batchnorm":
        return 2 * layer.hyperparams["channels"]  # scale + shift (running stats are buffers)
    return 0


def model_cost(graph: ArchGraph, full: bool = False) -> CostReport:
    """Per-layer and total costs of one architecture (after == before)."""
    chans, diags = infer_channels(graph)
    if diags:
        raise ValueError("invalid graph: " + "; ".join(diags))
    layers = []
    for layer in graph.layers:
        cin, cout = chans[layer.id]
        f = layer_flops(layer, cin, cout)
        p = layer_params(layer, cin, cout, full=full)
        if f == 0 and p == 0:
            continue
        layers.append(LayerCost(
            layer_id=layer.id, kind=layer.kind, spatial=layer.out_spatial,
            maps_before=cout, maps_after=cout,
            flops=f, flops_after=f, params=p, params_after=p,
        ))
    return CostReport(layers=layers)


def diff_cost(graph_before: ArchGraph, graph_after: ArchGraph,
              full: bool = False) -> CostReport:
    """Before/after comparison of two graphs with identical topology."""
    before = model_cost(graph_before, full=full)
    after = model_cost(graph_after, full=full)
    if [l.layer_id for l in before.layers] != [l.layer_id for l in after.layers]:
        raise ValueError("graphs do not share a layer topology")
    layers = []
    for b, a in zip(before.layers, after.layers):
        layers.append(LayerCost(
            layer_id=b.layer_id, kind=b.kind, spatial=b.spatial,
            maps_before=b.maps_before, maps_after=a.maps_before,
            flops=b.flops, flops_after=a.flops,
            params=b.params, params_after=a.params,
        ))
    return CostReport(layers=layers)


# ---------------------------------------------------------------------------
# Rendering


def report_text(report: CostReport) -> str:
    header = (
        f"{'layer':<14}{'v x h':>9}{'maps':>12}{'FLOPs':>24}{'params':>24}{'FLOP%':>8}"
    )
    lines = [header, "-" * len(header)]
    for l in report.layers:
        spatial = f"{l.spatial[0]}x{l.spatial[1]}" if l.spatial else "-"
        lines.append(
            f"{l.layer_id:<14}{spatial:>9}"
            f"{l.maps_before:>6}>{l.maps_after:<5}"
            f"{l.flops:>12}>{l.flops_after:<11}"
            f"{l.params:>12}>{l.params_after:<11}"
            f"{l.flop_reduction_pct:>7.1f}%"
        )
    lines.append("-" * len(header))
    lines.append(
        f"{'total':<14}{'':>9}{'':>12}"
        f"{report.total_flops:>12}>{report.total_flops_after:<11}"
        f"{report.total_params:>12}>{report.total_params_after:<11}"
        f"{report.flop_reduction_pct:>7.1f}%"
    )
    lines.append(
        f"reductions: FLOP {report.flop_reduction_pct:.1f}%, "
        f"params {report.param_reduction_pct:.1f}%"
    )
    return "\n".join(lines)


def report_csv(report: CostReport) -> str:
    lines = ["layer_id,v,h,maps_before,maps_after,flops_before,flops_after,"
             "params_before,params_after,flop_pct"]
    for l in report.layers:
        v, h = l.spatial if l.spatial else ("", "")
        lines.append(
            f"{l.layer_id},{v},{h},{l.maps_before},{l.maps_after},"
            f"{l.flops},{l.flops_after},{l.params},{l.params_after},"
            f"{l.flop_reduction_pct:.1f}"
        )
    lines.append(
        f"total,,,,,{report.total_flops},{report.total_flops_after},"
        f"{report.total_params},{report.total_params_after},"
        f"{report.flop_reduction_pct:.1f}"
    )
    return "\n".join(lines) + "\n"
