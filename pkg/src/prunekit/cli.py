"""Command-line workflow: inspect | validate | sweep | plan | prune | cost | check.

Exit codes: 0 success, 1 validation/check failure, 2 usage error.
All randomness flows from --seed; artifact-producing commands write a
<output>.manifest.json recording inputs, outputs, and their hashes.
"""

from __future__ import annotations

import argparse
import concurrent.futures
import hashlib
import json
import sys
import time
from importlib import resources

import numpy as np

from . import __version__
from .bundle import BundleError, ModelBundle, infer_channels, read_bundle, validate_bundle, write_bundle
from .cluster import agglomerate, sweep
from .cost import diff_cost, model_cost, report_csv, report_text
from .featurize import kernel_matrix
from .plan import (
    PruneConfig,
    PrunePlan,
    apply_plan,
    build_plan,
    bundle_sha256,
    prunable_layers,
    pruned_graph,
    zero_downstream,
)
from .refexec import forward

ARCH_NAMES = ("vgg16", "resnet56", "resnet110")


def _load_bundle(path: str) -> ModelBundle:
    """Read a bundle file; bare architecture names resolve to shipped files."""
    if path in ARCH_NAMES:
        ref = resources.files("prunekit") / "arch" / f"{path}.nwb"
        return read_bundle(str(ref))
    return read_bundle(path)


def _file_sha256(path: str) -> str:
    with open(path, "rb") as fh:
        return hashlib.sha256(fh.read()).hexdigest()


def _write_manifest(command: str, config: dict, inputs: list[str], outputs: list[str]) -> None:
    manifest = {
        "command": command,
        "config": config,
        "inputs": {p: _file_sha256(p) for p in inputs},
        "outputs": {p: _file_sha256(p) for p in outputs},
        "tool_version": __version__,
        "timestamp": time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime()),
    }
    path = outputs[0] + ".manifest.json"
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, sort_keys=True, indent=2)
        fh.write("\n")


def _parse_taus(spec: str) -> list[float]:
    """Either 'start:stop:step' or a comma-separated list."""
    if ":" in spec:
        start, stop, step = (float(x) for x in spec.split(":"))
        taus, t = [], start
        while t <= stop + 1e-12:
            taus.append(round(t, 10))
            t += step
        return taus
    return [float(x) for x in spec.split(",")]


def _config_from_args(args) -> PruneConfig:
    base = {}
    if getattr(args, "config", None):
        with open(args.config, encoding="utf-8") as fh:
            base = json.load(fh)
    config = PruneConfig.from_json(base)
    if args.tau is not None:
        config.default_tau = args.tau
    for item in args.stage_tau or []:
        stage, _, value = item.partition("=")
        if not value:
            raise ValueError(f"--stage-tau expects stage=value, got {item!r}")
        config.per_stage_tau[stage] = float(value)
    config.skip_layers |= set(args.skip or [])
    if args.heuristic is not None:
        config.heuristic = args.heuristic
    if args.seed is not None:
        config.seed = args.seed
    if args.rep is not None:
        config.representative = {"random": "random", "first-index": "first-index"}[args.rep]
    return config


def _cluster_one(payload):
    fm, tau = payload
    return fm.layer_id, agglomerate(fm, tau)


def _cluster_layers(bundle: ModelBundle, config: PruneConfig, jobs: int):
    work = []
    for lid in prunable_layers(bundle.graph, config):
        layer = bundle.graph.layer(lid)
        work.append((kernel_matrix(bundle, lid), config.tau_for(layer.stage)))
    if jobs > 1:
        with concurrent.futures.ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_cluster_one, work))
    else:
        results = [_cluster_one(w) for w in work]
    return dict(results)


# ---------------------------------------------------------------------------
# Subcommands


def cmd_inspect(args) -> int:
    bundle = _load_bundle(args.bundle)
    chans, _ = infer_channels(bundle.graph)
    print(f"{'layer':<14}{'kind':<11}{'in>out ch':>12}{'spatial':>10}{'weights':>28}")
    for layer in bundle.graph.layers:
        cin, cout = chans.get(layer.id, (0, 0))
        spatial = f"{layer.out_spatial[0]}x{layer.out_spatial[1]}" if layer.out_spatial else "-"
        shapes = ",".join(
            "x".join(map(str, bundle.tensors[r].shape))
            for r in layer.weight_refs if r in bundle.tensors
        ) or "-"
        print(f"{layer.id:<14}{layer.kind:<11}{f'{cin}>{cout}':>12}{spatial:>10}{shapes:>28}")
    if not bundle.tensors:
        print("(architecture only: no tensors)")
    diags = validate_bundle(bundle)
    for d in diags:
        print(f"diagnostic: {d}", file=sys.stderr)
    return 1 if diags else 0


def cmd_validate(args) -> int:
    bundle = _load_bundle(args.bundle)
    diags = validate_bundle(bundle)
    for d in diags:
        print(d, file=sys.stderr)
    print("valid" if not diags else f"{len(diags)} diagnostic(s)")
    return 1 if diags else 0


def cmd_sweep(args) -> int:
    bundle = _load_bundle(args.bundle)
    taus = _parse_taus(args.taus)
    config = PruneConfig()  # structural protection only; sweep ignores tau config
    rows = ["layer_id,tau,n_f"]
    layer_ids = prunable_layers(bundle.graph, config)
    work = [(kernel_matrix(bundle, lid), taus) for lid in layer_ids]
    if args.jobs > 1:
        with concurrent.futures.ProcessPoolExecutor(max_workers=args.jobs) as pool:
            results = list(pool.map(_sweep_one, work))
    else:
        results = [_sweep_one(w) for w in work]
    for lid, pairs in zip(layer_ids, results):
        for tau, n_f in pairs:
            rows.append(f"{lid},{tau},{n_f}")
    text = "\n".join(rows) + "\n"
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(text)
        _write_manifest("sweep", {"taus": taus}, _input_paths(args.bundle), [args.out])
    else:
        print(text, end="")
    return 0


def _sweep_one(payload):
    fm, taus = payload
    return sweep(fm, taus)


def _input_paths(bundle_arg: str) -> list[str]:
    if bundle_arg in ARCH_NAMES:
        return [str(resources.files("prunekit") / "arch" / f"{bundle_arg}.nwb")]
    return [bundle_arg]


def _build_plan_for(args) -> tuple[ModelBundle, PruneConfig, PrunePlan]:
    bundle = _load_bundle(args.bundle)
    config = _config_from_args(args)
    config.validate(bundle.graph)
    clusterings = _cluster_layers(bundle, config, args.jobs)
    return bundle, config, build_plan(bundle, config, clusterings)


def cmd_plan(args) -> int:
    _, config, plan = _build_plan_for(args)
    plan.save(args.out_plan)
    _write_manifest("plan", config.to_json(), _input_paths(args.bundle), [args.out_plan])
    kept = sum(len(pl.keep) for pl in plan.layers)
    total = sum(pl.n_original for pl in plan.layers)
    print(f"plan written to {args.out_plan}: keeping {kept}/{total} filters "
          f"across {len(plan.layers)} layers")
    return 0


def cmd_prune(args) -> int:
    bundle, config, plan = _build_plan_for(args)
    pruned = apply_plan(bundle, plan)
    diags = validate_bundle(pruned)
    if diags:
        for d in diags:
            print(d, file=sys.stderr)
        return 1
    plan.save(args.out_plan)
    write_bundle(pruned, args.out_bundle)
    _write_manifest("prune", config.to_json(), _input_paths(args.bundle),
                    [args.out_bundle, args.out_plan])
    report = diff_cost(bundle.graph, pruned.graph)
    print(report_csv(report) if args.format == "csv" else report_text(report))
    return 0


def cmd_cost(args) -> int:
    bundle = _load_bundle(args.arch)
    if args.after:
        other = _load_bundle(args.after)
        report = diff_cost(bundle.graph, other.graph, full=args.full)
    elif args.plan:
        plan = PrunePlan.load(args.plan)
        report = diff_cost(bundle.graph, pruned_graph(bundle.graph, plan), full=args.full)
    else:
        report = model_cost(bundle.graph, full=args.full)
    print(report_csv(report) if args.format == "csv" else report_text(report))
    return 0


def cmd_check(args) -> int:
    before = _load_bundle(args.before)
    after = _load_bundle(args.after)
    plan = PrunePlan.load(args.plan)

    failures = 0

    def check(name: str, ok: bool, detail: str = "") -> None:
        nonlocal failures
        print(f"[{'pass' if ok else 'FAIL'}] {name}" + (f": {detail}" if detail else ""))
        failures += 0 if ok else 1

    expected = plan.provenance.get("bundle_sha256")
    check("plan provenance matches before-bundle", bundle_sha256(before) == expected)
    diags = validate_bundle(after)
    check("after-bundle validates", not diags, "; ".join(diags[:3]))

    try:
        reapplied = apply_plan(before, plan)
    except (BundleError, ValueError, IndexError) as exc:
        check("plan applies to before-bundle", False, f"shape/structure: {exc}")
        return 1
    same = all(
        name in after.tensors
        and reapplied.tensors[name].data.tobytes() == after.tensors[name].data.tobytes()
        for name in reapplied.tensors
    ) and set(reapplied.tensors) == set(after.tensors)
    check("after-bundle equals re-applied plan output", same)

    if failures == 0 and before.graph.layers[-1].kind == "linear":
        zeroed = zero_downstream(before, plan)
        entry = before.graph.layer(before.graph.inputs[0])
        cin = entry.hyperparams.get("in_channels", 1)
        h, w = entry.in_spatial or (8, 8)
        rng = np.random.default_rng(args.seed)
        worst = 0.0
        for _ in range(args.inputs):
            x = rng.standard_normal((cin, h, w))
            worst = max(worst, float(np.max(np.abs(forward(zeroed, x) - forward(after, x)))))
        check("zero-downstream forward agreement", worst <= 1e-5, f"max |diff| = {worst:.2e}")

    return 1 if failures else 0


# ---------------------------------------------------------------------------


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON file mirroring the prune configuration")
    p.add_argument("--tau", type=float, help="default similarity threshold")
    p.add_argument("--stage-tau", action="append", metavar="STAGE=TAU",
                   help="per-stage threshold override (repeatable)")
    p.add_argument("--skip", action="append", metavar="LAYER",
                   help="layer id to leave untouched (repeatable)")
    p.add_argument("--heuristic", choices=["A", "B"],
                   help="A: keep one representative per cluster; B: random drops")
    p.add_argument("--rep", choices=["random", "first-index"],
                   help="representative choice for heuristic A")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="prunekit",
                                     description="Redundant-filter pruning toolkit")
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("--seed", type=int, default=0, help="seed for all randomness")
    parser.add_argument("--jobs", type=int, default=1, help="parallel clustering workers")
    parser.add_argument("--format", choices=["text", "csv"], default="text")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("inspect", help="per-layer summary of a bundle")
    p.add_argument("bundle")
    p.set_defaults(func=cmd_inspect)

    p = sub.add_parser("validate", help="run bundle diagnostics")
    p.add_argument("bundle")
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("sweep", help="n_f vs tau per prunable layer, as CSV")
    p.add_argument("bundle")
    p.add_argument("--taus", default="0.1:1.0:0.01",
                   help="'start:stop:step' or comma list (default 0.1:1.0:0.01)")
    p.add_argument("--out", help="CSV output path (default stdout)")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("plan", help="cluster and write a prune plan")
    p.add_argument("bundle")
    p.add_argument("--out-plan", required=True)
    _add_config_flags(p)
    p.set_defaults(func=cmd_plan)

    p = sub.add_parser("prune", help="plan, apply, and report in one step")
    p.add_argument("bundle")
    p.add_argument("--out-plan", required=True)
    p.add_argument("--out-bundle", required=True)
    _add_config_flags(p)
    p.set_defaults(func=cmd_prune)

    p = sub.add_parser("cost", help="FLOP/parameter report")
    p.add_argument("arch", help="bundle path or one of: " + ", ".join(ARCH_NAMES))
    p.add_argument("after", nargs="?", help="optional pruned bundle to diff against")
    p.add_argument("--plan", help="diff against a plan instead of a second bundle")
    p.add_argument("--full", action="store_true",
                   help="count biases and BN parameters too")
    p.set_defaults(func=cmd_cost)

    p = sub.add_parser("check", help="verify a (before, after, plan) triple")
    p.add_argument("before")
    p.add_argument("after")
    p.add_argument("plan")
    p.add_argument("--inputs", type=int, default=5, help="random inputs for forward check")
    p.set_defaults(func=cmd_check)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except BundleError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (ValueError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
