"""Independent oracles and shared constructions for the test suite.

Everything here is written against the definitions directly, not against
the library's implementation paths, so tests can compare the two.
"""

from __future__ import annotations

import numpy as np

from prunekit.archs import _Builder
from prunekit.bundle import ModelBundle


# ---------------------------------------------------------------------------
# Naive O(n^3) clustering reference: recompute every cluster-pair average
# from the raw similarity matrix each round.


def naive_pair_avg(S: np.ndarray, ca: list[int], cb: list[int]) -> float:
    total = 0.0
    for i in ca:
        for j in cb:
            total += S[i, j]
    return total / (len(ca) * len(cb))


def naive_agglomerate(S: np.ndarray, tau: float) -> np.ndarray:
    """Returns assignments (cluster id = min member index).

    Every round recomputes every cluster-pair average directly from S
    (no incremental update), so this is O(n^3) overall and shares no code
    path with the library's heap/Lance-Williams implementation.
    """
    n = S.shape[0]
    clusters: list[list[int]] = [[i] for i in range(n)]
    while len(clusters) > 1:
        best_key = None
        best = None
        for a in range(len(clusters)):
            for b in range(a + 1, len(clusters)):
                s = float(S[np.ix_(clusters[a], clusters[b])].mean())
                members = clusters[a] + clusters[b]
                key = (-s, min(members), max(members))
                if best_key is None or key < best_key:
                    best_key, best = key, (a, b)
        if not (-best_key[0] > tau):
            break
        a, b = best
        clusters[a] = sorted(clusters[a] + clusters[b])
        del clusters[b]
    assignments = np.empty(n, dtype=np.int64)
    for members in clusters:
        assignments[members] = min(members)
    return assignments


def brute_force_similarity(cols: np.ndarray) -> np.ndarray:
    """Entry-by-entry cosine matrix with an explicit double loop."""
    n = cols.shape[1]
    S = np.zeros((n, n))
    for i in range(n):
        for j in range(n):
            u = cols[:, i].astype(np.float64)
            v = cols[:, j].astype(np.float64)
            nu, nv = np.linalg.norm(u), np.linalg.norm(v)
            S[i, j] = 0.0 if nu == 0 or nv == 0 else float(u @ v) / (nu * nv)
    return S


# ---------------------------------------------------------------------------
# Planted-redundancy filter matrices


def planted_matrix(n_groups: int, members_per_group: int, dim: int,
                   rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Columns with within-group cosine >= 0.95 and cross-group <= 0.3.

    Prototypes are orthonormal, members are prototypes plus small noise;
    the construction is re-drawn until the bounds verifiably hold.
    """
    for _ in range(100):
        protos, _ = np.linalg.qr(rng.standard_normal((dim, n_groups)))
        cols, labels = [], []
        for g in range(n_groups):
            for _ in range(members_per_group):
                noise = (0.15 / np.sqrt(dim)) * rng.standard_normal(dim)
                cols.append(protos[:, g] + noise)
                labels.append(g)
        cols = np.stack(cols, axis=1)
        unit = cols / np.linalg.norm(cols, axis=0)
        gram = unit.T @ unit
        labels = np.array(labels)
        same = labels[:, None] == labels[None, :]
        if gram[same].min() >= 0.95 and np.abs(gram[~same]).max() <= 0.3:
            return cols.astype(np.float32), labels
    raise AssertionError("planted construction failed repeatedly")


# ---------------------------------------------------------------------------
# Second, independent conv/pool implementations (scalar loops)


def scalar_conv2d(x: np.ndarray, w: np.ndarray, stride: int, padding: int) -> np.ndarray:
    cout, cin, kh, kw = w.shape
    _, hin, win = x.shape
    hout = (hin + 2 * padding - kh) // stride + 1
    wout = (win + 2 * padding - kw) // stride + 1
    out = np.zeros((cout, hout, wout))
    for oc in range(cout):
        for oy in range(hout):
            for ox in range(wout):
                acc = 0.0
                for ic in range(cin):
                    for ky in range(kh):
                        for kx in range(kw):
                            iy = oy * stride + ky - padding
                            ix = ox * stride + kx - padding
                            if 0 <= iy < hin and 0 <= ix < win:
                                acc += float(w[oc, ic, ky, kx]) * float(x[ic, iy, ix])
                out[oc, oy, ox] = acc
    return out


# ---------------------------------------------------------------------------
# Toy network builders


def toy_chain(in_ch=3, mid=4, out_ch=2, spatial=(6, 6), seed=0) -> ModelBundle:
    """conv(in->mid) - BN - relu - conv(mid->out) - ... - linear head."""
    b = _Builder()
    sp = b.conv("conv1", in_ch, mid, 3, spatial)
    b.bn("bn1", mid, sp)
    b.simple("relu1", "relu", sp)
    sp = b.conv("conv2", mid, out_ch, 3, sp)
    b.simple("relu2", "relu", sp)
    b.simple("flatten", "flatten", sp, sp)
    b.linear("fc", out_ch * sp[0] * sp[1], 3)
    return b.finish({"model": "toy-chain"}, include_tensors=True, seed=seed)


def toy_vgg(seed=0) -> ModelBundle:
    """Small VGG-shaped net: two conv blocks with pools, then a linear head."""
    b = _Builder()
    sp = b.conv("conv1", 3, 8, 3, (8, 8))
    b.bn("bn1", 8, sp)
    b.simple("relu1", "relu", sp)
    sp2 = tuple(s // 2 for s in sp)
    b.simple("pool1", "maxpool", sp, sp2, window=2, stride=2)
    sp = b.conv("conv2", 8, 12, 3, sp2)
    b.bn("bn2", 12, sp)
    b.simple("relu2", "relu", sp)
    sp2 = tuple(s // 2 for s in sp)
    b.simple("pool2", "avgpool", sp, sp2, window=2, stride=2)
    b.simple("flatten", "flatten", sp2, sp2)
    b.linear("fc", 12 * sp2[0] * sp2[1], 5)
    return b.finish({"model": "toy-vgg"}, include_tensors=True, seed=seed)


def toy_resnet(widths=(6, 10), blocks=2, spatial=(8, 8), seed=0) -> ModelBundle:
    """Miniature residual net in the same shape language as the big builders."""
    b = _Builder()
    sp = b.conv("stem", 3, widths[0], 3, spatial)
    b.bn("stem_bn", widths[0], sp)
    b.simple("stem_relu", "relu", sp)
    cin = widths[0]
    for s, width in enumerate(widths, start=1):
        for blk in range(1, blocks + 1):
            name = f"s{s}b{blk}"
            transition = s > 1 and blk == 1
            stride = 2 if transition else 1
            block_in = b._tail
            sp_out = b.conv(f"{name}c1", cin, width, 3, sp, stride=stride, stage=f"stage{s}")
            b.bn(f"{name}bn1", width, sp_out, stage=f"stage{s}")
            b.simple(f"{name}relu1", "relu", sp_out, stage=f"stage{s}")
            b.conv(f"{name}c2", width, width, 3, sp_out, stage=f"stage{s}")
            b.bn(f"{name}bn2", width, sp_out, stage=f"stage{s}")
            if not transition:
                from prunekit.bundle import LayerSpec
                b.add_layer(LayerSpec(id=f"{name}add", kind="add", in_spatial=sp_out,
                                      out_spatial=sp_out, stage=f"stage{s}"),
                            after=[block_in, f"{name}bn2"])
            b.simple(f"{name}relu2", "relu", sp_out, stage=f"stage{s}")
            sp, cin = sp_out, width
    b.simple("gap", "avgpool", sp, (1, 1), window=sp[0], stride=sp[0])
    b.simple("flatten", "flatten", (1, 1), (1, 1))
    b.linear("fc", cin, 4)
    return b.finish({"model": "toy-resnet"}, include_tensors=True, seed=seed)


def plant_filters(bundle: ModelBundle, layer_id: str, n_groups: int,
                  rng: np.random.Generator) -> np.ndarray:
    """Overwrite a conv layer's filters with a planted-redundancy matrix.

    Returns the group labels. Filter count must divide evenly by n_groups.
    """
    layer = bundle.graph.layer(layer_id)
    ref = layer.weight_refs[0]
    w = bundle.tensors[ref].data
    n = w.shape[0]
    assert n % n_groups == 0
    dim = int(np.prod(w.shape[1:]))
    cols, labels = planted_matrix(n_groups, n // n_groups, dim, rng)
    bundle.tensors[ref].data = cols.T.reshape(w.shape).astype(np.float32)
    return labels
