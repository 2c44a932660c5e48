"""prunekit: redundant-filter pruning for convolutional networks.

Detects near-duplicate conv filters by average-linkage agglomerative
clustering in weight space (cosine similarity, threshold tau), builds
structural prune plans with cross-layer propagation, applies them to a
neutral weight-bundle format, and reports FLOP/parameter savings.
"""

__version__ = "0.1.0"
