"""Shared builders for test networks, forests, and random parameter draws."""

import numpy as np

from ubnn.bitpack import BitStream, pack
from ubnn.layers import (
    BinaryConvLayer,
    BinaryFcLayer,
    Direction,
    Int8ConvLayer,
    PoolSpec,
    ThresholdSpec,
    fold_batchnorm_binary,
)
from ubnn.model import InputSpec, Network
from ubnn.rf import Forest, RfNode, validate_forest


def rand_stream(rng, n_bits: int) -> BitStream:
    return BitStream.from_bits(rng.integers(0, 2, n_bits))


def rand_tensor(rng, timesteps: int, channels: int):
    return pack(
        2 * rng.integers(0, 2, timesteps * channels) - 1, (timesteps, channels)
    )


def rand_thresholds(rng, c_out: int, n: int, raw: bool = False):
    # Raw (int8) accumulators range over +-128 * N; agreement counts over [0, N].
    lo, hi = (-128 * n, 128 * n + 1) if raw else (-1, n + 2)
    return tuple(
        ThresholdSpec(int(rng.integers(lo, hi)), Direction(int(rng.integers(0, 2))))
        for _ in range(c_out)
    )


def folded_thresholds(rng, c_out: int, k: int, c_in: int):
    n = k * c_in
    return tuple(
        fold_batchnorm_binary(
            float(rng.normal(0, max(n / 2, 1))),
            float(rng.uniform(0.05, 5.0)),
            float(rng.choice([-1.0, 1.0]) * rng.uniform(0.05, 5.0)),
            float(rng.normal(0, 1.5)),
            k,
            c_in,
        )
        for _ in range(c_out)
    )


def make_bconv(rng, c_in, c_out, k, pool=None, folded=False):
    ths = (
        folded_thresholds(rng, c_out, k, c_in)
        if folded
        else rand_thresholds(rng, c_out, k * c_in)
    )
    return BinaryConvLayer(
        c_in=c_in, c_out=c_out, k=k,
        weights=tuple(rand_stream(rng, k * c_in) for _ in range(c_out)),
        thresholds=ths,
        fused_pool=pool,
    )


def make_iconv(rng, c_in, c_out, k, pool=None):
    return Int8ConvLayer(
        c_in=c_in, c_out=c_out, k=k,
        weights=tuple(rand_stream(rng, k * c_in) for _ in range(c_out)),
        thresholds=rand_thresholds(rng, c_out, k * c_in, raw=True),
        fused_pool=pool,
    )


def make_fc(rng, in_bits, n_classes):
    return BinaryFcLayer(
        in_bits=in_bits, n_classes=n_classes,
        weights=tuple(rand_stream(rng, in_bits) for _ in range(n_classes)),
        score_scale=tuple(
            int(rng.integers(-(1 << 20), 1 << 20)) for _ in range(n_classes)
        ),
        score_bias=tuple(
            int(rng.integers(-(1 << 24), 1 << 24)) for _ in range(n_classes)
        ),
    )


def walk_min(rng, n_classes=2, fused=False):
    """Two convolutions, a 4x pool, and a head on a (32, 3) int8 input.

    The pool rides as a fused field of the second convolution when ``fused``
    is set and as a standalone descriptor otherwise; both execute the same.
    """
    conv1 = make_iconv(rng, 3, 2, 7)
    if fused:
        conv2 = make_bconv(rng, 2, 2, 15, pool=PoolSpec(4, 4), folded=True)
        tail = [conv2]
    else:
        conv2 = make_bconv(rng, 2, 2, 15, folded=True)
        tail = [conv2, PoolSpec(4, 4)]
    fc = make_fc(rng, 6, n_classes)
    return Network(
        input_spec=InputSpec(timesteps=32, channels=3, domain="int8"),
        layers=tuple([conv1, *tail, fc]),
    )


def random_network(rng, max_convs=3, domain=None) -> Network:
    """Draw a valid network from the small-architecture grammar.

    Channel counts are powers of two up to 32 (the int8 entry layer may use
    any small channel count), kernels come from {3, 5, 7, 11, 15}, input
    length is at most 256, and pools appear fused or standalone at random.
    """
    if domain is None:
        domain = "int8" if rng.integers(0, 2) else "binary"
    c_in = (
        int(rng.integers(1, 12))
        if domain == "int8"
        else int(2 ** rng.integers(0, 6))
    )
    t = int(rng.integers(8, 257))
    layers = []
    cur_t, cur_c = t, c_in
    for i in range(int(rng.integers(1, max_convs + 1))):
        ks = [k for k in (3, 5, 7, 11, 15) if k <= cur_t - 1]
        if not ks:
            break
        k = int(rng.choice(ks))
        c_out = int(2 ** rng.integers(0, 6))
        t_out = cur_t - k + 1
        pool_choice = int(rng.integers(0, 4))
        fused = None
        if pool_choice == 1 and t_out >= 2:
            pk = int(rng.choice([p for p in (2, 3, 4) if p <= t_out]))
            fused = PoolSpec(pk, pk)
        if i == 0 and domain == "int8":
            layer = make_iconv(rng, cur_c, c_out, k, pool=fused)
        else:
            layer = make_bconv(rng, cur_c, c_out, k, pool=fused, folded=True)
        layers.append(layer)
        cur_t, cur_c = t_out, c_out
        if fused is not None:
            cur_t //= fused.pool_k
        elif pool_choice == 2 and cur_t >= 2:
            pk = int(rng.choice([p for p in (2, 3, 4) if p <= cur_t]))
            layers.append(PoolSpec(pk, pk))
            cur_t //= pk
        if cur_t < 4:
            break
    layers.append(make_fc(rng, cur_t * cur_c, int(rng.integers(2, 9))))
    return Network(
        input_spec=InputSpec(timesteps=t, channels=c_in, domain=domain),
        layers=tuple(layers),
    )


def random_input(rng, net: Network):
    spec = net.input_spec
    if spec.domain == "int8":
        return rng.integers(-128, 128, (spec.timesteps, spec.channels))
    return rand_tensor(rng, spec.timesteps, spec.channels)

def random_dist(rng, n_classes: int) -> tuple[int, ...]:
    # uint8 probability vector summing to exactly 255.
    cuts = np.sort(rng.integers(0, 256, n_classes - 1))
    parts = np.diff(np.concatenate([[0], cuts, [255]]))
    return tuple(int(v) for v in parts)


def gen_tree(rng, depth: int, n_features: int, leaves: list, leaf_p=0.25) -> dict:
    """Random nested-dict decision tree; appends its leaf vectors to leaves."""
    if depth == 0 or rng.random() < leaf_p:
        leaves.append(random_dist(rng, 3))
        return {"leaf": len(leaves) - 1}
    return {
        "feature": int(rng.integers(0, n_features)),
        "threshold": int(rng.integers(-128, 128)),
        "left": gen_tree(rng, depth - 1, n_features, leaves, leaf_p),
        "right": gen_tree(rng, depth - 1, n_features, leaves, leaf_p),
    }


def flatten_tree(tree: dict, nodes: list) -> int:
    """Flatten with the implicit-left-child rule; returns the root index."""
    i = len(nodes)
    if "leaf" in tree:
        nodes.append(RfNode(-1, 0, tree["leaf"]))
        return i
    nodes.append(None)  # patched once the left subtree has claimed its slots
    flatten_tree(tree["left"], nodes)
    right_at = flatten_tree(tree["right"], nodes)
    nodes[i] = RfNode(tree["feature"], tree["threshold"], right_at)
    return i


def descend_nested(tree: dict, features, leaves):
    while "leaf" not in tree:
        branch = "left" if features[tree["feature"]] <= tree["threshold"] else "right"
        tree = tree[branch]
    return leaves[tree["leaf"]]


def random_forest(rng, n_trees: int, depth: int, n_features: int, leaf_p=0.25):
    leaves: list = []
    nodes: list = []
    roots = []
    trees = []
    for _ in range(n_trees):
        t = gen_tree(rng, depth, n_features, leaves, leaf_p)
        trees.append(t)
        roots.append(flatten_tree(t, nodes))
    forest = Forest(
        nodes=tuple(nodes),
        leaves=tuple(leaves),
        roots=tuple(roots),
        n_classes=3,
        n_features=n_features,
    )
    validate_forest(forest)
    return forest, trees, leaves
