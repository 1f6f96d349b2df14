"""Random-forest inference, feature extraction, and the forest format."""

from fractions import Fraction

import numpy as np
import pytest

from ubnn import oracle
from ubnn.errors import (
    BadMagicError,
    InterchangeError,
    MalformedForestError,
    TruncatedError,
    ValidationError,
    VersionError,
)
from ubnn.rf import (
    N_FEATURES,
    FeatureQuantizer,
    Forest,
    RfNode,
    extract_features,
    forest_from_json,
    forest_to_json,
    load_forest,
    load_forest_bytes,
    quantize_features,
    rf_predict,
    save_forest,
    save_forest_bytes,
    validate_forest,
)

import helpers
from helpers import descend_nested

rng = np.random.default_rng(0xF03E57)


def leaf_vec(n_classes: int, hot: int) -> tuple[int, ...]:
    vec = [0] * n_classes
    vec[hot] = 255
    return tuple(vec)


def single_leaf_forest(dist, n_features=3) -> Forest:
    return Forest(
        nodes=(RfNode(-1, 0, 0),),
        leaves=(tuple(dist),),
        roots=(0,),
        n_classes=len(dist),
        n_features=n_features,
    )


def random_forest(n_trees: int, depth: int, n_features: int):
    return helpers.random_forest(rng, n_trees, depth, n_features)


class TestConstruction:
    def test_node_field_ranges(self):
        RfNode(-1, -128, 65535)
        RfNode(32767, 127, 0)
        with pytest.raises(ValueError):
            RfNode(-2, 0, 0)
        with pytest.raises(ValueError):
            RfNode(0, 128, 0)
        with pytest.raises(ValueError):
            RfNode(0, 0, 65536)

    def test_leaf_vector_shape_and_range(self):
        with pytest.raises(ValueError):
            Forest(
                nodes=(RfNode(-1, 0, 0),), leaves=((1, 2),), roots=(0,),
                n_classes=3, n_features=1,
            )
        with pytest.raises(ValueError):
            Forest(
                nodes=(RfNode(-1, 0, 0),), leaves=((256, 0),), roots=(0,),
                n_classes=2, n_features=1,
            )


class TestValidateForest:
    def ok(self):
        return single_leaf_forest((255, 0))

    def test_accepts_single_leaf(self):
        validate_forest(self.ok())

    def test_rejects_empty_roots(self):
        f = self.ok()
        with pytest.raises(ValidationError):
            validate_forest(
                Forest(nodes=f.nodes, leaves=f.leaves, roots=(),
                       n_classes=2, n_features=3)
            )

    def test_rejects_root_out_of_range(self):
        f = self.ok()
        with pytest.raises(ValidationError):
            validate_forest(
                Forest(nodes=f.nodes, leaves=f.leaves, roots=(1,),
                       n_classes=2, n_features=3)
            )

    def test_rejects_leaf_vector_out_of_range(self):
        forest = Forest(
            nodes=(RfNode(-1, 0, 5),), leaves=(leaf_vec(2, 0),), roots=(0,),
            n_classes=2, n_features=3,
        )
        with pytest.raises(ValidationError):
            validate_forest(forest)

    def test_rejects_unknown_feature(self):
        forest = Forest(
            nodes=(RfNode(3, 0, 2), RfNode(-1, 0, 0), RfNode(-1, 0, 0)),
            leaves=(leaf_vec(2, 0),), roots=(0,),
            n_classes=2, n_features=3,
        )
        with pytest.raises(ValidationError, match="feature"):
            validate_forest(forest)

    def test_rejects_internal_node_without_left_child(self):
        forest = Forest(
            nodes=(RfNode(-1, 0, 0), RfNode(0, 0, 0)),
            leaves=(leaf_vec(2, 0),), roots=(0,),
            n_classes=2, n_features=3,
        )
        with pytest.raises(ValidationError, match="left child"):
            validate_forest(forest)

    def test_rejects_backward_right_child(self):
        forest = Forest(
            nodes=(RfNode(0, 0, 0), RfNode(-1, 0, 0)),
            leaves=(leaf_vec(2, 0),), roots=(0,),
            n_classes=2, n_features=3,
        )
        with pytest.raises(ValidationError, match="forward"):
            validate_forest(forest)

    def test_rejects_bad_leaf_sum(self):
        forest = Forest(
            nodes=(RfNode(-1, 0, 0),), leaves=((100, 100),), roots=(0,),
            n_classes=2, n_features=3,
        )
        with pytest.raises(ValidationError, match="sums"):
            validate_forest(forest)

    def test_allows_rounding_slack(self):
        # 255 +- n_classes tolerates per-entry rounding of the exporter.
        validate_forest(single_leaf_forest((128, 129)))
        validate_forest(single_leaf_forest((126, 127)))


class TestPredict:
    def test_single_leaf_ignores_features(self):
        forest = single_leaf_forest((10, 200, 45))
        for _ in range(5):
            feats = [int(v) for v in rng.integers(-128, 128, 3)]
            assert rf_predict(feats, forest) == 1

    def test_two_tree_tie_breaks_low(self):
        forest = Forest(
            nodes=(RfNode(-1, 0, 0), RfNode(-1, 0, 1)),
            leaves=((200, 55), (55, 200)),
            roots=(0, 1),
            n_classes=2, n_features=3,
        )
        assert rf_predict([0, 0, 0], forest) == 0

    def test_split_direction(self):
        # feature <= threshold goes left (next node), else right.
        forest = Forest(
            nodes=(
                RfNode(0, 10, 2),
                RfNode(-1, 0, 0),
                RfNode(-1, 0, 1),
            ),
            leaves=(leaf_vec(2, 0), leaf_vec(2, 1)),
            roots=(0,),
            n_classes=2, n_features=1,
        )
        validate_forest(forest)
        assert rf_predict([10], forest) == 0  # boundary goes left
        assert rf_predict([11], forest) == 1
        assert rf_predict([-128], forest) == 0

    def test_matches_recursive_oracle_and_nested_descent(self):
        forest, trees, leaves = random_forest(12, 8, N_FEATURES)
        for _ in range(300):
            feats = [int(v) for v in rng.integers(-128, 128, N_FEATURES)]
            want = rf_predict(feats, forest)
            assert want == oracle.rf_predict_reference(forest, feats)
            totals = [0, 0, 0]
            for t in trees:
                vec = descend_nested(t, feats, leaves)
                for c in range(3):
                    totals[c] += vec[c]
            assert want == oracle.predict_reference(totals)

    def test_cycle_guard(self):
        # right_child pointing at itself never reaches a leaf; the step
        # counter must trip instead of spinning. validate_forest would
        # reject this shape, which is exactly why predict must not trust it.
        forest = Forest(
            nodes=(RfNode(0, 0, 1), RfNode(0, 0, 1)),
            leaves=(leaf_vec(2, 0),),
            roots=(1,),
            n_classes=2, n_features=1,
        )
        with pytest.raises(MalformedForestError):
            rf_predict([64], forest)

    def test_leaf_index_guard(self):
        forest = Forest(
            nodes=(RfNode(-1, 0, 7),), leaves=(leaf_vec(2, 0),), roots=(0,),
            n_classes=2, n_features=1,
        )
        with pytest.raises(MalformedForestError):
            rf_predict([0], forest)

    def test_input_validation(self):
        forest = single_leaf_forest((255, 0))
        with pytest.raises(ValueError):
            rf_predict([0, 0], forest)
        with pytest.raises(ValueError):
            rf_predict([0, 0, 128], forest)


class TestFeatures:
    def window(self, cols):
        return np.stack(cols, axis=1)

    def test_constant_window(self):
        w = np.full((32, 3), 7)
        feats = extract_features(w)
        for a in range(3):
            avg, var, energy, mx, mn, p2p, zc = feats[a * 7 : a * 7 + 7]
            assert (avg, var, energy) == (7.0, 0.0, 32 * 49.0)
            assert (mx, mn, p2p, zc) == (7.0, 7.0, 0.0, 0.0)

    def test_alternating_window(self):
        col = np.array([1, -1] * 16)
        feats = extract_features(self.window([col, col, col]))
        assert feats[0:7] == [0.0, 1.0, 32.0, 1.0, -1.0, 2.0, 31.0]

    def test_zeros_do_not_toggle_zero_crossings(self):
        col = np.zeros(32, dtype=int)
        col[:6] = [1, 0, -1, 0, 1, -1]
        feats = extract_features(self.window([col, col, col]))
        # Only the direct 1 -> -1 step has product < 0.
        assert feats[6] == 1.0

    def test_matches_exact_rational_oracle(self):
        for _ in range(50):
            w = rng.integers(-128, 128, (32, 3))
            feats = extract_features(w)
            for a in range(3):
                x = [int(v) for v in w[:, a]]
                s, ss = sum(x), sum(v * v for v in x)
                # Dyadic denominators keep the float path exact.
                assert feats[a * 7 + 0] == Fraction(s, 32)
                assert feats[a * 7 + 1] == Fraction(32 * ss - s * s, 32 * 32)
                assert feats[a * 7 + 2] == ss
                assert feats[a * 7 + 3] == max(x)
                assert feats[a * 7 + 4] == min(x)
                assert feats[a * 7 + 5] == max(x) - min(x)
                assert feats[a * 7 + 6] == sum(
                    1 for i in range(31) if x[i] * x[i + 1] < 0
                )

    def test_axis_permutation_covariance(self):
        w = rng.integers(-128, 128, (32, 3))
        base = extract_features(w)
        for perm in [(1, 2, 0), (2, 0, 1), (0, 2, 1)]:
            permuted = extract_features(w[:, perm])
            for a, src in enumerate(perm):
                assert permuted[a * 7 : a * 7 + 7] == base[src * 7 : src * 7 + 7]

    def test_shape_and_range_errors(self):
        with pytest.raises(ValueError):
            extract_features(np.zeros((31, 3), int))
        with pytest.raises(ValueError):
            extract_features(np.zeros((32, 2), int))
        with pytest.raises(ValueError):
            extract_features(np.zeros((32, 3)))
        with pytest.raises(ValueError):
            extract_features(np.full((32, 3), 200))


class TestQuantize:
    def test_zero_point_maps_to_zero(self):
        q = FeatureQuantizer(scale=(2.0, 0.5), zero=(10.0, -3.0))
        assert quantize_features([10.0, -3.0], q) == [0, 0]

    def test_saturation(self):
        q = FeatureQuantizer(scale=(1.0,), zero=(0.0,))
        assert quantize_features([1e6], q) == [127]
        assert quantize_features([-1e6], q) == [-128]

    def test_round_half_away_from_zero(self):
        q = FeatureQuantizer(scale=(1.0,), zero=(0.0,))
        assert quantize_features([0.5], q) == [1]
        assert quantize_features([-0.5], q) == [-1]
        assert quantize_features([1.5], q) == [2]
        assert quantize_features([2.25], q) == [2]

    def test_exact_rational_rounding(self):
        # Dyadic inputs make the intended quotient representable; the
        # decision must match exact rational arithmetic, not a double
        # division.
        q = FeatureQuantizer(scale=(0.25,), zero=(0.125,))
        # Quotients land on 0, 0.5, 1.5, and -2.5 exactly.
        for f, want in [(0.125, 0), (0.25, 1), (0.5, 2), (-0.5, -3)]:
            assert quantize_features([f], q) == [want]
        for _ in range(200):
            s = float(rng.uniform(0.01, 4))
            z = float(rng.uniform(-4, 4))
            f = float(rng.uniform(-512, 512))
            got = quantize_features([f], FeatureQuantizer((s,), (z,)))[0]
            exact = (Fraction(f) - Fraction(z)) / Fraction(s)
            import math

            ref = (
                math.floor(exact + Fraction(1, 2))
                if exact >= 0
                else math.ceil(exact - Fraction(1, 2))
            )
            assert got == min(max(ref, -128), 127)

    def test_quantizer_validation(self):
        with pytest.raises(ValueError):
            FeatureQuantizer(scale=(0.0,), zero=(0.0,))
        with pytest.raises(ValueError):
            FeatureQuantizer(scale=(-1.0,), zero=(0.0,))
        with pytest.raises(ValueError):
            FeatureQuantizer(scale=(float("nan"),), zero=(0.0,))
        with pytest.raises(ValueError):
            FeatureQuantizer(scale=(1.0,), zero=(float("inf"),))

    def test_feature_count_mismatch(self):
        q = FeatureQuantizer(scale=(1.0,), zero=(0.0,))
        with pytest.raises(ValueError):
            quantize_features([1.0, 2.0], q)


def default_quantizer(n_features):
    # Values must survive the format's f32 storage unchanged.
    return FeatureQuantizer(
        scale=tuple(float(np.float32(rng.uniform(0.1, 3))) for _ in range(n_features)),
        zero=tuple(float(np.float32(rng.uniform(-2, 2))) for _ in range(n_features)),
    )


class TestForestFormat:
    def test_round_trip_identity(self):
        forest, _, _ = random_forest(6, 6, N_FEATURES)
        q = default_quantizer(N_FEATURES)
        blob = save_forest_bytes(forest, q)
        forest2, q2 = load_forest_bytes(blob)
        assert save_forest_bytes(forest2, q2) == blob
        assert forest2 == forest

    def test_file_round_trip(self, tmp_path):
        forest, _, _ = random_forest(3, 4, N_FEATURES)
        q = default_quantizer(N_FEATURES)
        path = tmp_path / "f.urf"
        save_forest(forest, q, path)
        forest2, q2 = load_forest(path)
        assert forest2 == forest and q2 == q

    def test_quantizer_floats_survive_exactly(self):
        # f32 storage is exact for values that are already f32.
        forest = single_leaf_forest((255, 0), n_features=1)
        q = FeatureQuantizer(scale=(0.1,), zero=(-7.25,))
        _, q2 = load_forest_bytes(save_forest_bytes(forest, q))
        assert q2.scale[0] == np.float32(0.1)
        assert q2.zero[0] == -7.25

    def test_every_prefix_is_truncation(self):
        forest, _, _ = random_forest(2, 3, 4)
        blob = save_forest_bytes(forest, default_quantizer(4))
        for cut in range(len(blob)):
            with pytest.raises(TruncatedError):
                load_forest_bytes(blob[:cut])

    def test_magic_version_trailing(self):
        forest, _, _ = random_forest(2, 3, 4)
        blob = save_forest_bytes(forest, default_quantizer(4))
        with pytest.raises(BadMagicError):
            load_forest_bytes(b"UBN1" + blob[4:])
        with pytest.raises(VersionError):
            load_forest_bytes(blob[:4] + b"\x02\x00" + blob[6:])
        with pytest.raises(ValidationError, match="trailing"):
            load_forest_bytes(blob + b"\x00")

    def test_loader_runs_structural_validation(self):
        # A backward right child survives field-level checks but must be
        # caught on load.
        forest = Forest(
            nodes=(RfNode(0, 0, 0), RfNode(-1, 0, 0)),
            leaves=(leaf_vec(2, 0),), roots=(0,),
            n_classes=2, n_features=1,
        )
        q = FeatureQuantizer(scale=(1.0,), zero=(0.0,))
        with pytest.raises(ValidationError):
            save_forest_bytes(forest, q)

    def test_quantizer_width_must_match(self):
        forest = single_leaf_forest((255, 0), n_features=3)
        with pytest.raises(ValidationError):
            save_forest_bytes(forest, FeatureQuantizer((1.0,), (0.0,)))


class TestForestJson:
    def test_round_trip(self):
        forest, _, _ = random_forest(4, 5, N_FEATURES)
        q = default_quantizer(N_FEATURES)
        forest2, q2 = forest_from_json(forest_to_json(forest, q))
        assert forest2 == forest
        # JSON carries f32-rounded reals; a second trip is a fixed point.
        assert forest_to_json(forest2, q2) == forest_to_json(forest2, q2)
        assert save_forest_bytes(forest2, q2) == save_forest_bytes(
            *load_forest_bytes(save_forest_bytes(forest2, q2))
        )

    def test_json_quantizer_matches_binary_route(self):
        # Interpreting JSON directly and loading converted binary must see
        # identical parameters: both round through float32.
        forest = single_leaf_forest((255, 0), n_features=1)
        q = FeatureQuantizer(scale=(0.1,), zero=(0.3,))
        doc = forest_to_json(forest, q)
        assert doc["quantizer"]["scale"][0] == float(np.float32(0.1))
        _, q_json = forest_from_json(doc)
        _, q_bin = load_forest_bytes(save_forest_bytes(forest, q))
        assert q_json == q_bin

    def test_bad_kind_and_structure(self):
        forest = single_leaf_forest((255, 0))
        doc = forest_to_json(forest, FeatureQuantizer((1.0,) * 3, (0.0,) * 3))
        bad = dict(doc, kind="network")
        with pytest.raises(InterchangeError) as exc:
            forest_from_json(bad)
        assert exc.value.path == "kind"
        bad = dict(doc, nodes=[[0, 0]])
        with pytest.raises(InterchangeError) as exc:
            forest_from_json(bad)
        assert exc.value.path == "nodes[0]"

    def test_structural_violations_reported(self):
        forest = single_leaf_forest((255, 0))
        doc = forest_to_json(forest, FeatureQuantizer((1.0,) * 3, (0.0,) * 3))
        doc["roots"] = [5]
        with pytest.raises(InterchangeError):
            forest_from_json(doc)
