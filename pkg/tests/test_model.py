import math

import numpy as np
import pytest

from arpgnet.attention import gat_forward, positional_encoding
from arpgnet.graphs import build_fusion_graph
from arpgnet.model import (
    ArpgNet,
    ArpgNetConfig,
    ConfigError,
    FeatureBatch,
    batch_inputs,
    canonical_variant,
    conv_output_side,
)
from arpgnet.numerics import DimensionError, Tensor, finite_diff_check

from oracles import gat_loops, pe_loops

TOY = dict(T=4, H=32, W=32, embed_dim=16, P=3, trs=1, heads=2, n_classes=2)


def toy(**kw):
    return ArpgNet(ArpgNetConfig(**{**TOY, **kw}))


def frames(b=2, T=4, seed=0, side=32):
    return np.random.default_rng(seed).standard_normal((b, T, 3, side, side)).astype(np.float32)


# -- shapes and config --------------------------------------------------------------------

def test_default_trunk_reduces_96_to_12():
    assert conv_output_side(96) == 12
    assert ArpgNetConfig().feature_side == 12


def test_output_shapes():
    m = toy()
    x = frames()
    assert m.appearance_forward(x).shape == (2, 4, 16)
    assert m.relation_forward(x).shape == (2, 4, 16)
    assert m(x).shape == (2, 2)


def test_config_lists_every_problem():
    with pytest.raises(ConfigError) as err:
        ArpgNetConfig(T=4, trs=9, heads=0, embed_dim=15, variant="nope", dropout=1.5).validate()
    fields = {p.split(":")[0] for p in err.value.problems}
    assert {"trs", "heads", "embed_dim", "variant", "dropout"} <= fields


def test_variant_aliases():
    assert canonical_variant("appearance_only") == "appearance"
    assert canonical_variant("fusion_no_trs") == "fusion"
    assert ArpgNetConfig(variant="concat_baseline").variant == "concat"


def test_wrong_frame_shape_is_rejected():
    with pytest.raises(DimensionError):
        toy()(frames(T=5))


# -- appearance branch ----------------------------------------------------------------------

def test_identical_frames_identical_rows():
    x = frames(b=1)
    x[0, 2] = x[0, 1]
    emb = toy().appearance_forward(x).data
    np.testing.assert_array_equal(emb[0, 1], emb[0, 2])


def test_zero_input_fixed_point():
    # zero-initialised biases map an all-zero clip to an all-zero embedding
    emb = toy().appearance_forward(np.zeros((1, 4, 3, 32, 32), np.float32)).data
    assert np.all(emb == 0.0)


# -- relation branch -------------------------------------------------------------------------

def test_constant_map_gives_equal_nodes():
    m = ArpgNet(ArpgNetConfig(**{**TOY, "backbone": "features", "relation_input": "map", "map_side": 12,
                                 "trunk_channels": (8, 16, 6)}))
    for lay in m.rel_gat:
        lay.astype(np.float64)
    v = np.random.default_rng(0).standard_normal(6)
    fmap = np.broadcast_to(v[None, None, :, None, None], (1, 4, 6, 12, 12)).astype(np.float32)
    got = m.relation_from_map(fmap).data[0, 0]
    h = v
    for lay in m.rel_gat:  # identical nodes: output = mean over heads of leaky(W_k h)
        wh = np.einsum("i,kio->ko", h, lay.W.data.astype(np.float64))
        h = np.where(wh > 0, wh, 0.01 * wh).mean(axis=0)
    np.testing.assert_allclose(got, h, rtol=1e-5, atol=1e-6)


def test_relation_from_map_rejects_oversized_grid():
    m = ArpgNet(ArpgNetConfig(**{**TOY, "backbone": "features", "relation_input": "map", "map_side": 12, "P": 6}))
    with pytest.raises(DimensionError):
        m.relation_from_map(np.zeros((1, 4, 16, 4, 4), np.float32))


# -- fusion ---------------------------------------------------------------------------------------

def test_zero_scope_fusion_is_frame_local():
    m = toy(trs=0)
    rng = np.random.default_rng(1)
    app, rel = rng.standard_normal((1, 4, 16)), rng.standard_normal((1, 4, 16))
    base = m.fuse(app, rel).data
    app2 = app.copy()
    app2[0, 3] += 10.0
    moved = m.fuse(app2, rel).data
    np.testing.assert_array_equal(moved[0, :3], base[0, :3])
    assert not np.array_equal(moved[0, 3], base[0, 3])


def test_concat_variant_block_wiring():
    m = toy(variant="concat")
    rng = np.random.default_rng(2)
    app, rel = rng.standard_normal((1, 4, 16)), rng.standard_normal((1, 4, 16))
    base = m.fuse(app, rel).data
    zeroed = m.fuse(np.zeros_like(app), rel).data
    assert not np.allclose(zeroed[..., :16], base[..., :16])
    np.testing.assert_array_equal(zeroed[..., 16:], base[..., 16:])


def test_fusion_blocks_are_split_node_outputs():
    m = toy()
    rng = np.random.default_rng(3)
    app, rel = rng.standard_normal((1, 4, 16)), rng.standard_normal((1, 4, 16))
    pe = positional_encoding(4, 16)
    nodes = np.concatenate([app + pe, rel + pe], axis=1).astype(np.float32)
    out, _ = gat_forward(Tensor(nodes), build_fusion_graph(4, 1), m.fusion_gat[0])
    fused = m.fuse(app, rel).data
    np.testing.assert_allclose(fused[0, :, :16], out.data[0, :4], atol=1e-6)
    np.testing.assert_allclose(fused[0, :, 16:], out.data[0, 4:], atol=1e-6)


def hand_set_fusion(T):
    cfg = ArpgNetConfig(**{**TOY, "T": T, "trs": 0 if T == 1 else 1, "embed_dim": 2, "heads": 1,
                           "backbone": "features"})
    m = ArpgNet(cfg).astype(np.float64)
    g = m.fusion_gat[0]
    g.W.data[...] = [[[1.5, 0.0], [0.0, -0.5]]]
    g.att.data[...] = [[0.7, -0.2, 0.4, 1.1]]
    return m, g


@pytest.mark.parametrize("T", [1, 2])
def test_fusion_scalar_oracle(T):
    m, g = hand_set_fusion(T)
    rng = np.random.default_rng(T)
    app, rel = rng.standard_normal((T, 2)), rng.standard_normal((T, 2))
    pe = pe_loops(T, 2)
    nodes = [[app[t][c] + pe[t][c] for c in range(2)] for t in range(T)]
    nodes += [[rel[t][c] + pe[t][c] for c in range(2)] for t in range(T)]
    adj = [[abs(i % T - j % T) <= m.config.trs for j in range(2 * T)] for i in range(2 * T)]
    ref, _ = gat_loops(nodes, adj, g.W.data.tolist(), g.att.data.tolist())
    fused = m.fuse(app[None], rel[None]).data[0]
    for t in range(T):
        np.testing.assert_allclose(fused[t, :2], ref[t], atol=1e-12)
        np.testing.assert_allclose(fused[t, 2:], ref[T + t], atol=1e-12)


def test_unscoped_fusion_uses_complete_graph():
    m = toy(variant="fusion", trs=1)
    assert m.fusion_graph() == build_fusion_graph(4, 3)
    assert m.fusion_graph().entries.all()


# -- whole model -------------------------------------------------------------------------------

def test_regression_logits_replay():
    m = toy(seed=7).eval()
    x = np.random.default_rng(123).standard_normal((2, 4, 3, 32, 32)).astype(np.float32)
    expected = np.array([[0.26071876, 0.38855955], [0.8233216, 1.3624116]], dtype=np.float32)
    np.testing.assert_allclose(m(x).data, expected, atol=1e-5)


def test_eval_forward_is_bit_deterministic():
    m = toy().eval()
    x = frames()
    assert np.array_equal(m(x).data, m(x).data)


def test_train_mode_dropout_uses_rng():
    m = toy().train()
    x = frames()
    a = m(x, np.random.default_rng(0)).data
    b = m(x, np.random.default_rng(0)).data
    c = m(x, np.random.default_rng(1)).data
    assert np.array_equal(a, b) and not np.array_equal(a, c)


def test_constant_sequence_pooling_is_identity():
    m = toy()
    row = np.random.default_rng(0).standard_normal(32)
    seq = np.tile(row, (1, 4, 1))
    expected = m.mlp(Tensor(row[None].astype(np.float32))).data
    np.testing.assert_allclose(m.classify(seq).data, expected, atol=1e-6)


def test_appearance_only_wiring_and_zero_relation_grads():
    m = toy(variant="appearance").eval()
    x = frames()
    manual = m.mlp(m.appearance_forward(x).mean(axis=-2)).data
    np.testing.assert_array_equal(m(x).data, manual)
    m(x).sum().backward()
    for name, p in m.named_parameters():
        if name.startswith(("rel_trunk", "rel_gat", "fusion_gat")):
            assert p.grad is None or not p.grad.any(), name
        if name.startswith("app_trunk"):
            assert p.grad is not None and p.grad.any(), name


def test_concat_equals_fusion_with_attention_removed():
    full = toy(variant="fusion_trs", seed=3).eval()
    concat = toy(variant="concat", seed=3).eval()
    full.fusion_gat = []
    x = frames(seed=5)
    np.testing.assert_array_equal(full(x).data, concat(x).data)


def test_frame_permutation_sensitivity():
    x = frames(b=1, seed=9)
    perm = [2, 0, 3, 1]
    with_pe = toy(variant="fusion").eval()
    assert not np.allclose(with_pe(x).data, with_pe(x[:, perm]).data)
    without = toy(variant="fusion", positional_encoding=False).eval()
    np.testing.assert_allclose(without(x).data, without(x[:, perm]).data, atol=1e-5)


def test_feature_inputs_and_batching():
    cfg = ArpgNetConfig(T=6, embed_dim=8, backbone="features", n_classes=3)
    m = ArpgNet(cfg)
    rng = np.random.default_rng(0)
    clip = FeatureBatch(rng.standard_normal((6, 8)), rng.standard_normal((6, 8)), None)
    assert m(batch_inputs(clip)).shape == (1, 3)
    with pytest.raises(TypeError):
        m(np.zeros((1, 6, 8)))
    with pytest.raises(DimensionError):
        m(FeatureBatch(np.zeros((1, 5, 8)), np.zeros((1, 5, 8)), None))


def test_relmap_features_drive_relation_graph():
    cfg = ArpgNetConfig(T=4, embed_dim=8, backbone="features", relation_input="map", map_side=6,
                        trunk_channels=(4, 4, 5), P=3, n_classes=2)
    m = ArpgNet(cfg)
    rng = np.random.default_rng(0)
    x = FeatureBatch(rng.standard_normal((2, 4, 8)), None, rng.standard_normal((2, 4, 6, 6, 5)))
    assert m(x).shape == (2, 2)
    assert set(m.attention) == {"relation.0", "relation.1", "relation.2", "fusion.0"}


def test_parameter_groups_partition():
    m = toy()
    groups = m.parameter_groups()
    assert set(groups) == {n for n, _ in m.named_parameters()}
    assert {g for n, g in groups.items() if n.startswith(("app_trunk", "rel_trunk"))} == {"backbone"}
    assert {g for n, g in groups.items() if n.startswith(("rel_gat", "fusion_gat", "mlp"))} == {"other"}


def test_gradcheck_each_group_small():
    m = toy().astype(np.float64).eval()
    x = frames(b=2).astype(np.float64)
    from arpgnet.training import cross_entropy

    y = np.array([0, 1])
    res = finite_diff_check(lambda: cross_entropy(m(x), y), dict(m.named_parameters()), n_samples=60,
                            rng=np.random.default_rng(0), groups=m.parameter_groups())
    assert set(res.per_group) == {"backbone", "other"}
    assert res.max_relative_error < 1e-3
