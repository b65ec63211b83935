import json

import numpy as np
import pytest

from conftest import make_config, random_bundle
from snp.errors import StalePlanError
from snp.groups import (
    EMBED_RESIDUAL,
    FFN_HIDDEN,
    QK_PAIR,
    VALUE,
    PrunePlan,
    build_groups,
    keep_all_plan,
    validate_plan,
)
from snp.serialize import dumps_pretty, fingerprint


def kinds(groups):
    out = {}
    for g in groups:
        out[g.kind] = out.get(g.kind, 0) + 1
    return out


class TestBuildGroups:
    def test_counts_depth1_h2(self, tiny_config):
        groups = build_groups(tiny_config)
        assert len(groups) == 6
        assert kinds(groups) == {QK_PAIR: 2, VALUE: 2, FFN_HIDDEN: 1, EMBED_RESIDUAL: 1}

    def test_counts_deit_tiny_shape(self):
        cfg = make_config(
            image=224, patch=16, d=192, depth=12, heads=3, dq=64, dv=64, ffn=768, classes=1000
        )
        groups = build_groups(cfg)
        assert len(groups) == 85
        assert kinds(groups) == {QK_PAIR: 36, VALUE: 36, FFN_HIDDEN: 12, EMBED_RESIDUAL: 1}

    def test_embed_members_hand_enumeration(self, tiny_config):
        # depth 1, H 2: 4 stream tensors + per block (4 LN params
        # + 3H input-column entries + out-proj W/b + fc1 cols + fc2 W/b)
        # + final LN pair + classifier cols
        (embed,) = [g for g in build_groups(tiny_config) if g.kind == EMBED_RESIDUAL]
        assert len(embed.members) == 4 + 1 * (4 + 3 * 2 + 2 + 1 + 2) + 3
        expected = {
            ("patch_embed.weight", 0),
            ("patch_embed.bias", 0),
            ("cls_token", 0),
            ("pos_embed", 1),
            ("block0.ln1.gamma", 0),
            ("block0.ln1.beta", 0),
            ("block0.head0.wq", 1),
            ("block0.head0.wk", 1),
            ("block0.head0.wv", 1),
            ("block0.head1.wq", 1),
            ("block0.head1.wk", 1),
            ("block0.head1.wv", 1),
            ("block0.proj.weight", 0),
            ("block0.proj.bias", 0),
            ("block0.ln2.gamma", 0),
            ("block0.ln2.beta", 0),
            ("block0.fc1.weight", 1),
            ("block0.fc2.weight", 0),
            ("block0.fc2.bias", 0),
            ("final_ln.gamma", 0),
            ("final_ln.beta", 0),
            ("classifier.weight", 1),
        }
        assert {(m.name, m.axis) for m in embed.members} == expected

    def test_qk_members_couple_query_and_key(self, tiny_config):
        qk = [g for g in build_groups(tiny_config) if g.kind == QK_PAIR][0]
        names = [m.name for m in qk.members]
        assert names == [
            "block0.head0.wq",
            "block0.head0.bq",
            "block0.head0.wk",
            "block0.head0.bk",
        ]
        assert all(m.axis == 0 for m in qk.members)

    def test_value_members_span_outproj_columns(self, tiny_config):
        values = [g for g in build_groups(tiny_config) if g.kind == VALUE]
        offsets = {g.head: [m for m in g.members if m.name.endswith("proj.weight")][0].offset
                   for g in values}
        assert offsets == {0: 0, 1: tiny_config.head_dim_v[0]}

    def test_axis_partition_no_overlap(self, desk_config):
        groups = build_groups(desk_config)
        spans: dict[tuple, list[tuple[int, int]]] = {}
        for g in groups:
            for m in g.members:
                spans.setdefault((m.name, m.axis), []).append((m.offset, m.offset + g.width))
        for key, ranges in spans.items():
            ranges.sort()
            for (a0, a1), (b0, b1) in zip(ranges, ranges[1:]):
                assert a1 <= b0, f"overlapping slices on {key}"


class TestValidatePlan:
    def test_keep_all_ok(self, tiny_config):
        groups = build_groups(tiny_config)
        plan = keep_all_plan(groups, "fp")
        assert validate_plan(plan, groups) == []

    def test_nonuniform_head_counts(self, tiny_config):
        groups = build_groups(tiny_config)
        plan = keep_all_plan(groups, "fp")
        plan.keeps[(QK_PAIR, 0, 0)] = tuple(range(5))
        plan.keeps[(QK_PAIR, 0, 1)] = tuple(range(6))
        violations = validate_plan(plan, groups)
        assert any("differ across heads" in v for v in violations)

    def test_bounds_violation(self, tiny_config):
        groups = build_groups(tiny_config)
        plan = keep_all_plan(groups, "fp")
        width = tiny_config.head_dim_qk[0]
        plan.keeps[(QK_PAIR, 0, 0)] = tuple(range(1, width + 1))
        plan.keeps[(QK_PAIR, 0, 1)] = tuple(range(1, width + 1))
        violations = validate_plan(plan, groups)
        assert any("out of bounds" in v for v in violations)

    def test_duplicate_indices(self, tiny_config):
        groups = build_groups(tiny_config)
        plan = keep_all_plan(groups, "fp")
        plan.keeps[(FFN_HIDDEN, 0, None)] = (0, 0, 1)
        violations = validate_plan(plan, groups)
        assert any("strictly increasing" in v for v in violations)

    def test_missing_group(self, tiny_config):
        groups = build_groups(tiny_config)
        plan = keep_all_plan(groups, "fp")
        del plan.keeps[(EMBED_RESIDUAL, None, None)]
        violations = validate_plan(plan, groups)
        assert any("missing from plan" in v for v in violations)

    def test_stale_fingerprint(self, tiny_config):
        groups = build_groups(tiny_config)
        plan = keep_all_plan(groups, "fp-a")
        with pytest.raises(StalePlanError):
            validate_plan(plan, groups, "fp-b")

    def test_fingerprint_matches_model(self, tiny_config):
        model = random_bundle(tiny_config, np.random.default_rng(0))
        groups = build_groups(tiny_config)
        plan = keep_all_plan(groups, fingerprint(model))
        assert validate_plan(plan, groups, fingerprint(model)) == []


class TestPlanJson:
    def test_round_trip_stable(self, tiny_config):
        groups = build_groups(tiny_config)
        plan = keep_all_plan(groups, "fp")
        doc = plan.to_dict()
        text = dumps_pretty(doc)
        again = PrunePlan.from_dict(json.loads(text))
        assert again.keeps == plan.keeps
        assert dumps_pretty(again.to_dict()) == text

    def test_canonical_key_order(self, tiny_config):
        plan = keep_all_plan(build_groups(tiny_config), "fp")
        text = dumps_pretty(plan.to_dict())
        assert text.index('"criterion"') < text.index('"fingerprint"') < text.index('"groups"')
