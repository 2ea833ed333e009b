import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pickrank import oracles
from pickrank.eoat import (
    Approach,
    EoatLayout,
    Material,
    PlannerConfig,
    approach_angle,
    build_lookup_table,
    generate_picks,
    mask_bits,
    optimal_cup_placement,
    quality_score,
    random_pick,
    replace_infeasible,
)
from pickrank.errors import EmptySegment, InvalidNormal, NoFeasibleCup
from pickrank.geometry import Ellipse, Point2, Polygon, point_in_convex
from pickrank.scene import Segment


def ellipse(a, b, theta=0.0):
    return Ellipse(Point2(0.0, 0.0), a, b, theta)


def rect_segment(w, h, sid=0, x=300.0, y=300.0, material=Material.RIGID, normal=(0, 0, 1)):
    hull = Polygon([(x - w / 2, y - h / 2), (x + w / 2, y - h / 2), (x + w / 2, y + h / 2), (x - w / 2, y + h / 2)])
    return Segment(sid, sid, hull, 100.0, normal, material, w * h, 100.0, w * h)


@pytest.fixture(scope="module")
def table(layout):
    return build_lookup_table(layout, PlannerConfig())


class TestLayout:
    def test_default_is_two_by_four(self, layout):
        assert len(layout.cup_centers) == 8
        assert layout.reach == pytest.approx(math.hypot(45, 15) + 12, abs=0.1)
        assert layout.half_turn_permutation is not None

    def test_asymmetric_layout_rejected(self):
        with pytest.raises(ValueError):
            EoatLayout(tuple((float(i), 0.0) for i in range(7)) + ((0.0, 5.0),), 1.0)


class TestPlacement:
    def test_whole_tool_fits(self, layout):
        p = optimal_cup_placement(ellipse(200, 200), layout, 0.3)
        assert p.n_active == 8 and p.offset == (0, 0) and p.centroid_dist == 0

    def test_too_small(self, layout):
        with pytest.raises(NoFeasibleCup):
            optimal_cup_placement(ellipse(5, 5), layout, 0.0)

    def test_40_by_20_matches_exhaustive(self, layout):
        p = optimal_cup_placement(ellipse(40, 20), layout, 0.0)
        n, off, bits = oracles.cup_placement_bruteforce(40, 20, 0.0, layout.array, layout.cup_radius)
        assert (p.n_active, (p.offset.x, p.offset.y), mask_bits(p.cups)) == (n, off, bits)

    def test_active_cups_inside_shrunk_ellipse(self, layout):
        rng = np.random.default_rng(5)
        for _ in range(20):
            b = rng.uniform(15, 80)
            a = b * rng.uniform(1, 3)
            rot = rng.uniform(0, math.pi)
            try:
                p = optimal_cup_placement(ellipse(a, b), layout, rot)
            except NoFeasibleCup:
                continue
            c, s = math.cos(rot), math.sin(rot)
            for k, on in enumerate(p.cups):
                if not on:
                    continue
                # offsets live in the tool frame
                x, y = layout.array[k] + np.asarray(p.offset)
                px, py = c * x - s * y, s * x + c * y
                assert (px / (a - 12)) ** 2 + (py / (b - 12)) ** 2 <= 1 + 1e-9

    @settings(max_examples=30, deadline=None)
    @given(st.floats(13, 120), st.floats(1.0, 3.0))
    def test_more_room_never_fewer_cups(self, b, ratio):
        from pickrank.eoat import default_layout

        lay = default_layout()
        a = b * ratio
        try:
            small = optimal_cup_placement(ellipse(a, b), lay, 0.0).n_active
        except NoFeasibleCup:
            small = 0
        big = optimal_cup_placement(ellipse(a + 8, b + 8), lay, 0.0).n_active
        assert big >= small


class TestQuality:
    def test_values(self):
        assert quality_score(8, 0.0, ellipse(50, 50)) == 1.0
        assert quality_score(0, 0.0, ellipse(50, 50)) == 0.0
        assert quality_score(4, 10.0, ellipse(40, 10)) == pytest.approx(0.25)

    @given(st.integers(0, 8), st.floats(0, 500), st.floats(1, 300), st.floats(1, 300))
    def test_unit_interval(self, n, d, a, b):
        assert 0.0 <= quality_score(n, d, ellipse(max(a, b), min(a, b))) <= 1.0


class TestLookupTable:
    def test_largest_bin_all_cups(self, table, layout):
        n = table.n_bins
        for r in range(table.n_rotations):
            assert table.entries[(n, n, r)].n_active == 8

    def test_small_bins_empty(self, table):
        for bi in range(0, 3):  # bi * 5 <= 12 mm
            for ai in range(bi, table.n_bins + 1):
                assert all(table.entries.get((ai, bi, r)) is None for r in range(table.n_rotations))

    def test_entries_match_fresh_placement(self, table, layout):
        cfg = PlannerConfig()
        rng = np.random.default_rng(0)
        keys = [k for k in table.entries if table.entries[k] is not None]
        for i in rng.choice(len(keys), 200, replace=False):
            ai, bi, r = keys[i]
            fresh = optimal_cup_placement(table.representative(ai, bi), layout, cfg.rotation(r), cfg.offset_step)
            assert fresh == table.entries[(ai, bi, r)]

    def test_round_trip(self, table, tmp_path):
        from pickrank.eoat import LookupTable

        table.save(tmp_path / "t.jsonl")
        again = LookupTable.load(tmp_path / "t.jsonl")
        assert again.entries == table.entries


class TestGeneratePicks:
    def test_big_segment(self, table, layout):
        picks = generate_picks(rect_segment(400, 400), table, PlannerConfig(), layout)
        assert len(picks) == PlannerConfig().n_picks
        assert picks[0].quality == 1.0
        assert [p.quality for p in picks] == sorted((p.quality for p in picks), reverse=True)

    def test_thin_segment(self, table, layout):
        with pytest.raises(EmptySegment):
            generate_picks(rect_segment(300, 20), table, PlannerConfig(), layout)

    def test_deterministic(self, table, layout):
        seg = rect_segment(130, 90)
        a = generate_picks(seg, table, PlannerConfig(), layout)
        b = generate_picks(rect_segment(130, 90), table, PlannerConfig(), layout)
        assert a == b

    def test_positions_inside_hull(self, table, layout):
        rng = np.random.default_rng(2)
        for _ in range(20):
            w, h = rng.uniform(40, 300, 2)
            seg = rect_segment(w, h)
            try:
                picks = generate_picks(seg, table, PlannerConfig(), layout)
            except EmptySegment:
                continue
            assert all(point_in_convex(seg.hull, p.position) for p in picks)
            assert all(0 <= p.tool_rotation < math.pi for p in picks)


class TestReplaceInfeasible:
    def test_identity(self, table, layout):
        seg = rect_segment(200, 150)
        picks = generate_picks(seg, table, PlannerConfig(), layout)
        assert replace_infeasible(picks, [], seg, layout, np.random.default_rng(0)) == picks

    def test_all_replaced_inside_hull(self, table, layout):
        seg = rect_segment(250, 250)
        picks = generate_picks(seg, table, PlannerConfig(), layout)
        out = replace_infeasible(picks, range(len(picks)), seg, layout, np.random.default_rng(0))
        assert len(out) == len(picks)
        assert all(p.source == "random" and point_in_convex(seg.hull, p.position) for p in out)

    def test_reproducible(self, layout):
        seg = rect_segment(180, 120)
        a = random_pick(seg, layout, np.random.default_rng(9), 0, 0)
        b = random_pick(seg, layout, np.random.default_rng(9), 0, 0)
        assert a == b


class TestApproach:
    def test_rigid_follows_normal(self):
        t = math.radians(10)
        a = approach_angle(Material.RIGID, (math.sin(t), 0.0, math.cos(t)))
        assert a.tilt == pytest.approx(t)

    def test_deformable_vertical(self):
        a = approach_angle(Material.DEFORMABLE, (0.3, 0.0, math.sqrt(1 - 0.09)))
        assert a.tilt == 0.0

    def test_flat_rigid_equals_vertical(self):
        flat = approach_angle(Material.RIGID, (0, 0, 1))
        vert = approach_angle(Material.DEFORMABLE, (0, 0, 1))
        assert flat.direction == pytest.approx(vert.direction)

    def test_bad_normal(self):
        with pytest.raises(InvalidNormal):
            approach_angle(Material.RIGID, (0, 0, 0))
