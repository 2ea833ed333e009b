import json
import math

import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st
from scipy.stats import binom
from statsmodels.stats.proportion import proportion_confint, proportions_ztest

from pickrank import oracles
from pickrank.errors import InvalidCounts, MissingModel
from pickrank.harness import (
    CANONICAL_ARMS,
    AbReport,
    ArmResult,
    ExperimentArm,
    PickRecord,
    SimContext,
    collect_training_data,
    derive_seed,
    format_rate,
    load_dataset,
    render_table,
    run_ab,
    run_induct,
    scene_seed,
    success_rate,
    two_proportion_ztest,
    wilson_ci,
)
from pickrank.scene import SceneParams

TABLE_ROWS = [
    ("TopoZ-Center", 1_158_353, 89_378, "92.28%"),
    ("Z-Center", 1_157_739, 89_866, "92.24%"),
    ("TopoZ-Random", 1_158_479, 109_193, "90.57%"),
    ("TopoLPR-Center", 1_156_697, 83_535, "92.78%"),
    ("LPR-Center", 1_160_005, 72_789, "93.73%"),
    ("LPR-Random", 1_157_342, 79_820, "93.10%"),
]
# verified against statsmodels proportions_ztest and the quadrature oracle
TABLE_Z_LPR_VS_TOPOZ = 43.013069735629436

pairs = st.tuples(st.integers(1, 5000), st.integers(1, 5000)).flatmap(
    lambda n: st.tuples(st.integers(0, n[0]), st.just(n[0]), st.integers(0, n[1]), st.just(n[1]))
)


class TestRates:
    @pytest.mark.parametrize("name,total,failed,shown", TABLE_ROWS)
    def test_table_rows(self, name, total, failed, shown):
        assert format_rate(success_rate(total, failed)) == shown

    def test_no_failures(self):
        assert success_rate(10, 0) == 1.0

    @pytest.mark.parametrize("total,failed", [(0, 0), (5, 6), (5, -1)])
    def test_invalid(self, total, failed):
        with pytest.raises(InvalidCounts):
            success_rate(total, failed)


class TestZTest:
    def test_equal_rates(self):
        assert two_proportion_ztest(30, 100, 60, 200) == (0.0, 1.0)

    def test_small_case_matches_statsmodels(self):
        z, p = two_proportion_ztest(9, 10, 1, 10)
        rz, rp = proportions_ztest([9, 1], [10, 10])
        assert abs(z - rz) < 1e-6 and abs(p - rp) < 1e-6

    def test_table_value_frozen(self):
        z, p = two_proportion_ztest(1_087_216, 1_160_005, 1_068_975, 1_158_353)
        assert z == pytest.approx(TABLE_Z_LPR_VS_TOPOZ, abs=1e-9)
        assert z == pytest.approx(float(proportions_ztest([1_087_216, 1_068_975], [1_160_005, 1_158_353])[0]), abs=1e-9)
        assert p < 1e-300

    @settings(max_examples=100, deadline=None)
    @given(pairs)
    def test_symmetry(self, c):
        s1, n1, s2, n2 = c
        z, p = two_proportion_ztest(s1, n1, s2, n2)
        z2, p2 = two_proportion_ztest(s2, n2, s1, n1)
        assert z == -z2 and p == p2 and 0 <= p <= 1

    @settings(max_examples=100, deadline=None)
    @given(pairs)
    def test_matches_oracle(self, c):
        s1, n1, s2, n2 = c
        assume(0 < s1 + s2 < n1 + n2)  # degenerate pool has its own test
        z, p = two_proportion_ztest(s1, n1, s2, n2)
        rz, rp = oracles.ztest_oracle(s1, n1, s2, n2)
        assert abs(z - rz) < 1e-6 and abs(p - rp) < 1e-6


class TestWilson:
    def test_boundaries(self):
        assert wilson_ci(0, 10)[0] == 0.0
        assert wilson_ci(10, 10)[1] == 1.0

    def test_eight_of_ten(self):
        lo, hi = wilson_ci(8, 10)
        rlo, rhi = proportion_confint(8, 10, alpha=0.05, method="wilson")
        assert abs(lo - rlo) < 1e-6 and abs(hi - rhi) < 1e-6

    @settings(max_examples=100, deadline=None)
    @given(st.integers(1, 10_000).flatmap(lambda n: st.tuples(st.integers(0, n), st.just(n))))
    def test_matches_statsmodels(self, c):
        s, n = c
        lo, hi = wilson_ci(s, n)
        rlo, rhi = proportion_confint(s, n, alpha=0.05, method="wilson")
        assert abs(lo - rlo) < 1e-6 and abs(hi - rhi) < 1e-6
        assert lo <= s / n <= hi

    def test_coverage(self):
        draws = binom.rvs(500, 0.9, size=1000, random_state=np.random.default_rng(17))
        hits = sum(lo <= 0.9 <= hi for lo, hi in (wilson_ci(int(s), 500) for s in draws))
        assert 930 <= hits <= 970


class TestSeeds:
    def test_distinct_and_stable(self):
        assert derive_seed(1, 2, 3) == derive_seed(1, 2, 3)
        assert len({derive_seed(7, i) for i in range(1000)}) == 1000
        assert derive_seed(1, 2) != derive_seed(2, 1)
        assert 0 <= scene_seed(123, 4) < 2 ** 64


class TestArms:
    def test_parse(self):
        a = ExperimentArm.parse("TopoLPR-Center")
        assert a.seg_strategy.value == "TopoLPR" and a.pick_strategy.value == "Center" and a.needs_model
        assert not ExperimentArm.parse("TopoZ-Random").needs_model
        with pytest.raises(ValueError):
            ExperimentArm.parse("Height-Center")

    def test_canonical_order(self):
        assert [a.name for a in CANONICAL_ARMS] == [r[0] for r in TABLE_ROWS]


class TestInduct:
    def test_forced_success_clears_pile(self):
        ctx = SimContext()
        seed = scene_seed(0, 0)
        recs = run_induct(seed, ExperimentArm.parse("TopoZ-Center"), ctx=ctx, force_probability=1.0)
        assert all(r.label == 1 for r in recs)
        assert len(recs) <= ctx.scene_params.n_packages

    def test_attempt_cap(self):
        ctx = SimContext(scene_params=SceneParams(n_packages=3))
        recs = run_induct(scene_seed(0, 1), ExperimentArm.parse("Z-Center"), ctx=ctx, force_probability=0.0)
        assert 0 < len(recs) <= 9 and all(r.label == 0 for r in recs)

    def test_learned_arm_needs_model(self):
        with pytest.raises(MissingModel):
            run_induct(1, ExperimentArm.parse("LPR-Center"))

    def test_record_round_trip(self):
        r = PickRecord((0.1, 2.0), 1, "Z-Center", 42, 3, 0)
        assert PickRecord.from_json(r.to_json()) == r


class TestCollect:
    def test_bounds_and_bytes(self, tmp_path):
        arm = ExperimentArm.parse("TopoZ-Random")
        ctx = SimContext()
        n = collect_training_data(100, arm, ctx, 9, tmp_path / "a.ndjson")
        collect_training_data(100, arm, ctx, 9, tmp_path / "b.ndjson", jobs=2)
        assert (tmp_path / "a.ndjson").read_bytes() == (tmp_path / "b.ndjson").read_bytes()
        X, y = load_dataset(tmp_path / "a.ndjson")
        assert X.shape == (n, 15) and 100 <= n <= 100 * 3 * ctx.scene_params.n_packages
        assert 0 < y.mean() < 1
        header = json.loads((tmp_path / "a.ndjson").read_text().splitlines()[0])
        assert header["format"] == "pickrank-dataset" and len(header["features"]) == 15

    def test_collection_and_ab_use_different_piles(self, tmp_path):
        collect_training_data(3, ExperimentArm.parse("Z-Center"), SimContext(), 9, tmp_path / "d.ndjson")
        seeds = {json.loads(line)["scene_seed"] for line in (tmp_path / "d.ndjson").read_text().splitlines()[1:]}
        assert not seeds & {scene_seed(9, i) for i in range(3)}


class TestAb:
    def test_identical_arms_identical_results(self):
        a = ExperimentArm.parse("TopoZ-Random")
        b = ExperimentArm("copy", a.seg_strategy, a.pick_strategy)
        rep = run_ab([a, b], 15, None, master_seed=3)
        ra, rb = rep.arm(a.name), rep.arm("copy")
        assert (ra.total_picks, ra.failed_picks) == (rb.total_picks, rb.failed_picks)
        assert rep.test(a.name, "copy") == (0.0, 1.0)

    def test_config_order_and_counting(self, small_model):
        arms = [ExperimentArm.parse(n) for n in ("LPR-Random", "Z-Center", "TopoLPR-Center")]
        rep = run_ab(arms, 12, small_model, master_seed=1)
        assert [a.name for a in rep.arms] == ["LPR-Random", "Z-Center", "TopoLPR-Center"]
        for a in rep.arms:
            assert a.successes + a.failed_picks == a.total_picks > 0
        z, p = rep.test("Z-Center", "LPR-Random")
        assert rep.test("LPR-Random", "Z-Center") == (-z, p)

    def test_jobs_do_not_change_bytes(self, small_model):
        r1 = run_ab(CANONICAL_ARMS, 8, small_model, master_seed=2, jobs=1)
        r3 = run_ab(CANONICAL_ARMS, 8, small_model, master_seed=2, jobs=3)
        assert r1.to_json() == r3.to_json() and r1.table() == r3.table()

    def test_missing_model(self):
        with pytest.raises(MissingModel):
            run_ab(CANONICAL_ARMS, 1, None)

    def test_report_round_trip(self, tmp_path):
        rep = AbReport.build([ArmResult("A", 100, 10), ArmResult("B", 120, 5)], {"x": 1}, 7)
        rep.save(tmp_path)
        again = AbReport.load(tmp_path)
        assert again.to_json() == rep.to_json()
        assert (tmp_path / "table.txt").read_text() == rep.table()

    def test_table_layout(self):
        text = render_table([("TopoZ-Center", 1_158_353, 89_378), ("LPR-Center", 1_160_005, 72_789)])
        lines = text.splitlines()
        assert [c.strip() for c in lines[0].split("|")] == ["Method", "Total Picks", "Failed Picks", "Success Rate"]
        assert "1,158,353" in lines[2] and lines[2].endswith("92.28%")
        assert lines[3].endswith("93.73%")
