import json
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from offchain_gas.gas_model import (
    PRESETS,
    GasSchedule,
    WorkloadShape,
    cost,
    cost_m1,
    cost_m2,
    cost_m3,
    derive_write_intensive,
    evaluate_condition,
    evaluate_condition_grid,
    get_preset,
    load_schedule,
)

IST = PRESETS["istanbul"]
LEG = PRESETS["legacy"]


def shape(nw, nr, l=1, k=1):
    return WorkloadShape(Fraction(nw), Fraction(nr), l, k)


class TestPresets:
    def test_calldata_prices(self):
        assert IST.calldata_byte == 16
        assert LEG.calldata_byte == 68

    @pytest.mark.parametrize("s, m2w, m3w, up, rd", [
        (IST, 8332, 1118, 26512, 16036),
        (LEG, 11036, 4030, 28176, 22328),
    ])
    def test_per_request_constants(self, s, m2w, m3w, up, rd):
        assert (s.m2_per_write, s.m3_per_write, s.m3_per_upload, s.m3_per_read) == (m2w, m3w, up, rd)

    def test_proof_gas_single_commit(self):
        # 21 levels of 32 bytes plus 21 hashes
        assert IST.proof_gas(1) == 16 * 21 * 32 + 21 * 222
        assert IST.proof_gas(0) == 20 * 222

    def test_unknown_preset(self):
        with pytest.raises(KeyError):
            get_preset("berlin")

    @pytest.mark.parametrize("field", ["base_fee", "calldata_byte", "base_tree_depth"])
    def test_rejects_non_positive(self, field):
        with pytest.raises(ValueError):
            GasSchedule(**{field: 0})

    def test_rejects_bool(self):
        with pytest.raises(ValueError):
            GasSchedule(hash_op=True)


class TestShape:
    def test_decimal_strings_are_exact(self):
        s = WorkloadShape("12.30", "34.76")
        assert s.nw == Fraction(1230, 100)
        assert s.transfers == Fraction(4706, 100)

    def test_float_rejected(self):
        with pytest.raises(TypeError):
            WorkloadShape(1.5, 0)

    @pytest.mark.parametrize("kwargs", [
        dict(nw=-1), dict(nw=1, nr=-1), dict(nw=1, l=0), dict(nw=1, k=0), dict(nw=1, l=Fraction(3, 2)),
    ])
    def test_invalid(self, kwargs):
        with pytest.raises(ValueError):
            WorkloadShape(**kwargs)

    def test_uploads(self):
        assert WorkloadShape(1, 0, 10, 3).uploads() == Fraction(10, 3)
        assert WorkloadShape(1, 0, 10, 3).uploads(ceil=True) == 4


class TestClosedForms:
    def test_m1_is_baseline(self):
        r = cost_m1(shape("12.30", "34.76"), IST)
        assert r.amortized == 21000 and r.normalized == 1 and r.savings_pct == 0

    def test_m2_coinbase(self):
        r = cost_m2(shape("12.30", "34.76"), IST)
        assert r.amortized_gas == 18135
        assert round(float(r.savings_pct), 2) == 13.64

    def test_m3_coinbase(self):
        assert cost_m3(shape("12.30", "34.76"), IST).amortized_gas == 24085

    def test_m3_total_by_hand(self):
        # one upload, one write, one read, istanbul
        total = 26512 + 1118 + 16036 + IST.proof_gas(1)
        assert cost_m3(shape(1, 1), IST).total == total

    def test_m2_total_by_hand(self):
        assert cost_m2(shape(3, 2), IST).total == 21000 + 3 * 8332 + 2 * 21000

    def test_legacy_cryptocom_costs_more(self):
        r = cost_m3(shape("1.49", "10.89"), LEG)
        assert abs(r.amortized_gas - 66698) <= 2
        assert round(float(-r.savings_pct), 2) == 217.61

    def test_dispatch_by_name(self):
        assert cost("m2", shape(2, 1), IST) == cost_m2(shape(2, 1), IST)
        with pytest.raises(ValueError):
            cost("m4", shape(1, 0), IST)

    def test_zero_transfers(self):
        from offchain_gas.gas_model import DegenerateWorkloadError

        with pytest.raises(DegenerateWorkloadError):
            cost_m2(shape(0, 0), IST)

    def test_ceil_uploads(self):
        exact = cost_m2(WorkloadShape(10, 0, 10, 3), IST)
        ceiled = cost_m2(WorkloadShape(10, 0, 10, 3), IST, ceil_uploads=True)
        assert ceiled.total - exact.total == Fraction(2, 3) * 21000


class TestCondition:
    def test_legacy_coefficients(self):
        c = derive_write_intensive(LEG, l=1)
        assert c.integer_coefficients() == (8485, 14088, 25843)
        assert c.nw_min == Fraction(14088, 8485)

    def test_istanbul_coefficients(self):
        c = derive_write_intensive(IST, l=1)
        assert c.integer_coefficients() == (9941, 13256, 5225)

    def test_examples(self):
        c = derive_write_intensive(LEG)
        assert evaluate_condition(c, 10, 1)
        assert not evaluate_condition(c, 1, 0)
        assert not evaluate_condition(c, "1.49", "10.89")

    def test_negative_rejected(self):
        with pytest.raises(ValueError):
            evaluate_condition(derive_write_intensive(LEG), -1, 0)

    def test_no_region(self):
        # every write costs more than the baseline: no savings possible
        with pytest.raises(ValueError):
            derive_write_intensive(GasSchedule(internal_transfer=1, hash_op=30000))

    def test_grid_matches_scalar(self):
        c = derive_write_intensive(LEG)
        nw = np.arange(0, 501)
        for nr_units in (0, 7, 33, 100):
            grid = evaluate_condition_grid(c, nw, np.full_like(nw, nr_units), 100)
            scalar = [evaluate_condition(c, Fraction(int(x), 100), Fraction(nr_units, 100)) for x in nw]
            assert grid.tolist() == scalar


@settings(max_examples=200, deadline=None)
@given(
    nw=st.fractions(min_value=0, max_value=200, max_denominator=100),
    nr=st.fractions(min_value=0, max_value=200, max_denominator=100),
    preset=st.sampled_from(["istanbul", "legacy"]),
)
def test_condition_iff_cheaper(nw, nr, preset):
    s = PRESETS[preset]
    if nw + nr == 0:
        return
    cheaper = cost_m3(shape(nw, nr), s).amortized < s.base_fee
    assert evaluate_condition(derive_write_intensive(s), nw, nr) == cheaper


@settings(max_examples=100, deadline=None)
@given(nw=st.integers(1, 100), nr=st.integers(0, 100), k=st.integers(1, 9))
def test_more_batching_never_costs_more(nw, nr, k):
    # per-window stats scale with the window, as for a constant workload
    for s in PRESETS.values():
        a = cost_m3(WorkloadShape(nw * k, nr * k, k, k), s).amortized
        b = cost_m3(WorkloadShape(nw * (k + 1), nr * (k + 1), k + 1, k + 1), s).amortized
        assert b < a
        a2 = cost_m2(WorkloadShape(nw * k, nr * k, k, k), s).amortized
        b2 = cost_m2(WorkloadShape(nw * (k + 1), nr * (k + 1), k + 1, k + 1), s).amortized
        assert b2 < a2


class TestScheduleFile:
    def test_key_value(self, tmp_path):
        p = tmp_path / "cheap.conf"
        p.write_text("# cheaper calldata\nbase = legacy\ncalldata_byte = 4\n")
        s = load_schedule(p)
        assert s.calldata_byte == 4 and s.name == "cheap" and s.internal_transfer == 7500

    def test_json(self, tmp_path):
        p = tmp_path / "s.json"
        p.write_text(json.dumps({"name": "mine", "hash_op": 30}))
        s = load_schedule(p)
        assert s.hash_op == 30 and s.calldata_byte == 16 and s.name == "mine"

    @pytest.mark.parametrize("text", [
        "bogus_field = 3\n", "calldata_byte = abc\n", "name = istanbul\n", "not a pair\n", "calldata_byte = 0\n",
    ])
    def test_rejects(self, tmp_path, text):
        p = tmp_path / "bad.conf"
        p.write_text(text)
        with pytest.raises(ValueError):
            load_schedule(p)
