import csv
import io
import json
from fractions import Fraction

import pytest

from offchain_gas.cli import fixed, main, versus_baseline
from offchain_gas.fixtures import top_sender_trace
from offchain_gas.workload import synth_w1


def call(capsys, *argv):
    code = main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


def rows(text):
    return list(csv.DictReader(io.StringIO(text)))


@pytest.fixture
def trace_file(tmp_path):
    p = tmp_path / "trace.csv"
    p.write_text(synth_w1(4, 2, 6, seed=1).to_csv())
    return p


class TestFormatting:
    @pytest.mark.parametrize("value, text", [
        (Fraction(1364, 100), "13.64"), (Fraction(-1, 1000), "0.00"), (Fraction(5, 1000), "0.01"),
        (Fraction(-5, 1000), "-0.01"), (Fraction(0), "0.00"),
    ])
    def test_fixed(self, value, text):
        assert fixed(value) == text

    def test_wording(self):
        assert versus_baseline(Fraction(1364, 100)) == "saves 13.64%"
        assert versus_baseline(Fraction(-21761, 100)) == "costs 217.61% more"
        assert versus_baseline(Fraction(0)) == "0.00%"


class TestCost:
    def test_m2_coinbase(self, capsys):
        code, out, _ = call(capsys, "cost", "--preset", "istanbul", "--nw", "12.30", "--nr", "34.76",
                            "--l", "1", "--mode", "m2", "--format", "csv")
        assert code == 0
        (row,) = rows(out)
        assert row["amortized_gas"] == "18135" and row["vs_baseline"] == "saves 13.64%"

    def test_m1_baseline(self, capsys):
        _, out, _ = call(capsys, "cost", "--nw", "3", "--nr", "7", "--mode", "m1", "--format", "csv")
        (row,) = rows(out)
        assert row["amortized_gas"] == "21000" and row["vs_baseline"] == "0.00%"

    def test_legacy_cryptocom(self, capsys):
        _, out, _ = call(capsys, "cost", "--preset", "legacy", "--nw", "1.49", "--nr", "10.89", "--l", "1",
                         "--mode", "m3", "--format", "json")
        (row,) = json.loads(out)
        assert abs(row["amortized_gas"] - 66698) <= 2
        assert row["vs_baseline"] == "costs 217.61% more"

    @pytest.mark.parametrize("argv", [
        ["--nw", "-1"], ["--nw", "abc"], ["--nw", "1", "--k", "0"], ["--nw", "1", "--mode", "m5"],
        ["--nw", "1", "--preset", "legacy", "--schedule-file", "x"],
    ])
    def test_usage_errors(self, capsys, argv):
        with pytest.raises(SystemExit) as info:
            main(["cost", *argv])
        assert info.value.code != 0

    def test_schedule_file(self, capsys, tmp_path):
        p = tmp_path / "dear.conf"
        p.write_text("base = legacy\n")
        _, a, _ = call(capsys, "cost", "--schedule-file", str(p), "--nw", "2", "--nr", "1", "--format", "csv")
        _, b, _ = call(capsys, "cost", "--preset", "legacy", "--nw", "2", "--nr", "1", "--format", "csv")
        assert a == b

    def test_missing_schedule_file(self, capsys, tmp_path):
        code, _, err = call(capsys, "cost", "--schedule-file", str(tmp_path / "none.conf"), "--nw", "1")
        assert code == 1 and "none.conf" in err

    def test_output_file_and_determinism(self, capsys, tmp_path):
        out1, out2 = tmp_path / "a.txt", tmp_path / "b.txt"
        for out in (out1, out2):
            assert main(["cost", "--nw", "12.30", "--nr", "34.76", "--output", str(out)]) == 0
        assert out1.read_bytes() == out2.read_bytes()
        assert capsys.readouterr().out == ""


class TestDiscover:
    def test_fixture_ranks_ethermine_first(self, capsys):
        _, out, _ = call(capsys, "discover", "--fixture", "--format", "csv")
        first = rows(out)[0]
        assert first["label"] == "Ethermine" and first["amount_pct"] == "4.81"

    def test_top_one(self, capsys, trace_file):
        _, out, _ = call(capsys, "discover", "--trace", str(trace_file), "--top", "1", "--format", "csv")
        assert len(rows(out)) == 1

    def test_empty_trace(self, capsys, tmp_path):
        p = tmp_path / "empty.csv"
        p.write_text("block_number,tx_index,from,to,value_wei\n")
        code, out, _ = call(capsys, "discover", "--trace", str(p), "--format", "csv")
        assert code == 0 and rows(out) == []

    def test_missing_file(self, capsys, tmp_path):
        code, _, err = call(capsys, "discover", "--trace", str(tmp_path / "nope.csv"))
        assert code == 1 and "nope.csv" in err

    def test_malformed_trace(self, capsys, tmp_path):
        p = tmp_path / "bad.csv"
        p.write_text("block_number,tx_index,from,to,value_wei\n1,0,xyz,abc,5\n")
        code, _, err = call(capsys, "discover", "--trace", str(p))
        assert code == 1 and "row 2" in err

    def test_labels_file(self, capsys, tmp_path):
        trace, _ = top_sender_trace()
        p = tmp_path / "t.csv"
        p.write_text(trace.to_csv())
        top = next(iter(rows(call(capsys, "discover", "--trace", str(p), "--top", "1", "--format", "csv")[1])))
        labels = tmp_path / "labels.csv"
        labels.write_text(f"address,label\n{top['sender']},Miner pool\n")
        _, out, _ = call(capsys, "discover", "--trace", str(p), "--labels", str(labels), "--top", "1",
                         "--format", "csv")
        assert rows(out)[0]["label"] == "Miner pool"


class TestPipeline:
    def test_classify(self, capsys, trace_file):
        _, out, _ = call(capsys, "classify", "--trace", str(trace_file), "--format", "csv")
        kinds = [r["kind"] for r in rows(out)]
        assert kinds.count("tx1") == 24 and kinds.count("tx2") == 12

    def test_stats(self, capsys, trace_file):
        _, out, _ = call(capsys, "stats", "--trace", str(trace_file), "--k", "1,3", "--format", "csv")
        got = [(r["k"], r["nw"], r["nr"]) for r in rows(out)]
        assert got == [("1", "4.0000", "2.0000"), ("3", "12.0000", "6.0000")]

    def test_stats_fixture(self, capsys):
        _, out, _ = call(capsys, "stats", "--fixture", "coinbase", "--preset", "legacy", "--format", "csv")
        assert [(r["nw"], r["nr"]) for r in rows(out)] == [("12.30", "25.62")]

    def test_simulate(self, capsys, trace_file):
        _, out, _ = call(capsys, "simulate", "--trace", str(trace_file), "--mode", "m3", "--format", "json")
        report = json.loads(out)
        assert report["total_gas"] == sum(b["total"] for b in report["per_block"])

    def test_simulate_table_total(self, capsys):
        _, out, _ = call(capsys, "simulate", "--synthetic", "2,1", "--blocks", "3", "--format", "csv")
        assert rows(out)[-1]["block"] == "all"


class TestSweep:
    def test_monotone_m3(self, capsys):
        _, out, _ = call(capsys, "sweep", "--synthetic", "4,1", "--k", "1-10", "--format", "csv")
        m3 = [int(r["m3"]) for r in rows(out)]
        assert all(b < a for a, b in zip(m3, m3[1:]))

    def test_k1_matches_cost(self, capsys):
        _, sweep, _ = call(capsys, "sweep", "--synthetic", "12.30,34.76", "--k", "1", "--format", "csv")
        _, cost, _ = call(capsys, "cost", "--nw", "12.30", "--nr", "34.76", "--format", "csv")
        by_mode = {r["mode"]: r["amortized_gas"] for r in rows(cost)}
        (row,) = rows(sweep)
        assert (row["m2"], row["m3"]) == (by_mode["M2"], by_mode["M3"])

    def test_coinbase_fixture_k5(self, capsys):
        _, out, _ = call(capsys, "sweep", "--fixture", "coinbase", "--k", "5", "--format", "csv")
        assert rows(out)[0]["m3"] == "23640"

    def test_fixture_missing_k(self, capsys):
        code, _, err = call(capsys, "sweep", "--fixture", "coinbase", "--k", "3")
        assert code == 1 and "k=3" in err

    def test_trace_source(self, capsys, trace_file):
        code, out, _ = call(capsys, "sweep", "--trace", str(trace_file), "--k", "1-3", "--format", "csv")
        assert code == 0 and len(rows(out)) == 3

    def test_figure(self, capsys, tmp_path):
        fig = tmp_path / "sweep.png"
        call(capsys, "sweep", "--synthetic", "4,1", "--figure", str(fig))
        assert fig.read_bytes()[:8] == b"\x89PNG\r\n\x1a\n"

    def test_bad_range(self):
        with pytest.raises(SystemExit):
            main(["sweep", "--synthetic", "1,1", "--k", "0-3"])


class TestPolicy:
    def test_rows(self, capsys):
        _, out, _ = call(capsys, "policy", "--synthetic", "10,1", "--blocks", "10", "--preset", "legacy",
                         "--policies", "max0,optimize,every1", "--format", "csv")
        got = {r["policy"]: r for r in rows(out)}
        assert got["Max_0"]["average_delay"] == "0.00"
        assert float(got["OptimizeCost"]["normalized_cost"]) < 1

    def test_every_one_matches_cost(self, capsys):
        _, out, _ = call(capsys, "policy", "--synthetic", "3,1", "--blocks", "5", "--preset", "legacy",
                         "--policies", "every1", "--format", "json")
        _, cost, _ = call(capsys, "cost", "--preset", "legacy", "--nw", "3", "--nr", "1", "--mode", "m3",
                          "--format", "json")
        assert json.loads(out)[0]["normalized_cost"] == json.loads(cost)[0]["normalized"]

    def test_unknown_policy(self):
        with pytest.raises(SystemExit) as info:
            main(["policy", "--synthetic", "2,1", "--policies", "sometimes"])
        assert info.value.code == 2

    def test_top_fraction_and_figure(self, capsys, tmp_path):
        fig = tmp_path / "policy.pdf"
        code, out, _ = call(capsys, "policy", "--synthetic", "3,2", "--blocks", "6", "--top-fraction", "0.5",
                            "--figure", str(fig), "--format", "csv")
        assert code == 0 and fig.read_bytes()[:4] == b"%PDF"

    def test_deterministic(self, capsys):
        argv = ["policy", "--synthetic", "3,2", "--blocks", "6", "--format", "json"]
        assert call(capsys, *argv)[1] == call(capsys, *argv)[1]
