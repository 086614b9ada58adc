from fractions import Fraction

import pytest

from offchain_gas.fixtures import TOP_SENDERS, published_stats, top_sender_trace
from offchain_gas.plotting import policy_figure, sweep_figure
from offchain_gas.workload import discover_institutional


def test_published_lookup():
    assert published_stats("coinbase", "legacy")[1] == (Fraction("12.30"), Fraction("25.62"))
    assert published_stats("ethermine", "istanbul")[5] == (Fraction("16.75"), Fraction("32.46"))
    with pytest.raises(KeyError):
        published_stats("coinbase", "berlin")


def test_top_sender_shares():
    trace, labels = top_sender_trace()
    assert len(trace) == 10_000
    ranked = discover_institutional(trace, 10)
    by_label = {labels[r.sender]: r for r in ranked}
    assert set(by_label) == {label for label, *_ in TOP_SENDERS}
    for label, prefix, share, ether in TOP_SENDERS:
        r = by_label[label]
        assert str(r.sender).startswith("0x" + prefix)
        assert r.amount_pct == Fraction(share)
        assert r.value_ether == ether


def test_fixture_is_deterministic():
    assert top_sender_trace()[0] == top_sender_trace()[0]


@pytest.mark.parametrize("suffix", [".png", ".pdf", ".svg"])
def test_figures_are_byte_stable(tmp_path, suffix):
    a, b = tmp_path / f"a{suffix}", tmp_path / f"b{suffix}"
    for p in (a, b):
        sweep_figure([1, 2, 3], [18000, 16000, 15000], [24000, 21000, 20000], 21000, p, title="t")
    assert a.read_bytes() == b.read_bytes()


def test_policy_figure(tmp_path):
    out = policy_figure(["Max_0", "OptimizeCost"], [1.3, 0.9], [0.0, 4.5], tmp_path / "sub" / "p.png")
    assert out.exists() and out.stat().st_size > 0
