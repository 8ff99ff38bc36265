import json

import pytest

from secnpu.perf import (
    LatencyParams,
    compare,
    comparison_rows,
    rows_to_csv,
    simulate,
    widening_study,
)


def test_simulate_is_deterministic(tiny_net):
    a = simulate(tiny_net, "tnpu", functional=False)
    b = simulate(tiny_net, "tnpu", functional=False)
    assert a.to_dict() == b.to_dict()


def test_data_traffic_same_for_every_scheme(tiny_net):
    reps = compare([tiny_net], ["baseline", "secure", "tnpu", "guardnn", "seculator"], functional=False)
    data = {r.data_transfers for r in reps}
    assert len(data) == 1
    for r in reps:
        assert r.transfers == r.data_transfers + r.meta_transfers
        t = r.totals()
        assert t["transfers"] == sum(l.transfers for l in r.layers) + r.tail.meta_transfers
    by = {r.scheme: r for r in reps}
    assert by["baseline"].meta_transfers == by["seculator"].meta_transfers == 0
    assert by["baseline"].normalized_performance == 1.0
    assert by["seculator"].cycles >= by["baseline"].cycles


def test_seculator_run_carries_verification(tiny_net):
    r = simulate(tiny_net, "seculator")
    assert r.verified is True and not r.faults
    assert [l.verification for l in r.layers] == ["Pass"] * len(tiny_net)


def test_baseline_only_comparison(tiny_net):
    reps = compare([tiny_net], ["baseline"], functional=False)
    rows = comparison_rows(reps)
    assert len(rows) == 1 and rows[0]["normalized_performance"] == 1.0
    assert rows[0]["traffic_vs_seculator"] is None


def test_report_serialization(tiny_net):
    r = simulate(tiny_net, "secure", functional=False)
    d = json.loads(r.to_json())
    assert d["totals"]["cycles"] == r.cycles
    lines = r.to_csv().splitlines()
    assert len(lines) == 1 + len(tiny_net)
    assert r.miss_rate("counter") == r.miss_rate("ctr")


def test_rows_to_csv():
    assert rows_to_csv([]) == ""
    assert rows_to_csv([{"a": 1, "b": None}]) == "a,b\n1,\n"


def test_latency_validation():
    with pytest.raises(ValueError):
        LatencyParams(dram_channels=0)
    with pytest.raises(ValueError):
        LatencyParams(crypto_cycles=-1)


def test_more_latency_costs_cycles(tiny_net):
    fast = simulate(tiny_net, "guardnn", LatencyParams(dram_latency_cycles=50), functional=False)
    slow = simulate(tiny_net, "guardnn", LatencyParams(dram_latency_cycles=400), functional=False)
    assert slow.cycles > fast.cycles


def test_widening_validation(tiny_net):
    with pytest.raises(ValueError):
        widening_study(tiny_net, widths=[])
    with pytest.raises(ValueError):
        widening_study(tiny_net, widths=[32, 16])
    with pytest.raises(ValueError):
        widening_study(tiny_net, widths=[16], reference="other")


def test_widening_self_reference_starts_at_one():
    from secnpu.cli import widening_base
    rows = widening_study(widening_base(), widths=[32, 64], schemes=["tnpu"], reference="self")
    assert rows[0]["tnpu"] == 1.0 and rows[1]["tnpu"] > 1.0
    assert set(rows[0]) == {"width", "tnpu"}
