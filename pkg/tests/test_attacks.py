from secnpu.attacks import CLASSES, campaign_network, run_campaign
from secnpu.engine import SeculatorEngine
from secnpu.memory import AdversaryScript, parse_script


def test_small_campaign_fully_detected(tiny_net):
    rep = run_campaign(tiny_net, trials=15, seed=1)
    assert rep.all_detected
    assert [r["class"] for r in rep.rows()] == list(CLASSES)


def test_campaign_network_loads():
    net = campaign_network()
    assert len(net) >= 3 and SeculatorEngine(net).run().ok


def test_empty_script_passes(tiny_net):
    assert SeculatorEngine(tiny_net).run(AdversaryScript([])).ok


def test_tamper_on_unconsumed_block_is_not_an_attack(tiny_net):
    eng = SeculatorEngine(tiny_net)
    honest = eng.run()
    read = {e.addr for e in honest.dram.log if e.direction == "R"}
    mapped = [a for base, size in eng.layout.regions() for a in range(base, base + size, 64)]
    idle = next(a for a in mapped if a not in read)
    # flipping bits nobody ever reads leaves every check intact
    assert eng.run(parse_script(f"after,0,tamper,{idle:#x},ff\n")).ok


def test_tamper_of_consumed_block_detected(tiny_net):
    eng = SeculatorEngine(tiny_net)
    honest = eng.run()
    last_read = [e for e in honest.dram.log if e.direction == "R"][-1]
    res = eng.run(parse_script(f"after,{last_read.seq},tamper,{last_read.addr:#x},01\n"))
    assert not res.ok and res.first_failure.layer_id == 5
