"""Scenario loading, validation locations, benchmark generation, snapshots."""
import copy
import json

import pytest

from redsim import net
from redsim.control import ControlAPI
from redsim.errors import BusyError, ValidationError
from redsim.model import AssetKind, AssetTemplate
from redsim.scenario import (benchmark_document, load_scenario,
                             load_scenario_file, load_snapshot_file,
                             restore_snapshot, save_snapshot,
                             scenario_document, take_snapshot)

LAB = "src/redsim/data/scenario-lab.json"


def minimal_doc(**overrides):
    doc = {
        "version": 1,
        "seed": 3,
        "networks": [{"id": "lan", "prefix": "10.9.9"}],
        "machines": [
            {"id": "box", "os": {"name": "linux", "version": "2.4"},
             "interfaces": [{"address": "10.9.9.5", "network": "lan"}]},
        ],
    }
    doc.update(overrides)
    return doc


def raises_at(doc, location):
    with pytest.raises(ValidationError) as err:
        load_scenario(doc)
    assert err.value.location == location, err.value


# --- structural validation --------------------------------------------------------


def test_missing_required_keys():
    doc = minimal_doc()
    del doc["version"]
    raises_at(doc, "")
    raises_at(minimal_doc(version=2), "version")


def test_unknown_top_level_key():
    raises_at(minimal_doc(flavor="spicy"), "scenario")


def test_unknown_config_key():
    raises_at(minimal_doc(config={"warp_speed": 9}), "config")


def test_config_values_are_coerced():
    world = load_scenario(minimal_doc(config={"reboot_ms": 2500,
                                              "cache_capacity": 16.0}))
    assert world.config.reboot_ms == 2500.0
    assert isinstance(world.config.reboot_ms, float)
    assert world.config.cache_capacity == 16
    assert isinstance(world.config.cache_capacity, int)


def test_machine_locations_are_dotted():
    doc = minimal_doc()
    doc["machines"][0]["wheels"] = 4
    raises_at(doc, "machines[0]")

    doc = minimal_doc()
    doc["machines"][0]["interfaces"][0]["address"] = 10
    raises_at(doc, "machines[0].interfaces[0].address")

    doc = minimal_doc()
    doc["machines"][0]["filter_rules"] = [
        {"direction": "sideways", "pattern": "*", "verdict": "allow"}]
    raises_at(doc, "machines[0].filter_rules[0]")

    doc = minimal_doc()
    doc["machines"][0]["template"] = "ghost"
    raises_at(doc, "machines[0].template")


def test_world_level_conflicts_get_machine_locations():
    doc = minimal_doc()
    doc["machines"].append(copy.deepcopy(doc["machines"][0]))
    raises_at(doc, "machines[1]")

    doc = minimal_doc()
    twin = copy.deepcopy(doc["machines"][0])
    twin["id"] = "box2"
    doc["machines"].append(twin)  # same address
    raises_at(doc, "machines[1]")

    doc = minimal_doc()
    doc["machines"][0]["interfaces"][0]["address"] = "10.8.8.5"
    raises_at(doc, "machines[0]")  # address outside the segment prefix


def test_empty_machine_list():
    raises_at(minimal_doc(machines=[]), "machines")


def test_attacker_must_exist():
    raises_at(minimal_doc(attacker="nobody"), "attacker")


def test_bad_scenario_files(tmp_path):
    broken = tmp_path / "broken.json"
    broken.write_text("{not json")
    with pytest.raises(ValidationError) as err:
        load_scenario_file(str(broken))
    assert err.value.location == str(broken)

    listy = tmp_path / "listy.json"
    listy.write_text("[1, 2]")
    with pytest.raises(ValidationError, match="must be an object"):
        load_scenario_file(str(listy))


# --- defaults ----------------------------------------------------------------------


def test_attacker_defaults_to_machine_named_attacker():
    doc = minimal_doc()
    doc["machines"].append({"id": "attacker",
                            "os": {"name": "linux", "version": "2.6"},
                            "interfaces": [{"address": "10.9.9.9",
                                            "network": "lan"}]})
    world = load_scenario(doc)
    local = world.agents["local"]
    assert local.machine == "attacker"
    assert local.privilege == "root"
    hits = world.env.query(AssetTemplate(AssetKind.AGENT_PRESENCE,
                                         {"host": "10.9.9.9", "agent": "local"}))
    assert [p for _, p in hits] == [1.0]


def test_attacker_defaults_to_first_machine_otherwise():
    world = load_scenario(minimal_doc())
    assert world.agents["local"].machine == "box"


def test_seed_override_wins():
    world = load_scenario(minimal_doc(), seed_override=99)
    assert world.seed == 99


def test_inline_vulndb_and_signatures():
    xml = """<vulndb>
      <vulnerability id="v1" name="demo" locality="remote"
                     category="memory-corruption" noise="1">
        <requirement id="r" type="system"><os>linux</os></requirement>
        <result for="r"><draw kind="agent" chance="1.0"/></result>
      </vulnerability>
    </vulndb>"""
    world = load_scenario(minimal_doc(
        vulndb=xml, signatures="Apache* :: linux=0.9\n"))
    assert len(world.vulndb) == 1
    assert world.vulndb.get("v1").noise == 1.0
    assert world.signature_db is not None


def test_vulndb_path_must_be_readable(tmp_path):
    doc = minimal_doc(vulndb={"path": str(tmp_path / "absent.xml")})
    with pytest.raises(ValidationError) as err:
        load_scenario(doc, base_dir=str(tmp_path))
    assert err.value.location == "vulndb"
    assert "cannot read" in str(err.value)


def test_template_bundle_from_directory(tmp_path):
    bundle = tmp_path / "plain"
    (bundle / "files" / "etc").mkdir(parents=True)
    (bundle / "template.json").write_text(json.dumps({"id": "plain"}))
    (bundle / "files" / "etc" / "motd").write_text("hi\n")
    doc = minimal_doc(templates=[{"path": "plain"}])
    doc["machines"][0]["template"] = "plain"
    world = load_scenario(doc, base_dir=str(tmp_path))
    assert world.machines["box"].fs.read("/etc/motd") == b"hi\n"

    with pytest.raises(ValidationError) as err:
        load_scenario(minimal_doc(templates=[{"path": "missing"}]),
                      base_dir=str(tmp_path))
    assert err.value.location == "templates[0]"


# --- benchmark generation ------------------------------------------------------------


def test_benchmark_document_shape_and_laziness():
    doc = benchmark_document(networks=4, per_network=5, seed=11)
    world = load_scenario(doc)
    assert len(world.machines) == 4 * 5 + 2
    assert len(world.segments) == 4
    assert len(world.machines["core-router"].interfaces) == 4
    assert world.agents["local"].machine == "attacker"
    # Loading boots nobody; machines first wake when something reaches them.
    assert [m.id for m in world.machines.values() if m.touch_count] == []


# --- scenario re-derivation ----------------------------------------------------------


def test_scenario_document_is_a_fixed_point():
    world = load_scenario_file(LAB)
    doc1 = scenario_document(world)
    doc2 = scenario_document(load_scenario(doc1))
    assert doc1 == doc2


def test_scenario_document_keeps_the_quiet_details():
    doc = scenario_document(load_scenario_file(LAB))
    by_id = {m["id"]: m for m in doc["machines"]}
    assert by_id["db1"]["users"] == ["root", "postgres"]
    assert by_id["db1"]["hidden"] == {"setuid-backdoor": "present"}
    assert by_id["gw"]["filter_rules"][0]["ports"] == [9000, 9100]
    assert by_id["web1"]["os"]["edition"] == "server"


# --- snapshots -----------------------------------------------------------------------


def drive(world, *steps):
    api = ControlAPI(world)
    results = []
    for name, params in steps:
        results.append(api.run_action("local", name, params)["outcome"])
    return results


KILL_CHAIN_PREFIX = (
    ("network_discovery", {"network": "dmz", "range": [1, 20]}),
    ("port_scan", {"target": "10.0.1.10", "ports": [79, 80, 81]}),
    ("banner_grab", {"target": "10.0.1.10", "port": 80}),
)
EXPLOIT_STEP = ("run_exploit", {"target": "10.0.1.10", "port": 80,
                                "vuln": "iis-chunked-overflow"})


def test_snapshot_requires_quiescence():
    world = load_scenario_file(LAB)

    def forever():
        while True:
            from redsim import sched
            yield sched.Sleep(5.0)

    machine = world.machines["attacker"]
    world.spawn_thread(machine, machine.processes[0], forever(), "spin")
    with pytest.raises(BusyError, match="threads"):
        take_snapshot(world)
    world.abort_threads([t for p in machine.processes for t in p.threads], "test over")

    reply = world.post(lambda: "later")
    with pytest.raises(BusyError, match="queued"):
        take_snapshot(world)
    world.drain_commands()
    assert reply.wait(1.0) == "later"
    take_snapshot(world)  # quiescent again


def test_restore_continues_identically():
    world = load_scenario_file(LAB)
    drive(world, *KILL_CHAIN_PREFIX)
    snap = take_snapshot(world)
    twin = restore_snapshot(json.loads(json.dumps(snap)))
    assert twin.state_digest() == world.state_digest()
    assert twin.clock == world.clock

    after_a = drive(world, EXPLOIT_STEP)
    after_b = drive(twin, EXPLOIT_STEP)
    assert after_a == after_b
    assert twin.state_digest() == world.state_digest()


def test_snapshot_file_round_trip(tmp_path):
    world = load_scenario_file(LAB)
    drive(world, *KILL_CHAIN_PREFIX, EXPLOIT_STEP)
    path = tmp_path / "state.json"
    save_snapshot(world, str(path))
    twin = load_snapshot_file(str(path))
    assert twin.state_digest() == world.state_digest()
    assert len(twin.noise.events) == len(world.noise.events)
    assert twin.action_log == world.action_log
    assert [e.seq for e in twin.events] == [e.seq for e in world.events]


def test_snapshot_version_is_checked():
    world = load_scenario_file(LAB)
    snap = take_snapshot(world)
    snap["snapshot_version"] = 99
    with pytest.raises(ValidationError) as err:
        restore_snapshot(snap)
    assert err.value.location == "snapshot_version"


def test_snapshot_rejects_unknown_machines():
    world = load_scenario_file(LAB)
    snap = take_snapshot(world)
    snap["machines"]["ghost"] = snap["machines"]["db1"]
    with pytest.raises(ValidationError) as err:
        restore_snapshot(snap)
    assert err.value.location == "machines.ghost"


def test_pending_restart_timers_survive_a_snapshot():
    world = load_scenario_file(LAB)
    world.machines["web1"].boot_processes()
    net.reset_machine(world, "web1", "application",
                      app="Internet Information Services")
    app = world.machines["web1"].find_app("Internet Information Services")
    assert app.status == "not-running"

    twin = restore_snapshot(take_snapshot(world))
    twin_app = twin.machines["web1"].find_app("Internet Information Services")
    assert twin_app.status == "not-running"
    twin.clock += twin.config.app_restart_ms
    twin.fire_timers()
    assert twin_app.status == twin_app.configured_status
