"""Cooperative scheduler: one syscall per thread per round, fair rounds,
adaptive sleep control."""
from redsim import net, sched
from redsim.sched import RunStats, SchedulerConfig
from redsim.world import World


def bare_world(machine_count=1):
    world = World(seed=1)
    world.add_segment(net.NetworkSegment("n0", "10.9.0"))
    for i in range(machine_count):
        world.add_machine(net.Machine(
            f"m{i}", net.OSDescriptor("linux"),
            [net.Interface(f"10.9.0.{10 + i}", "n0")]))
    return world


def spinner(log: list, ident, rounds=10_000):
    def gen():
        for _ in range(rounds):
            log.append(ident)
            yield sched.YieldCpu()
    return gen()


def test_one_syscall_per_thread_per_round():
    world = bare_world(3)
    log: list = []
    for i in range(3):
        machine = world.machines[f"m{i}"]
        world.spawn_thread(machine, machine.processes[0], spinner(log, i), f"spin{i}")
    for _ in range(100):
        sched.run_round(world)
    assert len(log) == 300
    assert log.count(0) == log.count(1) == log.count(2) == 100
    assert world.stats.syscalls_executed == 300


def test_round_visits_machines_in_registration_order():
    world = World(seed=1)
    world.add_segment(net.NetworkSegment("n0", "10.9.0"))
    for i, mid in enumerate(["zeta", "alpha", "mu"]):
        world.add_machine(net.Machine(mid, net.OSDescriptor("linux"),
                                      [net.Interface(f"10.9.0.{20 + i}", "n0")]))
    log: list = []
    for mid in ["mu", "zeta", "alpha"]:  # spawn order differs from registration
        machine = world.machines[mid]
        world.spawn_thread(machine, machine.processes[0], spinner(log, mid), mid)
    sched.run_round(world)
    assert log == ["zeta", "alpha", "mu"]


def test_multiple_threads_on_one_machine_each_get_a_turn():
    world = bare_world(1)
    machine = world.machines["m0"]
    log: list = []
    for t in range(4):
        world.spawn_thread(machine, machine.processes[0], spinner(log, t), f"t{t}")
    stats = sched.run_round(world)
    assert sorted(log) == [0, 1, 2, 3]
    assert stats.machine_runs == 1
    assert stats.syscalls_executed == 4


def test_sleep_is_not_a_syscall():
    world = bare_world(1)
    machine = world.machines["m0"]

    def sleeper():
        yield sched.Sleep(250.0)
        yield sched.YieldCpu()

    world.spawn_thread(machine, machine.processes[0], sleeper(), "sleeper")
    stats = sched.run_round(world)
    assert stats.syscalls_executed == 0
    # The thread is parked; nothing is runnable until the timer fires.
    assert list(world.runnable_machines()) == []
    world.pump()
    assert world.stats.syscalls_executed == 1
    assert world.clock >= 250.0


def test_refused_connect_returns_immediately():
    world = bare_world(2)
    m0 = world.machines["m0"]
    outcomes = []

    def patient():
        result = yield sched.Connect("10.9.0.11", 4001)  # nothing listens there
        outcomes.append(result.outcome)

    world.spawn_thread(m0, m0.processes[0], patient(), "patient")
    world.pump()
    assert outcomes == ["refused"]
    assert world.clock == 0.0


def test_recv_timeout_wakes_the_thread():
    # The server lives on m0: rounds visit machines in registration order,
    # so its Listen lands before the client's Connect.
    world = bare_world(2)
    m0 = world.machines["m0"]
    m1 = world.machines["m1"]
    outcomes = []

    def server_side():
        listened = yield sched.Listen(4002)
        got = yield sched.Accept(listened.value, timeout_ms=5000)
        outcomes.append(("accepted", got.ok))

    def client_side():
        res = yield sched.Connect("10.9.0.10", 4002)
        # The server never sends: this recv parks until its timeout timer.
        data = yield sched.Recv(res.value, 64, timeout_ms=300)
        outcomes.append(("recv", data.outcome))

    world.spawn_thread(m0, m0.processes[0], server_side(), "srv")
    world.spawn_thread(m1, m1.processes[0], client_side(), "cli")
    world.pump()
    assert ("accepted", True) in outcomes
    assert ("recv", "timeout") in outcomes
    assert world.clock >= 300


def test_filtered_connect_blocks_for_the_timeout():
    world = bare_world(2)
    m0 = world.machines["m0"]
    world.machines["m1"].filter_rules.append(
        net.FilterRule("in", "any", None, "deny"))
    outcomes = []

    def gen():
        result = yield sched.Connect("10.9.0.11", 80)
        outcomes.append(result.outcome)

    world.spawn_thread(m0, m0.processes[0], gen(), "conn")
    world.pump()
    assert outcomes == ["timeout"]
    assert world.clock >= world.config.filtered_timeout_ms


def test_finished_threads_leave_the_round():
    world = bare_world(1)
    machine = world.machines["m0"]
    log: list = []

    def short():
        log.append("ran")
        yield sched.YieldCpu()

    world.spawn_thread(machine, machine.processes[0], short(), "short")
    sched.run_round(world)
    sched.run_round(world)
    assert log == ["ran"]
    assert list(world.runnable_machines()) == []


def test_on_finish_reports_errors():
    world = bare_world(1)
    machine = world.machines["m0"]
    seen = []

    def boom():
        yield sched.YieldCpu()
        raise net.AddressingError("no route to anywhere")

    world.spawn_thread(machine, machine.processes[0], boom(), "boom",
                       on_finish=lambda t, err: seen.append(err))
    world.pump()
    assert seen == ["no route to anywhere"]


# --- adaptive sleep control -----------------------------------------------------

def test_adjustment_trace_is_exact():
    # Hand trace: start 512, threshold 8, step 64.
    # lost: 0 -> 448, 20 -> 896, 0 -> 832, 0 -> 768, 20 -> 1536, 0 -> 1472
    config = SchedulerConfig(runs_to_sleep=512, lost_threshold=8, linear_step=64,
                             rts_min=64, rts_max=8192)
    stats = RunStats()
    observed = []
    for lost in [0, 20, 0, 0, 20, 0]:
        stats.syscalls_lost_per_sleep = lost
        observed.append(sched.adjust_runs_to_sleep(config, stats))
    assert observed == [448, 896, 832, 768, 1536, 1472]


def test_adjustment_clamps_at_both_ends():
    config = SchedulerConfig(runs_to_sleep=8192, lost_threshold=8,
                             rts_min=64, rts_max=8192)
    stats = RunStats()
    stats.syscalls_lost_per_sleep = 100
    assert sched.adjust_runs_to_sleep(config, stats) == 8192
    config.runs_to_sleep = 64
    stats.syscalls_lost_per_sleep = 0
    assert sched.adjust_runs_to_sleep(config, stats) == 64


def test_idle_sleep_waits_for_progress():
    config = SchedulerConfig(runs_to_sleep=10, sleep_ms=5.0)
    stats = RunStats()
    naps = []
    assert not sched.idle_sleep(config, stats, naps.append)
    stats.machine_runs = 10
    assert sched.idle_sleep(config, stats, naps.append)
    assert naps == [0.005]
    assert stats.sleeps == 1
    # No further progress: no second nap.
    assert not sched.idle_sleep(config, stats, naps.append)
    stats.machine_runs = 20
    assert sched.idle_sleep(config, stats, naps.append)
    assert stats.sleeps == 2


def test_config_round_trip():
    config = SchedulerConfig.from_mapping({"runs_to_sleep": 128, "sleep_ms": 2.5})
    assert config.runs_to_sleep == 128
    assert config.sleep_ms == 2.5
    assert SchedulerConfig.from_mapping(config.to_dict()) == config
