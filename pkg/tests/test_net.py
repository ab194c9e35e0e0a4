"""Socket-level network emulation: routing, filtering, lifecycle."""
import pytest
from hypothesis import given
from hypothesis import strategies as st

from redsim import net
from redsim.errors import PeerResetError, PortBindError
from redsim.world import World


def make_world():
    """Three routed segments plus one orphan: src -- rtr -- web -- fw -- deep.

    Ports 9000-9100 are dropped by the firewall between b and c; segment d
    has no forwarder attached, so nothing can reach it.
    """
    world = World(seed=42)
    for sid, prefix in (("a", "10.1.1"), ("b", "10.1.2"),
                        ("c", "10.1.3"), ("d", "10.1.4")):
        world.add_segment(net.NetworkSegment(sid, prefix))
    linux = net.OSDescriptor("linux", version="2.4")
    world.add_machine(net.Machine(
        "src", linux, [net.Interface("10.1.1.10", "a")]))
    world.add_machine(net.Machine(
        "rtr", net.OSDescriptor("ios"), [net.Interface("10.1.1.1", "a"),
                                         net.Interface("10.1.2.1", "b")],
        roles={"router"}))
    world.add_machine(net.Machine(
        "web", linux, [net.Interface("10.1.2.20", "b")],
        [net.ApplicationInstance("httpd", (1, 3), "running", [80], "Apache/1.3.27")]))
    world.add_machine(net.Machine(
        "fw", net.OSDescriptor("openbsd"), [net.Interface("10.1.2.2", "b"),
                                            net.Interface("10.1.3.2", "c")],
        roles={"router", "firewall"},
        filter_rules=[net.FilterRule("both", "any", (9000, 9100), "deny")]))
    world.add_machine(net.Machine(
        "deep", linux, [net.Interface("10.1.3.30", "c")],
        [net.ApplicationInstance("echod", (1, 0), "running", [7, 9050], "")]))
    world.add_machine(net.Machine(
        "iso", linux, [net.Interface("10.1.4.40", "d")]))
    return world


# --- routing and probing -----------------------------------------------------------

def test_connect_within_routed_segments():
    world = make_world()
    src = world.machines["src"]
    result = net.connect_tcp(world, src, "10.1.2.20", 80)
    assert result.outcome == "connected"
    assert result.route.segments == ["a", "b"]
    # The listening application pushed its banner on accept.
    data, eof = net.sock_recv(world, src, result.fd, 1024)
    assert data == b"Apache/1.3.27" and not eof


def test_connect_refused_when_nothing_listens():
    world = make_world()
    result = net.connect_tcp(world, world.machines["src"], "10.1.2.20", 81)
    assert result.outcome == "refused"


def test_filtered_port_looks_like_timeout():
    world = make_world()
    result = net.connect_tcp(world, world.machines["src"], "10.1.3.30", 9050)
    assert result.outcome == "timeout"
    assert result.route.status == "filtered"
    assert result.route.blocked_by == "fw"


def test_firewall_passes_unfiltered_ports():
    world = make_world()
    result = net.connect_tcp(world, world.machines["src"], "10.1.3.30", 7)
    assert result.outcome == "connected"
    assert result.route.segments == ["a", "b", "c"]


def test_unreachable_segment():
    world = make_world()
    status, r = net.probe_host(world, world.machines["src"], "10.1.4.40")
    assert status == "unreachable"
    result = net.connect_tcp(world, world.machines["src"], "10.1.4.40", 22)
    assert result.outcome == "timeout" and result.route.status == "unreachable"


def test_probe_outcomes():
    world = make_world()
    src = world.machines["src"]
    assert net.probe_host(world, src, "10.1.2.20")[0] == "up"
    assert net.probe_host(world, src, "10.1.2.99")[0] == "absent"
    net.crash_machine(world, "web")
    assert net.probe_host(world, src, "10.1.2.20")[0] == "filtered"


def test_first_matching_filter_rule_wins():
    world = make_world()
    fw = world.machines["fw"]
    fw.filter_rules.insert(0, net.FilterRule("both", "any", (9050, 9050), "allow"))
    assert net.connect_tcp(world, world.machines["src"], "10.1.3.30", 9050).outcome \
        == "connected"
    assert net.connect_tcp(world, world.machines["src"], "10.1.3.30", 9060).outcome \
        == "timeout"


def test_host_filter_rules_apply_at_endpoints():
    world = make_world()
    web = world.machines["web"]
    web.filter_rules.append(net.FilterRule("in", "10.1.1.*", None, "deny"))
    result = net.connect_tcp(world, world.machines["src"], "10.1.2.20", 80)
    assert result.outcome == "timeout"
    assert result.route.blocked_by == "web"


def test_probing_is_lazy():
    world = make_world()
    net.probe_host(world, world.machines["src"], "10.1.2.20")
    assert world.machines["web"].touch_count == 1
    assert world.machines["deep"].touch_count == 0
    assert world.machines["iso"].touch_count == 0


# --- established connections -------------------------------------------------------

def test_transfers_do_not_route():
    world = make_world()
    src = world.machines["src"]
    result = net.connect_tcp(world, src, "10.1.2.20", 80)
    net.sock_recv(world, src, result.fd, 1024)  # drain the banner
    routes_before = world.route_calls
    for i in range(10_000):
        net.sock_send(world, src, result.fd, b"x" * 32)
    assert world.route_calls == routes_before
    assert bytes(result.server.rbuf) == b"x" * 32 * 10_000


def test_stream_order_is_preserved():
    world = make_world()
    src = world.machines["src"]
    result = net.connect_tcp(world, src, "10.1.2.20", 80)
    server = result.server
    for chunk in (b"GET ", b"/index.html", b" HTTP/1.0\r\n\r\n"):
        net.sock_send(world, src, result.fd, chunk)
    assert bytes(server.rbuf) == b"GET /index.html HTTP/1.0\r\n\r\n"


def test_close_signals_eof_to_the_peer():
    world = make_world()
    src = world.machines["src"]
    web = world.machines["web"]
    result = net.connect_tcp(world, src, "10.1.2.20", 80)
    sfd = result.server.fd
    net.close_fd(world, src, result.fd)
    data, eof = net.sock_recv(world, web, sfd, 64)
    assert (data, eof) == (b"", True)


def test_ephemeral_ports_are_distinct():
    world = make_world()
    src = world.machines["src"]
    a = net.connect_tcp(world, src, "10.1.2.20", 80)
    b = net.connect_tcp(world, src, "10.1.2.20", 80)
    assert a.client.local_port != b.client.local_port
    assert world.connections == 2


def test_explicit_listener_accepts():
    world = make_world()
    web = world.machines["web"]
    lfd = net.listen_tcp(world, web, 8080)
    assert net.accept_pending(world, web, lfd) is None
    result = net.connect_tcp(world, world.machines["src"], "10.1.2.20", 8080)
    assert result.outcome == "connected"
    accepted = net.accept_pending(world, web, lfd)
    assert accepted is not None
    fd, addr, port = accepted
    assert addr == "10.1.1.10"


def test_listen_port_conflict():
    world = make_world()
    web = world.machines["web"]
    with pytest.raises(PortBindError):
        net.listen_tcp(world, web, 80)  # httpd already owns it


# --- datagrams --------------------------------------------------------------------

def test_udp_routes_every_datagram():
    world = make_world()
    src = world.machines["src"]
    deep = world.machines["deep"]
    bound = net.bind_udp(world, deep, 514)
    sfd = net.bind_udp(world, src, 0)
    routes_before = world.route_calls
    for i in range(5):
        n = net.sock_sendto(world, src, sfd, b"log %d" % i, "10.1.3.30", 514)
        assert n == 5
    assert world.route_calls == routes_before + 5
    assert net.sock_recv(world, deep, bound, 64) == (b"log 0", False)


def test_udp_loss_is_silent():
    world = make_world()
    src = world.machines["src"]
    sfd = net.bind_udp(world, src, 0)
    # Absent host, unreachable segment, filtered port: all report full length.
    assert net.sock_sendto(world, src, sfd, b"hi", "10.1.2.99", 9) == 2
    assert net.sock_sendto(world, src, sfd, b"hi", "10.1.4.40", 9) == 2
    assert net.sock_sendto(world, src, sfd, b"hi", "10.1.3.30", 9001) == 2
    assert net.sock_recv(world, src, sfd, 64) == (None, False)


# --- machine lifecycle --------------------------------------------------------------

def test_crash_resets_established_peers():
    world = make_world()
    src = world.machines["src"]
    result = net.connect_tcp(world, src, "10.1.2.20", 80)
    net.sock_recv(world, src, result.fd, 1024)
    net.crash_machine(world, "web")
    with pytest.raises(PeerResetError):
        net.sock_send(world, src, result.fd, b"ping")
    with pytest.raises(PeerResetError):
        net.sock_recv(world, src, result.fd, 64)


def test_reboot_restores_service_after_delay():
    world = make_world()
    src = world.machines["src"]
    net.reset_machine(world, "web")
    assert world.machines["web"].state == "rebooting"
    assert net.connect_tcp(world, src, "10.1.2.20", 80).outcome == "timeout"
    world.pump()  # nothing queued: clock jumps to the reboot timer
    assert world.machines["web"].state == "up"
    assert world.clock >= world.config.reboot_ms
    assert net.connect_tcp(world, src, "10.1.2.20", 80).outcome == "connected"


def test_crash_is_permanent():
    world = make_world()
    net.crash_machine(world, "web")
    world.pump()
    assert world.machines["web"].state == "crashed"


def test_app_crash_leaves_machine_up():
    world = make_world()
    src = world.machines["src"]
    net.crash_machine(world, "web", what="application", app="httpd")
    web = world.machines["web"]
    assert web.state == "up"
    assert net.connect_tcp(world, src, "10.1.2.20", 80).outcome == "refused"
    world.pump()
    assert net.connect_tcp(world, src, "10.1.2.20", 80).outcome == "refused"


def test_app_reset_restarts_after_delay():
    world = make_world()
    src = world.machines["src"]
    net.reset_machine(world, "web", what="application", app="httpd")
    assert net.connect_tcp(world, src, "10.1.2.20", 80).outcome == "refused"
    world.pump()
    assert world.clock >= world.config.app_restart_ms
    assert net.connect_tcp(world, src, "10.1.2.20", 80).outcome == "connected"


def test_down_machines_count_touches_only_when_probed():
    world = make_world()
    net.crash_machine(world, "deep")
    before = world.machines["deep"].touch_count
    net.probe_host(world, world.machines["src"], "10.1.3.30")
    assert world.machines["deep"].touch_count == before + 1


# --- properties --------------------------------------------------------------------

@given(st.lists(st.binary(min_size=1, max_size=64), max_size=20),
       st.integers(1, 64))
def test_stream_reassembles_under_any_chunking(chunks, recv_size):
    world = make_world()
    src = world.machines["src"]
    web = world.machines["web"]
    result = net.connect_tcp(world, src, "10.1.2.20", 80)
    sfd = result.server.fd
    for chunk in chunks:
        net.sock_send(world, src, result.fd, chunk)
    received = b""
    while True:
        data, eof = net.sock_recv(world, web, sfd, recv_size)
        if not data:
            break
        received += data
    assert received == b"".join(chunks)
