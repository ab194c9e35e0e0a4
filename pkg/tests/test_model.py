"""Knowledge assets, noise bookkeeping, and cost estimation.

Expected numbers in the cost tests are computed by hand from the stated
rule (base success scaled per condition by p + (1-p)*penalty) and frozen
here, so a regression in the arithmetic cannot hide behind the code that
produced it.
"""
import pytest
from hypothesis import given
from hypothesis import strategies as st

from redsim.errors import ParameterError, SchemaViolation
from redsim.model import (Asset, AssetKind, AssetTemplate, Between, Cost,
                          EnvCondition, EnvironmentKnowledge, NoiseCategory,
                          NoiseEvent, NoiseLog, OneOf, Param, RunTime,
                          ActionSpec, agent_presence, application_asset,
                          banner_asset, estimate_cost, ip_connectivity,
                          os_asset, tcp_connectivity, user_list)


# --- asset identity -------------------------------------------------------------

def test_asset_identity_uses_all_attributes():
    a = banner_asset("10.0.0.5", 80, "Apache/1.3.27")
    b = banner_asset("10.0.0.5", 80, "Apache/2.0.40")
    assert a.key() != b.key()


def test_os_assets_key_per_hypothesis():
    win = os_asset("10.0.0.5", "windows", 0.8)
    lin = os_asset("10.0.0.5", "linux", 0.2)
    assert win.key() != lin.key()
    refined = os_asset("10.0.0.5", "windows", 0.9, version="nt4")
    assert refined.key() == win.key()


def test_probability_bounds_enforced():
    with pytest.raises(SchemaViolation):
        os_asset("h", "linux", 1.5)
    with pytest.raises(SchemaViolation):
        os_asset("h", "linux", -0.1)


def test_required_attributes_enforced():
    with pytest.raises(SchemaViolation):
        Asset(AssetKind.BANNER, {"host": "h"})


def test_zero_probability_is_a_confirmed_negative():
    env = EnvironmentKnowledge()
    env.assert_asset(ip_connectivity("a", "b", 0.0))
    hits = env.query(AssetTemplate(AssetKind.IP_CONNECTIVITY,
                                   {"source": "a", "target": "b"}))
    assert len(hits) == 1
    assert hits[0][1] == 0.0


def test_last_write_wins():
    env = EnvironmentKnowledge()
    env.assert_asset(os_asset("h", "windows", 0.6))
    env.assert_asset(os_asset("h", "windows", 0.95))
    assert len(env) == 1
    (asset, p), = env.query(AssetTemplate(AssetKind.OPERATING_SYSTEM, {"host": "h"}))
    assert p == 0.95


def test_competing_os_hypotheses_coexist():
    env = EnvironmentKnowledge()
    env.assert_asset(os_asset("h", "linux", 0.8))
    env.assert_asset(os_asset("h", "openbsd", 0.2))
    hits = env.query(AssetTemplate(AssetKind.OPERATING_SYSTEM, {"host": "h"}))
    assert sorted(p for _, p in hits) == [0.2, 0.8]


def test_user_list_order_does_not_matter():
    a = user_list("h", ["bob", "alice"])
    b = user_list("h", ["alice", "bob"])
    assert a.key() == b.key()


# --- templates -------------------------------------------------------------------

def test_template_bind_and_match():
    tpl = AssetTemplate(AssetKind.TCP_CONNECTIVITY,
                        {"target": Param("target"), "port": Param("port")})
    assert sorted(tpl.free_params()) == ["port", "target"]
    bound = tpl.bind({"target": "10.0.0.5", "port": 80})
    assert bound.matches(tcp_connectivity("src", "10.0.0.5", 80))
    assert not bound.matches(tcp_connectivity("src", "10.0.0.5", 443))


def test_template_bind_missing_parameter():
    tpl = AssetTemplate(AssetKind.BANNER, {"host": Param("target")})
    with pytest.raises(ParameterError):
        tpl.bind({})


def test_template_match_with_unbound_param_is_an_error():
    tpl = AssetTemplate(AssetKind.BANNER, {"host": Param("target")})
    with pytest.raises(ParameterError):
        tpl.matches(banner_asset("h", 80, "x"))


def test_omitted_attributes_match_anything():
    tpl = AssetTemplate(AssetKind.BANNER, {"host": "h"})
    assert tpl.matches(banner_asset("h", 80, "x"))
    assert tpl.matches(banner_asset("h", 443, "y"))


# --- noise log -------------------------------------------------------------------

def _noise(action, category, sensor="ids:probe1"):
    return NoiseEvent(sensor=sensor, category=category, magnitude=1.0,
                      action=action, timestamp=0.0)


def test_cleanup_respects_categories_and_status():
    log = NoiseLog()
    log.record(_noise("act-1", NoiseCategory.IRREMOVABLE))
    log.record(_noise("act-1", NoiseCategory.CLEANABLE_ON_SUCCESS))
    log.record(_noise("act-2", NoiseCategory.CLEANABLE_ON_SUCCESS))
    log.record(_noise("act-3", NoiseCategory.CLEANABLE_ALWAYS))
    removed = log.cleanup_for({"act-1": "success", "act-2": "failure",
                               "act-3": "failure"})
    assert {(ev.action, ev.category) for ev in removed} == {
        ("act-1", NoiseCategory.CLEANABLE_ON_SUCCESS),
        ("act-3", NoiseCategory.CLEANABLE_ALWAYS),
    }
    # A second pass finds nothing left to scrub.
    assert log.cleanup_for({"act-1": "success", "act-3": "failure"}) == []


def test_cleanup_ignores_other_agents_actions():
    log = NoiseLog()
    log.record(_noise("act-9", NoiseCategory.CLEANABLE_ALWAYS))
    assert log.cleanup_for({"act-1": "success"}) == []
    assert len(log.events) == 1


# --- cost estimation --------------------------------------------------------------

def _spec(**overrides):
    base = dict(
        name="probe",
        goal=AssetTemplate(AssetKind.BANNER,
                           {"host": Param("target"), "port": Param("port")}),
        run_time=RunTime(10, 20, 40),
        base_success_probability=0.75,
    )
    base.update(overrides)
    return ActionSpec(**base)


def test_satisfied_goal_costs_nothing():
    env = EnvironmentKnowledge()
    env.assert_asset(banner_asset("h", 80, "Apache"))
    cost = estimate_cost(_spec(), env, {"target": "h", "port": 80})
    assert cost == Cost.zero()
    assert cost.run_time.max == 0


def test_goal_below_certainty_still_costs():
    env = EnvironmentKnowledge()
    env.assert_asset(banner_asset("h", 80, "Apache", probability=0.9))
    cost = estimate_cost(_spec(), env, {"target": "h", "port": 80})
    assert cost.success_probability == 0.75
    assert cost.run_time.max == 40


def test_unknown_conditions_apply_the_prior():
    # Hand computation: prior 0.5, penalty 0.1 -> factor 0.5 + 0.5*0.1 = 0.55.
    # success = 0.75 * 0.55 = 0.4125
    cond = EnvCondition(AssetTemplate(AssetKind.OPERATING_SYSTEM,
                                      {"host": Param("target")}),
                        tests={"os": OneOf(("windows",))})
    cost = estimate_cost(_spec(environment_conditions=[cond]),
                         EnvironmentKnowledge(), {"target": "h", "port": 80})
    assert cost.success_probability == pytest.approx(0.4125, abs=1e-12)


def test_known_conditions_scale_by_belief():
    # p_true = 0.95 -> factor 0.95 + 0.05*0.1 = 0.955
    # second condition unknown -> 0.55; success = 0.75 * 0.955 * 0.55 = 0.3939375
    env = EnvironmentKnowledge()
    env.assert_asset(os_asset("h", "windows", 0.95))
    cond_os = EnvCondition(AssetTemplate(AssetKind.OPERATING_SYSTEM,
                                         {"host": Param("target")}),
                           tests={"os": OneOf(("windows",))})
    cond_tcp = EnvCondition(AssetTemplate(AssetKind.TCP_CONNECTIVITY,
                                          {"target": Param("target"),
                                           "port": Param("port")}))
    cost = estimate_cost(_spec(environment_conditions=[cond_os, cond_tcp]),
                         env, {"target": "h", "port": 80})
    assert cost.success_probability == pytest.approx(0.3939375, abs=1e-12)


def test_violated_condition_applies_penalty():
    # Known linux, condition wants windows: p_true = 0 -> factor 0.1.
    env = EnvironmentKnowledge()
    env.assert_asset(os_asset("h", "linux", 1.0))
    cond = EnvCondition(AssetTemplate(AssetKind.OPERATING_SYSTEM,
                                      {"host": Param("target")}),
                        tests={"os": OneOf(("windows",))})
    cost = estimate_cost(_spec(environment_conditions=[cond]),
                         env, {"target": "h", "port": 80})
    assert cost.success_probability == pytest.approx(0.075, abs=1e-12)


def test_stealthiness_decays_with_noise():
    from redsim.model import NoiseTemplate
    spec = _spec(noise_profile=[
        NoiseTemplate("ids", NoiseCategory.IRREMOVABLE, 3.0),
        NoiseTemplate("hostlog", NoiseCategory.CLEANABLE_ON_SUCCESS, 1.0),
    ])
    cost = estimate_cost(spec, EnvironmentKnowledge(), {"target": "h", "port": 80})
    assert cost.stealthiness == pytest.approx(1.0 / 5.0)


def test_between_and_oneof_predicates():
    assert Between(1, 3)(2) and not Between(1, 3)(4)
    assert not Between(1, 3)("junk")
    assert OneOf(("a", "b"))("a") and not OneOf(("a", "b"))("c")


def test_run_time_ordering_enforced():
    with pytest.raises(SchemaViolation):
        RunTime(10, 5, 20)


# --- properties --------------------------------------------------------------------

attr_values = st.one_of(st.integers(-1000, 1000), st.text(max_size=8))


@given(host=st.text(min_size=1, max_size=8), port=st.integers(1, 65535),
       banner=st.text(max_size=16))
def test_bound_goal_always_matches_its_own_asset(host, port, banner):
    tpl = AssetTemplate(AssetKind.BANNER,
                        {"host": Param("t"), "port": Param("p")})
    bound = tpl.bind({"t": host, "p": port})
    assert bound.matches(banner_asset(host, port, banner))


@given(st.lists(st.tuples(st.sampled_from(["read", "write"]),
                          st.floats(0, 1, allow_nan=False)), max_size=30))
def test_knowledge_reflects_the_last_assertion(ops):
    env = EnvironmentKnowledge()
    last = None
    for _, p in ops:
        env.assert_asset(ip_connectivity("a", "b", p))
        last = p
    hits = env.query(AssetTemplate(AssetKind.IP_CONNECTIVITY,
                                   {"source": "a", "target": "b"}))
    if last is None:
        assert hits == []
    else:
        assert len(hits) == 1 and hits[0][1] == last
