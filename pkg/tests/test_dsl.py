import random

import pytest

from replanvlm.dsl import (
    DEFERRED_PREFIX,
    ActionProgram,
    SkillCall,
    count_steps,
    effect_equivalent,
    expand,
    interpret,
    parse,
    print_program,
    simulate,
)
from replanvlm.errors import ArityError, DslSyntaxError, UnknownSkill, UnresolvableSelector
from replanvlm.goals import eval_goal
from replanvlm.world import WorldFaultSpec, snapshot

SELECTORS = ["apple", "red cube", "evil toy", "bob's cup", "green block", "plate1", "toy_car", "blue cube"]
DESTINATIONS = ["table", "box", "belt", "plate2", "red cube", "user"]


def _random_program(rng: random.Random) -> str:
    calls = []
    for _ in range(rng.randint(1, 6)):
        kind = rng.choice(["pick", "place", "give", "open_drawer", "wait"])
        if kind == "pick":
            calls.append(SkillCall("pick", (rng.choice(SELECTORS),)))
        elif kind == "place":
            calls.append(SkillCall("place", (rng.choice(DESTINATIONS),)))
        elif kind == "give":
            calls.append(SkillCall("give"))
        elif kind == "open_drawer":
            calls.append(SkillCall("open_drawer", ("drawer",)))
        else:
            calls.append(SkillCall("wait", (rng.randint(0, 12),)))
    sep = rng.choice(["\n", "; ", "\n\n"])
    return sep.join(c.to_text() for c in calls)


CORPUS = [_random_program(random.Random(i)) for i in range(50)]


@pytest.mark.parametrize("source", CORPUS)
def test_parse_print_round_trip(source):
    program = parse(source)
    text = print_program(program)
    again = parse(text)
    assert again == program
    assert print_program(again) == text


def test_print_quotes_strings_with_apostrophes():
    program = ActionProgram((SkillCall("pick", ("bob's cup",)), SkillCall("wait", (3,))))
    assert print_program(program) == "pick(\"bob's cup\")\nwait(3)"


@pytest.mark.parametrize(
    "arg",
    ["a\\b", "it's a \"toy\"", "tab\there", "two\nlines", "trailing ", "ünïcode cup", "\\", "'", '"'],
)
def test_escaped_literals_survive_printing(arg):
    program = ActionProgram((SkillCall("pick", (arg,)),))
    again = parse(print_program(program))
    assert again.calls[0].args == (arg,)
    assert again == program


def test_escaped_source_round_trips():
    program = parse(r"pick('a\\b'); place('it\'s a \"box\"')")
    assert program.calls[0].args == ("a\\b",)
    assert program.calls[1].args == ("it's a \"box\"",)
    assert parse(print_program(program)) == program


@pytest.mark.parametrize(
    "source",
    [
        "",
        "   \n  ",
        "Pick up the apple and give it to me.",
        "for o in objects:\n    pick(o)",
        "x = pick('apple')",
        "pick(apple)",
        "pick(obj='apple')",
        "robot.pick('apple')",
        "pick('apple'",
    ],
)
def test_format_rejects_prose_blanks_and_pseudocode(source):
    with pytest.raises(DslSyntaxError):
        parse(source)


def test_unknown_skill_and_arity_errors_report_position():
    with pytest.raises(UnknownSkill) as e:
        parse("pick('a')\nfly('b')")
    assert e.value.name == "fly"
    assert e.value.position == 10
    with pytest.raises(ArityError):
        parse("pick()")
    with pytest.raises(ArityError):
        parse("give('apple')")


def test_negative_numbers_parse_but_wait_rejects_them(scene):
    world, _, _ = scene(1)
    program = parse("wait(-1)")
    assert program.calls[0].args == (-1,)
    with pytest.raises(ArityError):
        expand(program, snapshot(world))


@pytest.mark.parametrize(
    "task_id,source,steps",
    [
        (1, "pick('apple')\ngive()", 6),
        (2, "pick('blue cube')\nplace('table')\npick('yellow cube')\nplace('table')\npick('red cube')\nplace('box')", 21),
        (3, "pick('yellow cube')\nplace('red cube')\npick('blue cube')\nplace('yellow cube')", 14),
        (6, "open_drawer('drawer')\npick('green block')\nplace('table')", 13),
        (7, "pick('evil toy')\nplace('box')", 7),
    ],
)
def test_canonical_programs_count_minimum_steps_and_reach_goal(scene, task_id, source, steps):
    world, goal, _ = scene(task_id)
    snap = snapshot(world)
    program = parse(source)
    assert count_steps(program, snap) == steps
    after, _ = interpret(expand(program, snap), world)
    assert eval_goal(goal, after)[0]
    assert eval_goal(goal, simulate(program, snap))[0]


def test_wait_adds_one_step_per_count(scene):
    world, _, _ = scene(4)
    assert count_steps(parse("wait(5)"), snapshot(world)) == 5
    assert count_steps(parse("wait(0)"), snapshot(world)) == 0


def test_hidden_object_needs_a_preceding_drawer_opening(scene):
    world, goal, _ = scene(6)
    snap = snapshot(world)
    with pytest.raises(UnresolvableSelector):
        expand(parse("pick('green block')\nplace('table')"), snap)
    trace = expand(parse("open_drawer('drawer')\npick('green block')\nplace('table')"), snap)
    assert any(t.startswith(DEFERRED_PREFIX) for t in trace.deferred)
    assert trace.error is None


def test_deferred_target_still_hidden_is_unreachable(scene):
    from replanvlm.errors import UnreachableTarget

    world, _, _ = scene(6)
    trace = expand(parse("open_drawer('drawer')\npick('green block')\nplace('table')"), snapshot(world))
    # the handle slips, so the drawer stays closed
    with pytest.raises(UnreachableTarget) as e:
        interpret(trace, world, WorldFaultSpec("GripSlip", at_step=2))
    assert e.value.world is not None
    assert [ev.kind for ev in e.value.events] == ["FaultInjected", "Slip"]


def test_grip_slip_breaks_delivery(scene):
    world, goal, _ = scene(1)
    trace = expand(parse("pick('apple')\ngive()"), snapshot(world))
    after, events = interpret(trace, world, WorldFaultSpec("GripSlip", at_step=2))
    assert not eval_goal(goal, after)[0]
    assert [e.kind for e in events] == ["FaultInjected", "Drop"]


def _scene_program(rng: random.Random) -> ActionProgram:
    calls = []
    for _ in range(rng.randint(1, 4)):
        calls.append(SkillCall("pick", (rng.choice(["evil toy", "ultraman", "teddy", "toy"]),)))
        calls.append(SkillCall("place", (rng.choice(["box", "table", "teddy"]),)) if rng.random() < 0.8 else SkillCall("give"))
    return ActionProgram(tuple(calls))


SCENE_CORPUS = [_scene_program(random.Random(100 + i)) for i in range(30)]


@pytest.mark.parametrize("program", SCENE_CORPUS)
def test_effect_equivalence_is_reflexive(scene, program):
    world, _, _ = scene(7)
    report = effect_equivalent(program, program, snapshot(world))
    assert report.equivalent, report.summary()


def test_effect_equivalence_is_symmetric(scene):
    world, _, _ = scene(7)
    snap = snapshot(world)
    for a, b in zip(SCENE_CORPUS, SCENE_CORPUS[1:]):
        assert bool(effect_equivalent(a, b, snap)) == bool(effect_equivalent(b, a, snap))


def test_equivalence_ignores_wording_but_not_effects(scene):
    world, _, _ = scene(1)
    snap = snapshot(world)
    assert effect_equivalent(parse("pick('apple')\ngive()"), parse("pick('red apple')\ngive()"), snap)
    report = effect_equivalent(parse("pick('apple')\ngive()"), parse("pick('cup')\ngive()"), snap)
    assert not report
    assert len(report.divergences) == 2
    broken = effect_equivalent(parse("pick('apple')\ngive()"), parse("pick('pear')\ngive()"), snap)
    assert not broken and "right" in broken.errors


def test_steps_add_up_over_concatenation(scene):
    world, _, _ = scene(7)
    snap = snapshot(world)
    for a, b in zip(SCENE_CORPUS, SCENE_CORPUS[1:]):
        joined = a + b
        assert joined.calls == a.calls + b.calls
        assert parse(joined.source) == joined
        assert count_steps(joined, snap) == count_steps(a, snap) + count_steps(b, snap)


def test_skipping_the_blockers_diverges_on_the_red_cube(scene):
    world, _, _ = scene(2)
    snap = snapshot(world)
    full = parse("pick('blue cube')\nplace('table')\npick('yellow cube')\nplace('table')\npick('red cube')\nplace('box')")
    report = effect_equivalent(full, parse("pick('red cube')\nplace('box')"), snap)
    assert not report
    assert any(d.startswith("red cube:") for d in report.divergences)
