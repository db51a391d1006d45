"""End-to-end acceptance checks.

Each test prints one scoreboard line (PASS/FAIL plus the measured numbers)
straight to the terminal, capture or not, and then asserts.  The whole
module is the release gate: connectedness verdicts, corpus semantics,
deadlock sweeps, random-program exploration, first-match adaptation,
checker scaling, overhead counting, and determinism.
"""

from __future__ import annotations

import time
from contextlib import contextmanager

import numpy as np

from chorad import corpus
from chorad.adapt import AdaptationManager, AdaptationServer, Environment
from chorad.check import check_program
from chorad.parser import parse_program
from chorad.sim import (
    SimConfig,
    TERMINATED,
    TimelineEvent,
    count_overhead,
    explore,
    explore_deadlocks,
    simulate,
)

import oracle
import progen


@contextmanager
def verdict(capsys, tag):
    """Print `PASS <tag>` / `FAIL <tag>` around the enclosed assertions."""
    note = {}
    try:
        yield note
    except BaseException:
        _say(capsys, "FAIL", tag, note)
        raise
    _say(capsys, "PASS", tag, note)


def _say(capsys, status, tag, note):
    detail = f"  [{note['detail']}]" if note.get("detail") else ""
    with capsys.disabled():
        print(f"{status}  criterion {tag}{detail}", flush=True)


def _swapped_appointment() -> tuple[str, int, int]:
    """Appointment source with the availability scope hoisted above the
    proposal; returns (source, line of the scope, line of free_day@bob)."""
    lines = corpus.appointment().source.splitlines()
    free = next(i for i, l in enumerate(lines) if "free_day@bob" in l)
    prop = next(i for i, l in enumerate(lines) if "propose:" in l)
    top = next(i for i, l in enumerate(lines) if "scope @alice" in l)
    bottom = next(i for i, l in enumerate(lines) if "availability" in l)
    swapped = (lines[:prop] + lines[top:bottom + 1] + [lines[prop]]
               + lines[bottom + 1:])
    return "\n".join(swapped) + "\n", prop + 1, free + 1


def test_criterion_01_golden_connectedness_verdicts(capsys):
    with verdict(capsys, "1: golden connectedness verdicts") as note:
        t0 = time.perf_counter()
        assert check_program(corpus.appointment().program) == []
        t_ok = time.perf_counter() - t0

        source, scope_line, free_line = _swapped_appointment()
        t0 = time.perf_counter()
        vs = check_program(parse_program(source))
        t_swap = time.perf_counter() - t0
        assert [v.kind for v in vs] == ["sequence"]
        rendered = vs[0].render("appointment.aioc")
        assert f"appointment.aioc:{scope_line}:" in rendered
        assert "'alice'" in rendered and f"(line {free_line})" in rendered

        duplicated = parse_program(
            "preamble { starter: cinema }\n"
            "aioc {\n"
            "  { notify: cinema( 1 ) -> bob( x )"
            " | notify: cinema( 2 ) -> bob( y ) }\n"
            "}\n")
        t0 = time.perf_counter()
        vs = check_program(duplicated)
        t_dup = time.perf_counter() - t0
        assert [v.kind for v in vs] == ["parallel"]
        assert "'notify'" in vs[0].render("x")

        assert max(t_ok, t_swap, t_dup) < 1.0
        note["detail"] = (f"checks {t_ok * 1000:.0f}/{t_swap * 1000:.0f}"
                          f"/{t_dup * 1000:.0f} ms")


def test_criterion_02_hello_world_adaptation(capsys):
    with verdict(capsys, "2: greeting adapts with language fact") as note:
        sc = corpus.scenario_by_name("hello-world")
        plain = simulate(sc.app, SimConfig())
        assert plain.ok
        assert plain.final_states["display"]["msg"] == "Hello World"

        adapted = simulate(sc.app, SimConfig(
            manager_factory=sc.manager_factory("italian")))
        assert adapted.ok
        assert adapted.final_states["display"]["msg"] == "Ciao Mondo"
        note["detail"] = "Hello World / Ciao Mondo"


def test_criterion_03_pipe_semantics_at_100(capsys):
    with verdict(capsys, "3: pipeline counts 100, boosted 150") as note:
        sc = corpus.scenario_by_name("pipe-100")
        t0 = time.perf_counter()
        plain = simulate(sc.app, SimConfig())
        assert plain.ok and plain.final_states["a"]["x"] == 100

        def boosted_manager():
            manager = AdaptationManager(Environment({}))
            server = AdaptationServer("s0")
            server.publish(sc.rules["boost-half"])  # iterations 1..50
            manager.register(server)
            return manager

        boosted = simulate(sc.app, SimConfig(manager_factory=boosted_manager))
        elapsed = time.perf_counter() - t0
        assert boosted.ok and boosted.final_states["a"]["x"] == 150
        assert len(boosted.applied_rules) == 50
        assert elapsed < 30
        note["detail"] = f"x=100/x=150 in {elapsed:.2f}s"


def test_criterion_04_fork_join_against_the_character_oracle(capsys):
    with verdict(capsys, "4: parallel shifts match per-character oracle") as note:
        sc = corpus.scenario_by_name("fork-join")
        plain = simulate(sc.app, SimConfig(services_factory=sc.services))
        expected_plain = "".join(oracle.shift_word(c, 1) for c in "abcde")
        assert plain.ok
        assert plain.final_states["b"]["result"] == expected_plain == "bcdef"

        adapted = simulate(sc.app, SimConfig(
            services_factory=sc.services,
            manager_factory=sc.manager_factory("double-front")))
        offsets = [2, 2, 1, 1, 1]
        expected_adapted = "".join(
            oracle.shift_word(c, k) for c, k in zip("abcde", offsets))
        assert adapted.ok
        assert adapted.final_states["b"]["result"] == expected_adapted == "cddef"
        note["detail"] = f"{expected_plain} / {expected_adapted}"


def _quiet_manager(sc, *labels):
    """Manager over an empty environment (scenario env NOT baked in)."""
    def build():
        manager = AdaptationManager(Environment({}))
        server = AdaptationServer("s0")
        for label in labels:
            server.publish(sc.rules[label])
        manager.register(server)
        return manager

    return build


def test_criterion_05_deadlock_sweep_across_the_corpus(capsys):
    with verdict(capsys, "5: 1000-seed sweeps, quiet and adapted") as note:
        t0 = time.perf_counter()
        runs = 0
        # (name, mid-run rule publication, mid-run environment change)
        cases = [
            ("hello-world", ("italian", 6), ("language", "it", 3)),
            ("appointment", ("free-week", 30), ("free_week", False, 20)),
            ("appointment-retry", ("free-week", 40), ("free_week", False, 20)),
            ("pipe-5", ("boost-2", 60), ("stage", 1, 50)),
            ("pipe-100", ("boost-half", 1000), ("stage", 1, 500)),
            ("fork-join", ("double-front", 60), ("weather", "sun", 30)),
            ("fork-join-100", ("double-front", 300), ("weather", "sun", 100)),
        ]
        for name, (label, pub_at), (key, value, env_at) in cases:
            sc = corpus.scenario_by_name(name)
            quiet = SimConfig(inputs=dict(sc.inputs),
                              services_factory=sc.services)
            summary = explore_deadlocks(sc.app, seeds=1000, base=quiet)
            assert summary.clean, (name, "quiet", summary.outcomes,
                                   summary.counterexample)
            timeline = [
                TimelineEvent(at_step=pub_at, kind="publish", server="s0",
                              source=sc.rules[label]),
                TimelineEvent(at_step=env_at, kind="env", key=key, value=value),
            ]
            adapted = SimConfig(inputs=dict(sc.inputs),
                                services_factory=sc.services,
                                manager_factory=_quiet_manager(sc),
                                timeline=timeline)
            summary = explore_deadlocks(sc.app, seeds=1000, base=adapted)
            assert summary.clean, (name, "adapted", summary.outcomes,
                                   summary.counterexample)
            runs += 2000
        elapsed = time.perf_counter() - t0
        assert elapsed < 600
        note["detail"] = f"{runs} runs, 0 deadlocks, 0 leaks, {elapsed:.0f}s"


def test_criterion_06_random_connected_programs_never_deadlock(capsys):
    with verdict(capsys, "6: 1000 random programs explored") as note:
        t0 = time.perf_counter()
        worst = 0
        for seed in range(1000):
            program = progen.random_connected_program(seed)
            report = explore(program, reduce=True)
            assert report.complete and report.deadlock_free, \
                (seed, report.outcomes, report.deadlocks[:1])
            assert report.deterministic, (seed, len(report.finals))
            worst = max(worst, report.paths)
        # spot-check without the schedule reduction: same verdicts
        for seed in range(0, 1000, 25):
            program = progen.random_connected_program(seed)
            report = explore(program, max_paths=3000)
            assert not report.deadlocks and report.deterministic, seed
            assert set(report.outcomes) <= {TERMINATED}, (seed, report.outcomes)
        # negative control: a non-connected program must misbehave
        negative = explore(corpus.duplicated_notify().app, max_paths=20_000)
        out_of_order = len(negative.finals) > 1 \
            or any(k != TERMINATED for k in negative.outcomes)
        assert negative.deadlocks or out_of_order
        elapsed = time.perf_counter() - t0
        note["detail"] = (f"worst {worst} schedules, negative control "
                          f"{dict(negative.outcomes)}, {elapsed:.0f}s")


def test_criterion_07_first_match_selection(capsys):
    with verdict(capsys, "7: registration and publication order decide") as note:
        sc = corpus.scenario_by_name("hello-world")

        def two_servers():
            manager = AdaptationManager(Environment({"language": "it"}))
            first = AdaptationServer("sA")
            first.publish(sc.rules["italian"])
            second = AdaptationServer("sB")
            second.publish(sc.rules["italian-alt"])
            manager.register(first)
            manager.register(second)
            return manager

        for seed in range(100):
            r = simulate(sc.app, SimConfig(seed=seed,
                                           manager_factory=two_servers))
            assert r.final_states["display"]["msg"] == "Ciao Mondo", seed
            assert r.applied_rules == [("", "sA/r1")], seed

        def one_server():
            manager = AdaptationManager(Environment({"language": "it"}))
            server = AdaptationServer("s0")
            server.publish(sc.rules["italian-alt"])  # published first, wins
            server.publish(sc.rules["italian"])
            manager.register(server)
            return manager

        for seed in range(100):
            r = simulate(sc.app, SimConfig(seed=seed,
                                           manager_factory=one_server))
            assert r.final_states["display"]["msg"] == "Salve Mondo", seed
            assert r.applied_rules == [("", "s0/r1")], seed
        note["detail"] = "100/100 across servers, 100/100 within one"


def test_criterion_08_checker_scales_polynomially(capsys):
    with verdict(capsys, "8: check time fits a cubic over n=100..1000") as note:
        sizes = list(range(100, 1001, 100))
        timings = []
        for n in sizes:
            program = corpus.pipe_unrolled(n).program
            best = min(_timed(check_program, program) for _ in range(3))
            timings.append(best)
        coeffs = np.polyfit(sizes, timings, 3)
        predicted = np.polyval(coeffs, sizes)
        residual = np.sum((np.array(timings) - predicted) ** 2)
        total = np.sum((np.array(timings) - np.mean(timings)) ** 2)
        r_squared = 1.0 - residual / total
        assert r_squared >= 0.99, (r_squared, timings)
        assert timings[-1] < 5.0
        note["detail"] = (f"R²={r_squared:.4f}, "
                          f"n=1000 in {timings[-1] * 1000:.0f} ms")


def _timed(fn, *args):
    t0 = time.perf_counter()
    fn(*args)
    return time.perf_counter() - t0


def test_criterion_09_overhead_counts_scale_with_scopes(capsys):
    with verdict(capsys, "9: per-scope traffic constant, totals linear") as note:
        scope_kinds = ("directive", "done", "middleware")
        counts = {}
        for n in (10, 20):
            sc = corpus.scenario_by_name(f"pipe-{n}")
            counts[n] = count_overhead(
                sc.app, SimConfig(manager_factory=sc.manager_factory()))
            assert counts[n]["directive"] == counts[n]["done"] == n
            assert counts[n]["middleware"] == 2 * n
        for kind in scope_kinds:
            assert counts[20][kind] == 2 * counts[10][kind]
            assert counts[10][kind] / 10 == counts[20][kind] / 20

        ping = corpus.scenario_by_name("ping-6")
        scopeless = count_overhead(
            ping.app, SimConfig(manager_factory=ping.manager_factory()))
        assert all(kind not in scopeless for kind in scope_kinds)
        note["detail"] = (f"pipe-10 {[counts[10][k] for k in scope_kinds]} vs "
                          f"pipe-20 {[counts[20][k] for k in scope_kinds]}, "
                          f"ping-6 none")


def test_criterion_10_trace_hashes_are_reproducible(capsys):
    with verdict(capsys, "10: 10 runs, one trace hash per scenario") as note:
        checked = 0
        for sc in corpus.standard_scenarios():
            variants = [None] + sorted(sc.adapted)
            for variant in variants:
                hashes = set()
                for _ in range(10):
                    if variant is None:
                        cfg = SimConfig(inputs=dict(sc.inputs),
                                        services_factory=sc.services)
                    else:
                        recipe = sc.adapted[variant]
                        inputs = dict(recipe.inputs) \
                            if recipe.inputs is not None else dict(sc.inputs)
                        cfg = SimConfig(
                            inputs=inputs, services_factory=sc.services,
                            manager_factory=sc.manager_factory(*recipe.labels))
                    report = simulate(sc.app, cfg)
                    assert report.ok, (sc.name, variant, report.error)
                    hashes.add(report.trace_hash)
                assert len(hashes) == 1, (sc.name, variant)
                checked += 1
        note["detail"] = f"{checked} scenario configurations"
