"""Grammar coverage, operator precedence, and diagnostic shape."""

from __future__ import annotations

import pytest

from chorad.ast import (
    Binary,
    Call,
    If,
    Interaction,
    Lit,
    Par,
    Scope,
    Seq,
    Unary,
    Var,
    While,
)
from chorad.parser import (
    Diagnostic,
    ParseError,
    parse_behaviour,
    parse_expr,
    parse_program,
    parse_rules,
)
from chorad import corpus


def _err(text: str, parse=parse_program) -> Diagnostic:
    with pytest.raises(ParseError) as exc:
        parse(text)
    assert len(exc.value.diagnostics) == 1
    return exc.value.diagnostics[0]


# ---------------------------------------------------------------------
# Programs
# ---------------------------------------------------------------------


def test_minimal_program():
    prog = parse_program('preamble { starter: a } aioc { x@a = 1 }')
    assert prog.preamble.starter == "a"
    assert prog.includes == ()
    assert prog.body.var == "x"


def test_includes_and_locations():
    prog = parse_program(
        'include getTicket, getFreeDay from "socket://localhost:8001"\n'
        'preamble {\n'
        '  starter: bob\n'
        '  location@bob = "socket://localhost:7001"\n'
        '}\n'
        'aioc { x@bob = getTicket( "d" ) }'
    )
    inc = prog.includes[0]
    assert inc.functions == ("getTicket", "getFreeDay")
    assert inc.address == "socket://localhost:8001"
    assert prog.preamble.locations == {"bob": "socket://localhost:7001"}


def test_comments_are_ignored():
    prog = parse_program(
        '// leading note\n'
        'preamble { starter: a } // trailing\n'
        'aioc {\n'
        '  x@a = 1 // inline\n'
        '}\n'
    )
    assert prog.body.var == "x"


def test_missing_starter_is_an_error():
    d = _err('preamble { } aioc { x@a = 1 }')
    assert "starter" in d.message


def test_duplicate_starter_is_an_error():
    d = _err('preamble { starter: a starter: b } aioc { x@a = 1 }')
    assert "duplicate starter" in d.message


def test_trailing_garbage_is_an_error():
    d = _err('preamble { starter: a } aioc { x@a = 1 } extra')
    assert "unexpected input" in d.message


# ---------------------------------------------------------------------
# Statements
# ---------------------------------------------------------------------


def test_statement_forms():
    b = parse_behaviour(
        'x@a = 1;\n'
        'ping: a( x ) -> b( y );\n'
        'if ( y > 0 )@b { skip } else { skip };\n'
        'while ( x < 2 )@a { x@a = x + 1 };\n'
        '{ l@a = 1 | r@b = 2 };\n'
        'scope @a { x@a = 9 } prop { N.stage = "inc" }'
    )
    kinds = []
    node = b
    while isinstance(node, Seq):
        kinds.append(type(node.first).__name__)
        node = node.second
    kinds.append(type(node).__name__)
    assert kinds == ["Assign", "Interaction", "If", "While", "Par", "Scope"]


def test_par_chain_right_nests():
    b = parse_behaviour('{ x@a = 1 | y@b = 2 | z@c = 3 }')
    assert isinstance(b, Par)
    assert isinstance(b.right, Par)
    assert b.right.right.var == "z"


def test_scope_props_collect_literals():
    b = parse_behaviour(
        'scope @u { x@u = 1 } prop { N.flavour = "greeting", N.k = 3 }')
    assert isinstance(b, Scope)
    assert b.props == {"flavour": "greeting", "k": 3}


def test_scope_prop_requires_namespace():
    d = _err('scope @u { x@u = 1 } prop { flavour = 1 }', parse_behaviour)
    assert "'N.' namespace" in d.message


def test_duplicate_scope_prop_rejected():
    d = _err('scope @u { x@u = 1 } prop { N.k = 1, N.k = 2 }', parse_behaviour)
    assert "duplicate property 'N.k'" in d.message


def test_self_interaction_rejected():
    d = _err('op: a( 1 ) -> a( x )', parse_behaviour)
    assert "identical sender and receiver" in d.message


def test_reserved_operation_prefix_rejected():
    d = _err('_aux_guard_1: a( 1 ) -> b( x )', parse_behaviour)
    assert "reserved" in d.message


def test_diagnostic_render_format():
    d = _err('preamble { starter: a } aioc { op: a( 1 ) -> a( x ) }')
    rendered = d.render("prog.aioc")
    assert rendered.startswith(f"prog.aioc:{d.line}:{d.col}: ")
    assert ": syntax: " in rendered


# ---------------------------------------------------------------------
# Expressions
# ---------------------------------------------------------------------


def test_precedence_ladder():
    e = parse_expr('1 + 2 * 3')
    assert e == Binary("+", Lit(1), Binary("*", Lit(2), Lit(3)))
    e = parse_expr('a or b and c')
    assert e == Binary("or", Var("a"), Binary("and", Var("b"), Var("c")))
    e = parse_expr('!done and x < 2')
    assert e == Binary("and", Unary("!", Var("done")),
                       Binary("<", Var("x"), Lit(2)))


def test_left_associativity_of_additive():
    assert parse_expr('a - b - c') == Binary("-", Binary("-", Var("a"),
                                                         Var("b")), Var("c"))


def test_string_escapes():
    e = parse_expr(r'"say \"hi\" \\ now"')
    assert e == Lit('say "hi" \\ now')


def test_call_expression():
    e = parse_expr('getTicket( day, 2 )')
    assert e == Call("getTicket", (Var("day"), Lit(2)))
    assert parse_expr('now()') == Call("now", ())


def test_booleans_and_comparison():
    assert parse_expr('true == false') == Binary("==", Lit(True), Lit(False))


def test_comparisons_do_not_chain():
    d = _err('1 < 2 < 3', parse_expr)
    assert "unexpected input" in d.message


# ---------------------------------------------------------------------
# Rules
# ---------------------------------------------------------------------


def test_parse_rules_with_condition_and_include():
    rules = parse_rules(
        'rule {\n'
        '  include shiftChar from "socket://localhost:8002"\n'
        '  on { N.index == 0 and E.mode == "fast" }\n'
        '  do { r0@a = shiftChar( c0, 2 ) }\n'
        '}\n'
        'rule {\n'
        '  on { true }\n'
        '  do { skip }\n'
        '}\n'
    )
    assert len(rules) == 2
    first = rules[0]
    assert first.includes[0].functions == ("shiftChar",)
    assert first.condition == Binary(
        "and",
        Binary("==", Var("N.index"), Lit(0)),
        Binary("==", Var("E.mode"), Lit("fast")),
    )
    assert first.body.var == "r0"


def test_rule_condition_namespaces_only_in_rules():
    # N./E. names are rule-condition vocabulary, not program vocabulary.
    d = _err('x@a = N.index', parse_behaviour)
    assert d.severity == "error"


# ---------------------------------------------------------------------
# Corpus
# ---------------------------------------------------------------------


def test_whole_corpus_parses():
    for sc in corpus.standard_scenarios():
        prog = parse_program(sc.source)
        assert prog.preamble.starter
        for label, text in sc.rules.items():
            assert parse_rules(text), (sc.name, label)


def test_parse_error_str_mentions_position():
    with pytest.raises(ParseError) as exc:
        parse_program('preamble { starter: a } aioc { x@ }')
    assert "<input>:" in str(exc.value)
