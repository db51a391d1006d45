"""Static validation: connectedness of behaviours, rule checks, program hygiene.

Connectedness is what makes naive projection safe to run without a central
orchestrator, and it is checked in polynomial time on the source tree:

* sequence condition — for every ``Seq(a, b)``, the initiator of each initial
  event of ``b`` must occur in some final event of ``a``.  Whoever starts the
  continuation must have taken part in how the predecessor ended, otherwise
  the projected code can act on state it was never ordered after.
* parallel condition — interaction keys ``(op, sender, receiver)`` collected
  recursively from the two branches of every ``Par`` must be disjoint, so
  concurrent messages can never be confused at a receiver.  Sequential reuse
  of an operation is fine; auxiliary operations never participate (they are
  generated unique per node).

If/While need no dedicated clause: projection coordinates branch decisions
with auxiliary broadcasts.  A scope's final events are those of its body
(the coordinator alone if the body is empty): the closing barrier orders the
coordinator after every participant, and each participant after its own part.

To keep reports readable the checker suppresses cascading sequence
violations: once a node is implicated in one, later pairs involving it are
assumed to be fallout from the same break.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .ast import (
    Assign,
    Behaviour,
    Binary,
    Call,
    Expr,
    If,
    Interaction,
    Lit,
    NodeId,
    Par,
    Program,
    Rule,
    Scope,
    Seq,
    Skip,
    Unary,
    Var,
    While,
    roles_of,
)

#: Protocol names that parse and are retained on includes.  Only the JSON
#: line protocol is actually spoken; the others appear in historical corpus
#: programs and are tolerated, anything else draws a warning.
KNOWN_PROTOCOLS = ("json", "http", "soap", "sodep")

BUILTIN_FUNCTIONS = ("getInput",)


@dataclass(frozen=True)
class EventSignature:
    """Roles taking part in an initial/final event; the initiator comes first.

    Size is 1 (assignment, guard evaluation, scope start) or 2 (interaction,
    sender first).
    """

    roles: tuple[str, ...]
    node: NodeId = field(default=NodeId(), compare=False)
    line: int = field(default=0, compare=False)
    col: int = field(default=0, compare=False)

    @property
    def initiator(self) -> str:
        return self.roles[0]


@dataclass(frozen=True)
class Violation:
    kind: str  # "sequence" | "parallel" | "role" | "name"
    message: str
    nodes: tuple[NodeId, ...] = ()
    line: int = 0
    col: int = 0
    severity: str = "error"

    def render(self, filename: str = "<input>") -> str:
        return f"{filename}:{self.line}:{self.col}: {self.kind}: {self.message}"


def _sig(b: Behaviour, *roles: str) -> EventSignature:
    return EventSignature(tuple(roles), node=b.nid, line=b.line, col=b.col)


def trans_initial(b: Behaviour) -> frozenset[EventSignature]:
    """Signatures of the events that can begin ``b``."""
    if isinstance(b, Skip):
        return frozenset()
    if isinstance(b, Assign):
        return frozenset({_sig(b, b.role)})
    if isinstance(b, Interaction):
        return frozenset({_sig(b, b.sender, b.receiver)})
    if isinstance(b, Seq):
        node: Behaviour = b
        while isinstance(node, Seq):  # spine-iterative: Seq nests deep
            first = trans_initial(node.first)
            if first:
                return first
            node = node.second
        return trans_initial(node)
    if isinstance(b, Par):
        return trans_initial(b.left) | trans_initial(b.right)
    if isinstance(b, (If, While)):
        return frozenset({_sig(b, b.evaluator)})
    if isinstance(b, Scope):
        return frozenset({_sig(b, b.coordinator)})
    raise TypeError(f"not a behaviour node: {b!r}")


def trans_final(b: Behaviour) -> frozenset[EventSignature]:
    """Signatures of the events that can conclude ``b``."""
    if isinstance(b, Skip):
        return frozenset()
    if isinstance(b, (Assign, Interaction)):
        return trans_initial(b)
    if isinstance(b, Seq):
        spine = []
        node: Behaviour = b
        while isinstance(node, Seq):  # spine-iterative: Seq nests deep
            spine.append(node)
            node = node.second
        out = trans_final(node)
        while not out and spine:
            out = trans_final(spine.pop().first)
        return out
    if isinstance(b, Par):
        return trans_final(b.left) | trans_final(b.right)
    if isinstance(b, If):
        out = set()
        for branch in (b.then_branch, b.else_branch):
            fin = trans_final(branch)
            # an empty branch concludes with the guard evaluation itself
            out |= fin if fin else {_sig(b, b.evaluator)}
        return frozenset(out)
    if isinstance(b, While):
        return frozenset({_sig(b, b.evaluator)})
    if isinstance(b, Scope):
        fin = trans_final(b.body)
        return fin if fin else frozenset({_sig(b, b.coordinator)})
    raise TypeError(f"not a behaviour node: {b!r}")


def _interaction_keys(b: Behaviour, out: dict[tuple[str, str, str], Interaction]) -> None:
    """First occurrence of each (op, sender, receiver) key, scopes included."""
    stack = [b]
    while stack:
        x = stack.pop()
        if isinstance(x, Interaction):
            out.setdefault((x.op, x.sender, x.receiver), x)
        elif isinstance(x, Seq):
            stack += (x.second, x.first)
        elif isinstance(x, Par):
            stack += (x.right, x.left)
        elif isinstance(x, If):
            stack += (x.else_branch, x.then_branch)
        elif isinstance(x, (While, Scope)):
            stack.append(x.body)


def check_connectedness(b: Behaviour) -> list[Violation]:
    """All sequence/parallel violations in ``b``, in source order."""
    violations: list[Violation] = []
    implicated: set[tuple[int, ...]] = set()

    stack = [b]  # pre-order, children pushed in reverse for source order
    while stack:
        node = stack.pop()
        if isinstance(node, Seq):
            _check_seq(node, violations, implicated)
            stack += (node.second, node.first)
        elif isinstance(node, Par):
            _check_par(node, violations)
            stack += (node.right, node.left)
        elif isinstance(node, If):
            stack += (node.else_branch, node.then_branch)
        elif isinstance(node, (While, Scope)):
            stack.append(node.body)
    return violations


def _implicated(path: tuple[int, ...], implicated: set[tuple[int, ...]]) -> bool:
    # an event inside an already-flagged statement is the same break
    return any(path[:k] in implicated for k in range(len(path) + 1))


def _check_seq(node: Seq, violations: list[Violation],
               implicated: set[tuple[int, ...]]) -> None:
    finals = sorted(trans_final(node.first), key=lambda s: (s.node.path, s.roles))
    if not finals:
        return
    seen = set()
    for r in finals:
        seen.update(r.roles)
    for init in sorted(trans_initial(node.second), key=lambda s: (s.node.path, s.roles)):
        if init.initiator in seen:
            continue
        left = finals[0]
        if _implicated(left.node.path, implicated) \
                or _implicated(init.node.path, implicated):
            continue
        implicated.add(left.node.path)
        implicated.add(init.node.path)
        violations.append(
            Violation(
                "sequence",
                f"role '{init.initiator}' starts this statement but takes no part"
                f" in how the preceding one ends (line {left.line})",
                nodes=(left.node, init.node),
                line=init.line,
                col=init.col,
            )
        )


def _check_par(node: Par, violations: list[Violation]) -> None:
    left_keys: dict[tuple[str, str, str], Interaction] = {}
    right_keys: dict[tuple[str, str, str], Interaction] = {}
    _interaction_keys(node.left, left_keys)
    _interaction_keys(node.right, right_keys)
    for key in sorted(left_keys.keys() & right_keys.keys()):
        a, b = left_keys[key], right_keys[key]
        op, sender, receiver = key
        violations.append(
            Violation(
                "parallel",
                f"operation '{op}' from '{sender}' to '{receiver}' is used in both"
                f" parallel branches (lines {a.line} and {b.line})",
                nodes=(a.nid, b.nid),
                line=b.line,
                col=b.col,
            )
        )


# =========================================================================
# Expression hygiene helpers
# =========================================================================


def _walk_expr(e: Expr):
    yield e
    if isinstance(e, Unary):
        yield from _walk_expr(e.operand)
    elif isinstance(e, Binary):
        yield from _walk_expr(e.left)
        yield from _walk_expr(e.right)
    elif isinstance(e, Call):
        for a in e.args:
            yield from _walk_expr(a)


def _walk_behaviour(b: Behaviour):
    stack = [b]
    while stack:
        x = stack.pop()
        yield x
        if isinstance(x, Seq):
            stack += (x.second, x.first)
        elif isinstance(x, Par):
            stack += (x.right, x.left)
        elif isinstance(x, If):
            stack += (x.else_branch, x.then_branch)
        elif isinstance(x, (While, Scope)):
            stack.append(x.body)


def _behaviour_exprs(b: Behaviour):
    for node in _walk_behaviour(b):
        if isinstance(node, Assign):
            yield node, node.expr
        elif isinstance(node, Interaction):
            yield node, node.expr
        elif isinstance(node, (If, While)):
            yield node, node.guard


def _check_calls(body: Behaviour, declared: set[str]) -> list[Violation]:
    out = []
    for node, expr in _behaviour_exprs(body):
        for e in _walk_expr(expr):
            if isinstance(e, Call) and e.function not in declared:
                out.append(
                    Violation(
                        "name",
                        f"function '{e.function}' is not declared by any include",
                        nodes=(node.nid,),
                        line=e.line,
                        col=e.col,
                    )
                )
    return out


# =========================================================================
# Rule and program checks
# =========================================================================


def check_rule(rule: Rule) -> list[Violation]:
    """Connectedness of the rule body plus name hygiene of the condition."""
    violations = check_connectedness(rule.body)
    for e in _walk_expr(rule.condition):
        if isinstance(e, Var) and "." in e.name:
            ns = e.name.split(".", 1)[0]
            if ns not in ("N", "E"):
                violations.append(
                    Violation(
                        "name",
                        f"unknown namespace '{ns}.' in rule condition (use N. or E.)",
                        line=e.line,
                        col=e.col,
                    )
                )
        elif isinstance(e, Call):
            violations.append(
                Violation(
                    "name",
                    f"rule conditions cannot call functions ('{e.function}')",
                    line=e.line,
                    col=e.col,
                )
            )
    declared = {f for inc in rule.includes for f in inc.functions}
    declared.update(BUILTIN_FUNCTIONS)
    violations.extend(_check_calls(rule.body, declared))
    return violations


def _assigned_vars(b: Behaviour) -> dict[str, set[str]]:
    """role -> variables the program binds at that role (assignments and
    interaction targets)."""
    out: dict[str, set[str]] = {}
    for node in _walk_behaviour(b):
        if isinstance(node, Assign):
            out.setdefault(node.role, set()).add(node.var)
        elif isinstance(node, Interaction):
            out.setdefault(node.receiver, set()).add(node.var)
    return out


def validate_program(p: Program) -> list[Violation]:
    """Name/role hygiene; guard-variable analysis reports warnings only."""
    violations: list[Violation] = []
    roles = roles_of(p.body)

    if p.preamble.starter not in roles and p.preamble.starter not in p.preamble.locations:
        violations.append(
            Violation(
                "role",
                f"starter role '{p.preamble.starter}' does not occur in the program",
            )
        )

    seen_fns: dict[str, Include] = {}
    for inc in p.includes:
        for fn in inc.functions:
            if fn in seen_fns:
                violations.append(
                    Violation(
                        "name",
                        f"function '{fn}' is declared by more than one include",
                        line=inc.line,
                        col=inc.col,
                    )
                )
            else:
                seen_fns[fn] = inc
        if inc.protocol and inc.protocol not in KNOWN_PROTOCOLS:
            violations.append(
                Violation(
                    "name",
                    f"unknown protocol '{inc.protocol}' (only the JSON line protocol"
                    " is spoken; the declaration is retained)",
                    line=inc.line,
                    col=inc.col,
                    severity="warning",
                )
            )

    declared = set(seen_fns) | set(BUILTIN_FUNCTIONS)
    violations.extend(_check_calls(p.body, declared))

    assigned = _assigned_vars(p.body)
    for node in _walk_behaviour(p.body):
        if isinstance(node, (If, While)):
            known = assigned.get(node.evaluator, set())
            for e in _walk_expr(node.guard):
                if isinstance(e, Var) and e.name not in known:
                    violations.append(
                        Violation(
                            "role",
                            f"guard reads '{e.name}' which is never assigned at"
                            f" role '{node.evaluator}'",
                            nodes=(node.nid,),
                            line=e.line,
                            col=e.col,
                            severity="warning",
                        )
                    )
    return violations


def check_program(p: Program) -> list[Violation]:
    """Full static gate: hygiene plus connectedness, in that order."""
    return validate_program(p) + check_connectedness(p.body)


def has_errors(violations: list[Violation]) -> bool:
    return any(v.severity == "error" for v in violations)
