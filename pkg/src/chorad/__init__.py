"""chorad: write a distributed program once, run every role of it, and
swap parts out while it runs.

Pipeline: :func:`parse_program` -> :func:`check_program` ->
:func:`project` -> :func:`simulate` (deterministic, in-process) or
:func:`run_all` / :func:`run_role` (threads / TCP).  Adaptation rules are
published to an :class:`AdaptationServer`, found through an
:class:`AdaptationManager`, and spliced in at scope boundaries.
"""

from .adapt import (
    AdaptationManager,
    AdaptationServer,
    Environment,
    evaluate_condition,
)
from .check import Violation, check_program, check_rule, has_errors
from .parser import (
    Diagnostic,
    ParseError,
    parse_behaviour,
    parse_expr,
    parse_program,
    parse_rules,
)
from .project import ProjectedApp, project, project_rule_body
from .runtime import Message, RoleError, RoleExecutor, eval_expr, render
from .services import FunctionTable, ServiceError
from .sim import (
    ExplorationReport,
    SimConfig,
    SimReport,
    TimelineEvent,
    explore,
    simulate,
)
from .live import (
    LiveReport,
    run_all,
    run_role,
    serve_functions,
    serve_manager,
    serve_rule_server,
)

__version__ = "0.1.0"

__all__ = [
    "AdaptationManager",
    "AdaptationServer",
    "Diagnostic",
    "Environment",
    "ExplorationReport",
    "FunctionTable",
    "LiveReport",
    "Message",
    "ParseError",
    "ProjectedApp",
    "RoleError",
    "RoleExecutor",
    "ServiceError",
    "SimConfig",
    "SimReport",
    "TimelineEvent",
    "Violation",
    "check_program",
    "check_rule",
    "eval_expr",
    "evaluate_condition",
    "explore",
    "has_errors",
    "parse_behaviour",
    "parse_expr",
    "parse_program",
    "parse_rules",
    "project",
    "project_rule_body",
    "render",
    "run_all",
    "run_role",
    "serve_functions",
    "serve_manager",
    "serve_rule_server",
    "simulate",
]
