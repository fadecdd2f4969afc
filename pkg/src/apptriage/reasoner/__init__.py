from .backends import (EmptyResponseError, ExhaustedRetriesError, MockReasoner, ReasonerBackend, ReasonerError,
                       RemoteReasoner, invoke)
from .prompts import (DEFAULT_TOKEN_BUDGET, PromptBundle, PromptError, TokenBudgetExceeded, build_prompts,
                      estimate_tokens, parse_tables, render_table, view_from_text)
from .report import (Activity, MissingSectionError, MissingVerdictTagError, ReportParseError, TriageReport,
                     UnmatchedCriterionError, Verdict, parse_report, parse_verdict_lines, render_report)
from .templates import SYSTEM_PROMPT, USER_TEMPLATE

__all__ = [
    "Activity", "DEFAULT_TOKEN_BUDGET", "EmptyResponseError", "ExhaustedRetriesError", "MissingSectionError",
    "MissingVerdictTagError", "MockReasoner", "PromptBundle", "PromptError", "ReasonerBackend", "ReasonerError",
    "RemoteReasoner", "ReportParseError", "SYSTEM_PROMPT", "TokenBudgetExceeded", "TriageReport", "USER_TEMPLATE",
    "UnmatchedCriterionError", "Verdict", "build_prompts", "estimate_tokens", "invoke", "parse_report",
    "parse_tables", "parse_verdict_lines", "render_report", "render_table", "view_from_text",
]
