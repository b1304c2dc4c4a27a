"""Scenario-driven simulation of the phased rollout."""

from .engine import PHASE_CHECKS, PHASE_ORDER, PhaseOrderViolation, Simulation, run
from .eventlog import EventLog, LogCorrupted, LogEntry
from .report import PeriodOpen, QuarterlyReport, ReportBuilder, reports_from_log
from .scenario import (
    PHASES,
    ParseError,
    Scenario,
    ScenarioError,
    SchemaViolation,
    build_scenario,
    load_scenario,
    parse_scenario,
    shipped_scenarios,
)

__all__ = [
    "PHASES",
    "PHASE_CHECKS",
    "PHASE_ORDER",
    "EventLog",
    "LogCorrupted",
    "LogEntry",
    "ParseError",
    "PeriodOpen",
    "PhaseOrderViolation",
    "QuarterlyReport",
    "ReportBuilder",
    "Scenario",
    "ScenarioError",
    "SchemaViolation",
    "Simulation",
    "build_scenario",
    "load_scenario",
    "parse_scenario",
    "reports_from_log",
    "run",
    "shipped_scenarios",
]
