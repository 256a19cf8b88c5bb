"""Desk-scale experiment analysis engine.

Pipeline: columnar tables -> declarative metrics -> sufficient-statistics
compression -> causal effect models -> scorecards, served over HTTP or the
`xp` command line.
"""

__version__ = "0.1.0"

SCHEMA_VERSION = 1
