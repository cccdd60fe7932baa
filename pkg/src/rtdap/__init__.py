"""Desk-scale real-time analytics platform for industrial process data:
stream ingestion, partitioned message log, hour-bucketed time-series
storage with multi-resolution aggregation, windowed PLS analytics, a
query API and benchmark harness."""

__version__ = "0.1.0"
