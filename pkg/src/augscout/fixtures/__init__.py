"""Bundled reference tables and curve sets (JSON, schema augscout/1)."""
