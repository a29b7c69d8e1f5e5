"""
backend/
--------
Contracts (schemas), configuration, errors, caching, orchestration and CLI.
"""
