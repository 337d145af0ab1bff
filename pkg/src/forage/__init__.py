"""Desk-scale information-foraging laboratory.

Synthetic multi-hop tasks with golden evidence, a BM25 retrieval
environment, the outcome / information-gain / efficiency reward and
PPO-with-GAE training of a log-linear search policy.
"""

__version__ = "0.1.0"
