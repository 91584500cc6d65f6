"""Preference-aware conversational memory: detect preference turns, fold
them into a gated recurrent memory vector, and read them back as soft
prompts and category probes.

Layout: numerics (linear algebra, losses, portable RNG), encoder (hashing
text encoder), heuristics (rule-based detector), classifier (trainable MLP
detector), memory (gated controller + BPTT), datagen (synthetic corpora),
evalharness (retention/detection scoring), pipeline/config (stage runners),
service (HTTP API), session/respond (chat), cli (entry point).
"""

__version__ = "0.1.0"
