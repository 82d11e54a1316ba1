"""Sliced recurrent network engine.

A self-contained GRU-based recurrent network that slices long sequences
into short subsequences, runs the recurrences on each slice concurrently,
and stacks the slice outputs through a small hierarchy of extra layers.
Includes a plain sequential RNN baseline, exact hand-derived gradients,
a linear-cell equivalence checker, a text-classification pipeline, and a
benchmark harness for the analytic speed model.
"""

__version__ = "0.1.0"
