"""Synthetic multi-channel ENG toolbox.

Simulates cuff-electrode recordings of peripheral nerve activity, preprocesses
them into labelled windows, trains small window classifiers written on top of
a from-scratch numpy network kernel, and budgets the round-trip latency of a
decode-and-stimulate loop.
"""

__version__ = "0.1.0"

REST_LABEL = -1
