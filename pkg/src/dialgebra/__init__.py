"""Executable kernel for dependent inductive/coinductive data types over
set families, with brute-force and bisimulation oracles at desk scale."""

__version__ = "0.1.0"
