"""Microcoded coherence engine: instruction set, assembler, and pipeline."""
