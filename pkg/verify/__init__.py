"""Naive-loop references and the finite-difference gradient suite."""
