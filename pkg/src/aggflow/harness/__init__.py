"""Workloads, equivalence runs, benchmarks and the command-line front end."""
