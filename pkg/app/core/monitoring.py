"""
Prometheus metrics for simulation runs.
"""

from pathlib import Path

from prometheus_client import REGISTRY, Counter, Gauge, Histogram, write_to_textfile

# -----------------------------------
# Step metrics
# -----------------------------------
steps_total = Counter("edgecode_steps_total", "Simulated mini-batch steps", ["scheme"])

step_wall_seconds = Histogram(
    "edgecode_step_wall_seconds",
    "Simulated wall-clock time per step",
    ["scheme"],
    buckets=(1, 5, 10, 30, 60, 120, 300, 600, 1800, 3600, 7200),
)

straggler_drops_total = Counter(
    "edgecode_straggler_drops_total",
    "Client gradients discarded for missing the waiting time",
)

# -----------------------------------
# Allocation metrics
# -----------------------------------
allocation_solve_seconds = Histogram(
    "edgecode_allocation_solve_seconds", "Real time spent solving the waiting time"
)

# -----------------------------------
# Model quality
# -----------------------------------
test_accuracy = Gauge("edgecode_test_accuracy", "Latest test accuracy", ["scheme"])


def write_metrics(path: Path) -> None:
    """Export the default registry in Prometheus text format."""
    write_to_textfile(str(path), REGISTRY)
