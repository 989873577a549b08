"""HTTP service wrapping the scheduler, simulator and benchmarks."""
