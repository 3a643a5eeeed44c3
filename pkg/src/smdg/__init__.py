"""DG solvers for stochastic Maxwell equations with multiplicative noise."""
