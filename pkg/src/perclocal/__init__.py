"""Finite-window experiments on locality of the percolation threshold for
Cayley graphs of polynomial growth: nets, good-block renormalisation, exact
stochastic domination and coupled explorations along lifting maps."""

__version__ = "0.1.0"
