"""Multi-objective model checking of Markov automata."""

__version__ = "0.1.0"
