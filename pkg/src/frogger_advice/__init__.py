"""
Frogger Advice Workbench

Language-guided exploration for tabular Q-learning agents in a Frogger gridworld:
synthetic trainers describe demonstrated actions, a sequence-to-sequence model learns
to reconstruct (local view, action) from those utterances, and its scores shape the
agent's Boltzmann exploration.
"""

__version__ = "0.1.0"
