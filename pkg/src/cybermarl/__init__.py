"""Two-sided (attacker/defender) reinforcement learning on a simulated capture-the-flag network."""

__version__ = "0.1.0"
