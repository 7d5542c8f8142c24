"""Search backends: evolutionary, reinforcement-learning, and proposer-guided."""
