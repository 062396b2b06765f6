"""Multi-agent online source seeking with a discounted Kalman filter and D-UCB."""

__version__ = "0.1.0"
