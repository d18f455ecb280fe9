"""Activity detection and keystroke/mouse side channels for encrypted RDP traffic."""

__version__ = "0.1.0"
