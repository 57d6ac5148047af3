"""Quantum fuzzy inference laboratory: cart-pole plant, GA-designed fuzzy PID
knowledge bases, a simulated QFI fusion block, remote optimization, and
quantum-thermodynamic work bounds."""

__version__ = "0.1.0"
