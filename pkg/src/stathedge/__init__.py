"""Static quadratic hedging of European claims with a strip of vanilla options."""
__version__ = "0.1.0"
