"""Filter design and estimation tools for superresolving two closely spaced tones."""
__version__ = "0.1.0"
