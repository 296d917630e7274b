"""morphcollect: collaborative collection of inflectional morphological data.

Linguists define paradigm structures, lexicons, and rewrite rules; speakers
submit and verify wordforms guided by suggestions from three sources (pattern
rules, a character-level neural inflector, and a pluggable LLM provider), with
consensus-based conflict resolution and UniMorph export.
"""

__version__ = "0.1.0"
