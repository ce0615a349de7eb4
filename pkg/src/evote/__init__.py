"""E-voting stack: plaintext ballots, encrypted voter demographics.

Votes are recorded in clear on a hash-chained replicated ledger and
tallied without any homomorphic work; voter attributes travel as
additively homomorphic ciphertexts and are aggregated per candidate and
per factor, with only the final aggregate counts ever decrypted.
"""

__version__ = "0.1.0"
