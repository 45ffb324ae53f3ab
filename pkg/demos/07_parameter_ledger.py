"""Exact bookkeeping of the parameter inequalities."""

import dataclasses
from fractions import Fraction

from eulalpha import ledger

p = ledger.suggest_parameters(601, Fraction(1, 2), 3)
print(ledger.format_parameter_text(p))

rep = ledger.check_inequalities(p, 3)
print(rep.text())

# too much regularity, or a single decomposition level, breaks the chain
print("beta = 2 fails:", ledger.check_inequalities(p.with_beta(2), 3).failures())
print("N_dec = 1 fails:", ledger.check_inequalities(dataclasses.replace(p, N_dec=1), 3).failures())

# scales at step q as exponents of a, in units of b^q
for k, v in ledger.derive_scales(p, 0).items():
    print(f"{k:>12}: {v}")
