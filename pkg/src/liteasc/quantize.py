"""32 -> 16 bit float truncation and the non-zero parameter size budget.

The 16-bit word is the upper half of the IEEE single-precision pattern:
sign, the full 8-bit exponent and the top 7 mantissa bits. Converting back
appends 16 zero bits, so decoding never changes sign or exponent and
always rounds toward zero in magnitude.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction

import numpy as np

DEFAULT_LIMIT_KB = 128.0
BITS = {"f32": 32, "t16": 16}


def truncate_to_16(x) -> np.ndarray:
    """Upper 16 bits of each float32 pattern, as uint16."""
    bits = np.asarray(x, dtype=np.float32).view(np.uint32)
    return (bits >> np.uint32(16)).astype(np.uint16)


def widen_to_32(words) -> np.ndarray:
    bits = np.asarray(words, dtype=np.uint16).astype(np.uint32) << np.uint32(16)
    return bits.view(np.float32)


def truncate_values(x) -> np.ndarray:
    """Round-trip float32 values through the 16-bit word."""
    return widen_to_32(truncate_to_16(x))


def quantize_model(model):
    """Copy of ``model`` with every tensor truncated and tagged ``t16``."""
    from .params import ModelParams

    already = [name for name, tag in model.dtypes.items() if tag == "t16"]
    if already:
        raise ValueError(f"model already holds 16-bit tensors: {already[:3]}")
    tensors = {name: truncate_values(arr).reshape(np.shape(arr)) for name, arr in model.items()}
    return ModelParams(tensors, {name: "t16" for name in tensors})


@dataclass(frozen=True)
class BudgetReport:
    nonzero_count: int
    bits_per_param: int
    limit_kb: float = DEFAULT_LIMIT_KB

    @property
    def size_bits(self) -> int:
        return self.nonzero_count * self.bits_per_param

    @property
    def size_kb_exact(self) -> Fraction:
        return Fraction(self.size_bits, 8 * 1024)

    @property
    def size_kb(self) -> float:
        return float(self.size_kb_exact)

    @property
    def passed(self) -> bool:
        return self.size_kb_exact <= Fraction(self.limit_kb)

    def summary(self) -> str:
        return (f"nonzero={self.nonzero_count} bits={self.bits_per_param} "
                f"size_kb={self.size_kb:.1f} limit_kb={self.limit_kb:g} "
                f"pass={int(self.passed)}")

    def table(self) -> str:
        rows = [
            ("non-zero parameters", f"{self.nonzero_count}"),
            ("bits per parameter", f"{self.bits_per_param}"),
            ("model size (KB)", f"{self.size_kb:.1f}"),
            ("limit (KB)", f"{self.limit_kb:g}"),
            ("within budget", "yes" if self.passed else "NO"),
        ]
        width = max(len(k) for k, _ in rows)
        return "\n".join(f"{k:<{width}}  {v}" for k, v in rows)


def audit_budget(model, limit_kb: float = DEFAULT_LIMIT_KB) -> BudgetReport:
    """Count stored non-zeros and price them at the model's storage width."""
    from .params import count_parameters

    tags = set(model.dtypes.values())
    if len(tags) > 1:
        mixed = {tag: sorted(n for n, t in model.dtypes.items() if t == tag) for tag in tags}
        raise ValueError(f"model mixes storage widths: { {t: len(n) for t, n in mixed.items()} }")
    bits = BITS[tags.pop()] if tags else 32
    return BudgetReport(count_parameters(model), bits, limit_kb)
