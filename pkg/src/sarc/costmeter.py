"""Cost-measure (CM) accounting.

One CM unit is N forward propagations, i.e. one full objective evaluation.
Derivative work is charged in fractions of N, so a gradient on a sample of
size m costs m/N and r Hessian-vector products on a sample of size m cost
2*m*r/N (each product is a finite-difference pair of subsampled gradients).
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

BREAKDOWN_COLUMNS = (
    "k",
    "outcome",
    "charge_function",
    "charge_gradient",
    "charge_hessian",
    "charge_bb_init",
    "cm_cumulative",
)


@dataclass
class Charge:
    k: int
    kind: str  # "function" | "gradient" | "hessian" | "bb_init"
    amount: float
    sample_size: int = 0
    r: int = 0


@dataclass
class CostLedger:
    N: int
    cm: float = 0.0
    k: int = -1  # -1 collects Step-0 work (f(x0), calibration)
    charges: list[Charge] = field(default_factory=list)
    outcomes: dict[int, str] = field(default_factory=dict)

    def __post_init__(self):
        if self.N < 1:
            raise ValueError(f"N must be >= 1, got {self.N}")

    def _add(self, kind, amount, sample_size=0, r=0):
        if amount < 0:
            raise ValueError(f"negative charge {amount} for {kind}")
        self.cm += amount
        self.charges.append(Charge(self.k, kind, amount, sample_size, r))

    def set_iteration(self, k: int) -> None:
        self.k = k

    def mark_outcome(self, k: int, outcome: str) -> None:
        self.outcomes[k] = outcome

    def charge_function_eval(self) -> None:
        self._add("function", 1.0)

    def charge_gradient(self, sample_size: int) -> None:
        if not 0 <= sample_size <= self.N:
            raise ValueError(f"sample size {sample_size} outside [0, {self.N}]")
        self._add("gradient", sample_size / self.N, sample_size=sample_size)

    def charge_hessian_products(self, sample_size: int, r: int) -> None:
        if r < 0:
            raise ValueError(f"r must be >= 0, got {r}")
        if not 0 <= sample_size <= self.N:
            raise ValueError(f"sample size {sample_size} outside [0, {self.N}]")
        self._add("hessian", 2.0 * sample_size * r / self.N, sample_size=sample_size, r=r)

    def charge_bb_init(self, d2_minus_overlap: int) -> None:
        if not 0 <= d2_minus_overlap <= self.N:
            raise ValueError(f"overlap deficit {d2_minus_overlap} outside [0, {self.N}]")
        self._add("bb_init", d2_minus_overlap / self.N, sample_size=d2_minus_overlap)

    def iteration_charges(self, k: int) -> dict[str, float]:
        """Sum of charges by kind for iteration ``k``."""
        out = {"function": 0.0, "gradient": 0.0, "hessian": 0.0, "bb_init": 0.0}
        for c in self.charges:
            if c.k == k:
                out[c.kind] += c.amount
        return out

    def derivative_units(self, k: int) -> tuple[int, int]:
        """Integer numerator of the derivative charge at ``k`` and N.

        Returns ``(sum |D1| + 2|D2| r + deficit, N)`` so callers can compare
        against the per-iteration cost formulas without rounding.
        """
        total = 0
        for c in self.charges:
            if c.k != k:
                continue
            if c.kind in ("gradient", "bb_init"):
                total += c.sample_size
            elif c.kind == "hessian":
                total += 2 * c.sample_size * c.r
        return total, self.N

    def breakdown_rows(self) -> list[dict]:
        rows = []
        cum = 0.0
        for k in sorted({c.k for c in self.charges}):
            per = self.iteration_charges(k)
            # summed in charge order so the cumulative column matches self.cm exactly
            for c in self.charges:
                if c.k == k:
                    cum += c.amount
            rows.append(
                {
                    "k": k,
                    "outcome": self.outcomes.get(k, ""),
                    "charge_function": per["function"],
                    "charge_gradient": per["gradient"],
                    "charge_hessian": per["hessian"],
                    "charge_bb_init": per["bb_init"],
                    "cm_cumulative": cum,
                }
            )
        return rows

    def export_breakdown(self, path: str | Path) -> Path:
        path = Path(path)
        try:
            with path.open("w", newline="", encoding="utf-8") as fh:
                w = csv.DictWriter(fh, fieldnames=BREAKDOWN_COLUMNS, lineterminator="\n")
                w.writeheader()
                for row in self.breakdown_rows():
                    w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in row.items()})
        except OSError as e:
            raise OSError(f"cannot write cost breakdown to {path}: {e}") from e
        return path


def read_breakdown(path: str | Path) -> list[dict]:
    with Path(path).open(encoding="utf-8") as fh:
        rows = []
        for row in csv.DictReader(fh):
            rows.append(
                {
                    "k": int(row["k"]),
                    "outcome": row["outcome"],
                    **{c: float(row[c]) for c in BREAKDOWN_COLUMNS[2:]},
                }
            )
        return rows
