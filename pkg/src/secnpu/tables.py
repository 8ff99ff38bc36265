"""Catalogue of the dataflow pattern-table rows.

Each row names a layer kind, a reuse scheme, the loop order the trace
generator executes, and the write pattern as a triplet of alpha-products
``(eta, kappa, rho)``.  Rows whose partial sums are read back carry
``reads=True``; their read pattern is the write pattern with the final
kappa band removed.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Optional


class LayerKind(str, enum.Enum):
    CONVOLUTION = "conv"
    MATMUL = "matmul"
    PREPROC_STYLE1 = "style1"
    PREPROC_STYLE2 = "style2"
    PREPROC_STYLE3 = "style3"
    POOLING = "pool"


class Reuse(str, enum.Enum):
    INPUT = "input"
    OUTPUT = "output"
    WEIGHT = "weight"


# iterator symbol -> (dimension, per-element?)
ITERATORS = {
    "k_T": ("k", False), "k": ("k", True),
    "c_T": ("c", False), "c": ("c", True),
    "h_T": ("h", False), "h": ("h", True),
    "w_T": ("w", False), "w": ("w", True),
}


@dataclass(frozen=True)
class TableRow:
    row_id: str
    table: str
    kind: LayerKind
    reuse: Optional[Reuse]
    label: str
    style: str
    loop_order: tuple[str, ...]
    write: tuple[str, str, str]
    reads: bool = False
    printed_order: Optional[tuple[str, ...]] = None

    @property
    def printed(self) -> tuple[str, ...]:
        return self.printed_order or self.loop_order

    def pretty_order(self, printed: bool = True) -> str:
        return " ▷ ".join(self.printed if printed else self.loop_order)


def _o(s: str) -> tuple[str, ...]:
    return tuple(s.split())


_CONV = LayerKind.CONVOLUTION
_IR, _OR, _WR = Reuse.INPUT, Reuse.OUTPUT, Reuse.WEIGHT

ROWS: tuple[TableRow, ...] = (
    # convolution, input reuse
    TableRow("conv-ir-1", "conv", _CONV, _IR, "①", "Partial channel", _o("h_T w_T c k_T"), ("K", "C", "HW"), True),
    TableRow("conv-ir-2", "conv", _CONV, _IR, "②", "Partial-multi-channel", _o("h_T w_T c_T k_T"), ("K", "C", "HW"), True),
    TableRow("conv-ir-3", "conv", _CONV, _IR, "③", "Partial channel (width/height)", _o("c h_T w_T k_T"), ("K*HW", "C", "1"), True),
    TableRow("conv-ir-4", "conv", _CONV, _IR, "④", "Partial-multi-channel (width/height)", _o("c_T h_T w_T k_T"), ("K*HW", "C", "1"), True),
    TableRow("conv-ir-5", "conv", _CONV, _IR, "⑤", "Channel-wise", _o("c k_T"), ("K", "C", "1"), True),
    TableRow("conv-ir-5m", "conv", _CONV, _IR, "⑤", "Multi-channel-wise", _o("c_T k_T"), ("K", "C", "1"), True),
    TableRow("conv-ir-6", "conv", _CONV, _IR, "⑥", "Full-channel", _o("h_T w_T k_T"), ("K*HW", "1", "1")),
    # convolution, output reuse
    TableRow("conv-or-1", "conv", _CONV, _OR, "①", "Partial channel", _o("h_T w_T k_T c"), ("K*HW", "1", "1")),
    TableRow("conv-or-2", "conv", _CONV, _OR, "②", "Partial-multi-channel", _o("h_T w_T k_T c_T"), ("K*HW", "1", "1")),
    TableRow("conv-or-5", "conv", _CONV, _OR, "⑤", "Channel-wise", _o("k_T c"), ("K", "1", "1")),
    TableRow("conv-or-5m", "conv", _CONV, _OR, "⑤", "Multi-channel-wise", _o("k_T c_T"), ("K", "1", "1")),
    TableRow("conv-or-6", "conv", _CONV, _OR, "⑥", "Full-channel", _o("h_T w_T k_T"), ("K*HW", "1", "1")),
    # convolution, weight reuse
    TableRow("conv-wr-1", "weight", _CONV, _WR, "①", "Multi-channel wise", _o("c_T k_T"), ("K", "C", "1"), True),
    TableRow("conv-wr-2", "weight", _CONV, _WR, "②", "Channel-wise", _o("k_T c"), ("K", "1", "1")),
    TableRow("conv-wr-3", "weight", _CONV, _WR, "③", "Full-filter", _o("k_T"), ("K", "1", "1")),
    # matrix multiplication: A is H x C, B is C x W, output H x W
    TableRow("mm-1", "matmul", LayerKind.MATMUL, None, "①", "Fix P", _o("h_T c_T w_T"), ("W", "C", "H"), True),
    TableRow("mm-2", "matmul", LayerKind.MATMUL, None, "②", "Fix Q", _o("w_T c_T h_T"), ("H", "C", "W"), True,
             printed_order=_o("c_T w_T h_T")),
    TableRow("mm-3", "matmul", LayerKind.MATMUL, None, "③", "Fix R", _o("w_T h_T c_T"), ("HW", "1", "1")),
    # pre-processing style 1 / pooling (C = K)
    TableRow("s1-1", "style1", LayerKind.PREPROC_STYLE1, None, "①", "Channel-wise", _o("k"), ("K", "1", "1")),
    TableRow("s1-2", "style1", LayerKind.PREPROC_STYLE1, None, "②", "Multi-channel", _o("k_T"), ("K", "1", "1")),
    TableRow("s1-3", "style1", LayerKind.PREPROC_STYLE1, None, "③", "Partial channel", _o("h w k_T"), ("K", "1", "HW")),
    TableRow("s1-4", "style1", LayerKind.PREPROC_STYLE1, None, "④", "Partial-multi-channel", _o("h_T w_T k_T"), ("K", "1", "HW")),
    TableRow("s1-5", "style1", LayerKind.PREPROC_STYLE1, None, "⑤", "Full-channel", _o("h_T w_T"), ("HW", "1", "1")),
    # pre-processing style 2 (K = 1)
    TableRow("s2-1", "style2", LayerKind.PREPROC_STYLE2, None, "①", "Channel-wise", _o("c"), ("1", "1", "1")),
    TableRow("s2-2", "style2", LayerKind.PREPROC_STYLE2, None, "②", "Multi-channel", _o("c_T"), ("1", "1", "1")),
    TableRow("s2-3", "style2", LayerKind.PREPROC_STYLE2, None, "③", "Partial channel", _o("h_T w_T c"), ("HW", "1", "1")),
    TableRow("s2-4", "style2", LayerKind.PREPROC_STYLE2, None, "④", "Multi channel", _o("h_T w_T c_T"), ("HW", "1", "1")),
    TableRow("s2-5", "style2", LayerKind.PREPROC_STYLE2, None, "⑤", "Partial channel (width/height)", _o("c h_T w_T"), ("HW", "C", "1"), True),
    TableRow("s2-6", "style2", LayerKind.PREPROC_STYLE2, None, "⑥", "Multi channel (width/height)", _o("c_T h_T w_T"), ("HW", "C", "1"), True),
    TableRow("s2-7", "style2", LayerKind.PREPROC_STYLE2, None, "⑦", "Full-channel", _o("h_T w_T"), ("HW", "1", "1")),
    # pre-processing style 3
    TableRow("s3-or-1", "style3", LayerKind.PREPROC_STYLE3, _OR, "①", "Channel-wise", _o("k_T c"), ("K", "1", "1"),
             printed_order=_o("c k_T")),
    TableRow("s3-or-2", "style3", LayerKind.PREPROC_STYLE3, _OR, "②", "Multi-channel", _o("k_T c_T"), ("K", "1", "1"),
             printed_order=_o("c_T k_T")),
    TableRow("s3-or-3", "style3", LayerKind.PREPROC_STYLE3, _OR, "③", "Partial channel", _o("h_T w_T k_T c"), ("K", "1", "HW")),
    TableRow("s3-or-4", "style3", LayerKind.PREPROC_STYLE3, _OR, "④", "Multi channel", _o("h_T w_T k_T c_T"), ("K", "1", "HW")),
    TableRow("s3-or-7", "style3", LayerKind.PREPROC_STYLE3, _OR, "⑦", "Full-channel", _o("h_T w_T k_T"), ("K", "1", "HW")),
    TableRow("s3-ir-1", "style3", LayerKind.PREPROC_STYLE3, _IR, "①", "Channel-wise", _o("c k_T"), ("K", "C", "1"), True,
             printed_order=_o("k_T c")),
    TableRow("s3-ir-2", "style3", LayerKind.PREPROC_STYLE3, _IR, "②", "Multi-channel", _o("c_T k_T"), ("K", "C", "1"), True,
             printed_order=_o("k_T c_T")),
    TableRow("s3-ir-3", "style3", LayerKind.PREPROC_STYLE3, _IR, "③", "Partial channel", _o("h_T w_T c k_T"), ("K", "C", "HW"), True,
             printed_order=_o("k_T h_T w_T c")),
    TableRow("s3-ir-4", "style3", LayerKind.PREPROC_STYLE3, _IR, "④", "Multi channel", _o("h_T w_T c_T k_T"), ("K", "C", "HW"), True,
             printed_order=_o("k_T h_T w_T c_T")),
    TableRow("s3-ir-5", "style3", LayerKind.PREPROC_STYLE3, _IR, "⑤", "Partial channel (width/height)", _o("c h_T w_T k_T"), ("K*HW", "C", "1"), True,
             printed_order=_o("k_T h_T w_T c")),
    TableRow("s3-ir-6", "style3", LayerKind.PREPROC_STYLE3, _IR, "⑥", "Multi channel (width/height)", _o("c_T h_T w_T k_T"), ("K*HW", "C", "1"), True,
             printed_order=_o("k_T h_T w_T c_T")),
    TableRow("s3-ir-7", "style3", LayerKind.PREPROC_STYLE3, _IR, "⑦", "Full-channel", _o("k_T h_T w_T"), ("HW", "1", "K")),
)

# Cells printed as "--"; looking these up raises UnsupportedCombination.
UNSUPPORTED: frozenset[tuple[str, str, str]] = frozenset({
    ("conv", "output", "③"), ("conv", "output", "④"),
    ("style3", "output", "⑤"), ("style3", "output", "⑥"),
})

BY_ID: dict[str, TableRow] = {row.row_id: row for row in ROWS}

# Pooling shares the style-1 table.
KIND_TABLES = {
    LayerKind.CONVOLUTION: ("conv", "weight"),
    LayerKind.MATMUL: ("matmul",),
    LayerKind.PREPROC_STYLE1: ("style1",),
    LayerKind.POOLING: ("style1",),
    LayerKind.PREPROC_STYLE2: ("style2",),
    LayerKind.PREPROC_STYLE3: ("style3",),
}


def rows_for_kind(kind: LayerKind) -> list[TableRow]:
    tables = KIND_TABLES[kind]
    return [row for row in ROWS if row.table in tables]


def eval_alpha(expr: str, alpha: dict[str, int]) -> int:
    """Evaluate a product such as ``"K*HW"`` against per-dimension tile counts."""
    value = 1
    for token in expr.split("*"):
        token = token.strip()
        if token == "1":
            continue
        if token == "HW":
            value *= alpha["h"] * alpha["w"]
        elif token in ("K", "C", "H", "W"):
            value *= alpha[token.lower()]
        else:
            raise ValueError(f"bad alpha expression {expr!r}")
    return value
