"""Procedural 16x16 image world with known generative factors.

Every image is fully determined by five discrete factors (shape, foreground
color, background color, grid position, size). Rendering is pixel-exact
with no anti-aliasing, so nearest-render classification is an exact oracle
and edit success can be judged without any learned metric.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

IMAGE_SIZE = 16

SHAPES = ("circle", "square", "triangle")
FG_COLORS = ("red", "green", "blue", "yellow", "white")
BG_COLORS = ("black", "gray", "navy", "olive")
POSITIONS = (
    "top-left", "top", "top-right",
    "left", "center", "right",
    "bottom-left", "bottom", "bottom-right",
)
SIZES = ("small", "large")

FIELDS = ("shape", "fg_color", "bg_color", "position", "size")
FIELD_VALUES = {
    "shape": SHAPES,
    "fg_color": FG_COLORS,
    "bg_color": BG_COLORS,
    "position": POSITIONS,
    "size": SIZES,
}
N_FACTORS = 3 * 5 * 4 * 9 * 2  # 1080
ONEHOT_DIM = 3 + 5 + 4 + 9 + 2  # 23

_RGB = {
    "red": (1.0, 0.0, 0.0),
    "green": (0.0, 1.0, 0.0),
    "blue": (0.0, 0.0, 1.0),
    "yellow": (1.0, 1.0, 0.0),
    "white": (1.0, 1.0, 1.0),
    "black": (0.0, 0.0, 0.0),
    "gray": (0.5, 0.5, 0.5),
    "navy": (0.0, 0.0, 0.5),
    "olive": (0.5, 0.5, 0.0),
}

# Grid cell centers: 3x3 cells at pixel coordinates 3, 8, 12 (the last is
# 12 rather than 13 so a radius-3 circle at an edge cell stays in bounds).
_CELL_CENTERS = (3, 8, 12)

# --- token vocabulary ---------------------------------------------------
# 0 UNCOND, 1 SET, 2..6 field tokens, then the 23 value tokens.
UNCOND_ID = 0
SET_ID = 1
FIELD_IDS = {f: 2 + i for i, f in enumerate(FIELDS)}
_value_tokens: list[str] = []
for _f in FIELDS:
    _value_tokens.extend(FIELD_VALUES[_f])
VALUE_IDS = {name: 7 + i for i, name in enumerate(_value_tokens)}
ID_NAMES = {0: "UNCOND", 1: "SET"}
ID_NAMES.update({v: f"FIELD:{k}" for k, v in FIELD_IDS.items()})
ID_NAMES.update({v: k for k, v in VALUE_IDS.items()})
VOCAB_SIZE = 7 + ONEHOT_DIM  # 30

CAPTION_LEN = 5
INSTRUCTION_LEN = 3


class CaptionParseError(ValueError):
    pass


class InstructionError(ValueError):
    pass


@dataclass(frozen=True)
class FactorVector:
    shape: str
    fg_color: str
    bg_color: str
    position: str
    size: str

    def __post_init__(self):
        for f in FIELDS:
            v = getattr(self, f)
            if v not in FIELD_VALUES[f]:
                raise ValueError(f"invalid {f} value {v!r}; legal: {FIELD_VALUES[f]}")

    def indices(self) -> tuple[int, int, int, int, int]:
        return tuple(FIELD_VALUES[f].index(getattr(self, f)) for f in FIELDS)

    def replace(self, field: str, value: str) -> "FactorVector":
        d = {f: getattr(self, f) for f in FIELDS}
        d[field] = value
        return FactorVector(**d)


@dataclass(frozen=True)
class EditInstruction:
    field: str
    value: str

    def __post_init__(self):
        if self.field not in FIELDS:
            raise InstructionError(f"unknown field {self.field!r}; legal: {FIELDS}")
        if self.value not in FIELD_VALUES[self.field]:
            raise InstructionError(
                f"illegal value {self.value!r} for field {self.field!r}; "
                f"legal: {FIELD_VALUES[self.field]}")

    def tokens(self) -> list[int]:
        return [SET_ID, FIELD_IDS[self.field], VALUE_IDS[self.value]]


def all_factors() -> list[FactorVector]:
    """All 1080 factor combinations in lexicographic field order."""
    out = []
    for s in SHAPES:
        for fg in FG_COLORS:
            for bg in BG_COLORS:
                for pos in POSITIONS:
                    for size in SIZES:
                        out.append(FactorVector(s, fg, bg, pos, size))
    return out


def caption_of(f: FactorVector) -> list[int]:
    return [VALUE_IDS[getattr(f, field)] for field in FIELDS]


def factors_of(caption: list[int]) -> FactorVector:
    if len(caption) != CAPTION_LEN:
        raise CaptionParseError(f"caption must have {CAPTION_LEN} tokens, got {len(caption)}")
    values = []
    for pos, (tok, field) in enumerate(zip(caption, FIELDS)):
        name = ID_NAMES.get(int(tok))
        if name is None:
            raise CaptionParseError(f"unknown token id {tok} at position {pos}")
        if name not in FIELD_VALUES[field]:
            raise CaptionParseError(
                f"token {name!r} at position {pos} is not a {field} value")
        values.append(name)
    return FactorVector(*values)


def apply_instruction(f: FactorVector, i: EditInstruction) -> FactorVector:
    return f.replace(i.field, i.value)


def instruction_of_tokens(tokens: list[int]) -> EditInstruction:
    if len(tokens) != INSTRUCTION_LEN or tokens[0] != SET_ID:
        raise InstructionError(f"instruction tokens must be [SET, field, value], got {tokens}")
    field_name = None
    for f, fid in FIELD_IDS.items():
        if fid == tokens[1]:
            field_name = f
    if field_name is None:
        raise InstructionError(f"token {tokens[1]} is not a field token")
    value = ID_NAMES.get(int(tokens[2]))
    if value is None or value not in FIELD_VALUES[field_name]:
        raise InstructionError(f"token {tokens[2]} is not a {field_name} value")
    return EditInstruction(field_name, value)


# --- rendering ----------------------------------------------------------

def _cell_center(position: str) -> tuple[int, int]:
    idx = POSITIONS.index(position)
    row, col = divmod(idx, 3)
    return _CELL_CENTERS[row], _CELL_CENTERS[col]


def render(f: FactorVector) -> np.ndarray:
    """Rasterize factors to a [16, 16, 3] float32 image in [0, 1].

    Pixel-exact: every pixel is exactly the fg or bg color. The size factor
    sets the half-width h (small=2, large=3); a square is the 2h x 2h block
    rows/cols [c-h, c+h), a circle keeps offsets with dr^2 + dc^2 <= h^2,
    and a triangle widens by one pixel per row from a single-pixel apex.
    """
    cy, cx = _cell_center(f.position)
    h = 2 if f.size == "small" else 3
    img = np.empty((IMAGE_SIZE, IMAGE_SIZE, 3), dtype=np.float32)
    img[:] = np.asarray(_RGB[f.bg_color], dtype=np.float32)
    fg = np.asarray(_RGB[f.fg_color], dtype=np.float32)

    if f.shape == "square":
        img[cy - h:cy + h, cx - h:cx + h] = fg
    elif f.shape == "circle":
        for dr in range(-h, h + 1):
            for dc in range(-h, h + 1):
                if dr * dr + dc * dc <= h * h:
                    img[cy + dr, cx + dc] = fg
    else:  # triangle: rows cy-h .. cy+h-1, row k is k+1 pixels wide
        for k in range(2 * h):
            r = cy - h + k
            w = k + 1
            left = cx - (w - 1) // 2 - (1 if w % 2 == 0 else 0)
            img[r, left:left + w] = fg
    return img


_RENDER_TABLE: np.ndarray | None = None
_FACTOR_LIST: list[FactorVector] | None = None


def _tables() -> tuple[np.ndarray, list[FactorVector]]:
    global _RENDER_TABLE, _FACTOR_LIST
    if _RENDER_TABLE is None:
        _FACTOR_LIST = all_factors()
        _RENDER_TABLE = np.stack([render(f).reshape(-1) for f in _FACTOR_LIST])
    return _RENDER_TABLE, _FACTOR_LIST


def classify(img: np.ndarray) -> FactorVector:
    """Exact nearest-render classification.

    Argmin of per-pixel squared distance over all 1080 renders; ties break
    to the lexicographically first factor tuple (the table is built in that
    order and argmin returns the first minimum).
    """
    table, factors = _tables()
    x = np.asarray(img, dtype=np.float32).reshape(-1)
    if x.shape != (table.shape[1],):
        raise ValueError(f"expected a {IMAGE_SIZE}x{IMAGE_SIZE}x3 image, got {img.shape}")
    d = ((table - x) ** 2).sum(axis=1)
    return factors[int(np.argmin(d))]


# --- oracle metrics -----------------------------------------------------

def factor_onehot(f: FactorVector) -> np.ndarray:
    """Concatenated one-hot over the 23-dim factor space."""
    out = np.zeros(ONEHOT_DIM, dtype=np.float64)
    offset = 0
    for field in FIELDS:
        values = FIELD_VALUES[field]
        out[offset + values.index(getattr(f, field))] = 1.0
        offset += len(values)
    return out


def direction_score(input_img: np.ndarray, output_img: np.ndarray,
                    i: EditInstruction) -> float:
    """Cosine between achieved and requested factor deltas, clamped to [0, 1].

    Zero when either delta is the zero vector (no-op edit or unchanged
    output).
    """
    f_in = classify(input_img)
    f_out = classify(output_img)
    u = factor_onehot(f_out) - factor_onehot(f_in)
    v = factor_onehot(apply_instruction(f_in, i)) - factor_onehot(f_in)
    nu2 = float(np.dot(u, u))
    nv2 = float(np.dot(v, v))
    if nu2 == 0.0 or nv2 == 0.0:
        return 0.0
    # deltas are small integer vectors; one sqrt keeps u = v exactly at 1
    return float(max(0.0, np.dot(u, v) / np.sqrt(nu2 * nv2)))


def image_similarity(a: np.ndarray, b: np.ndarray) -> float:
    """1 - RMSE over all channels; 1 iff identical."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"image shapes differ: {a.shape} vs {b.shape}")
    rmse = float(np.sqrt(((a - b) ** 2).mean()))
    return 1.0 - rmse


def edit_success(input_img: np.ndarray, output_img: np.ndarray,
                 i: EditInstruction) -> int:
    """Strict judge: 1 iff the edit applied and nothing else drifted."""
    target = apply_instruction(classify(input_img), i)
    return int(classify(output_img) == target)


# --- sampling -----------------------------------------------------------

def sample_factors(rng: np.random.Generator) -> FactorVector:
    return FactorVector(
        shape=SHAPES[rng.integers(len(SHAPES))],
        fg_color=FG_COLORS[rng.integers(len(FG_COLORS))],
        bg_color=BG_COLORS[rng.integers(len(BG_COLORS))],
        position=POSITIONS[rng.integers(len(POSITIONS))],
        size=SIZES[rng.integers(len(SIZES))],
    )


def sample_instruction(rng: np.random.Generator, f: FactorVector) -> EditInstruction:
    """Uniform field, uniform value among values != current (never a no-op)."""
    field = FIELDS[rng.integers(len(FIELDS))]
    current = getattr(f, field)
    choices = [v for v in FIELD_VALUES[field] if v != current]
    return EditInstruction(field, choices[rng.integers(len(choices))])
