"""Per-point semantic label distributions and multi-view fusion.

A point (or voxel) carries a sparse top-k distribution over class labels:
a list of ``(label id, probability)`` entries sorted by ascending id, with
probabilities summing to at most 1.  The missing mass ``1 - sum`` is the
probability reserved for classes not in the list ("unknown").

Fusing two observations of the same point works in three steps: each side
is padded with the labels only the other side has seen, drawing the padded
probability from the unknown mass (``alpha`` controls how much of the
remaining mass each pad consumes, and the mass is recomputed after every
pad); then matching entries are multiplied label-by-label and normalized
to a proper distribution; finally the result is truncated to the ``k_max``
most probable labels.  When both observations agree on the exact label
set, the first one is kept verbatim (see ``FusionConfig.bayes_on_equal_sets``
for the alternative multiply-and-normalize behavior).

Everything here is a pure function over immutable values.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

_SUM_TOL = 1e-6


class DuplicateLabel(ValueError):
    """The same label id appears more than once in one pixel's score list."""


class ProbabilityOverflow(ValueError):
    """Probabilities at one pixel sum to more than 1."""


class AllZeroProduct(ValueError):
    """Every label-wise product is zero; the fused distribution is undefined."""


@dataclass(frozen=True)
class SemanticDistribution:
    """Sparse label distribution: ((label_id, prob), ...) sorted by id.

    Invariants: ids unique and ascending, each prob in [0, 1], total at
    most 1 (up to float tolerance).  The residual ``1 - sum`` is the mass
    of unlisted classes.
    """

    entries: tuple[tuple[int, float], ...] = ()

    def __post_init__(self):
        ids = [label for label, _ in self.entries]
        if any(b <= a for a, b in zip(ids, ids[1:])):
            raise ValueError("entries must be sorted by strictly ascending label id")
        if any(label < 0 for label in ids):
            raise ValueError("label ids must be non-negative")
        total = 0.0
        for _, prob in self.entries:
            if not (0.0 <= prob <= 1.0 + _SUM_TOL):
                raise ValueError(f"probability {prob!r} outside [0, 1]")
            total += prob
        if total > 1.0 + _SUM_TOL:
            raise ValueError(f"probabilities sum to {total!r} > 1")

    def __len__(self) -> int:
        return len(self.entries)

    def labels(self) -> frozenset[int]:
        return frozenset(label for label, _ in self.entries)

    def prob_of(self, label: int) -> float:
        for lid, prob in self.entries:
            if lid == label:
                return prob
        return 0.0


EMPTY_DISTRIBUTION = SemanticDistribution()


@dataclass(frozen=True)
class FusionConfig:
    """Knobs for pairwise fusion.

    ``alpha`` is the fraction of the remaining unknown mass each padded
    label receives; ``k_max`` bounds the entries kept per distribution.
    ``bayes_on_equal_sets`` replaces the keep-first-verbatim shortcut on
    identical label sets with the multiply-and-normalize path.
    """

    alpha: float = 0.5
    k_max: int = 5
    bayes_on_equal_sets: bool = False

    def __post_init__(self):
        if not (0.0 < self.alpha <= 1.0):
            raise ValueError("alpha must be in (0, 1]")
        if self.k_max < 1:
            raise ValueError("k_max must be at least 1")


@dataclass(frozen=True)
class SemanticPoint:
    """World-frame point with packed 0xRRGGBB color and a label distribution."""

    position: np.ndarray
    color: int = 0
    semantics: SemanticDistribution = field(default=EMPTY_DISTRIBUTION)

    def __post_init__(self):
        p = np.array(self.position, dtype=np.float64).reshape(3)
        if not np.all(np.isfinite(p)):
            raise ValueError("position must be finite")
        p.flags.writeable = False
        object.__setattr__(self, "position", p)


def residual_mass(d: SemanticDistribution) -> float:
    """Unassigned probability mass, 1 - sum(probs), clamped to [0, 1]."""
    total = sum(prob for _, prob in d.entries)
    return min(1.0, max(0.0, 1.0 - total))


def argmax_label(d: SemanticDistribution) -> tuple[int, float] | None:
    """Most probable (label, prob); ties pick the lower id; None when empty."""
    best = None
    for label, prob in d.entries:
        if best is None or prob > best[1]:
            best = (label, prob)
    return best


def from_pixel(label_scores) -> SemanticDistribution:
    """Canonicalize one pixel's (label, prob) list into a distribution.

    Raises DuplicateLabel on repeated ids and ProbabilityOverflow when the
    scores sum past 1.
    """
    pairs = [(int(label), float(prob)) for label, prob in label_scores]
    seen = set()
    total = 0.0
    for label, prob in pairs:
        if label in seen:
            raise DuplicateLabel(f"label {label} appears twice")
        seen.add(label)
        if not (0.0 <= prob <= 1.0):
            raise ValueError(f"probability {prob!r} outside [0, 1]")
        total += prob
    if total > 1.0 + _SUM_TOL:
        raise ProbabilityOverflow(f"pixel probabilities sum to {total:.9g}")
    return SemanticDistribution(tuple(sorted(pairs)))


def _padded(own: dict[int, float], other_only: list[int], alpha: float) -> dict[int, float]:
    # pad in ascending label order; the unknown mass shrinks after each pad
    out = dict(own)
    total = sum(out.values())
    for label in other_only:
        residual = min(1.0, max(0.0, 1.0 - total))
        p = alpha * residual
        out[label] = p
        total += p
    return out


def fuse(
    q1: SemanticDistribution, q2: SemanticDistribution, cfg: FusionConfig | None = None
) -> SemanticDistribution:
    """Fuse two observations of one point into a single distribution.

    Identical label sets return ``q1`` unchanged (unless
    ``cfg.bayes_on_equal_sets``).  Otherwise each side is padded with the
    other's exclusive labels from its unknown mass, the sides are
    multiplied label-wise, normalized, and truncated to ``cfg.k_max``
    entries (no renormalization after truncation).
    """
    cfg = cfg or FusionConfig()
    s1, s2 = q1.labels(), q2.labels()
    if s1 == s2 and not cfg.bayes_on_equal_sets:
        return q1

    d1 = dict(q1.entries)
    d2 = dict(q2.entries)
    if s1 != s2:
        d2 = _padded(d2, sorted(s1 - s2), cfg.alpha)
        d1 = _padded(d1, sorted(s2 - s1), cfg.alpha)

    labels = sorted(d1)
    products = [d1[label] * d2[label] for label in labels]
    norm = sum(products)
    if norm <= 0.0:
        raise AllZeroProduct("all label-wise products are zero")
    fused = [(label, p / norm) for label, p in zip(labels, products)]

    if len(fused) > cfg.k_max:
        fused.sort(key=lambda e: (-e[1], e[0]))
        fused = sorted(fused[: cfg.k_max])
    return SemanticDistribution(tuple(fused))


@dataclass(frozen=True)
class LabelTable:
    """Ordered class names with display colors; ids are list positions."""

    names: tuple[str, ...]
    colors: tuple[tuple[int, int, int], ...]

    def __post_init__(self):
        if not self.names:
            raise ValueError("label table must not be empty")
        if len(set(self.names)) != len(self.names):
            raise ValueError("class names must be unique")
        if len(self.colors) != len(self.names):
            raise ValueError("one color per class required")
        for c in self.colors:
            if len(c) != 3 or any(not (0 <= v <= 255) for v in c):
                raise ValueError(f"bad RGB triple {c!r}")

    def __len__(self) -> int:
        return len(self.names)

    def color_of(self, label: int) -> tuple[int, int, int]:
        """Display color; unknown ids fall back to mid gray."""
        if 0 <= label < len(self.colors):
            return self.colors[label]
        return (128, 128, 128)

    def id_of(self, name: str) -> int:
        return self.names.index(name)

    @staticmethod
    def load(path) -> "LabelTable":
        """Read `id name r g b` lines; ids must ascend from 0."""
        names, colors = [], []
        with open(path, "r", encoding="utf-8") as f:
            for lineno, raw in enumerate(f, 1):
                line = raw.strip()
                if not line or line.startswith("#"):
                    continue
                parts = line.split()
                if len(parts) != 5:
                    raise ValueError(f"{path}:{lineno}: expected `id name r g b`")
                if int(parts[0]) != len(names):
                    raise ValueError(f"{path}:{lineno}: ids must ascend from 0")
                names.append(parts[1])
                colors.append((int(parts[2]), int(parts[3]), int(parts[4])))
        return LabelTable(tuple(names), tuple(colors))

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as f:
            for i, (name, (r, g, b)) in enumerate(zip(self.names, self.colors)):
                f.write(f"{i} {name} {r} {g} {b}\n")


def pack_rgb(r: int, g: int, b: int) -> int:
    return (int(r) << 16) | (int(g) << 8) | int(b)


def unpack_rgb(color: int) -> tuple[int, int, int]:
    return ((color >> 16) & 0xFF, (color >> 8) & 0xFF, color & 0xFF)
