"""Synthetic two-timepoint nodule ROIs with correlated clinical covariates."""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass

import numpy as np

SEXES = ("male", "female")
SMOKING = ("current", "former")
SCREENING = ("negative", "positive")
SPLITS = ("train", "val", "test")
AGE_RANGE = (45, 80)

# log-growth of the nodule radius between timepoints
GROWTH_MALIGNANT = (0.45, 0.15)
GROWTH_BENIGN = (0.02, 0.10)


@dataclass(frozen=True)
class ClinicalRecord:
    age: int
    sex: str
    smoking_status: str
    screening_result: str

    def __post_init__(self):
        if isinstance(self.age, bool) or not isinstance(self.age, (int, np.integer)):
            raise ValueError(f"age must be an integer, got {self.age!r}")
        if not AGE_RANGE[0] <= self.age <= AGE_RANGE[1]:
            raise ValueError(f"age {self.age} outside {AGE_RANGE[0]}-{AGE_RANGE[1]}")
        object.__setattr__(self, "age", int(self.age))
        for name, allowed in (("sex", SEXES), ("smoking_status", SMOKING), ("screening_result", SCREENING)):
            value = getattr(self, name)
            if value not in allowed:
                raise ValueError(f"{name} must be one of {allowed}, got {value!r}")

    @classmethod
    def from_dict(cls, d: dict) -> "ClinicalRecord":
        fields = ("age", "sex", "smoking_status", "screening_result")
        missing = [f for f in fields if f not in d]
        if missing:
            raise ValueError(f"clinical record missing fields {missing}")
        extra = sorted(set(d) - set(fields))
        if extra:
            raise ValueError(f"clinical record has unknown fields {extra}")
        return cls(**{f: d[f] for f in fields})

    def to_dict(self) -> dict:
        return {"age": self.age, "sex": self.sex, "smoking_status": self.smoking_status,
                "screening_result": self.screening_result}

    def normalized(self) -> np.ndarray:
        """Four scalars: (age - 55) / 10, then each binary field mapped to -1 / +1."""
        return np.array([
            (self.age - 55) / 10.0,
            1.0 if self.sex == "female" else -1.0,
            1.0 if self.smoking_status == "current" else -1.0,
            1.0 if self.screening_result == "positive" else -1.0,
        ])


N_CLINICAL_FIELDS = 4


@dataclass
class FollowupCase:
    case_id: str
    t0_volume: np.ndarray  # [1, D, H, W] float32 in [0, 1]
    t1_volume: np.ndarray
    clinical: ClinicalRecord
    label: int

    def __post_init__(self):
        if self.t0_volume.shape != self.t1_volume.shape:
            raise ValueError(f"{self.case_id}: t0 {self.t0_volume.shape} and t1 {self.t1_volume.shape} differ")
        if self.t0_volume.ndim != 4 or self.t0_volume.shape[0] != 1:
            raise ValueError(f"{self.case_id}: volumes must be [1, D, H, W], got {self.t0_volume.shape}")
        if self.label not in (0, 1):
            raise ValueError(f"{self.case_id}: label must be 0 or 1, got {self.label!r}")
        for v in (self.t0_volume, self.t1_volume):
            if not (np.isfinite(v).all() and v.min() >= 0.0 and v.max() <= 1.0):
                raise ValueError(f"{self.case_id}: voxel values must lie in [0, 1]")

    def __eq__(self, other):
        if not isinstance(other, FollowupCase):
            return NotImplemented
        return (self.case_id == other.case_id and self.label == other.label and self.clinical == other.clinical
                and self.t0_volume.dtype == other.t0_volume.dtype
                and np.array_equal(self.t0_volume, other.t0_volume)
                and np.array_equal(self.t1_volume, other.t1_volume))


def case_rng(seed: int, index: int) -> np.random.Generator:
    """Per-case generator: the (seed, index) pair is hashed by SeedSequence."""
    return np.random.default_rng(np.random.SeedSequence([seed, index]))


def render_nodule(shape: tuple[int, int, int], center: np.ndarray, radius: float, amplitude: float) -> np.ndarray:
    """Gaussian blob whose 1/e^(1/2) iso-surface has the given radius (voxel units)."""
    grid = np.indices(shape, dtype=np.float64)
    d2 = sum((grid[i] - center[i]) ** 2 for i in range(3))
    return amplitude * np.exp(-d2 / (2.0 * radius ** 2))


def _sample_clinical(rng: np.random.Generator, label: int, leak: float) -> ClinicalRecord:
    sign = 1.0 if label == 1 else -1.0
    age = int(np.clip(np.rint(rng.normal(62.0 + 6.0 * leak * sign, 7.0)), *AGE_RANGE))
    p_risk = 0.5 + 0.35 * leak * sign
    return ClinicalRecord(
        age=age,
        sex=SEXES[int(rng.random() < 0.5)],
        smoking_status="current" if rng.random() < p_risk else "former",
        screening_result="positive" if rng.random() < p_risk else "negative",
    )


def _make_case(seed: int, index: int, label: int, shape: tuple[int, int, int], leak: float) -> FollowupCase:
    rng = case_rng(seed, index)
    shape_arr = np.array(shape, dtype=np.float64)
    center = (shape_arr - 1) / 2.0 + rng.uniform(-0.1, 0.1, size=3) * shape_arr
    scale = min(shape) / 8.0
    r0 = rng.uniform(0.8, 1.6) * scale * (1.1 if label == 1 else 1.0)
    mu, sigma = GROWTH_MALIGNANT if label == 1 else GROWTH_BENIGN
    r1 = r0 * float(np.exp(rng.normal(mu, sigma)))
    amplitude = rng.uniform(0.55, 0.75)
    background = 0.1

    volumes = []
    for radius in (r0, r1):
        noise = rng.normal(0.0, 0.03, size=shape)
        vol = background + noise + render_nodule(shape, center, radius, amplitude)
        volumes.append(np.clip(vol, 0.0, 1.0).astype(np.float32)[None])
    return FollowupCase(
        case_id=f"case_{index:05d}",
        t0_volume=volumes[0],
        t1_volume=volumes[1],
        clinical=_sample_clinical(rng, label, leak),
        label=label,
    )


def generate(n_cases: int, seed: int, shape: tuple[int, int, int] = (8, 16, 16),
             malignant_fraction: float = 0.4, leak: float = 0.6) -> list[FollowupCase]:
    """Generate ``n_cases`` cases with exactly ``round(n_cases * malignant_fraction)`` malignant ones.

    Malignant nodules grow between timepoints (median radius ratio ~1.57) while
    benign ones stay near constant.  ``leak`` in [0, 1] sets how strongly age,
    smoking and screening result track the label.
    """
    if n_cases < 2:
        raise ValueError(f"n_cases must be >= 2, got {n_cases}")
    if not 0.0 < malignant_fraction < 1.0:
        raise ValueError(f"malignant_fraction must be in (0, 1), got {malignant_fraction}")
    if not 0.0 <= leak <= 1.0:
        raise ValueError(f"leak must be in [0, 1], got {leak}")
    shape = tuple(int(s) for s in shape)
    if len(shape) != 3 or min(shape) < 2:
        raise ValueError(f"shape must be three extents >= 2, got {shape}")
    n_mal = int(round(n_cases * malignant_fraction))
    if n_mal == 0 or n_mal == n_cases:
        raise ValueError(f"{n_cases} cases at fraction {malignant_fraction} leave one class empty")
    labels = np.zeros(n_cases, dtype=int)
    labels[:n_mal] = 1
    labels = np.random.default_rng(np.random.SeedSequence([seed])).permutation(labels)
    return [_make_case(seed, i, int(labels[i]), shape, leak) for i in range(n_cases)]


def nodule_mass(volume: np.ndarray, threshold: float = 0.3) -> float:
    """Sum of voxel intensities above ``threshold``; background sits near 0.1."""
    return float(volume[volume > threshold].sum())


def _allocate(n: int, fractions: tuple[float, ...]) -> list[int]:
    raw = [f * n for f in fractions]
    counts = [int(np.floor(r)) for r in raw]
    remainder = n - sum(counts)
    order = sorted(range(len(raw)), key=lambda i: (-(raw[i] - counts[i]), i))
    for i in order[:remainder]:
        counts[i] += 1
    return counts


def split(cases: list[FollowupCase], fractions=(0.8, 0.1, 0.1), seed: int = 0) -> dict[str, list[str]]:
    """Label-stratified train/val/test partition of case ids.

    Each class is shuffled with ``seed`` and cut by largest-remainder rounding,
    so every split gets its fraction of each class separately.
    """
    fractions = tuple(float(f) for f in fractions)
    if len(fractions) != 3 or min(fractions) < 0 or abs(sum(fractions) - 1.0) > 1e-9:
        raise ValueError(f"split fractions must be three non-negative values summing to 1, got {fractions}")
    ids = [c.case_id for c in cases]
    if len(set(ids)) != len(ids):
        raise ValueError("duplicate case ids")
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x5B117]))
    out: dict[str, list[str]] = {name: [] for name in SPLITS}
    for label in (0, 1):
        members = [c.case_id for c in cases if c.label == label]
        members = [members[i] for i in rng.permutation(len(members))]
        counts = _allocate(len(members), fractions)
        start = 0
        for name, count, frac in zip(SPLITS, counts, fractions):
            if frac > 0 and count == 0:
                raise ValueError(f"split {name!r} would receive no cases of class {label}")
            out[name].extend(members[start:start + count])
            start += count
    order = {cid: i for i, cid in enumerate(ids)}
    for name in SPLITS:
        out[name].sort(key=order.__getitem__)
    return out


class FollowupDataset:
    """Cases plus split assignment, with per-timepoint volume access counters."""

    def __init__(self, cases: list[FollowupCase], splits: dict[str, list[str]] | None = None, seed: int | None = None):
        self.cases = list(cases)
        self.index = {c.case_id: i for i, c in enumerate(self.cases)}
        if len(self.index) != len(self.cases):
            raise ValueError("duplicate case ids")
        self.splits = splits if splits is not None else {"train": [c.case_id for c in self.cases], "val": [], "test": []}
        for name, ids in self.splits.items():
            unknown = [i for i in ids if i not in self.index]
            if unknown:
                raise ValueError(f"split {name!r} references unknown cases {unknown[:3]}")
        self.seed = seed
        self.access_counts: Counter = Counter()

    def __len__(self) -> int:
        return len(self.cases)

    def split_indices(self, name: str) -> list[int]:
        return [self.index[i] for i in self.splits.get(name, [])]

    def volumes(self, indices, timepoint: str) -> np.ndarray:
        """Stack [len(indices), 1, D, H, W] volumes for ``timepoint`` ('t0' or 't1')."""
        if timepoint not in ("t0", "t1"):
            raise ValueError(f"timepoint must be 't0' or 't1', got {timepoint!r}")
        self.access_counts[timepoint] += len(indices)
        attr = "t0_volume" if timepoint == "t0" else "t1_volume"
        return np.stack([getattr(self.cases[i], attr) for i in indices])

    def clinical(self, indices) -> np.ndarray:
        self.access_counts["clinical"] += len(indices)
        return np.stack([self.cases[i].clinical.normalized() for i in indices])

    def labels(self, indices) -> np.ndarray:
        return np.array([self.cases[i].label for i in indices], dtype=np.int64)
