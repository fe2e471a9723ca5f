"""Channel wall profiles and the built-in case matrices.

The channel spans x in [-1.5, 1.5] and y in [0, 0.8]. Each wall carries a
bump: a translated Gaussian, a Gaussian with tunable variance, or a
triangular wedge.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field, asdict

import numpy as np

X_MIN, X_MAX = -1.5, 1.5
CHANNEL_HEIGHT = 0.8
BUMP_AMPLITUDE = 0.0625
GAUSSIAN_DEFAULT_LAMBDA = 25.0
WEDGE_HEIGHT = 0.1
BASE_MACH = 2.0


class DomainError(ValueError):
    """A coordinate lies outside the channel's x-range."""


class Family(str, enum.Enum):
    GAUSSIAN_TRANSLATED = "gaussian_translated"
    GAUSSIAN_VARIANCE = "gaussian_variance"
    TRIANGULAR_WEDGE = "triangular_wedge"


class Side(str, enum.Enum):
    LOWER = "lower"
    UPPER = "upper"


@dataclass(frozen=True)
class WallProfile:
    family: Family = Family.GAUSSIAN_TRANSLATED
    side: Side = Side.LOWER
    delta_x: float = 0.0
    lam: float = GAUSSIAN_DEFAULT_LAMBDA
    wedge_length: float = 0.6
    wedge_height: float = WEDGE_HEIGHT
    amplitude: float = BUMP_AMPLITUDE

    def __post_init__(self):
        object.__setattr__(self, "family", Family(self.family))
        object.__setattr__(self, "side", Side(self.side))

    def bump(self, x):
        """Bump elevation above the flat wall (always >= 0)."""
        x = np.asarray(x, dtype=float)
        s = x - self.delta_x
        if self.family is Family.TRIANGULAR_WEDGE:
            half = 0.5 * self.wedge_length
            return self.wedge_height * np.clip(1.0 - np.abs(s) / half, 0.0, None)
        lam = GAUSSIAN_DEFAULT_LAMBDA if self.family is Family.GAUSSIAN_TRANSLATED else self.lam
        return self.amplitude * np.exp(-lam * s * s)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["family"] = self.family.value
        d["side"] = self.side.value
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "WallProfile":
        return cls(**d)


def wall_height(profile: WallProfile, x):
    """Wall y-coordinate of ``profile`` at ``x`` (scalar or array)."""
    xa = np.asarray(x, dtype=float)
    tol = 1e-12
    if np.any(xa < X_MIN - tol) or np.any(xa > X_MAX + tol):
        raise DomainError(f"x outside [{X_MIN}, {X_MAX}]: {x}")
    b = profile.bump(xa)
    y = b if profile.side is Side.LOWER else CHANNEL_HEIGHT - b
    return float(y) if np.ndim(y) == 0 else y


class Role(str, enum.Enum):
    TRAINING = "training"
    TESTING = "testing"


@dataclass(frozen=True)
class CaseSpec:
    profile_lower: WallProfile = field(default_factory=WallProfile)
    profile_upper: WallProfile = field(
        default_factory=lambda: WallProfile(side=Side.UPPER))
    mach_infinity: float = BASE_MACH
    mach_perturbation: float = 0.0
    role: Role = Role.TRAINING

    def __post_init__(self):
        object.__setattr__(self, "role", Role(self.role))

    @property
    def mach(self) -> float:
        """Free-stream Mach number including the perturbation."""
        return self.mach_infinity * (1.0 + self.mach_perturbation)

    @property
    def case_id(self) -> str:
        lo, up = self.profile_lower, self.profile_upper
        if lo.family is Family.GAUSSIAN_TRANSLATED:
            geo = f"dx{up.delta_x:+.2f}"
        elif lo.family is Family.GAUSSIAN_VARIANCE:
            geo = f"lam{lo.lam:g}"
        else:
            geo = f"L{lo.wedge_length:g}"
        if lo.amplitude == 0.0 and up.amplitude == 0.0 and lo.family is not Family.TRIANGULAR_WEDGE:
            geo = "flat"
        return f"{geo}_m{self.mach_perturbation:+.2f}"

    def to_dict(self) -> dict:
        return {
            "profile_lower": self.profile_lower.to_dict(),
            "profile_upper": self.profile_upper.to_dict(),
            "mach_infinity": self.mach_infinity,
            "mach_perturbation": self.mach_perturbation,
            "role": self.role.value,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CaseSpec":
        d = dict(d)
        d["profile_lower"] = WallProfile.from_dict(d["profile_lower"])
        d["profile_upper"] = WallProfile.from_dict(d["profile_upper"])
        return cls(**d)


MACH_PERTURBATIONS = (0.0, 0.05, -0.05)
TRAIN_SHIFTS = (0.0, 0.15, -0.15, 0.30, -0.30, 0.45, -0.45, 0.60, -0.60)
TEST_SHIFTS = (0.12, -0.19, -0.35, 0.44)
TRAIN_LAMBDAS = (10.0, 25.0, 40.0)
TRAIN_WEDGE_LENGTHS = (0.3, 0.4, 0.5, 0.6)
TEST_LAMBDA = 28.0
TEST_WEDGE_LENGTH = 0.38


def translated_case(delta_x: float, mach_perturbation: float = 0.0,
                    role: Role = Role.TRAINING, mach: float = BASE_MACH) -> CaseSpec:
    return CaseSpec(
        WallProfile(Family.GAUSSIAN_TRANSLATED, Side.LOWER),
        WallProfile(Family.GAUSSIAN_TRANSLATED, Side.UPPER, delta_x=delta_x),
        mach, mach_perturbation, role)


# The shape families replace the lower bump; the upper wall keeps the untranslated Gaussian.


def variance_case(lam: float, mach_perturbation: float = 0.0,
                  role: Role = Role.TRAINING, mach: float = BASE_MACH) -> CaseSpec:
    return CaseSpec(
        WallProfile(Family.GAUSSIAN_VARIANCE, Side.LOWER, lam=lam),
        WallProfile(Family.GAUSSIAN_TRANSLATED, Side.UPPER),
        mach, mach_perturbation, role)


def wedge_case(length: float, mach_perturbation: float = 0.0,
               role: Role = Role.TRAINING, mach: float = BASE_MACH,
               height: float = WEDGE_HEIGHT) -> CaseSpec:
    return CaseSpec(
        WallProfile(Family.TRIANGULAR_WEDGE, Side.LOWER, wedge_length=length, wedge_height=height),
        WallProfile(Family.GAUSSIAN_TRANSLATED, Side.UPPER),
        mach, mach_perturbation, role)


def flat_case(mach: float = BASE_MACH) -> CaseSpec:
    return CaseSpec(
        WallProfile(Family.GAUSSIAN_TRANSLATED, Side.LOWER, amplitude=0.0),
        WallProfile(Family.GAUSSIAN_TRANSLATED, Side.UPPER, amplitude=0.0),
        mach, 0.0, Role.TRAINING)


def translation_matrix(role: Role | str) -> list[CaseSpec]:
    """Bump-translation cases: 27 training runs or the 4 unperturbed test runs."""
    role = Role(role)
    if role is Role.TRAINING:
        return [translated_case(dx, dm) for dx in TRAIN_SHIFTS for dm in MACH_PERTURBATIONS]
    return [translated_case(dx, 0.0, Role.TESTING) for dx in TEST_SHIFTS]


def shape_matrix(role: Role | str) -> list[CaseSpec]:
    """Gaussian-variance and wedge cases: 21 training runs or 2 test runs."""
    role = Role(role)
    if role is Role.TRAINING:
        cases = [variance_case(lam, dm) for lam in TRAIN_LAMBDAS for dm in MACH_PERTURBATIONS]
        cases += [wedge_case(L, dm) for L in TRAIN_WEDGE_LENGTHS for dm in MACH_PERTURBATIONS]
        return cases
    return [variance_case(TEST_LAMBDA, 0.0, Role.TESTING),
            wedge_case(TEST_WEDGE_LENGTH, 0.0, Role.TESTING)]
