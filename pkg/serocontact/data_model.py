"""
Domain types, file ingestion, diary weights and contact filtering.

Everything downstream (force-of-infection fits, contact smoothing, bootstrap)
consumes the immutable containers defined here.
"""
import logging
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path
from typing import Iterable, Iterator, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from serocontact.errors import DataValidationError, DomainError

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]

DURATION_CATEGORIES: Tuple[str, ...] = ("lt5m", "m5_15", "m15_60", "h1_4", "gt4h")
CLOSENESS_LEVELS: Tuple[str, ...] = ("close", "nonclose")
DAY_TYPES: Tuple[str, ...] = ("weekday", "weekend")

SEROLOGY_COLUMNS = ("id", "age", "status")
PARTICIPANT_COLUMNS = ("part_id", "part_age", "household_size", "day_type")
CONTACT_COLUMNS = ("part_id", "cnt_age_low", "cnt_age_high", "closeness", "duration")
CENSUS_COLUMNS = ("age", "household_size", "count")

OUTLIER_CONTACT_LIMIT = 1000
WEIGHT_AGE_BAND_WIDTH = 10
WEIGHT_AGE_BAND_COUNT = 8  # 0-9, 10-19, ..., 70+
WEIGHT_MAX_HOUSEHOLD = 5  # 1, 2, 3, 4, 5+

REFERENCE_BREAKPOINTS = (0.5, 2.0, 6.0, 12.0, 19.0, 31.0, 80.0)


# ---------------------------------------------------------------------------
# Age grids and demography
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class AgeGrid:
    """Strictly increasing age breakpoints a_[1] < ... < a_[J+1] (years).

    Class j covers [a_[j], a_[j+1]); the last class is closed on the right.
    """
    breakpoints: np.ndarray

    def __post_init__(self):
        points = np.array(self.breakpoints, dtype=float)
        if points.ndim != 1 or points.size < 2:
            raise DomainError("an age grid needs at least two breakpoints")
        if not np.all(np.isfinite(points)):
            raise DomainError("age grid breakpoints must be finite")
        if np.any(np.diff(points) <= 0):
            raise DomainError(f"age grid breakpoints must be strictly increasing: {points.tolist()}")
        points.setflags(write=False)
        object.__setattr__(self, "breakpoints", points)

    @classmethod
    def reference(cls) -> "AgeGrid":
        """Six classes following the schooling system: (0.5,2), [2,6), ..., [31,80)."""
        return cls(np.array(REFERENCE_BREAKPOINTS))

    @classmethod
    def one_year(cls, upper: int = 101, lower: int = 0) -> "AgeGrid":
        """One-year bands [lower, lower+1), ..., [upper-1, upper)."""
        return cls(np.arange(lower, upper + 1, dtype=float))

    @property
    def n_classes(self) -> int:
        return self.breakpoints.size - 1

    @property
    def lower(self) -> float:
        return float(self.breakpoints[0])

    @property
    def upper(self) -> float:
        return float(self.breakpoints[-1])

    @property
    def widths(self) -> np.ndarray:
        return np.diff(self.breakpoints)

    @property
    def midpoints(self) -> np.ndarray:
        return 0.5 * (self.breakpoints[:-1] + self.breakpoints[1:])

    def labels(self) -> List[str]:
        return [f"[{lo:g},{hi:g})" for lo, hi in zip(self.breakpoints[:-1], self.breakpoints[1:])]

    def locate(self, ages: Union[float, np.ndarray]) -> np.ndarray:
        """Index of the class containing each age; -1 outside the grid."""
        ages = np.atleast_1d(np.asarray(ages, dtype=float))
        idx = np.searchsorted(self.breakpoints, ages, side="right") - 1
        idx = np.where(ages == self.upper, self.n_classes - 1, idx)
        outside = (ages < self.lower) | (ages > self.upper)
        return np.where(outside, -1, idx)

    def overlap_fractions(self, coarse: "AgeGrid") -> np.ndarray:
        """Fraction of each band of this grid that falls in each coarse class.

        Returns:
            np.ndarray: shape (coarse.n_classes, self.n_classes)
        """
        lo = np.maximum(coarse.breakpoints[:-1, None], self.breakpoints[None, :-1])
        hi = np.minimum(coarse.breakpoints[1:, None], self.breakpoints[None, 1:])
        return np.clip(hi - lo, 0.0, None) / self.widths[None, :]

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, AgeGrid):
            return NotImplemented
        return self.breakpoints.shape == other.breakpoints.shape and bool(
            np.allclose(self.breakpoints, other.breakpoints, rtol=0.0, atol=1e-12)
        )

    __hash__ = None


@dataclass(frozen=True, eq=False)
class Demography:
    """Population constants of the stationary MSIR model.

    ``population_by_age`` holds one count per one-year band starting at age 0 and
    may extend past ``life_expectancy`` (contact smoothing runs up to age 101).
    ``household_size_by_age`` is an (age x household size) table of counts.
    """
    population_total: float = 9943749.0
    life_expectancy: float = 80.0
    infectious_duration: float = 7.0 / 365.0
    maternal_antibody_age: float = 0.5
    population_by_age: Optional[np.ndarray] = None
    household_size_by_age: Optional[pd.DataFrame] = None

    def __post_init__(self):
        N, L, D, A = (self.population_total, self.life_expectancy,
                      self.infectious_duration, self.maternal_antibody_age)
        if not N > 0:
            raise DomainError(f"population_total must be positive, got {N}")
        if not L > 0:
            raise DomainError(f"life_expectancy must be positive, got {L}")
        if not 0 < D < 1:
            raise DomainError(f"infectious_duration must lie in (0, 1) years, got {D}")
        if not 0 <= A < L:
            raise DomainError(f"maternal_antibody_age must lie in [0, L), got {A}")

        if self.population_by_age is None:
            by_age = np.full(int(np.ceil(L)), N / L)
        else:
            by_age = np.array(self.population_by_age, dtype=float)
        if by_age.ndim != 1 or np.any(by_age < 0) or not np.all(np.isfinite(by_age)):
            raise DomainError("population_by_age must be a vector of non-negative counts")
        n_alive = int(np.ceil(L))
        if by_age.size < n_alive:
            raise DomainError(f"population_by_age covers {by_age.size} years, need at least {n_alive}")
        alive = by_age[:n_alive].sum()
        if abs(alive - N) > max(0.5 * n_alive, 1e-6 * N):
            raise DomainError(
                f"population_by_age sums to {alive:.1f} over [0, {L:g}) but population_total is {N:.1f}"
            )
        by_age.setflags(write=False)
        object.__setattr__(self, "population_by_age", by_age)

    @classmethod
    def uniform(cls, population_total: float = 9943749.0, life_expectancy: float = 80.0,
                infectious_duration: float = 7.0 / 365.0, maternal_antibody_age: float = 0.5,
                upper_age: int = 101) -> "Demography":
        """Stationary population under type I mortality, N/L per year.

        The same density is carried up to ``upper_age`` so that every contact
        smoothing band has a positive population.
        """
        density = population_total / life_expectancy
        n_years = max(int(np.ceil(life_expectancy)), upper_age)
        return cls(population_total, life_expectancy, infectious_duration, maternal_antibody_age,
                   population_by_age=np.full(n_years, density))

    @classmethod
    def from_census(cls, census: pd.DataFrame, life_expectancy: float = 80.0,
                    infectious_duration: float = 7.0 / 365.0,
                    maternal_antibody_age: float = 0.5) -> "Demography":
        """Build population vectors from a census table (age, household_size, count).

        The population total is the census count over ages [0, L).
        """
        table = census.pivot_table(index="age", columns="household_size", values="count",
                                   aggfunc="sum", fill_value=0.0)
        n_years = int(max(table.index.max() + 1, np.ceil(life_expectancy)))
        table = table.reindex(range(n_years), fill_value=0.0)
        by_age = table.sum(axis=1).to_numpy(dtype=float)
        total = by_age[: int(np.ceil(life_expectancy))].sum()
        if total <= 0:
            raise DomainError("census counts are all zero")
        return cls(total, life_expectancy, infectious_duration, maternal_antibody_age,
                   population_by_age=by_age, household_size_by_age=table)

    @property
    def contact_factor(self) -> float:
        """N*D/L, the constant in front of the transmission sums."""
        return self.population_total * self.infectious_duration / self.life_expectancy

    def population_on(self, grid: AgeGrid) -> np.ndarray:
        """Population per class of ``grid`` with fractional overlap of one-year bands."""
        years = AgeGrid.one_year(upper=self.population_by_age.size)
        if grid.upper > years.upper + 1e-9:
            raise DomainError(f"population_by_age stops at {years.upper:g}, grid needs {grid.upper:g}")
        return years.overlap_fractions(grid) @ self.population_by_age


# ---------------------------------------------------------------------------
# Serology
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SerologySample:
    id: str
    age: float
    status: int
    age_known_exactly: bool = True


@dataclass(frozen=True, eq=False)
class SerologyDataset:
    """Per-subject ages and binary immunity status."""
    ids: np.ndarray
    ages: np.ndarray
    status: np.ndarray
    age_exact: np.ndarray
    n_excluded: int = 0

    def __post_init__(self):
        ids = np.asarray(self.ids, dtype=object)
        ages = np.asarray(self.ages, dtype=float)
        status = np.asarray(self.status, dtype=np.int8)
        exact = np.asarray(self.age_exact, dtype=bool)
        if not (ids.shape == ages.shape == status.shape == exact.shape) or ages.ndim != 1:
            raise DomainError("serology arrays must be one-dimensional and of equal length")
        if np.any((status != 0) & (status != 1)):
            raise DomainError("serology status must be 0 or 1")
        for name, arr in (("ids", ids), ("ages", ages), ("status", status), ("age_exact", exact)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @classmethod
    def from_samples(cls, samples: Iterable[SerologySample], n_excluded: int = 0) -> "SerologyDataset":
        samples = list(samples)
        return cls(
            ids=np.array([s.id for s in samples], dtype=object),
            ages=np.array([s.age for s in samples], dtype=float),
            status=np.array([s.status for s in samples], dtype=np.int8),
            age_exact=np.array([s.age_known_exactly for s in samples], dtype=bool),
            n_excluded=n_excluded,
        )

    def __len__(self) -> int:
        return int(self.ages.size)

    def samples(self) -> Iterator[SerologySample]:
        for i in range(len(self)):
            yield SerologySample(str(self.ids[i]), float(self.ages[i]), int(self.status[i]),
                                 bool(self.age_exact[i]))

    def take(self, indices: np.ndarray) -> "SerologyDataset":
        """Rows at ``indices`` (repetition allowed, as in resampling)."""
        indices = np.asarray(indices, dtype=int)
        return SerologyDataset(self.ids[indices], self.ages[indices], self.status[indices],
                               self.age_exact[indices], self.n_excluded)

    def with_ages(self, ages: np.ndarray) -> "SerologyDataset":
        return replace(self, ages=np.asarray(ages, dtype=float))

    def concat(self, other: "SerologyDataset") -> "SerologyDataset":
        return SerologyDataset(
            np.concatenate([self.ids, other.ids]),
            np.concatenate([self.ages, other.ages]),
            np.concatenate([self.status, other.status]),
            np.concatenate([self.age_exact, other.age_exact]),
            self.n_excluded + other.n_excluded,
        )

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({
            "id": self.ids.astype(str),
            "age": self.ages,
            "status": self.status.astype(int),
            "age_exact": self.age_exact.astype(int),
        })


def _read_csv(path: PathLike, required: Sequence[str]) -> pd.DataFrame:
    path = Path(path)
    if not path.is_file():
        raise DataValidationError("file not found", path=str(path))
    try:
        frame = pd.read_csv(path, dtype=str, keep_default_na=False, encoding="utf-8")
    except pd.errors.EmptyDataError:
        raise DataValidationError("file is empty, a header row is required", path=str(path))
    except (pd.errors.ParserError, UnicodeDecodeError) as exc:
        raise DataValidationError(f"cannot parse CSV: {exc}", path=str(path))
    frame.columns = [c.strip() for c in frame.columns]
    missing = [c for c in required if c not in frame.columns]
    if missing:
        raise DataValidationError(
            f"header must contain {', '.join(required)}; missing {', '.join(missing)}",
            line=1, path=str(path),
        )
    return frame.apply(lambda col: col.str.strip())


def _parse_float(frame: pd.DataFrame, column: str, path: PathLike, allow_empty: bool = False) -> np.ndarray:
    raw = frame[column]
    empty = raw == ""
    values = pd.to_numeric(raw.where(~empty, None), errors="coerce").to_numpy(dtype=float)
    bad = np.isnan(values) & ~empty.to_numpy()
    if not allow_empty:
        bad |= empty.to_numpy()
    bad |= np.isinf(values)
    if bad.any():
        row = int(np.flatnonzero(bad)[0])
        raise DataValidationError(f"invalid {column} value {raw.iloc[row]!r}", line=row + 2, path=str(path))
    return values


def _parse_choice(frame: pd.DataFrame, column: str, choices: Sequence[str], path: PathLike) -> np.ndarray:
    raw = frame[column]
    bad = ~raw.isin(choices).to_numpy()
    if bad.any():
        row = int(np.flatnonzero(bad)[0])
        what = "missing" if raw.iloc[row] == "" else f"invalid value {raw.iloc[row]!r}"
        raise DataValidationError(f"{column} {what}; expected one of {', '.join(choices)}",
                                  line=row + 2, path=str(path))
    return raw.to_numpy(dtype=object)


def load_serology(path: PathLike, maternal_antibody_age: float = 0.5,
                  life_expectancy: float = 80.0) -> SerologyDataset:
    """
    Read ``serology.csv`` (columns id, age, status).

    Subjects aged A or younger are still protected by maternal antibodies and
    are excluded, as are subjects aged L or older; the exclusions are counted.
    An optional ``age_exact`` column (0/1) overrides the default rule that an
    integer age was only reported to the year.

    Args:
        path: CSV file location
        maternal_antibody_age: A, in years
        life_expectancy: L, in years

    Returns:
        SerologyDataset: retained subjects plus the exclusion count

    Raises:
        DataValidationError: If the header is wrong, the file has no rows, or a
            row carries a malformed age or status (the message names the line)
    """
    frame = _read_csv(path, SEROLOGY_COLUMNS)
    if frame.empty:
        raise DataValidationError("no data rows", path=str(path))

    ages = _parse_float(frame, "age", path)
    status = _parse_choice(frame, "status", ("0", "1"), path).astype(int)
    if "age_exact" in frame.columns:
        exact = _parse_choice(frame, "age_exact", ("0", "1"), path).astype(int).astype(bool)
    else:
        exact = ages != np.floor(ages)

    keep = (ages > maternal_antibody_age) & (ages < life_expectancy)
    n_excluded = int((~keep).sum())
    if n_excluded:
        logger.info("Excluded %d serology subjects outside (%g, %g)", n_excluded,
                    maternal_antibody_age, life_expectancy)
    dataset = SerologyDataset(
        ids=frame["id"].to_numpy(dtype=object)[keep],
        ages=ages[keep],
        status=status[keep],
        age_exact=exact[keep],
        n_excluded=n_excluded,
    )
    logger.info("Loaded %d serology subjects from %s", len(dataset), path)
    return dataset


def write_serology(dataset: SerologyDataset, path: PathLike) -> None:
    dataset.to_frame().to_csv(path, index=False, float_format="%.17g", lineterminator="\n")


# ---------------------------------------------------------------------------
# Contact survey
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Participant:
    part_id: str
    age: float
    household_size: int
    day_type: str = "weekday"
    weight: float = 1.0
    age_known_exactly: bool = False


@dataclass(frozen=True)
class ContactRecord:
    part_id: str
    age_low: float
    age_high: float
    closeness: str
    duration: str


class ContactFilter(str, Enum):
    """Contact definitions with increasing transmission potential."""
    C1 = "C1"  # all contacts
    C2 = "C2"  # close contacts
    C3 = "C3"  # close contacts > 15 minutes
    C4 = "C4"  # close contacts and non-close contacts > 1 hour
    C5 = "C5"  # close contacts > 15 minutes and non-close contacts > 1 hour

    def mask(self, contacts: pd.DataFrame) -> np.ndarray:
        close = (contacts["closeness"] == "close").to_numpy()
        duration = contacts["duration"]
        over_15m = duration.isin(("m15_60", "h1_4", "gt4h")).to_numpy()
        over_1h = duration.isin(("h1_4", "gt4h")).to_numpy()
        long_nonclose = ~close & over_1h
        if self is ContactFilter.C1:
            return np.ones(len(contacts), dtype=bool)
        if self is ContactFilter.C2:
            return close
        if self is ContactFilter.C3:
            return close & over_15m
        if self is ContactFilter.C4:
            return close | long_nonclose
        return (close & over_15m) | long_nonclose


@dataclass(frozen=True, eq=False)
class ContactSurvey:
    """Participants (one diary day each) and the contacts they reported.

    ``participants`` columns: part_id, part_age, household_size, day_type,
    weight, age_exact. ``contacts`` columns: part_id, cnt_age_low,
    cnt_age_high, closeness, duration.
    """
    participants: pd.DataFrame
    contacts: pd.DataFrame
    n_dropped_contacts: int = 0
    excluded_participants: Tuple[str, ...] = field(default_factory=tuple)

    @classmethod
    def from_records(cls, participants: Iterable[Participant],
                     contacts: Iterable[ContactRecord]) -> "ContactSurvey":
        participants = list(participants)
        contacts = list(contacts)
        part_frame = pd.DataFrame({
            "part_id": [p.part_id for p in participants],
            "part_age": np.array([p.age for p in participants], dtype=float),
            "household_size": np.array([p.household_size for p in participants], dtype=int),
            "day_type": [p.day_type for p in participants],
            "weight": np.array([p.weight for p in participants], dtype=float),
            "age_exact": np.array([p.age_known_exactly for p in participants], dtype=bool),
        })
        cnt_frame = pd.DataFrame({
            "part_id": [c.part_id for c in contacts],
            "cnt_age_low": np.array([c.age_low for c in contacts], dtype=float),
            "cnt_age_high": np.array([c.age_high for c in contacts], dtype=float),
            "closeness": [c.closeness for c in contacts],
            "duration": [c.duration for c in contacts],
        })
        return cls(part_frame, cnt_frame)

    @property
    def n_participants(self) -> int:
        return len(self.participants)

    @property
    def n_contacts(self) -> int:
        return len(self.contacts)

    def contact_records(self) -> Iterator[ContactRecord]:
        for row in self.contacts.itertuples(index=False):
            yield ContactRecord(str(row.part_id), float(row.cnt_age_low), float(row.cnt_age_high),
                                row.closeness, row.duration)

    def with_participants(self, participants: pd.DataFrame) -> "ContactSurvey":
        return replace(self, participants=participants.reset_index(drop=True))


def load_contact_survey(participants_path: PathLike, contacts_path: PathLike) -> ContactSurvey:
    """
    Read ``participants.csv`` and ``contacts.csv`` into a ContactSurvey.

    Contacts missing both age bounds are dropped and counted. Participants with
    more than 1000 reported contacts are treated as outliers and excluded
    together with their contacts. A supplied ``weight`` column is rescaled to
    mean 1 over the retained participants, like computed diary weights.

    Args:
        participants_path: participants file (part_id, part_age, household_size, day_type)
        contacts_path: contacts file (part_id, cnt_age_low, cnt_age_high, closeness, duration)

    Returns:
        ContactSurvey: survey with unit or rescaled diary weights

    Raises:
        DataValidationError: On malformed rows, duplicate participant ids or
            contacts that reference an unknown participant
    """
    parts = _read_csv(participants_path, PARTICIPANT_COLUMNS)
    part_age = _parse_float(parts, "part_age", participants_path)
    if np.any(part_age < 0):
        row = int(np.flatnonzero(part_age < 0)[0])
        raise DataValidationError("negative part_age", line=row + 2, path=str(participants_path))
    household = _parse_float(parts, "household_size", participants_path)
    bad_household = (household < 1) | (household != np.floor(household))
    if bad_household.any():
        row = int(np.flatnonzero(bad_household)[0])
        raise DataValidationError("household_size must be a positive integer", line=row + 2,
                                  path=str(participants_path))
    day_type = _parse_choice(parts, "day_type", DAY_TYPES, participants_path)
    duplicated = parts["part_id"].duplicated()
    if duplicated.any():
        row = int(np.flatnonzero(duplicated.to_numpy())[0])
        raise DataValidationError(f"duplicate participant id {parts['part_id'].iloc[row]!r}",
                                  line=row + 2, path=str(participants_path))
    if "weight" in parts.columns:
        weight = _parse_float(parts, "weight", participants_path)
        if np.any(weight < 0):
            row = int(np.flatnonzero(weight < 0)[0])
            raise DataValidationError("negative weight", line=row + 2, path=str(participants_path))
        if len(weight) and weight.sum() <= 0:
            raise DataValidationError("weights sum to zero", path=str(participants_path))
    else:
        weight = np.ones(len(parts))
    if "age_exact" in parts.columns:
        part_exact = _parse_choice(parts, "age_exact", ("0", "1"), participants_path).astype(int).astype(bool)
    else:
        part_exact = part_age != np.floor(part_age)

    participants = pd.DataFrame({
        "part_id": parts["part_id"].to_numpy(dtype=object),
        "part_age": part_age,
        "household_size": household.astype(int),
        "day_type": day_type,
        "weight": weight,
        "age_exact": part_exact,
    })

    cnts = _read_csv(contacts_path, CONTACT_COLUMNS)
    orphan = ~cnts["part_id"].isin(participants["part_id"]).to_numpy()
    if orphan.any():
        row = int(np.flatnonzero(orphan)[0])
        raise DataValidationError(f"contact references unknown participant {cnts['part_id'].iloc[row]!r}",
                                  line=row + 2, path=str(contacts_path))
    low = _parse_float(cnts, "cnt_age_low", contacts_path, allow_empty=True)
    high = _parse_float(cnts, "cnt_age_high", contacts_path, allow_empty=True)
    closeness = _parse_choice(cnts, "closeness", CLOSENESS_LEVELS, contacts_path)
    duration = _parse_choice(cnts, "duration", DURATION_CATEGORIES, contacts_path)

    low = np.where(np.isnan(low), high, low)
    high = np.where(np.isnan(high), low, high)
    inverted = high < low
    if inverted.any():
        row = int(np.flatnonzero(inverted)[0])
        raise DataValidationError("cnt_age_low exceeds cnt_age_high", line=row + 2, path=str(contacts_path))
    keep = ~np.isnan(low)
    n_dropped = int((~keep).sum())
    if n_dropped:
        logger.info("Dropped %d contacts with missing age", n_dropped)

    contacts = pd.DataFrame({
        "part_id": cnts["part_id"].to_numpy(dtype=object)[keep],
        "cnt_age_low": low[keep],
        "cnt_age_high": high[keep],
        "closeness": closeness[keep],
        "duration": duration[keep],
    })

    per_participant = contacts["part_id"].value_counts()
    outliers = tuple(sorted(per_participant.index[per_participant > OUTLIER_CONTACT_LIMIT].astype(str)))
    if outliers:
        logger.warning("Excluding %d outlier participant(s) with more than %d contacts: %s",
                       len(outliers), OUTLIER_CONTACT_LIMIT, ", ".join(outliers))
        participants = participants[~participants["part_id"].isin(outliers)].reset_index(drop=True)
        contacts = contacts[~contacts["part_id"].isin(outliers)].reset_index(drop=True)

    if len(participants) and participants["weight"].sum() > 0:
        participants["weight"] = participants["weight"] / participants["weight"].mean()
    logger.info("Loaded %d participants and %d contacts", len(participants), len(contacts))
    return ContactSurvey(participants, contacts, n_dropped_contacts=n_dropped,
                         excluded_participants=outliers)


def write_contact_survey(survey: ContactSurvey, participants_path: PathLike, contacts_path: PathLike) -> None:
    parts = survey.participants.copy()
    parts["age_exact"] = parts["age_exact"].astype(int)
    parts.to_csv(participants_path, index=False, float_format="%.17g", lineterminator="\n")
    survey.contacts.to_csv(contacts_path, index=False, float_format="%.17g", lineterminator="\n")


def load_census(path: PathLike) -> pd.DataFrame:
    """Read ``census.csv`` (age, household_size, count)."""
    frame = _read_csv(path, CENSUS_COLUMNS)
    if frame.empty:
        raise DataValidationError("no data rows", path=str(path))
    age = _parse_float(frame, "age", path)
    household = _parse_float(frame, "household_size", path)
    count = _parse_float(frame, "count", path)
    bad = (age < 0) | (age != np.floor(age)) | (household < 1) | (household != np.floor(household)) | (count < 0)
    if bad.any():
        row = int(np.flatnonzero(bad)[0])
        raise DataValidationError("age and household_size must be non-negative integers, count >= 0",
                                  line=row + 2, path=str(path))
    return pd.DataFrame({"age": age.astype(int), "household_size": household.astype(int), "count": count})


# ---------------------------------------------------------------------------
# Diary weights, filters, contact ages
# ---------------------------------------------------------------------------

def weighting_cells(ages: np.ndarray, household_sizes: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Post-stratification cells: ten-year age bands (70+ pooled) x household size (5+ pooled)."""
    band = np.minimum(np.floor(np.asarray(ages, dtype=float) / WEIGHT_AGE_BAND_WIDTH).astype(int),
                      WEIGHT_AGE_BAND_COUNT - 1)
    size = np.minimum(np.asarray(household_sizes, dtype=int), WEIGHT_MAX_HOUSEHOLD)
    return band, size


def _census_cell_counts(demography: Demography) -> np.ndarray:
    """Census counts per (age band, household size) cell; shape (8, 5)."""
    counts = np.zeros((WEIGHT_AGE_BAND_COUNT, WEIGHT_MAX_HOUSEHOLD))
    table = demography.household_size_by_age
    if table is None:
        ages = np.arange(demography.population_by_age.size)
        band, _ = weighting_cells(ages, np.ones_like(ages))
        np.add.at(counts[:, 0], band, demography.population_by_age)
        return counts
    for size_label in table.columns:
        column = table[size_label].to_numpy(dtype=float)
        band, size = weighting_cells(table.index.to_numpy(dtype=float), np.full(len(column), int(size_label)))
        np.add.at(counts, (band, size - 1), column)
    return counts


def compute_diary_weights(survey: ContactSurvey, demography: Demography) -> ContactSurvey:
    """
    Post-stratify participants to the census age x household-size composition.

    The weight of a participant in cell (g, h) is the census share of the cell
    divided by its survey share, rescaled to mean 1. Participants in cells the
    census leaves empty get the age-band marginal ratio instead. Without a
    household table in the demography, cells are age bands only.

    Args:
        survey: Contact survey
        demography: Population counts by age (and household size)

    Returns:
        ContactSurvey: copy with the ``weight`` column replaced

    Raises:
        DomainError: If the census counts are all zero
    """
    census = _census_cell_counts(demography)
    total = census.sum()
    if total <= 0:
        raise DomainError("census counts are all zero, diary weights are undefined")
    parts = survey.participants
    n = len(parts)
    if n == 0:
        return survey
    band, size = weighting_cells(parts["part_age"].to_numpy(), parts["household_size"].to_numpy())
    if demography.household_size_by_age is None:
        size = np.ones_like(size)

    survey_cells = np.zeros_like(census)
    np.add.at(survey_cells, (band, size - 1), 1.0)
    census_share = census / total
    survey_share = survey_cells / n
    band_ratio = np.divide(census_share.sum(axis=1), survey_share.sum(axis=1),
                           out=np.zeros(WEIGHT_AGE_BAND_COUNT), where=survey_share.sum(axis=1) > 0)

    cell_census = census_share[band, size - 1]
    weights = np.where(cell_census > 0,
                       cell_census / survey_share[band, size - 1],
                       band_ratio[band])
    n_fallback = int((cell_census <= 0).sum())
    if n_fallback:
        logger.info("%d participants fall in empty census cells; using age-band margins", n_fallback)
    if weights.sum() <= 0:
        raise DomainError("no participant falls in a populated census cell")
    weights = weights / weights.mean()

    updated = parts.copy()
    updated["weight"] = weights
    return survey.with_participants(updated)


def filter_contacts(survey: ContactSurvey, contact_filter: Union[ContactFilter, str]) -> ContactSurvey:
    """Restrict contacts to one of the C1-C5 definitions; participants are kept."""
    contact_filter = ContactFilter(contact_filter)
    if contact_filter is ContactFilter.C1:
        return survey
    mask = contact_filter.mask(survey.contacts)
    return replace(survey, contacts=survey.contacts[mask].reset_index(drop=True))


def resolve_contact_ages(contacts: pd.DataFrame, rng: Optional[np.random.Generator] = None) -> np.ndarray:
    """Point age for each contact: interval midpoint, or a uniform draw when ``rng`` is given."""
    low = contacts["cnt_age_low"].to_numpy(dtype=float)
    high = contacts["cnt_age_high"].to_numpy(dtype=float)
    if rng is None:
        return 0.5 * (low + high)
    return np.where(high > low, low + (high - low) * rng.random(low.size), low)
