"""
Proportionality models q(a, a') linking contact rates to transmission rates.

beta_ij = q_ij * c_ij, with row i the susceptible class and column j the
infectious class.
"""
import logging
from abc import ABC, abstractmethod
from typing import Dict, List, Optional, Sequence, Tuple, Type

import numpy as np

from serocontact.data_model import AgeGrid
from serocontact.errors import ConfigError

logger = logging.getLogger(__name__)

DEFAULT_SPLIT_AGE = 12.0

# 2x2 structures over (younger, older) x (younger, older); 1-based gamma index, 0 = zero
DISCRETE_STRUCTURES: Dict[str, np.ndarray] = {
    "M1": np.array([[1, 2], [2, 2]]),
    "M2": np.array([[1, 1], [2, 2]]),
    "M3": np.array([[1, 2], [2, 1]]),
    "M4": np.array([[1, 0], [0, 2]]),
    "M5": np.array([[1, 2], [1, 2]]),
}

# (susceptible-age powers, infectious-age powers) entering log q
LOGLINEAR_FORMS: Dict[str, Tuple[Tuple[int, ...], Tuple[int, ...]]] = {
    "M6": ((1,), ()),
    "M7": ((1, 2), ()),
    "M8": ((), (1,)),
    "M9": ((), (1, 2)),
    "M10": ((1,), (1,)),
}


class ProportionalityModel(ABC):
    """Abstract base class for proportionality structures."""

    family: str = ""

    def __init__(self, name: str, contact_filter: str = "C3", split_age: float = DEFAULT_SPLIT_AGE):
        self.name = name
        self.contact_filter = contact_filter
        self.split_age = split_age

    @property
    @abstractmethod
    def param_names(self) -> Tuple[str, ...]:
        pass

    @property
    def n_params(self) -> int:
        return len(self.param_names)

    @abstractmethod
    def q_matrix(self, params: Sequence[float], grid: AgeGrid) -> np.ndarray:
        """q_ij on ``grid`` for the given parameters."""

    @abstractmethod
    def to_optimizer(self, params: Sequence[float]) -> np.ndarray:
        """Unconstrained optimizer coordinates for ``params``."""

    @abstractmethod
    def from_optimizer(self, theta: Sequence[float]) -> np.ndarray:
        pass

    @abstractmethod
    def initial_params(self, scale: float) -> np.ndarray:
        """Start with q close to a constant ``scale``."""

    def diagnostics(self, params: Sequence[float]) -> List[str]:
        return []

    def __repr__(self) -> str:
        return f"{type(self).__name__}({self.name!r}, contact_filter={self.contact_filter!r})"


class ConstantProportionality(ProportionalityModel):
    """q constant over both ages."""

    family = "constant"

    @property
    def param_names(self) -> Tuple[str, ...]:
        return ("q",)

    def q_matrix(self, params, grid):
        (q,) = np.asarray(params, dtype=float)
        return np.full((grid.n_classes, grid.n_classes), q)

    def to_optimizer(self, params):
        return np.log(np.maximum(np.asarray(params, dtype=float), 1e-300))

    def from_optimizer(self, theta):
        return np.exp(np.asarray(theta, dtype=float))

    def initial_params(self, scale):
        return np.array([scale])


class DiscreteProportionality(ProportionalityModel):
    """Two age groups split at ``split_age``; gamma_1, gamma_2 placed by a 2x2 structure."""

    family = "discrete"

    def __init__(self, name: str, contact_filter: str = "C3", split_age: float = DEFAULT_SPLIT_AGE):
        super().__init__(name, contact_filter, split_age)
        self.structure = DISCRETE_STRUCTURES[name]

    @property
    def param_names(self) -> Tuple[str, ...]:
        return ("gamma_1", "gamma_2")

    def groups(self, grid: AgeGrid) -> np.ndarray:
        """0 for classes whose midpoint lies below the split age, 1 otherwise."""
        return (grid.midpoints >= self.split_age).astype(int)

    def q_matrix(self, params, grid):
        params = np.asarray(params, dtype=float)
        group = self.groups(grid)
        cells = self.structure[group[:, None], group[None, :]]
        return np.concatenate([[0.0], params])[cells]

    def to_optimizer(self, params):
        return np.log(np.maximum(np.asarray(params, dtype=float), 1e-300))

    def from_optimizer(self, theta):
        return np.exp(np.asarray(theta, dtype=float))

    def initial_params(self, scale):
        return np.array([scale, scale])


class LoglinearProportionality(ProportionalityModel):
    """log q = gamma_0 + polynomial terms in susceptible age a and/or infectious age a'."""

    family = "loglinear"

    def __init__(self, name: str, contact_filter: str = "C3", split_age: float = DEFAULT_SPLIT_AGE):
        super().__init__(name, contact_filter, split_age)
        self.row_powers, self.col_powers = LOGLINEAR_FORMS[name]

    @property
    def param_names(self) -> Tuple[str, ...]:
        return tuple(f"gamma_{i}" for i in range(1 + len(self.row_powers) + len(self.col_powers)))

    def q_matrix(self, params, grid):
        params = np.asarray(params, dtype=float)
        a = grid.midpoints
        log_q = np.full((grid.n_classes, grid.n_classes), params[0])
        k = 1
        for power in self.row_powers:
            log_q += params[k] * (a ** power)[:, None]
            k += 1
        for power in self.col_powers:
            log_q += params[k] * (a ** power)[None, :]
            k += 1
        return np.exp(np.clip(log_q, -700.0, 700.0))

    def q_curve(self, params: Sequence[float], ages: Sequence[float]) -> np.ndarray:
        """q(a, a) at the given ages; the one-dimensional curve for M6-M9."""
        params = np.asarray(params, dtype=float)
        a = np.asarray(ages, dtype=float)
        powers = list(self.row_powers) + list(self.col_powers)
        log_q = params[0] + sum(params[k + 1] * a ** p for k, p in enumerate(powers))
        return np.exp(np.clip(log_q, -700.0, 700.0))

    def to_optimizer(self, params):
        return np.asarray(params, dtype=float).copy()

    def from_optimizer(self, theta):
        return np.asarray(theta, dtype=float).copy()

    def initial_params(self, scale):
        params = np.zeros(self.n_params)
        params[0] = np.log(scale)
        return params

    def diagnostics(self, params):
        params = np.asarray(params, dtype=float)
        if self.col_powers and params[1 + len(self.row_powers)] > 0:
            logger.warning("model %s: q increases exponentially with the age of the infectious person", self.name)
            return ["increasing_in_infectious_age"]
        return []


class ProportionalityModelFactory:
    """Factory for creating proportionality models by name."""

    MODELS: Dict[str, Type[ProportionalityModel]] = {
        **{f"C{i}": ConstantProportionality for i in range(1, 6)},
        **{name: DiscreteProportionality for name in DISCRETE_STRUCTURES},
        **{name: LoglinearProportionality for name in LOGLINEAR_FORMS},
    }

    @classmethod
    def create_model(cls, name: str, contact_filter: Optional[str] = None,
                     split_age: float = DEFAULT_SPLIT_AGE) -> ProportionalityModel:
        """Create a model; C1..C5 carry their own contact filter, M models use ``contact_filter``."""
        model_class = cls.MODELS.get(name)
        if not model_class:
            raise ConfigError(f"Unknown proportionality model: {name}")
        if model_class is ConstantProportionality:
            return model_class(name, contact_filter=name, split_age=split_age)
        return model_class(name, contact_filter=contact_filter or "C3", split_age=split_age)

    @classmethod
    def list_models(cls) -> List[str]:
        return list(cls.MODELS.keys())
