import dataclasses
import importlib
import logging
import typing

import numpy as np

from salforge.autodiff.tensor import Tensor, FLOAT64, precision, no_grad

DEFAULT_EPS = 1e-4
DEFAULT_THRESHOLD = 1e-3

CHECK_MODULES = {
    'autodiff': 'salforge.autodiff.checks',
    'nn': 'salforge.nn.checks',
    'training': 'salforge.training.checks',
}

_registry: typing.Dict[str, typing.List['GradCase']] = {}


def gradcheck(f: typing.Callable[[Tensor], Tensor], x: Tensor, eps: float = DEFAULT_EPS,
              samples: typing.Optional[int] = None, seed: int = 0) -> float:
    """
    Max over components of |analytic - central difference| / max(1, |central difference|).

    `x` is promoted to float64 in place and perturbed in place, so `f` may either use its
    argument or read a parameter collection that holds `x`. With `samples`, only that many
    randomly chosen components are compared.
    """
    if eps <= 0:
        raise ValueError(f'eps must be positive, got {eps}')

    with precision(FLOAT64):
        x.data = np.ascontiguousarray(x.data, dtype=FLOAT64)
        x.requires_grad = True
        x.grad = None

        loss = f(x)
        loss.backward()
        analytic = np.zeros_like(x.data) if x.grad is None else x.grad.copy()

        indices = np.arange(x.size)
        if samples is not None and samples < x.size:
            indices = np.random.default_rng(seed).choice(x.size, size=samples, replace=False)

        flat = x.data.reshape(-1)
        worst = 0.0
        with no_grad():
            for index in indices:
                original = flat[index]
                flat[index] = original + eps
                upper = f(x).item()
                flat[index] = original - eps
                lower = f(x).item()
                flat[index] = original

                numeric = (upper - lower) / (2 * eps)
                error = abs(analytic.reshape(-1)[index] - numeric) / max(1.0, abs(numeric))
                worst = max(worst, error)
        x.grad = None
    return worst


def samples_for(x: Tensor, per_matrix: int) -> typing.Optional[int]:
    """Every component of vectors (None), `per_matrix` random components of anything larger."""
    return None if x.data.ndim <= 1 else per_matrix


@dataclasses.dataclass
class GradCase:
    name: str
    module: str
    threshold: float
    run: typing.Callable[[], typing.Dict[str, float]]


@dataclasses.dataclass
class CheckResult:
    name: str
    module: str
    error: float
    threshold: float

    @property
    def passed(self) -> bool:
        return self.error < self.threshold


def register(module: str, threshold: float = DEFAULT_THRESHOLD):
    """Decorator adding a check to the registry; the check returns {label: max relative error}."""
    def decorator(func):
        _registry.setdefault(module, []).append(GradCase(func.__name__, module, threshold, func))
        return func
    return decorator


def cases(module: str) -> typing.List[GradCase]:
    importlib.import_module(CHECK_MODULES[module])
    return list(_registry.get(module, []))


def run_checks(modules: typing.Iterable[str]) -> typing.List[CheckResult]:
    results = []
    for module in modules:
        for case in cases(module):
            for label, error in case.run().items():
                name = case.name if label is None else f'{case.name}[{label}]'
                result = CheckResult(name, module, float(error), case.threshold)
                logging.info(f'GRADCHECK: {module}.{name} error={result.error:.3e} '
                             f'{"ok" if result.passed else "FAILED"}')
                results.append(result)
    return results
