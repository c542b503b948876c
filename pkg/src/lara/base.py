"""Estimator plumbing: parameter introspection and input validation.

``ParamsMixin`` implements the get_params/set_params contract that
scikit-learn's ``clone`` and search utilities duck-type against, without
pulling in scikit-learn itself: constructor arguments are hyperparameters,
stored verbatim; attributes learned in ``fit`` carry a trailing underscore.
"""

from __future__ import annotations

import inspect


class ParamsMixin:
    @classmethod
    def _param_names(cls):
        signature = inspect.signature(cls.__init__)
        return sorted(
            name
            for name, p in signature.parameters.items()
            if name != "self" and p.kind not in (p.VAR_POSITIONAL, p.VAR_KEYWORD)
        )

    def get_params(self, deep=True):
        return {name: getattr(self, name) for name in self._param_names()}

    def set_params(self, **params):
        valid = set(self._param_names())
        for name, value in params.items():
            if name not in valid:
                raise ValueError(
                    f"invalid parameter {name!r} for {type(self).__name__}; "
                    f"valid parameters are {sorted(valid)}"
                )
            setattr(self, name, value)
        return self

    def __repr__(self):
        args = ", ".join(
            f"{name}={getattr(self, name)!r}" for name in self._param_names()
        )
        return f"{type(self).__name__}({args})"


def check_is_fitted(estimator, attributes):
    for attr in attributes:
        if not hasattr(estimator, attr):
            raise RuntimeError(
                f"this {type(estimator).__name__} instance is not fitted yet; "
                "call fit before using this method"
            )


def check_text_pairs(X, y, where="fit"):
    """Validate parallel lists of non-empty strings; returns them as lists."""
    X = list(X)
    y = list(y)
    if len(X) != len(y):
        raise ValueError(f"{where}: X and y have different lengths ({len(X)} vs {len(y)})")
    if not X:
        raise ValueError(f"{where}: need at least one example")
    for i, (xi, yi) in enumerate(zip(X, y)):
        if not isinstance(xi, str) or not xi:
            raise ValueError(f"{where}: X[{i}] must be a non-empty string")
        if not isinstance(yi, str) or not yi:
            raise ValueError(f"{where}: y[{i}] must be a non-empty string")
    return X, y


def check_texts(X, where="predict"):
    X = list(X)
    if not X:
        raise ValueError(f"{where}: need at least one input")
    for i, xi in enumerate(X):
        if not isinstance(xi, str) or not xi:
            raise ValueError(f"{where}: X[{i}] must be a non-empty string")
    return X
