"""Exception types raised across the package."""


class ContractViolation(ValueError):
    """An operation was called with inputs outside its documented domain."""


class PredicateKindError(TypeError):
    """A filter predicate was applied to an attribute of the wrong kind."""


class SchemaMismatchError(ValueError):
    """Features and model disagree on the feature schema."""


class ModelFormatError(ValueError):
    """A serialized model or graph file is corrupt or has the wrong version."""


class SelectivityError(ValueError):
    """A requested selectivity bucket cannot be hit on the given attributes."""


class InputMismatchError(ValueError):
    """Paired inputs (dataset, ground truth, index) were produced from different sources."""
