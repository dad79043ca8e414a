"""Exception taxonomy. Every error carries a machine-readable category
that the CLI maps to its exit status and JSON error report."""


class LruOnlineError(Exception):
    category = "error"


class ConfigurationError(LruOnlineError):
    category = "configuration"


class ContractViolationError(LruOnlineError):
    category = "contract"


class SchemaError(LruOnlineError):
    category = "schema"


class ImputationError(LruOnlineError):
    category = "imputation"


class TrainingError(LruOnlineError):
    category = "training"


class CheckpointError(LruOnlineError):
    category = "checkpoint"


class CompatibilityError(LruOnlineError):
    category = "compatibility"


class UsageError(LruOnlineError):
    category = "usage"
