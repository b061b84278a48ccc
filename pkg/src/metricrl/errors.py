"""Exception hierarchy. Each class carries the CLI exit code it maps to."""


class MetricRLError(Exception):
    exit_code = 1


class UsageError(MetricRLError):
    exit_code = 1


class ConfigError(MetricRLError):
    exit_code = 1


class DataError(MetricRLError):
    exit_code = 2


class DatasetIOError(DataError):
    pass


class ResourceError(DataError):
    pass


class TrainingError(MetricRLError):
    exit_code = 3

    def __init__(self, message, batch_index=None, batch=None):
        super().__init__(message)
        self.batch_index = batch_index
        self.batch = batch
