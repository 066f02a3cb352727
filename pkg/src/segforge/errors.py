"""Exception hierarchy. ``exit_code`` drives the CLI's process status."""


class SegforgeError(Exception):
    exit_code = 1


class ConfigError(SegforgeError):
    exit_code = 2


class DataError(SegforgeError):
    exit_code = 3


class ModelError(SegforgeError):
    exit_code = 4


# pms-data
class MissingColumn(DataError):
    pass


class DanglingForeignKey(DataError):
    pass


class NegativeLeadTime(DataError):
    pass


class UnmappedChannel(DataError):
    pass


class UnmappedTransactionCode(DataError):
    pass


class DuplicateKey(DataError):
    pass


# golden-profile
class EmptyName(DataError):
    pass


# feature-engine / timeline
class EmptyCohort(DataError):
    pass


# cluster-engine / model-select
class MismatchedSchema(ModelError):
    pass


SchemaMismatch = MismatchedSchema


class KOutOfRange(ModelError):
    pass


class NoElbowFound(ModelError):
    pass


class ModelMismatch(ModelError):
    pass


class EmptyTransition(ModelError):
    pass


class InvalidConfig(ConfigError):
    pass
