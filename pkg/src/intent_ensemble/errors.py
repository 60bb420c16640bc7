"""Exception types shared across the package."""


class IntentEnsembleError(Exception):
    """Base class for all package errors."""


class ValidationError(IntentEnsembleError, ValueError):
    """Invalid input or configuration."""


class EmptySession(ValidationError):
    pass


class NoPositives(ValidationError):
    pass


class NoPairs(ValidationError):
    pass


class MissingBasicList(IntentEnsembleError, KeyError):
    def __init__(self, session_id, model_id):
        super().__init__(f"no basic list for session {session_id!r}, model {model_id!r}")
        self.session_id = session_id
        self.model_id = model_id

    def __str__(self):
        return self.args[0]


class UnknownItem(ValidationError):
    pass


class InsufficientTimespan(ValidationError):
    pass


class EmptySplit(ValidationError):
    pass


class PreconditionViolated(ValidationError):
    pass


class OutOfVocabulary(ValidationError, IndexError):
    pass


class NoInputBranches(ValidationError):
    pass


class NonFiniteLoss(IntentEnsembleError, ArithmeticError):
    pass


class FingerprintMismatch(ValidationError):
    pass


class TrainingDiverged(IntentEnsembleError):
    pass
