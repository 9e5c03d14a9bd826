from pydantic import ValidationError


class HarKitError(Exception):
    """Base exception for har-kit"""

    exit_code = 4

    def __init__(self, message: str, error_code: str | None = None):
        self.error_code = error_code
        super().__init__(f"{error_code}: {message}" if error_code else message)


class DimensionError(HarKitError):
    """Raised when tensor or model shapes do not conform"""

    def __init__(self, message: str):
        super().__init__(message, error_code="HK001")


class DomainError(HarKitError):
    """Raised when a label or class id lies outside its valid range"""

    def __init__(self, message: str):
        super().__init__(message, error_code="HK002")


class ContractError(HarKitError):
    """Raised when an operation is called outside its contract"""

    def __init__(self, message: str):
        super().__init__(message, error_code="HK003")


class StateError(HarKitError):
    """Raised when a tape is reused without being reset"""

    def __init__(self, message: str):
        super().__init__(message, error_code="HK004")


class HierarchyParseError(HarKitError):
    """Raised when a hierarchy file violates the partition format"""

    exit_code = 2

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message, error_code="HK010")


class SpecError(HarKitError):
    """Raised when an attack, training or synthesis spec is invalid"""

    exit_code = 2

    def __init__(self, message: str):
        super().__init__(message, error_code="HK011")


class NoCrossCoarseTargetError(HarKitError):
    """Raised when a hierarchical attack has no eligible target"""

    def __init__(self, message: str):
        super().__init__(message, error_code="HK020")


class TrainingError(HarKitError):
    """Raised when training cannot proceed, with epoch/sample/class context"""

    def __init__(
        self,
        message: str,
        epoch: int | None = None,
        component: str | None = None,
    ):
        self.epoch = epoch
        self.component = component
        context = []
        if component is not None:
            context.append(f"component {component}")
        if epoch is not None:
            context.append(f"epoch {epoch}")
        if context:
            message = f"{message} ({', '.join(context)})"
        super().__init__(message, error_code="HK030")


class UndefinedMetricError(HarKitError):
    """Raised when a metric has an empty denominator"""

    def __init__(self, message: str):
        super().__init__(message, error_code="HK040")


class IntegrityError(HarKitError):
    """Base class for on-disk artifact integrity failures"""

    exit_code = 3


class CorruptCheckpointError(IntegrityError):
    def __init__(self, message: str):
        super().__init__(message, error_code="HK050")


class CorruptDataError(IntegrityError):
    def __init__(self, message: str):
        super().__init__(message, error_code="HK051")


class HierarchyMismatchError(IntegrityError):
    """Raised when an artifact was produced under a different hierarchy"""

    def __init__(self, expected: str, found: str):
        self.expected = expected
        self.found = found
        super().__init__(
            f"hierarchy hash {found} does not match expected {expected}",
            error_code="HK052",
        )


HAR_ERRORS = {
    "HK001": "Tensor or model dimensions do not conform",
    "HK002": "Label or class id out of range",
    "HK003": "Operation called outside its contract",
    "HK004": "Tape already consumed; reset before calling backward again",
    "HK010": "Hierarchy file is not a valid partition",
    "HK011": "Invalid spec",
    "HK020": "No fine label outside the true coarse class",
    "HK030": "Training failed",
    "HK040": "Metric undefined for an empty set",
    "HK050": "Checkpoint is corrupt or has an unsupported version",
    "HK051": "Dataset file is corrupt",
    "HK052": "Artifact was produced under a different hierarchy",
}

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_INTEGRITY = 3
EXIT_RUNTIME = 4


def exit_code_for(e: BaseException) -> int:
    """
    Maps an exception raised while running a command to the CLI exit code.
    """
    if isinstance(e, HarKitError):
        return e.exit_code
    if isinstance(e, ValidationError):
        return EXIT_USAGE
    if isinstance(e, FileNotFoundError):
        return EXIT_USAGE
    return EXIT_RUNTIME


def describe_error(e: BaseException) -> str:
    """
    One-line message for a failed command, led by the code table entry when the
    error carries a known har-kit code.
    """
    if isinstance(e, HarKitError) and e.error_code in HAR_ERRORS:
        return f"{HAR_ERRORS[e.error_code]} ({e})"
    return str(e)
