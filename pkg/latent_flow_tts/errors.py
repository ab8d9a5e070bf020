class SampleRateMismatchError(ValueError):
    pass


class EmptyInputError(ValueError):
    pass


class ConfigMismatchError(ValueError):
    pass


class MissingCheckpointError(FileNotFoundError):
    pass


class ReferenceTooShortError(ValueError):
    pass


class StreamStateMismatchError(ValueError):
    pass


class NonFiniteLossError(RuntimeError):
    def __init__(self, component: str, value: float):
        super().__init__(f"loss component {component!r} is not finite ({value})")
        self.component = component


class ManifestFormatError(ValueError):
    def __init__(self, line_number: int, message: str):
        super().__init__(f"line {line_number}: {message}")
        self.line_number = line_number


class BenchmarkError(RuntimeError):
    def __init__(self, trial: int, cause: BaseException):
        super().__init__(f"benchmarked callable failed in trial {trial}: {cause!r}")
        self.trial = trial
