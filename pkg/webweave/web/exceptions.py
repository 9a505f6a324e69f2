# pylint: disable=super-init-not-called


class WebweaveExceptionError(Exception):
    exit_code = 1


class WebweaveConfigError(WebweaveExceptionError):
    """The experiment config does not validate against the published schema."""

    exit_code = 2

    def __init__(self, violations):
        self.violations = list(violations)
        lines = ", ".join(f"{v['path']}: {v['message']}" for v in self.violations)
        super().__init__(f"Config has {len(self.violations)} violation(s): {lines}")


class WebweaveParameterError(WebweaveExceptionError):
    exit_code = 3


class WebweaveWindowError(WebweaveParameterError):
    pass


class UnsupportedLawError(WebweaveParameterError):
    pass


class EmptyPathSetError(WebweaveParameterError):
    pass


class WebweaveDiagnosticError(WebweaveParameterError):
    pass


class WebweaveResourceLimitError(WebweaveExceptionError):
    """
    A requested object would exceed the configured memory budget.

    Raised before any allocation happens, so the message always carries
    both the requested size and the limit in force.
    """

    exit_code = 4
