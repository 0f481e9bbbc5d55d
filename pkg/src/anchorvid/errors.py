"""Exception types shared across the package."""


class ConfigError(ValueError):
    """A configuration value is invalid or inconsistent."""


class SchemaError(ValueError):
    """A JSON document violates its schema.

    ``field_path`` names the offending field, e.g. ``conditions[1].anchor_frame``.
    """

    def __init__(self, field_path: str, message: str):
        self.field_path = field_path
        super().__init__(f"{field_path}: {message}")


class LayoutConflictError(ValueError):
    """Two or more conditions claim the same latent frame.

    ``collisions`` lists ``(latent_index, condition_indices)`` pairs;
    ``segment`` is set when the conflict was detected while routing
    conditions for a segmented generation.
    """

    def __init__(self, collisions, segment=None, message=None):
        self.collisions = collisions
        self.segment = segment
        where = f" in segment {segment}" if segment is not None else ""
        detail = "; ".join(
            f"latent {k}: conditions {sorted(idxs)}" for k, idxs in collisions
        )
        head = message or "condition layout conflict"
        super().__init__(f"{head}{where}: {detail}")


class NonFiniteError(RuntimeError):
    """Training or sampling produced a non-finite value.

    ``step`` is the optimizer or sampler step at which it appeared.
    """

    def __init__(self, message: str, step=None):
        self.step = step
        suffix = f" (step {step})" if step is not None else ""
        super().__init__(message + suffix)
