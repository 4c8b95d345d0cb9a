"""Exception hierarchy shared across the package.

Everything raised on purpose derives from ``CbrError`` so callers (the CLI in
particular) can map failures onto exit codes without catching bare
``Exception``.
"""

from __future__ import annotations


class CbrError(Exception):
    """Base class for all package errors."""


class DataError(CbrError):
    """Bad input data: unparsable files, unknown labels, broken invariants."""


class UnknownRiskType(DataError, ValueError):
    def __init__(self, label: str):
        super().__init__(f"unknown risk type: {label!r}")
        self.label = label


class UnknownManeuver(DataError, ValueError):
    def __init__(self, label: str):
        super().__init__(f"unknown evasive maneuver: {label!r}")
        self.label = label


class ParseError(DataError):
    def __init__(self, line_no: int, message: str, path: str | None = None):
        where = f"{path}:{line_no}" if path else f"line {line_no}"
        super().__init__(f"{where}: {message}")
        self.line_no = line_no
        self.path = path


class DimensionMismatch(DataError):
    def __init__(self, case_id: str, expected: int, got: int):
        super().__init__(f"case {case_id!r}: embedding has {got} components, store expects {expected}")
        self.case_id = case_id
        self.expected = expected
        self.got = got


class DuplicateCaseId(DataError):
    def __init__(self, case_id: str):
        super().__init__(f"duplicate case_id {case_id!r}")
        self.case_id = case_id


class DuplicateEventId(DataError):
    def __init__(self, event_id: str, line_no: int | None = None):
        where = f" (line {line_no})" if line_no is not None else ""
        super().__init__(f"duplicate event_id {event_id!r}{where}")
        self.event_id = event_id
        self.line_no = line_no


class InvalidDecision(DataError):
    pass


class MissingValueField(DataError):
    def __init__(self, event_id: str, field: str):
        super().__init__(f"event {event_id!r} has no value for {field!r}")
        self.event_id = event_id
        self.field = field


class MissingEmbedding(DataError):
    def __init__(self, case_id: str):
        super().__init__(f"case {case_id!r} has no embedding")
        self.case_id = case_id


class EmbeddingModelMismatch(DataError):
    pass


class LengthMismatch(DataError, ValueError):
    pass


class ZeroVector(DataError, ValueError):
    pass


class ShotMismatch(DataError, ValueError):
    pass


class InsufficientType(DataError):
    def __init__(self, risk_type, available: int, quota: int):
        super().__init__(f"{risk_type}: {available} events available, test quota is {quota}")
        self.risk_type = risk_type
        self.available = available
        self.quota = quota


class AlignmentError(DataError):
    def __init__(self, event_id: str):
        super().__init__(f"no gold entry aligned with record for event {event_id!r}")
        self.event_id = event_id


class MissingCell(CbrError):
    def __init__(self, cell_key: str):
        super().__init__(f"cell {cell_key} has no completed results")
        self.cell_key = cell_key


# structured-output extraction


class ExtractionError(DataError):
    pass


class NoObjectFound(ExtractionError):
    def __init__(self):
        super().__init__("no well-formed JSON object in model output")


class MissingField(ExtractionError):
    def __init__(self, name: str):
        super().__init__(f"model output is missing field {name!r}")
        self.name = name


# gateway


class GatewayError(CbrError):
    pass


class TransportError(GatewayError):
    pass


class GatewayTimeout(GatewayError, TimeoutError):
    pass


class ServiceError(GatewayError):
    def __init__(self, status: int, body: str = ""):
        super().__init__(f"service returned HTTP {status}: {body[:200]}")
        self.status = status
        self.body = body


class MalformedResponse(GatewayError):
    pass


class EmptyVector(GatewayError):
    def __init__(self):
        super().__init__("embedding service returned an empty vector")
