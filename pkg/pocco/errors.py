from __future__ import annotations

from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

__all__ = (
    "PoccoException",
    "InvalidArgument",
    "ShapeError",
    "InfeasibleAction",
    "InvalidSolution",
    "NumericalError",
    "DataFormatError",
)


class PoccoException(Exception):
    """Base exception class for pocco

    Ideally speaking, this could be caught to handle any exceptions raised from this library.
    """


def _flatten_error_list(errors: Sequence[Dict[str, Any]]) -> Dict[str, str]:
    # pydantic reports each failure as {"loc": (...), "msg": "..."}
    items: List[Tuple[str, str]] = []
    for error in errors:
        key = '.'.join(str(part) for part in error.get('loc', ())) or '<root>'
        items.append((key, error.get('msg', '')))

    return dict(items)


def _format_diagnostics(diagnostics: Dict[str, Any]) -> str:
    return ', '.join(f'{k}={v!r}' for k, v in diagnostics.items())


class InvalidArgument(PoccoException):
    """Exception that's raised when an argument to a function
    is invalid some way (e.g. wrong value, unsupported combination or a violated precondition).

    This could be considered the analogous of ``ValueError`` except inherited
    from :exc:`PoccoException`.
    """


class ShapeError(InvalidArgument):
    """Exception that's raised when array shapes do not conform to an operation.

    Attributes
    ------------
    kind: :class:`str`
        The primitive or operation that rejected its inputs.
    dims: List[Tuple[:class:`int`, ...]]
        The offending shapes, in input order.
    """

    def __init__(self, kind: str, dims: Sequence[Tuple[int, ...]], detail: str = '') -> None:
        self.kind: str = kind
        self.dims: List[Tuple[int, ...]] = [tuple(d) for d in dims]

        fmt = '{0}: shape mismatch {1}'
        if detail:
            fmt += ' ({2})'

        super().__init__(fmt.format(kind, self.dims, detail))


class InfeasibleAction(InvalidArgument):
    """Exception that's raised when a masked action is passed to an environment.

    Attributes
    -----------
    action: :class:`int`
        The rejected action.
    snapshot: :class:`dict`
        A copy of the environment state at the time of the call.
    """

    def __init__(self, action: int, snapshot: Dict[str, Any]) -> None:
        self.action: int = action
        self.snapshot: Dict[str, Any] = snapshot
        super().__init__(f'action {action} is masked in state {_format_diagnostics(snapshot)}')


class InvalidSolution(InvalidArgument):
    """Exception that's raised when an incomplete or infeasible solution is evaluated."""


class NumericalError(PoccoException):
    """Exception that's raised when a forward value, activation or loss is not finite.

    Attributes
    -----------
    diagnostics: :class:`dict`
        Context of the failure (layer index, step, loss terms...).
    """

    def __init__(self, message: str, **diagnostics: Any) -> None:
        self.diagnostics: Dict[str, Any] = diagnostics

        text = message
        if diagnostics:
            text += ' [' + _format_diagnostics(diagnostics) + ']'

        super().__init__(text)


class DataFormatError(PoccoException):
    """Exception that's raised when a file or configuration cannot be parsed.

    Attributes
    ------------
    path: Optional[:class:`str`]
        The file being read, if any.
    line: Optional[:class:`int`]
        The 1-based line number of the failure, if known.
    text: :class:`str`
        The text of the error. For configuration errors every validation
        failure is listed on its own line.
    """

    def __init__(
        self,
        message: Union[str, Sequence[Dict[str, Any]]],
        *,
        path: Optional[str] = None,
        line: Optional[int] = None,
    ) -> None:
        self.path: Optional[str] = path
        self.line: Optional[int] = line

        if isinstance(message, str):
            self.text: str = message
        else:
            errors = _flatten_error_list(message)
            self.text = '\n'.join('In %s: %s' % t for t in errors.items())

        where = ''
        if path is not None:
            where = path
            if line is not None:
                where += f':{line}'
            where += ': '

        super().__init__(where + self.text)
