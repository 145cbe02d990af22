# -*- coding: utf-8 -*-


class AsdlException(Exception):
    """ Base class for all asdl exceptions. """
    pass


class BadRequest(AsdlException):
    """ An invalid input, generally a user error. """
    pass


class DomainError(BadRequest):
    """ A value lies outside the domain of the operation (azimuth outside the FoV, etc). """
    pass


class SizeError(BadRequest):
    """ An array or signal has the wrong length or shape. """
    pass


class ParseError(BadRequest):
    """ A label or config file could not be parsed.

        Parameters:
            message (str): Description of the problem.
            lineno (int): 1-based line number in the offending file (optional).
    """

    def __init__(self, message, lineno=None):
        if lineno is not None:
            message = f'line {lineno}: {message}'
        super(ParseError, self).__init__(message)
        self.lineno = lineno


class PreconditionError(BadRequest):
    """ The input does not satisfy a precondition of the operation. """
    pass


class ConfigError(AsdlException):
    """ Invalid or inconsistent configuration. """
    pass


class UnknownType(ConfigError):
    """ Unknown feature kind, model variant or supervision name. """
    pass


class NotFound(AsdlException):
    """ A required artifact or preset is missing. """
    pass


class Divergence(AsdlException):
    """ Training produced a non-finite loss. """
    pass
