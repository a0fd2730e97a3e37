"""Parser combinators over word lists

Used for command arguments, config file values and the bench corpus
mini-language. A parser consumes a prefix of the given words and reports how
many it processed.
"""
import re
from abc import ABC, abstractmethod
from enum import Enum
from typing import Any, Callable, Generic, List, Optional, Tuple, Type, TypeVar, cast

Parsed = TypeVar("Parsed")
T = TypeVar("T")
T1 = TypeVar("T1")
T2 = TypeVar("T2")

class ParseResult(ABC, Generic[Parsed]):
    def __str__(self) -> str:
        return self.__repr__()

    @abstractmethod
    def __repr__(self) -> str:
        pass

    def __eq__(self, other: object) -> bool:
        if isinstance(self, ParseOK) and isinstance(other, ParseOK):
            return (self.value, self.processed) == (other.value, other.processed)
        if isinstance(self, ParseFail) and isinstance(other, ParseFail):
            return (self.message, self.processed) == (other.message, other.processed)
        return False

class ParseOK(ParseResult[Parsed]):
    value: Parsed
    processed: int
    """How many words were consumed"""

    def __init__(self, value: Parsed, processed: int) -> None:
        self.value = value
        self.processed = processed

    def __repr__(self) -> str:
        value = f"\"{self.value}\"" if isinstance(self.value, str) else str(self.value)
        return f"ParseOK({value}, {self.processed})"

class ParseFail(ParseResult[Parsed]):
    message: str
    processed: int
    """Position of the offending word"""

    def __init__(self, message: str, processed: int) -> None:
        self.message = message
        self.processed = processed

    def forward(self, processed: int, message: Optional[str] = None) -> "ParseFail[Any]":
        return ParseFail(message=self.message + ("" if message is None else " " + message),
                         processed=self.processed + processed)

    def __repr__(self) -> str:
        return f"ParseFail(\"{self.message}\", {self.processed})"

class Parser(ABC, Generic[Parsed]):
    def __call__(self, args: List[str]) -> ParseResult[Parsed]:
        return self.parse(args)

    @abstractmethod
    def parse(self, args: List[str]) -> ParseResult[Parsed]:
        pass

def parse_all(parser: Parser[T], args: List[str]) -> T:
    """Parse every word or raise ValueError with the failure message"""
    result = Remaining(parser).parse(args)
    if isinstance(result, ParseFail):
        raise ValueError(result.message)
    assert isinstance(result, ParseOK)
    return result.value

class AnyStr(Parser[str]):
    def parse(self, args: List[str]) -> ParseResult[str]:
        if len(args) == 0:
            return ParseFail("No argument provided", processed=0)
        return ParseOK(args[0], processed=1)

class Regex(Parser[Tuple[Optional[str], ...]]):
    """Matches one whole word, captures its groups"""
    regex: "re.Pattern[str]"

    def __init__(self, regex: str, flags: int = 0) -> None:
        self.regex = re.compile(regex, flags=flags)

    def parse(self, args: List[str]) -> ParseResult[Tuple[Optional[str], ...]]:
        if len(args) == 0:
            return ParseFail("No argument provided", processed=0)
        match = self.regex.fullmatch(args[0])
        if match:
            return ParseOK(match.groups(), processed=1)
        return ParseFail(f"Failed to match {self.regex.pattern} with {args[0]}", processed=0)

class _Number(Parser[T]):
    parser: Regex
    convert: List[Callable[[str], T]]

    def __init__(self, regex: str, convert: Callable[[str], T]) -> None:
        self.parser = Regex(regex)
        self.convert = [convert]

    def parse(self, args: List[str]) -> ParseResult[T]:
        result = self.parser.parse(args)
        if isinstance(result, ParseFail):
            return ParseFail(f"Invalid number \"{args[0]}\"" if args else result.message, processed=0)
        assert isinstance(result, ParseOK)
        return ParseOK(self.convert[0](cast(str, result.value[0])), processed=1)

class Int(_Number[int]):
    def __init__(self) -> None:
        super().__init__(r"([-+]?[0-9]+)", int)

class Float(_Number[float]):
    def __init__(self) -> None:
        super().__init__(r"([-+]?(?:[0-9]+(?:\.[0-9]*)?|\.[0-9]+)(?:[eE][-+]?[0-9]+)?)", float)

class Bool(Parser[bool]):
    def parse(self, args: List[str]) -> ParseResult[bool]:
        if len(args) == 0:
            return ParseFail("No argument provided", processed=0)
        value = args[0].lower()
        if value in ("on", "true", "yes", "1"):
            return ParseOK(True, processed=1)
        elif value in ("off", "false", "no", "0"):
            return ParseOK(False, processed=1)
        return ParseFail(f"Invalid argument \"{args[0]}\" for boolean", processed=0)

TEnum = TypeVar("TEnum", bound=Enum)

class OneOfEnumValue(Generic[TEnum], Parser[TEnum]):
    enum: Type[TEnum]

    def __init__(self, enum: Type[TEnum]) -> None:
        self.enum = enum

    def parse(self, args: List[str]) -> ParseResult[TEnum]:
        if len(args) == 0:
            return ParseFail("No argument provided", processed=0)
        for member in self.enum:
            if str(member.value).lower() == args[0].lower():
                return ParseOK(member, processed=1)
        valid_values = ", ".join(str(member.value) for member in self.enum)
        return ParseFail(f"Expected one of {valid_values}", processed=0)

class Keyword(Parser[T]):
    """A fixed word followed by the given parser; only the latter is captured"""
    keyword: str
    parser: Parser[T]

    def __init__(self, keyword: str, parser: Parser[T]) -> None:
        self.keyword = keyword
        self.parser = parser

    def parse(self, args: List[str]) -> ParseResult[T]:
        if len(args) == 0:
            return ParseFail("No argument provided", processed=0)
        if args[0].lower() != self.keyword.lower():
            return ParseFail(f"Expected {self.keyword}", processed=0)
        result = self.parser(args[1:])
        if isinstance(result, ParseFail):
            return result.forward(message=f"after {self.keyword}", processed=1)
        assert isinstance(result, ParseOK)
        return ParseOK(result.value, processed=1 + result.processed)

class Map(Generic[T1, T2], Parser[T2]):
    parser: Parser[T1]
    map: List[Callable[[T1], T2]]

    def __init__(self, map: Callable[[T1], T2], parser: Parser[T1]) -> None:
        self.parser = parser
        self.map = [map]

    def parse(self, args: List[str]) -> ParseResult[T2]:
        result = self.parser.parse(args)
        if isinstance(result, ParseFail):
            return result.forward(processed=0)
        assert isinstance(result, ParseOK)
        try:
            return ParseOK(self.map[0](result.value), processed=result.processed)
        except ValueError as exn:
            return ParseFail(str(exn), processed=0)

class List_(Parser[List[T]]):
    """Zero or more repetitions"""
    parser: Parser[T]

    def __init__(self, parser: Parser[T]) -> None:
        self.parser = parser

    def parse(self, args: List[str]) -> ParseResult[List[T]]:
        values: List[T] = []
        processed = 0
        while processed < len(args):
            result = self.parser(args[processed:])
            if not isinstance(result, ParseOK):
                break
            if result.processed == 0:
                return ParseFail("List element parser consumed nothing, cannot iterate list", processed=processed)
            values.append(result.value)
            processed += result.processed
        return ParseOK(values, processed=processed)

class Adjacent(Parser[Tuple[T1, T2]]):
    """Left then right parser on the words that follow"""
    parser_left: Parser[T1]
    parser_right: Parser[T2]

    def __init__(self, parser_left: Parser[T1], parser_right: Parser[T2]) -> None:
        self.parser_left = parser_left
        self.parser_right = parser_right

    def parse(self, args: List[str]) -> ParseResult[Tuple[T1, T2]]:
        left = self.parser_left(args)
        if isinstance(left, ParseFail):
            return left.forward(processed=0)
        assert isinstance(left, ParseOK)
        right = self.parser_right(args[left.processed:])
        if isinstance(right, ParseFail):
            return right.forward(processed=left.processed)
        assert isinstance(right, ParseOK)
        return ParseOK((left.value, right.value), processed=left.processed + right.processed)

class SomeOf(Parser[Tuple[Optional[Any], ...]]):
    """Each parser at most once, in any order; missing ones give None

    Values are returned in the order of the parsers."""
    parsers: Tuple[Parser[Any], ...]

    def __init__(self, *parsers: Parser[Any]) -> None:
        assert parsers, "SomeOf: expected at least one parser"
        self.parsers = parsers

    def parse(self, args: List[str]) -> ParseResult[Tuple[Optional[Any], ...]]:
        results: List[Optional[Any]] = [None] * len(self.parsers)
        pending = list(range(len(self.parsers)))
        processed = 0
        matched = True
        while matched and pending:
            matched = False
            for index in list(pending):
                result = self.parsers[index].parse(args[processed:])
                if isinstance(result, ParseOK):
                    results[index] = result.value
                    processed += result.processed
                    pending.remove(index)
                    matched = True
        return ParseOK(tuple(results), processed=processed)

class Remaining(Parser[T]):
    """Requires the underlying parser to consume every word"""
    parser: Parser[T]

    def __init__(self, parser: Parser[T]) -> None:
        self.parser = parser

    def parse(self, args: List[str]) -> ParseResult[T]:
        result = self.parser.parse(args)
        if isinstance(result, ParseOK) and result.processed != len(args):
            return ParseFail(f"Extraneous input \"{args[result.processed]}\"", processed=result.processed)
        return result

class Split(Parser[T]):
    """Splits one word at a separator and parses the pieces completely"""
    separator: str
    parser: Parser[T]

    def __init__(self, separator: str, parser: Parser[T]) -> None:
        self.separator = separator
        self.parser = parser

    def parse(self, args: List[str]) -> ParseResult[T]:
        if len(args) == 0:
            return ParseFail("No argument provided", processed=0)
        pieces = args[0].split(self.separator)
        result = Remaining(self.parser).parse(pieces)
        if isinstance(result, ParseFail):
            return ParseFail(f"{result.message} in \"{args[0]}\"", processed=0)
        assert isinstance(result, ParseOK)
        return ParseOK(result.value, processed=1)
