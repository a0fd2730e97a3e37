import concurrent.futures
from dataclasses import dataclass
from typing import Callable, Generic, List, Sequence, TypeVar, Union

from . import log

logger = log.getLogger(__name__)

T = TypeVar('T', covariant=True)
A = TypeVar('A')
R = TypeVar('R')

@dataclass
class Value(Generic[T]):
    """Used so that exceptions and values, that can also be exceptions,
    can be differentiated from each other with instanceof"""
    value: T

def _capture(fn: Callable[[A], R], item: A) -> Union[Value[R], Exception]:
    try:
        return Value(fn(item))
    except Exception as exn:
        return exn

def map_in_threads(fn: Callable[[A], R], items: Sequence[A], max_workers: int) -> List[R]:
    """fn over items in a thread pool, results in input order; re-raises the first failure"""
    if max_workers <= 1 or len(items) <= 1:
        outcomes = [_capture(fn, item) for item in items]
    else:
        with concurrent.futures.ThreadPoolExecutor(max_workers=max_workers) as pool:
            outcomes = list(pool.map(lambda item: _capture(fn, item), items))
    results: List[R] = []
    for outcome in outcomes:
        if isinstance(outcome, Value):
            results.append(outcome.value)
        else:
            assert isinstance(outcome, Exception)
            raise outcome
    return results
