# -*- coding: utf-8 -*-
import contextlib
import contextvars
import json
import logging
import math
import os
import tempfile
import time
from hashlib import sha1
from threading import Event, Semaphore, Thread

import numpy as np

try:
    from tqdm import tqdm
except ImportError:
    tqdm = None

log = logging.getLogger('asdl')
_logcontext = contextvars.ContextVar('asdl_logcontext', default={})


class ContextFilter(logging.Filter):
    """ Logging filter that stamps every record with the running pipeline context
        (``stage``, ``seed`` and ``confighash``) so that sweeps can be audited from the log.
        The context is held per thread of execution; see :func:`logContext`.
    """

    def __init__(self, **context):
        super(ContextFilter, self).__init__()
        self.defaults = {'stage': '-', 'seed': '-', 'confighash': '-'}
        self.defaults.update(context)

    @property
    def context(self):
        return dict(self.defaults, **_logcontext.get())

    def filter(self, record):
        for key, value in self.context.items():
            if not hasattr(record, key):
                setattr(record, key, value)
        return True


@contextlib.contextmanager
def logContext(**context):
    """ Updates the context stamped on log records until the block exits. Only the current
        thread, and threads it starts through :func:`threaded`, see the change.
    """
    values = dict(_logcontext.get())
    values.update({key: '-' if value is None else value for key, value in context.items()})
    token = _logcontext.set(values)
    try:
        yield values
    finally:
        _logcontext.reset(token)


def cast(func, value):
    """ Cast the specified value to the specified type (returned by func). Currently this
        only support str, int, float, bool. Should be extended if needed.

        Parameters:
            func (func): Callback function to used cast to type (int, bool, float).
            value (any): value to be cast and returned.
    """
    if value is None:
        return value
    if func == bool:
        if isinstance(value, str):
            value = value.strip().lower()
        if value in (1, True, "1", "true", "yes", "on"):
            return True
        if value in (0, False, "0", "false", "no", "off"):
            return False
        raise ValueError(value)

    if func in (int, float):
        try:
            return func(value)
        except ValueError:
            if func == float and str(value).strip().lower() in ('inf', '+inf', 'clean'):
                return math.inf
            return float('nan')
    return func(value)


def toList(value, itemcast=None, delim=','):
    """ Returns a list of strings from the specified value.

        Parameters:
            value (str): comma delimited string to convert to list.
            itemcast (func): Function to cast each list item to (default str).
            delim (str): string delimiter (optional; default ',').
    """
    value = value or ''
    itemcast = itemcast or str
    return [itemcast(item.strip()) for item in value.split(delim) if item.strip() != '']


def toRanges(value, itemcast=float, delim=',', sep='-'):
    """ Returns a list of (start, end) tuples from a string such as ``'0.2-0.9, 1.1-1.8'``.
        A leading minus sign on a value is kept (``'-10:5'`` style knots use :func:`toPairs`).
    """
    pairs = []
    for item in toList(value, delim=delim):
        head, _, tail = item.partition(sep)
        pairs.append((itemcast(head), itemcast(tail)))
    return pairs


def toPairs(value, itemcast=float, delim=',', sep=':'):
    """ Returns a list of (a, b) tuples from a string such as ``'0.0:-10, 2.0:10'``. """
    pairs = []
    for item in toList(value, delim=delim):
        head, _, tail = item.partition(sep)
        pairs.append((itemcast(head), itemcast(tail)))
    return pairs


def threaded(callback, listargs, workers=None):
    """ Returns the result of <callback> for each set of `*args` in listargs. Calls run
        concurrently in separate threads, at most <workers> at a time; results keep the
        order of listargs regardless of completion order.

        Parameters:
            callback (func): Callback function to apply to each set of `*args`.
            listargs (list): List of lists; `*args` to pass each thread.
            workers (int): Maximum number of concurrent threads (default: one per item).
    """
    if workers is not None and workers <= 1:
        return [callback(*args) for args in listargs]
    results = [None] * len(listargs)
    errors = [None] * len(listargs)
    slots = Semaphore(workers or max(len(listargs), 1))
    failed = Event()

    def _run(i, args):
        try:
            results[i] = callback(*args)
        except Exception as err:  # pragma: no cover
            errors[i] = err
            failed.set()
        finally:
            slots.release()

    threads = []
    for i, args in enumerate(listargs):
        slots.acquire()
        if failed.is_set():
            slots.release()
            break
        threads.append(Thread(target=contextvars.copy_context().run, args=(_run, i, list(args))))
        threads[-1].daemon = True
        threads[-1].start()
    while not all(not t.is_alive() for t in threads):
        time.sleep(0.01)
    for err in errors:
        if err is not None:
            raise err
    return results


def progress(iterable, showstatus=False, **kwargs):
    """ Wraps <iterable> in a tqdm progress bar when requested and available. """
    if showstatus and tqdm:  # pragma: no cover
        return tqdm(iterable, **kwargs)
    return iterable


def configHash(obj):
    """ Returns a short SHA1 hash of the canonical JSON form of <obj>. """
    return sha1hash(toJson(obj))[:12]


def sha1hash(text):
    """ Returns the SHA1 hex digest of <text>. """
    return sha1(text.encode('utf-8')).hexdigest()


def toJson(obj, **kwargs):
    """ Convert an object to a JSON string. Keys are sorted, numpy values converted and
        non-finite floats written as null so the output is reproducible and valid JSON.

        Parameters:
            obj (object): The object to convert.
            **kwargs (dict): Keyword arguments to pass to ``json.dumps()``.
    """
    def clean(value):
        if isinstance(value, dict):
            return {str(k): clean(v) for k, v in value.items()}
        if isinstance(value, (list, tuple)):
            return [clean(v) for v in value]
        if isinstance(value, np.ndarray):
            return clean(value.tolist())
        if isinstance(value, (np.integer,)):
            return int(value)
        if isinstance(value, (float, np.floating)):
            value = float(value)
            return value if math.isfinite(value) else None
        if isinstance(value, (np.bool_,)):
            return bool(value)
        if hasattr(value, 'toDict'):
            return clean(value.toDict())
        return value
    kwargs.setdefault('sort_keys', True)
    return json.dumps(clean(obj), **kwargs)


@contextlib.contextmanager
def atomicWrite(path, mode='w', **kwargs):
    """ Context manager yielding a handle to a temporary file next to <path>. The file
        replaces <path> only when the block exits without error.

        Parameters:
            path (str): Final destination.
            mode (str): File mode, 'w' or 'wb'.
    """
    dirpath = os.path.dirname(os.path.abspath(path))
    os.makedirs(dirpath, exist_ok=True)
    fd, tmppath = tempfile.mkstemp(prefix='.tmp-', dir=dirpath)
    try:
        with os.fdopen(fd, mode, **kwargs) as handle:
            yield handle
        os.replace(tmppath, path)
    except BaseException:
        if os.path.exists(tmppath):
            os.remove(tmppath)
        raise


def atomicPath(path):
    """ Returns a temporary sibling path for writers that need a filename rather than a handle
        (soundfile, torch, matplotlib). Pair with :func:`commitPath`.
    """
    dirpath = os.path.dirname(os.path.abspath(path))
    os.makedirs(dirpath, exist_ok=True)
    base, ext = os.path.splitext(os.path.basename(path))
    return os.path.join(dirpath, f'.tmp-{base}-{os.getpid()}{ext}')


def commitPath(tmppath, path):
    os.replace(tmppath, path)
    return path


def writeJson(path, obj):
    """ Atomically writes <obj> to <path> as indented, key-sorted JSON. """
    with atomicWrite(path, 'w', encoding='utf-8') as handle:
        handle.write(toJson(obj, indent=2))
        handle.write('\n')
    return path


def readJson(path):
    with open(path, 'r', encoding='utf-8') as handle:
        return json.load(handle)


def nanToNone(value):
    """ Returns None for NaN or None, otherwise float(value). """
    if value is None:
        return None
    value = float(value)
    return None if math.isnan(value) else value
