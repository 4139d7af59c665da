"""Managed evaluation: reified results, task-group futures, promises, lazy and
memo cells, parallel combinators, and external process evaluation.

Cancellation is hierarchical and monotone: cancelling a task group cancels all
descendant groups and their member cells, pending tasks are dropped before
they run, and running tasks observe the cancellation at cooperative
checkpoints (the combinators here insert them; the contract is delivery
within ~100 ms for library-mediated work).

The four cell kinds differ in who triggers evaluation and what happens to an
interrupt observed during it:

* ``Future``   strict, runs on a worker eventually; cancellation is final.
* ``Promise``  single-assignment, fulfilled externally.
* ``Lazy``     forced by callers; an interrupt resets it to unevaluated.
* ``Memo``     like Lazy but the interrupt outcome is stored until an
               explicit restart.

Joining a future from a worker thread participates in the pool (it runs other
pending tasks while waiting), so nested fork/join cannot deadlock even with a
single worker.
"""

from __future__ import annotations

import heapq
import itertools
import os
import subprocess
import threading
import time
from contextlib import contextmanager
from dataclasses import dataclass
from typing import Any, Callable, Iterable, Optional, Sequence, Union

_serial_lock = threading.Lock()
_serial_counter = itertools.count(1)


def next_serial() -> int:
    """Globally unique, strictly increasing serial numbers."""
    with _serial_lock:
        return next(_serial_counter)


class Interrupt(BaseException):
    """Environmental cancellation; never carries a program value or serial."""


class ProgramError(Exception):
    """A program-level failure with a creation-ordered serial number."""

    def __init__(self, message: str, serial: int | None = None):
        super().__init__(message)
        self.message = message
        self.serial = next_serial() if serial is None else serial

    def __repr__(self):
        return f"ProgramError({self.message!r}, serial={self.serial})"


@dataclass(frozen=True)
class Res:
    value: Any


@dataclass(frozen=True)
class Exn:
    exn: BaseException


EvalResult = Union[Res, Exn]


def capture(f: Callable, *args) -> EvalResult:
    """Run ``f`` reifying the outcome; program errors never propagate."""
    try:
        return Res(f(*args))
    except Interrupt as exc:
        return Exn(exc)
    except ProgramError as exc:
        return Exn(exc)
    except Exception as exc:
        return Exn(ProgramError(str(exc) or type(exc).__name__))


def release(result: EvalResult):
    """Inverse of capture: return the value or re-raise exactly as captured."""
    if isinstance(result, Res):
        return result.value
    raise result.exn


def is_interrupt(result: EvalResult) -> bool:
    return isinstance(result, Exn) and isinstance(result.exn, Interrupt)


# -- task groups and the ambient task context --------------------------------


class TaskGroup:
    """Hierarchic cancellation scope.

    Cancellation is monotone (never cleared) and propagates to all descendant
    groups; member cells registered with the group are woken so blocked
    joiners observe the interrupt promptly.
    """

    _ids = itertools.count(1)

    def __init__(self, parent: Optional["TaskGroup"] = None, peer_failure: bool | None = None):
        self.id = next(TaskGroup._ids)
        self.parent = parent
        if peer_failure is None:
            peer_failure = parent.peer_failure if parent else True
        self.peer_failure = peer_failure
        self._lock = threading.Lock()
        self._event = threading.Event()
        self._children: list[TaskGroup] = []
        self._members: list[Callable[[], None]] = []
        if parent is not None:
            with parent._lock:
                parent._children.append(self)
                born_cancelled = parent._event.is_set()
            if born_cancelled:
                self.cancel()

    @property
    def cancelled(self) -> bool:
        return self._event.is_set()

    def cancel(self) -> None:
        """Idempotent; cancels this group and every descendant."""
        with self._lock:
            if self._event.is_set():
                return
            self._event.set()
            children = list(self._children)
            members = list(self._members)
        for wake in members:
            wake()
        for child in children:
            child.cancel()

    def new_child(self, peer_failure: bool | None = None) -> "TaskGroup":
        return TaskGroup(self, peer_failure)

    def register(self, wake: Callable[[], None]) -> None:
        with self._lock:
            already = self._event.is_set()
            if not already:
                self._members.append(wake)
        if already:
            wake()

    def wait_cancelled(self, timeout: float) -> bool:
        return self._event.wait(timeout)

    def on_member_failure(self) -> None:
        if self.peer_failure:
            self.cancel()


class _TaskContext(threading.local):
    group: Optional[TaskGroup] = None
    pool: Optional["WorkerPool"] = None


_context = _TaskContext()


def current_group() -> Optional[TaskGroup]:
    return _context.group


def current_pool() -> Optional["WorkerPool"]:
    return _context.pool


@contextmanager
def running_in(group: Optional[TaskGroup], pool: Optional["WorkerPool"] = None):
    prev_group, prev_pool = _context.group, _context.pool
    _context.group = group
    _context.pool = pool if pool is not None else prev_pool
    try:
        yield
    finally:
        _context.group, _context.pool = prev_group, prev_pool


def check_cancelled() -> None:
    """Cooperative cancellation checkpoint for the ambient task."""
    group = _context.group
    if group is not None and group.cancelled:
        raise Interrupt()


def interruptible_sleep(seconds: float) -> None:
    """Sleep that wakes promptly when the ambient group is cancelled."""
    group = _context.group
    if group is None:
        time.sleep(seconds)
        return
    if group.wait_cancelled(seconds):
        raise Interrupt()


# -- futures and the worker pool ---------------------------------------------

_PENDING = "pending"
_RUNNING = "running"
_DONE = "done"
_CANCELLED = "cancelled"

_WAIT_SLICE = 0.02


class Future:
    """Strict evaluation on a worker, commenced eventually unless cancelled.

    At most one transition out of pending; once the group is cancelled the
    future can never yield a value.
    """

    def __init__(self, group: TaskGroup, priority: int = 0):
        self.group = group
        self.priority = priority
        self._cond = threading.Condition()
        self._state = _PENDING
        self._result: EvalResult | None = None
        self.transitions = 0
        group.register(self._on_group_cancel)

    def _on_group_cancel(self) -> None:
        with self._cond:
            if self._state == _PENDING:
                self._state = _CANCELLED
                self.transitions += 1
            self._cond.notify_all()

    # state transitions ------------------------------------------------------

    def _try_start(self) -> bool:
        with self._cond:
            if self._state != _PENDING or self.group.cancelled:
                if self._state == _PENDING:
                    self._state = _CANCELLED
                    self.transitions += 1
                    self._cond.notify_all()
                return False
            self._state = _RUNNING
            return True

    def _finish(self, result: EvalResult) -> None:
        failed = False
        with self._cond:
            if self._state in (_DONE, _CANCELLED):
                return
            if self.group.cancelled or is_interrupt(result):
                self._state = _CANCELLED
            else:
                self._state = _DONE
                self._result = result
                failed = isinstance(result, Exn)
            self.transitions += 1
            self._cond.notify_all()
        if failed:
            self.group.on_member_failure()

    def cancel(self) -> None:
        with self._cond:
            if self._state in (_PENDING, _RUNNING):
                self._state = _CANCELLED
                self.transitions += 1
                self._cond.notify_all()

    # observation ------------------------------------------------------------

    @property
    def state(self) -> str:
        return self._state

    def is_done(self) -> bool:
        return self._state in (_DONE, _CANCELLED)

    def peek(self) -> EvalResult | None:
        with self._cond:
            if self._state == _DONE:
                return self._result
            if self._state == _CANCELLED:
                return Exn(Interrupt())
            return None

    def join_result(self, timeout: float | None = None) -> EvalResult:
        """Wait for completion, reifying cancellation as Exn(Interrupt).

        Raises Interrupt if the *caller's* group is cancelled while waiting or
        the timeout elapses.
        """
        deadline = None if timeout is None else time.monotonic() + timeout
        pool = _context.pool
        while True:
            with self._cond:
                if self._state == _DONE:
                    return self._result  # type: ignore[return-value]
                if self._state == _CANCELLED:
                    return Exn(Interrupt())
            if self.group.cancelled:
                return Exn(Interrupt())
            check_cancelled()
            if deadline is not None and time.monotonic() > deadline:
                raise Interrupt()
            if pool is not None and pool.run_one():
                continue
            with self._cond:
                if self._state in (_DONE, _CANCELLED):
                    continue
                self._cond.wait(_WAIT_SLICE)

    def join(self, timeout: float | None = None):
        """Block until completion: value, re-raised program error, or Interrupt."""
        result = self.join_result(timeout)
        if isinstance(result, Exn):
            raise result.exn
        return result.value


class _PoolTask:
    __slots__ = ("fn", "future", "seq")

    def __init__(self, fn: Callable[[], Any], future: Future, seq: int):
        self.fn = fn
        self.future = future
        self.seq = seq

    def sort_key(self):
        return (-self.future.priority, self.seq)


class WorkerPool:
    """Fixed pool of worker threads with priority scheduling.

    Higher priority runs earlier; FIFO within a priority.  ``run_one`` lets
    any thread (typically a joining worker) execute one pending task inline.
    """

    def __init__(self, workers: int | None = None, name: str = "docserve-worker"):
        self.workers = max(1, workers if workers is not None else (os.cpu_count() or 1))
        self._cond = threading.Condition()
        self._queue: list[tuple[tuple[int, int], _PoolTask]] = []
        self._seq = itertools.count()
        self._stop = False
        self._threads = [
            threading.Thread(target=self._worker, name=f"{name}-{i}", daemon=True)
            for i in range(self.workers)
        ]
        for t in self._threads:
            t.start()

    def submit(self, fn: Callable[[], Any], group: TaskGroup, priority: int = 0) -> Future:
        future = Future(group, priority)
        if group.cancelled:
            future.cancel()
            return future
        task = _PoolTask(fn, future, next(self._seq))
        with self._cond:
            if self._stop:
                future.cancel()
                return future
            _heap_push(self._queue, task)
            self._cond.notify()
        return future

    def _pop(self, block: bool) -> _PoolTask | None:
        with self._cond:
            while True:
                if self._queue:
                    return _heap_pop(self._queue)
                if self._stop or not block:
                    return None
                self._cond.wait(0.1)

    def run_one(self) -> bool:
        """Execute one pending task inline; False if the queue is empty."""
        task = self._pop(block=False)
        if task is None:
            return False
        self._execute(task)
        return True

    def _worker(self) -> None:
        while True:
            task = self._pop(block=True)
            if task is None:
                if self._stop:
                    return
                continue
            self._execute(task)

    def _execute(self, task: _PoolTask) -> None:
        future = task.future
        if not future._try_start():
            return
        with running_in(future.group, self):
            result = capture(task.fn)
        future._finish(result)

    def pending(self) -> int:
        with self._cond:
            return len(self._queue)

    def shutdown(self, timeout: float = 5.0) -> None:
        with self._cond:
            self._stop = True
            for _key, task in self._queue:
                task.future.cancel()
            self._queue.clear()
            self._cond.notify_all()
        for t in self._threads:
            t.join(timeout)


def _heap_push(queue: list, task: _PoolTask) -> None:
    heapq.heappush(queue, (task.sort_key(), task))


def _heap_pop(queue: list) -> _PoolTask:
    return heapq.heappop(queue)[1]


_default_pool: WorkerPool | None = None
_default_pool_lock = threading.Lock()


def default_pool() -> WorkerPool:
    global _default_pool
    with _default_pool_lock:
        if _default_pool is None:
            _default_pool = WorkerPool()
        return _default_pool


def _resolve_pool(pool: WorkerPool | None) -> WorkerPool:
    if pool is not None:
        return pool
    ambient = current_pool()
    if ambient is not None:
        return ambient
    return default_pool()


def fork(fn: Callable[[], Any], group: TaskGroup, priority: int = 0,
         pool: WorkerPool | None = None) -> Future:
    """Fork ``fn`` as a future task in ``group``."""
    return _resolve_pool(pool).submit(fn, group, priority)


# -- promises -----------------------------------------------------------------


class Promise:
    """Synchronized single-assignment cell other tasks can wait on."""

    def __init__(self, group: TaskGroup):
        self.group = group
        self._cond = threading.Condition()
        self._state = _PENDING
        self._value: Any = None
        self.transitions = 0
        group.register(self._wake)

    def _wake(self) -> None:
        with self._cond:
            self._cond.notify_all()

    def fulfill(self, value: Any) -> None:
        with self._cond:
            if self.group.cancelled:
                raise ProgramError("promise fulfilled after cancellation")
            if self._state == _DONE:
                raise ProgramError("promise already fulfilled")
            self._state = _DONE
            self._value = value
            self.transitions += 1
            self._cond.notify_all()

    def is_fulfilled(self) -> bool:
        return self._state == _DONE

    def join(self, timeout: float | None = None) -> Any:
        deadline = None if timeout is None else time.monotonic() + timeout
        pool = _context.pool
        while True:
            with self._cond:
                if self._state == _DONE and not self.group.cancelled:
                    return self._value
            if self.group.cancelled:
                raise Interrupt()
            check_cancelled()
            if deadline is not None and time.monotonic() > deadline:
                raise Interrupt()
            if pool is not None and pool.run_one():
                continue
            with self._cond:
                if self._state != _DONE and not self.group.cancelled:
                    self._cond.wait(_WAIT_SLICE)


# -- lazy and memo cells -------------------------------------------------------

_UNEVAL = "unevaluated"
_BUSY = "evaluating"


class Lazy:
    """Evaluated at most once by an explicit force.

    Regular results and program errors are memoized; an interrupt during
    evaluation interrupts every current waiter and resets the cell to its
    unevaluated state.
    """

    def __init__(self, thunk: Callable[[], Any]):
        self._thunk = thunk
        self._cond = threading.Condition()
        self._state = _UNEVAL
        self._result: EvalResult | None = None
        self._generation = 0
        self.transitions = 0

    def is_finished(self) -> bool:
        return self._state == _DONE

    def peek(self) -> EvalResult | None:
        with self._cond:
            return self._result if self._state == _DONE else None

    def force(self) -> Any:
        while True:
            check_cancelled()
            with self._cond:
                if self._state == _DONE:
                    return release(self._result)
                if self._state == _BUSY:
                    gen = self._generation
                    self._cond.wait(_WAIT_SLICE)
                    if self._generation != gen and self._state != _DONE:
                        # the evaluation we waited on was interrupted
                        raise Interrupt()
                    continue
                self._state = _BUSY
            try:
                result = capture(self._thunk)
            except BaseException:
                with self._cond:
                    self._state = _UNEVAL
                    self._generation += 1
                    self._cond.notify_all()
                raise
            with self._cond:
                if is_interrupt(result):
                    self._state = _UNEVAL
                    self._generation += 1
                    self._cond.notify_all()
                    raise result.exn
                self._state = _DONE
                self._result = result
                self.transitions += 1
                self._cond.notify_all()
                return release(result)


class Memo:
    """Single-assignment evaluation cell that also memoizes interrupts.

    The stored interrupt is observable until `restart` returns the cell to
    its unevaluated state; restarting a cell holding a regular outcome is an
    error, protecting result stability.
    """

    def __init__(self, thunk: Callable[[], Any]):
        self._thunk = thunk
        self._cond = threading.Condition()
        self._state = _UNEVAL
        self._result: EvalResult | None = None
        self.transitions = 0

    def peek(self) -> EvalResult | None:
        with self._cond:
            return self._result if self._state == _DONE else None

    def is_finished(self) -> bool:
        return self._state == _DONE

    def has_interrupt(self) -> bool:
        with self._cond:
            return self._state == _DONE and is_interrupt(self._result)

    def eval(self) -> EvalResult:
        """Run the expression at most once (absent restarts); never raises."""
        while True:
            group = _context.group
            if group is not None and group.cancelled:
                # the waiter itself was cancelled; leave the cell untouched
                return Exn(Interrupt())
            with self._cond:
                if self._state == _DONE:
                    return self._result  # type: ignore[return-value]
                if self._state == _BUSY:
                    self._cond.wait(_WAIT_SLICE)
                    continue
                self._state = _BUSY
            result = capture(self._thunk)
            with self._cond:
                self._state = _DONE
                self._result = result
                self.transitions += 1
                self._cond.notify_all()
            return result

    def restart(self) -> None:
        with self._cond:
            if self._state != _DONE or not is_interrupt(self._result):
                raise ProgramError("restart of a memo cell without a stored interrupt")
            self._state = _UNEVAL
            self._result = None


# -- parallel combinators ------------------------------------------------------


def parallel_map(fn: Callable[[Any], Any], items: Sequence, *,
                 pool: WorkerPool | None = None,
                 group: TaskGroup | None = None,
                 priority: int = 0) -> list:
    """Parallel map with full joining of results.

    Equals the sequential map; if elements raised program errors, the one
    with the smallest serial is re-raised after all elements completed.
    """
    items = list(items)
    if not items:
        return []
    pool = _resolve_pool(pool)
    parent = group or current_group()
    sub = TaskGroup(parent, peer_failure=False)
    futures = [pool.submit(lambda x=x: fn(x), sub, priority) for x in items]
    results = [f.join_result() for f in futures]
    errors = [r.exn for r in results
              if isinstance(r, Exn) and isinstance(r.exn, ProgramError)]
    if errors:
        raise min(errors, key=lambda e: e.serial)
    for r in results:
        if isinstance(r, Exn):
            raise r.exn
    return [r.value for r in results]


def parallel_exists(pred: Callable[[Any], bool], items: Sequence, *,
                    pool: WorkerPool | None = None,
                    group: TaskGroup | None = None,
                    chunk_size: int | None = None,
                    priority: int = 0) -> bool:
    """Parallel exists; siblings are cancelled once a witness is found."""
    items = list(items)
    if not items:
        return False
    pool = _resolve_pool(pool)
    parent = group or current_group()
    sub = TaskGroup(parent, peer_failure=False)
    if chunk_size is None:
        chunk_size = max(1, len(items) // (pool.workers * 4) or 1)
    # the witness is recorded out of band: cancelling the subgroup would
    # otherwise discard the witness task's own result
    found = threading.Event()

    def run_chunk(chunk: list) -> bool:
        for x in chunk:
            check_cancelled()
            if pred(x):
                found.set()
                sub.cancel()
                return True
        return False

    chunks = [items[i : i + chunk_size] for i in range(0, len(items), chunk_size)]
    futures = [pool.submit(lambda c=c: run_chunk(c), sub, priority) for c in chunks]
    results = [f.join_result() for f in futures]
    if found.is_set():
        return True
    errors = [r.exn for r in results
              if isinstance(r, Exn) and isinstance(r.exn, ProgramError)]
    if errors:
        raise min(errors, key=lambda e: e.serial)
    if any(isinstance(r, Exn) for r in results):
        raise Interrupt()
    return False


# -- external evaluation -------------------------------------------------------


def external_eval(command: Sequence[str] | str, input_text: str = "",
                  timeout: float | None = None) -> str:
    """Run a host process; interrupts propagate in both directions.

    Cancelling the evaluation (or hitting the timeout) terminates the child
    and raises Interrupt; a nonzero exit becomes a program error.
    """
    if isinstance(command, str):
        import shlex

        argv = shlex.split(command)
    else:
        argv = list(command)
    deadline = None if timeout is None else time.monotonic() + timeout
    proc = subprocess.Popen(
        argv,
        stdin=subprocess.PIPE,
        stdout=subprocess.PIPE,
        stderr=subprocess.PIPE,
        text=True,
    )
    send: str | None = input_text

    def terminate() -> None:
        try:
            proc.terminate()
            try:
                proc.wait(timeout=0.5)
            except subprocess.TimeoutExpired:
                proc.kill()
                proc.wait(timeout=1.0)
        except OSError:
            pass

    try:
        while True:
            try:
                out, err = proc.communicate(input=send, timeout=0.05)
                break
            except subprocess.TimeoutExpired:
                send = None
                group = _context.group
                if group is not None and group.cancelled:
                    terminate()
                    raise Interrupt()
                if deadline is not None and time.monotonic() > deadline:
                    terminate()
                    raise Interrupt()
    except BaseException:
        if proc.poll() is None:
            terminate()
        raise
    if proc.returncode != 0:
        detail = err.strip()
        message = f"process {argv[0]!r} failed with exit code {proc.returncode}"
        if detail:
            message += f": {detail}"
        raise ProgramError(message)
    return out
