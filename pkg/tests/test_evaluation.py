"""Managed-evaluation semantics: cells, groups, combinators, processes."""

from __future__ import annotations

import threading
import time

import pytest

from docserve.evaluation import (
    Exn,
    Future,
    Interrupt,
    Lazy,
    Memo,
    ProgramError,
    Promise,
    Res,
    TaskGroup,
    WorkerPool,
    capture,
    external_eval,
    parallel_exists,
    parallel_map,
    release,
    running_in,
)


@pytest.fixture
def pool():
    p = WorkerPool(4)
    yield p
    p.shutdown()


@pytest.fixture
def serial_pool():
    p = WorkerPool(1)
    yield p
    p.shutdown()


# -- capture / release ----------------------------------------------------------


def test_capture_value():
    assert capture(lambda x: x, 5) == Res(5)


def test_capture_program_error_gets_fresh_serial():
    def boom():
        raise RuntimeError("boom")

    r1 = capture(boom)
    r2 = capture(boom)
    assert isinstance(r1, Exn) and isinstance(r1.exn, ProgramError)
    assert r1.exn.message == "boom"
    assert r1.exn.serial < r2.exn.serial


def test_capture_preserves_existing_serial():
    err = ProgramError("kept")
    def raiser():
        raise err

    r = capture(raiser)
    assert r.exn is err


def test_release_roundtrip():
    assert release(capture(lambda: 3)) == 3
    with pytest.raises(ProgramError, match="bad"):
        release(capture(lambda: (_ for _ in ()).throw(ProgramError("bad"))))


def test_interrupt_is_captured_but_never_a_value():
    def interrupted():
        raise Interrupt()

    r = capture(interrupted)
    assert isinstance(r, Exn) and isinstance(r.exn, Interrupt)
    with pytest.raises(Interrupt):
        release(r)


def test_serial_ordering_sequential_raises():
    def raise_error(msg):
        raise ProgramError(msg)

    first = capture(raise_error, "first").exn
    second = capture(raise_error, "second").exn
    assert first.serial < second.serial


# -- futures and groups ----------------------------------------------------------


def test_fork_join_constant(pool):
    fut = pool.submit(lambda: 42, TaskGroup())
    assert fut.join() == 42


def test_eight_sleeps_on_four_workers_finish_within_two_periods(pool):
    group = TaskGroup()
    start = time.monotonic()
    futures = [pool.submit(lambda: time.sleep(0.1), group) for _ in range(8)]
    for f in futures:
        f.join()
    assert time.monotonic() - start < 0.35


def test_cancel_before_start_never_runs(serial_pool):
    ran = []
    group = TaskGroup()
    blocker = threading.Event()
    serial_pool.submit(lambda: blocker.wait(2.0), TaskGroup())
    fut = serial_pool.submit(lambda: ran.append(1), group)
    group.cancel()
    blocker.set()
    with pytest.raises(Interrupt):
        fut.join()
    assert ran == []


def test_future_error_memoized_and_reraised(pool):
    def fail():
        raise ProgramError("nope")

    group = TaskGroup(peer_failure=False)
    fut = pool.submit(fail, group)
    with pytest.raises(ProgramError, match="nope") as e1:
        fut.join()
    with pytest.raises(ProgramError) as e2:
        fut.join()
    assert e1.value.serial == e2.value.serial


def test_group_cancel_is_idempotent():
    g = TaskGroup()
    g.cancel()
    g.cancel()
    assert g.cancelled


def test_cancel_parent_cancels_child_futures(pool):
    parent = TaskGroup()
    child = parent.new_child()
    blocker = threading.Event()
    for _ in range(4):
        pool.submit(lambda: blocker.wait(2.0), TaskGroup())
    fut = pool.submit(lambda: 1, child)
    parent.cancel()
    blocker.set()
    with pytest.raises(Interrupt):
        fut.join()
    assert child.cancelled


def test_group_born_cancelled():
    parent = TaskGroup()
    parent.cancel()
    child = parent.new_child()
    assert child.cancelled


def test_peer_failure_cancels_siblings(serial_pool):
    group = TaskGroup(peer_failure=True)
    started = threading.Event()

    def fail():
        started.set()
        raise ProgramError("peer down")

    f1 = serial_pool.submit(fail, group)
    f2 = serial_pool.submit(lambda: 2, group)
    with pytest.raises(ProgramError):
        f1.join()
    with pytest.raises(Interrupt):
        f2.join()
    assert group.cancelled


def test_no_member_transitions_to_value_after_cancel(pool):
    group = TaskGroup()
    release_workers = threading.Event()

    def late_value():
        release_workers.wait(2.0)
        return 99

    fut = pool.submit(late_value, group)
    time.sleep(0.05)  # let it start running
    group.cancel()
    release_workers.set()
    with pytest.raises(Interrupt):
        fut.join()
    deadline = time.monotonic() + 2.0
    while fut.state != "cancelled" and time.monotonic() < deadline:
        time.sleep(0.01)
    assert fut.state == "cancelled"


def test_join_runs_pending_tasks_inline_single_worker(serial_pool):
    """Nested fork/join on one worker must not deadlock."""
    group = TaskGroup()

    def outer():
        inner = [serial_pool.submit(lambda i=i: i * i, group) for i in range(4)]
        return sum(f.join() for f in inner)

    assert serial_pool.submit(outer, group).join() == 14


# -- promises ---------------------------------------------------------------------


def test_promise_fulfill_then_join(pool):
    group = TaskGroup()
    p = Promise(group)
    p.fulfill(7)
    dependent = pool.submit(lambda: p.join() + 1, group)
    assert dependent.join() == 8


def test_unfulfilled_promise_keeps_dependent_pending(pool):
    group = TaskGroup()
    a, b = Promise(group), Promise(group)
    da = pool.submit(lambda: a.join(), group)
    db = pool.submit(lambda: b.join(), group)
    a.fulfill("a")
    assert da.join() == "a"
    time.sleep(0.05)
    assert not db.is_done()
    b.fulfill("b")
    assert db.join() == "b"


def test_double_fulfill_is_program_error():
    p = Promise(TaskGroup())
    p.fulfill(1)
    with pytest.raises(ProgramError, match="already fulfilled"):
        p.fulfill(2)


def test_fulfill_after_cancel_is_program_error():
    g = TaskGroup()
    p = Promise(g)
    g.cancel()
    with pytest.raises(ProgramError, match="cancellation"):
        p.fulfill(1)


def test_cancel_group_interrupts_promise_dependents(pool):
    g = TaskGroup()
    p = Promise(g)
    dep = pool.submit(lambda: p.join(), g)
    time.sleep(0.05)
    g.cancel()
    with pytest.raises(Interrupt):
        dep.join()


# -- lazy cells ---------------------------------------------------------------------


def test_lazy_evaluates_once():
    count = [0]

    def thunk():
        count[0] += 1
        return 7

    cell = Lazy(thunk)
    assert cell.force() == 7
    assert cell.force() == 7
    assert count[0] == 1


def test_lazy_interrupt_resets_then_reruns():
    count = [0]
    fail_first = [True]

    def thunk():
        count[0] += 1
        if fail_first[0]:
            fail_first[0] = False
            raise Interrupt()
        return "ok"

    cell = Lazy(thunk)
    with pytest.raises(Interrupt):
        cell.force()
    assert cell.force() == "ok"
    assert count[0] == 2


def test_lazy_memoizes_program_error():
    count = [0]

    def thunk():
        count[0] += 1
        raise ProgramError("bad")

    cell = Lazy(thunk)
    with pytest.raises(ProgramError, match="bad"):
        cell.force()
    with pytest.raises(ProgramError, match="bad"):
        cell.force()
    assert count[0] == 1


def test_lazy_concurrent_forcers_share_one_evaluation(pool):
    count = [0]

    def thunk():
        count[0] += 1
        time.sleep(0.1)
        return 5

    cell = Lazy(thunk)
    group = TaskGroup()
    futures = [pool.submit(cell.force, group) for _ in range(4)]
    assert [f.join() for f in futures] == [5, 5, 5, 5]
    assert count[0] == 1


def test_lazy_interrupt_reaches_waiting_forcers(pool):
    entered = threading.Event()

    def thunk():
        entered.set()
        raise Interrupt()

    cell = Lazy(thunk)
    gate = threading.Event()

    def slow_force():
        gate.wait(2.0)
        return cell.force()

    group = TaskGroup(peer_failure=False)
    waiters = [pool.submit(slow_force, group) for _ in range(2)]
    # the interrupt happens on the first forcing thread; concurrent waiters
    # observe it as well
    gate.set()
    outcomes = [f.join_result() for f in waiters]
    assert all(isinstance(o, Exn) for o in outcomes)


# -- memo cells ---------------------------------------------------------------------


def test_memo_evaluates_once():
    count = [0]

    def thunk():
        count[0] += 1
        return 3

    cell = Memo(thunk)
    assert cell.eval() == Res(3)
    assert cell.eval() == Res(3)
    assert count[0] == 1


def test_memo_stores_interrupt_until_restart():
    count = [0]
    fail_first = [True]

    def thunk():
        count[0] += 1
        if fail_first[0]:
            fail_first[0] = False
            raise Interrupt()
        return "done"

    cell = Memo(thunk)
    r = cell.eval()
    assert isinstance(r, Exn) and isinstance(r.exn, Interrupt)
    assert cell.has_interrupt()
    # the interrupt outcome is persistent
    r2 = cell.eval()
    assert isinstance(r2, Exn) and isinstance(r2.exn, Interrupt)
    assert count[0] == 1
    cell.restart()
    assert cell.eval() == Res("done")
    assert count[0] == 2


def test_memo_restart_of_regular_outcome_is_rejected():
    cell = Memo(lambda: (_ for _ in ()).throw(ProgramError("bad")))
    r = cell.eval()
    assert isinstance(r.exn, ProgramError)
    with pytest.raises(ProgramError, match="restart"):
        cell.restart()


def test_lazy_vs_memo_distinction_same_expression():
    def interrupted():
        raise Interrupt()

    lazy_cell, memo_cell = Lazy(interrupted), Memo(interrupted)
    with pytest.raises(Interrupt):
        lazy_cell.force()
    memo_cell.eval()
    assert not lazy_cell.is_finished()      # reset to unevaluated
    assert memo_cell.has_interrupt()        # interrupt memoized


def test_single_assignment_transition_counters():
    cell = Memo(lambda: 1)
    cell.eval()
    cell.eval()
    assert cell.transitions == 1
    lazy_cell = Lazy(lambda: 1)
    lazy_cell.force()
    lazy_cell.force()
    assert lazy_cell.transitions == 1


# -- parallel combinators --------------------------------------------------------------


def test_parallel_map_empty(pool):
    assert parallel_map(lambda x: x + 1, [], pool=pool) == []


def test_parallel_map_equals_sequential(pool):
    xs = list(range(100))
    assert parallel_map(lambda x: x * 2 + 1, xs, pool=pool) == [x * 2 + 1 for x in xs]


def test_parallel_map_reports_minimal_serial_error(pool):
    errors = {3: ProgramError("e3"), 7: ProgramError("e7")}

    def f(x):
        if x in errors:
            raise errors[x]
        return x

    with pytest.raises(ProgramError) as exc:
        parallel_map(f, list(range(10)), pool=pool)
    assert exc.value is errors[3]  # pre-created in index order: minimal serial


def test_parallel_exists_finds_witness_with_early_cancellation(pool):
    visited = [0]
    lock = threading.Lock()

    def pred(x):
        with lock:
            visited[0] += 1
        return x == 7

    n = 100_000
    assert parallel_exists(pred, range(n), pool=pool) is True
    assert visited[0] < n


def test_parallel_exists_false(pool):
    assert parallel_exists(lambda x: x > 10, range(5), pool=pool) is False


def test_parallel_exists_empty(pool):
    assert parallel_exists(lambda x: True, [], pool=pool) is False


# -- external processes -----------------------------------------------------------------


def test_external_echo():
    assert external_eval(["echo", "hi"]) == "hi\n"


def test_external_nonzero_exit_is_program_error():
    with pytest.raises(ProgramError, match="exit code 1"):
        external_eval(["false"])


def test_external_timeout_interrupts_and_kills_child():
    import subprocess

    start = time.monotonic()
    with pytest.raises(Interrupt):
        external_eval(["sleep", "10"], timeout=0.1)
    assert time.monotonic() - start < 0.5
    # no stray sleep child remains
    out = subprocess.run(["pgrep", "-f", "^sleep 10$"], capture_output=True, text=True)
    assert out.stdout.strip() == ""


def test_external_cancel_terminates_child(pool):
    group = TaskGroup()
    fut = pool.submit(lambda: external_eval(["sleep", "10"]), group)
    time.sleep(0.2)
    start = time.monotonic()
    group.cancel()
    with pytest.raises(Interrupt):
        fut.join()
    assert time.monotonic() - start < 1.0


def test_external_stdin_passthrough():
    assert external_eval(["cat"], input_text="data\n") == "data\n"
