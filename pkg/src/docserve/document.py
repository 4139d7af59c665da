"""The versioned document model and its incremental execution engine.

The engine holds the "big" state: all known command definitions, versions,
and executions.  Updates turn one version into a fresh one by applying edits
(command splices, node dependencies, perspective declarations), derive a new
execution reusing the longest valid prefix of the old one per node, cancel
superseded work through its task group, and restart evaluation cells left
holding interrupts.

Within a node, evaluation cells chain: cell i consumes the state produced by
cell i-1.  After cell i completes, the runner proceeds to cell i+1
immediately and independently forks print i, which stays lazy unless the
perspective uncovers it.  Equation proofs carrying a delay weight are forked
as future tasks and joined after the chain (their outcome is irrelevant to
later commands); a command counts as finished only once its proofs are in.

All structural mutations are serialized by the caller (the protocol handler
context); execution runs on the shared worker pool and touches per-entry
state under the engine lock.  Snapshots are consistent reads that may run
concurrently with execution.
"""

from __future__ import annotations

import hashlib
import itertools
import logging
import os
import threading
from dataclasses import dataclass, field, replace
from typing import Any, Callable, Iterable, Optional, Union

from . import prover
from .evaluation import (
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
    next_serial,
)
from .markup import Elem, MarkupTree, Text
from .syntax import KeywordTable, Token, TokenKind

log = logging.getLogger("docserve.engine")

# status values, ordered by the only legal transitions:
# scheduled -> running -> finished | failed, or -> cancelled from anywhere
SCHEDULED = "scheduled"
RUNNING = "running"
FINISHED = "finished"
FAILED = "failed"
CANCELLED = "cancelled"

# priority bands: visible evaluation beats visible printing beats hidden work
PRIO_VISIBLE_EVAL = 30
PRIO_VISIBLE_PRINT = 20
PRIO_HIDDEN_EVAL = 10
PRIO_HIDDEN_PRINT = 0


@dataclass
class EngineConfig:
    workers: int | None = None
    raw_capture: bool = False
    remote_timeout: float = 10.0
    fork_read: bool = False


class DocumentError(Exception):
    """Handler-level failure: reported as a message, never a crash."""


@dataclass(frozen=True)
class Message:
    pos: int
    kind: str
    text: str
    serial: int

    def sort_key(self):
        return (self.pos, self.serial)


@dataclass(frozen=True)
class Splice:
    insert_after: int | None
    inserted: tuple[int, ...] = ()
    removed: tuple[int, ...] = ()


@dataclass(frozen=True)
class Edits:
    node: str
    splices: tuple[Splice, ...]


@dataclass(frozen=True)
class Deps:
    node: str
    imports: tuple[str, ...]


@dataclass(frozen=True)
class Perspective:
    node: str
    intervals: tuple[tuple[int, int], ...]


Edit = Union[Edits, Deps, Perspective]


@dataclass(frozen=True)
class NodeSpec:
    imports: tuple[str, ...] = ()
    commands: tuple[int, ...] = ()
    perspective: tuple[tuple[int, int], ...] = ()


@dataclass(frozen=True)
class Version:
    id: int
    nodes: dict[str, NodeSpec] = field(default_factory=dict)


@dataclass(frozen=True)
class ReadResult:
    tokens: tuple[Token, ...]
    command: prover.Command


@dataclass(frozen=True)
class CommandDef:
    id: int
    name: str
    source: str
    read_result: Lazy  # of ReadResult; forcing is total
    source_hash: str


def _read_thunk(name: str, source: str) -> Callable[[], ReadResult]:
    def run() -> ReadResult:
        table = prover.base_keyword_table()
        from .syntax import scan_symbols, tokenize

        tokens = tuple(tokenize(table, scan_symbols(source)))
        return ReadResult(tokens, prover.read_command(table, source, name))

    return run


class Entry:
    """One command slot in an execution: eval memo, print cell, status.

    Entries are shared between executions when reuse applies; the fields
    below the lock comment are guarded by the engine lock.
    """

    def __init__(self, command: CommandDef, exec_id: int,
                 prev: Optional["Entry"], initial_state: Callable[[], prover.ToplevelState]):
        self.command = command
        self.exec_id = exec_id
        self.prev = prev
        self.initial_state = initial_state  # used when prev is None
        self.eval_cell = Memo(self._transaction)
        # guarded by the engine lock:
        self.status = SCHEDULED
        self.messages: list[Message] = []
        self.notes_attached = False
        self.report_emitted = False
        self.print_active = False
        self.print_done = False
        self.proofs: list[Future] = []
        self.proofs_done = False
        self.proof_failed = False

    def _pre_state(self) -> prover.ToplevelState:
        if self.prev is None:
            return self.initial_state()
        result = self.prev.eval_cell.peek()
        assert isinstance(result, Res), "state chain evaluated out of order"
        return result.value.state

    def _transaction(self) -> prover.TransactionResult:
        read = self.command.read_result.force()
        return prover.apply_transaction(read.command, self._pre_state())

    def post_state(self) -> prover.ToplevelState | None:
        result = self.eval_cell.peek()
        return result.value.state if isinstance(result, Res) else None


class NodeExecution:
    def __init__(self, entries: list[Entry], final: Promise):
        self.entries = entries
        self.final = final


class Execution:
    def __init__(self, version_id: int, group: TaskGroup):
        self.version_id = version_id
        self.group = group
        self.nodes: dict[str, NodeExecution] = {}
        # effective perspective, adjustable without a new version
        self.perspective: dict[str, tuple[tuple[int, int], ...]] = {}

    def visible_indices(self, node: str) -> set[int]:
        node_exec = self.nodes.get(node)
        if node_exec is None:
            return set()
        ids = [e.command.id for e in node_exec.entries]
        index_of = {cid: i for i, cid in enumerate(ids)}
        visible: set[int] = set()
        for first, last in self.perspective.get(node, ()):  # unknown ids clip silently
            lo = index_of.get(first)
            hi = index_of.get(last)
            if lo is None and hi is None:
                continue
            lo = 0 if lo is None else lo
            hi = len(ids) - 1 if hi is None else hi
            if lo > hi:
                lo, hi = hi, lo
            visible.update(range(lo, hi + 1))
        return visible


@dataclass(frozen=True)
class EntryReport:
    command_id: int
    exec_id: int
    name: str
    status: str
    messages: tuple[Message, ...]
    state_hash: str | None
    has_warning: bool


@dataclass(frozen=True)
class OutputMessage:
    """One engine-to-front-end message; execution output carries its exec id."""

    kind: str
    exec_id: int | None
    body: bytes


class Engine:
    """Owner of the document state, the worker pool, and message emission."""

    def __init__(self, config: EngineConfig | None = None,
                 sink: Callable[[OutputMessage], None] | None = None):
        self.config = config or EngineConfig()
        self.pool = WorkerPool(self.config.workers, name="docserve-eval")
        self._lock = threading.RLock()
        self._sink = sink or (lambda message: None)
        self.commands: dict[int, CommandDef] = {}
        self.versions: dict[int, Version] = {0: Version(0)}
        self.executions: dict[int, Execution] = {0: Execution(0, TaskGroup(peer_failure=False))}
        self.latest_version_id = 0
        self._exec_ids = itertools.count(1)
        self._remote_ids = itertools.count(1)
        self.remote_functions: set[str] = set()
        self.pending_calls: dict[int, Promise] = {}
        # instrumentation
        self.print_activations = 0
        self.prints_completed = 0
        self.evals_started = 0
        self._closed = False

    # -- message emission ------------------------------------------------------

    def set_sink(self, sink: Callable[[OutputMessage], None]) -> None:
        self._sink = sink

    def emit(self, kind: str, exec_id: int | None, body: bytes) -> None:
        self._sink(OutputMessage(kind, exec_id, body))

    def _emit_status(self, entry: Entry) -> None:
        self.emit("status", entry.exec_id, entry.status.encode())

    def _set_status(self, entry: Entry, status: str) -> None:
        with self._lock:
            if entry.status == status:
                return
            entry.status = status
        self._emit_status(entry)

    def _add_message(self, entry: Entry, pos: int, kind: str, text: str,
                     serial: int | None = None) -> None:
        message = Message(pos, kind, text, next_serial() if serial is None else serial)
        with self._lock:
            entry.messages.append(message)
        from .markup import yxml_encode

        body = yxml_encode(Elem("message",
                                (("pos", str(pos)), ("serial", str(message.serial))),
                                (Text(text),) if text else ()))
        self.emit(kind, entry.exec_id, body)

    # -- document operations ----------------------------------------------------

    def define_command(self, command_id: int, name: str, source: str) -> None:
        """Register a command definition; read work is set up lazily."""
        with self._lock:
            if command_id in self.commands:
                raise DocumentError(f"duplicate command id {command_id}")
            source_hash = hashlib.sha1(source.encode()).hexdigest()
            definition = CommandDef(command_id, name, source,
                                    Lazy(_read_thunk(name, source)), source_hash)
            self.commands[command_id] = definition
        if self.config.fork_read:
            self.pool.submit(definition.read_result.force, TaskGroup(peer_failure=False),
                             PRIO_HIDDEN_EVAL)

    def update(self, v1: int, v2: int, edits: Iterable[Edit]) -> dict[str, list[tuple[int, int]]]:
        """Apply edits to version v1 producing v2; derive its execution.

        Returns the assignment: per node, the (command id, exec id) pairs.
        Superseded running work is cancelled; interrupted cells reachable in
        the new version are restarted.
        """
        edits = list(edits)
        with self._lock:
            if v1 not in self.versions:
                raise DocumentError(f"unknown version {v1}")
            if v2 in self.versions:
                raise DocumentError(f"version {v2} already exists")
            nodes = dict(self.versions[v1].nodes)
            for edit in edits:
                self._apply_edit(nodes, edit)
            self._check_acyclic(nodes)
            version = Version(v2, nodes)
            old_execution = self.executions.get(v1)
            for execution in self.executions.values():
                execution.group.cancel()
            execution = self._derive_execution(version, old_execution)
            self.versions[v2] = version
            self.executions[v2] = execution
            self.latest_version_id = v2
            assignment = {
                node: [(entry.command.id, entry.exec_id) for entry in node_exec.entries]
                for node, node_exec in execution.nodes.items()
            }
            # restart reachable cells holding persistent interrupts
            for node_exec in execution.nodes.values():
                for entry in node_exec.entries:
                    if entry.eval_cell.has_interrupt():
                        entry.eval_cell.restart()
        return assignment

    def _apply_edit(self, nodes: dict[str, NodeSpec], edit: Edit) -> None:
        spec = nodes.get(edit.node, NodeSpec())
        if isinstance(edit, Edits):
            commands = list(spec.commands)
            for splice in edit.splices:
                for cid in splice.inserted:
                    if cid not in self.commands:
                        raise DocumentError(f"unknown command id {cid}")
                for cid in splice.removed:
                    if cid not in commands:
                        raise DocumentError(f"removed command {cid} not in node {edit.node!r}")
                    commands.remove(cid)
                if splice.insert_after is None:
                    at = 0
                else:
                    if splice.insert_after not in commands:
                        raise DocumentError(
                            f"insertion point {splice.insert_after} not in node {edit.node!r}")
                    at = commands.index(splice.insert_after) + 1
                commands[at:at] = list(splice.inserted)
            nodes[edit.node] = replace(spec, commands=tuple(commands))
        elif isinstance(edit, Deps):
            nodes[edit.node] = replace(spec, imports=tuple(edit.imports))
        elif isinstance(edit, Perspective):
            nodes[edit.node] = replace(spec, perspective=tuple(edit.intervals))
        else:
            raise DocumentError(f"unknown edit {edit!r}")

    def _check_acyclic(self, nodes: dict[str, NodeSpec]) -> list[str]:
        order: list[str] = []
        state: dict[str, int] = {}

        def visit(name: str, trail: tuple[str, ...]):
            mark = state.get(name)
            if mark == 2:
                return
            if mark == 1:
                cycle = " -> ".join(trail + (name,))
                raise DocumentError(f"import cycle: {cycle}")
            state[name] = 1
            for dep in nodes.get(name, NodeSpec()).imports:
                visit(dep, trail + (name,))
            state[name] = 2
            order.append(name)

        for name in sorted(nodes):
            visit(name, ())
        return order

    def _node_signatures(self, version: Version) -> dict[str, str]:
        """Content signature per node, covering imports transitively."""
        order = self._check_acyclic(version.nodes)
        signatures: dict[str, str] = {}
        for name in order:
            spec = version.nodes.get(name, NodeSpec())
            h = hashlib.sha1()
            for dep in spec.imports:
                h.update(signatures.get(dep, "?").encode())
                h.update(b"|")
            for cid in spec.commands:
                definition = self.commands.get(cid)
                h.update(f"{cid}:{definition.source_hash if definition else '?'};".encode())
            signatures[name] = h.hexdigest()
        return signatures

    def _derive_execution(self, version: Version,
                          old_execution: Execution | None) -> Execution:
        group = TaskGroup(peer_failure=False)
        execution = Execution(version.id, group)
        new_sigs = self._node_signatures(version)
        old_sigs: dict[str, str] = {}
        if old_execution is not None:
            old_version = self.versions.get(old_execution.version_id)
            if old_version is not None:
                old_sigs = self._node_signatures(old_version)

        import_sigs_equal: dict[str, bool] = {}
        old_nodes = {} if old_execution is None else old_execution.nodes
        old_specs = ({} if old_execution is None
                     else self.versions[old_execution.version_id].nodes)

        for name, spec in version.nodes.items():
            old_spec = old_specs.get(name)
            same_imports = (
                old_spec is not None
                and spec.imports == old_spec.imports
                and all(old_sigs.get(dep) == new_sigs.get(dep) for dep in spec.imports)
            )
            import_sigs_equal[name] = bool(same_imports)

        for name, spec in version.nodes.items():
            final = Promise(group)
            entries: list[Entry] = []
            old_entries = old_nodes[name].entries if name in old_nodes else []
            reusable = 0
            if import_sigs_equal[name]:
                for new_cid, old_entry in zip(spec.commands, old_entries):
                    definition = self.commands[new_cid]
                    if (old_entry.command.id == new_cid
                            and old_entry.command.source_hash == definition.source_hash):
                        reusable += 1
                    else:
                        break
            prev: Entry | None = None
            for index, cid in enumerate(spec.commands):
                if index < reusable:
                    entry = old_entries[index]
                    # a reused cell keeps everything it finished; anything in
                    # flight was cancelled with the old group and self-heals
                    if entry.status not in (FINISHED, FAILED):
                        entry.status = SCHEDULED
                    if entry.print_active and not entry.print_done:
                        entry.print_active = False
                    if not entry.proofs_done:
                        entry.proofs = []
                else:
                    entry = Entry(self.commands[cid], next(self._exec_ids), prev,
                                  self._initial_state_thunk(name))
                entries.append(entry)
                prev = entry
            execution.nodes[name] = NodeExecution(entries, final)
            execution.perspective[name] = spec.perspective
        return execution

    def _initial_state_thunk(self, node: str) -> Callable[[], prover.ToplevelState]:
        # resolved against the *current* execution at evaluation time, so a
        # reused first entry never waits on a superseded execution's imports
        # (reuse implies equal import signatures, hence equal merged states)
        return lambda: self._node_initial_state(node)

    def _node_initial_state(self, node: str) -> prover.ToplevelState:
        with self._lock:
            current = self.executions.get(self.latest_version_id)
            spec = self.versions[current.version_id].nodes.get(node, NodeSpec())
            finals = [current.nodes[dep].final for dep in spec.imports
                      if dep in current.nodes]
        states = [final.join() for final in finals]
        return prover.merge_states(states) if states else prover.EMPTY_STATE

    def remove_versions(self, version_ids: Iterable[int]) -> None:
        """Drop named versions; definitions no remaining version uses go too."""
        version_ids = list(version_ids)
        with self._lock:
            for vid in version_ids:
                if vid == self.latest_version_id:
                    raise DocumentError(f"cannot remove the latest version {vid}")
            for vid in version_ids:
                self.versions.pop(vid, None)
                execution = self.executions.pop(vid, None)
                if execution is not None:
                    execution.group.cancel()
            reachable: set[int] = set()
            for version in self.versions.values():
                for spec in version.nodes.values():
                    reachable.update(spec.commands)
            for cid in [c for c in self.commands if c not in reachable]:
                del self.commands[cid]

    # -- execution ---------------------------------------------------------------

    def execute(self, version_id: int) -> None:
        """Schedule the execution of a registered version on the worker pool."""
        with self._lock:
            if version_id not in self.executions:
                raise DocumentError(f"unknown version {version_id}")
            execution = self.executions[version_id]
            for node in execution.nodes:
                self._fork_runners(execution, node)

    def _fork_runners(self, execution: Execution, node: str) -> None:
        node_exec = execution.nodes[node]
        visible = execution.visible_indices(node)
        last_visible = max(visible) if visible else -1
        total = len(node_exec.entries)
        if last_visible >= 0:
            self.pool.submit(
                lambda: self._run_chain(execution, node, 0, last_visible + 1,
                                        tail_from=last_visible + 1),
                execution.group, PRIO_VISIBLE_EVAL)
        else:
            self.pool.submit(
                lambda: self._run_chain(execution, node, 0, total),
                execution.group, PRIO_HIDDEN_EVAL)

    def _run_chain(self, execution: Execution, node: str, start: int, stop: int,
                   tail_from: int | None = None) -> None:
        """Evaluate entries [start, stop) in order along the state chain."""
        node_exec = execution.nodes[node]
        entries = node_exec.entries
        stop = min(stop, len(entries))
        joinable: list[Entry] = []
        index = start
        while index < stop:
            if execution.group.cancelled:
                return
            entry = entries[index]
            cell = entry.eval_cell
            if not cell.is_finished():
                with self._lock:
                    if entry.status == SCHEDULED:
                        entry.status = RUNNING
                        bump = True
                    else:
                        bump = False
                if bump:
                    self._emit_status(entry)
                self._emit_report(entry)
                with self._lock:
                    self.evals_started += 1
            result = cell.eval()
            if isinstance(result, Exn):
                if execution.group.cancelled:
                    return
                if isinstance(result.exn, Interrupt):
                    # stale interrupt left by a superseded execution
                    try:
                        cell.restart()
                    except ProgramError:
                        pass
                    continue
                return  # unreachable: transactions reify program errors
            self._absorb_result(execution, node, entry, result.value)
            if entry.proofs and not entry.proofs_done:
                joinable.append(entry)
            index += 1
        if stop == len(entries):
            if entries:
                last_state = entries[-1].post_state() or prover.EMPTY_STATE
            else:
                last_state = self._node_initial_state(node)
            try:
                node_exec.final.fulfill(last_state)
            except ProgramError:
                pass  # already fulfilled by an equivalent superseded pass
        elif tail_from is not None:
            self.pool.submit(
                lambda: self._run_chain(execution, node, tail_from, len(entries)),
                execution.group, PRIO_HIDDEN_EVAL)
        # join forked proofs in command order; statuses settle as they land
        for entry in joinable:
            self._join_proofs(execution, entry)

    def _absorb_result(self, execution: Execution, node: str, entry: Entry,
                       result: prover.TransactionResult) -> None:
        with self._lock:
            attach = not entry.notes_attached
            if attach:
                entry.notes_attached = True
        if attach:
            for pos, kind, text in result.notes:
                serial = result.error.serial if (result.error and kind == "error") else None
                self._add_message(entry, pos, kind, text, serial)
        needs_proofs = bool(result.obligations) and not entry.proofs_done
        if needs_proofs:
            pre = entry._pre_state()
            visible = entry in self._visible_entries(execution, node)
            priority = PRIO_VISIBLE_EVAL if visible else PRIO_HIDDEN_EVAL
            with self._lock:
                if not entry.proofs:
                    entry.proofs = [
                        self.pool.submit(
                            lambda ob=ob: prover.check_obligation(ob, pre),
                            execution.group, priority)
                        for ob in result.obligations
                    ]
        if result.failed or entry.proof_failed:
            self._set_status(entry, FAILED)
        elif needs_proofs:
            self._set_status(entry, RUNNING)
        else:
            self._set_status(entry, FINISHED)
        self._maybe_activate_print(execution, node, entry)

    def _visible_entries(self, execution: Execution, node: str) -> set[Entry]:
        node_exec = execution.nodes[node]
        return {node_exec.entries[i] for i in execution.visible_indices(node)}

    def _join_proofs(self, execution: Execution, entry: Entry) -> None:
        with self._lock:
            proofs = list(entry.proofs)
        failures: list[ProgramError] = []
        for future in proofs:
            outcome = future.join_result()
            if isinstance(outcome, Exn):
                if isinstance(outcome.exn, Interrupt):
                    return  # superseded; a later execution re-forks
                failures.append(outcome.exn)
        with self._lock:
            entry.proofs_done = True
            entry.proof_failed = bool(failures)
        if failures:
            error = min(failures, key=lambda e: e.serial)
            self._add_message(entry, 0, "error", error.message, error.serial)
            self._set_status(entry, FAILED)
        else:
            self._set_status(entry, FINISHED)

    # -- printing -----------------------------------------------------------------

    def _maybe_activate_print(self, execution: Execution, node: str, entry: Entry) -> None:
        if entry not in self._visible_entries(execution, node):
            return
        self._activate_print(execution, entry)

    def _activate_print(self, execution: Execution, entry: Entry) -> None:
        with self._lock:
            result = entry.eval_cell.peek()
            if not isinstance(result, Res):
                return
            if entry.print_active or entry.print_done:
                return
            entry.print_active = True
            self.print_activations += 1
        transaction = result.value

        def run_print():
            messages = prover.print_output(transaction.state, transaction.output)
            with self._lock:
                entry.print_done = True
                self.prints_completed += 1
            for pos, kind, text in messages:
                self._add_message(entry, pos, kind, text)

        self.pool.submit(run_print, execution.group, PRIO_VISIBLE_PRINT)

    def set_perspective(self, node: str, intervals: Iterable[tuple[int, int]],
                        version_id: int | None = None) -> None:
        """Adjust the effective perspective of the current execution.

        Newly visible commands' print cells become active futures; already
        running prints are never cancelled by a shrink.
        """
        with self._lock:
            vid = self.latest_version_id if version_id is None else version_id
            execution = self.executions.get(vid)
            if execution is None or node not in execution.nodes:
                return
            execution.perspective[node] = tuple(tuple(p) for p in intervals)
            candidates = [execution.nodes[node].entries[i]
                          for i in execution.visible_indices(node)]
        for entry in candidates:
            self._activate_print(execution, entry)

    def cancel_execution(self) -> None:
        """Cancel the current version's running work (idempotent)."""
        with self._lock:
            execution = self.executions.get(self.latest_version_id)
            if execution is None:
                return
            execution.group.cancel()
            affected = [entry for node_exec in execution.nodes.values()
                        for entry in node_exec.entries
                        if entry.status in (SCHEDULED, RUNNING)]
            for entry in affected:
                entry.status = CANCELLED
        for entry in affected:
            self._emit_status(entry)

    # -- reads ---------------------------------------------------------------------

    def snapshot(self, version_id: int, node: str) -> list[EntryReport]:
        """Consistent per-command report; safe while execution is in flight."""
        with self._lock:
            execution = self.executions.get(version_id)
            if execution is None or node not in execution.nodes:
                return []
            reports = []
            for entry in execution.nodes[node].entries:
                state = entry.post_state()
                reports.append(EntryReport(
                    command_id=entry.command.id,
                    exec_id=entry.exec_id,
                    name=entry.command.name,
                    status=entry.status,
                    messages=tuple(sorted(entry.messages, key=Message.sort_key)),
                    state_hash=prover.state_hash(state) if state is not None else None,
                    has_warning=any(m.kind == "warning" for m in entry.messages),
                ))
            return reports

    def converged(self, version_id: int | None = None) -> bool:
        with self._lock:
            vid = self.latest_version_id if version_id is None else version_id
            execution = self.executions.get(vid)
            if execution is None:
                return False
            return all(entry.status in (FINISHED, FAILED)
                       for node_exec in execution.nodes.values()
                       for entry in node_exec.entries)

    def quiesced(self, version_id: int | None = None) -> bool:
        """Converged and no activated print is still pending."""
        with self._lock:
            vid = self.latest_version_id if version_id is None else version_id
            execution = self.executions.get(vid)
            if execution is None:
                return False
            for node_exec in execution.nodes.values():
                for entry in node_exec.entries:
                    if entry.status not in (FINISHED, FAILED):
                        return False
                    if entry.print_active and not entry.print_done:
                        return False
            return True

    def reachable_interrupts(self, version_id: int | None = None) -> int:
        with self._lock:
            vid = self.latest_version_id if version_id is None else version_id
            execution = self.executions.get(vid)
            if execution is None:
                return 0
            return sum(1 for node_exec in execution.nodes.values()
                       for entry in node_exec.entries
                       if entry.eval_cell.has_interrupt())

    # -- remote evaluation -----------------------------------------------------------

    def remote_call(self, name: str, argument: str) -> str:
        """Call a front-end registered string function; suspends the caller."""
        with self._lock:
            if name not in self.remote_functions:
                raise ProgramError(f"unknown remote function {name!r}")
            call_id = next(self._remote_ids)
            promise = Promise(self.executions[self.latest_version_id].group)
            self.pending_calls[call_id] = promise
        from .markup import yxml_encode

        body = yxml_encode(Elem("function_call",
                                (("id", str(call_id)), ("name", name)),
                                (Text(argument),) if argument else ()))
        self.emit("protocol", None, body)
        try:
            return promise.join(timeout=self.config.remote_timeout)
        finally:
            with self._lock:
                self.pending_calls.pop(call_id, None)

    def fulfill_remote(self, call_id: int, value: str) -> None:
        with self._lock:
            promise = self.pending_calls.pop(call_id, None)
        if promise is None:
            raise DocumentError(f"unknown remote call id {call_id}")
        promise.fulfill(value)

    def cancel_remote_calls(self) -> None:
        with self._lock:
            pending = list(self.pending_calls.values())
            self.pending_calls.clear()
        for promise in pending:
            promise.group.cancel()

    # -- reporting ----------------------------------------------------------------

    def _emit_report(self, entry: Entry) -> None:
        with self._lock:
            if entry.report_emitted:
                return
            entry.report_emitted = True
        read = entry.command.read_result.force()
        from .markup import yxml_encode_forest

        trees: list[MarkupTree] = []
        for token in read.tokens:
            if token.kind is TokenKind.WHITESPACE:
                continue
            trees.append(Elem("token",
                              (("kind", token.kind.value),
                               ("start", str(token.start)),
                               ("end", str(token.end))), ()))
        self.emit("report", entry.exec_id, yxml_encode_forest(trees))

    def close(self) -> None:
        with self._lock:
            if self._closed:
                return
            self._closed = True
            executions = list(self.executions.values())
        for execution in executions:
            execution.group.cancel()
        self.cancel_remote_calls()
        self.pool.shutdown()
