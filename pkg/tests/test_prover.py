"""Toy command language: read totality, eval semantics, print rendering."""

from __future__ import annotations

import pytest
from hypothesis import given, settings, strategies as st

from docserve.evaluation import ProgramError
from docserve.prover import (
    BinOp,
    DefCmd,
    DiagnosedError,
    EMPTY_STATE,
    FailCmd,
    KeywordCmd,
    NoOp,
    Num,
    PrintCmd,
    SlowCmd,
    TheoryCmd,
    ThmCmd,
    apply_transaction,
    base_keyword_table,
    eval_command,
    merge_states,
    print_output,
    read_command,
    state_hash,
)

TABLE = base_keyword_table()


# -- read -----------------------------------------------------------------------


def test_read_def_with_addition():
    cmd = read_command(TABLE, "def x = 1 + 2")
    assert cmd == DefCmd("x", BinOp("+", Num(1), Num(2)))


def test_read_malformed_def_is_diagnosed_not_raised():
    cmd = read_command(TABLE, "def = =")
    assert isinstance(cmd, DiagnosedError)
    assert "expected identifier" in cmd.reason


def test_read_empty_is_noop():
    assert read_command(TABLE, "") == NoOp()
    assert read_command(TABLE, "  (* just a comment *) ") == NoOp()


def test_read_theory_header():
    cmd = read_command(TABLE, "theory A imports B C begin")
    assert cmd == TheoryCmd("A", ("B", "C"))
    assert read_command(TABLE, "theory A begin") == TheoryCmd("A", ())


def test_read_thm_forms():
    assert read_command(TABLE, "thm t : 2 * 3 = 6") == ThmCmd(
        "t", BinOp("*", Num(2), Num(3)), Num(6))
    assert read_command(TABLE, "thm t : 1 = 2 sorry").sorry is True
    assert read_command(TABLE, "thm t : 1 = 1 slow 500").slow_ms == 500


def test_read_slow_print_fail():
    from docserve.prover import Name

    assert read_command(TABLE, "slow 50") == SlowCmd(50)
    assert read_command(TABLE, "print x") == PrintCmd(Name("x"))
    assert read_command(TABLE, "fail boom") == FailCmd("boom")
    assert read_command(TABLE, 'fail "went wrong"') == FailCmd("went wrong")


def test_read_unterminated_string_is_diagnosed():
    cmd = read_command(TABLE, 'def x = "oops')
    assert isinstance(cmd, DiagnosedError)
    assert "unterminated" in cmd.reason


def test_read_junk_before_command_is_diagnosed():
    cmd = read_command(TABLE, "junk def x = 1")
    assert isinstance(cmd, DiagnosedError)


def test_read_is_state_independent():
    # read takes no state; the same source yields the same structure
    assert read_command(TABLE, "def x = y + 1") == read_command(TABLE, "def x = y + 1")


@settings(max_examples=200, deadline=None)
@given(st.text(max_size=60))
def test_read_is_total(src):
    read_command(TABLE, src)  # must never raise


# -- eval -----------------------------------------------------------------------


def test_eval_def_binds_value():
    _, state = eval_command(read_command(TABLE, "def x = 1 + 2"), EMPTY_STATE)
    assert state.lookup("x") == 3


def test_eval_thm_stores_theorem():
    _, state = eval_command(read_command(TABLE, "thm t : 2 * 3 = 6"), EMPTY_STATE)
    assert dict(state.thms)["t"].proved is True


def test_eval_thm_mismatch_raises():
    with pytest.raises(ProgramError, match="1 ≠ 2"):
        eval_command(read_command(TABLE, "thm t : 1 = 2"), EMPTY_STATE)


def test_eval_unbound_name():
    with pytest.raises(ProgramError, match="unbound name"):
        eval_command(read_command(TABLE, "def x = nope"), EMPTY_STATE)


def test_eval_precedence():
    _, state = eval_command(read_command(TABLE, "def x = 1 + 2 * 3"), EMPTY_STATE)
    assert state.lookup("x") == 7


def test_eval_fail():
    with pytest.raises(ProgramError, match="boom"):
        eval_command(FailCmd("boom"), EMPTY_STATE)


def test_eval_slow_weighted_thm_defers_obligation():
    out, state = eval_command(read_command(TABLE, "thm t : 1 = 2 slow 10"), EMPTY_STATE)
    assert len(out.obligations) == 1
    # proof irrelevance: the theorem is stored promised, the failure surfaces
    # only when the obligation is checked
    assert dict(state.thms)["t"].proved is True


def test_eval_keyword_extends_state_table():
    _, state = eval_command(KeywordCmd("frob"), EMPTY_STATE)
    out, state2 = eval_command(read_command(TABLE, "frob", name="frob"), state)
    assert state2 == state
    assert any("custom command frob" in text for _, _, text in out.notes)


def test_eval_dynamic_without_declaration_fails():
    with pytest.raises(ProgramError, match="undefined command"):
        eval_command(read_command(TABLE, "frob", name="frob"), EMPTY_STATE)


def test_eval_determinism_by_hash():
    cmd = read_command(TABLE, "def x = 40 + 2")
    _, s1 = eval_command(cmd, EMPTY_STATE)
    _, s2 = eval_command(cmd, EMPTY_STATE)
    assert state_hash(s1) == state_hash(s2)


def test_merge_states_later_import_wins():
    _, a = eval_command(read_command(TABLE, "def x = 1"), EMPTY_STATE)
    _, b = eval_command(read_command(TABLE, "def x = 2"), EMPTY_STATE)
    merged = merge_states([a, b])
    assert merged.lookup("x") == 2


# -- print ----------------------------------------------------------------------


def test_print_renders_def_summary():
    out, state = eval_command(read_command(TABLE, "def x = 3"), EMPTY_STATE)
    messages = print_output(state, out)
    assert (0, "writeln", "x = 3; 1 definition") in messages


def test_print_after_noop_is_empty():
    out, state = eval_command(NoOp(), EMPTY_STATE)
    assert print_output(state, out) == []


def test_print_renders_deferred_value():
    _, st1 = eval_command(read_command(TABLE, "def x = 1"), EMPTY_STATE)
    out, st2 = eval_command(read_command(TABLE, "print x"), st1)
    assert (0, "writeln", "1") in print_output(st2, out)


def test_print_never_mutates_state():
    out, state = eval_command(read_command(TABLE, "def x = 3"), EMPTY_STATE)
    before = state_hash(state)
    print_output(state, out)
    assert state_hash(state) == before


def test_sorry_warning_is_eval_phase():
    out, _ = eval_command(read_command(TABLE, "thm t : 1 = 2 sorry"), EMPTY_STATE)
    assert (0, "warning", "theorem t: unproven") in out.notes


# -- transaction wrapper -----------------------------------------------------------


def test_transaction_atomicity_on_failure():
    _, state = eval_command(read_command(TABLE, "def x = 1"), EMPTY_STATE)
    result = apply_transaction(read_command(TABLE, "thm t : 1 = 2"), state)
    assert result.failed
    assert result.state == state  # rollback: identity on the state
    assert result.notes == [(0, "error", "1 ≠ 2")]
    assert result.error is not None and result.error.serial > 0


def test_transaction_success_carries_new_state():
    result = apply_transaction(read_command(TABLE, "def y = 2"), EMPTY_STATE)
    assert not result.failed
    assert result.state.lookup("y") == 2


@settings(max_examples=100, deadline=None)
@given(st.sampled_from([
    "def a = 1", "thm t : 1 = 2", "fail x", "print q", "nonsense here", "",
    "thm u : 2 = 2", "keyword zap",
]))
def test_transaction_failure_is_identity_on_state(src):
    _, state = eval_command(read_command(TABLE, "def q = 5"), EMPTY_STATE)
    result = apply_transaction(read_command(TABLE, src), state)
    if result.failed:
        assert state_hash(result.state) == state_hash(state)
