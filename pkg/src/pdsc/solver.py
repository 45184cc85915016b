"""Client for an external SMT-LIB2 solver running as a child process.

One session per verification run; plain SMT-LIB2 text over stdin/stdout with
push/pop incrementality. Every byte sent can be logged to a transcript file
that replays against the solver binary directly (replies are logged as ``;``
comment lines so the transcript stays executable).

Solver command resolution order: explicit argument, the ``PDSC_SOLVER``
environment variable, ``z3 -in`` when z3 is on PATH, and finally the bundled
Node.js shim wrapping the z3 WebAssembly build (requires ``node`` and a
global ``npm install -g z3-solver``).
"""

from __future__ import annotations

import os
import select
import shlex
import shutil
import subprocess
import tempfile
import time
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

from . import formula as fm
from .formula import Formula, Var
from .sexpr import SNode, SexprError, parse_all


class SolverError(Exception):
    """Solver crashed, replied with an error, or produced malformed output."""


class EnumerationLimit(Exception):
    """Model enumeration exceeded its configured cap."""


class SatStatus(Enum):
    SAT = "sat"
    UNSAT = "unsat"
    UNKNOWN = "unknown"


@dataclass
class SatResult:
    status: SatStatus
    model: dict[Var, object] = field(default_factory=dict)
    reason: str = ""

    @property
    def is_sat(self) -> bool:
        return self.status == SatStatus.SAT

    @property
    def is_unsat(self) -> bool:
        return self.status == SatStatus.UNSAT

    @property
    def is_unknown(self) -> bool:
        return self.status == SatStatus.UNKNOWN


def bundled_shim_command() -> list[str] | None:
    """Command for the bundled WASM-z3 shim, or None if node is missing."""
    node = shutil.which("node")
    shim = Path(__file__).parent / "solver_shim" / "z3cli.js"
    if node and shim.exists():
        return [node, str(shim)]
    return None


def resolve_solver_command(explicit: str | list[str] | None = None) -> list[str]:
    if explicit:
        return shlex.split(explicit) if isinstance(explicit, str) else list(explicit)
    env = os.environ.get("PDSC_SOLVER")
    if env:
        return shlex.split(env)
    if shutil.which("z3"):
        return ["z3", "-in"]
    shim = bundled_shim_command()
    if shim:
        return shim
    raise SolverError(
        "no SMT solver found: pass --solver, set PDSC_SOLVER, put z3 on PATH, "
        "or install node plus `npm install -g z3-solver`")


_SENTINEL = "__sync__"


class _Stalled(Exception):
    """Child produced no output and no CPU progress for too long."""


class SolverSession:
    """Single-owner incremental session; not shareable between threads.

    The session keeps every byte it has sent. If the child wedges (no reply,
    no CPU progress), it is restarted and the transcript prefix is replayed,
    which reproduces the exact solver state; the stalled command is then
    retried. Replayability of the wire protocol makes this sound.
    """

    def __init__(self, command: str | list[str] | None = None, *,
                 logic: str = "ALL", log_path: str | None = None,
                 stall_secs: float = 10.0):
        self.command = resolve_solver_command(command)
        self.logic = logic
        self.stall_secs = stall_secs
        self._log = open(log_path, "w") if log_path else None
        self._sent: list[str] = []
        self._stderr = None
        self._proc = None
        self._spawn()
        self._sync_counter = 0
        self._declared: list[set[str]] = [set()]  # one scope per stack level
        self._closed = False
        if logic:
            self._exec(f"(set-logic {logic})")

    # -- wire protocol ------------------------------------------------------

    def _spawn(self):
        if self._stderr:
            self._stderr.close()
        self._stderr = tempfile.TemporaryFile()
        try:
            self._proc = subprocess.Popen(
                self.command, stdin=subprocess.PIPE, stdout=subprocess.PIPE,
                stderr=self._stderr, bufsize=0)
        except OSError as e:
            raise SolverError(f"cannot start solver {self.command}: {e}") from e
        self._rbuf = b""

    def _child_cpu(self) -> int:
        """utime+stime ticks of the child (all threads), 0 when unreadable."""
        try:
            with open(f"/proc/{self._proc.pid}/stat", "rb") as fh:
                data = fh.read().decode(errors="replace")
            fields = data[data.rindex(")") + 2:].split()
            return int(fields[11]) + int(fields[12])  # utime, stime
        except Exception:
            return 0

    def _send_bytes(self, data: bytes):
        try:
            self._proc.stdin.write(data)
            self._proc.stdin.flush()
        except (BrokenPipeError, OSError) as e:
            raise SolverError(f"solver pipe broken: {self._stderr_tail()}") from e

    def _write(self, text: str, *, record: bool = True):
        if record:
            self._sent.append(text)
        if self._log:
            self._log.write(text)
            self._log.flush()
        self._send_bytes(text.encode())

    def _readline(self, poll_secs: float = 1.0) -> str | None:
        """One reply line, or None after poll_secs with nothing buffered.

        Reads the raw descriptor directly so the select loop never misses
        data parked in a userspace buffer.
        """
        while b"\n" not in self._rbuf:
            ready, _, _ = select.select([self._proc.stdout], [], [], poll_secs)
            if not ready:
                return None
            chunk = os.read(self._proc.stdout.fileno(), 1 << 16)
            if chunk == b"":
                raise SolverError(
                    f"solver exited unexpectedly; stderr: {self._stderr_tail()}")
            self._rbuf += chunk
        line, self._rbuf = self._rbuf.split(b"\n", 1)
        return line.decode(errors="replace")

    def _read_to_marker(self, marker: str) -> list[str]:
        lines: list[str] = []
        last_cpu = self._child_cpu()
        idle_since = time.monotonic()
        while True:
            line = self._readline()
            if line is None:
                if self._proc.poll() is not None:
                    raise SolverError(
                        f"solver exited unexpectedly; stderr: {self._stderr_tail()}")
                cpu = self._child_cpu()
                now = time.monotonic()
                if cpu != last_cpu:
                    last_cpu = cpu
                    idle_since = now
                elif now - idle_since > self.stall_secs:
                    raise _Stalled()
                continue
            if self._log:
                self._log.write(f"; <- {line}\n")
            if line.strip() == marker:
                return lines
            lines.append(line)
            idle_since = time.monotonic()

    def _drain_available(self):
        """Discard whatever output is currently readable (replay only)."""
        while True:
            ready, _, _ = select.select([self._proc.stdout], [], [], 0)
            if not ready:
                return
            chunk = os.read(self._proc.stdout.fileno(), 1 << 16)
            if chunk == b"":
                raise SolverError(
                    f"solver exited unexpectedly; stderr: {self._stderr_tail()}")

    def _replay(self):
        """Restart the child and reproduce the session state byte for byte.

        The prefix is streamed in chunks with the child's output drained
        between chunks, so neither pipe can fill up and deadlock.
        """
        try:
            self._proc.kill()
            self._proc.wait(timeout=5)
        except Exception:
            pass
        self._spawn()
        prefix = "".join(self._sent[:-1]).encode()
        marker = f"__replay__{self._sync_counter}"
        if self._log:
            self._log.write(f"; session restarted, replaying {len(prefix)} bytes\n")
        for i in range(0, len(prefix), 4096):
            self._drain_available()
            self._send_bytes(prefix[i:i + 4096])
        self._send_bytes(f'\n(echo "{marker}")\n'.encode())
        self._read_to_marker(marker)
        self._rbuf = b""

    # Replies whose cause is a garbled byte stream, not a bad query; the
    # bundled WASM solver produces these sporadically. A replayed session
    # retries them; persistent ones still raise.
    _GLITCH_MARKS = ("unexpected character", "unexpected end of file",
                     "invalid s-expression", "z3cli:")

    def _exec(self, text: str, *, raise_on_error: bool = True) -> list[str]:
        """Send commands, then drain replies up to a sync marker.

        Wedges and stream-corruption replies are healed by restarting the
        child and replaying the session transcript, then retrying.
        """
        if self._closed:
            raise SolverError("session is closed")
        self._sync_counter += 1
        marker = f"{_SENTINEL}{self._sync_counter}"
        payload = text + f'\n(echo "{marker}")\n'
        self._write(payload)
        for attempt in range(3):
            try:
                lines = self._read_to_marker(marker)
            except _Stalled:
                if attempt == 2:
                    raise SolverError(
                        "solver wedged repeatedly on the same command") from None
                self._replay()
                self._write(self._sent[-1], record=False)
                continue
            garbled = [ln for ln in lines
                       if ln.lstrip().startswith("(error")
                       and any(m in ln for m in self._GLITCH_MARKS)]
            if garbled and attempt < 2:
                if self._log:
                    self._log.write(f"; glitched reply, retrying: {garbled[0]}\n")
                self._replay()
                self._write(self._sent[-1], record=False)
                continue
            break
        if raise_on_error:
            for ln in lines:
                if ln.lstrip().startswith("(error"):
                    raise SolverError(f"solver error: {ln.strip()}\nafter: {text[-500:]}")
        return lines

    def _stderr_tail(self) -> str:
        try:
            self._stderr.seek(0)
            return self._stderr.read()[-500:].decode(errors="replace")
        except Exception:
            return "<unavailable>"

    # -- incremental primitives ----------------------------------------------

    @property
    def stack_depth(self) -> int:
        return len(self._declared) - 1

    def push(self):
        self._exec("(push 1)")
        self._declared.append(set())

    def pop(self):
        if self.stack_depth == 0:
            raise SolverError("pop on empty assertion stack")
        self._exec("(pop 1)")
        self._declared.pop()

    def _is_declared(self, name: str) -> bool:
        return any(name in scope for scope in self._declared)

    def declare(self, variables) -> None:
        """Declare constants in the current scope, skipping known names."""
        decls = []
        for v in sorted(variables, key=lambda v: v.wire()):
            name = v.wire()
            if not self._is_declared(name):
                decls.append(f"(declare-const {name} {v.sort.wire()})")
                self._declared[-1].add(name)
        if decls:
            self._exec("\n".join(decls))

    def assert_formula(self, f: Formula):
        self.declare(fm.free_vars(f))
        self._exec(f"(assert {fm.to_wire(f)})")

    def assert_text(self, text: str):
        self._exec(f"(assert {text})")

    def check(self) -> SatStatus:
        reply = self._exec("(check-sat)")
        verdict = next((ln.strip() for ln in reply if ln.strip()), "")
        try:
            return SatStatus(verdict)
        except ValueError:
            raise SolverError(f"malformed check-sat reply: {reply!r}") from None

    def get_values(self, variables: list[Var]) -> dict[Var, object]:
        if not variables:
            return {}
        names = " ".join(v.wire() for v in variables)
        reply = self._exec(f"(get-value ({names}))")
        return _parse_values("\n".join(reply), variables)

    def close(self):
        if self._closed:
            return
        self._closed = True
        try:
            self._proc.stdin.write(b"(exit)\n")
            self._proc.stdin.flush()
        except Exception:
            pass
        try:
            self._proc.wait(timeout=5)
        except subprocess.TimeoutExpired:
            self._proc.kill()
        if self._log:
            self._log.close()
        self._stderr.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    # -- queries --------------------------------------------------------------

    def check_sat(self, assertions: list[Formula]) -> SatResult:
        """One-shot satisfiability of a conjunction, under push/pop.

        A Sat result carries values for the non-array free variables of the
        assertions; Unknown is reported as Unknown, never as Unsat.
        """
        vs = set()
        for a in assertions:
            vs |= fm.free_vars(a)
        self.push()
        try:
            self.declare(vs)
            for a in assertions:
                self._exec(f"(assert {fm.to_wire(a)})")
            status = self.check()
            model: dict[Var, object] = {}
            if status == SatStatus.SAT:
                scalars = sorted((v for v in vs if not v.sort.is_array),
                                 key=lambda v: v.wire())
                model = self.get_values(scalars)
            return SatResult(status, model,
                             reason="solver returned unknown" if status == SatStatus.UNKNOWN else "")
        finally:
            self.pop()

    def is_valid(self, f: Formula) -> bool | None:
        """True/False validity, or None when the solver answers unknown."""
        res = self.check_sat([fm.f_not(f)])
        if res.is_unsat:
            return True
        if res.is_sat:
            return False
        return None

    def all_models(self, f: Formula, proj: list[Var], *,
                   cap: int = 1 << 20, extra: list[Formula] | None = None
                   ) -> set[tuple[bool, ...]]:
        """Exact set of boolean assignments to ``proj`` consistent with ``f``.

        Iterated check-sat with blocking clauses over the projection
        variables. Raises EnumerationLimit past ``cap`` models and
        SolverError on unknown.
        """
        for v in proj:
            if v.sort != fm.BOOL:
                raise SolverError(f"projection variable {v} is not boolean")
        vs = fm.free_vars(f) | set(proj)
        for g in extra or ():
            vs |= fm.free_vars(g)
        self.push()
        try:
            self.declare(vs)
            self._exec(f"(assert {fm.to_wire(f)})")
            for g in extra or ():
                self._exec(f"(assert {fm.to_wire(g)})")
            return self._enumerate(proj, cap)
        finally:
            self.pop()

    def _enumerate(self, proj: list[Var], cap: int) -> set[tuple[bool, ...]]:
        """Blocking-clause loop over already-asserted constraints.

        check-sat, model read and the next blocking clause are fused into one
        round trip per model; the stray model-unavailable error a solver
        prints after the final unsat is discarded with the unsat verdict.
        """
        found: set[tuple[bool, ...]] = set()
        names = [v.wire() for v in proj]
        query = f"(check-sat)\n(get-value ({' '.join(names)}))"
        lines = self._exec(query, raise_on_error=False)
        while True:
            body = [ln for ln in lines if ln.strip()]
            if not body:
                raise SolverError("empty reply during model enumeration")
            status = body[0].strip()
            if status == "unsat":
                return found
            if status == "unknown":
                raise SolverError("solver returned unknown during model enumeration")
            if status != "sat":
                raise SolverError(f"malformed enumeration reply: {body[0]!r}")
            rest = "\n".join(body[1:])
            if rest.lstrip().startswith("(error"):
                raise SolverError(f"solver error during enumeration: {rest}")
            values = _parse_values(rest, proj)
            bits = tuple(bool(values[v]) for v in proj)
            if bits in found:
                raise SolverError("solver repeated a blocked model")
            found.add(bits)
            if len(found) > cap:
                raise EnumerationLimit(f"more than {cap} models")
            block = "(assert (or " + " ".join(
                f"(not {n})" if b else n for n, b in zip(names, bits)) + "))"
            lines = self._exec(block + "\n" + query, raise_on_error=False)


def _parse_values(reply: str, variables: list[Var]) -> dict[Var, object]:
    try:
        forms = parse_all(reply)
    except SexprError as e:
        raise SolverError(f"malformed get-value reply: {reply!r}") from e
    if len(forms) != 1 or forms[0].is_atom:
        raise SolverError(f"malformed get-value reply: {reply!r}")
    by_name = {v.wire(): v for v in variables}
    out: dict[Var, object] = {}
    for pair in forms[0].items:
        if pair.is_atom or len(pair.items) != 2:
            raise SolverError(f"malformed value pair in: {reply!r}")
        name_node, val_node = pair.items
        name = _node_text(name_node)
        if name in by_name:
            out[by_name[name]] = _parse_value(val_node)
    missing = [v for v in variables if v not in out]
    if missing:
        raise SolverError(f"solver reply missing values for {missing}")
    return out


def _node_text(node: SNode) -> str:
    if node.is_atom:
        return node.text
    return "(" + " ".join(_node_text(x) for x in node.items) + ")"


def _parse_value(node: SNode):
    if node.is_atom:
        text = node.text
        if text == "true":
            return True
        if text == "false":
            return False
        try:
            return int(text)
        except ValueError:
            return text
    # negative integer literals arrive as (- 5); anything else stays raw text
    if (len(node.items) == 2 and node.items[0].is_atom and node.items[0].text == "-"
            and node.items[1].is_atom):
        try:
            return -int(node.items[1].text)
        except ValueError:
            pass
    return _node_text(node)
