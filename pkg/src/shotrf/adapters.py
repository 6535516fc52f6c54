"""External encoder / quality-meter processes driven by command templates.

A template is a shell-style command line with ``{placeholder}`` fields:

    {input}      file the tool reads (segment Y4M for encoders, encoded stream for meters)
    {output}     file an encoder must create
    {rf}         rate factor, formatted with 4 decimals
    {reference}  source segment Y4M a quality meter compares against
    {log}        side-channel log file path

Parse rules turn the process result into a value:

    last-float                 last float printed on stdout (stderr if stdout has none)
    float after '<prefix>'     first float following <prefix>, e.g. float after 'VMAF score:'
    output-file                path bound to {output}; must exist and be non-empty
"""

from __future__ import annotations

import re
import shlex
import string
import subprocess
import threading
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Mapping

from .frameio import write_y4m

PLACEHOLDERS = frozenset({"input", "output", "rf", "reference", "log"})
ENCODER_PLACEHOLDERS = ("input", "output", "rf")
METER_PLACEHOLDERS = ("input", "reference")
TAIL_CHARS = 2000

_FLOAT = r"[-+]?(?:\d+\.?\d*|\.\d+)(?:[eE][-+]?\d+)?"
_AFTER_RULE = re.compile(r"""^float after (['"])(.+)\1$""")

_proc_slots = threading.BoundedSemaphore(1)


def set_process_limit(n: int) -> None:
    """Cap the number of adapter child processes alive at once."""
    global _proc_slots
    if n < 1:
        raise ValueError("process limit must be >= 1")
    _proc_slots = threading.BoundedSemaphore(n)


class AdapterError(RuntimeError):
    def __init__(self, message: str, command: str = "", returncode: int | None = None, output_tail: str = ""):
        detail = f"{message}"
        if output_tail:
            detail += f"\n--- output tail ---\n{output_tail}"
        super().__init__(detail)
        self.message = message
        self.command = command
        self.returncode = returncode
        self.output_tail = output_tail


class AdapterTimeout(AdapterError):
    pass


def template_fields(template: str) -> set[str]:
    return {name for _, name, _, _ in string.Formatter().parse(template) if name is not None}


@dataclass(frozen=True)
class AdapterSpec:
    command_template: str
    timeout: float = 600.0
    parse_rule: str = "last-float"
    required: tuple[str, ...] = ()

    def __post_init__(self):
        if not self.timeout > 0:
            raise ValueError("adapter timeout must be positive")
        try:
            fields = template_fields(self.command_template)
        except ValueError as exc:
            raise ValueError(f"malformed command template: {exc}") from None
        unknown = fields - PLACEHOLDERS
        if unknown:
            raise ValueError(f"unknown placeholder(s) {sorted(unknown)} in command template")
        missing = [p for p in self.required if p not in fields]
        if missing:
            raise ValueError(f"command template lacks required placeholder(s) {missing}")
        if not shlex.split(self.command_template):
            raise ValueError("empty command template")
        parse_value(self.parse_rule, "", None)  # validates the rule itself

    def argv(self, bindings: Mapping[str, Any]) -> list[str]:
        unbound = template_fields(self.command_template) - set(bindings)
        if unbound:
            raise AdapterError(f"unbound placeholder(s) {sorted(unbound)}", self.command_template)
        return [tok.format_map({k: str(v) for k, v in bindings.items()})
                for tok in shlex.split(self.command_template)]


def parse_value(rule: str, text: str, output: str | None) -> float | Path | None:
    """Apply a parse rule; with empty text and no output it only validates the rule."""
    validating = text == "" and output is None
    if rule == "last-float":
        if validating:
            return None
        found = re.findall(_FLOAT, text)
        if not found:
            raise ValueError("no float in adapter output")
        return float(found[-1])
    if rule == "output-file":
        if validating:
            return None
        path = Path(output) if output else None
        if path is None or not path.is_file() or path.stat().st_size == 0:
            raise FileNotFoundError(f"missing output {output}")
        return path
    m = _AFTER_RULE.match(rule)
    if m:
        if validating:
            return None
        prefix = m.group(2)
        hit = re.search(re.escape(prefix) + r"\s*(" + _FLOAT + ")", text)
        if not hit:
            raise ValueError(f"no float after {prefix!r} in adapter output")
        return float(hit.group(1))
    raise ValueError(f"unknown parse rule {rule!r}")


def invoke_adapter(spec: AdapterSpec, bindings: Mapping[str, Any]) -> float | Path:
    argv = spec.argv(bindings)
    command = shlex.join(argv)
    with _proc_slots:
        try:
            proc = subprocess.run(argv, capture_output=True, text=True, timeout=spec.timeout)
        except subprocess.TimeoutExpired as exc:
            tail = _tail(_text(exc.stdout) + _text(exc.stderr))
            raise AdapterTimeout(f"command timed out after {spec.timeout:g}s: {command}", command, None, tail) from None
        except OSError as exc:
            raise AdapterError(f"cannot start {command}: {exc}", command) from None
    tail = _tail(proc.stdout + proc.stderr)
    if proc.returncode != 0:
        raise AdapterError(f"command exited with status {proc.returncode}: {command}", command, proc.returncode, tail)
    if spec.parse_rule == "last-float":
        # tools that report on stderr only still parse
        text = proc.stdout if re.search(_FLOAT, proc.stdout) else proc.stderr
    else:
        text = proc.stdout + "\n" + proc.stderr
    try:
        return parse_value(spec.parse_rule, text, bindings.get("output"))
    except FileNotFoundError:
        raise AdapterError(f"missing output {bindings.get('output')} from {command}", command, 0, tail) from None
    except ValueError as exc:
        raise AdapterError(f"{exc}: {command}", command, 0, tail) from None


def _text(x) -> str:
    if x is None:
        return ""
    return x.decode("utf-8", "replace") if isinstance(x, bytes) else x


def _tail(s: str) -> str:
    return s[-TAIL_CHARS:]


# --- encoder / quality meter on top of invoke_adapter ------------------------------


class _Workdir:
    def __init__(self, root: str | Path):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)
        self._lock = threading.Lock()

    def segment_file(self, job) -> Path:
        """The segment's frames as a 4:2:0 Y4M file (neutral chroma), written once per source_id."""
        path = self.root / f"{job.source_id}.y4m"
        with self._lock:
            if not path.exists():
                tmp = path.with_suffix(".y4m.tmp")
                with open(tmp, "wb") as fh:
                    write_y4m(job.frames, fh)
                tmp.replace(path)
        return path


class ExternalEncoder:
    """Encoder whose encode() runs a command template and returns the output path."""

    def __init__(self, spec: AdapterSpec, workdir: str | Path, suffix: str = ".bin"):
        if spec.parse_rule != "output-file":
            spec = AdapterSpec(spec.command_template, spec.timeout, "output-file", ENCODER_PLACEHOLDERS)
        self.spec = spec
        self.work = _Workdir(workdir)
        self.suffix = suffix

    def encode(self, job, rf: float, pass_index: int) -> Path:
        src = self.work.segment_file(job)
        stem = f"{job.source_id}.p{pass_index}.rf{rf:.4f}"
        out = self.work.root / (stem + self.suffix)
        bindings = {
            "input": src, "output": out, "rf": f"{rf:.4f}",
            "reference": src, "log": self.work.root / (stem + ".log"),
        }
        return invoke_adapter(self.spec, bindings)


class ExternalQualityMeter:
    """Quality meter that runs a command template on (encoded stream, reference)."""

    def __init__(self, spec: AdapterSpec, workdir: str | Path):
        self.spec = spec
        self.work = _Workdir(workdir)

    def measure(self, job, stream) -> float:
        ref = self.work.segment_file(job)
        stream = Path(stream)
        bindings = {
            "input": stream, "reference": ref, "output": stream.with_suffix(".vmaf"),
            "rf": "", "log": stream.with_suffix(".vmaf.log"),
        }
        value = invoke_adapter(self.spec, bindings)
        if isinstance(value, Path):
            raise AdapterError("quality meter parse rule must yield a number", self.spec.command_template)
        return float(value)
