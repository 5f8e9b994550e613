"""Shared test harness pieces: oracle backends and transcribed fixture texts."""
from __future__ import annotations

import re

from ttpmap.backends import FunctionBackend

# Re-ranker response for the Monero-miner query, transcribed from a recorded
# DeepSeek-style run: reasoning first, ranking line last.
MONERO_QUERY = (
    "Monero miner scripts are downloaded from TeamTNT's server and piped to "
    "bash using an SSH session on the underlying host as the root user by "
    "supplying the private key from /tmp/TeamTNT. Later, the private key "
    "/tmp/TeamTNT is removed."
)

MONERO_RERANK_RESPONSE = """\
The query describes an attack involving the following key steps and techniques:

Initial Access: The attacker gains access to the host via SSH using a private \
key stored in /tmp/TeamTNT. This aligns with T1552.004 (Unsecured Credentials: \
Private Keys) and T1021.004 (Remote Services: SSH).

Execution: The attacker downloads Monero miner scripts and pipes them to bash. \
This involves T1059.004 (Command and Scripting Interpreter: Unix Shell).

Persistence: The attacker uses SSH with a private key, which could imply \
persistence via T1098.004 (Account Manipulation: SSH Authorized Keys).

Resource Hijacking: The Monero miner script indicates T1588.001 (Obtain \
Capabilities: Malware) for downloading and executing the miner.

Final Ranking:
T1552.004 > T1098.004 > T1021.004 > T1059.004 > T1588.001 > T1496 > T1563.001 > T1546.004 > T1611 > T1140
"""

MONERO_EXPECTED_PREFIX = [
    "T1552.004", "T1098.004", "T1021.004", "T1059.004", "T1588.001",
    "T1496", "T1563.001", "T1546.004", "T1611", "T1140",
]

SCHTASKS_QUERY = (
    "The ability to launch a .exe or .dll file in memory. The ability to "
    "leverage \"schtasks.exe\" to add or modify task schedules. The ability "
    "to launch custom PowerShell commands. The ability to leverage a "
    "standalone executable to load the DLL if the attacker otherwise has no "
    "way of doing so."
)

SCHTASKS_RERANK_RESPONSE = """\
The query describes in-memory payload execution, scheduled task manipulation \
through schtasks.exe, and custom PowerShell command execution.

Final Ranking:
T1218.011 > T1059.001 > T1053.005
"""

SCHTASKS_GENERATOR_RESPONSE = """\
1. T1059.001: Command and Scripting Interpreter: PowerShell
2. T1053: Scheduled Task/Job
3. T1053.005: Scheduled Task/Job: Scheduled Task
4. T1071.001: Application Layer Protocol: Web Protocols
"""

SCHTASKS_EXPECTED = ["T1059.001", "T1053", "T1053.005", "T1071.001"]

_TECHNIQUE_LINE_RE = re.compile(r"^Technique \d+: (T\d{4}(?:\.\d{3})?)", re.MULTILINE)


def _window_prompt(payload: dict) -> str:
    # On a parse retry the reminder is the last message; the window prompt is
    # the last user message carrying a query block.
    for message in reversed(payload["messages"]):
        if message["role"] == "user" and "## Query:\n" in message["content"]:
            return message["content"]
    raise AssertionError("no window prompt in payload")


def window_ids_from_prompt(payload: dict) -> list[str]:
    """Candidate IDs shown in a re-ranker prompt, in window order."""
    return _TECHNIQUE_LINE_RE.findall(_window_prompt(payload))


def query_from_rerank_prompt(payload: dict) -> str:
    return _window_prompt(payload).rsplit("## Query:\n", 1)[1]


def query_from_generator_prompt(payload: dict) -> str:
    serialized = payload["messages"][-1]["content"]
    return serialized.split(" [text] ", 1)[0]


def oracle_reranker(gold_of_query: dict[str, list[str]]) -> FunctionBackend:
    """Ranks window candidates by hidden gold relevance (gold first)."""

    def rank(payload: dict) -> str:
        query = query_from_rerank_prompt(payload)
        gold = gold_of_query.get(query, [])
        ids = window_ids_from_prompt(payload)
        ordered = [i for i in gold if i in ids] + [i for i in ids if i not in gold]
        return "Final Ranking:\n" + " > ".join(ordered)

    return FunctionBackend(rank)


def oracle_generator(gold_of_query: dict[str, list[str]]) -> FunctionBackend:
    """Emits exactly the gold labels of the query."""

    def emit(payload: dict) -> str:
        query = query_from_generator_prompt(payload)
        gold = gold_of_query.get(query, [])
        return "Predicted techniques: " + ", ".join(gold)

    return FunctionBackend(emit)


def constant_backend(response: str) -> FunctionBackend:
    return FunctionBackend(lambda payload: response)


def make_workspace(tmp_path, taxonomy_csv_path, corpus_path, **config_overrides):
    """Write a config file wired to a stub replay directory; returns its path."""
    from ttpmap.config import PipelineConfig, save_config

    stub_dir = tmp_path / "stubs"
    stub_dir.mkdir(exist_ok=True)
    fields = dict(
        taxonomy_path=str(taxonomy_csv_path),
        taxonomy_format="csv",
        corpus_paths=[str(corpus_path)],
        stub_dir=str(stub_dir),
    )
    fields.update(config_overrides)
    config = PipelineConfig(**fields)
    config_path = tmp_path / "config.json"
    save_config(config, config_path)
    return config_path, config

