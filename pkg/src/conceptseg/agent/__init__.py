"""Agent-in-the-loop refinement: actions, planner clients, and the session loop."""

from .actions import ActionKind, AgentAction, parse_action
from .loop import (
    DEFAULT_BUDGET,
    DEFAULT_SYSTEM_CONTRACT,
    AgentRound,
    AgentTranscript,
    FeedbackPacket,
    FeedbackText,
    Termination,
    build_feedback,
    feedback_message_text,
    replay_transcript,
    run_agent,
    run_agent_sessions,
    save_transcript,
)
from .mllm import (
    AcceptIfImprovedMllm,
    Attachment,
    HttpMllm,
    Message,
    MllmClient,
    MllmExchange,
    ScriptedMllm,
)

__all__ = [
    "ActionKind",
    "AgentAction",
    "parse_action",
    "run_agent",
    "run_agent_sessions",
    "replay_transcript",
    "save_transcript",
    "build_feedback",
    "feedback_message_text",
    "AgentRound",
    "AgentTranscript",
    "FeedbackPacket",
    "FeedbackText",
    "Termination",
    "DEFAULT_BUDGET",
    "DEFAULT_SYSTEM_CONTRACT",
    "Attachment",
    "Message",
    "MllmExchange",
    "MllmClient",
    "ScriptedMllm",
    "AcceptIfImprovedMllm",
    "HttpMllm",
]
