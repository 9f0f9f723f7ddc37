"""Role prompts, completion backends and reply parsing."""

from .backends import (
    API_KEY_ENV,
    BackendConfig,
    BackendError,
    OracleExhausted,
    RemoteBackend,
    ScriptedBackend,
    ScriptedReply,
    TransportFailure,
    build_request,
    complete,
    load_oracle,
    parse_oracle,
)
from .gateway import REASK_NOTE, Gateway, RoleExchange, digest
from .parsing import (
    ObserverReply,
    ReflectorReply,
    ResponseParseError,
    RoleResponse,
    SelectorReply,
    VerifierReply,
    extract_object,
    parse_response,
    serialize,
)
from .prompts import (
    MissingContextField,
    PromptEnvelope,
    PromptTemplates,
    Role,
    default_templates,
    render_prompt,
)

__all__ = [
    "API_KEY_ENV", "BackendConfig", "BackendError", "Gateway", "MissingContextField",
    "ObserverReply", "OracleExhausted", "PromptEnvelope", "PromptTemplates", "REASK_NOTE",
    "ReflectorReply", "RemoteBackend", "ResponseParseError", "Role", "RoleExchange",
    "RoleResponse", "ScriptedBackend", "ScriptedReply", "SelectorReply", "TransportFailure",
    "VerifierReply", "build_request", "complete", "default_templates", "digest",
    "extract_object", "load_oracle", "parse_oracle", "parse_response", "render_prompt",
    "serialize",
]
