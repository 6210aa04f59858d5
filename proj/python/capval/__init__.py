"""Capability-aligned validation sets, LM loss measurement and scaling-law fits."""

import json
import os

from ._capval import *  # noqa: F401,F403
from ._capval import CapvalError, default_prompt_dir, synthesize_json

_packaged = os.path.join(os.path.dirname(__file__), "prompts")
PROMPT_DIR = _packaged if os.path.isdir(_packaged) else default_prompt_dir()


def synthesize(domains, domain_id, llm, index=None, prompt_dir=None, base_dir=".", retrieval_k=8, seed=0):
    """Run one domain through the synthesis pipeline.

    `domains` is the domain config (dict, list or JSON text); `llm` is a
    callable prompt -> completion used for extraction, judging and expansion.
    """
    if not isinstance(domains, str):
        if isinstance(domains, list):
            domains = {"domains": domains}
        domains = json.dumps(domains)
    return synthesize_json(domains, domain_id, llm, prompt_dir or PROMPT_DIR, index, base_dir, retrieval_k, seed)
