"""
Stub chat-completion server.

Answers explicit-CoT generation prompts with the example sentence embedded
in the prompt, and label-extraction prompts with the label the rule cascade
finds. Used by the tests and for offline runs of gen-cot and evaluate.
"""

import argparse
import logging
import re

import uvicorn
from fastapi import FastAPI
from pydantic import BaseModel

from metrics import EXTRACTION_PROMPT, UNKNOWN, extract_label

log = logging.getLogger(__name__)

app = FastAPI(title="Emotion CoT stub chat endpoint", version="1.0.0")

FALLBACK_REPLY = "I cannot describe this speech."
_EXAMPLE = re.compile(r"Here is an example: ‘(.*)’ Ensure including", re.DOTALL)


class ChatMessage(BaseModel):
    role: str
    content: str


class ChatRequest(BaseModel):
    model: str
    messages: list[ChatMessage]
    temperature: float = 0.7


def reply_for(prompt: str) -> str:
    if prompt.startswith(EXTRACTION_PROMPT):
        label = extract_label(prompt[len(EXTRACTION_PROMPT) :])
        return label if label == UNKNOWN else label.value
    match = _EXAMPLE.search(prompt)
    if match:
        return match.group(1)
    return FALLBACK_REPLY


@app.get("/health")
async def health_check():
    return {"status": "healthy"}


@app.post("/v1/chat/completions")
async def chat_completions(request: ChatRequest):
    prompt = request.messages[-1].content if request.messages else ""
    return {
        "id": "chatcmpl-stub",
        "object": "chat.completion",
        "model": request.model,
        "choices": [
            {
                "index": 0,
                "message": {"role": "assistant", "content": reply_for(prompt)},
                "finish_reason": "stop",
            }
        ],
    }


if __name__ == "__main__":
    parser = argparse.ArgumentParser(description="Run the stub chat-completion server.")
    parser.add_argument("--host", default="127.0.0.1")
    parser.add_argument("--port", type=int, default=8001)
    args = parser.parse_args()
    print(f"🚀 Stub chat endpoint on http://{args.host}:{args.port}/v1/chat/completions")
    print(f"📋 Health check: http://{args.host}:{args.port}/health")
    uvicorn.run(app, host=args.host, port=args.port, log_level="warning")
