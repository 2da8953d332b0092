"""Remote VLM calls through the OpenAI or Anthropic SDK."""

import logging
import os
import time

from replanvlm.errors import BackendError, ConfigError, CredentialMissing, RemoteHTTP, RemoteTimeout

logger = logging.getLogger(__name__)

PROVIDERS = ("openai", "anthropic")


def get_provider(provider_override: str | None = None, model_override: str | None = None):
    provider = provider_override or os.getenv("REPLANVLM_MODEL_PROVIDER") or "openai"
    provider = provider.lower() if isinstance(provider, str) else "openai"
    model = model_override or os.getenv("REPLANVLM_MODEL")
    if provider == "openai" and not model:
        model = os.getenv("OPENAI_MODEL", "gpt-4o")
    if provider == "anthropic" and not model:
        model = os.getenv("ANTHROPIC_MODEL", "claude-3-5-sonnet-20240620")
    return provider, model


def build_content(bundle) -> list:
    """Provider-neutral message parts: the rendered prompt, then any images."""
    parts = [{"type": "text", "text": bundle.render()}]
    for media_type, data in bundle.images:
        parts.append({"type": "image", "media_type": media_type, "base64": data})
    return parts


def _openai_content(parts: list) -> list:
    out = []
    for p in parts:
        if p["type"] == "text":
            out.append({"type": "text", "text": p["text"]})
        else:
            out.append({"type": "image_url", "image_url": {"url": f"data:{p['media_type']};base64,{p['base64']}"}})
    return out


def _anthropic_content(parts: list) -> list:
    out = []
    for p in parts:
        if p["type"] == "text":
            out.append({"type": "text", "text": p["text"]})
        else:
            out.append({"type": "image", "source": {"type": "base64", "media_type": p["media_type"], "data": p["base64"]}})
    return out


def _msg_to_text(msg) -> str:
    # content may be a str or a list of content parts (dicts or SDK objects)
    c = getattr(msg, "content", None)
    if isinstance(c, str):
        return c
    if isinstance(c, list):
        parts = []
        for p in c:
            if isinstance(p, dict):
                if p.get("type") == "text" and "text" in p:
                    parts.append(p["text"])
            elif getattr(p, "type", None) == "text":
                parts.append(getattr(p, "text", ""))
        return "".join(parts)
    try:
        return msg["content"] or ""
    except Exception:
        return ""


def _base_url(config) -> str | None:
    return config.endpoint or os.getenv("REPLANVLM_BASE_URL") or None


def _openai_call(parts: list, config, api_key: str, model: str) -> str:
    try:
        import openai  # type: ignore
    except Exception:
        raise BackendError("OpenAI SDK not installed. pip install openai")
    client = openai.OpenAI(api_key=api_key, base_url=_base_url(config), timeout=config.timeout, max_retries=0)
    try:
        resp = client.chat.completions.create(
            model=model,
            messages=[{"role": "user", "content": _openai_content(parts)}],
            temperature=config.temperature,
        )
    except openai.APITimeoutError as e:
        raise RemoteTimeout(f"openai request timed out after {config.timeout}s: {e}")
    except openai.APIConnectionError as e:
        raise RemoteTimeout(f"openai connection failed: {e}")
    except openai.APIStatusError as e:
        raise RemoteHTTP(e.status_code, str(e))
    return _msg_to_text(resp.choices[0].message)


def _anthropic_call(parts: list, config, api_key: str, model: str) -> str:
    try:
        import anthropic  # type: ignore
    except Exception:
        raise BackendError("Anthropic SDK not installed. pip install anthropic")
    client = anthropic.Anthropic(api_key=api_key, base_url=_base_url(config), timeout=config.timeout, max_retries=0)
    try:
        msg = client.messages.create(
            model=model,
            max_tokens=1024,
            temperature=config.temperature,
            messages=[{"role": "user", "content": _anthropic_content(parts)}],
        )
    except anthropic.APITimeoutError as e:
        raise RemoteTimeout(f"anthropic request timed out after {config.timeout}s: {e}")
    except anthropic.APIConnectionError as e:
        raise RemoteTimeout(f"anthropic connection failed: {e}")
    except anthropic.APIStatusError as e:
        raise RemoteHTTP(e.status_code, str(e))
    out = []
    for b in msg.content:
        if getattr(b, "type", None) == "text":
            out.append(getattr(b, "text", ""))
        elif isinstance(b, dict) and b.get("type") == "text":
            out.append(b.get("text", ""))
    return "".join(out)


_CALLS = {"openai": _openai_call, "anthropic": _anthropic_call}


def _transient(e: Exception) -> bool:
    return isinstance(e, RemoteTimeout) or (isinstance(e, RemoteHTTP) and (e.status == 429 or e.status >= 500))


def remote_complete(bundle, config, sleep=time.sleep) -> str:
    """Send one bundle, retrying timeouts, 429s and 5xx with exponential backoff."""
    api_key = os.getenv(config.credential_env)
    if not api_key:
        raise CredentialMissing(config.credential_env)
    provider, model = get_provider(config.provider, config.model)
    call = _CALLS.get(provider)
    if call is None:
        raise ConfigError(f"unknown model provider '{provider}' (expected one of {', '.join(PROVIDERS)})")
    parts = build_content(bundle)
    last_err = None
    for attempt in range(config.retries + 1):
        try:
            return call(parts, config, api_key, model)
        except (RemoteTimeout, RemoteHTTP) as e:
            if not _transient(e):
                raise
            last_err = e
            if attempt < config.retries:
                delay = config.backoff * (2**attempt)
                logger.warning("%s call for %s bot failed (%s); retry %d in %.1fs", provider, bundle.bot, e, attempt + 1, delay)
                sleep(delay)
    raise last_err
