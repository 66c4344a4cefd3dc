"""Python bindings for the gptd toolkit."""

import json
import os
from pathlib import Path

from . import _gptd
from ._gptd import (
    InvalidInput,
    LoadError,
    Model,
    ModelConfig,
    Tokenizer,
    UndefinedMetric,
    acc_at_eer,
    auc,
    enumerate_pattern,
    forward_logprobs,
    next_token_logits,
    pearson,
    perplexity,
    preprocess,
    welch_t_test,
    word_tokenize,
)

__version__ = _gptd.__version__


def data_dir() -> Path:
    """Bundled data directory; GPTD_DATA_DIR overrides it."""
    if os.environ.get("GPTD_DATA_DIR"):
        return Path(os.environ["GPTD_DATA_DIR"])
    packaged = Path(__file__).with_name("data")
    return packaged if packaged.is_dir() else Path(_gptd.default_data_dir)


def load_tokenizer(directory=None) -> Tokenizer:
    return Tokenizer.from_directory(str(directory or data_dir() / "gpt2"))


def degrade(model: Model, spec: dict):
    """Returns (degraded model, mask report)."""
    degraded, report = _gptd.degrade(model, json.dumps(spec))
    return degraded, json.loads(report)


def plan_mask(spec: dict) -> dict:
    """Mask plan on the GPT-2 small shape, without touching weights."""
    return json.loads(_gptd.plan_mask(json.dumps(spec)))


def normalize_spec(spec: dict) -> dict:
    return json.loads(_gptd.validate_spec(json.dumps(spec)))


def beam_search(model: Model, prompt, **config):
    return _gptd.beam_search(model, list(prompt), json.dumps(config))


def saliency(model: Model, ids) -> dict:
    return json.loads(_gptd.saliency(model, list(ids)))


def lexical_stats(base_texts, degraded_texts, freq_path=None) -> dict:
    freq = freq_path or data_dir() / "freq" / "wordfreq_en.tsv"
    return json.loads(_gptd.lexical_stats(list(base_texts), list(degraded_texts), str(freq), str(data_dir())))
