"""memekit: explanation-enhanced meme datasets, staged VLM fine-tuning, evaluation."""

__version__ = "0.1.0"
