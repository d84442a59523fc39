"""Unigram subword tokenizer: training, encoding, decoding, compression."""

from .lattice import BACKEND
from .normalize import check_text, normalize_and_pretokenize
from .train import (em_step, prune_vocabulary, pretoken_counts,
                    seed_vocabulary, train_unigram)
from .vocab import (BOS_ID, BYTE_LOGP, EOS_ID, FIRST_PIECE_ID, N_BYTE_TOKENS,
                    N_SPECIALS, PAD_ID, SPECIAL_TOKENS, TokenizerConfig,
                    TokenizerModel, UNK_ID, UnigramVocab, compression_rate)

__all__ = [
    "BACKEND", "BOS_ID", "BYTE_LOGP", "EOS_ID", "FIRST_PIECE_ID",
    "N_BYTE_TOKENS", "N_SPECIALS", "PAD_ID", "SPECIAL_TOKENS", "UNK_ID",
    "TokenizerConfig", "TokenizerModel", "UnigramVocab", "check_text",
    "compression_rate", "em_step", "normalize_and_pretokenize",
    "pretoken_counts", "prune_vocabulary", "seed_vocabulary", "train_unigram",
]
