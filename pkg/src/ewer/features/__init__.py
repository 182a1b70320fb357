from .embeddings import load_embeddings, read_embeddings, write_embeddings
from .pipeline import FeatureConfig, MissingAudio, build_vocab, featurize
from .signal import (SignalMatrix, load_pcm, mel_spectrogram, mfcc, pool_signal, raw_signal_prep,
                     write_pcm)
from .table import FeatureTable, FeatureVector, load_cache, save_cache
from .text import Vocab, numerical_features, text_features
