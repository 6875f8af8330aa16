# encoding: utf-8
"""
chordlm: language models for chord sequences.

Normalises chord annotations into a 25-class major/minor vocabulary,
trains Lidstone-smoothed N-gram models and recurrent neural models
(simple/LSTM/GRU cells) on them, searches hyper-parameters with
Hyperband, and evaluates everything with a shared log-probability
protocol.
"""

__version__ = '0.1.0'

from .chords import (CLASS_NAMES, NO_CHORD, PAD, VOCAB_SIZE,
                     class_to_string, label_to_class, parse_chord_label,
                     reduce_to_majmin, string_to_class, transpose)
from .corpus import (AnnotatedSong, ChordSequence, CorpusSplit,
                     augment_transpositions, deduplicate, load_lab_file,
                     read_corpus, stratified_split, to_sequence,
                     write_corpus)
from .embeddings import (EmbeddingMatrix, one_hot_embedding, train_skipgram)
from .evaluation import (CumulativeCurve, EvalResult, UniformModel,
                         avg_log_prob, bootstrap_ci, cumulative_curve,
                         paired_test)
from .hyperband import (SearchSpace, hyperband_brackets,
                        paper_scale_brackets, run_hyperband, sample_config)
from .ngram import NGramModel, average_log_prob, fit_ngram, tune_alpha
from .rnn import (AdamOptimizer, NeuralConfig, RecurrentLM, Trainer,
                  TrainReport, fine_tune, train)
