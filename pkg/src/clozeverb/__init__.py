"""Few-shot short-text classification with KB-expanded cloze verbalizers."""

from .concept_kb import ConceptKB, EntityMention, detect_entities, ingest_kb, read_kb, top_n_concepts
from .prompting import PromptTemplate, RenderedPrompt, parse_template, render
from .scoring import Prediction, VocabDistribution, class_score, classify
from .toy_oracle import ToyOracle
from .verbalizer import Verbalizer, build_verbalizer, expand_anchor, expand_from_texts, refine

__version__ = "0.1.0"
