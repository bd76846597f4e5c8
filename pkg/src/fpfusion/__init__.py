"""Fingerprint fragment recognition by fusing minutiae, ridge and pore matchers."""
from .corpus import CorpusIndex, SynthSpec, generate_synthetic, index_corpus
from .errors import (ConstantImageWarning, CorpusShape, EmptySide, EmptyTemplate, FingerprintError,
                     MissingScore, NoCandidate, NoLine, ParseError)
from .fusion import (ComparisonRecord, EvalReport, FusionWeights, compute_eer, fuse, grid_search_weights,
                     run_protocol)
from .imgproc import BlockMap, GrayImage, binarize, enhance, estimate_block_map, normalize
from .minutiae import Minutia, MinutiaSet, compare_minutiae, extract_minutiae
from .pipeline import FingerTemplate, compare_templates, extract_template
from .pores import (Pore, PoreSet, compare_pores, extract_pores_adaptive, extract_pores_isotropic,
                    match_pores)
from .ridge_matcher import AlignmentParams, MatchScore, compare_ridge, match_ridges, register
from .ridges import HoughLine, Ridge, RidgeFeature, classify_curvature, hough_lines, thin, trace_ridges

__version__ = "0.1.0"
