"""Structure-aware protein language modelling at desk scale.

Global structure enters through TM-score-mined triplets, local structure
through a Gaussian-kernel distance bias and substructure (ECFP-style)
residue encodings fused in a cross-attention decoder.
"""

from .protein_io import Corpus, ProteinIOError, ProteinRecord
from .structure_align import AlignmentPairing, RigidTransform, Scoring, kabsch, needleman_wunsch, tm_score
from .triplet_miner import MinerConfig, TripletRecord, build_index
from .encodings import DistanceEncoder, MolecularVocab, distance_encoding, molecular_encoding
from .model import ModelConfig, ProteinModel, TrainingConfig, mask_sequence, mlm_loss, total_loss, triplet_loss
from .contacts import ProbeMetrics, precision_at, probe_contacts

__version__ = "0.1.0"

__all__ = [
    "AlignmentPairing", "Corpus", "DistanceEncoder", "MinerConfig", "ModelConfig", "MolecularVocab",
    "ProbeMetrics", "ProteinIOError", "ProteinModel", "ProteinRecord", "RigidTransform", "Scoring",
    "TrainingConfig", "TripletRecord", "build_index", "distance_encoding", "kabsch", "mask_sequence",
    "mlm_loss", "molecular_encoding", "needleman_wunsch", "precision_at", "probe_contacts", "tm_score",
    "total_loss", "triplet_loss",
]
