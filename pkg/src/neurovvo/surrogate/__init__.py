"""Scenario encoder (GCN, temporal convolution, decoder) and main cost network."""

from .layers import (GcnLayer, MlpStack, ShapeError, TemporalConvLayer, gcn_forward, mlp_forward,
                     normalize_adjacency, relu, temporal_forward)
from .network import (PROFILES, SurrogateConfig, SurrogateWeights, WeightsError, backward, check_feeder,
                      encode_pooled, encoder_forward, fitted_kernels, forward, init_weights, main_forward,
                      pooled_features, predict_cost)
from .train import (Adagrad, Adam, GradCheckResult, KinkError, TrainingData, TrainingError, TrainingHistory,
                    grad_check, train)

__all__ = [
    "GcnLayer", "MlpStack", "ShapeError", "TemporalConvLayer", "gcn_forward", "mlp_forward",
    "normalize_adjacency", "relu", "temporal_forward", "PROFILES", "SurrogateConfig", "SurrogateWeights",
    "WeightsError", "backward", "check_feeder", "encode_pooled", "encoder_forward", "fitted_kernels",
    "forward", "init_weights", "main_forward", "pooled_features", "predict_cost", "Adagrad", "Adam",
    "GradCheckResult", "KinkError", "TrainingData", "TrainingError", "TrainingHistory", "grad_check", "train",
]
