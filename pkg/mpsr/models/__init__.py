from .predictor import (
    LayerSpec, PredictorNetwork, build_phi_default, build_baseline_default,
    assert_grid_agreement, save_predictor, load_predictor,
)
