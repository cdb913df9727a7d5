from .nets import (BeamModel, CBModelV1, CBModelV2, GFModel, KINDS, build_model, loss_cb_v1,
                   loss_cb_v2, loss_gf)
from .training import (History, TrainConfig, fit, predict_beam, predict_beams, predict_scores,
                       refine_from_scores, topk_refine, train)
from .checkpoint import KindMismatchError, load_model, save_model
