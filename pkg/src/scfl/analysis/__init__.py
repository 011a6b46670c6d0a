from .oracles import (
    Optimum,
    global_gradient,
    global_loss,
    least_squares_optimum,
    local_gradient,
    optimality_gap,
)
from .verify import (
    LemmaSetup,
    VarianceBreakdown,
    VerificationReport,
    probe_model,
    sample_aggregated_gradients,
    verify_lemma1,
    verify_lemma2,
    verify_lemma3,
    verify_network,
)
