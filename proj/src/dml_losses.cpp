#include "lgdml/dml_losses.hpp"

namespace lgdml {

void validate(const ContrastiveParams& p) {
    if (!(p.gamma_p >= 0.0 && p.gamma_p <= p.gamma_n)) {
        fail(ErrorCode::InvalidArgument, "contrastive margins need 0 <= gamma_p <= gamma_n");
    }
}

void validate(const MultisimParams& p) {
    if (!(p.alpha > 0.0) || !(p.beta > 0.0)) fail(ErrorCode::InvalidArgument, "multisim alpha and beta must be > 0");
    if (!(p.lambda > -1.0 && p.lambda < 1.0)) fail(ErrorCode::InvalidArgument, "multisim lambda must be in (-1, 1)");
    if (!(p.epsilon >= 0.0)) fail(ErrorCode::InvalidArgument, "multisim epsilon must be >= 0");
    if (!(p.nu2 > 0.0)) fail(ErrorCode::InvalidArgument, "multisim nu2 must be > 0");
}

void validate(const MarginParams& p) {
    if (!(p.beta_margin > 0.0)) fail(ErrorCode::InvalidArgument, "margin beta must be > 0");
    if (!(p.alpha_margin >= 0.0)) fail(ErrorCode::InvalidArgument, "margin alpha must be >= 0");
    if (!(p.beta_lr >= 0.0)) fail(ErrorCode::InvalidArgument, "margin beta_lr must be >= 0");
}

}  // namespace lgdml
