#pragma once

// Language-guidance objectives. Every loss here returns a gradient only for the
// image side; language-side matrices are constant targets.

#include "lgdml/error.hpp"
#include "lgdml/matrix.hpp"
#include "lgdml/simcore.hpp"

#include <string>
#include <string_view>
#include <vector>

namespace lgdml {

enum class GuidanceMode { none, elg, plg, external, clip_style, predict_head, rowwise_l2, full_kl };
enum class MergeMode { average, multi, dense };
enum class GuidanceLevel { class_level, sample_level };

struct GuidanceSpec {
    GuidanceMode mode = GuidanceMode::none;
    double omega = 5.0;
    double gamma_lang = 0.5;
    int k = 5;
    MergeMode merge = MergeMode::average;
    GuidanceLevel level = GuidanceLevel::class_level;
    double temperature = 1.0;
    double clip_temperature = 0.07;
    // Average the batch similarity of every available class-level language table.
    bool average_language_models = false;
};

void validate(const GuidanceSpec& spec);

std::string_view to_string(GuidanceMode mode);
std::string_view to_string(MergeMode mode);
std::string_view to_string(GuidanceLevel level);
GuidanceMode parse_guidance_mode(std::string_view s);
MergeMode parse_merge_mode(std::string_view s);
GuidanceLevel parse_guidance_level(std::string_view s);

/// Batch image similarity with entries that are held constant during matching.
template <class T>
struct MaskedSimilarity {
    SimilarityMatrix<T> sim;
    Mask fixed;
};

/// Same-class entries (diagonal included) replaced by 1 + gamma_lang.
template <class T>
MaskedSimilarity<T> masked_image_similarity(const Mat<T>& s_img, const Labels& labels, T gamma_lang) {
    detail::require_square(s_img, "masked_image_similarity");
    if (static_cast<Eigen::Index>(labels.size()) != s_img.rows()) {
        fail(ErrorCode::ShapeMismatch, "masked_image_similarity: label count does not match rows");
    }
    const Eigen::Index n = s_img.rows();
    MaskedSimilarity<T> out{{s_img, SimilarityKind::masked_image}, Mask::Constant(n, n, false)};
    for (Eigen::Index i = 0; i < n; ++i) {
        for (Eigen::Index j = 0; j < n; ++j) {
            if (labels[i] == labels[j]) {
                out.sim.values(i, j) = T(1) + gamma_lang;
                out.fixed(i, j) = true;
            }
        }
    }
    return out;
}

/// Sample-level matching uses the raw similarities.
template <class T>
MaskedSimilarity<T> unmasked_image_similarity(const Mat<T>& s_img) {
    return {{s_img, SimilarityKind::image}, Mask::Constant(s_img.rows(), s_img.cols(), false)};
}

namespace detail {

template <class T>
void zero_fixed(Mat<T>& grad, const Mask& fixed) {
    for (Eigen::Index i = 0; i < grad.rows(); ++i)
        for (Eigen::Index j = 0; j < grad.cols(); ++j)
            if (fixed(i, j)) grad(i, j) = T(0);
}

}  // namespace detail

/// Mean row-wise KL(softmax(S_img^X_i) || softmax(S_lang_i + gamma_lang)).
template <class T>
LossGrad<T> elg_match_loss(const MaskedSimilarity<T>& img, const Mat<T>& s_lang, T gamma_lang, T temperature) {
    detail::require_same_shape(img.sim.values, s_lang, "elg_match_loss");
    const auto p = row_softmax(img.sim.values, T(0), temperature);
    const auto q = row_softmax(s_lang, gamma_lang, temperature);
    LossGrad<T> out{rowwise_kl(p, q), rowwise_kl_logit_grad(p.values, q.values, temperature)};
    detail::zero_fixed(out.grad, img.fixed);
    return out;
}

template <class T>
LossGrad<T> compose_objective(const LossGrad<T>& dml, const LossGrad<T>& match, double omega) {
    if (omega < 0.0) fail(ErrorCode::InvalidArgument, "omega must be non-negative");
    if (omega == 0.0) return dml;
    detail::require_same_shape(dml.grad, match.grad, "compose_objective");
    return {dml.value + T(omega) * match.value, dml.grad + T(omega) * match.grad};
}

template <class T>
Mat<T> average_language_targets(const std::vector<Mat<T>>& tables) {
    if (tables.empty()) fail(ErrorCode::EmptyList, "average_language_targets");
    Mat<T> sum = tables.front();
    for (std::size_t i = 1; i < tables.size(); ++i) {
        detail::require_same_shape(tables.front(), tables[i], "average_language_targets");
        sum += tables[i];
    }
    return sum / T(tables.size());
}

/// Pseudolabel matching. average: one KL against the mean target; multi: mean of
/// per-rank KLs; dense: mean over all k*k pairing targets. Class level masks
/// same-class entries, sample level matches the raw similarities.
template <class T>
LossGrad<T> pseudomatch_loss(const Mat<T>& s_img, const Labels& labels, const std::vector<Mat<T>>& targets,
                             const GuidanceSpec& spec) {
    if (targets.empty()) fail(ErrorCode::EmptyTargetList, "pseudomatch_loss");
    const std::size_t expected = spec.merge == MergeMode::dense ? static_cast<std::size_t>(spec.k) * spec.k
                                                                : static_cast<std::size_t>(spec.k);
    if (targets.size() != expected) {
        fail(ErrorCode::ShapeMismatch, "pseudomatch_loss: expected " + std::to_string(expected) + " targets, got " +
                                           std::to_string(targets.size()));
    }
    const T gamma(spec.gamma_lang);
    const T temperature(spec.temperature);
    const MaskedSimilarity<T> img = spec.level == GuidanceLevel::class_level
                                        ? masked_image_similarity(s_img, labels, gamma)
                                        : unmasked_image_similarity(s_img);
    if (spec.merge == MergeMode::average) {
        return elg_match_loss(img, average_language_targets(targets), gamma, temperature);
    }
    LossGrad<T> out{T(0), Mat<T>::Zero(s_img.rows(), s_img.cols())};
    for (const Mat<T>& target : targets) {
        const LossGrad<T> term = elg_match_loss(img, target, gamma, temperature);
        out.value += term.value;
        out.grad += term.grad;
    }
    out.value /= T(targets.size());
    out.grad /= T(targets.size());
    return out;
}

/// KL between softmaxes taken over the whole flattened matrix.
template <class T>
LossGrad<T> full_matrix_kl(const MaskedSimilarity<T>& img, const Mat<T>& s_lang, T gamma_lang, T temperature) {
    detail::require_same_shape(img.sim.values, s_lang, "full_matrix_kl");
    const Eigen::Index n = img.sim.values.rows();
    const Eigen::Index m = img.sim.values.cols();
    const Mat<T> flat_img = Eigen::Map<const Mat<T>>(img.sim.values.data(), 1, n * m);
    const Mat<T> flat_lang = Eigen::Map<const Mat<T>>(s_lang.data(), 1, n * m);
    const auto p = row_softmax(flat_img, T(0), temperature);
    const auto q = row_softmax(flat_lang, gamma_lang, temperature);
    const Mat<T> flat_grad = rowwise_kl_logit_grad(p.values, q.values, temperature);
    LossGrad<T> out{rowwise_kl(p, q), Eigen::Map<const Mat<T>>(flat_grad.data(), n, m)};
    detail::zero_fixed(out.grad, img.fixed);
    return out;
}

/// Row-wise squared L2 between S_img^X and S_lang + gamma_lang.
template <class T>
LossGrad<T> rowwise_l2_match(const MaskedSimilarity<T>& img, const Mat<T>& s_lang, T gamma_lang) {
    detail::require_same_shape(img.sim.values, s_lang, "rowwise_l2_match");
    const Mat<T> target = s_lang.array() + gamma_lang;
    LossGrad<T> out{rowwise_l2(img.sim.values, target), rowwise_l2_grad(img.sim.values, target)};
    detail::zero_fixed(out.grad, img.fixed);
    return out;
}

/// Symmetric cross-entropy over S_mixed / temperature with the diagonal as target.
/// Gradient is with respect to img_emb only.
template <class T>
LossGrad<T> clip_style_loss(const Mat<T>& img_emb, const Mat<T>& lang_emb, T temperature) {
    using std::exp;
    using std::log;
    if (img_emb.rows() != lang_emb.rows()) fail(ErrorCode::ShapeMismatch, "clip_style_loss: row counts differ");
    if (img_emb.cols() != lang_emb.cols()) fail(ErrorCode::DimMismatch, "clip_style_loss");
    if (!(temperature > T(0))) fail(ErrorCode::NonPositiveTemperature, "clip_style_loss");
    const Eigen::Index n = img_emb.rows();
    const Mat<T> logits = (img_emb * lang_emb.transpose()) / temperature;
    const Mat<T> row_p = row_softmax(logits, T(0), T(1)).values;
    const Mat<T> logits_t = logits.transpose();
    const Mat<T> col_p = row_softmax(logits_t, T(0), T(1)).values.transpose();
    LossGrad<T> out{T(0), Mat<T>()};
    Mat<T> grad_logits(n, n);
    for (Eigen::Index i = 0; i < n; ++i) {
        out.value -= T(0.5) * (detail::floored_log(row_p(i, i)) + detail::floored_log(col_p(i, i)));
        for (Eigen::Index j = 0; j < n; ++j) {
            const T target = i == j ? T(1) : T(0);
            grad_logits(i, j) = T(0.5) * ((row_p(i, j) - target) + (col_p(i, j) - target));
        }
    }
    out.value /= T(n);
    grad_logits /= T(n) * temperature;
    out.grad = grad_logits * lang_emb;
    return out;
}

/// Negated mean cosine between predicted and target language embeddings.
template <class T>
LossGrad<T> predict_head_loss(const Mat<T>& head_out, const Mat<T>& lang_targets) {
    detail::require_same_shape(head_out, lang_targets, "predict_head_loss");
    const T n(head_out.rows());
    return {-(head_out.cwiseProduct(lang_targets).sum()) / n, -lang_targets / n};
}

/// Elg matching against an externally supplied class-similarity target.
template <class T>
LossGrad<T> external_target_guidance(const MaskedSimilarity<T>& img, const Mat<T>& s_external_batch, T gamma_lang,
                                     T temperature) {
    return elg_match_loss(img, s_external_batch, gamma_lang, temperature);
}

/// Gathers a batch target from a class-by-class matrix: out[a][b] = M[y_a][y_b].
template <class T>
Mat<T> gather_class_targets(const Mat<T>& class_matrix, const Labels& labels) {
    const auto n = static_cast<Eigen::Index>(labels.size());
    for (int y : labels) {
        if (y < 0 || y >= class_matrix.rows() || y >= class_matrix.cols()) {
            fail(ErrorCode::MissingClassInExternalMatrix, "label " + std::to_string(y));
        }
    }
    Mat<T> out(n, n);
    for (Eigen::Index a = 0; a < n; ++a)
        for (Eigen::Index b = 0; b < n; ++b) out(a, b) = class_matrix(labels[a], labels[b]);
    return out;
}

/// Maps hierarchy similarities from [0, 1] onto the cosine range [-1, 1].
template <class T>
Mat<T> rescale_unit_to_cosine(const Mat<T>& m) {
    return (T(2) * m).array() - T(1);
}

}  // namespace lgdml
