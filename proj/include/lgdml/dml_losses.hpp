#pragma once

#include "lgdml/error.hpp"
#include "lgdml/matrix.hpp"
#include "lgdml/rng.hpp"
#include "lgdml/simcore.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <vector>

namespace lgdml {

enum class DistanceMetric { euclidean, cosine_distance };
enum class ContrastiveForm { paper, hinge };

struct ContrastiveParams {
    double gamma_p = 0.0;
    double gamma_n = 1.0;
    ContrastiveForm form = ContrastiveForm::paper;
    DistanceMetric metric = DistanceMetric::euclidean;
};

struct MultisimParams {
    double alpha = 2.0;
    double beta = 50.0;
    double lambda = 0.5;
    double epsilon = 0.1;
    // Mining interpolation between language and image similarity.
    double nu1 = 1.0;
    double nu2 = 1.0;
    // Reweighting exponents for positives / negatives; 0 disables reweighting.
    double nu3 = 0.0;
    double nu4 = 0.0;

    // Reweighted variant: alpha and beta readjusted for the change in magnitude.
    static MultisimParams reweighted() {
        MultisimParams p;
        p.alpha = 1.5;
        p.beta = 45.0;
        p.nu3 = 0.75;
        p.nu4 = 0.75;
        return p;
    }
};

enum class TripletSampler { distance_weighted, random };

struct MarginParams {
    double beta_margin = 1.2;
    double alpha_margin = 0.2;
    TripletSampler sampler = TripletSampler::distance_weighted;
    bool learn_beta = false;
    double beta_lr = 5e-4;
};

inline constexpr double kDistanceWeightCutoff = 0.5;
inline constexpr double kWeightRatioMax = 10.0;
inline constexpr double kWeightRatioFloor = 1e-3;

struct MiningMasks {
    Mask positives;
    Mask negatives;
};

struct Triplet {
    int anchor;
    int positive;
    int negative;
};

template <class T>
struct MarginResult {
    T value{0};
    Mat<T> grad;
    T grad_beta{0};
};

void validate(const ContrastiveParams& p);
void validate(const MultisimParams& p);
void validate(const MarginParams& p);

namespace detail {

inline void require_labels(Eigen::Index n, const Labels& labels, const char* what) {
    if (static_cast<Eigen::Index>(labels.size()) != n) {
        fail(ErrorCode::ShapeMismatch, std::string(what) + ": label count does not match rows");
    }
}

// Sign-preserving power so fractional exponents stay defined on negative similarities.
template <class T>
T signed_pow(T x, T e) {
    using std::abs;
    using std::pow;
    if (e == T(1)) return x;
    const T mag = pow(abs(x), e);
    return x < T(0) ? -mag : mag;
}

template <class T>
T pair_distance(const Mat<T>& emb, Eigen::Index i, Eigen::Index j, DistanceMetric metric) {
    using std::sqrt;
    if (metric == DistanceMetric::cosine_distance) return T(1) - emb.row(i).dot(emb.row(j));
    return sqrt((emb.row(i) - emb.row(j)).squaredNorm());
}

// Adds dd/d(emb_i) * scale to grad.row(i) and the opposite side to grad.row(j).
template <class T>
void accumulate_distance_grad(const Mat<T>& emb, Eigen::Index i, Eigen::Index j, T d, T scale,
                              DistanceMetric metric, Mat<T>& grad) {
    if (metric == DistanceMetric::cosine_distance) {
        grad.row(i) -= scale * emb.row(j);
        grad.row(j) -= scale * emb.row(i);
        return;
    }
    if (!(d > T(1e-12))) return;
    const auto dir = ((emb.row(i) - emb.row(j)) / d).eval();
    grad.row(i) += scale * dir;
    grad.row(j) -= scale * dir;
}

}  // namespace detail

/// Pair loss over all ordered pairs (i, j), i != j. In the default form the
/// same-class term is max(gamma_p, d) and the different-class term is
/// -min(gamma_n, d); the hinge form uses max(0, d - gamma_p) and max(0, gamma_n - d).
template <class T>
LossGrad<T> contrastive_loss(const Mat<T>& emb, const Labels& labels, const ContrastiveParams& p) {
    detail::require_labels(emb.rows(), labels, "contrastive_loss");
    const Eigen::Index n = emb.rows();
    if (n < 2) fail(ErrorCode::NoValidPairs, "contrastive_loss needs at least two samples");
    const T gp(p.gamma_p);
    const T gn(p.gamma_n);
    const T inv_pairs = T(1) / T(n * (n - 1));
    LossGrad<T> out{T(0), Mat<T>::Zero(emb.rows(), emb.cols())};
    for (Eigen::Index i = 0; i < n; ++i) {
        for (Eigen::Index j = 0; j < n; ++j) {
            if (i == j) continue;
            const T d = detail::pair_distance(emb, i, j, p.metric);
            const bool same = labels[i] == labels[j];
            T term(0);
            T slope(0);
            if (p.form == ContrastiveForm::paper) {
                if (same) {
                    term = d > gp ? d : gp;
                    slope = d > gp ? T(1) : T(0);
                } else {
                    term = -(d < gn ? d : gn);
                    slope = d < gn ? T(-1) : T(0);
                }
            } else {
                if (same) {
                    term = d > gp ? d - gp : T(0);
                    slope = d > gp ? T(1) : T(0);
                } else {
                    term = d < gn ? gn - d : T(0);
                    slope = d < gn ? T(-1) : T(0);
                }
            }
            out.value += term * inv_pairs;
            if (slope != T(0)) detail::accumulate_distance_grad(emb, i, j, d, slope * inv_pairs, p.metric, out.grad);
        }
    }
    return out;
}

/// Language/image interpolation used for mining:
/// [(1 - nu1) * lang^nu2 + nu1 * img^nu2]^(1/nu2).
template <class T>
T mining_similarity(T lang, T img, double nu1, double nu2) {
    if (nu1 == 1.0) return img;
    if (nu2 == 1.0) return img + T(1.0 - nu1) * (lang - img);
    const T e(nu2);
    const T mixed = T(1.0 - nu1) * detail::signed_pow(lang, e) + T(nu1) * detail::signed_pow(img, e);
    return detail::signed_pow(mixed, T(1) / e);
}

/// Pair-selection masks for the multisimilarity loss. A positive is kept when its
/// mined similarity is below the hardest negative + epsilon; a negative is kept when
/// its mined similarity exceeds the hardest positive - epsilon. Hardest-pair
/// thresholds come from the image similarities; the mined similarity is the
/// language interpolation when a language matrix is given.
template <class T>
MiningMasks language_adjusted_mining_mask(const Mat<T>& s_img, const Mat<T>* s_lang, const Labels& labels,
                                          const MultisimParams& p) {
    detail::require_square(s_img, "mining_mask");
    detail::require_labels(s_img.rows(), labels, "mining_mask");
    if (s_lang) detail::require_same_shape(s_img, *s_lang, "mining_mask");
    const Eigen::Index n = s_img.rows();
    MiningMasks masks{Mask::Constant(n, n, false), Mask::Constant(n, n, false)};
    const T eps(p.epsilon);
    for (Eigen::Index i = 0; i < n; ++i) {
        T hardest_neg = -std::numeric_limits<T>::infinity();
        T hardest_pos = std::numeric_limits<T>::infinity();
        bool any_neg = false;
        bool any_pos = false;
        for (Eigen::Index k = 0; k < n; ++k) {
            if (k == i) continue;
            if (labels[k] == labels[i]) {
                any_pos = true;
                if (s_img(i, k) < hardest_pos) hardest_pos = s_img(i, k);
            } else {
                any_neg = true;
                if (s_img(i, k) > hardest_neg) hardest_neg = s_img(i, k);
            }
        }
        for (Eigen::Index k = 0; k < n; ++k) {
            if (k == i) continue;
            const T mined = s_lang ? mining_similarity((*s_lang)(i, k), s_img(i, k), p.nu1, p.nu2) : s_img(i, k);
            if (labels[k] == labels[i]) {
                masks.positives(i, k) = any_neg && mined < hardest_neg + eps;
            } else {
                masks.negatives(i, k) = any_pos && mined > hardest_pos - eps;
            }
        }
    }
    return masks;
}

namespace detail {

// Reweighting factor (lang / img)^nu with the ratio clamped to [0, kWeightRatioMax]
// and the denominator floored; returns the weight and its derivative w.r.t. img.
template <class T>
std::pair<T, T> language_weight(T lang, T img, double nu) {
    using std::pow;
    if (nu == 0.0) return {T(1), T(0)};
    const bool floored = !(img > T(kWeightRatioFloor));
    const T denom = floored ? T(kWeightRatioFloor) : img;
    T ratio = lang / denom;
    bool clamped = false;
    if (ratio < T(0)) {
        ratio = T(0);
        clamped = true;
    } else if (ratio > T(kWeightRatioMax)) {
        ratio = T(kWeightRatioMax);
        clamped = true;
    }
    if (ratio == T(0)) return {T(0), T(0)};
    const T e(nu);
    const T w = pow(ratio, e);
    if (floored || clamped) return {w, T(0)};
    const T dratio = -lang / (img * img);
    return {w, e * pow(ratio, e - T(1)) * dratio};
}

// log(1 + sum exp(a_k)) evaluated stably; returns the value and softmax weights
// exp(a_k) / (1 + sum exp(a)).
template <class T>
T log1p_sum_exp(const std::vector<T>& a, std::vector<T>& weights) {
    using std::exp;
    using std::log;
    T m(0);
    for (const T& v : a) m = v > m ? v : m;
    T total = exp(-m);
    for (const T& v : a) total += exp(v - m);
    weights.resize(a.size());
    for (std::size_t k = 0; k < a.size(); ++k) weights[k] = exp(a[k] - m) / total;
    return m + log(total);
}

}  // namespace detail

/// Multisimilarity loss on a batch similarity matrix. Without a language matrix this
/// is the standard loss; with one, mining uses the language interpolation and each
/// pair term is scaled by (lang / img)^nu3 (positives) or ^nu4 (negatives).
/// The gradient is with respect to s_img; masks are treated as constants.
template <class T>
LossGrad<T> multisimilarity_loss(const Mat<T>& s_img, const Labels& labels, const MultisimParams& p,
                                 const Mat<T>* s_lang = nullptr) {
    const MiningMasks masks = language_adjusted_mining_mask(s_img, s_lang, labels, p);
    const Eigen::Index n = s_img.rows();
    const T alpha(p.alpha);
    const T beta(p.beta);
    const T lambda(p.lambda);
    LossGrad<T> out{T(0), Mat<T>::Zero(n, n)};
    std::vector<Eigen::Index> idx;
    std::vector<T> logits, dlogit, weights;
    auto branch = [&](Eigen::Index i, const Mask& mask, T scale, double nu, bool positive) {
        idx.clear();
        logits.clear();
        dlogit.clear();
        for (Eigen::Index k = 0; k < n; ++k) {
            if (!mask(i, k)) continue;
            const T s = s_img(i, k);
            T w(1), dw(0);
            if (s_lang) std::tie(w, dw) = detail::language_weight((*s_lang)(i, k), s, nu);
            const T sign = positive ? T(-1) : T(1);
            idx.push_back(k);
            logits.push_back(sign * scale * w * (s - lambda));
            dlogit.push_back(sign * scale * (w + dw * (s - lambda)));
        }
        if (idx.empty()) return;
        const T value = detail::log1p_sum_exp(logits, weights) / scale;
        out.value += value / T(n);
        for (std::size_t m = 0; m < idx.size(); ++m) {
            out.grad(i, idx[m]) += weights[m] * dlogit[m] / scale / T(n);
        }
    };
    for (Eigen::Index i = 0; i < n; ++i) {
        branch(i, masks.positives, alpha, p.nu3, true);
        branch(i, masks.negatives, beta, p.nu4, false);
    }
    return out;
}

/// Normalised inverse-density weights over the negatives of one anchor. The density
/// of pairwise distances on the unit sphere in dimension n is proportional to
/// d^(n-2) (1 - d^2/4)^((n-3)/2); distances are clipped below at the cutoff.
template <class T>
std::vector<double> distance_weighted_probabilities(const Mat<T>& emb, const Labels& labels, int anchor,
                                                    double cutoff = kDistanceWeightCutoff) {
    const double dim = static_cast<double>(emb.cols());
    std::vector<double> logw(labels.size(), -std::numeric_limits<double>::infinity());
    double best = -std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < labels.size(); ++k) {
        if (labels[k] == labels[anchor]) continue;
        double d = static_cast<double>(detail::pair_distance(emb, anchor, static_cast<Eigen::Index>(k),
                                                             DistanceMetric::euclidean));
        d = std::max(d, cutoff);
        const double inner = std::max(1.0 - 0.25 * d * d, 1e-8);
        logw[k] = -((dim - 2.0) * std::log(d) + 0.5 * (dim - 3.0) * std::log(inner));
        best = std::max(best, logw[k]);
    }
    std::vector<double> probs(labels.size(), 0.0);
    double total = 0.0;
    for (std::size_t k = 0; k < labels.size(); ++k) {
        if (!std::isfinite(logw[k])) continue;
        probs[k] = std::exp(logw[k] - best);
        total += probs[k];
    }
    for (double& v : probs) v /= total;
    return probs;
}

inline std::size_t sample_categorical(const std::vector<double>& probs, Rng& rng) {
    const double u = rng.uniform();
    double acc = 0.0;
    std::size_t last = 0;
    for (std::size_t k = 0; k < probs.size(); ++k) {
        if (probs[k] <= 0.0) continue;
        acc += probs[k];
        last = k;
        if (u < acc) return k;
    }
    return last;
}

/// One triplet per anchor that has at least one positive and one negative.
template <class T>
std::vector<Triplet> sample_triplets(const Mat<T>& emb, const Labels& labels, const MarginParams& p, Rng& rng) {
    detail::require_labels(emb.rows(), labels, "sample_triplets");
    const int n = static_cast<int>(labels.size());
    std::vector<Triplet> triplets;
    std::vector<int> pos, neg;
    for (int a = 0; a < n; ++a) {
        pos.clear();
        neg.clear();
        for (int k = 0; k < n; ++k) {
            if (k == a) continue;
            (labels[k] == labels[a] ? pos : neg).push_back(k);
        }
        if (pos.empty() || neg.empty()) continue;
        const int positive = pos[rng.index(pos.size())];
        int negative;
        if (p.sampler == TripletSampler::random) {
            negative = neg[rng.index(neg.size())];
        } else {
            negative = static_cast<int>(sample_categorical(distance_weighted_probabilities(emb, labels, a), rng));
        }
        triplets.push_back({a, positive, negative});
    }
    if (triplets.empty()) fail(ErrorCode::NoValidTriplets, "no anchor has both a positive and a negative");
    return triplets;
}

/// Margin loss over fixed triplets: mean over triplets of
/// max(0, alpha + d(a,p) - beta) + max(0, alpha - d(a,n) + beta).
template <class T>
MarginResult<T> margin_loss(const Mat<T>& emb, const std::vector<Triplet>& triplets, const MarginParams& p,
                            T beta) {
    if (triplets.empty()) fail(ErrorCode::NoValidTriplets, "empty triplet list");
    const T alpha(p.alpha_margin);
    const T inv = T(1) / T(triplets.size());
    MarginResult<T> out{T(0), Mat<T>::Zero(emb.rows(), emb.cols()), T(0)};
    for (const Triplet& t : triplets) {
        const T dp = detail::pair_distance(emb, t.anchor, t.positive, DistanceMetric::euclidean);
        const T dn = detail::pair_distance(emb, t.anchor, t.negative, DistanceMetric::euclidean);
        const T pos_term = alpha + dp - beta;
        const T neg_term = alpha - dn + beta;
        if (pos_term > T(0)) {
            out.value += pos_term * inv;
            out.grad_beta -= inv;
            detail::accumulate_distance_grad(emb, t.anchor, t.positive, dp, inv, DistanceMetric::euclidean, out.grad);
        }
        if (neg_term > T(0)) {
            out.value += neg_term * inv;
            out.grad_beta += inv;
            detail::accumulate_distance_grad(emb, t.anchor, t.negative, dn, -inv, DistanceMetric::euclidean, out.grad);
        }
    }
    return out;
}

template <class T>
MarginResult<T> margin_loss(const Mat<T>& emb, const Labels& labels, const MarginParams& p, std::uint64_t rng_seed) {
    Rng rng(rng_seed);
    return margin_loss(emb, sample_triplets(emb, labels, p, rng), p, T(p.beta_margin));
}

}  // namespace lgdml
