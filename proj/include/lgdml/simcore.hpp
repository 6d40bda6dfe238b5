#pragma once

// Dense similarity, softmax and divergence kernels with hand-derived
// backward passes. Every kernel is a template over the scalar type so the
// same code runs in float (training), double (analytic checks) and an
// extended type (finite-difference reference).

#include "lgdml/error.hpp"
#include "lgdml/matrix.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace lgdml {

inline constexpr double kZeroRowNorm = 1e-12;
inline constexpr double kProbabilityFloor = 1e-30;

namespace detail {

template <class T>
void require_same_shape(const Mat<T>& a, const Mat<T>& b, const char* what) {
    if (a.rows() != b.rows() || a.cols() != b.cols()) {
        fail(ErrorCode::ShapeMismatch, std::string(what) + ": " + std::to_string(a.rows()) + "x" +
                                           std::to_string(a.cols()) + " vs " + std::to_string(b.rows()) +
                                           "x" + std::to_string(b.cols()));
    }
}

template <class T>
void require_square(const Mat<T>& a, const char* what) {
    if (a.rows() != a.cols()) fail(ErrorCode::ShapeMismatch, std::string(what) + ": matrix is not square");
}

template <class T>
T floored_log(T p) {
    using std::log;
    using std::max;
    return log(max(p, T(kProbabilityFloor)));
}

}  // namespace detail

template <class T>
EmbeddingMatrix<T> normalize_rows(const Mat<T>& m) {
    using std::sqrt;
    EmbeddingMatrix<T> out{Mat<T>(m.rows(), m.cols())};
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
        const T norm = sqrt(m.row(i).squaredNorm());
        if (!(norm > T(kZeroRowNorm))) fail(ErrorCode::ZeroRow, "row " + std::to_string(i));
        out.values.row(i) = m.row(i) / norm;
    }
    return out;
}

/// Backward of normalize_rows: dx = (g - y (y.g)) / |x|.
template <class T>
Mat<T> normalize_rows_backward(const Mat<T>& input, const Mat<T>& grad_out) {
    using std::sqrt;
    detail::require_same_shape(input, grad_out, "normalize_rows_backward");
    Mat<T> grad(input.rows(), input.cols());
    for (Eigen::Index i = 0; i < input.rows(); ++i) {
        const T norm = sqrt(input.row(i).squaredNorm());
        if (!(norm > T(kZeroRowNorm))) fail(ErrorCode::ZeroRow, "row " + std::to_string(i));
        const auto y = (input.row(i) / norm).eval();
        const T proj = y.dot(grad_out.row(i));
        grad.row(i) = (grad_out.row(i) - proj * y) / norm;
    }
    return grad;
}

template <class T>
SimilarityMatrix<T> cosine_similarity_matrix(const Mat<T>& a, const Mat<T>& b,
                                             SimilarityKind kind = SimilarityKind::image) {
    if (a.cols() != b.cols()) {
        fail(ErrorCode::DimMismatch, std::to_string(a.cols()) + " vs " + std::to_string(b.cols()));
    }
    return {a * b.transpose(), kind};
}

template <class T>
SimilarityMatrix<T> cosine_similarity_matrix(const EmbeddingMatrix<T>& a, const EmbeddingMatrix<T>& b,
                                             SimilarityKind kind = SimilarityKind::image) {
    return cosine_similarity_matrix(a.values, b.values, kind);
}

/// Gradient of a loss through S = E E^T back onto E.
template <class T>
Mat<T> self_similarity_backward(const Mat<T>& grad_sim, const Mat<T>& emb) {
    return (grad_sim + grad_sim.transpose()) * emb;
}

/// Row-wise softmax of (S + shift) / temperature, stabilised by the row max.
template <class T>
RowDistribution<T> row_softmax(const Mat<T>& s, T shift, T temperature) {
    using std::exp;
    if (!(temperature > T(0))) fail(ErrorCode::NonPositiveTemperature, "row_softmax");
    RowDistribution<T> out{Mat<T>(s.rows(), s.cols())};
    for (Eigen::Index i = 0; i < s.rows(); ++i) {
        const T row_max = s.row(i).maxCoeff();
        T total(0);
        for (Eigen::Index j = 0; j < s.cols(); ++j) {
            // The shift cancels against the max subtraction but is kept explicit.
            const T z = ((s(i, j) + shift) - (row_max + shift)) / temperature;
            out.values(i, j) = exp(z);
            total += out.values(i, j);
        }
        out.values.row(i) /= total;
    }
    return out;
}

template <class T>
RowDistribution<T> row_softmax(const SimilarityMatrix<T>& s, T shift, T temperature) {
    return row_softmax(s.values, shift, temperature);
}

/// Backward of row_softmax: given dL/dP, returns dL/dS.
template <class T>
Mat<T> row_softmax_backward(const Mat<T>& probs, const Mat<T>& grad_probs, T temperature) {
    detail::require_same_shape(probs, grad_probs, "row_softmax_backward");
    Mat<T> grad(probs.rows(), probs.cols());
    for (Eigen::Index i = 0; i < probs.rows(); ++i) {
        const T inner = probs.row(i).dot(grad_probs.row(i));
        for (Eigen::Index j = 0; j < probs.cols(); ++j) {
            grad(i, j) = probs(i, j) * (grad_probs(i, j) - inner) / temperature;
        }
    }
    return grad;
}

/// Mean over rows of KL(P_i || Q_i).
template <class T>
T rowwise_kl(const Mat<T>& p, const Mat<T>& q) {
    detail::require_same_shape(p, q, "rowwise_kl");
    if (p.rows() == 0) return T(0);
    T total(0);
    for (Eigen::Index i = 0; i < p.rows(); ++i) {
        for (Eigen::Index j = 0; j < p.cols(); ++j) {
            const T pij = p(i, j);
            if (pij == T(0)) continue;
            total += pij * (detail::floored_log(pij) - detail::floored_log(q(i, j)));
        }
    }
    return total / T(p.rows());
}

template <class T>
T rowwise_kl(const RowDistribution<T>& p, const RowDistribution<T>& q) {
    return rowwise_kl(p.values, q.values);
}

/// Gradient of rowwise_kl(softmax(S / temperature), Q) with respect to S.
template <class T>
Mat<T> rowwise_kl_logit_grad(const Mat<T>& p, const Mat<T>& q, T temperature) {
    detail::require_same_shape(p, q, "rowwise_kl_logit_grad");
    Mat<T> g(p.rows(), p.cols());
    for (Eigen::Index i = 0; i < p.rows(); ++i) {
        for (Eigen::Index j = 0; j < p.cols(); ++j) {
            g(i, j) = (detail::floored_log(p(i, j)) - detail::floored_log(q(i, j))) / T(p.rows());
        }
    }
    return row_softmax_backward(p, g, temperature);
}

/// Mean over rows of the squared Euclidean distance between rows.
template <class T>
T rowwise_l2(const Mat<T>& a, const Mat<T>& b) {
    detail::require_same_shape(a, b, "rowwise_l2");
    if (a.rows() == 0) return T(0);
    return (a - b).squaredNorm() / T(a.rows());
}

template <class T>
Mat<T> rowwise_l2_grad(const Mat<T>& a, const Mat<T>& b) {
    detail::require_same_shape(a, b, "rowwise_l2_grad");
    return (T(2) / T(a.rows())) * (a - b);
}

}  // namespace lgdml
