#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <vector>

namespace lgdml {

template <class T>
using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using Vec = Eigen::Matrix<T, Eigen::Dynamic, 1>;

using MatF = Mat<float>;
using MatD = Mat<double>;
using Mask = Eigen::Matrix<bool, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

using Labels = std::vector<int>;

enum class SimilarityKind { image, language, pseudolang, masked_image, mixed, external };

/// Unit-norm embeddings, one row per sample.
template <class T>
struct EmbeddingMatrix {
    Mat<T> values;

    Eigen::Index size() const { return values.rows(); }
    Eigen::Index dim() const { return values.cols(); }
};

template <class T>
struct SimilarityMatrix {
    Mat<T> values;
    SimilarityKind kind = SimilarityKind::image;
};

/// Row-stochastic matrix; every row sums to one.
template <class T>
struct RowDistribution {
    Mat<T> values;
};

/// A scalar loss and its gradient with respect to the loss's differentiable input.
template <class T>
struct LossGrad {
    T value{0};
    Mat<T> grad;
};

}  // namespace lgdml
