#pragma once

#include "lgdml/matrix.hpp"
#include "lgdml/rng.hpp"

#include <cmath>
#include <filesystem>
#include <string>

#include <unistd.h>

namespace testutil {

inline lgdml::MatD gaussian(lgdml::Rng& rng, Eigen::Index rows, Eigen::Index cols) {
    lgdml::MatD m(rows, cols);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.normal();
    return m;
}

inline lgdml::MatD unit_rows(lgdml::Rng& rng, Eigen::Index rows, Eigen::Index cols) {
    lgdml::MatD m = gaussian(rng, rows, cols);
    for (Eigen::Index i = 0; i < rows; ++i) m.row(i) /= m.row(i).norm();
    return m;
}

// Cosine similarities of random unit vectors, a realistic similarity matrix.
inline lgdml::MatD random_similarity(lgdml::Rng& rng, Eigen::Index n, Eigen::Index dim = 6) {
    const lgdml::MatD e = unit_rows(rng, n, dim);
    return e * e.transpose();
}

inline double max_abs_diff(const lgdml::MatD& a, const lgdml::MatD& b) { return (a - b).cwiseAbs().maxCoeff(); }

// Plain softmax over one row, written without any stabilisation tricks.
inline lgdml::MatD naive_softmax(const lgdml::MatD& s, double shift, double temperature) {
    lgdml::MatD out(s.rows(), s.cols());
    for (Eigen::Index i = 0; i < s.rows(); ++i) {
        double z = 0.0;
        for (Eigen::Index j = 0; j < s.cols(); ++j) z += std::exp((s(i, j) + shift) / temperature);
        for (Eigen::Index j = 0; j < s.cols(); ++j) out(i, j) = std::exp((s(i, j) + shift) / temperature) / z;
    }
    return out;
}

inline double naive_kl(const lgdml::MatD& p, const lgdml::MatD& q) {
    double total = 0.0;
    for (Eigen::Index i = 0; i < p.rows(); ++i)
        for (Eigen::Index j = 0; j < p.cols(); ++j) total += p(i, j) * std::log(p(i, j) / q(i, j));
    return total / static_cast<double>(p.rows());
}

// Central difference of a scalar function of a matrix, one coordinate at a time.
template <class F>
lgdml::MatD numeric_grad(F&& f, lgdml::MatD x, double h = 1e-6) {
    lgdml::MatD g(x.rows(), x.cols());
    for (Eigen::Index i = 0; i < x.size(); ++i) {
        const double keep = x.data()[i];
        x.data()[i] = keep + h;
        const double up = f(x);
        x.data()[i] = keep - h;
        const double down = f(x);
        x.data()[i] = keep;
        g.data()[i] = (up - down) / (2.0 * h);
    }
    return g;
}

class TempDir {
public:
    explicit TempDir(const std::string& tag) {
        static int counter = 0;
        path_ = std::filesystem::temp_directory_path() /
                ("lgdml_test_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
        std::filesystem::remove_all(path_);
        std::filesystem::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    const std::filesystem::path& path() const { return path_; }
    std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

private:
    std::filesystem::path path_;
};

}  // namespace testutil
