#include "lgdml/language_table.hpp"

#include "lgdml/error.hpp"
#include "lgdml/simcore.hpp"

#include <cmath>

namespace lgdml {

namespace {
constexpr double kUnitTolerance = 1e-6;
}

LanguageTable::LanguageTable(std::vector<std::string> names, const MatD& embeddings, std::string primer)
    : names_(std::move(names)), primer_(std::move(primer)) {
    if (static_cast<Eigen::Index>(names_.size()) != embeddings.rows()) {
        fail(ErrorCode::CountMismatch, std::to_string(names_.size()) + " names for " +
                                           std::to_string(embeddings.rows()) + " embedding rows");
    }
    embeddings_ = embeddings;
    for (Eigen::Index i = 0; i < embeddings_.rows(); ++i) {
        const double norm = embeddings_.row(i).norm();
        if (!(norm > kZeroRowNorm)) fail(ErrorCode::ZeroRow, "language row " + std::to_string(i));
        // Rows already unit-norm at single precision are kept bit-exact.
        if (std::abs(norm - 1.0) > kUnitTolerance) embeddings_.row(i) /= norm;
    }
    for (std::size_t i = 0; i < names_.size(); ++i) {
        if (!index_.emplace(names_[i], static_cast<Eigen::Index>(i)).second) {
            fail(ErrorCode::DuplicateName, names_[i]);
        }
    }
}

std::optional<Eigen::Index> LanguageTable::find(const std::string& name) const {
    const auto it = index_.find(name);
    if (it == index_.end()) return std::nullopt;
    return it->second;
}

Eigen::Index LanguageTable::index_of(const std::string& name) const {
    const auto found = find(name);
    if (!found) fail(ErrorCode::MissingClassName, name);
    return *found;
}

MatD LanguageTable::gather(const std::vector<std::string>& keys) const {
    MatD out(static_cast<Eigen::Index>(keys.size()), dim());
    for (std::size_t i = 0; i < keys.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = embeddings_.row(index_of(keys[i]));
    return out;
}

}  // namespace lgdml
