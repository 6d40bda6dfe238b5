#pragma once

#include "lgdml/matrix.hpp"

#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

namespace lgdml {

/// Unit-norm language embeddings keyed by class name or sample id.
class LanguageTable {
public:
    LanguageTable() = default;
    // Rows are normalised; names must be unique and match the row count.
    LanguageTable(std::vector<std::string> names, const MatD& embeddings, std::string primer = {});

    const std::vector<std::string>& names() const { return names_; }
    const MatD& embeddings() const { return embeddings_; }
    const std::string& primer() const { return primer_; }
    Eigen::Index size() const { return embeddings_.rows(); }
    Eigen::Index dim() const { return embeddings_.cols(); }

    std::optional<Eigen::Index> find(const std::string& name) const;
    // Throws MissingClassName.
    Eigen::Index index_of(const std::string& name) const;
    Eigen::RowVectorXd lookup(const std::string& name) const { return embeddings_.row(index_of(name)); }

    // Rows for the given names, in order.
    MatD gather(const std::vector<std::string>& keys) const;

private:
    std::vector<std::string> names_;
    MatD embeddings_;
    std::string primer_;
    std::unordered_map<std::string, Eigen::Index> index_;
};

}  // namespace lgdml
