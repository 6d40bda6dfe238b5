#include "lgdml/pseudolabeler.hpp"

#include "lgdml/error.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <map>
#include <numeric>
#include <ostream>

namespace lgdml {

namespace {

void check_k(const PosteriorMatrix& post, int k) {
    if (k < 1 || k > post.data.cols()) {
        fail(ErrorCode::KTooLarge, "k=" + std::to_string(k) + " with " + std::to_string(post.data.cols()) +
                                       " pretrain classes");
    }
    if (static_cast<Eigen::Index>(post.class_names.size()) != post.data.cols()) {
        fail(ErrorCode::CountMismatch, "posterior class-name count does not match columns");
    }
}

// Top-k by descending mass, ties by ascending pretrain-class index.
void append_top_k(PseudolabelAssignment& out, const PosteriorMatrix& post, const Eigen::RowVectorXd& mass, int k) {
    std::vector<int> order(static_cast<std::size_t>(mass.size()));
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return mass(a) > mass(b); });
    order.resize(static_cast<std::size_t>(k));
    std::vector<std::string> names;
    std::vector<double> masses;
    for (int c : order) {
        names.push_back(post.class_names[static_cast<std::size_t>(c)]);
        masses.push_back(mass(c));
    }
    out.labels.push_back(std::move(names));
    out.masses.push_back(std::move(masses));
    out.indices.push_back(std::move(order));
}

std::vector<std::vector<Eigen::Index>> resolve_rows(const PseudolabelAssignment& assign,
                                                    const LanguageTable& table,
                                                    const std::vector<int>& batch_keys) {
    std::vector<std::vector<Eigen::Index>> rows;
    rows.reserve(batch_keys.size());
    for (int key : batch_keys) {
        const auto& names = assign.labels[assign.position(key)];
        std::vector<Eigen::Index> r;
        for (const auto& name : names) {
            const auto found = table.find(name);
            if (!found) fail(ErrorCode::MissingPseudoName, name);
            r.push_back(*found);
        }
        rows.push_back(std::move(r));
    }
    return rows;
}

}  // namespace

std::size_t PseudolabelAssignment::position(int key) const {
    if (level == PseudolabelLevel::class_level) {
        const auto it = std::lower_bound(keys.begin(), keys.end(), key);
        if (it != keys.end() && *it == key) return static_cast<std::size_t>(it - keys.begin());
    } else if (key >= 0 && static_cast<std::size_t>(key) < keys.size() && keys[static_cast<std::size_t>(key)] == key) {
        return static_cast<std::size_t>(key);
    }
    fail(ErrorCode::InvalidArgument, "no pseudolabels for key " + std::to_string(key));
}

std::size_t renormalize_posteriors(PosteriorMatrix& post) {
    std::size_t fixed = 0;
    for (Eigen::Index i = 0; i < post.data.rows(); ++i) {
        const double sum = post.data.row(i).sum();
        if (std::abs(sum - 1.0) > 1e-4) {
            if (!(sum > 0.0)) fail(ErrorCode::DegenerateInput, "posterior row " + std::to_string(i) + " sums to zero");
            post.data.row(i) /= sum;
            ++fixed;
        }
    }
    if (fixed > 0) std::cerr << "warning: renormalised " << fixed << " posterior rows\n";
    return fixed;
}

PseudolabelAssignment class_pseudolabels(const PosteriorMatrix& post, const Labels& labels, int k) {
    check_k(post, k);
    if (static_cast<Eigen::Index>(labels.size()) != post.data.rows()) {
        fail(ErrorCode::ShapeMismatch, "label count does not match posterior rows");
    }
    if (labels.empty()) fail(ErrorCode::EmptyClass, "no samples");
    std::map<int, std::pair<Eigen::RowVectorXd, int>> sums;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        auto [it, inserted] = sums.try_emplace(labels[i], Eigen::RowVectorXd::Zero(post.data.cols()), 0);
        it->second.first += post.data.row(static_cast<Eigen::Index>(i));
        it->second.second += 1;
    }
    PseudolabelAssignment out;
    out.level = PseudolabelLevel::class_level;
    for (const auto& [cls, acc] : sums) {
        out.keys.push_back(cls);
        append_top_k(out, post, acc.first / static_cast<double>(acc.second), k);
    }
    return out;
}

PseudolabelAssignment sample_pseudolabels(const PosteriorMatrix& post, int k) {
    check_k(post, k);
    PseudolabelAssignment out;
    out.level = PseudolabelLevel::sample_level;
    for (Eigen::Index i = 0; i < post.data.rows(); ++i) {
        out.keys.push_back(static_cast<int>(i));
        append_top_k(out, post, post.data.row(i), k);
    }
    return out;
}

std::vector<MatD> build_pseudolang_matrices(const PseudolabelAssignment& assign, const LanguageTable& pseudo_table,
                                            const std::vector<int>& batch_keys) {
    const auto rows = resolve_rows(assign, pseudo_table, batch_keys);
    const std::size_t k = assign.labels.empty() ? 0 : assign.labels.front().size();
    const auto n = static_cast<Eigen::Index>(batch_keys.size());
    std::vector<MatD> out;
    for (std::size_t rank = 0; rank < k; ++rank) {
        MatD emb(n, pseudo_table.dim());
        for (Eigen::Index a = 0; a < n; ++a) emb.row(a) = pseudo_table.embeddings().row(rows[a][rank]);
        out.push_back(emb * emb.transpose());
    }
    return out;
}

std::vector<MatD> build_dense_pseudolang_matrices(const PseudolabelAssignment& assign,
                                                  const LanguageTable& pseudo_table,
                                                  const std::vector<int>& batch_keys) {
    const auto rows = resolve_rows(assign, pseudo_table, batch_keys);
    const std::size_t k = assign.labels.empty() ? 0 : assign.labels.front().size();
    const auto n = static_cast<Eigen::Index>(batch_keys.size());
    std::vector<MatD> per_rank;
    for (std::size_t rank = 0; rank < k; ++rank) {
        MatD emb(n, pseudo_table.dim());
        for (Eigen::Index a = 0; a < n; ++a) emb.row(a) = pseudo_table.embeddings().row(rows[a][rank]);
        per_rank.push_back(std::move(emb));
    }
    std::vector<MatD> out;
    for (std::size_t r1 = 0; r1 < k; ++r1)
        for (std::size_t r2 = 0; r2 < k; ++r2) out.push_back(per_rank[r1] * per_rank[r2].transpose());
    return out;
}

void write_assignment_report(std::ostream& os, const PseudolabelAssignment& assign) {
    const auto old_precision = os.precision(17);
    for (std::size_t i = 0; i < assign.keys.size(); ++i) {
        for (std::size_t r = 0; r < assign.labels[i].size(); ++r) {
            os << assign.keys[i] << ',' << (r + 1) << ',' << assign.labels[i][r] << ',' << assign.masses[i][r] << '\n';
        }
    }
    os.precision(old_precision);
}

}  // namespace lgdml
