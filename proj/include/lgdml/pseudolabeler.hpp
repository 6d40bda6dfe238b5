#pragma once

#include "lgdml/language_table.hpp"
#include "lgdml/matrix.hpp"

#include <iosfwd>
#include <string>
#include <vector>

namespace lgdml {

/// Frozen-classifier softmax outputs, one row per sample.
struct PosteriorMatrix {
    MatD data;
    std::vector<std::string> class_names;
};

enum class PseudolabelLevel { class_level, sample_level };

struct PseudolabelAssignment {
    PseudolabelLevel level = PseudolabelLevel::class_level;
    std::vector<int> keys;                        // class ids or sample indices
    std::vector<std::vector<std::string>> labels; // per key, k names by descending mass
    std::vector<std::vector<double>> masses;
    std::vector<std::vector<int>> indices;        // pretrain-class indices behind labels

    // Position of a key in `keys`; throws InvalidArgument if absent.
    std::size_t position(int key) const;
};

// Rows whose sum is off by more than 1e-4 are renormalised; returns how many were.
std::size_t renormalize_posteriors(PosteriorMatrix& post);

PseudolabelAssignment class_pseudolabels(const PosteriorMatrix& post, const Labels& labels, int k);
PseudolabelAssignment sample_pseudolabels(const PosteriorMatrix& post, int k);

/// Per rank j: out[j](a, b) = cosine between the rank-j pseudolabel embeddings of
/// batch keys a and b.
std::vector<MatD> build_pseudolang_matrices(const PseudolabelAssignment& assign, const LanguageTable& pseudo_table,
                                            const std::vector<int>& batch_keys);

/// All k*k rank pairings: out[r1 * k + r2](a, b) = cosine(rank r1 of a, rank r2 of b).
std::vector<MatD> build_dense_pseudolang_matrices(const PseudolabelAssignment& assign,
                                                  const LanguageTable& pseudo_table,
                                                  const std::vector<int>& batch_keys);

/// One line per (key, rank): key,rank,name,mass
void write_assignment_report(std::ostream& os, const PseudolabelAssignment& assign);

}  // namespace lgdml
