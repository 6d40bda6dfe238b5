#pragma once

#include "lgdml/language_table.hpp"
#include "lgdml/matrix.hpp"
#include "lgdml/pseudolabeler.hpp"

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace lgdml {

/// "027.Shiny_Cowbird" -> "Shiny Cowbird": drops a leading "<digits>." index,
/// maps underscores to spaces and trims.
std::string clean_class_name(const std::string& raw);

/// Reads an LGDM matrix plus a names sidecar (one UTF-8 name per line). Rows are
/// normalised; the primer is kept as metadata only.
LanguageTable load_language_table(const std::filesystem::path& matrix_path, const std::filesystem::path& names_path,
                                  const std::optional<std::string>& primer = std::nullopt);

void save_language_table(const std::filesystem::path& matrix_path, const std::filesystem::path& names_path,
                         const LanguageTable& table);

/// Class-by-class target aligned with `class_names`, read from a [0, 1] hierarchy
/// similarity file and mapped onto [-1, 1]. Classes absent from the sidecar raise
/// MissingClassInExternalMatrix.
MatD load_external_targets(const std::filesystem::path& matrix_path, const std::filesystem::path& names_path,
                           const std::vector<std::string>& class_names);

struct DatasetBundle {
    MatD train_features;
    Labels train_labels;
    MatD test_features;
    Labels test_labels;
    std::vector<std::string> class_names;

    std::optional<LanguageTable> class_language;
    std::vector<LanguageTable> extra_class_language;  // further text models, for averaging
    std::optional<LanguageTable> sample_language;     // keyed by train sample id
    std::optional<PosteriorMatrix> train_posteriors;
    std::optional<LanguageTable> pseudo_language;     // keyed by pretrain-class name
    std::optional<MatD> external_targets;              // [-1, 1], aligned with class_names
};

/// Key used for per-sample language rows of training sample i.
std::string sample_key(std::size_t index);

void validate(const DatasetBundle& bundle);

// Directory layout (optional files may be absent):
//   train_features.lgdm train_labels.txt test_features.lgdm test_labels.txt class_names.txt
//   lang.lgdm lang_names.txt [primer.txt]      lang_<i>.lgdm lang_<i>_names.txt
//   captions.lgdm captions_names.txt
//   posteriors.lgdm pretrain_names.txt pseudo_lang.lgdm pseudo_lang_names.txt
//   external.lgdm external_names.txt           (external values in [0, 1])
DatasetBundle load_bundle(const std::filesystem::path& dir);
void save_bundle(const std::filesystem::path& dir, const DatasetBundle& bundle);

}  // namespace lgdml
