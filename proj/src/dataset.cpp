#include "lgdml/dataset.hpp"

#include "lgdml/error.hpp"
#include "lgdml/guidance.hpp"
#include "lgdml/matrix_io.hpp"

#include <cctype>
#include <cmath>
#include <unordered_map>

namespace fs = std::filesystem;

namespace lgdml {

std::string clean_class_name(const std::string& raw) {
    std::size_t start = 0;
    while (start < raw.size() && std::isdigit(static_cast<unsigned char>(raw[start]))) ++start;
    if (start > 0 && start < raw.size() && raw[start] == '.') {
        ++start;
    } else {
        start = 0;
    }
    std::string out = raw.substr(start);
    for (char& c : out)
        if (c == '_') c = ' ';
    const auto first = out.find_first_not_of(" \t");
    if (first == std::string::npos) return {};
    const auto last = out.find_last_not_of(" \t");
    return out.substr(first, last - first + 1);
}

LanguageTable load_language_table(const fs::path& matrix_path, const fs::path& names_path,
                                  const std::optional<std::string>& primer) {
    const auto stored = read_matrix(matrix_path);
    std::vector<std::string> names;
    for (const auto& raw : read_lines(names_path)) names.push_back(clean_class_name(raw));
    if (static_cast<Eigen::Index>(names.size()) != stored.values.rows()) {
        fail(ErrorCode::CountMismatch, names_path.string() + ": " + std::to_string(names.size()) + " names for " +
                                           std::to_string(stored.values.rows()) + " rows");
    }
    return LanguageTable(std::move(names), stored.values, primer.value_or(""));
}

void save_language_table(const fs::path& matrix_path, const fs::path& names_path, const LanguageTable& table) {
    write_matrix(matrix_path, table.embeddings(), Dtype::f32);
    write_lines(names_path, table.names());
}

MatD load_external_targets(const fs::path& matrix_path, const fs::path& names_path,
                           const std::vector<std::string>& class_names) {
    const auto stored = read_matrix(matrix_path);
    std::vector<std::string> names;
    for (const auto& raw : read_lines(names_path)) names.push_back(clean_class_name(raw));
    if (stored.values.rows() != stored.values.cols() ||
        static_cast<Eigen::Index>(names.size()) != stored.values.rows()) {
        fail(ErrorCode::CountMismatch, "external target matrix must be square with one name per row");
    }
    std::unordered_map<std::string, Eigen::Index> where;
    for (std::size_t i = 0; i < names.size(); ++i) where.emplace(names[i], static_cast<Eigen::Index>(i));
    const auto c = static_cast<Eigen::Index>(class_names.size());
    std::vector<Eigen::Index> idx(class_names.size());
    for (std::size_t i = 0; i < class_names.size(); ++i) {
        const auto it = where.find(class_names[i]);
        if (it == where.end()) fail(ErrorCode::MissingClassInExternalMatrix, class_names[i]);
        idx[i] = it->second;
    }
    MatD out(c, c);
    for (Eigen::Index a = 0; a < c; ++a)
        for (Eigen::Index b = 0; b < c; ++b) out(a, b) = stored.values(idx[a], idx[b]);
    return rescale_unit_to_cosine(out);
}

std::string sample_key(std::size_t index) { return "train:" + std::to_string(index); }

void validate(const DatasetBundle& b) {
    auto check_split = [&](const MatD& f, const Labels& y, const char* split) {
        if (static_cast<Eigen::Index>(y.size()) != f.rows()) {
            fail(ErrorCode::CountMismatch, std::string(split) + ": label count does not match feature rows");
        }
        for (int label : y) {
            if (label < 0 || static_cast<std::size_t>(label) >= b.class_names.size()) {
                fail(ErrorCode::InvalidArgument, std::string(split) + ": label " + std::to_string(label) +
                                                     " outside class_names");
            }
        }
    };
    check_split(b.train_features, b.train_labels, "train");
    check_split(b.test_features, b.test_labels, "test");
    if (b.test_features.rows() > 0 && b.test_features.cols() != b.train_features.cols()) {
        fail(ErrorCode::DimMismatch, "train/test feature widths differ");
    }
    if (b.train_posteriors && b.train_posteriors->data.rows() != b.train_features.rows()) {
        fail(ErrorCode::CountMismatch, "posterior rows do not match train samples");
    }
    if (b.external_targets && b.external_targets->rows() != static_cast<Eigen::Index>(b.class_names.size())) {
        fail(ErrorCode::CountMismatch, "external targets do not match class count");
    }
}

DatasetBundle load_bundle(const fs::path& dir) {
    DatasetBundle b;
    auto path = [&](const std::string& name) { return dir / name; };
    b.train_features = read_matrix(path("train_features.lgdm")).values;
    b.train_labels = read_labels(path("train_labels.txt"));
    if (fs::exists(path("test_features.lgdm"))) {
        b.test_features = read_matrix(path("test_features.lgdm")).values;
        b.test_labels = read_labels(path("test_labels.txt"));
    }
    for (const auto& raw : read_lines(path("class_names.txt"))) b.class_names.push_back(clean_class_name(raw));
    std::optional<std::string> primer;
    if (fs::exists(path("primer.txt"))) {
        const auto lines = read_lines(path("primer.txt"));
        primer = lines.empty() ? std::string() : lines.front();
    }
    if (fs::exists(path("lang.lgdm"))) b.class_language = load_language_table(path("lang.lgdm"), path("lang_names.txt"), primer);
    for (int i = 1; fs::exists(path("lang_" + std::to_string(i) + ".lgdm")); ++i) {
        const auto stem = "lang_" + std::to_string(i);
        b.extra_class_language.push_back(load_language_table(path(stem + ".lgdm"), path(stem + "_names.txt"), primer));
    }
    if (fs::exists(path("captions.lgdm"))) {
        // Sample ids are not class names; skip the name cleanup.
        const auto stored = read_matrix(path("captions.lgdm"));
        b.sample_language = LanguageTable(read_lines(path("captions_names.txt")), stored.values);
    }
    if (fs::exists(path("posteriors.lgdm"))) {
        PosteriorMatrix post{read_matrix(path("posteriors.lgdm")).values, read_lines(path("pretrain_names.txt"))};
        for (auto& name : post.class_names) name = clean_class_name(name);
        renormalize_posteriors(post);
        b.train_posteriors = std::move(post);
    }
    if (fs::exists(path("pseudo_lang.lgdm"))) {
        b.pseudo_language = load_language_table(path("pseudo_lang.lgdm"), path("pseudo_lang_names.txt"), primer);
    }
    if (fs::exists(path("external.lgdm"))) {
        b.external_targets = load_external_targets(path("external.lgdm"), path("external_names.txt"), b.class_names);
    }
    validate(b);
    return b;
}

void save_bundle(const fs::path& dir, const DatasetBundle& b) {
    validate(b);
    fs::create_directories(dir);
    auto path = [&](const std::string& name) { return dir / name; };
    write_matrix(path("train_features.lgdm"), b.train_features, Dtype::f32);
    write_labels(path("train_labels.txt"), b.train_labels);
    write_matrix(path("test_features.lgdm"), b.test_features, Dtype::f32);
    write_labels(path("test_labels.txt"), b.test_labels);
    write_lines(path("class_names.txt"), b.class_names);
    if (b.class_language) {
        save_language_table(path("lang.lgdm"), path("lang_names.txt"), *b.class_language);
        if (!b.class_language->primer().empty()) write_lines(path("primer.txt"), {b.class_language->primer()});
    }
    for (std::size_t i = 0; i < b.extra_class_language.size(); ++i) {
        const auto stem = "lang_" + std::to_string(i + 1);
        save_language_table(path(stem + ".lgdm"), path(stem + "_names.txt"), b.extra_class_language[i]);
    }
    if (b.sample_language) save_language_table(path("captions.lgdm"), path("captions_names.txt"), *b.sample_language);
    if (b.train_posteriors) {
        write_matrix(path("posteriors.lgdm"), b.train_posteriors->data, Dtype::f32);
        write_lines(path("pretrain_names.txt"), b.train_posteriors->class_names);
    }
    if (b.pseudo_language) save_language_table(path("pseudo_lang.lgdm"), path("pseudo_lang_names.txt"), *b.pseudo_language);
    if (b.external_targets) {
        const MatD unit = ((b.external_targets->array() + 1.0) * 0.5).matrix();
        write_matrix(path("external.lgdm"), unit, Dtype::f64);
        write_lines(path("external_names.txt"), b.class_names);
    }
}

}  // namespace lgdml
